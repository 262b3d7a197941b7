// Copyright (c) 2026, the deskt5 authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace deskt5 {

/// Base class for all errors raised by this library.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Shape or rank mismatch between tensors (message names both shapes).
struct DimensionError : Error {
    using Error::Error;
};

/// Token id, label, or element index out of range.
struct IndexError : Error {
    using Error::Error;
};

/// Argument outside its contract (empty input, undefined mean, infeasible request).
struct ValueError : Error {
    using Error::Error;
};

/// Invalid configuration: unknown key, type mismatch, inconsistent fields.
struct ConfigError : Error {
    using Error::Error;
};

/// Malformed input file; message carries the line number where known.
struct ParseError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

/// Non-finite value surfaced during optimization. Carries the parameter name
/// so a diverging run points at the tensor that blew up.
struct DivergenceError : Error {
    DivergenceError(const std::string& param, const std::string& what)
        : Error("divergence in parameter '" + param + "': " + what), param_name(param) {}
    std::string param_name;
};

/// A condition the library guarantees unreachable was reached.
struct InternalError : Error {
    using Error::Error;
};

/// Checkpoint load failure, split by cause so callers can tell them apart.
struct CheckpointError : Error {
    enum class Kind { version_mismatch, truncated_blob, shape_mismatch, missing_entry };
    CheckpointError(Kind k, const std::string& msg) : Error(msg), kind(k) {}
    Kind kind;
};

}  // namespace deskt5
