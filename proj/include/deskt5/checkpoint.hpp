// Copyright (c) 2026, the deskt5 authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "json.hpp"

#include "deskt5/error.hpp"
#include "deskt5/model.hpp"
#include "deskt5/optim.hpp"
#include "deskt5/tensor.hpp"

namespace deskt5 {

// Blob payloads are raw IEEE-754 little-endian; this library targets
// little-endian hosts only.
static_assert(std::endian::native == std::endian::little, "checkpoint blobs are little-endian");

inline constexpr int kCheckpointVersion = 1;

template <class Real>
constexpr std::uint8_t dtype_code();
template <>
constexpr std::uint8_t dtype_code<float>() {
    return 0;
}
template <>
constexpr std::uint8_t dtype_code<double>() {
    return 1;
}

inline const char* dtype_name(std::uint8_t code) { return code == 0 ? "f32" : "f64"; }

/// Everything a training run needs to continue exactly where it stopped.
template <class Real>
struct CheckpointData {
    std::int64_t step = 0;
    ModelConfig model_config;
    NamedParams<Real> params;
    OptimizerKind optimizer_kind = OptimizerKind::adamw_rms;
    OptimizerState<Real> state;
    std::string rng_state;
    std::string config_snapshot;  // raw run-config JSON text, may be empty
    double final_loss = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

inline void write_bytes(std::ofstream& out, const void* p, std::size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <class T>
void write_pod(std::ofstream& out, T v) {
    write_bytes(out, &v, sizeof(T));
}

/// One named tensor record:
/// [u32 name_len][name][u8 dtype][u32 ndim][i64 dims...][payload]
inline void write_record(std::ofstream& out, const std::string& name, std::uint8_t dtype, const Shape& shape,
                         const void* payload, std::size_t payload_bytes) {
    write_pod(out, static_cast<std::uint32_t>(name.size()));
    write_bytes(out, name.data(), name.size());
    write_pod(out, dtype);
    write_pod(out, static_cast<std::uint32_t>(shape.size()));
    for (std::int64_t d : shape) write_pod(out, d);
    if (payload_bytes > 0) write_bytes(out, payload, payload_bytes);
}

struct BlobRecord {
    std::string name;
    std::uint8_t dtype = 0;
    Shape shape;
    std::vector<char> payload;
};

inline bool read_exact(std::ifstream& in, void* p, std::size_t n, const std::string& path, bool allow_eof) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) == n) return true;
    if (allow_eof && in.gcount() == 0 && in.eof()) return false;
    throw CheckpointError(CheckpointError::Kind::truncated_blob,
                          path + ": truncated record (wanted " + std::to_string(n) + " bytes, got " +
                              std::to_string(in.gcount()) + ")");
}

/// Reads the next record; false at a clean end of file.
inline bool read_record(std::ifstream& in, BlobRecord& rec, const std::string& path) {
    std::uint32_t name_len = 0;
    if (!read_exact(in, &name_len, sizeof(name_len), path, true)) return false;
    if (name_len == 0 || name_len > (1u << 20))
        throw CheckpointError(CheckpointError::Kind::truncated_blob, path + ": implausible name length");
    rec.name.assign(name_len, '\0');
    read_exact(in, rec.name.data(), name_len, path, false);
    read_exact(in, &rec.dtype, 1, path, false);
    if (rec.dtype > 1)
        throw CheckpointError(CheckpointError::Kind::truncated_blob, path + ": unknown dtype code");
    std::uint32_t ndim = 0;
    read_exact(in, &ndim, sizeof(ndim), path, false);
    if (ndim > 16) throw CheckpointError(CheckpointError::Kind::truncated_blob, path + ": implausible rank");
    rec.shape.assign(ndim, 0);
    std::int64_t numel = 1;
    for (std::uint32_t i = 0; i < ndim; ++i) {
        read_exact(in, &rec.shape[i], sizeof(std::int64_t), path, false);
        if (rec.shape[i] < 0 || rec.shape[i] > (std::int64_t(1) << 40))
            throw CheckpointError(CheckpointError::Kind::truncated_blob, path + ": implausible dimension");
        numel *= rec.shape[i];
    }
    const std::size_t elem = rec.dtype == 0 ? 4 : 8;
    rec.payload.assign(static_cast<std::size_t>(numel) * elem, '\0');
    if (!rec.payload.empty()) read_exact(in, rec.payload.data(), rec.payload.size(), path, false);
    return true;
}

inline void write_state_vector(std::ofstream& out, const std::string& name, const std::vector<double>& v) {
    if (v.empty()) return;
    write_record(out, name, dtype_code<double>(), Shape{static_cast<std::int64_t>(v.size())}, v.data(),
                 v.size() * sizeof(double));
}

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
    return {{"d_model", c.d_model},
            {"d_ff", c.d_ff},
            {"num_layers", c.num_layers},
            {"num_decoder_layers", c.num_decoder_layers},
            {"num_heads", c.num_heads},
            {"d_kv", c.d_kv},
            {"vocab_size", c.vocab_size},
            {"rel_buckets", c.rel_buckets},
            {"rel_max_distance", c.rel_max_distance},
            {"tie_embeddings", c.tie_embeddings},
            {"dropout", c.dropout},
            {"norm_eps", c.norm_eps}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.d_model = j.at("d_model").get<std::int64_t>();
    c.d_ff = j.at("d_ff").get<std::int64_t>();
    c.num_layers = j.at("num_layers").get<std::int64_t>();
    c.num_decoder_layers = j.at("num_decoder_layers").get<std::int64_t>();
    c.num_heads = j.at("num_heads").get<std::int64_t>();
    c.d_kv = j.at("d_kv").get<std::int64_t>();
    c.vocab_size = j.at("vocab_size").get<std::int64_t>();
    c.rel_buckets = j.at("rel_buckets").get<std::int64_t>();
    c.rel_max_distance = j.at("rel_max_distance").get<std::int64_t>();
    c.tie_embeddings = j.at("tie_embeddings").get<bool>();
    c.dropout = j.at("dropout").get<double>();
    c.norm_eps = j.at("norm_eps").get<double>();
    return c;
}

}  // namespace detail

/// Writes manifest.json, params.bin, and optim.bin into dir (created if
/// needed). Blob order follows the parameter list, so repeated saves of the
/// same data produce identical bytes.
template <class Real>
void save_checkpoint(const std::string& dir, const CheckpointData<Real>& data) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create checkpoint directory " + dir + ": " + ec.message());

    {
        std::ofstream out(fs::path(dir) / "params.bin", std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + dir + "/params.bin");
        for (const auto& [name, t] : data.params)
            detail::write_record(out, name, dtype_code<Real>(), t.shape(), t.values().data(),
                                 t.values().size() * sizeof(Real));
        if (!out) throw IoError("write failed for " + dir + "/params.bin");
    }
    {
        std::ofstream out(fs::path(dir) / "optim.bin", std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + dir + "/optim.bin");
        for (const auto& [name, slot] : data.state.slots) {
            detail::write_state_vector(out, name + ".m", slot.m);
            detail::write_state_vector(out, name + ".v", slot.v);
            detail::write_state_vector(out, name + ".row", slot.row);
            detail::write_state_vector(out, name + ".col", slot.col);
        }
        if (!out) throw IoError("write failed for " + dir + "/optim.bin");
    }

    nlohmann::json manifest{{"format_version", kCheckpointVersion},
                            {"step", data.step},
                            {"precision", dtype_name(dtype_code<Real>())},
                            {"model", detail::model_config_to_json(data.model_config)},
                            {"optimizer", {{"kind", to_string(data.optimizer_kind)}, {"t", data.state.t}}},
                            {"rng", data.rng_state},
                            {"config_snapshot", data.config_snapshot},
                            {"blobs", {{"params", "params.bin"}, {"optim", "optim.bin"}}}};
    if (std::isfinite(data.final_loss)) manifest["final_loss"] = data.final_loss;
    std::ofstream out(fs::path(dir) / "manifest.json", std::ios::trunc);
    if (!out) throw IoError("cannot write " + dir + "/manifest.json");
    out << manifest.dump(2) << '\n';
    if (!out) throw IoError("write failed for " + dir + "/manifest.json");
}

/// Loads a checkpoint saved with the same precision. Validates the format
/// version, the parameter schema implied by the stored model config, and
/// blob integrity; each failure mode raises its own CheckpointError kind.
template <class Real>
CheckpointData<Real> load_checkpoint(const std::string& dir) {
    namespace fs = std::filesystem;
    const std::string manifest_path = (fs::path(dir) / "manifest.json").string();
    std::ifstream min(manifest_path);
    if (!min) throw IoError("cannot open " + manifest_path);
    nlohmann::json manifest;
    try {
        min >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(manifest_path + ": " + e.what());
    }

    CheckpointData<Real> data;
    try {
        const int version = manifest.at("format_version").get<int>();
        if (version != kCheckpointVersion)
            throw CheckpointError(CheckpointError::Kind::version_mismatch,
                                  manifest_path + ": format version " + std::to_string(version) + ", supported " +
                                      std::to_string(kCheckpointVersion));
        const std::string precision = manifest.at("precision").get<std::string>();
        if (precision != dtype_name(dtype_code<Real>()))
            throw CheckpointError(CheckpointError::Kind::shape_mismatch,
                                  manifest_path + ": stored precision " + precision + " does not match requested " +
                                      dtype_name(dtype_code<Real>()));
        data.step = manifest.at("step").get<std::int64_t>();
        data.model_config = detail::model_config_from_json(manifest.at("model"));
        data.optimizer_kind = optimizer_kind_from_string(manifest.at("optimizer").at("kind").get<std::string>());
        data.state.t = manifest.at("optimizer").at("t").get<std::int64_t>();
        data.rng_state = manifest.at("rng").get<std::string>();
        data.config_snapshot = manifest.at("config_snapshot").get<std::string>();
        if (manifest.contains("final_loss")) data.final_loss = manifest.at("final_loss").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(manifest_path + ": " + e.what());
    }

    // parameters, validated against the schema the stored config implies
    const std::string params_path = (fs::path(dir) / "params.bin").string();
    std::ifstream pin(params_path, std::ios::binary);
    if (!pin) throw IoError("cannot open " + params_path);
    std::vector<detail::BlobRecord> records;
    detail::BlobRecord rec;
    while (detail::read_record(pin, rec, params_path)) records.push_back(std::move(rec));

    Model<Real> schema_model(data.model_config);
    const auto schema = schema_model.parameter_schema();
    if (records.size() != schema.size()) {
        // distinguish a missing entry from an extra one by name
        std::size_t i = 0;
        for (; i < records.size() && i < schema.size() && records[i].name == schema[i].first; ++i) {
        }
        if (records.size() < schema.size())
            throw CheckpointError(CheckpointError::Kind::missing_entry,
                                  params_path + ": missing parameter '" +
                                      schema[i < schema.size() ? i : schema.size() - 1].first + "'");
        throw CheckpointError(CheckpointError::Kind::shape_mismatch,
                              params_path + ": unexpected extra parameter '" + records[schema.size()].name + "'");
    }
    for (std::size_t i = 0; i < schema.size(); ++i) {
        const auto& [name, shape] = schema[i];
        if (records[i].name != name)
            throw CheckpointError(CheckpointError::Kind::missing_entry,
                                  params_path + ": expected parameter '" + name + "', found '" + records[i].name +
                                      "'");
        if (records[i].dtype != dtype_code<Real>())
            throw CheckpointError(CheckpointError::Kind::shape_mismatch,
                                  params_path + ": parameter '" + name + "' stored as " +
                                      dtype_name(records[i].dtype));
        if (records[i].shape != shape)
            throw CheckpointError(CheckpointError::Kind::shape_mismatch,
                                  params_path + ": parameter '" + name + "' has shape " + shape_str(records[i].shape) +
                                      ", config implies " + shape_str(shape));
        Tensor<Real> t(shape);
        std::memcpy(t.values().data(), records[i].payload.data(), records[i].payload.size());
        t.set_requires_grad(true);
        data.params.emplace_back(name, std::move(t));
    }

    // optimizer slots
    const std::string optim_path = (fs::path(dir) / "optim.bin").string();
    std::ifstream oin(optim_path, std::ios::binary);
    if (!oin) throw IoError("cannot open " + optim_path);
    while (detail::read_record(oin, rec, optim_path)) {
        const auto dot = rec.name.rfind('.');
        if (dot == std::string::npos || rec.dtype != dtype_code<double>())
            throw CheckpointError(CheckpointError::Kind::shape_mismatch,
                                  optim_path + ": malformed state entry '" + rec.name + "'");
        const std::string param = rec.name.substr(0, dot);
        const std::string field = rec.name.substr(dot + 1);
        std::vector<double> v(rec.payload.size() / sizeof(double));
        std::memcpy(v.data(), rec.payload.data(), rec.payload.size());
        auto& slot = data.state.slots[param];
        if (field == "m")
            slot.m = std::move(v);
        else if (field == "v")
            slot.v = std::move(v);
        else if (field == "row")
            slot.row = std::move(v);
        else if (field == "col")
            slot.col = std::move(v);
        else
            throw CheckpointError(CheckpointError::Kind::shape_mismatch,
                                  optim_path + ": unknown state field '" + rec.name + "'");
    }
    return data;
}

}  // namespace deskt5
