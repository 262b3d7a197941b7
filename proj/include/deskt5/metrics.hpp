// Copyright (c) 2026, the deskt5 authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "deskt5/error.hpp"

namespace deskt5 {

// ---------------------------------------------------------------------------
// metrics CSV
// ---------------------------------------------------------------------------

struct MetricsRow {
    std::int64_t step = 0;
    std::string split;  // train, heldout, diverged, rouge_train, rouge_heldout
    double loss = 0;
    double lr = 0;
    double grad_norm = 0;
    double tokens_per_sec = 0;
    double elapsed_s = 0;
};

/// Append-only CSV log with a fixed header. Every append flushes, so a
/// crashed run keeps all completed rows.
class MetricsCsv {
  public:
    static constexpr const char* kHeader = "step,split,loss,lr,grad_norm,tokens_per_sec,elapsed_s";

    explicit MetricsCsv(const std::string& path, bool append = false)
        : out_(path, append ? std::ios::app : std::ios::trunc) {
        if (!out_) throw IoError("cannot open metrics file: " + path);
        bool need_header = !append;
        if (append) {
            std::ifstream probe(path, std::ios::ate);
            need_header = !probe || probe.tellg() == std::streampos(0);
        }
        if (need_header) {
            out_ << kHeader << '\n';
            out_.flush();
        }
    }

    void append(const MetricsRow& r) {
        if (r.split.find(',') != std::string::npos || r.split.find('\n') != std::string::npos)
            throw ValueError("metrics split must not contain commas or newlines: '" + r.split + "'");
        out_ << r.step << ',' << r.split << ',' << format(r.loss) << ',' << format(r.lr) << ',' << format(r.grad_norm)
             << ',' << format(r.tokens_per_sec) << ',' << format(r.elapsed_s) << '\n';
        out_.flush();
        if (!out_) throw IoError("metrics write failed");
    }

    /// Parses a metrics file back into rows; validates the header.
    static std::vector<MetricsRow> read(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open metrics file: " + path);
        std::string line;
        if (!std::getline(in, line) || line != kHeader)
            throw ParseError(path + ":1: expected header '" + std::string(kHeader) + "', got '" + line + "'");
        std::vector<MetricsRow> rows;
        std::int64_t lineno = 1;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            std::istringstream is(line);
            std::string field;
            std::vector<std::string> fields;
            while (std::getline(is, field, ',')) fields.push_back(field);
            if (fields.size() != 7)
                throw ParseError(path + ":" + std::to_string(lineno) + ": expected 7 fields, got " +
                                 std::to_string(fields.size()));
            MetricsRow r;
            try {
                r.step = std::stoll(fields[0]);
                r.split = fields[1];
                r.loss = std::stod(fields[2]);
                r.lr = std::stod(fields[3]);
                r.grad_norm = std::stod(fields[4]);
                r.tokens_per_sec = std::stod(fields[5]);
                r.elapsed_s = std::stod(fields[6]);
            } catch (const std::exception&) {
                throw ParseError(path + ":" + std::to_string(lineno) + ": malformed numeric field");
            }
            rows.push_back(std::move(r));
        }
        return rows;
    }

  private:
    // max_digits10 keeps doubles round-trippable through the text file
    static std::string format(double v) {
        std::ostringstream os;
        os << std::setprecision(17) << v;
        return os.str();
    }

    std::ofstream out_;
};

// ---------------------------------------------------------------------------
// RougeL
// ---------------------------------------------------------------------------

/// Longest-common-subsequence F1 between two token sequences. 0 when either
/// side is empty or nothing overlaps.
template <class Token>
double rouge_l(const std::vector<Token>& candidate, const std::vector<Token>& reference) {
    if (candidate.empty() || reference.empty()) return 0.0;
    const std::size_t n = candidate.size(), m = reference.size();
    // two-row LCS table
    std::vector<std::int64_t> prev(m + 1, 0), cur(m + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        for (std::size_t j = 1; j <= m; ++j) {
            cur[j] = candidate[i - 1] == reference[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    const double lcs = static_cast<double>(prev[m]);
    if (lcs == 0) return 0.0;
    const double p = lcs / static_cast<double>(n);
    const double r = lcs / static_cast<double>(m);
    return 2 * p * r / (p + r);
}

/// RougeL over whitespace-separated words of two strings.
inline double rouge_l_text(const std::string& candidate, const std::string& reference) {
    const auto words = [](const std::string& s) {
        std::istringstream is(s);
        std::vector<std::string> out;
        std::string w;
        while (is >> w) out.push_back(w);
        return out;
    };
    return rouge_l(words(candidate), words(reference));
}

}  // namespace deskt5
