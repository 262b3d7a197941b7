// Copyright (c) 2026, the deskt5 authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "deskt5/data.hpp"
#include "deskt5/error.hpp"
#include "deskt5/ops.hpp"
#include "deskt5/rng.hpp"
#include "deskt5/tensor.hpp"

namespace deskt5 {

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

struct ModelConfig {
    std::int64_t d_model = 64;
    std::int64_t d_ff = 128;
    std::int64_t num_layers = 2;          // encoder blocks
    std::int64_t num_decoder_layers = 2;  // decoder blocks
    std::int64_t num_heads = 4;
    std::int64_t d_kv = 16;
    std::int64_t vocab_size = 384;
    std::int64_t rel_buckets = 32;
    std::int64_t rel_max_distance = 128;
    bool tie_embeddings = false;
    double dropout = 0.0;
    double norm_eps = 1e-6;

    std::int64_t inner_dim() const { return num_heads * d_kv; }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;

    static ModelConfig base() {
        ModelConfig c;
        c.d_model = 768;
        c.d_ff = 2048;
        c.num_layers = 12;
        c.num_decoder_layers = 12;
        c.num_heads = 12;
        c.d_kv = 64;
        c.vocab_size = 32128;
        return c;
    }

    static ModelConfig small() {
        ModelConfig c;
        c.d_model = 512;
        c.d_ff = 1024;
        c.num_layers = 8;
        c.num_decoder_layers = 8;
        c.num_heads = 6;
        c.d_kv = 64;
        c.vocab_size = 32128;
        return c;
    }

    static ModelConfig nano() { return ModelConfig{}; }

    void validate() const {
        if (d_model < 1 || d_ff < 1 || num_heads < 1 || d_kv < 1)
            throw ConfigError("model dimensions must be positive");
        if (num_layers < 0 || num_decoder_layers < 0) throw ConfigError("layer counts must be >= 0");
        if (vocab_size < 4) throw ConfigError("vocabulary must hold pad, eos, start, and at least one token");
        if (rel_buckets < 2 || rel_buckets % 2 != 0) throw ConfigError("rel_buckets must be even and >= 2");
        if (rel_max_distance <= rel_buckets / 2)
            throw ConfigError("rel_max_distance must exceed rel_buckets/2, got " + std::to_string(rel_max_distance));
        if (tie_embeddings) throw ConfigError("tied embeddings are not supported; the head stays untied");
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
        if (norm_eps < 0.0) throw ConfigError("norm_eps must be >= 0");
    }
};

/// Preset lookup by name.
inline ModelConfig preset(const std::string& name) {
    if (name == "nano") return ModelConfig::nano();
    if (name == "small") return ModelConfig::small();
    if (name == "base") return ModelConfig::base();
    throw ConfigError("unknown preset '" + name + "'; available: nano, small, base");
}

/// Exact parameter count for a configuration, by closed form.
inline std::int64_t param_count(const ModelConfig& cfg) {
    const std::int64_t d = cfg.d_model, inner = cfg.inner_dim(), ff = cfg.d_ff;
    const std::int64_t attn = 4 * d * inner;  // q, k, v projections plus output
    const std::int64_t ffn = 3 * d * ff;      // two gate projections plus output
    std::int64_t total = 2 * cfg.vocab_size * d;  // embedding and untied head
    total += cfg.num_layers * (attn + ffn + 2 * d) + d;
    if (cfg.num_layers > 0) total += cfg.rel_buckets * cfg.num_heads;
    total += cfg.num_decoder_layers * (2 * attn + ffn + 3 * d) + d;
    if (cfg.num_decoder_layers > 0) total += cfg.rel_buckets * cfg.num_heads;
    return total;
}

// ---------------------------------------------------------------------------
// relative position buckets
// ---------------------------------------------------------------------------

/// Maps memory_position - query_position to a bucket id. Bidirectional
/// attention splits the buckets between negative and positive offsets;
/// unidirectional attention sends all future offsets to bucket 0. Half of
/// each side is exact, the rest is log-spaced up to max_distance.
inline std::int64_t relative_position_bucket(std::int64_t relative_position, bool bidirectional,
                                             std::int64_t num_buckets, std::int64_t max_distance) {
    std::int64_t bucket = 0;
    std::int64_t n;
    if (bidirectional) {
        num_buckets /= 2;
        if (relative_position > 0) bucket += num_buckets;
        n = std::llabs(relative_position);
    } else {
        n = std::max<std::int64_t>(-relative_position, 0);
    }
    const std::int64_t max_exact = num_buckets / 2;
    if (n < max_exact) return bucket + n;
    const double ratio = std::log(static_cast<double>(n) / static_cast<double>(max_exact)) /
                         std::log(static_cast<double>(max_distance) / static_cast<double>(max_exact));
    const std::int64_t large = max_exact + static_cast<std::int64_t>(ratio * static_cast<double>(num_buckets - max_exact));
    return bucket + std::min(large, num_buckets - 1);
}

// ---------------------------------------------------------------------------
// model
// ---------------------------------------------------------------------------

/// Encoder-decoder transformer with pre-norm RMSNorm blocks, gated-gelu
/// feed-forward layers, relative position biases owned by the first block of
/// each stack and shared by the rest, no attention score scaling, and an
/// untied output head.
template <class Real>
class Model {
  public:
    explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        build_schema();
    }

    const ModelConfig& config() const { return cfg_; }

    /// Parameter names and shapes in schema order, before any allocation.
    std::vector<std::pair<std::string, Shape>> parameter_schema() const { return schema_; }

    /// Allocates every parameter and draws the standard initialization:
    /// truncated normals whose scale matches each projection's fan-in, unit
    /// norm gains, unit-scale embeddings.
    void init_params(Rng& rng) {
        params_.clear();
        index_.clear();
        for (const auto& [name, shape] : schema_) {
            const double sd = init_stddev(name);
            Tensor<Real> t = sd == 0.0 ? Tensor<Real>::full(shape, Real(1)) : Tensor<Real>::randn(shape, rng, sd);
            t.set_requires_grad(true);
            index_[name] = params_.size();
            params_.emplace_back(name, std::move(t));
        }
    }

    /// Installs externally built parameters (a loaded checkpoint). Names and
    /// shapes must match the schema exactly, in order.
    void adopt_params(NamedParams<Real> params) {
        if (params.size() != schema_.size())
            throw ValueError("adopt_params: got " + std::to_string(params.size()) + " tensors, schema has " +
                             std::to_string(schema_.size()));
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (params[i].first != schema_[i].first)
                throw ValueError("adopt_params: expected '" + schema_[i].first + "' at position " +
                                 std::to_string(i) + ", got '" + params[i].first + "'");
            if (params[i].second.shape() != schema_[i].second)
                throw ValueError("adopt_params: shape mismatch for '" + schema_[i].first + "'");
            params[i].second.set_requires_grad(true);
        }
        params_ = std::move(params);
        index_.clear();
        for (std::size_t i = 0; i < params_.size(); ++i) index_[params_[i].first] = i;
    }

    /// Handles to every parameter in schema order. Shared storage: optimizer
    /// steps through these move the model.
    NamedParams<Real> named_params() const { return params_; }

    Tensor<Real>& param(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ValueError("unknown parameter: " + name);
        return params_[it->second].second;
    }
    const Tensor<Real>& param(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ValueError("unknown parameter: " + name);
        return params_[it->second].second;
    }

    std::int64_t allocated_param_count() const {
        std::int64_t n = 0;
        for (const auto& [name, t] : params_) n += t.numel();
        return n;
    }

    /// Encoder stack over [batch, length] token ids. input_mask marks real
    /// tokens with 1; masked keys are hidden from every query. Returns
    /// hidden states [batch*length, d_model].
    Tensor<Real> encode(Tape<Real>& tape, const std::vector<std::int32_t>& input_ids,
                        const std::vector<std::uint8_t>& input_mask, std::int64_t batch_size,
                        std::int64_t input_length, Rng* dropout_rng = nullptr) const {
        check_ids("encode", input_ids, batch_size, input_length);
        if (input_mask.size() != input_ids.size())
            throw DimensionError("encode: mask of " + std::to_string(input_mask.size()) + " for " +
                                 std::to_string(input_ids.size()) + " ids");
        Tensor<Real> x = embedding_gather(tape, param("token_embedding"), input_ids);
        x = maybe_dropout(tape, x, dropout_rng);

        Tensor<Real> bias;
        if (cfg_.num_layers > 0)
            bias = position_bias(tape, param("encoder.block0.attn.rel_bias"), input_length, input_length, true);
        const Tensor<Real>* bias_ptr = cfg_.num_layers > 0 ? &bias : nullptr;
        const std::vector<std::uint8_t> mask = key_mask(input_mask, batch_size, input_length, input_length);

        for (std::int64_t i = 0; i < cfg_.num_layers; ++i) {
            const std::string p = "encoder.block" + std::to_string(i) + ".";
            Tensor<Real> h = rms_norm(tape, x, param(p + "norm_attn"), Real(cfg_.norm_eps));
            Tensor<Real> a = attention(tape, h, h, p + "attn.", bias_ptr, mask, batch_size, input_length,
                                       input_length, dropout_rng);
            x = add(tape, x, maybe_dropout(tape, a, dropout_rng));
            x = ffn_block(tape, x, p, dropout_rng);
        }
        return rms_norm(tape, x, param("encoder.final_norm"), Real(cfg_.norm_eps));
    }

    /// Decoder stack over [batch, length] input ids with causal self
    /// attention and cross attention into the encoder states. Returns hidden
    /// states [batch*length, d_model]; apply logits() for vocabulary scores.
    Tensor<Real> decode(Tape<Real>& tape, const std::vector<std::int32_t>& decoder_input_ids,
                        std::int64_t batch_size, std::int64_t target_length, const Tensor<Real>& encoder_states,
                        std::int64_t input_length, const std::vector<std::uint8_t>& input_mask,
                        Rng* dropout_rng = nullptr) const {
        check_ids("decode", decoder_input_ids, batch_size, target_length);
        if (encoder_states.numel() != batch_size * input_length * cfg_.d_model)
            throw DimensionError("decode: encoder states " + shape_str(encoder_states.shape()) + " do not hold " +
                                 std::to_string(batch_size * input_length) + " positions");
        Tensor<Real> x = embedding_gather(tape, param("token_embedding"), decoder_input_ids);
        x = maybe_dropout(tape, x, dropout_rng);

        Tensor<Real> bias;
        if (cfg_.num_decoder_layers > 0)
            bias = position_bias(tape, param("decoder.block0.self_attn.rel_bias"), target_length, target_length, false);
        const Tensor<Real>* bias_ptr = cfg_.num_decoder_layers > 0 ? &bias : nullptr;
        const std::vector<std::uint8_t> self_mask = causal_mask(batch_size, target_length);
        const std::vector<std::uint8_t> cross = key_mask(input_mask, batch_size, target_length, input_length);

        for (std::int64_t i = 0; i < cfg_.num_decoder_layers; ++i) {
            const std::string p = "decoder.block" + std::to_string(i) + ".";
            Tensor<Real> h = rms_norm(tape, x, param(p + "norm_self"), Real(cfg_.norm_eps));
            Tensor<Real> a = attention(tape, h, h, p + "self_attn.", bias_ptr, self_mask, batch_size, target_length,
                                       target_length, dropout_rng);
            x = add(tape, x, maybe_dropout(tape, a, dropout_rng));

            h = rms_norm(tape, x, param(p + "norm_cross"), Real(cfg_.norm_eps));
            a = attention(tape, h, encoder_states, p + "cross_attn.", nullptr, cross, batch_size, target_length,
                          input_length, dropout_rng);
            x = add(tape, x, maybe_dropout(tape, a, dropout_rng));
            x = ffn_block(tape, x, p, dropout_rng);
        }
        return rms_norm(tape, x, param("decoder.final_norm"), Real(cfg_.norm_eps));
    }

    /// Vocabulary scores [rows, vocab] for decoder hidden states.
    Tensor<Real> logits(Tape<Real>& tape, const Tensor<Real>& decoder_states) const {
        return matmul(tape, decoder_states, param("lm_head"));
    }

    /// Mean cross-entropy over the batch's non-ignored label positions.
    Tensor<Real> forward_loss(Tape<Real>& tape, const Batch& batch, Rng* dropout_rng = nullptr) const {
        Tensor<Real> enc = encode(tape, batch.input_ids, batch.input_mask, batch.batch_size, batch.input_length,
                                  dropout_rng);
        Tensor<Real> dec = decode(tape, batch.decoder_input_ids, batch.batch_size, batch.target_length, enc,
                                  batch.input_length, batch.input_mask, dropout_rng);
        return softmax_cross_entropy(tape, logits(tape, dec), batch.labels, kIgnoreLabel);
    }

    /// Greedy autoregressive decode of one sequence: repeated argmax until
    /// eos_id or max_length generated tokens. The eos itself is not part of
    /// the returned list; argmax ties go to the lowest token id.
    std::vector<std::int32_t> greedy_decode(const std::vector<std::int32_t>& input_ids, std::int64_t max_length,
                                            std::int32_t start_id = Vocab::kStart,
                                            std::int32_t eos_id = Vocab::kEos) const {
        if (input_ids.empty()) throw ValueError("greedy_decode: empty input");
        if (max_length < 1) throw ValueError("greedy_decode: max_length must be >= 1");
        Tape<Real> tape;
        tape.set_recording(false);
        const std::int64_t in_len = static_cast<std::int64_t>(input_ids.size());
        const std::vector<std::uint8_t> mask(input_ids.size(), 1);
        const Tensor<Real> enc = encode(tape, input_ids, mask, 1, in_len);
        std::vector<std::int32_t> dec_ids{start_id};
        std::vector<std::int32_t> out;
        for (std::int64_t step = 0; step < max_length; ++step) {
            const std::int64_t t = static_cast<std::int64_t>(dec_ids.size());
            const Tensor<Real> hidden = decode(tape, dec_ids, 1, t, enc, in_len, mask);
            const Tensor<Real> scores = logits(tape, hidden);
            const Real* row = scores.values().data() + (t - 1) * cfg_.vocab_size;
            std::int32_t best = 0;
            for (std::int64_t v = 1; v < cfg_.vocab_size; ++v)
                if (row[v] > row[best]) best = static_cast<std::int32_t>(v);
            if (best == eos_id) break;
            out.push_back(best);
            dec_ids.push_back(best);
        }
        return out;
    }

  private:
    void build_schema() {
        const std::int64_t d = cfg_.d_model, inner = cfg_.inner_dim(), ff = cfg_.d_ff;
        schema_.emplace_back("token_embedding", Shape{cfg_.vocab_size, d});
        for (std::int64_t i = 0; i < cfg_.num_layers; ++i) {
            const std::string p = "encoder.block" + std::to_string(i) + ".";
            schema_.emplace_back(p + "norm_attn", Shape{d});
            schema_.emplace_back(p + "attn.q", Shape{d, inner});
            schema_.emplace_back(p + "attn.k", Shape{d, inner});
            schema_.emplace_back(p + "attn.v", Shape{d, inner});
            schema_.emplace_back(p + "attn.o", Shape{inner, d});
            if (i == 0) schema_.emplace_back(p + "attn.rel_bias", Shape{cfg_.rel_buckets, cfg_.num_heads});
            schema_.emplace_back(p + "norm_ffn", Shape{d});
            schema_.emplace_back(p + "ffn.wi0", Shape{d, ff});
            schema_.emplace_back(p + "ffn.wi1", Shape{d, ff});
            schema_.emplace_back(p + "ffn.wo", Shape{ff, d});
        }
        schema_.emplace_back("encoder.final_norm", Shape{d});
        for (std::int64_t i = 0; i < cfg_.num_decoder_layers; ++i) {
            const std::string p = "decoder.block" + std::to_string(i) + ".";
            schema_.emplace_back(p + "norm_self", Shape{d});
            schema_.emplace_back(p + "self_attn.q", Shape{d, inner});
            schema_.emplace_back(p + "self_attn.k", Shape{d, inner});
            schema_.emplace_back(p + "self_attn.v", Shape{d, inner});
            schema_.emplace_back(p + "self_attn.o", Shape{inner, d});
            if (i == 0) schema_.emplace_back(p + "self_attn.rel_bias", Shape{cfg_.rel_buckets, cfg_.num_heads});
            schema_.emplace_back(p + "norm_cross", Shape{d});
            schema_.emplace_back(p + "cross_attn.q", Shape{d, inner});
            schema_.emplace_back(p + "cross_attn.k", Shape{d, inner});
            schema_.emplace_back(p + "cross_attn.v", Shape{d, inner});
            schema_.emplace_back(p + "cross_attn.o", Shape{inner, d});
            schema_.emplace_back(p + "norm_ffn", Shape{d});
            schema_.emplace_back(p + "ffn.wi0", Shape{d, ff});
            schema_.emplace_back(p + "ffn.wi1", Shape{d, ff});
            schema_.emplace_back(p + "ffn.wo", Shape{ff, d});
        }
        schema_.emplace_back("decoder.final_norm", Shape{d});
        schema_.emplace_back("lm_head", Shape{d, cfg_.vocab_size});
    }

    /// Initialization scale by role; 0 marks constant-one gains.
    double init_stddev(const std::string& name) const {
        const auto ends_with = [&](const char* suffix) {
            const std::size_t n = std::char_traits<char>::length(suffix);
            return name.size() >= n && name.compare(name.size() - n, n, suffix) == 0;
        };
        const double d = static_cast<double>(cfg_.d_model);
        if (name == "token_embedding") return 1.0;
        if (ends_with("norm_attn") || ends_with("norm_ffn") || ends_with("norm_self") || ends_with("norm_cross") ||
            ends_with("final_norm"))
            return 0.0;
        if (ends_with(".q")) return 1.0 / std::sqrt(d * static_cast<double>(cfg_.d_kv));
        if (ends_with(".k") || ends_with(".v")) return 1.0 / std::sqrt(d);
        if (ends_with(".o")) return 1.0 / std::sqrt(static_cast<double>(cfg_.inner_dim()));
        if (ends_with(".wi0") || ends_with(".wi1")) return 1.0 / std::sqrt(d);
        if (ends_with(".wo")) return 1.0 / std::sqrt(static_cast<double>(cfg_.d_ff));
        if (ends_with(".rel_bias")) return 1.0 / std::sqrt(d);
        if (name == "lm_head") return 1.0 / std::sqrt(d);
        throw InternalError("no initialization rule for parameter " + name);
    }

    static void check_ids(const char* where, const std::vector<std::int32_t>& ids, std::int64_t batch,
                          std::int64_t length) {
        if (batch < 1 || length < 1) throw DimensionError(std::string(where) + ": batch and length must be >= 1");
        if (static_cast<std::int64_t>(ids.size()) != batch * length)
            throw DimensionError(std::string(where) + ": " + std::to_string(ids.size()) + " ids for batch " +
                                 std::to_string(batch) + " x " + std::to_string(length));
    }

    Tensor<Real> maybe_dropout(Tape<Real>& tape, const Tensor<Real>& x, Rng* rng) const {
        if (rng == nullptr || cfg_.dropout <= 0.0) return x;
        return dropout(tape, x, cfg_.dropout, *rng);
    }

    /// Gated-gelu feed-forward with pre-norm and residual.
    Tensor<Real> ffn_block(Tape<Real>& tape, const Tensor<Real>& x, const std::string& p, Rng* dropout_rng) const {
        Tensor<Real> h = rms_norm(tape, x, param(p + "norm_ffn"), Real(cfg_.norm_eps));
        Tensor<Real> gate = gelu(tape, matmul(tape, h, param(p + "ffn.wi0")));
        Tensor<Real> lin = matmul(tape, h, param(p + "ffn.wi1"));
        Tensor<Real> mixed = multiply(tape, gate, lin);
        mixed = maybe_dropout(tape, mixed, dropout_rng);
        Tensor<Real> out = matmul(tape, mixed, param(p + "ffn.wo"));
        return add(tape, x, maybe_dropout(tape, out, dropout_rng));
    }

    /// Bias tensor [heads, q_len, k_len] gathered from one bucket table.
    Tensor<Real> position_bias(Tape<Real>& tape, const Tensor<Real>& table, std::int64_t q_len, std::int64_t k_len,
                               bool bidirectional) const {
        std::vector<std::int32_t> buckets(static_cast<std::size_t>(q_len * k_len));
        for (std::int64_t i = 0; i < q_len; ++i)
            for (std::int64_t j = 0; j < k_len; ++j)
                buckets[static_cast<std::size_t>(i * k_len + j)] = static_cast<std::int32_t>(
                    relative_position_bucket(j - i, bidirectional, cfg_.rel_buckets, cfg_.rel_max_distance));
        Tensor<Real> g = embedding_gather(tape, table, buckets);        // [q*k, heads]
        g = reshape(tape, g, Shape{q_len, k_len, cfg_.num_heads});
        return transpose(tape, g, {2, 0, 1});                           // [heads, q, k]
    }

    /// Key-padding mask [batch*heads*q_len*k_len]; empty when nothing is
    /// masked so the fill op can be skipped.
    std::vector<std::uint8_t> key_mask(const std::vector<std::uint8_t>& token_mask, std::int64_t batch,
                                       std::int64_t q_len, std::int64_t k_len) const {
        bool any = false;
        for (std::uint8_t m : token_mask)
            if (m == 0) any = true;
        if (!any) return {};
        std::vector<std::uint8_t> out(static_cast<std::size_t>(batch * cfg_.num_heads * q_len * k_len));
        std::size_t pos = 0;
        for (std::int64_t b = 0; b < batch; ++b)
            for (std::int64_t h = 0; h < cfg_.num_heads; ++h)
                for (std::int64_t i = 0; i < q_len; ++i)
                    for (std::int64_t j = 0; j < k_len; ++j)
                        out[pos++] = token_mask[static_cast<std::size_t>(b * k_len + j)] == 0 ? 1 : 0;
        return out;
    }

    /// Strict upper-triangular mask: queries never see later positions.
    std::vector<std::uint8_t> causal_mask(std::int64_t batch, std::int64_t len) const {
        std::vector<std::uint8_t> out(static_cast<std::size_t>(batch * cfg_.num_heads * len * len));
        std::size_t pos = 0;
        for (std::int64_t b = 0; b < batch; ++b)
            for (std::int64_t h = 0; h < cfg_.num_heads; ++h)
                for (std::int64_t i = 0; i < len; ++i)
                    for (std::int64_t j = 0; j < len; ++j) out[pos++] = j > i ? 1 : 0;
        return out;
    }

    /// Multi-head attention without score scaling. bias is [heads,q,k] or
    /// null; mask is flat [batch*heads*q*k] or empty.
    Tensor<Real> attention(Tape<Real>& tape, const Tensor<Real>& query_states, const Tensor<Real>& kv_states,
                           const std::string& p, const Tensor<Real>* bias, const std::vector<std::uint8_t>& mask,
                           std::int64_t batch, std::int64_t q_len, std::int64_t k_len, Rng* dropout_rng) const {
        const std::int64_t H = cfg_.num_heads, dk = cfg_.d_kv;
        Tensor<Real> q = matmul(tape, query_states, param(p + "q"));
        Tensor<Real> k = matmul(tape, kv_states, param(p + "k"));
        Tensor<Real> v = matmul(tape, kv_states, param(p + "v"));
        q = reshape(tape, transpose(tape, reshape(tape, q, Shape{batch, q_len, H, dk}), {0, 2, 1, 3}),
                    Shape{batch * H, q_len, dk});
        k = reshape(tape, transpose(tape, reshape(tape, k, Shape{batch, k_len, H, dk}), {0, 2, 3, 1}),
                    Shape{batch * H, dk, k_len});
        v = reshape(tape, transpose(tape, reshape(tape, v, Shape{batch, k_len, H, dk}), {0, 2, 1, 3}),
                    Shape{batch * H, k_len, dk});
        Tensor<Real> scores = matmul(tape, q, k);  // [batch*heads, q, k], unscaled
        if (bias != nullptr) {
            scores = reshape(tape, scores, Shape{batch, H, q_len, k_len});
            scores = add(tape, scores, *bias);
            scores = reshape(tape, scores, Shape{batch * H, q_len, k_len});
        }
        if (!mask.empty()) scores = masked_fill(tape, scores, mask, Real(-1e9));
        Tensor<Real> probs = softmax(tape, scores);
        probs = maybe_dropout(tape, probs, dropout_rng);
        Tensor<Real> ctx = matmul(tape, probs, v);  // [batch*heads, q, dk]
        ctx = reshape(tape, transpose(tape, reshape(tape, ctx, Shape{batch, H, q_len, dk}), {0, 2, 1, 3}),
                      Shape{batch * q_len, H * dk});
        return matmul(tape, ctx, param(p + "o"));
    }

    ModelConfig cfg_;
    std::vector<std::pair<std::string, Shape>> schema_;
    NamedParams<Real> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace deskt5
