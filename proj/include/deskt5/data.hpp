// Copyright (c) 2026, the deskt5 authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Corpus ingestion, span corruption, batching, and background prefetch.
// The geometry contract: a raw chunk of tokens_length tokens corrupts into
// a model input of exactly input_length tokens and a target of exactly
// target_length tokens, EOS included, with no padding during pre-training.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include "deskt5/error.hpp"
#include "deskt5/rng.hpp"

namespace deskt5 {

/// Label value excluded from the loss.
constexpr std::int32_t kIgnoreLabel = -100;

// ---------------------------------------------------------------------------
// vocabulary
// ---------------------------------------------------------------------------

/// Token id assignment. The default is byte-level: ids 0..2 are pad, EOS,
/// and decoder start; ids 3..258 are the 256 byte values; the remaining ids
/// up to size-1 are reserved sentinels, handed out from the top downward.
/// A word-level vocabulary can be loaded from a file instead (one token per
/// line, line number = id; lines 0..2 must be <pad>, <eos>, <s>).
class Vocab {
  public:
    static constexpr std::int32_t kPad = 0;
    static constexpr std::int32_t kEos = 1;
    static constexpr std::int32_t kStart = 2;
    static constexpr std::int32_t kByteOffset = 3;

    static Vocab byte_level(std::int32_t size = 384) {
        if (size < kByteOffset + 256 + 1)
            throw ConfigError("byte-level vocabulary needs at least " + std::to_string(kByteOffset + 257) +
                              " ids, got " + std::to_string(size));
        Vocab v;
        v.size_ = size;
        v.word_level_ = false;
        return v;
    }

    static Vocab from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open vocabulary file: " + path);
        Vocab v;
        v.word_level_ = true;
        std::string line;
        std::int32_t id = 0;
        while (std::getline(in, line)) {
            if (line.empty()) throw ParseError(path + ":" + std::to_string(id + 1) + ": empty token line");
            if (v.word_to_id_.count(line))
                throw ParseError(path + ":" + std::to_string(id + 1) + ": duplicate token '" + line + "'");
            v.words_.push_back(line);
            v.word_to_id_[line] = id;
            ++id;
        }
        if (id < 4) throw ParseError(path + ":1: vocabulary needs <pad>, <eos>, <s>, and at least one token");
        const char* expect[3] = {"<pad>", "<eos>", "<s>"};
        for (int i = 0; i < 3; ++i)
            if (v.words_[static_cast<std::size_t>(i)] != expect[i])
                throw ParseError(path + ":" + std::to_string(i + 1) + ": line must be '" + expect[i] + "', got '" +
                                 v.words_[static_cast<std::size_t>(i)] + "'");
        v.size_ = id;
        return v;
    }

    std::int32_t size() const { return size_; }
    std::int32_t pad_id() const { return kPad; }
    std::int32_t eos_id() const { return kEos; }
    std::int32_t start_id() const { return kStart; }

    /// Highest token id; sentinels are sentinel_base, sentinel_base-1, ...
    std::int32_t sentinel_base() const { return size_ - 1; }

    /// How many ids are reserved for sentinels. A word-level vocabulary
    /// reserves none by itself; span corruption over one needs an explicit
    /// sentinel_range in its CorruptionConfig.
    std::int32_t sentinel_range() const { return word_level_ ? 0 : size_ - (kByteOffset + 256); }

    std::vector<std::int32_t> tokenize(const std::string& text) const {
        std::vector<std::int32_t> out;
        if (!word_level_) {
            out.reserve(text.size());
            for (unsigned char b : text) out.push_back(kByteOffset + static_cast<std::int32_t>(b));
            return out;
        }
        std::istringstream is(text);
        std::string word;
        while (is >> word) {
            auto it = word_to_id_.find(word);
            if (it == word_to_id_.end()) throw ValueError("word not in vocabulary: '" + word + "'");
            out.push_back(it->second);
        }
        return out;
    }

    /// Inverse of tokenize. Special ids (pad, EOS, start, sentinels for the
    /// byte-level vocabulary) are dropped when skip_special is set.
    std::string detokenize(const std::vector<std::int32_t>& ids, bool skip_special = true) const {
        std::string out;
        for (std::int32_t id : ids) {
            if (id < 0 || id >= size_) throw IndexError("token id " + std::to_string(id) + " outside vocabulary");
            if (!word_level_) {
                const bool is_byte = id >= kByteOffset && id < kByteOffset + 256;
                if (is_byte)
                    out.push_back(static_cast<char>(id - kByteOffset));
                else if (!skip_special)
                    out += "<" + std::to_string(id) + ">";
            } else {
                if (skip_special && id < 3) continue;
                if (!out.empty()) out.push_back(' ');
                out += words_[static_cast<std::size_t>(id)];
            }
        }
        return out;
    }

  private:
    std::int32_t size_ = 0;
    bool word_level_ = false;
    std::vector<std::string> words_;
    std::unordered_map<std::string, std::int32_t> word_to_id_;
};

// ---------------------------------------------------------------------------
// span-corruption geometry
// ---------------------------------------------------------------------------

struct CorruptionConfig {
    double noise_density = 0.15;
    double mean_span_length = 3.0;
    std::int64_t input_length = 512;
    std::int64_t target_length = 114;
    std::int32_t eos_id = Vocab::kEos;
    std::int32_t pad_id = Vocab::kPad;
    std::int32_t sentinel_base = 383;    // highest sentinel id, descending
    std::int32_t sentinel_range = 125;   // reserved sentinel id count

    void validate() const {
        if (!(noise_density > 0.0 && noise_density < 1.0))
            throw ConfigError("corruption: noise_density must lie in (0,1)");
        if (mean_span_length < 1.0) throw ConfigError("corruption: mean_span_length must be >= 1");
        if (input_length <= 1) throw ConfigError("corruption: input_length must be > 1");
        if (sentinel_range <= 0) throw ConfigError("corruption: no sentinel ids reserved");
    }
};

inline CorruptionConfig make_corruption_config(const Vocab& vocab, std::int64_t input_length = 512,
                                               double noise_density = 0.15, double mean_span_length = 3.0) {
    CorruptionConfig cfg;
    cfg.noise_density = noise_density;
    cfg.mean_span_length = mean_span_length;
    cfg.input_length = input_length;
    cfg.eos_id = vocab.eos_id();
    cfg.pad_id = vocab.pad_id();
    cfg.sentinel_base = vocab.sentinel_base();
    cfg.sentinel_range = vocab.sentinel_range();
    return cfg;
}

/// Derived per-chunk corruption quantities for a raw length.
struct SpanGeometry {
    std::int64_t raw = 0;
    std::int64_t noise_tokens = 0;
    std::int64_t noise_spans = 0;
    std::int64_t input_length = 0;   // includes EOS
    std::int64_t target_length = 0;  // includes EOS
};

inline SpanGeometry span_geometry(std::int64_t raw, double noise_density, double mean_span_length) {
    if (raw < 2) throw ValueError("span_geometry: raw length must be >= 2");
    SpanGeometry g;
    g.raw = raw;
    g.noise_tokens = std::lround(static_cast<double>(raw) * noise_density);
    g.noise_tokens = std::clamp<std::int64_t>(g.noise_tokens, 1, raw - 1);
    g.noise_spans = std::max<std::int64_t>(1, std::lround(static_cast<double>(g.noise_tokens) / mean_span_length));
    g.noise_spans = std::min(g.noise_spans, std::min(g.noise_tokens, raw - g.noise_tokens));
    g.input_length = raw - g.noise_tokens + g.noise_spans + 1;
    g.target_length = g.noise_tokens + g.noise_spans + 1;
    return g;
}

/// Smallest raw chunk length whose corruption produces exactly
/// `input_length` input tokens; returns (tokens_length, targets_length).
inline std::pair<std::int64_t, std::int64_t> compute_span_lengths(std::int64_t input_length, double noise_density,
                                                                  double mean_span_length) {
    if (input_length <= 1) throw ConfigError("compute_span_lengths: input_length must be > 1");
    const std::int64_t limit = 8 * input_length + 1024;
    for (std::int64_t raw = 2; raw <= limit; ++raw) {
        const SpanGeometry g = span_geometry(raw, noise_density, mean_span_length);
        if (g.input_length == input_length) return {raw, g.target_length};
    }
    throw ValueError("compute_span_lengths: no raw length up to " + std::to_string(limit) +
                     " corrupts to input length " + std::to_string(input_length));
}

/// A concrete arrangement of noise runs inside a chunk: noise_lens[i] is the
/// length of run i, gap_lens[i] the non-noise stretch before it, and
/// gap_lens.back() the tail after the last run. Interior gaps are nonzero so
/// runs never touch; the leading and trailing gaps may be empty.
struct SpanLayout {
    std::vector<std::int64_t> noise_lens;
    std::vector<std::int64_t> gap_lens;
};

namespace detail {

/// k distinct values from [0, n), sorted (partial Fisher-Yates).
inline std::vector<std::int64_t> sorted_sample(std::int64_t n, std::int64_t k, Rng& rng) {
    std::vector<std::int64_t> pool(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
    for (std::int64_t i = 0; i < k; ++i) {
        const std::int64_t j = i + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n - i)));
        std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
    }
    pool.resize(static_cast<std::size_t>(k));
    std::sort(pool.begin(), pool.end());
    return pool;
}

/// total split into `parts` positive summands, uniformly at random.
inline std::vector<std::int64_t> random_partition(std::int64_t total, std::int64_t parts, Rng& rng) {
    if (parts < 1 || total < parts) throw InternalError("random_partition: infeasible request");
    const auto cuts = sorted_sample(total - 1, parts - 1, rng);
    std::vector<std::int64_t> lens;
    std::int64_t prev = 0;
    for (std::int64_t c : cuts) {
        lens.push_back(c + 1 - prev);
        prev = c + 1;
    }
    lens.push_back(total - prev);
    return lens;
}

}  // namespace detail

/// Uniform random arrangement of the geometry's noise runs in the chunk.
inline SpanLayout sample_span_layout(const SpanGeometry& g, Rng& rng) {
    SpanLayout out;
    out.noise_lens = detail::random_partition(g.noise_tokens, g.noise_spans, rng);
    // Distribute the non-noise tokens into spans+1 gaps where the interior
    // gaps get one mandatory token: a composition of the leftover mass.
    const std::int64_t nonnoise = g.raw - g.noise_tokens;
    const std::int64_t k = g.noise_spans;
    const std::int64_t free_mass = nonnoise - (k - 1);
    if (free_mass < 0) throw InternalError("sample_span_layout: geometry leaves no room for interior gaps");
    const auto picks = detail::sorted_sample(free_mass + k, k, rng);
    out.gap_lens.resize(static_cast<std::size_t>(k + 1));
    std::int64_t prev = -1;
    for (std::int64_t i = 0; i < k; ++i) {
        const std::int64_t part = picks[static_cast<std::size_t>(i)] - prev - 1;
        out.gap_lens[static_cast<std::size_t>(i)] = part + (i > 0 ? 1 : 0);
        prev = picks[static_cast<std::size_t>(i)];
    }
    out.gap_lens[static_cast<std::size_t>(k)] = free_mass + k - 1 - prev;
    return out;
}

/// One corrupted example; pre-training lengths are exact, fine-tuning pads.
struct Example {
    std::vector<std::int32_t> input_ids;
    std::vector<std::int32_t> target_ids;
};

/// Deterministic core of corrupt_spans: applies an explicit layout.
inline Example apply_span_corruption(const std::vector<std::int32_t>& tokens, const SpanLayout& layout,
                                     const CorruptionConfig& cfg) {
    const std::int64_t spans = static_cast<std::int64_t>(layout.noise_lens.size());
    if (layout.gap_lens.size() != layout.noise_lens.size() + 1)
        throw InternalError("span layout: gap count must be span count + 1");
    std::int64_t covered = 0;
    for (std::int64_t n : layout.noise_lens) covered += n;
    for (std::int64_t gap : layout.gap_lens) covered += gap;
    if (covered != static_cast<std::int64_t>(tokens.size()))
        throw InternalError("span layout covers " + std::to_string(covered) + " tokens of " +
                            std::to_string(tokens.size()));
    if (spans > cfg.sentinel_range)
        throw ConfigError("corruption needs " + std::to_string(spans) + " sentinels but only " +
                          std::to_string(cfg.sentinel_range) + " ids are reserved");
    Example ex;
    std::size_t pos = 0;
    for (std::int64_t i = 0; i < spans; ++i) {
        const std::int32_t sentinel = cfg.sentinel_base - static_cast<std::int32_t>(i);
        for (std::int64_t j = 0; j < layout.gap_lens[static_cast<std::size_t>(i)]; ++j)
            ex.input_ids.push_back(tokens[pos++]);
        ex.input_ids.push_back(sentinel);
        ex.target_ids.push_back(sentinel);
        for (std::int64_t j = 0; j < layout.noise_lens[static_cast<std::size_t>(i)]; ++j)
            ex.target_ids.push_back(tokens[pos++]);
    }
    for (std::int64_t j = 0; j < layout.gap_lens.back(); ++j) ex.input_ids.push_back(tokens[pos++]);
    ex.input_ids.push_back(cfg.eos_id);
    ex.target_ids.push_back(cfg.eos_id);
    return ex;
}

/// Seeded span corruption of one raw chunk. Output lengths match
/// span_geometry(|tokens|) exactly; a violation is an internal error.
inline Example corrupt_spans(const std::vector<std::int32_t>& tokens, const CorruptionConfig& cfg, Rng& rng) {
    cfg.validate();
    const SpanGeometry g = span_geometry(static_cast<std::int64_t>(tokens.size()), cfg.noise_density,
                                         cfg.mean_span_length);
    const SpanLayout layout = sample_span_layout(g, rng);
    Example ex = apply_span_corruption(tokens, layout, cfg);
    if (static_cast<std::int64_t>(ex.input_ids.size()) != g.input_length ||
        static_cast<std::int64_t>(ex.target_ids.size()) != g.target_length)
        throw InternalError("corrupt_spans produced lengths " + std::to_string(ex.input_ids.size()) + "/" +
                            std::to_string(ex.target_ids.size()) + ", geometry requires " +
                            std::to_string(g.input_length) + "/" + std::to_string(g.target_length));
    return ex;
}

// ---------------------------------------------------------------------------
// corpus ingestion
// ---------------------------------------------------------------------------

/// Fixed-length raw token chunks over a tokenized corpus. Documents are
/// concatenated with EOS separators; the remainder that does not fill a
/// final chunk is dropped.
class TokenStream {
  public:
    TokenStream(const std::vector<std::string>& documents, const Vocab& vocab, std::int64_t tokens_length)
        : tokens_length_(tokens_length) {
        if (tokens_length < 1) throw ConfigError("tokens_length must be >= 1");
        for (const auto& doc : documents) {
            const auto ids = vocab.tokenize(doc);
            tokens_.insert(tokens_.end(), ids.begin(), ids.end());
            tokens_.push_back(vocab.eos_id());
        }
    }

    /// Reads a UTF-8 file (one document per line) or a directory of .txt
    /// files, in byte-sorted filename order.
    static TokenStream from_path(const std::string& path, const Vocab& vocab, std::int64_t tokens_length) {
        namespace fs = std::filesystem;
        std::vector<std::string> files;
        if (fs::is_directory(path)) {
            for (const auto& entry : fs::directory_iterator(path))
                if (entry.is_regular_file() && entry.path().extension() == ".txt")
                    files.push_back(entry.path().string());
            std::sort(files.begin(), files.end());
        } else {
            files.push_back(path);
        }
        std::vector<std::string> documents;
        for (const auto& file : files) {
            std::ifstream in(file);
            if (!in) throw IoError("cannot open corpus file: " + file);
            std::string line;
            while (std::getline(in, line))
                if (!line.empty()) documents.push_back(line);
        }
        return TokenStream(documents, vocab, tokens_length);
    }

    std::int64_t tokens_length() const { return tokens_length_; }
    std::int64_t num_chunks() const { return static_cast<std::int64_t>(tokens_.size()) / tokens_length_; }
    std::int64_t total_tokens() const { return static_cast<std::int64_t>(tokens_.size()); }

    std::vector<std::int32_t> chunk(std::int64_t idx) const {
        if (idx < 0 || idx >= num_chunks())
            throw IndexError("chunk " + std::to_string(idx) + " outside stream of " + std::to_string(num_chunks()));
        const auto begin = tokens_.begin() + idx * tokens_length_;
        return std::vector<std::int32_t>(begin, begin + tokens_length_);
    }

  private:
    std::int64_t tokens_length_;
    std::vector<std::int32_t> tokens_;
};

// ---------------------------------------------------------------------------
// corrupted example stream
// ---------------------------------------------------------------------------

struct StreamOptions {
    std::int64_t heldout_chunks = 0;  // reserved from the end of the stream
    bool fixed_corruption = false;    // corruption seed follows the chunk, not the epoch
};

/// Maps a global example index to a corrupted example. Index i uses chunk
/// i mod train_chunks; the corruption seed mixes the run seed with i (or
/// with the chunk index when fixed_corruption is set), so production order
/// can never change content and resume is index-exact.
class ExampleStream {
  public:
    ExampleStream(TokenStream chunks, CorruptionConfig cfg, std::uint64_t seed, StreamOptions opt = {})
        : chunks_(std::move(chunks)), cfg_(cfg), seed_(seed), opt_(opt) {
        cfg_.validate();
        if (opt_.heldout_chunks < 0) throw ConfigError("heldout_chunks must be >= 0");
        if (chunks_.num_chunks() - opt_.heldout_chunks < 1)
            throw ConfigError("stream has " + std::to_string(chunks_.num_chunks()) + " chunks, cannot hold out " +
                              std::to_string(opt_.heldout_chunks));
        if (chunks_.tokens_length() < 2) throw ConfigError("tokens_length must be >= 2 for corruption");
    }

    std::int64_t train_chunks() const { return chunks_.num_chunks() - opt_.heldout_chunks; }
    std::int64_t heldout_chunks() const { return opt_.heldout_chunks; }
    const CorruptionConfig& config() const { return cfg_; }

    Example train_example(std::int64_t index) const {
        if (index < 0) throw IndexError("negative example index");
        const std::int64_t chunk_idx = index % train_chunks();
        const std::uint64_t salt = opt_.fixed_corruption ? static_cast<std::uint64_t>(chunk_idx)
                                                         : static_cast<std::uint64_t>(index);
        Rng rng(mix_seed(seed_, salt));
        return corrupt_spans(chunks_.chunk(chunk_idx), cfg_, rng);
    }

    /// Held-out examples live in their own seed namespace (top bit set) and
    /// are identical across epochs and resumes.
    Example heldout_example(std::int64_t i) const {
        if (i < 0 || i >= opt_.heldout_chunks)
            throw IndexError("held-out example " + std::to_string(i) + " outside reserved " +
                             std::to_string(opt_.heldout_chunks));
        Rng rng(mix_seed(seed_, (1ULL << 63) | static_cast<std::uint64_t>(i)));
        return corrupt_spans(chunks_.chunk(train_chunks() + i), cfg_, rng);
    }

  private:
    TokenStream chunks_;
    CorruptionConfig cfg_;
    std::uint64_t seed_;
    StreamOptions opt_;
};

// ---------------------------------------------------------------------------
// batching
// ---------------------------------------------------------------------------

/// One training batch, row-major [batch, length] integer matrices.
struct Batch {
    std::int64_t batch_size = 0;
    std::int64_t input_length = 0;
    std::int64_t target_length = 0;
    std::vector<std::int32_t> input_ids;          // [B, input_length]
    std::vector<std::uint8_t> input_mask;         // 1 where input is a real token
    std::vector<std::int32_t> decoder_input_ids;  // labels shifted right, start token first
    std::vector<std::int32_t> labels;             // kIgnoreLabel on pad positions
    std::int64_t label_tokens = 0;                // non-ignored label count
};

/// Stacks examples of uniform lengths into a Batch. The decoder input is the
/// target sequence shifted right behind a start token; padded label
/// positions carry kIgnoreLabel.
inline Batch make_batch(const std::vector<Example>& examples, std::int32_t pad_id, std::int32_t start_id) {
    if (examples.empty()) throw ValueError("make_batch: empty example list");
    Batch b;
    b.batch_size = static_cast<std::int64_t>(examples.size());
    b.input_length = static_cast<std::int64_t>(examples.front().input_ids.size());
    b.target_length = static_cast<std::int64_t>(examples.front().target_ids.size());
    for (const auto& ex : examples)
        if (static_cast<std::int64_t>(ex.input_ids.size()) != b.input_length ||
            static_cast<std::int64_t>(ex.target_ids.size()) != b.target_length)
            throw DimensionError("make_batch: ragged example lengths " + std::to_string(ex.input_ids.size()) + "/" +
                                 std::to_string(ex.target_ids.size()) + " vs " + std::to_string(b.input_length) +
                                 "/" + std::to_string(b.target_length));
    b.input_ids.reserve(static_cast<std::size_t>(b.batch_size * b.input_length));
    b.input_mask.reserve(static_cast<std::size_t>(b.batch_size * b.input_length));
    b.decoder_input_ids.reserve(static_cast<std::size_t>(b.batch_size * b.target_length));
    b.labels.reserve(static_cast<std::size_t>(b.batch_size * b.target_length));
    for (const auto& ex : examples) {
        for (std::int32_t id : ex.input_ids) {
            b.input_ids.push_back(id);
            b.input_mask.push_back(id == pad_id ? 0 : 1);
        }
        for (std::int64_t t = 0; t < b.target_length; ++t) {
            const std::int32_t label = ex.target_ids[static_cast<std::size_t>(t)];
            b.decoder_input_ids.push_back(t == 0 ? start_id : ex.target_ids[static_cast<std::size_t>(t - 1)]);
            if (label == pad_id) {
                b.labels.push_back(kIgnoreLabel);
            } else {
                b.labels.push_back(label);
                b.label_tokens += 1;
            }
        }
    }
    return b;
}

// ---------------------------------------------------------------------------
// background prefetch
// ---------------------------------------------------------------------------

/// Blocking bounded queue: push waits while full, pop waits while empty,
/// close() releases both sides.
template <class T>
class BoundedQueue {
  public:
    explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {
        if (capacity == 0) throw ConfigError("queue capacity must be >= 1");
    }

    /// False once the queue is closed.
    bool push(T item) {
        std::unique_lock<std::mutex> lock(mu_);
        not_full_.wait(lock, [&] { return closed_ || items_.size() < capacity_; });
        if (closed_) return false;
        items_.push_back(std::move(item));
        not_empty_.notify_one();
        return true;
    }

    /// Empty optional once the queue is closed and drained.
    std::optional<T> pop() {
        std::unique_lock<std::mutex> lock(mu_);
        not_empty_.wait(lock, [&] { return closed_ || !items_.empty(); });
        if (items_.empty()) return std::nullopt;
        T item = std::move(items_.front());
        items_.pop_front();
        not_full_.notify_one();
        return item;
    }

    void close() {
        std::lock_guard<std::mutex> lock(mu_);
        closed_ = true;
        not_full_.notify_all();
        not_empty_.notify_all();
    }

    std::size_t size() const {
        std::lock_guard<std::mutex> lock(mu_);
        return items_.size();
    }

  private:
    mutable std::mutex mu_;
    std::condition_variable not_full_, not_empty_;
    std::deque<T> items_;
    std::size_t capacity_;
    bool closed_ = false;
};

/// Producer thread corrupting and batching ahead of the trainer. Because
/// every example is addressed by index, prefetch depth cannot change what
/// the trainer sees.
class BatchProducer {
  public:
    BatchProducer(const ExampleStream& stream, std::int64_t batch_size, std::int64_t start_example,
                  std::size_t queue_capacity = 64)
        : stream_(stream), queue_(queue_capacity) {
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        worker_ = std::thread([this, batch_size, start_example] {
            try {
                std::int64_t next = start_example;
                while (true) {
                    std::vector<Example> examples;
                    examples.reserve(static_cast<std::size_t>(batch_size));
                    for (std::int64_t i = 0; i < batch_size; ++i) examples.push_back(stream_.train_example(next + i));
                    Batch batch = make_batch(examples, stream_.config().pad_id, Vocab::kStart);
                    if (!queue_.push(std::move(batch))) return;
                    next += batch_size;
                }
            } catch (...) {
                // surface the failure to the consumer instead of dying silently
                failure_ = std::current_exception();
                queue_.close();
            }
        });
    }

    ~BatchProducer() {
        queue_.close();
        if (worker_.joinable()) worker_.join();
    }

    /// Next prefetched batch; rethrows a producer-side failure.
    Batch next() {
        auto item = queue_.pop();
        if (!item) {
            if (failure_) std::rethrow_exception(failure_);
            throw InternalError("batch producer stopped");
        }
        return std::move(*item);
    }

    std::size_t queued() const { return queue_.size(); }

  private:
    const ExampleStream& stream_;
    BoundedQueue<Batch> queue_;
    std::thread worker_;
    std::exception_ptr failure_;
};

}  // namespace deskt5
