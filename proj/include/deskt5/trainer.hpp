// Copyright (c) 2026, the deskt5 authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "deskt5/checkpoint.hpp"
#include "deskt5/config.hpp"
#include "deskt5/data.hpp"
#include "deskt5/error.hpp"
#include "deskt5/metrics.hpp"
#include "deskt5/model.hpp"
#include "deskt5/optim.hpp"
#include "deskt5/rng.hpp"
#include "deskt5/schedule.hpp"
#include "deskt5/tensor.hpp"

namespace deskt5 {

struct TrainResult {
    std::int64_t steps_completed = 0;  // steps run by this invocation
    double initial_train_loss = std::numeric_limits<double>::quiet_NaN();
    double final_train_loss = std::numeric_limits<double>::quiet_NaN();
    double final_heldout_nll = std::numeric_limits<double>::quiet_NaN();
    double final_rouge_train = std::numeric_limits<double>::quiet_NaN();
    double final_rouge_heldout = std::numeric_limits<double>::quiet_NaN();
    bool diverged = false;
    std::string checkpoint_dir;  // final checkpoint, or the crash checkpoint when diverged
    std::string metrics_path;
};

struct PretrainOptions {
    std::string resume_from;               // checkpoint directory to continue from
    std::int64_t inject_nan_at_step = -1;  // poisons one gradient entry at this step (testing hook)
};

struct FinetuneOptions {
    std::string resume_from;
    std::int64_t inject_nan_at_step = -1;
};

/// Backpropagates every micro-batch into the shared parameter gradient
/// buffers, each graph seeded by its share of the live target tokens, so the
/// accumulated gradient equals the gradient of one large fused batch.
/// Clears old gradients first. Returns the token-weighted mean loss.
template <class Real>
double accumulate_gradients(Model<Real>& model, const std::vector<Batch>& micros, Rng* dropout_rng = nullptr) {
    if (micros.empty()) throw ValueError("accumulate_gradients: no micro-batches");
    double total_tokens = 0;
    for (const auto& b : micros) total_tokens += static_cast<double>(b.label_tokens);
    if (total_tokens <= 0) throw ValueError("accumulate_gradients: no unmasked target tokens");
    for (auto& [name, w] : model.named_params()) w.zero_grad();
    double weighted_loss = 0;
    for (const auto& b : micros) {
        if (b.label_tokens == 0) continue;
        const double weight = static_cast<double>(b.label_tokens) / total_tokens;
        Tape<Real> tape;
        const Tensor<Real> loss = model.forward_loss(tape, b, dropout_rng);
        tape.backward(loss, static_cast<Real>(weight));
        weighted_loss += weight * static_cast<double>(loss.item());
    }
    return weighted_loss;
}

/// Token-weighted NLL over the stream's held-out examples, batched
/// batch_size at a time, at most max_batches. Builds no autodiff graph,
/// runs no dropout, and leaves parameters and gradients untouched.
template <class Real>
double evaluate_nll(const Model<Real>& model, const ExampleStream& stream, std::int64_t max_batches,
                    std::int64_t batch_size) {
    if (max_batches < 1) throw ValueError("evaluate_nll: max_batches must be >= 1");
    if (batch_size < 1) throw ValueError("evaluate_nll: batch_size must be >= 1");
    const std::int64_t total = stream.heldout_chunks();
    if (total < 1) throw ValueError("evaluate_nll: stream reserves no held-out examples");
    double loss_sum = 0, token_sum = 0;
    std::int64_t batches = 0;
    for (std::int64_t start = 0; start < total && batches < max_batches; start += batch_size, ++batches) {
        std::vector<Example> examples;
        for (std::int64_t i = start; i < std::min(start + batch_size, total); ++i)
            examples.push_back(stream.heldout_example(i));
        const Batch b = make_batch(examples, stream.config().pad_id, Vocab::kStart);
        Tape<Real> tape;
        tape.set_recording(false);
        const Tensor<Real> loss = model.forward_loss(tape, b, nullptr);
        loss_sum += static_cast<double>(loss.item()) * static_cast<double>(b.label_tokens);
        token_sum += static_cast<double>(b.label_tokens);
    }
    return loss_sum / token_sum;
}

/// Writes n lines "word<TAB>drow": random words over an eight-letter
/// alphabet paired with their reversals, lengths uniform in [min_len, max_len].
inline void make_reversal_tsv(const std::string& path, std::int64_t n, std::int64_t min_len, std::int64_t max_len,
                              std::uint64_t seed) {
    if (n < 1 || min_len < 1 || max_len < min_len) throw ConfigError("reversal task: bad size parameters");
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write reversal data: " + path);
    Rng rng(seed);
    const char alphabet[] = "abcdefgh";
    for (std::int64_t i = 0; i < n; ++i) {
        const std::int64_t len = min_len + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(max_len - min_len + 1)));
        std::string word;
        for (std::int64_t j = 0; j < len; ++j) word.push_back(alphabet[rng.below(8)]);
        out << word << '\t' << std::string(word.rbegin(), word.rend()) << '\n';
    }
    if (!out) throw IoError("write failed for " + path);
}

/// TSV rows input<TAB>target, one pair per line; empty lines are skipped.
inline std::vector<std::pair<std::string, std::string>> read_tsv_pairs(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open fine-tune data: " + path);
    std::vector<std::pair<std::string, std::string>> pairs;
    std::string line;
    std::int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw ParseError(path + ":" + std::to_string(lineno) + ": expected input<TAB>target");
        pairs.emplace_back(line.substr(0, tab), line.substr(tab + 1));
    }
    if (pairs.empty()) throw ValueError("fine-tune data has no pairs: " + path);
    return pairs;
}

namespace detail {

struct UpdateOutcome {
    double grad_norm = 0;
    bool diverged = false;
    std::string reason;
};

/// Loss check, global-norm clip, optimizer step. Any non-finite value turns
/// into a divergence outcome instead of an exception so the caller can flag
/// the run and stop; grad_norm reports the pre-clip norm.
template <class Real>
UpdateOutcome apply_update(const RunConfig& cfg, NamedParams<Real>& params, OptimizerState<Real>& state,
                           double loss, double lr, bool poison) {
    UpdateOutcome out;
    try {
        if (poison && !params.empty()) params[0].second.grad()[0] = std::numeric_limits<Real>::quiet_NaN();
        if (!std::isfinite(loss)) throw DivergenceError("loss", "non-finite training loss");
        const double ceiling =
            cfg.optim.clip_norm > 0 ? cfg.optim.clip_norm : std::numeric_limits<double>::infinity();
        out.grad_norm = clip_global_norm(params, ceiling);
        optimizer_step(cfg.optimizer_kind(), params, state, cfg.adam_hyper(), cfg.adafactor_hyper(), lr);
    } catch (const DivergenceError& e) {
        out.diverged = true;
        out.reason = e.what();
    }
    return out;
}

template <class Real>
std::string write_checkpoint(const std::string& run_dir, const std::string& tag, std::int64_t step,
                             const RunConfig& cfg, const Model<Real>& model, const OptimizerState<Real>& state,
                             const Rng& train_rng, double final_loss) {
    CheckpointData<Real> data;
    data.step = step;
    data.model_config = model.config();
    data.params = model.named_params();
    data.optimizer_kind = cfg.optimizer_kind();
    data.state = state;
    data.rng_state = train_rng.serialize();
    data.config_snapshot = config_to_json(cfg).dump(2);
    data.final_loss = final_loss;
    const std::string dir = (std::filesystem::path(run_dir) / ("checkpoint-" + tag)).string();
    save_checkpoint(dir, data);
    return dir;
}

/// Creates the run directory and records the exact configuration in it.
inline void ensure_run_dir(const std::string& run_dir, const RunConfig& cfg) {
    std::error_code ec;
    std::filesystem::create_directories(run_dir, ec);
    if (ec) throw IoError("cannot create run directory " + run_dir + ": " + ec.message());
    const std::string path = (std::filesystem::path(run_dir) / "config.snapshot").string();
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out << config_to_json(cfg).dump(2) << '\n';
}

inline Vocab open_vocab(const RunConfig& cfg, std::int64_t vocab_size) {
    return cfg.data.vocab_file.empty() ? Vocab::byte_level(static_cast<std::int32_t>(vocab_size))
                                       : Vocab::from_file(cfg.data.vocab_file);
}

inline double elapsed_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

template <class Real>
TrainResult pretrain_impl(const RunConfig& cfg, const std::string& run_dir, const PretrainOptions& opts) {
    namespace fs = std::filesystem;
    ensure_run_dir(run_dir, cfg);

    const Vocab vocab = open_vocab(cfg, cfg.model.vocab_size);
    if (vocab.size() != cfg.model.vocab_size)
        throw ConfigError("model.vocab_size " + std::to_string(cfg.model.vocab_size) +
                          " does not match the vocabulary's " + std::to_string(vocab.size()) + " entries");
    const auto [raw_len, target_len] = compute_span_lengths(cfg.data.input_length, cfg.data.noise_density,
                                                            cfg.data.mean_span_length);
    (void)target_len;
    TokenStream chunks = TokenStream::from_path(cfg.data.corpus, vocab, raw_len);
    StreamOptions sopt;
    sopt.heldout_chunks = cfg.data.heldout_chunks;
    sopt.fixed_corruption = cfg.data.fixed_corruption;
    const ExampleStream stream(std::move(chunks),
                               make_corruption_config(vocab, cfg.data.input_length, cfg.data.noise_density,
                                                      cfg.data.mean_span_length),
                               cfg.train.seed, sopt);

    Model<Real> model(cfg.model);
    OptimizerState<Real> state;
    Rng train_rng(mix_seed(cfg.train.seed, 0x747261696eULL));
    std::int64_t start_step = 0;
    const bool resumed = !opts.resume_from.empty();
    if (resumed) {
        auto ck = load_checkpoint<Real>(opts.resume_from);
        if (!(ck.model_config == cfg.model))
            throw ConfigError("checkpoint model configuration does not match the run configuration");
        if (ck.optimizer_kind != cfg.optimizer_kind())
            throw ConfigError(std::string("checkpoint optimizer ") + to_string(ck.optimizer_kind) +
                              " does not match configured " + cfg.optim.kind);
        model.adopt_params(std::move(ck.params));
        state = std::move(ck.state);
        train_rng = Rng::deserialize(ck.rng_state);
        start_step = ck.step;
    } else {
        Rng init_rng(cfg.train.seed);
        model.init_params(init_rng);
    }
    if (start_step > cfg.train.total_steps)
        throw ConfigError("checkpoint step " + std::to_string(start_step) + " lies beyond total_steps " +
                          std::to_string(cfg.train.total_steps));

    auto params = model.named_params();
    const ScheduleSpec spec = cfg.schedule_spec();
    Rng* dropout_rng = cfg.model.dropout > 0 ? &train_rng : nullptr;

    TrainResult result;
    result.metrics_path = (fs::path(run_dir) / "metrics.csv").string();
    MetricsCsv metrics(result.metrics_path, /*append=*/resumed);
    const auto t0 = std::chrono::steady_clock::now();

    const std::int64_t micro = cfg.train.micro_batch_size;
    const std::int64_t accum = cfg.train.grad_accum_steps;
    BatchProducer producer(stream, micro, start_step * micro * accum,
                           static_cast<std::size_t>(cfg.train.queue_capacity));

    for (std::int64_t step = start_step; step < cfg.train.total_steps; ++step) {
        const auto step_t0 = std::chrono::steady_clock::now();
        std::vector<Batch> micros;
        micros.reserve(static_cast<std::size_t>(accum));
        for (std::int64_t a = 0; a < accum; ++a) micros.push_back(producer.next());
        const double loss = accumulate_gradients(model, micros, dropout_rng);
        const double lr = schedule_lr(step, spec);
        const UpdateOutcome outcome = apply_update(cfg, params, state, loss, lr, step == opts.inject_nan_at_step);

        double tokens = 0;
        for (const auto& b : micros) tokens += static_cast<double>(b.label_tokens);
        const double dt = elapsed_since(step_t0);
        metrics.append({step + 1, outcome.diverged ? "diverged" : "train", loss, lr, outcome.grad_norm,
                        dt > 0 ? tokens / dt : 0.0, elapsed_since(t0)});

        if (outcome.diverged) {
            result.diverged = true;
            result.checkpoint_dir = write_checkpoint(run_dir, "crash", step, cfg, model, state, train_rng, loss);
            return result;
        }
        result.steps_completed = step + 1 - start_step;
        if (std::isnan(result.initial_train_loss)) result.initial_train_loss = loss;
        result.final_train_loss = loss;

        if (cfg.train.eval_interval > 0 && (step + 1) % cfg.train.eval_interval == 0 && stream.heldout_chunks() > 0) {
            const double nll = evaluate_nll(model, stream, cfg.train.eval_batches, micro);
            result.final_heldout_nll = nll;
            metrics.append({step + 1, "heldout", nll, lr, 0.0, 0.0, elapsed_since(t0)});
        }
        if (cfg.train.checkpoint_interval > 0 && (step + 1) % cfg.train.checkpoint_interval == 0 &&
            step + 1 < cfg.train.total_steps) {
            write_checkpoint(run_dir, std::to_string(step + 1), step + 1, cfg, model, state, train_rng, loss);
        }
    }
    result.checkpoint_dir = write_checkpoint(run_dir, "final", cfg.train.total_steps, cfg, model, state, train_rng,
                                             result.final_train_loss);
    return result;
}

/// Supervised example padded to fixed lengths: content truncated to leave
/// room for EOS, then padded with pad_id (which make_batch turns into
/// ignored labels).
inline Example make_supervised_example(const Vocab& vocab, const std::string& input, const std::string& target,
                                       std::int64_t input_len, std::int64_t target_len) {
    const auto fit = [&](const std::string& text, std::int64_t len) {
        std::vector<std::int32_t> ids = vocab.tokenize(text);
        if (static_cast<std::int64_t>(ids.size()) > len - 1) ids.resize(static_cast<std::size_t>(len - 1));
        ids.push_back(vocab.eos_id());
        while (static_cast<std::int64_t>(ids.size()) < len) ids.push_back(vocab.pad_id());
        return ids;
    };
    Example ex;
    ex.input_ids = fit(input, input_len);
    ex.target_ids = fit(target, target_len);
    return ex;
}

template <class Real>
TrainResult finetune_impl(const RunConfig& cfg, const std::string& init_checkpoint, const std::string& tsv_path,
                          const std::string& run_dir, const FinetuneOptions& opts) {
    namespace fs = std::filesystem;
    ensure_run_dir(run_dir, cfg);
    const auto pairs = read_tsv_pairs(tsv_path);

    // the checkpoint owns the architecture; a resume checkpoint replaces the
    // initial one entirely
    const bool resumed = !opts.resume_from.empty();
    auto ck = load_checkpoint<Real>(resumed ? opts.resume_from : init_checkpoint);
    const Vocab vocab = open_vocab(cfg, ck.model_config.vocab_size);
    if (vocab.size() != ck.model_config.vocab_size)
        throw ConfigError("vocabulary with " + std::to_string(vocab.size()) +
                          " entries does not match checkpoint vocabulary of " +
                          std::to_string(ck.model_config.vocab_size));
    Model<Real> model(ck.model_config);
    model.adopt_params(std::move(ck.params));
    auto params = model.named_params();

    OptimizerState<Real> state;
    Rng train_rng(mix_seed(cfg.train.seed, 0x66696e65ULL));
    std::int64_t start_step = 0;
    if (resumed) {
        if (ck.optimizer_kind != cfg.optimizer_kind())
            throw ConfigError(std::string("checkpoint optimizer ") + to_string(ck.optimizer_kind) +
                              " does not match configured " + cfg.optim.kind);
        state = std::move(ck.state);
        train_rng = Rng::deserialize(ck.rng_state);
        start_step = ck.step;
    }
    if (start_step > cfg.train.total_steps)
        throw ConfigError("checkpoint step " + std::to_string(start_step) + " lies beyond total_steps " +
                          std::to_string(cfg.train.total_steps));

    // the tail eighth is held out for generalization scoring; everything
    // else trains
    struct RougeItem {
        std::vector<std::int32_t> input_ids;  // unpadded, EOS-terminated
        std::vector<std::int32_t> reference;  // unpadded, no EOS
    };
    const auto rouge_item = [&](const std::pair<std::string, std::string>& p) {
        RougeItem item;
        item.input_ids = vocab.tokenize(p.first);
        if (static_cast<std::int64_t>(item.input_ids.size()) > cfg.data.finetune_input_length - 1)
            item.input_ids.resize(static_cast<std::size_t>(cfg.data.finetune_input_length - 1));
        item.input_ids.push_back(vocab.eos_id());
        item.reference = vocab.tokenize(p.second);
        if (static_cast<std::int64_t>(item.reference.size()) > cfg.data.finetune_target_length - 1)
            item.reference.resize(static_cast<std::size_t>(cfg.data.finetune_target_length - 1));
        return item;
    };
    const std::int64_t heldout = static_cast<std::int64_t>(pairs.size()) / 8;
    const std::int64_t train_n = static_cast<std::int64_t>(pairs.size()) - heldout;
    std::vector<Example> train_ex;
    std::vector<RougeItem> rouge_train_items, rouge_heldout_items;
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(pairs.size()); ++i) {
        const auto& p = pairs[static_cast<std::size_t>(i)];
        if (i < train_n) {
            train_ex.push_back(make_supervised_example(vocab, p.first, p.second, cfg.data.finetune_input_length,
                                                       cfg.data.finetune_target_length));
            rouge_train_items.push_back(rouge_item(p));
        } else {
            rouge_heldout_items.push_back(rouge_item(p));
        }
    }

    const std::int64_t micro = cfg.train.micro_batch_size;
    const std::int64_t accum = cfg.train.grad_accum_steps;
    std::int64_t cursor = (start_step * micro * accum) % train_n;
    const auto next_batch = [&] {
        std::vector<Example> ex;
        ex.reserve(static_cast<std::size_t>(micro));
        for (std::int64_t b = 0; b < micro; ++b) {
            ex.push_back(train_ex[static_cast<std::size_t>(cursor)]);
            cursor = (cursor + 1) % train_n;
        }
        return make_batch(ex, vocab.pad_id(), Vocab::kStart);
    };

    const ScheduleSpec spec = cfg.schedule_spec();
    Rng* dropout_rng = model.config().dropout > 0 ? &train_rng : nullptr;

    TrainResult result;
    result.metrics_path = (fs::path(run_dir) / "metrics.csv").string();
    MetricsCsv metrics(result.metrics_path, /*append=*/resumed);
    const auto t0 = std::chrono::steady_clock::now();

    const auto rouge_mean = [&](const std::vector<RougeItem>& items) {
        double sum = 0;
        for (const auto& item : items) {
            const auto decoded = model.greedy_decode(item.input_ids, cfg.data.finetune_target_length);
            sum += rouge_l(decoded, item.reference);
        }
        return sum / static_cast<double>(items.size());
    };
    const auto append_rouge = [&](std::int64_t row_step, double lr) {
        result.final_rouge_train = rouge_mean(rouge_train_items);
        metrics.append({row_step, "rouge_train", result.final_rouge_train, lr, 0.0, 0.0, elapsed_since(t0)});
        if (!rouge_heldout_items.empty()) {
            result.final_rouge_heldout = rouge_mean(rouge_heldout_items);
            metrics.append({row_step, "rouge_heldout", result.final_rouge_heldout, lr, 0.0, 0.0, elapsed_since(t0)});
        }
    };

    std::int64_t last_rouge_step = -1;
    for (std::int64_t step = start_step; step < cfg.train.total_steps; ++step) {
        const auto step_t0 = std::chrono::steady_clock::now();
        std::vector<Batch> micros;
        micros.reserve(static_cast<std::size_t>(accum));
        for (std::int64_t a = 0; a < accum; ++a) micros.push_back(next_batch());
        const double loss = accumulate_gradients(model, micros, dropout_rng);
        const double lr = schedule_lr(step, spec);
        const UpdateOutcome outcome = apply_update(cfg, params, state, loss, lr, step == opts.inject_nan_at_step);

        double tokens = 0;
        for (const auto& b : micros) tokens += static_cast<double>(b.label_tokens);
        const double dt = elapsed_since(step_t0);
        metrics.append({step + 1, outcome.diverged ? "diverged" : "train", loss, lr, outcome.grad_norm,
                        dt > 0 ? tokens / dt : 0.0, elapsed_since(t0)});

        if (outcome.diverged) {
            result.diverged = true;
            result.checkpoint_dir = write_checkpoint(run_dir, "crash", step, cfg, model, state, train_rng, loss);
            return result;
        }
        result.steps_completed = step + 1 - start_step;
        if (std::isnan(result.initial_train_loss)) result.initial_train_loss = loss;
        result.final_train_loss = loss;

        if (cfg.train.eval_interval > 0 && (step + 1) % cfg.train.eval_interval == 0) {
            append_rouge(step + 1, lr);
            last_rouge_step = step + 1;
        }
        if (cfg.train.checkpoint_interval > 0 && (step + 1) % cfg.train.checkpoint_interval == 0 &&
            step + 1 < cfg.train.total_steps) {
            write_checkpoint(run_dir, std::to_string(step + 1), step + 1, cfg, model, state, train_rng, loss);
        }
    }
    if (last_rouge_step != cfg.train.total_steps)
        append_rouge(cfg.train.total_steps, schedule_lr(std::max<std::int64_t>(cfg.train.total_steps - 1, 0), spec));
    result.checkpoint_dir = write_checkpoint(run_dir, "final", cfg.train.total_steps, cfg, model, state, train_rng,
                                             result.final_train_loss);
    return result;
}

}  // namespace detail

/// Span-corruption pre-training per the run configuration: streams corpus
/// chunks through the corruption pipeline behind a producer thread, takes
/// total_steps accumulated optimizer steps, logs metrics, evaluates held-out
/// NLL, and checkpoints periodically and at the end. A non-finite loss or
/// gradient stops the run with a crash checkpoint and a flagged metrics row.
inline TrainResult pretrain(const RunConfig& cfg, const std::string& run_dir, const PretrainOptions& opts = {}) {
    cfg.validate();
    if (cfg.train.precision == "f64") return detail::pretrain_impl<double>(cfg, run_dir, opts);
    return detail::pretrain_impl<float>(cfg, run_dir, opts);
}

/// Supervised seq2seq fine-tuning from a checkpoint on TSV input/target
/// pairs, no span corruption. The architecture comes from the checkpoint;
/// the optimizer starts fresh unless resuming. Periodic RougeL via greedy
/// decode on the training pairs and a held-out tail split.
inline TrainResult finetune(const RunConfig& cfg, const std::string& init_checkpoint, const std::string& tsv_path,
                            const std::string& run_dir, const FinetuneOptions& opts = {}) {
    cfg.validate();
    if (cfg.train.precision == "f64")
        return detail::finetune_impl<double>(cfg, init_checkpoint, tsv_path, run_dir, opts);
    return detail::finetune_impl<float>(cfg, init_checkpoint, tsv_path, run_dir, opts);
}

}  // namespace deskt5
