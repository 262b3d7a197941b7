// Copyright (c) 2026, the deskt5 authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end: pretrain | finetune | eval | decode | data-stats.
// Exit codes: 0 success, 1 runtime or I/O failure, 2 usage or config error.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "deskt5/deskt5.hpp"

namespace deskt5 {
namespace {

namespace fs = std::filesystem;

/// Options shared by every subcommand; one subcommand parses per invocation.
struct CommonArgs {
    std::string config_file;
    std::vector<std::string> sets;
    std::string seed_text;
    std::string out_dir;
};

void add_common(CLI::App* sub, CommonArgs& c) {
    sub->add_option("--config", c.config_file, "JSON config file (sections model/data/optim/schedule/train)");
    sub->add_option("--set", c.sets, "override one field, e.g. --set optim.kind=adafactor (repeatable)");
    sub->add_option("--seed", c.seed_text, "shortcut for --set train.seed=<n>, applied last");
    sub->add_option("--out-dir", c.out_dir, "output root (default: $DESKT5_OUT, else ./runs)");
}

/// Layering: defaults, then the config file, then --set in order, then --seed.
RunConfig build_config(const CommonArgs& c) {
    RunConfig cfg;
    if (!c.config_file.empty()) apply_config_file(cfg, c.config_file);
    for (const std::string& s : c.sets) apply_override(cfg, s);
    if (!c.seed_text.empty()) apply_override(cfg, "train.seed=" + c.seed_text);
    cfg.validate();
    return cfg;
}

std::string output_root(const CommonArgs& c) {
    if (!c.out_dir.empty()) return c.out_dir;
    if (const char* env = std::getenv("DESKT5_OUT"); env != nullptr && *env != '\0') return env;
    return "runs";
}

/// runs/<utc timestamp>-seed<k>, suffixed when two runs share a second.
std::string fresh_run_dir(const std::string& root, std::uint64_t seed) {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
    const std::string base = (fs::path(root) / (std::string(stamp) + "-seed" + std::to_string(seed))).string();
    std::string dir = base;
    for (int k = 1; fs::exists(dir); ++k) dir = base + "-" + std::to_string(k);
    return dir;
}

void require_corpus(const RunConfig& cfg) {
    if (cfg.data.corpus.empty())
        throw ConfigError("data.corpus must be set (--set data.corpus=<path> or a config file)");
}

/// Vocabulary consistent with a model of the given size; byte-level unless a
/// vocab file is configured.
Vocab open_vocab(const RunConfig& cfg, std::int64_t vocab_size) {
    if (cfg.data.vocab_file.empty()) return Vocab::byte_level(static_cast<std::int32_t>(vocab_size));
    Vocab v = Vocab::from_file(cfg.data.vocab_file);
    if (v.size() != vocab_size)
        throw ConfigError("vocabulary file has " + std::to_string(v.size()) + " entries but the model expects " +
                          std::to_string(vocab_size));
    return v;
}

std::string checkpoint_precision(const std::string& dir) {
    const std::string path = (fs::path(dir) / "manifest.json").string();
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    const auto j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("precision") || !j.at("precision").is_string())
        throw ParseError(path + ": not a checkpoint manifest");
    return j.at("precision").get<std::string>();
}

void print_result(const std::string& run_dir, const TrainResult& res) {
    std::cout << "run_dir " << run_dir << "\n";
    std::cout << "steps_completed " << res.steps_completed << "\n";
    std::cout << "final_train_loss " << res.final_train_loss << "\n";
    if (std::isfinite(res.final_heldout_nll)) std::cout << "final_heldout_nll " << res.final_heldout_nll << "\n";
    if (std::isfinite(res.final_rouge_train)) std::cout << "final_rouge_train " << res.final_rouge_train << "\n";
    if (std::isfinite(res.final_rouge_heldout))
        std::cout << "final_rouge_heldout " << res.final_rouge_heldout << "\n";
    std::cout << "checkpoint " << res.checkpoint_dir << "\n";
    std::cout << "metrics " << res.metrics_path << "\n";
}

int run_pretrain(const CommonArgs& c, const std::string& resume) {
    const RunConfig cfg = build_config(c);
    require_corpus(cfg);
    const std::string run_dir = fresh_run_dir(output_root(c), cfg.train.seed);
    PretrainOptions opts;
    opts.resume_from = resume;
    const TrainResult res = pretrain(cfg, run_dir, opts);
    print_result(run_dir, res);
    if (res.diverged) {
        std::cerr << "training diverged; crash checkpoint: " << res.checkpoint_dir << "\n";
        return 1;
    }
    return 0;
}

int run_finetune(const CommonArgs& c, const std::string& init, const std::string& tsv, const std::string& resume) {
    const RunConfig cfg = build_config(c);
    const std::string run_dir = fresh_run_dir(output_root(c), cfg.train.seed);
    FinetuneOptions opts;
    opts.resume_from = resume;
    const TrainResult res = finetune(cfg, init, tsv, run_dir, opts);
    print_result(run_dir, res);
    if (res.diverged) {
        std::cerr << "training diverged; crash checkpoint: " << res.checkpoint_dir << "\n";
        return 1;
    }
    return 0;
}

template <class Real>
int eval_with(const RunConfig& cfg, const std::string& checkpoint) {
    CheckpointData<Real> ck = load_checkpoint<Real>(checkpoint);
    Model<Real> model(ck.model_config);
    model.adopt_params(std::move(ck.params));
    const Vocab vocab = open_vocab(cfg, ck.model_config.vocab_size);
    const auto [raw_len, target_len] =
        compute_span_lengths(cfg.data.input_length, cfg.data.noise_density, cfg.data.mean_span_length);
    (void)target_len;
    TokenStream chunks = TokenStream::from_path(cfg.data.corpus, vocab, raw_len);
    StreamOptions sopt;
    sopt.heldout_chunks = cfg.data.heldout_chunks;
    const ExampleStream stream(std::move(chunks), make_corruption_config(vocab, cfg.data.input_length),
                               cfg.train.seed, sopt);
    const double nll = evaluate_nll(model, stream, cfg.train.eval_batches, cfg.train.micro_batch_size);
    std::cout << "checkpoint_step " << ck.step << "\n";
    std::cout << "heldout_batches " << cfg.train.eval_batches << "\n";
    std::cout << "heldout_nll " << nll << "\n";
    return 0;
}

int run_eval(const CommonArgs& c, const std::string& checkpoint) {
    const RunConfig cfg = build_config(c);
    require_corpus(cfg);
    if (checkpoint_precision(checkpoint) == "f64") return eval_with<double>(cfg, checkpoint);
    return eval_with<float>(cfg, checkpoint);
}

template <class Real>
int decode_with(const RunConfig& cfg, const std::string& checkpoint, const std::string& text,
                std::int64_t max_len) {
    CheckpointData<Real> ck = load_checkpoint<Real>(checkpoint);
    Model<Real> model(ck.model_config);
    model.adopt_params(std::move(ck.params));
    const Vocab vocab = open_vocab(cfg, ck.model_config.vocab_size);
    if (max_len == 0) {
        std::cout << "\n";
        return 0;
    }
    std::vector<std::int32_t> input_ids = vocab.tokenize(text);
    input_ids.push_back(Vocab::kEos);
    const std::vector<std::int32_t> out = model.greedy_decode(input_ids, max_len);
    std::cout << vocab.detokenize(out) << "\n";
    return 0;
}

int run_decode(const CommonArgs& c, const std::string& checkpoint, const std::string& text, std::int64_t max_len) {
    const RunConfig cfg = build_config(c);
    if (max_len < 0) throw ConfigError("--max-len must be >= 0");
    if (checkpoint_precision(checkpoint) == "f64") return decode_with<double>(cfg, checkpoint, text, max_len);
    return decode_with<float>(cfg, checkpoint, text, max_len);
}

int run_data_stats(const CommonArgs& c, std::int64_t n) {
    const RunConfig cfg = build_config(c);
    require_corpus(cfg);
    if (n < 1) throw ConfigError("--n must be >= 1");
    const Vocab vocab = open_vocab(cfg, cfg.model.vocab_size);
    const auto [raw_len, target_len] =
        compute_span_lengths(cfg.data.input_length, cfg.data.noise_density, cfg.data.mean_span_length);
    TokenStream chunks = TokenStream::from_path(cfg.data.corpus, vocab, raw_len);
    StreamOptions sopt;
    sopt.heldout_chunks = cfg.data.heldout_chunks;
    sopt.fixed_corruption = cfg.data.fixed_corruption;
    const ExampleStream stream(std::move(chunks), make_corruption_config(vocab, cfg.data.input_length),
                               cfg.train.seed, sopt);

    // sentinel ids live in (sentinel_base - sentinel_range, sentinel_base]
    const std::int32_t sentinel_floor = vocab.sentinel_base() - vocab.sentinel_range();
    double fraction_sum = 0.0, span_sum = 0.0;
    std::map<std::int64_t, std::int64_t> input_hist, target_hist;
    for (std::int64_t i = 0; i < n; ++i) {
        const Example ex = stream.train_example(i);
        std::int64_t spans = 0;
        for (std::int32_t id : ex.target_ids) spans += id > sentinel_floor;
        const std::int64_t input_len = static_cast<std::int64_t>(ex.input_ids.size());
        const std::int64_t noise = static_cast<std::int64_t>(ex.target_ids.size()) - spans - 1;
        const std::int64_t raw = input_len - spans - 1 + noise;
        fraction_sum += static_cast<double>(noise) / static_cast<double>(raw);
        span_sum += static_cast<double>(spans);
        ++input_hist[input_len];
        ++target_hist[static_cast<std::int64_t>(ex.target_ids.size())];
    }
    std::cout << "examples " << n << "\n";
    std::cout << "raw_tokens_per_example " << raw_len << "\n";
    std::cout << "configured_input_length " << cfg.data.input_length << "\n";
    std::cout << "configured_target_length " << target_len << "\n";
    std::cout << "mean_masked_fraction " << fraction_sum / static_cast<double>(n) << "\n";
    std::cout << "mean_spans_per_example " << span_sum / static_cast<double>(n) << "\n";
    std::cout << "input_length_histogram";
    for (const auto& [len, count] : input_hist) std::cout << " " << len << ":" << count;
    std::cout << "\n";
    std::cout << "target_length_histogram";
    for (const auto& [len, count] : target_hist) std::cout << " " << len << ":" << count;
    std::cout << "\n";
    return 0;
}

int run_cli(int argc, char** argv) {
    CLI::App app{"desk-scale encoder-decoder pretraining, fine-tuning, and inspection"};
    app.name("deskt5");
    app.require_subcommand(1);

    CommonArgs common;
    std::string resume, init_checkpoint, data_path, checkpoint, input_text;
    std::int64_t max_len = 64, stats_n = 1000;

    CLI::App* pre = app.add_subcommand("pretrain", "span-corruption pretraining on a text corpus");
    add_common(pre, common);
    pre->add_option("--resume", resume, "checkpoint directory to continue from");

    CLI::App* fin = app.add_subcommand("finetune", "supervised fine-tuning from a TSV of input<TAB>target pairs");
    add_common(fin, common);
    fin->add_option("--init", init_checkpoint, "initial checkpoint directory")->required();
    fin->add_option("--data", data_path, "TSV file of input<TAB>target pairs")->required();
    fin->add_option("--resume", resume, "fine-tune checkpoint directory to continue from");

    CLI::App* ev = app.add_subcommand("eval", "held-out NLL of a checkpoint on the configured corpus");
    add_common(ev, common);
    ev->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();

    CLI::App* dec = app.add_subcommand("decode", "greedy decode of one input text");
    add_common(dec, common);
    dec->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
    dec->add_option("--input", input_text, "input text")->required();
    dec->add_option("--max-len", max_len, "maximum generated tokens; 0 prints an empty line");

    CLI::App* st = app.add_subcommand("data-stats", "masking statistics over the first N training examples");
    add_common(st, common);
    st->add_option("--n", stats_n, "number of examples to stream");

    if (argc <= 1) {
        std::cerr << app.help();
        return 2;
    }
    int rc = 0;
    pre->callback([&] { rc = run_pretrain(common, resume); });
    fin->callback([&] { rc = run_finetune(common, init_checkpoint, data_path, resume); });
    ev->callback([&] { rc = run_eval(common, checkpoint); });
    dec->callback([&] { rc = run_decode(common, checkpoint, input_text, max_len); });
    st->callback([&] { rc = run_data_stats(common, stats_n); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return rc;
}

}  // namespace
}  // namespace deskt5

int main(int argc, char** argv) { return deskt5::run_cli(argc, argv); }
