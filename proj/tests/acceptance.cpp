// Copyright (c) 2026, the deskt5 authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance gate: twelve numbered criteria, one PASS/FAIL line each.
// Every check here recomputes its expected values independently (closed
// forms, scalar loops, finite differences, dynamic programming) rather than
// trusting the library's own arithmetic. Exit code 0 iff all criteria pass.
//
// DESKT5_ASSETS overrides the bundled-asset directory (default: ./assets).
// DESKT5_ACCEPT_ONLY=3,9 runs a subset during development; deselected
// criteria report SKIP and the summary says the gate was partial.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "deskt5/deskt5.hpp"

namespace deskt5 {
namespace {

namespace fs = std::filesystem;

std::string g_assets = "assets";
fs::path g_work;  // scratch space for training runs

double now_s() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

std::string corpus_path() { return (fs::path(g_assets) / "corpus.txt").string(); }

std::vector<char> file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

double scalar_rms(const std::vector<double>& x) {
    double ss = 0;
    for (double v : x) ss += v * v;
    return std::sqrt(ss / static_cast<double>(x.size()));
}

// ---------------------------------------------------------------------------
// criterion 1: closed-form parameter count of the base preset
// ---------------------------------------------------------------------------

bool criterion_param_count(std::string& detail) {
    const std::int64_t count = param_count(preset("base"));
    std::ostringstream os;
    os << "base preset has " << count << " parameters, bounds [245000000, 251000000]";
    detail = os.str();
    return count >= 245000000 && count <= 251000000;
}

// ---------------------------------------------------------------------------
// criterion 2: span-corruption geometry, checked by brute-force enumeration
// ---------------------------------------------------------------------------

/// Forward geometry restated from first principles: raw tokens -> lengths.
struct RawGeometry {
    std::int64_t input, target;
};

RawGeometry geometry_of(std::int64_t raw, double density, double mean) {
    std::int64_t noise = std::lround(static_cast<double>(raw) * density);
    noise = std::clamp<std::int64_t>(noise, 1, raw - 1);
    std::int64_t spans = std::max<std::int64_t>(1, std::lround(static_cast<double>(noise) / mean));
    spans = std::min(spans, std::min(noise, raw - noise));
    return {raw - noise + spans + 1, noise + spans + 1};
}

bool criterion_span_geometry(std::string& detail) {
    const auto [raw, target] = compute_span_lengths(512, 0.15, 3.0);
    bool ok = target == 114;

    // every raw length in [400, 700] that packs to a 512-token input must
    // produce a 114-token target, and the library's raw must be among them
    std::vector<std::int64_t> matches;
    for (std::int64_t r = 400; r <= 700; ++r) {
        const RawGeometry g = geometry_of(r, 0.15, 3.0);
        if (g.input == 512) {
            matches.push_back(r);
            ok = ok && g.target == 114;
        }
    }
    ok = ok && std::find(matches.begin(), matches.end(), raw) != matches.end();
    std::ostringstream os;
    os << "inputs of 512 tokens pair with targets of " << target << " (raw " << raw << "; "
       << matches.size() << " raw lengths in [400,700] pack to 512, all with 114-token targets)";
    detail = os.str();
    return ok;
}

// ---------------------------------------------------------------------------
// criterion 3: realized masking rate over 1000 seeded examples
// ---------------------------------------------------------------------------

bool criterion_masking_rate(std::string& detail) {
    const Vocab vocab = Vocab::byte_level(384);
    const auto [raw, target] = compute_span_lengths(512, 0.15, 3.0);
    (void)target;
    TokenStream chunks = TokenStream::from_path(corpus_path(), vocab, raw);
    const ExampleStream stream(std::move(chunks), make_corruption_config(vocab, 512), 0);

    const std::int32_t sentinel_floor = vocab.sentinel_base() - vocab.sentinel_range();
    double fraction_sum = 0;
    for (std::int64_t i = 0; i < 1000; ++i) {
        const Example ex = stream.train_example(i);
        std::int64_t spans = 0;
        for (std::int32_t id : ex.target_ids) spans += id > sentinel_floor;
        const std::int64_t noise = static_cast<std::int64_t>(ex.target_ids.size()) - spans - 1;
        const std::int64_t raw_i = static_cast<std::int64_t>(ex.input_ids.size()) - spans - 1 + noise;
        fraction_sum += static_cast<double>(noise) / static_cast<double>(raw_i);
    }
    const double mean = fraction_sum / 1000.0;
    std::ostringstream os;
    os << "mean masked fraction " << mean << " over 1000 examples, bounds [0.13, 0.17]";
    detail = os.str();
    return mean >= 0.13 && mean <= 0.17;
}

// ---------------------------------------------------------------------------
// criterion 4: 2x2 optimizer-schedule grid at desk scale
// ---------------------------------------------------------------------------

RunConfig grid_config(const std::string& optim, const std::string& sched) {
    RunConfig cfg;  // nano model preset is the default
    cfg.data.corpus = corpus_path();
    cfg.data.input_length = 64;
    cfg.data.heldout_chunks = 8;
    cfg.optim.kind = optim;
    cfg.schedule.kind = sched;
    cfg.schedule.base_lr = sched == "isr" ? 0.1 : 0.01;
    cfg.schedule.warmup_steps = 100;
    cfg.train.total_steps = 2000;
    cfg.train.micro_batch_size = 8;
    cfg.train.grad_accum_steps = 4;
    cfg.train.eval_interval = 2000;
    cfg.train.checkpoint_interval = 0;
    cfg.train.eval_batches = 8;
    cfg.train.seed = 0;
    return cfg;
}

bool criterion_grid(std::string& detail) {
    const std::vector<std::string> optims = {"adafactor", "adamw_rms"};
    const std::vector<std::string> scheds = {"isr", "cosine"};
    std::map<std::string, TrainResult> cells;
    bool ok = true;
    for (const auto& optim : optims)
        for (const auto& sched : scheds) {
            const std::string cell = optim + "+" + sched;
            const fs::path run = g_work / ("grid-" + cell);
            const double t0 = now_s();
            const TrainResult res = pretrain(grid_config(optim, sched), run.string());
            const double dt = now_s() - t0;
            std::printf("  cell %-20s initial %.3f  final %.3f  heldout %.3f  (%.0fs)\n", cell.c_str(),
                        res.initial_train_loss, res.final_train_loss, res.final_heldout_nll, dt);
            std::fflush(stdout);
            const bool cell_ok = !res.diverged && std::isfinite(res.initial_train_loss) &&
                                 std::isfinite(res.final_train_loss) && std::isfinite(res.final_heldout_nll) &&
                                 res.final_train_loss < res.initial_train_loss - 0.5;
            ok = ok && cell_ok;
            cells[cell] = res;
            fs::remove_all(run);
        }

    std::printf("  final train NLL %14s %10s\n", "isr", "cosine");
    for (const auto& optim : optims)
        std::printf("  %-12s %12.3f %10.3f\n", optim.c_str(), cells[optim + "+isr"].final_train_loss,
                    cells[optim + "+cosine"].final_train_loss);
    std::printf("  final heldout NLL %12s %10s\n", "isr", "cosine");
    for (const auto& optim : optims)
        std::printf("  %-12s %12.3f %10.3f\n", optim.c_str(), cells[optim + "+isr"].final_heldout_nll,
                    cells[optim + "+cosine"].final_heldout_nll);
    std::fflush(stdout);

    detail = "four 2000-step cells finite with final train NLL at least 0.5 below initial";
    return ok;
}

// ---------------------------------------------------------------------------
// criterion 5: per-tensor learning-rate scaling equals a plain step times
// max(rms_eps, rms(W)) for identical incoming state
// ---------------------------------------------------------------------------

bool criterion_rms_equivalence(std::string& detail) {
    Rng rng(41);
    double worst = 0;
    for (int c = 0; c < 100; ++c) {
        Shape shape;
        if (rng.below(2) == 0)
            shape = {1 + static_cast<std::int64_t>(rng.below(9))};
        else
            shape = {1 + static_cast<std::int64_t>(rng.below(8)), 1 + static_cast<std::int64_t>(rng.below(8))};
        std::int64_t n = 1;
        for (auto d : shape) n *= d;

        const double wscale = std::vector<double>{1e-4, 1.0, 10.0}[rng.below(3)];
        std::vector<double> w0(n), g0(n);
        for (auto& v : w0) v = rng.normal() * wscale;
        for (auto& v : g0) v = rng.normal();

        AdamHyper h;
        h.weight_decay = rng.below(2) == 0 ? 0.0 : 0.01;
        const double lr = 0.07;
        const std::int64_t t0 = static_cast<std::int64_t>(rng.below(5));

        auto make_side = [&]() {
            NamedParams<double> params;
            params.emplace_back("w", Tensor<double>(shape, w0));
            params[0].second.grad().assign(g0.begin(), g0.end());
            OptimizerState<double> st;
            st.t = t0;
            if (t0 > 0) {
                auto& slot = st.slots["w"];
                slot.m.resize(n);
                slot.v.resize(n);
                Rng state_rng(1000 + c);
                for (auto& v : slot.m) v = state_rng.normal() * 0.1;
                for (auto& v : slot.v) v = std::abs(state_rng.normal()) * 0.01;
            }
            return std::pair(std::move(params), std::move(st));
        };

        auto [plain, plain_state] = make_side();
        adamw_step(plain, plain_state, h, lr);
        auto [scaled, scaled_state] = make_side();
        adamw_rms_step(scaled, scaled_state, h, lr);

        const double expected_scale = std::max(h.rms_eps, scalar_rms(w0));
        for (std::int64_t i = 0; i < n; ++i) {
            const double delta_plain = plain[0].second.values()[i] - w0[i];
            const double delta_scaled = scaled[0].second.values()[i] - w0[i];
            const double expected = delta_plain * expected_scale;
            worst = std::max(worst,
                             std::abs(delta_scaled - expected) / std::max(1.0, std::abs(expected)));
        }
    }
    std::ostringstream os;
    os << "100 random (W, g, state) cases, worst deviation " << worst << " (tolerance 1e-12)";
    detail = os.str();
    return worst < 1e-12;
}

// ---------------------------------------------------------------------------
// criterion 6: optimizer steps match independent scalar-loop oracles
// ---------------------------------------------------------------------------

struct OracleState {
    std::vector<double> m, v, row, col;
    std::int64_t t = 0;
};

void oracle_adam(std::vector<double>& w, const std::vector<double>& g, OracleState& s, const AdamHyper& h,
                 double lr_effective) {
    const auto n = w.size();
    if (s.m.empty()) {
        s.m.assign(n, 0.0);
        s.v.assign(n, 0.0);
    }
    const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(s.t));
    const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(s.t));
    for (std::size_t i = 0; i < n; ++i) {
        s.m[i] = h.beta1 * s.m[i] + (1.0 - h.beta1) * g[i];
        s.v[i] = h.beta2 * s.v[i] + (1.0 - h.beta2) * g[i] * g[i];
        const double mhat = s.m[i] / bc1;
        const double vhat = s.v[i] / bc2;
        const double denom = std::sqrt(vhat) + h.eps;
        const double step = (denom > 0 ? mhat / denom : 0.0) + h.weight_decay * w[i];
        w[i] -= lr_effective * step;
    }
}

/// Factored oracle for a single r x c matrix, or full-v for r == 0 vectors.
void oracle_adafactor(std::vector<double>& w, const std::vector<double>& g, std::int64_t r, std::int64_t c,
                      OracleState& s, const AdafactorHyper& h, double lr) {
    const auto n = w.size();
    const double beta2 = 1.0 - std::pow(static_cast<double>(s.t), -h.beta2_exponent);
    const double wscale = std::max(h.eps2, scalar_rms(w));
    std::vector<double> u(n);
    if (r > 0) {
        if (s.row.empty()) {
            s.row.assign(r, 0.0);
            s.col.assign(c, 0.0);
        }
        for (std::int64_t i = 0; i < r; ++i) {
            double rs = 0;
            for (std::int64_t j = 0; j < c; ++j) rs += g[i * c + j] * g[i * c + j] + h.eps1;
            s.row[i] = beta2 * s.row[i] + (1.0 - beta2) * rs;
        }
        for (std::int64_t j = 0; j < c; ++j) {
            double cs = 0;
            for (std::int64_t i = 0; i < r; ++i) cs += g[i * c + j] * g[i * c + j] + h.eps1;
            s.col[j] = beta2 * s.col[j] + (1.0 - beta2) * cs;
        }
        double rsum = 0;
        for (std::int64_t i = 0; i < r; ++i) rsum += s.row[i];
        for (std::int64_t i = 0; i < r; ++i)
            for (std::int64_t j = 0; j < c; ++j)
                u[i * c + j] = g[i * c + j] / std::sqrt(s.row[i] * s.col[j] / rsum);
    } else {
        if (s.v.empty()) s.v.assign(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            s.v[i] = beta2 * s.v[i] + (1.0 - beta2) * (g[i] * g[i] + h.eps1);
            u[i] = g[i] / std::sqrt(s.v[i]);
        }
    }
    const double clip = std::max(1.0, scalar_rms(u) / h.clip_threshold);
    for (std::size_t i = 0; i < n; ++i) w[i] -= lr * wscale / clip * u[i];
}

bool criterion_optimizer_oracles(std::string& detail) {
    Rng rng(271828);
    double worst = 0;

    for (const std::string kind : {"adamw", "adamw_rms", "adafactor"}) {
        for (int c = 0; c < 100; ++c) {
            const bool matrix = rng.below(2) == 1;
            const std::int64_t r = matrix ? 1 + static_cast<std::int64_t>(rng.below(6)) : 0;
            const std::int64_t cols = matrix ? 1 + static_cast<std::int64_t>(rng.below(6)) : 0;
            const std::int64_t n = matrix ? r * cols : 1 + static_cast<std::int64_t>(rng.below(11));
            const Shape shape = matrix ? Shape{r, cols} : Shape{n};

            std::vector<double> w0(n);
            for (auto& v : w0) v = rng.normal();
            NamedParams<double> params;
            params.emplace_back("w", Tensor<double>(shape, w0));
            OptimizerState<double> state;
            AdamHyper ah;
            AdafactorHyper fh;
            OracleState oracle_state;
            std::vector<double> w_oracle = w0;
            const double lr = 0.05;

            const int steps = 1 + static_cast<int>(rng.below(3));
            for (int s = 0; s < steps; ++s) {
                std::vector<double> g(n);
                for (auto& v : g) v = rng.normal();
                params[0].second.zero_grad();
                params[0].second.grad().assign(g.begin(), g.end());
                oracle_state.t += 1;
                if (kind == "adamw") {
                    adamw_step(params, state, ah, lr);
                    oracle_adam(w_oracle, g, oracle_state, ah, lr);
                } else if (kind == "adamw_rms") {
                    adamw_rms_step(params, state, ah, lr);
                    oracle_adam(w_oracle, g, oracle_state, ah, lr * std::max(ah.rms_eps, scalar_rms(w_oracle)));
                } else {
                    adafactor_step(params, state, fh, lr);
                    oracle_adafactor(w_oracle, g, r, cols, oracle_state, fh, lr);
                }
                for (std::int64_t i = 0; i < n; ++i)
                    worst = std::max(worst, std::abs(params[0].second.values()[i] - w_oracle[i]));
            }
        }
    }

    // factored second moment reconstructs rank-1 squared gradients exactly
    double worst_rank1 = 0;
    for (int c = 0; c < 20; ++c) {
        const std::int64_t r = 2 + static_cast<std::int64_t>(rng.below(5));
        const std::int64_t cols = 2 + static_cast<std::int64_t>(rng.below(5));
        std::vector<double> uvec(r), vvec(cols);
        for (auto& x : uvec) x = 0.5 + rng.uniform();
        for (auto& x : vvec) x = 0.5 + rng.uniform();
        std::vector<double> g(r * cols);
        for (std::int64_t i = 0; i < r; ++i)
            for (std::int64_t j = 0; j < cols; ++j) g[i * cols + j] = uvec[i] * vvec[j];

        NamedParams<double> params;
        params.emplace_back("w", Tensor<double>(Shape{r, cols}, std::vector<double>(r * cols, 0.1)));
        params[0].second.grad().assign(g.begin(), g.end());
        OptimizerState<double> state;
        AdafactorHyper fh;
        adafactor_step(params, state, fh, 0.01);

        const auto& slot = state.slots.at("w");
        double rsum = 0;
        for (double x : slot.row) rsum += x;
        for (std::int64_t i = 0; i < r; ++i)
            for (std::int64_t j = 0; j < cols; ++j) {
                const double vhat = slot.row[i] * slot.col[j] / rsum;
                const double expected = g[i * cols + j] * g[i * cols + j] + fh.eps1;
                worst_rank1 = std::max(worst_rank1, std::abs(vhat - expected) / expected);
            }
    }

    std::ostringstream os;
    os << "3x100 scalar-oracle cases, worst parameter deviation " << worst << "; rank-1 factored-moment error "
       << worst_rank1 << " (tolerance 1e-12)";
    detail = os.str();
    return worst < 1e-12 && worst_rank1 < 1e-12;
}

// ---------------------------------------------------------------------------
// criterion 7: central finite differences over every primitive and the full
// model loss (64-bit, h = 1e-5, relative error < 1e-4)
// ---------------------------------------------------------------------------

struct FdHarness {
    double h = 1e-5;
    double worst = 0;
    std::string worst_site;

    void check(const std::string& site, std::vector<Tensor<double>*> inputs,
               const std::function<Tensor<double>(Tape<double>&)>& f) {
        for (auto* t : inputs) {
            t->set_requires_grad(true);
            t->zero_grad();
        }
        Tape<double> tape;
        Tensor<double> loss = f(tape);
        tape.backward(loss);
        for (auto* t : inputs)
            for (std::size_t i = 0; i < t->values().size(); ++i) check_coord(site, *t, i, f);
    }

    /// Spot-checks selected coordinates instead of the full tensor.
    void check_coord(const std::string& site, Tensor<double>& t, std::size_t i,
                     const std::function<Tensor<double>(Tape<double>&)>& f) {
        const double save = t.values()[i];
        t.values()[i] = save + h;
        const double up = eval(f);
        t.values()[i] = save - h;
        const double down = eval(f);
        t.values()[i] = save;
        const double fd = (up - down) / (2 * h);
        const double an = t.has_grad() ? t.grad()[i] : 0.0;
        const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6});
        if (rel > worst) {
            worst = rel;
            worst_site = site;
        }
    }

    static double eval(const std::function<Tensor<double>(Tape<double>&)>& f) {
        Tape<double> tape;
        tape.set_recording(false);
        return f(tape).item();
    }
};

bool criterion_finite_differences(std::string& detail) {
    FdHarness fd;
    Rng rng(606);
    const auto randu = [&](Shape s) {
        std::int64_t n = 1;
        for (auto d : s) n *= d;
        std::vector<double> v(n);
        for (auto& x : v) x = rng.normal();
        return Tensor<double>(std::move(s), std::move(v));
    };
    /// Fixed projection makes any tensor-valued op a scalar loss.
    const auto project = [&](Tape<double>& tape, const Tensor<double>& out, const Tensor<double>& w) {
        return sum(tape, multiply(tape, out, w));
    };

    {
        Tensor<double> a = randu({2, 3}), b = randu({2, 3}), w = randu({2, 3});
        fd.check("add", {&a, &b}, [&](Tape<double>& t) { return project(t, add(t, a, b), w); });
        fd.check("multiply", {&a, &b}, [&](Tape<double>& t) { return project(t, multiply(t, a, b), w); });
        fd.check("scale", {&a}, [&](Tape<double>& t) { return project(t, scale(t, a, 1.7), w); });
        fd.check("sum", {&a}, [&](Tape<double>& t) { return sum(t, a); });
        fd.check("gelu", {&a}, [&](Tape<double>& t) { return project(t, gelu(t, a), w); });
        fd.check("sigmoid", {&a}, [&](Tape<double>& t) { return project(t, sigmoid(t, a), w); });
        fd.check("softmax", {&a}, [&](Tape<double>& t) { return project(t, softmax(t, a), w); });
        fd.check("reshape", {&a}, [&](Tape<double>& t) { return project(t, reshape(t, a, {3, 2}), reshape(t, w, {3, 2})); });
    }
    {
        Tensor<double> a = randu({2, 3}), b = randu({3, 4}), w = randu({2, 4});
        fd.check("matmul", {&a, &b}, [&](Tape<double>& t) { return project(t, matmul(t, a, b), w); });
    }
    {
        Tensor<double> x = randu({2, 3}), w = randu({3, 2});
        fd.check("transpose", {&x}, [&](Tape<double>& t) { return project(t, transpose(t, x, {1, 0}), w); });
    }
    {
        Tensor<double> a = randu({2, 2}), b = randu({2, 3}), w = randu({2, 5});
        fd.check("concatenate", {&a, &b},
                 [&](Tape<double>& t) { return project(t, concatenate(t, {a, b}, 1), w); });
    }
    {
        Tensor<double> x = randu({2, 3}), w = randu({2, 3});
        const std::vector<std::uint8_t> mask = {1, 0, 1, 0, 1, 1};
        fd.check("masked_fill", {&x},
                 [&](Tape<double>& t) { return project(t, masked_fill(t, x, mask, -2.5), w); });
    }
    {
        Tensor<double> table = randu({5, 3}), w = randu({4, 3});
        const std::vector<std::int32_t> ids = {0, 3, 3, 1};
        fd.check("embedding_gather", {&table},
                 [&](Tape<double>& t) { return project(t, embedding_gather(t, table, ids), w); });
    }
    {
        Tensor<double> x = randu({2, 3}), gain = randu({3}), w = randu({2, 3});
        fd.check("rms_norm", {&x, &gain},
                 [&](Tape<double>& t) { return project(t, rms_norm(t, x, gain, 1e-6), w); });
    }
    {
        Tensor<double> x = randu({2, 3}), w = randu({2, 3});
        fd.check("dropout", {&x}, [&](Tape<double>& t) {
            Rng fixed(999);  // identical keep mask on every evaluation
            return project(t, dropout(t, x, 0.3, fixed), w);
        });
    }
    {
        Tensor<double> logits = randu({4, 5});
        const std::vector<std::int32_t> targets = {1, kIgnoreLabel, 3, 0};
        fd.check("softmax_cross_entropy", {&logits},
                 [&](Tape<double>& t) { return softmax_cross_entropy(t, logits, targets, kIgnoreLabel); });
    }

    // full model loss: three sampled coordinates per parameter tensor
    {
        const Vocab vocab = Vocab::byte_level(384);
        const auto [raw, target] = compute_span_lengths(16, 0.15, 3.0);
        (void)target;
        const std::vector<std::string> docs(
            2, "finite differences need a short but genuine batch of corrupted text to chew on");
        TokenStream chunks(docs, vocab, raw);
        const ExampleStream stream(std::move(chunks), make_corruption_config(vocab, 16), 3);
        const std::vector<Example> examples{stream.train_example(0), stream.train_example(1)};
        const Batch batch = make_batch(examples, Vocab::kPad, Vocab::kStart);

        Model<double> model(ModelConfig::nano());
        Rng init(17);
        model.init_params(init);
        const auto loss_fn = [&](Tape<double>& t) { return model.forward_loss(t, batch, nullptr); };

        for (auto& [name, w] : model.named_params()) w.zero_grad();
        Tape<double> tape;
        Tensor<double> loss = model.forward_loss(tape, batch, nullptr);
        tape.backward(loss);
        Rng pick(29);
        for (auto& [name, w] : model.named_params())
            for (int k = 0; k < 3; ++k)
                fd.check_coord("model/" + name, w, static_cast<std::size_t>(pick.below(w.values().size())),
                               loss_fn);
    }

    std::ostringstream os;
    os << "worst relative error " << fd.worst << " at " << fd.worst_site << " (tolerance 1e-4, h 1e-5)";
    detail = os.str();
    return fd.worst < 1e-4;
}

// ---------------------------------------------------------------------------
// criterion 8: gradient accumulation equals the unsplit batch
// ---------------------------------------------------------------------------

bool criterion_accumulation(std::string& detail) {
    const Vocab vocab = Vocab::byte_level(384);
    const auto [raw, target] = compute_span_lengths(24, 0.15, 3.0);
    (void)target;
    const std::vector<std::string> docs(
        3, "gradient accumulation must reproduce the fused batch even when token counts differ");
    TokenStream chunks(docs, vocab, raw);
    const ExampleStream stream(std::move(chunks), make_corruption_config(vocab, 24), 8);
    std::vector<Example> examples;
    for (std::int64_t i = 0; i < 4; ++i) examples.push_back(stream.train_example(i));

    Model<double> model(ModelConfig::nano());
    Rng init(21);
    model.init_params(init);

    const auto grads_for = [&](const std::vector<std::int64_t>& sizes) {
        std::vector<Batch> micros;
        std::size_t at = 0;
        for (std::int64_t m : sizes) {
            const std::vector<Example> part(examples.begin() + at, examples.begin() + at + m);
            micros.push_back(make_batch(part, Vocab::kPad, Vocab::kStart));
            at += static_cast<std::size_t>(m);
        }
        accumulate_gradients(model, micros, nullptr);
        std::vector<std::vector<double>> g;
        for (auto& [name, w] : model.named_params()) g.push_back(w.grad());
        return g;
    };

    const auto whole = grads_for({4});
    double worst = 0;
    for (const auto& sizes : {std::vector<std::int64_t>{2, 2}, std::vector<std::int64_t>{3, 1}}) {
        const auto parts = grads_for(sizes);
        for (std::size_t p = 0; p < whole.size(); ++p)
            for (std::size_t i = 0; i < whole[p].size(); ++i)
                worst = std::max(worst, std::abs(whole[p][i] - parts[p][i]));
    }
    std::ostringstream os;
    os << "2+2 and 3+1 splits, worst gradient deviation " << worst << " (tolerance 1e-10, 64-bit)";
    detail = os.str();
    return worst < 1e-10;
}

// ---------------------------------------------------------------------------
// criterion 9: schedule identities
// ---------------------------------------------------------------------------

bool criterion_schedules(std::string& detail) {
    bool ok = true;
    std::ostringstream os;

    ScheduleSpec isr;
    isr.kind = ScheduleKind::isr;
    isr.base_lr = 1.0;
    isr.warmup_steps = 10000;
    isr.total_steps = 65536;
    const double at_horizon = schedule_lr(65536, isr);
    ok = ok && at_horizon == 1.0 / 256.0;
    ok = ok && schedule_lr(9999, isr) == schedule_lr(10000, isr);  // clamp below warmup

    ScheduleSpec cos;
    cos.kind = ScheduleKind::cosine;
    cos.base_lr = 0.37;
    cos.final_lr = 0.01;
    cos.warmup_steps = 100;
    cos.total_steps = 2100;
    const double peak_err = std::abs(schedule_lr(100, cos) - 0.37);
    const double final_err = std::abs(schedule_lr(2100, cos) - 0.01);
    const double mid_err = std::abs(schedule_lr(1100, cos) - (0.37 + 0.01) / 2);
    ok = ok && peak_err < 1e-12 && final_err < 1e-12 && mid_err < 1e-12;

    double ramp_err = 0;  // linear warmup hits peak exactly where cosine takes over
    for (std::int64_t k = 0; k <= 100; ++k)
        ramp_err = std::max(ramp_err, std::abs(schedule_lr(k, cos) - 0.37 * static_cast<double>(k) / 100.0));
    ok = ok && ramp_err < 1e-12;

    os << "inverse-sqrt horizon lr " << at_horizon << " == 1/256; cosine peak/final/midpoint errors " << peak_err
       << "/" << final_err << "/" << mid_err << "; warmup ramp error " << ramp_err << " (tolerance 1e-12)";
    detail = os.str();
    return ok;
}

// ---------------------------------------------------------------------------
// criteria 10-11: reproducibility and divergence surfacing
// ---------------------------------------------------------------------------

RunConfig repro_config() {
    RunConfig cfg;  // nano model
    cfg.data.corpus = corpus_path();
    cfg.data.input_length = 64;
    cfg.data.heldout_chunks = 0;
    cfg.optim.kind = "adamw_rms";
    cfg.schedule.kind = "constant";
    cfg.schedule.base_lr = 1e-3;
    cfg.schedule.warmup_steps = 0;
    cfg.train.total_steps = 12;
    cfg.train.micro_batch_size = 2;
    cfg.train.grad_accum_steps = 1;
    cfg.train.eval_interval = 0;
    cfg.train.checkpoint_interval = 0;
    cfg.train.seed = 33;
    return cfg;
}

bool criterion_reproducibility(std::string& detail) {
    const double t0 = now_s();
    const RunConfig cfg = repro_config();

    const TrainResult a = pretrain(cfg, (g_work / "repro-a").string());
    const TrainResult b = pretrain(cfg, (g_work / "repro-b").string());
    const bool same_seed_ok = file_bytes(a.checkpoint_dir + "/params.bin") ==
                              file_bytes(b.checkpoint_dir + "/params.bin");

    RunConfig half = cfg;
    half.train.total_steps = 6;
    const TrainResult first = pretrain(half, (g_work / "repro-half").string());
    PretrainOptions opts;
    opts.resume_from = first.checkpoint_dir;
    const TrainResult resumed = pretrain(cfg, (g_work / "repro-resume").string(), opts);
    const bool resume_ok = file_bytes(a.checkpoint_dir + "/params.bin") ==
                               file_bytes(resumed.checkpoint_dir + "/params.bin") &&
                           file_bytes(a.checkpoint_dir + "/optim.bin") ==
                               file_bytes(resumed.checkpoint_dir + "/optim.bin");
    for (const char* d : {"repro-a", "repro-b", "repro-half", "repro-resume"}) fs::remove_all(g_work / d);

    std::ostringstream os;
    os << "same-seed runs byte-identical: " << (same_seed_ok ? "yes" : "NO")
       << "; 6+6-step resumed run matches 12 straight: " << (resume_ok ? "yes" : "NO") << " ("
       << static_cast<int>(now_s() - t0) << "s)";
    detail = os.str();
    return same_seed_ok && resume_ok;
}

bool criterion_divergence(std::string& detail) {
    const fs::path run = g_work / "divergence";
    PretrainOptions opts;
    opts.inject_nan_at_step = 2;
    const TrainResult res = pretrain(repro_config(), run.string(), opts);

    const bool flagged = res.diverged && res.steps_completed == 2;
    const bool crash_saved = fs::exists(fs::path(res.checkpoint_dir) / "params.bin") &&
                             res.checkpoint_dir.find("crash") != std::string::npos;
    const auto rows = MetricsCsv::read(res.metrics_path);
    const bool row_flagged = !rows.empty() && rows.back().split == "diverged";
    fs::remove_all(run);

    std::ostringstream os;
    os << "non-finite gradient at step 3 stopped the run: flagged row " << (row_flagged ? "yes" : "NO")
       << ", crash checkpoint " << (crash_saved ? "yes" : "NO") << ", no further steps "
       << (flagged ? "yes" : "NO");
    detail = os.str();
    return flagged && crash_saved && row_flagged;
}

// ---------------------------------------------------------------------------
// criterion 12: reversal fine-tune plus an exact LCS oracle
// ---------------------------------------------------------------------------

double rouge_oracle(const std::vector<int>& cand, const std::vector<int>& ref) {
    const std::size_t m = cand.size(), n = ref.size();
    if (m == 0 || n == 0) return 0.0;
    std::vector<std::vector<std::size_t>> dp(m + 1, std::vector<std::size_t>(n + 1, 0));
    for (std::size_t i = 1; i <= m; ++i)
        for (std::size_t j = 1; j <= n; ++j)
            dp[i][j] = cand[i - 1] == ref[j - 1] ? dp[i - 1][j - 1] + 1 : std::max(dp[i - 1][j], dp[i][j - 1]);
    const auto lcs = dp[m][n];
    if (lcs == 0) return 0.0;
    const double p = static_cast<double>(lcs) / static_cast<double>(m);
    const double r = static_cast<double>(lcs) / static_cast<double>(n);
    return 2.0 * p * r / (p + r);
}

bool criterion_finetune(std::string& detail) {
    Rng rng(512);
    int oracle_mismatches = 0;
    for (int c = 0; c < 100; ++c) {
        std::vector<int> a(rng.below(13)), b(rng.below(13));
        for (auto& x : a) x = static_cast<int>(rng.below(5));
        for (auto& x : b) x = static_cast<int>(rng.below(5));
        if (rouge_l(a, b) != rouge_oracle(a, b)) ++oracle_mismatches;
    }

    RunConfig init_cfg = repro_config();
    init_cfg.train.total_steps = 0;
    const TrainResult init = pretrain(init_cfg, (g_work / "reversal-init").string());

    RunConfig cfg = repro_config();
    cfg.data.finetune_input_length = 12;
    cfg.data.finetune_target_length = 12;
    cfg.schedule.base_lr = 3e-3;
    cfg.train.total_steps = 800;
    cfg.train.micro_batch_size = 8;
    cfg.train.eval_interval = 400;
    const double t0 = now_s();
    const TrainResult res = finetune(cfg, init.checkpoint_dir, (fs::path(g_assets) / "reversal.tsv").string(),
                                     (g_work / "reversal-ft").string());
    const double dt = now_s() - t0;
    fs::remove_all(g_work / "reversal-init");
    fs::remove_all(g_work / "reversal-ft");

    std::ostringstream os;
    os << "training-set RougeL " << res.final_rouge_train << " after " << res.steps_completed
       << " steps (bar 0.9 within 2000, " << static_cast<int>(dt) << "s); LCS oracle mismatches "
       << oracle_mismatches << "/100";
    detail = os.str();
    return oracle_mismatches == 0 && !res.diverged && res.steps_completed <= 2000 &&
           res.final_rouge_train >= 0.9;
}

// ---------------------------------------------------------------------------

struct Criterion {
    const char* name;
    bool (*run)(std::string&);
};

int run_all() {
    const Criterion criteria[] = {
        {"parameter-count", criterion_param_count},
        {"span-geometry", criterion_span_geometry},
        {"masking-rate", criterion_masking_rate},
        {"optimizer-schedule-grid", criterion_grid},
        {"rms-scaling-equivalence", criterion_rms_equivalence},
        {"optimizer-oracles", criterion_optimizer_oracles},
        {"gradient-finite-difference", criterion_finite_differences},
        {"accumulation-equivalence", criterion_accumulation},
        {"schedule-exactness", criterion_schedules},
        {"reproducibility", criterion_reproducibility},
        {"divergence-surfacing", criterion_divergence},
        {"finetune-reversal", criterion_finetune},
    };

    if (const char* env = std::getenv("DESKT5_ASSETS"); env != nullptr && *env != '\0') g_assets = env;
    g_work = fs::temp_directory_path() / "deskt5-acceptance";
    fs::remove_all(g_work);
    fs::create_directories(g_work);

    std::set<int> selected;
    if (const char* env = std::getenv("DESKT5_ACCEPT_ONLY"); env != nullptr && *env != '\0') {
        std::stringstream ss(env);
        std::string item;
        while (std::getline(ss, item, ',')) selected.insert(std::atoi(item.c_str()));
        std::printf("note: DESKT5_ACCEPT_ONLY is set; this is a partial gate\n");
    }

    int failures = 0, skipped = 0;
    for (int i = 0; i < 12; ++i) {
        const Criterion& c = criteria[i];
        if (!selected.empty() && selected.count(i + 1) == 0) {
            std::printf("SKIP %2d %-28s deselected\n", i + 1, c.name);
            ++skipped;
            continue;
        }
        std::string info;
        bool ok = false;
        try {
            ok = c.run(info);
        } catch (const std::exception& e) {
            info = std::string("exception: ") + e.what();
        }
        std::printf("%s %2d %-28s %s\n", ok ? "PASS" : "FAIL", i + 1, c.name, info.c_str());
        std::fflush(stdout);
        failures += !ok;
    }

    fs::remove_all(g_work);
    if (skipped > 0)
        std::printf("acceptance (partial): %d run, %d failed, %d skipped\n", 12 - skipped, failures, skipped);
    else
        std::printf("acceptance: %d/12 criteria passed\n", 12 - failures);
    return failures == 0 ? 0 : 1;
}

}  // namespace
}  // namespace deskt5

int main() { return deskt5::run_all(); }
