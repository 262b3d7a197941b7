// Copyright (c) 2026, the deskt5 authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "deskt5/error.hpp"
#include "deskt5/model.hpp"
#include "deskt5/optim.hpp"
#include "deskt5/schedule.hpp"

namespace deskt5 {

/// Every knob a run reads, in five sections. Field overrides layer on top of
/// defaults: config file first, then --set flags in order, last one wins.
/// Assigning model.preset resets the whole model section to that preset.
struct RunConfig {
    std::string model_preset = "nano";
    ModelConfig model = ModelConfig::nano();

    struct Data {
        std::string corpus;                       // text file or directory of *.txt
        std::string vocab_file;                   // empty selects the byte-level vocabulary
        std::int64_t input_length = 512;          // pretraining encoder length, EOS included
        double noise_density = 0.15;
        double mean_span_length = 3.0;
        std::int64_t heldout_chunks = 8;          // reserved from the stream tail
        bool fixed_corruption = false;            // corruption follows the chunk, not the epoch
        std::int64_t finetune_input_length = 64;  // supervised pairs pad/truncate to these
        std::int64_t finetune_target_length = 64;
    } data;

    struct Optim {
        std::string kind = "adamw_rms";  // adamw | adamw_rms | adafactor
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        double weight_decay = 0.0;
        double rms_eps = 1e-3;
        double ada_eps1 = 1e-30;
        double ada_eps2 = 1e-3;
        double clip_threshold = 1.0;
        double beta2_exponent = 0.8;
        double clip_norm = 1.0;  // global gradient norm ceiling, 0 disables
    } optim;

    struct Schedule {
        std::string kind = "isr";  // isr | cosine | constant
        double base_lr = 1e-2;     // ISR numerator; cosine/constant peak
        double final_lr = -1.0;    // cosine floor; negative selects base_lr/20
        std::int64_t warmup_steps = 10000;
    } schedule;

    struct Train {
        std::int64_t total_steps = 65536;
        std::int64_t micro_batch_size = 8;
        std::int64_t grad_accum_steps = 16;  // effective batch 128 by default
        std::int64_t eval_interval = 500;
        std::int64_t checkpoint_interval = 2000;
        std::int64_t eval_batches = 8;
        std::uint64_t seed = 0;
        std::string precision = "f32";  // f32 | f64
        std::int64_t queue_capacity = 4;
    } train;

    OptimizerKind optimizer_kind() const { return optimizer_kind_from_string(optim.kind); }

    AdamHyper adam_hyper() const {
        AdamHyper h;
        h.beta1 = optim.beta1;
        h.beta2 = optim.beta2;
        h.eps = optim.eps;
        h.weight_decay = optim.weight_decay;
        h.rms_eps = optim.rms_eps;
        return h;
    }

    AdafactorHyper adafactor_hyper() const {
        AdafactorHyper h;
        h.eps1 = optim.ada_eps1;
        h.eps2 = optim.ada_eps2;
        h.clip_threshold = optim.clip_threshold;
        h.beta2_exponent = optim.beta2_exponent;
        return h;
    }

    ScheduleSpec schedule_spec() const {
        ScheduleSpec s;
        s.kind = schedule_kind_from_string(schedule.kind);
        s.base_lr = schedule.base_lr;
        s.final_lr = schedule.final_lr < 0 ? schedule.base_lr / 20.0 : schedule.final_lr;
        s.warmup_steps = schedule.warmup_steps;
        s.total_steps = train.total_steps;
        return s;
    }

    void validate() const {
        model.validate();
        optimizer_kind();
        adam_hyper().validate();
        adafactor_hyper().validate();
        schedule_spec().validate();
        if (optim.clip_norm < 0) throw ConfigError("optim.clip_norm must be >= 0 (0 disables clipping)");
        if (data.input_length < 3) throw ConfigError("data.input_length must be >= 3");
        if (data.noise_density <= 0 || data.noise_density >= 1)
            throw ConfigError("data.noise_density must lie in (0, 1)");
        if (data.mean_span_length < 1) throw ConfigError("data.mean_span_length must be >= 1");
        if (data.heldout_chunks < 0) throw ConfigError("data.heldout_chunks must be >= 0");
        if (data.finetune_input_length < 2 || data.finetune_target_length < 2)
            throw ConfigError("fine-tune lengths must be >= 2 (content plus EOS)");
        if (train.total_steps < 0) throw ConfigError("train.total_steps must be >= 0");
        if (train.micro_batch_size < 1) throw ConfigError("train.micro_batch_size must be >= 1");
        if (train.grad_accum_steps < 1) throw ConfigError("train.grad_accum_steps must be >= 1");
        if (train.eval_interval < 0 || train.checkpoint_interval < 0)
            throw ConfigError("intervals must be >= 0 (0 disables periodic runs)");
        if (train.eval_batches < 1) throw ConfigError("train.eval_batches must be >= 1");
        if (train.queue_capacity < 1) throw ConfigError("train.queue_capacity must be >= 1");
        if (train.precision != "f32" && train.precision != "f64")
            throw ConfigError("train.precision must be f32 or f64, got '" + train.precision + "'");
    }
};

namespace detail {

struct ConfigField {
    std::string key;        // "optim.beta1"
    std::string type_name;  // for type-mismatch messages
    std::function<void(RunConfig&, const std::string&)> set_text;
    std::function<void(RunConfig&, const nlohmann::json&)> set_json;
    std::function<nlohmann::json(RunConfig&)> get_json;
};

inline ConfigError type_error(const std::string& key, const std::string& type_name, const std::string& got) {
    return ConfigError("config key '" + key + "' expects " + type_name + ", got '" + got + "'");
}

template <class T>
T parse_number(const std::string& key, const std::string& type_name, const std::string& text) {
    T value{};
    const char* begin = text.data();
    const char* end = begin + text.size();
    const auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc{} || ptr != end) throw type_error(key, type_name, text);
    return value;
}

inline const std::vector<ConfigField>& config_fields() {
    static const std::vector<ConfigField> fields = [] {
        std::vector<ConfigField> f;

        const auto add_double = [&f](const std::string& key, auto ref) {
            f.push_back({key, "a number",
                         [key, ref](RunConfig& c, const std::string& s) {
                             ref(c) = parse_number<double>(key, "a number", s);
                         },
                         [key, ref](RunConfig& c, const nlohmann::json& j) {
                             if (!j.is_number()) throw type_error(key, "a number", j.dump());
                             ref(c) = j.get<double>();
                         },
                         [ref](RunConfig& c) { return nlohmann::json(ref(c)); }});
        };
        const auto add_int = [&f](const std::string& key, auto ref) {
            f.push_back({key, "an integer",
                         [key, ref](RunConfig& c, const std::string& s) {
                             ref(c) = parse_number<std::int64_t>(key, "an integer", s);
                         },
                         [key, ref](RunConfig& c, const nlohmann::json& j) {
                             if (!j.is_number_integer()) throw type_error(key, "an integer", j.dump());
                             ref(c) = j.get<std::int64_t>();
                         },
                         [ref](RunConfig& c) { return nlohmann::json(ref(c)); }});
        };
        const auto add_uint = [&f](const std::string& key, auto ref) {
            f.push_back({key, "a non-negative integer",
                         [key, ref](RunConfig& c, const std::string& s) {
                             ref(c) = parse_number<std::uint64_t>(key, "a non-negative integer", s);
                         },
                         [key, ref](RunConfig& c, const nlohmann::json& j) {
                             if (!j.is_number_integer() || (!j.is_number_unsigned() && j.get<std::int64_t>() < 0))
                                 throw type_error(key, "a non-negative integer", j.dump());
                             ref(c) = j.get<std::uint64_t>();
                         },
                         [ref](RunConfig& c) { return nlohmann::json(ref(c)); }});
        };
        const auto add_bool = [&f](const std::string& key, auto ref) {
            f.push_back({key, "a boolean",
                         [key, ref](RunConfig& c, const std::string& s) {
                             if (s == "true" || s == "1")
                                 ref(c) = true;
                             else if (s == "false" || s == "0")
                                 ref(c) = false;
                             else
                                 throw type_error(key, "a boolean", s);
                         },
                         [key, ref](RunConfig& c, const nlohmann::json& j) {
                             if (!j.is_boolean()) throw type_error(key, "a boolean", j.dump());
                             ref(c) = j.get<bool>();
                         },
                         [ref](RunConfig& c) { return nlohmann::json(ref(c)); }});
        };
        const auto add_string = [&f](const std::string& key, auto ref) {
            f.push_back({key, "a string",
                         [ref](RunConfig& c, const std::string& s) { ref(c) = s; },
                         [key, ref](RunConfig& c, const nlohmann::json& j) {
                             if (!j.is_string()) throw type_error(key, "a string", j.dump());
                             ref(c) = j.get<std::string>();
                         },
                         [ref](RunConfig& c) { return nlohmann::json(ref(c)); }});
        };

        // model.preset resets the whole section, so it must apply before any
        // model field override; apply_config_json honours that ordering.
        f.push_back({"model.preset", "a preset name (nano, small, base)",
                     [](RunConfig& c, const std::string& s) {
                         c.model = preset(s);
                         c.model_preset = s;
                     },
                     [](RunConfig& c, const nlohmann::json& j) {
                         if (!j.is_string())
                             throw type_error("model.preset", "a preset name (nano, small, base)", j.dump());
                         c.model = preset(j.get<std::string>());
                         c.model_preset = j.get<std::string>();
                     },
                     [](RunConfig& c) { return nlohmann::json(c.model_preset); }});
        add_int("model.d_model", [](RunConfig& c) -> std::int64_t& { return c.model.d_model; });
        add_int("model.d_ff", [](RunConfig& c) -> std::int64_t& { return c.model.d_ff; });
        add_int("model.num_layers", [](RunConfig& c) -> std::int64_t& { return c.model.num_layers; });
        add_int("model.num_decoder_layers", [](RunConfig& c) -> std::int64_t& { return c.model.num_decoder_layers; });
        add_int("model.num_heads", [](RunConfig& c) -> std::int64_t& { return c.model.num_heads; });
        add_int("model.d_kv", [](RunConfig& c) -> std::int64_t& { return c.model.d_kv; });
        add_int("model.vocab_size", [](RunConfig& c) -> std::int64_t& { return c.model.vocab_size; });
        add_int("model.rel_buckets", [](RunConfig& c) -> std::int64_t& { return c.model.rel_buckets; });
        add_int("model.rel_max_distance", [](RunConfig& c) -> std::int64_t& { return c.model.rel_max_distance; });
        add_bool("model.tie_embeddings", [](RunConfig& c) -> bool& { return c.model.tie_embeddings; });
        add_double("model.dropout", [](RunConfig& c) -> double& { return c.model.dropout; });
        add_double("model.norm_eps", [](RunConfig& c) -> double& { return c.model.norm_eps; });

        add_string("data.corpus", [](RunConfig& c) -> std::string& { return c.data.corpus; });
        add_string("data.vocab_file", [](RunConfig& c) -> std::string& { return c.data.vocab_file; });
        add_int("data.input_length", [](RunConfig& c) -> std::int64_t& { return c.data.input_length; });
        add_double("data.noise_density", [](RunConfig& c) -> double& { return c.data.noise_density; });
        add_double("data.mean_span_length", [](RunConfig& c) -> double& { return c.data.mean_span_length; });
        add_int("data.heldout_chunks", [](RunConfig& c) -> std::int64_t& { return c.data.heldout_chunks; });
        add_bool("data.fixed_corruption", [](RunConfig& c) -> bool& { return c.data.fixed_corruption; });
        add_int("data.finetune_input_length",
                [](RunConfig& c) -> std::int64_t& { return c.data.finetune_input_length; });
        add_int("data.finetune_target_length",
                [](RunConfig& c) -> std::int64_t& { return c.data.finetune_target_length; });

        add_string("optim.kind", [](RunConfig& c) -> std::string& { return c.optim.kind; });
        add_double("optim.beta1", [](RunConfig& c) -> double& { return c.optim.beta1; });
        add_double("optim.beta2", [](RunConfig& c) -> double& { return c.optim.beta2; });
        add_double("optim.eps", [](RunConfig& c) -> double& { return c.optim.eps; });
        add_double("optim.weight_decay", [](RunConfig& c) -> double& { return c.optim.weight_decay; });
        add_double("optim.rms_eps", [](RunConfig& c) -> double& { return c.optim.rms_eps; });
        add_double("optim.ada_eps1", [](RunConfig& c) -> double& { return c.optim.ada_eps1; });
        add_double("optim.ada_eps2", [](RunConfig& c) -> double& { return c.optim.ada_eps2; });
        add_double("optim.clip_threshold", [](RunConfig& c) -> double& { return c.optim.clip_threshold; });
        add_double("optim.beta2_exponent", [](RunConfig& c) -> double& { return c.optim.beta2_exponent; });
        add_double("optim.clip_norm", [](RunConfig& c) -> double& { return c.optim.clip_norm; });

        add_string("schedule.kind", [](RunConfig& c) -> std::string& { return c.schedule.kind; });
        add_double("schedule.base_lr", [](RunConfig& c) -> double& { return c.schedule.base_lr; });
        add_double("schedule.final_lr", [](RunConfig& c) -> double& { return c.schedule.final_lr; });
        add_int("schedule.warmup_steps", [](RunConfig& c) -> std::int64_t& { return c.schedule.warmup_steps; });

        add_int("train.total_steps", [](RunConfig& c) -> std::int64_t& { return c.train.total_steps; });
        add_int("train.micro_batch_size", [](RunConfig& c) -> std::int64_t& { return c.train.micro_batch_size; });
        add_int("train.grad_accum_steps", [](RunConfig& c) -> std::int64_t& { return c.train.grad_accum_steps; });
        add_int("train.eval_interval", [](RunConfig& c) -> std::int64_t& { return c.train.eval_interval; });
        add_int("train.checkpoint_interval",
                [](RunConfig& c) -> std::int64_t& { return c.train.checkpoint_interval; });
        add_int("train.eval_batches", [](RunConfig& c) -> std::int64_t& { return c.train.eval_batches; });
        add_uint("train.seed", [](RunConfig& c) -> std::uint64_t& { return c.train.seed; });
        add_string("train.precision", [](RunConfig& c) -> std::string& { return c.train.precision; });
        add_int("train.queue_capacity", [](RunConfig& c) -> std::int64_t& { return c.train.queue_capacity; });
        return f;
    }();
    return fields;
}

inline const ConfigField* find_config_field(const std::string& key) {
    for (const auto& f : config_fields())
        if (f.key == key) return &f;
    return nullptr;
}

inline std::string section_of(const std::string& key) {
    const auto dot = key.find('.');
    return dot == std::string::npos ? key : key.substr(0, dot);
}

inline ConfigError unknown_key_error(const std::string& key) {
    const std::string section = section_of(key);
    std::string valid;
    for (const auto& f : config_fields()) {
        if (section_of(f.key) != section) continue;
        if (!valid.empty()) valid += ", ";
        valid += f.key;
    }
    if (valid.empty()) {
        return ConfigError("unknown config section in '" + key +
                           "'; valid sections: model, data, optim, schedule, train");
    }
    return ConfigError("unknown config key '" + key + "'; valid keys: " + valid);
}

}  // namespace detail

inline const std::vector<std::string>& config_key_list() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        for (const auto& f : detail::config_fields()) k.push_back(f.key);
        return k;
    }();
    return keys;
}

/// Applies one dotted override of the form section.key=value.
inline void apply_override(RunConfig& cfg, const std::string& spec) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos)
        throw ConfigError("override '" + spec + "' must look like section.key=value");
    const std::string key = spec.substr(0, eq);
    const std::string value = spec.substr(eq + 1);
    const auto* field = detail::find_config_field(key);
    if (!field) throw detail::unknown_key_error(key);
    field->set_text(cfg, value);
}

/// Applies a nested config object. Sections may be partial; model.preset in a
/// section applies before that section's field overrides.
inline void apply_config_json(RunConfig& cfg, const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config root must be an object of sections");
    for (const auto& [section, body] : j.items()) {
        if (!body.is_object())
            throw ConfigError("config section '" + section + "' must be an object");
        if (section == "model" && body.contains("preset"))
            detail::find_config_field("model.preset")->set_json(cfg, body.at("preset"));
        for (const auto& [name, value] : body.items()) {
            if (section == "model" && name == "preset") continue;
            const std::string key = section + "." + name;
            const auto* field = detail::find_config_field(key);
            if (!field) throw detail::unknown_key_error(key);
            field->set_json(cfg, value);
        }
    }
}

inline void apply_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    apply_config_json(cfg, j);
}

/// Full snapshot of every field. Parsing it back reproduces the config.
inline nlohmann::json config_to_json(const RunConfig& cfg) {
    RunConfig copy = cfg;  // field accessors hand out mutable references
    nlohmann::json j;
    for (const auto& f : detail::config_fields()) {
        const auto dot = f.key.find('.');
        j[f.key.substr(0, dot)][f.key.substr(dot + 1)] = f.get_json(copy);
    }
    return j;
}

inline RunConfig config_from_json(const nlohmann::json& j) {
    RunConfig cfg;
    apply_config_json(cfg, j);
    return cfg;
}

}  // namespace deskt5
