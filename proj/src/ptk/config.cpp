// SPDX-License-Identifier: Apache-2.0

#include "ptk/config.hpp"

#include "ptk/document.hpp"
#include "ptk/error.hpp"
#include "ptk/tokenize.hpp"

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <fstream>
#include <limits>
#include <set>

namespace ptk::config {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

class Checker {
public:
    explicit Checker(std::vector<std::string>& errors) : errors_(errors) {}

    void fail(const std::string& path, const std::string& msg) { errors_.push_back(path + ": " + msg); }

    void reject_unknown(const json& obj, const std::string& path, const std::set<std::string>& allowed) {
        for (const auto& [key, _] : obj.items()) {
            if (!allowed.contains(key)) fail(join(path, key), "unknown key");
        }
    }

    template <class T>
    bool uint_field(const json& obj, const std::string& path, const char* key, T& out) {
        if (!obj.contains(key)) return false;
        const auto& v = obj.at(key);
        const auto p = join(path, key);
        if (v.is_number_integer() && v.get<std::int64_t>() < 0) {
            fail(p, "must be a non-negative integer");
        } else if (!v.is_number_unsigned()) {
            fail(p, "must be a non-negative integer");
        } else if (v.get<std::uint64_t>() > std::numeric_limits<T>::max()) {
            fail(p, "value too large");
        } else {
            out = static_cast<T>(v.get<std::uint64_t>());
            return true;
        }
        return false;
    }

    bool real_field(const json& obj, const std::string& path, const char* key, double& out) {
        if (!obj.contains(key)) return false;
        const auto& v = obj.at(key);
        if (!v.is_number()) {
            fail(join(path, key), "must be a number");
            return false;
        }
        out = v.get<double>();
        return true;
    }

    bool bool_field(const json& obj, const std::string& path, const char* key, bool& out) {
        if (!obj.contains(key)) return false;
        const auto& v = obj.at(key);
        if (!v.is_boolean()) {
            fail(join(path, key), "must be true or false");
            return false;
        }
        out = v.get<bool>();
        return true;
    }

    bool string_field(const json& obj, const std::string& path, const char* key, std::string& out) {
        if (!obj.contains(key)) return false;
        const auto& v = obj.at(key);
        if (!v.is_string()) {
            fail(join(path, key), "must be a string");
            return false;
        }
        out = v.get<std::string>();
        return true;
    }

    template <class F>
    void check(const std::string& path, F&& f) {
        try {
            f();
        } catch (const Error& e) {
            fail(path, e.what());
        }
    }

    static std::string join(const std::string& path, const std::string& key) {
        return path.empty() ? key : path + "." + key;
    }

private:
    std::vector<std::string>& errors_;
};

std::string preset_size(std::string_view name) {
    for (std::string_view s : {"tiny", "base", "large"}) {
        if (name == s || name == std::string(s) + "-short") return std::string(name);
    }
    return {};
}

fs::path resolve(const fs::path& base, const std::string& p) {
    const fs::path raw(p);
    return raw.is_absolute() || base.empty() ? raw : base / raw;
}

}  // namespace

EnvLookup process_env() {
    return [](const char* name) -> std::optional<std::string> {
        if (const char* v = std::getenv(name); v != nullptr) return std::string(v);
        return std::nullopt;
    };
}

ParseResult parse_config(std::string_view text, const fs::path& base_dir, const EnvLookup& env) {
    ParseResult res;
    Checker ck(res.errors);
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        res.errors.push_back(std::string("<root>: invalid JSON: ") + e.what());
        return res;
    }
    if (!root.is_object()) {
        ck.fail("<root>", "config must be a JSON object");
        return res;
    }
    ck.reject_unknown(root, "", {"seed", "encoder", "timeline", "optimizer", "masking", "manifest_path", "vocab_path",
                                 "output_dir", "threads"});
    RunConfig cfg;
    ck.uint_field(root, "", "seed", cfg.seed);

    // encoder
    std::string enc_preset = "tiny";
    bool inline_vocab_size = false;
    bool enc_inline = false;
    if (root.contains("encoder")) {
        const auto& e = root.at("encoder");
        if (e.is_string()) {
            enc_preset = e.get<std::string>();
        } else if (e.is_object()) {
            enc_inline = true;
            ck.reject_unknown(e, "encoder",
                              {"preset", "layers", "hidden", "intermediate", "heads", "vocab_size", "max_seq",
                               "global_layer_period", "local_window", "use_rope", "tied_embeddings", "init_std",
                               "norm_eps", "name"});
            ck.string_field(e, "encoder", "preset", enc_preset);
        } else {
            ck.fail("encoder", "must be a preset name or an object");
        }
    }
    bool enc_ok = true;
    try {
        cfg.encoder = encoder::encoder_preset(enc_preset);
    } catch (const Error& ex) {
        ck.fail(enc_inline ? "encoder.preset" : "encoder", ex.what());
        enc_ok = false;
    }
    if (enc_inline && enc_ok) {
        const auto& e = root.at("encoder");
        auto& c = cfg.encoder;
        ck.string_field(e, "encoder", "name", c.name);
        ck.uint_field(e, "encoder", "layers", c.layers);
        ck.uint_field(e, "encoder", "hidden", c.hidden);
        ck.uint_field(e, "encoder", "intermediate", c.intermediate);
        ck.uint_field(e, "encoder", "heads", c.heads);
        inline_vocab_size = ck.uint_field(e, "encoder", "vocab_size", c.vocab_size);
        ck.uint_field(e, "encoder", "max_seq", c.max_seq);
        ck.uint_field(e, "encoder", "global_layer_period", c.global_layer_period);
        ck.uint_field(e, "encoder", "local_window", c.local_window);
        ck.bool_field(e, "encoder", "use_rope", c.use_rope);
        ck.bool_field(e, "encoder", "tied_embeddings", c.tied_embeddings);
        ck.real_field(e, "encoder", "init_std", c.init_std);
        ck.real_field(e, "encoder", "norm_eps", c.norm_eps);
    }

    // timeline
    std::string tl_preset = preset_size(enc_preset).empty() ? "tiny" : preset_size(enc_preset);
    if (root.contains("timeline")) {
        const auto& t = root.at("timeline");
        if (!t.is_object()) {
            ck.fail("timeline", "must be an object");
        } else {
            ck.reject_unknown(t, "timeline",
                              {"preset", "total_steps", "lr_warmup_steps", "batch_warmup_steps", "stable_end_step",
                               "decay_start_step", "stable_lr", "extension_lr", "full_batch_tokens",
                               "initial_batch_tokens", "stable_seq_len", "extension_stage_lengths"});
            ck.string_field(t, "timeline", "preset", tl_preset);
        }
    }
    bool tl_ok = true;
    try {
        cfg.timeline = schedule::timeline_preset(tl_preset);
    } catch (const Error& ex) {
        ck.fail("timeline.preset", ex.what());
        tl_ok = false;
    }
    if (tl_ok && root.contains("timeline") && root.at("timeline").is_object()) {
        const auto& t = root.at("timeline");
        auto& tl = cfg.timeline;
        schedule::Step total = tl.total_steps;
        if (ck.uint_field(t, "timeline", "total_steps", total) && total != tl.total_steps) {
            ck.check("timeline.total_steps", [&] { tl = tl.scaled_to(total); });
        }
        ck.uint_field(t, "timeline", "lr_warmup_steps", tl.lr_warmup_steps);
        ck.uint_field(t, "timeline", "batch_warmup_steps", tl.batch_warmup_steps);
        ck.uint_field(t, "timeline", "stable_end_step", tl.stable_end_step);
        ck.uint_field(t, "timeline", "decay_start_step", tl.decay_start_step);
        ck.real_field(t, "timeline", "stable_lr", tl.stable_lr);
        ck.real_field(t, "timeline", "extension_lr", tl.extension_lr);
        const bool full_set = ck.uint_field(t, "timeline", "full_batch_tokens", tl.full_batch_tokens);
        if (!ck.uint_field(t, "timeline", "initial_batch_tokens", tl.initial_batch_tokens) && full_set) {
            tl.initial_batch_tokens = std::max<std::uint64_t>(1, tl.full_batch_tokens / 100);
        }
        ck.uint_field(t, "timeline", "stable_seq_len", tl.stable_seq_len);
        if (t.contains("extension_stage_lengths")) {
            const auto& a = t.at("extension_stage_lengths");
            if (!a.is_array() || a.size() != schedule::kExtensionStages) {
                ck.fail("timeline.extension_stage_lengths",
                        "must be an array of " + std::to_string(schedule::kExtensionStages) + " integers");
            } else {
                for (std::size_t i = 0; i < a.size(); ++i) {
                    if (!a[i].is_number_unsigned() || a[i].get<std::uint64_t>() > UINT32_MAX) {
                        ck.fail("timeline.extension_stage_lengths[" + std::to_string(i) + "]",
                                "must be a non-negative integer");
                    } else {
                        tl.extension_stage_lengths[i] = a[i].get<std::uint32_t>();
                    }
                }
            }
        }
    }
    if (tl_ok) ck.check("timeline", [&] { cfg.timeline.validate(); });

    // optimizer
    cfg.optimizer = trainer::optimizer_for_preset(enc_preset);
    if (root.contains("optimizer")) {
        const auto& o = root.at("optimizer");
        if (!o.is_object()) {
            ck.fail("optimizer", "must be an object");
        } else {
            ck.reject_unknown(o, "optimizer", {"beta1", "beta2", "epsilon", "weight_decay"});
            ck.real_field(o, "optimizer", "beta1", cfg.optimizer.beta1);
            ck.real_field(o, "optimizer", "beta2", cfg.optimizer.beta2);
            ck.real_field(o, "optimizer", "epsilon", cfg.optimizer.epsilon);
            ck.real_field(o, "optimizer", "weight_decay", cfg.optimizer.weight_decay);
        }
    }
    ck.check("optimizer", [&] { cfg.optimizer.validate(); });

    // masking
    if (root.contains("masking")) {
        const auto& m = root.at("masking");
        if (!m.is_object()) {
            ck.fail("masking", "must be an object");
        } else {
            ck.reject_unknown(m, "masking", {"mask_rate", "split"});
            ck.real_field(m, "masking", "mask_rate", cfg.mask_rate);
            if (m.contains("split")) {
                const auto& s = m.at("split");
                if (!s.is_array() || s.size() != 3 || !s[0].is_number() || !s[1].is_number() || !s[2].is_number()) {
                    ck.fail("masking.split", "must be [mask, random, keep] fractions");
                } else {
                    cfg.mask_frac = s[0].get<double>();
                    cfg.random_frac = s[1].get<double>();
                    cfg.keep_frac = s[2].get<double>();
                }
            }
        }
    }
    {
        trainer::MaskingPolicy probe;
        probe.mask_rate = cfg.mask_rate;
        probe.mask_frac = cfg.mask_frac;
        probe.random_frac = cfg.random_frac;
        probe.keep_frac = cfg.keep_frac;
        probe.vocab_size = 2;  // replacement pool is checked once the vocabulary is known
        ck.check("masking", [&] { probe.validate(); });
        if (cfg.mask_rate <= 0.0) ck.fail("masking.mask_rate", "must be in (0, 1)");
    }

    // paths
    std::string s;
    if (ck.string_field(root, "", "manifest_path", s)) {
        cfg.manifest_path = resolve(base_dir, s);
        if (!fs::is_regular_file(cfg.manifest_path)) {
            ck.fail("manifest_path", "file not found: " + cfg.manifest_path.string());
        }
    } else if (!root.contains("manifest_path")) {
        ck.fail("manifest_path", "missing required field");
    }
    std::optional<std::size_t> tokenizer_size;
    if (ck.string_field(root, "", "vocab_path", s)) {
        cfg.vocab_path = resolve(base_dir, s);
        if (!fs::is_regular_file(cfg.vocab_path)) {
            ck.fail("vocab_path", "file not found: " + cfg.vocab_path.string());
        } else {
            std::ifstream in(cfg.vocab_path);
            ck.check("vocab_path", [&] { tokenizer_size = tokenize::Vocabulary::load(in).size(); });
        }
    } else if (!root.contains("vocab_path")) {
        ck.fail("vocab_path", "missing required field");
    }
    if (ck.string_field(root, "", "output_dir", s)) cfg.output_dir = resolve(base_dir, s);
    ck.uint_field(root, "", "threads", cfg.threads);

    if (auto v = env("PTK_OUTPUT_DIR"); v && !v->empty()) cfg.output_dir = *v;
    if (auto v = env("PTK_THREADS"); v && !v->empty()) {
        try {
            std::size_t used = 0;
            const unsigned long n = std::stoul(*v, &used);
            if (used != v->size() || n == 0 || n > 1024) throw std::invalid_argument("range");
            cfg.threads = static_cast<unsigned>(n);
        } catch (const std::exception&) {
            ck.fail("env.PTK_THREADS", "must be an integer in [1, 1024]");
        }
    }
    if (cfg.threads == 0) ck.fail("threads", "must be at least 1");

    if (enc_ok) {
        if (enc_inline && !inline_vocab_size && tokenizer_size) {
            cfg.encoder.vocab_size = static_cast<std::uint32_t>(tokenize::plan_vocab(*tokenizer_size));
        }
        // the global rotary base switches where context extension starts
        if (tl_ok) cfg.encoder.rope.switch_step = cfg.timeline.stable_end_step;
        ck.check("encoder", [&] { cfg.encoder.validate(); });
        if (tokenizer_size && *tokenizer_size > cfg.encoder.vocab_size) {
            ck.fail("encoder.vocab_size", "smaller than the tokenizer (" + std::to_string(*tokenizer_size) + " ids)");
        }
        if (tl_ok && schedule::seq_len_at(cfg.timeline, cfg.timeline.total_steps) > cfg.encoder.max_seq) {
            ck.fail("encoder.max_seq", "shorter than the timeline's final sequence length");
        }
    }

    if (res.errors.empty()) res.config = std::move(cfg);
    return res;
}

RunConfig load_config(const fs::path& path, const EnvLookup& env) {
    const std::string text = read_file(path);
    auto res = parse_config(text, path.parent_path(), env);
    if (!res.ok()) {
        std::string msg = path.string() + ": " + std::to_string(res.errors.size()) + " config error(s)";
        for (const auto& e : res.errors) msg += "\n  " + e;
        throw ConfigError(msg);
    }
    return std::move(*res.config);
}

std::string to_json(const RunConfig& c) {
    nlohmann::ordered_json j;
    j["seed"] = c.seed;
    j["encoder"] = nlohmann::ordered_json::parse(encoder::config_to_json(c.encoder));
    const auto& t = c.timeline;
    j["timeline"] = {{"total_steps", t.total_steps},
                     {"lr_warmup_steps", t.lr_warmup_steps},
                     {"batch_warmup_steps", t.batch_warmup_steps},
                     {"stable_end_step", t.stable_end_step},
                     {"decay_start_step", t.decay_start_step},
                     {"stable_lr", t.stable_lr},
                     {"extension_lr", t.extension_lr},
                     {"full_batch_tokens", t.full_batch_tokens},
                     {"initial_batch_tokens", t.initial_batch_tokens},
                     {"stable_seq_len", t.stable_seq_len},
                     {"extension_stage_lengths", t.extension_stage_lengths}};
    j["optimizer"] = {{"beta1", c.optimizer.beta1},
                      {"beta2", c.optimizer.beta2},
                      {"epsilon", c.optimizer.epsilon},
                      {"weight_decay", c.optimizer.weight_decay}};
    j["masking"] = {{"mask_rate", c.mask_rate}, {"split", {c.mask_frac, c.random_frac, c.keep_frac}}};
    j["manifest_path"] = c.manifest_path.string();
    j["vocab_path"] = c.vocab_path.string();
    j["output_dir"] = c.output_dir.string();
    j["threads"] = c.threads;
    return j.dump(2);
}

}  // namespace ptk::config
