// SPDX-License-Identifier: Apache-2.0

#include "doctest.h"

#include "ptk/config.hpp"
#include "ptk/error.hpp"

#include <algorithm>

using namespace ptk::config;

namespace {

const std::filesystem::path kConfigs = std::filesystem::path(PTK_SOURCE_DIR) / "configs";

EnvLookup no_env() {
    return [](const char*) -> std::optional<std::string> { return std::nullopt; };
}

bool has_error(const ParseResult& r, std::string_view prefix) {
    return std::any_of(r.errors.begin(), r.errors.end(),
                       [&](const std::string& e) { return e.rfind(prefix, 0) == 0; });
}

const char* kMinimal = R"({"manifest_path": "toy_manifest.tsv", "vocab_path": "toy.vocab"})";

}  // namespace

TEST_SUITE("config") {

TEST_CASE("minimal config gets documented defaults") {
    const auto r = parse_config(kMinimal, kConfigs, no_env());
    REQUIRE(r.ok());
    const auto& c = *r.config;
    CHECK(c.seed == 0);
    CHECK(c.encoder.layers == 6);
    CHECK(c.encoder.vocab_size == 27264);
    CHECK(c.timeline.total_steps == 138000);
    CHECK(c.encoder.rope.switch_step == 117300);
    CHECK(c.optimizer.weight_decay == 1e-5);
    CHECK(c.mask_rate == 0.30);
    CHECK(c.mask_frac == 0.8);
    CHECK(c.output_dir == "out");
    CHECK(c.threads == 1);
    CHECK(c.manifest_path == kConfigs / "toy_manifest.tsv");
}

TEST_CASE("large preset") {
    const auto r = parse_config(
        R"({"encoder": "large", "manifest_path": "toy_manifest.tsv", "vocab_path": "toy.vocab"})", kConfigs, no_env());
    REQUIRE(r.ok());
    CHECK(r.config->encoder.layers == 28);
    CHECK(r.config->encoder.hidden == 1024);
    CHECK(r.config->encoder.intermediate == 2624);
    CHECK(r.config->encoder.heads == 16);
    CHECK(r.config->optimizer.weight_decay == 1e-6);
    CHECK(r.config->timeline.stable_lr == 3e-4);
}

TEST_CASE("negative seed names the field") {
    const auto r = parse_config(R"({"seed": -3, "manifest_path": "toy_manifest.tsv", "vocab_path": "toy.vocab"})",
                                kConfigs, no_env());
    CHECK_FALSE(r.ok());
    CHECK(has_error(r, "seed:"));
}

TEST_CASE("every problem is reported") {
    const auto r = parse_config(R"({"sede": 1, "encoder": {"preset": "tiny", "layerz": 2, "heads": 5},
                                    "timeline": {"total_steps": 3}, "masking": {"split": [0.5, 0.1, 0.1]},
                                    "vocab_path": "nope.vocab"})",
                                kConfigs, no_env());
    CHECK_FALSE(r.ok());
    CHECK(has_error(r, "sede:"));
    CHECK(has_error(r, "encoder.layerz:"));
    CHECK(has_error(r, "encoder:"));
    CHECK(has_error(r, "timeline.total_steps:"));
    CHECK(has_error(r, "masking:"));
    CHECK(has_error(r, "manifest_path: missing required field"));
    CHECK(has_error(r, "vocab_path: file not found"));
    CHECK(r.errors.size() >= 7);
}

TEST_CASE("unknown preset and malformed JSON") {
    auto r = parse_config(R"({"encoder": "huge", "manifest_path": "toy_manifest.tsv", "vocab_path": "toy.vocab"})",
                          kConfigs, no_env());
    CHECK(has_error(r, "encoder:"));
    r = parse_config("{not json", kConfigs, no_env());
    CHECK(has_error(r, "<root>:"));
    r = parse_config("[1, 2]", kConfigs, no_env());
    CHECK(has_error(r, "<root>:"));
}

TEST_CASE("environment overrides") {
    const EnvLookup env = [](const char* name) -> std::optional<std::string> {
        if (std::string_view(name) == "PTK_OUTPUT_DIR") return "/tmp/elsewhere";
        if (std::string_view(name) == "PTK_THREADS") return "3";
        return std::nullopt;
    };
    const auto r = parse_config(kMinimal, kConfigs, env);
    REQUIRE(r.ok());
    CHECK(r.config->output_dir == "/tmp/elsewhere");
    CHECK(r.config->threads == 3);
    const EnvLookup bad = [](const char* name) -> std::optional<std::string> {
        if (std::string_view(name) == "PTK_THREADS") return "many";
        return std::nullopt;
    };
    CHECK(has_error(parse_config(kMinimal, kConfigs, bad), "env.PTK_THREADS:"));
}

TEST_CASE("toy config resolves") {
    const auto c = load_config(kConfigs / "toy_train.json", no_env());
    CHECK(c.seed == 1234);
    CHECK(c.encoder.layers == 2);
    CHECK(c.encoder.hidden == 64);
    CHECK(c.encoder.vocab_size == 512);
    CHECK(c.timeline.total_steps == 200);
    CHECK(c.timeline.stable_end_step == 170);
    CHECK(c.encoder.rope.switch_step == 170);
    CHECK(c.optimizer.weight_decay == 1e-5);
    CHECK(to_json(c).find("\"switch_step\": 170") != std::string::npos);
}

TEST_CASE("load_config throws with all messages") {
    CHECK_THROWS_AS(load_config(kConfigs / "missing.json", no_env()), ptk::Error);
}

}  // TEST_SUITE
