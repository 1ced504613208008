// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "ptk/encoder.hpp"
#include "ptk/schedule.hpp"
#include "ptk/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ptk::config {

/// JSON run configuration.
///
///   seed           non-negative integer (default 0)
///   encoder        preset name, or an object {"preset": name, ...overrides}
///   timeline       object {"preset": name, "total_steps": n, ...overrides};
///                  total_steps rescales the preset's phase boundaries
///   optimizer      {beta1, beta2, epsilon, weight_decay}
///   masking        {mask_rate, split: [mask, random, keep]}
///   manifest_path  mixture manifest (required)
///   vocab_path     tokenizer vocabulary (required)
///   output_dir     default "out"
///   threads        default 1
///
/// Relative paths resolve against the config file's directory. The
/// environment variables PTK_OUTPUT_DIR and PTK_THREADS override the
/// corresponding fields.
struct RunConfig {
    std::uint64_t seed = 0;
    encoder::EncoderConfig encoder;
    schedule::TrainingTimeline timeline;
    trainer::OptimizerSettings optimizer;
    double mask_rate = 0.30;
    double mask_frac = 0.8;
    double random_frac = 0.1;
    double keep_frac = 0.1;
    std::filesystem::path manifest_path;
    std::filesystem::path vocab_path;
    std::filesystem::path output_dir = "out";
    unsigned threads = 1;
};

using EnvLookup = std::function<std::optional<std::string>(const char*)>;

/// Reads variables from the process environment.
EnvLookup process_env();

struct ParseResult {
    std::optional<RunConfig> config;
    std::vector<std::string> errors;  // "path.to.field: message"

    bool ok() const noexcept { return config.has_value(); }
};

/// Collects every problem instead of stopping at the first one.
ParseResult parse_config(std::string_view json_text, const std::filesystem::path& base_dir,
                         const EnvLookup& env = process_env());

/// Reads and parses a file; throws ConfigError listing all problems.
RunConfig load_config(const std::filesystem::path& path, const EnvLookup& env = process_env());

/// Canonical JSON rendering of a resolved config (all defaults filled).
std::string to_json(const RunConfig& config);

}  // namespace ptk::config
