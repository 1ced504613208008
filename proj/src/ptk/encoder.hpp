// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "ptk/schedule.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ptk::encoder {

using TokenId = std::uint32_t;

/// Row-major dense matrix of doubles.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
    bool operator==(const Matrix&) const = default;
};

struct EncoderConfig {
    std::string name = "custom";
    std::uint32_t layers = 6;
    std::uint32_t hidden = 768;
    std::uint32_t intermediate = 1152;
    std::uint32_t heads = 12;
    std::uint32_t vocab_size = 27264;
    std::uint32_t max_seq = 16384;
    std::uint32_t global_layer_period = 3;  // layer l is global iff l % period == 0
    std::uint32_t local_window = 128;
    bool use_rope = true;
    bool tied_embeddings = true;
    double init_std = 0.02;
    double norm_eps = 1e-5;
    schedule::RoPEBaseSchedule rope;

    std::uint32_t head_dim() const noexcept { return hidden / heads; }
    bool is_global(std::uint32_t layer) const noexcept { return layer % global_layer_period == 0; }
    void validate() const;
};

/// Architecture presets: tiny, base, large and their -short variants.
/// Layer/width/head counts are fixed per size; vocab_size defaults to the
/// planned vocabulary of that size (128000 for -short).
EncoderConfig encoder_preset(std::string_view name);

struct ParamTensor {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double> values;

    std::size_t numel() const noexcept;
    bool all_finite() const noexcept;
};

/// Named parameter tensors in a fixed order. Gradients and optimizer state
/// use the same layout.
class Parameters {
public:
    Parameters() = default;
    explicit Parameters(const EncoderConfig& config);  // zero-filled

    std::vector<ParamTensor>& tensors() noexcept { return tensors_; }
    const std::vector<ParamTensor>& tensors() const noexcept { return tensors_; }
    ParamTensor& at(std::string_view name);
    const ParamTensor& at(std::string_view name) const;
    std::size_t count() const noexcept;
    void zero() noexcept;
    bool all_finite() const noexcept;

    bool operator==(const Parameters& other) const;

private:
    std::vector<ParamTensor> tensors_;
};

/// Normal init with std init_std; residual output projections are scaled
/// by 1/sqrt(2 * layers). Norm weights start at 1.
Parameters init_parameters(const EncoderConfig& config, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Rotary position embedding

struct RoPEParams {
    double base = 10000.0;
    std::uint32_t head_dim = 0;
    std::vector<double> thetas;  // base^(-2i/d), i in [0, d/2)
};

/// Throws ConfigError for an odd or zero head_dim or a non-positive base.
RoPEParams make_rope(double base, std::uint32_t head_dim);

/// Rotates dimension pair (2i, 2i+1) of row p by angle p * theta_i.
/// With `inverse`, rotates by -p * theta_i.
void rope_apply_inplace(Matrix& x, const RoPEParams& params, bool inverse = false);
Matrix rope_apply(const Matrix& x, const RoPEParams& params);

// ---------------------------------------------------------------------------
// Attention

enum class AttentionKind { global, local };

struct AttentionOptions {
    AttentionKind kind = AttentionKind::global;
    std::uint32_t window = 0;          // local only: attend to |i - j| <= window / 2
    std::optional<RoPEParams> rope;    // applied to q and k when present
};

struct AttentionResult {
    Matrix output;   // [n x d]
    Matrix weights;  // [n x n], rows sum to 1
};

/// Single-head scaled dot-product attention over [n x d] inputs.
AttentionResult attention(const Matrix& q, const Matrix& k, const Matrix& v, const AttentionOptions& options);

/// Options for a layer of `kind` at optimizer step `step`; the rotary base
/// comes from the schedule.
AttentionOptions attention_options(const EncoderConfig& config, AttentionKind kind, schedule::Step step);

// ---------------------------------------------------------------------------
// Model

struct ForwardCache;

class Forward {
public:
    Forward();
    ~Forward();
    Forward(Forward&&) noexcept;
    Forward& operator=(Forward&&) noexcept;

    const Matrix& logits() const noexcept;

private:
    friend Forward forward(const EncoderConfig&, const Parameters&, std::span<const TokenId>, schedule::Step);
    friend void backward(const EncoderConfig&, const Parameters&, const Forward&, const Matrix&, Parameters&);
    std::unique_ptr<ForwardCache> cache_;
};

/// Logits [len x vocab_size]. Throws InputError for ids >= vocab_size or
/// sequences longer than max_seq.
Forward forward(const EncoderConfig& config, const Parameters& params, std::span<const TokenId> ids,
                schedule::Step step);

/// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(logits).
void backward(const EncoderConfig& config, const Parameters& params, const Forward& fwd, const Matrix& dlogits,
              Parameters& grads);

inline constexpr std::int32_t kIgnoreLabel = -100;

struct LossResult {
    double loss = 0.0;
    Matrix dlogits;       // gradient of the mean loss
    std::size_t counted = 0;
};

/// Mean cross-entropy over positions whose label is not kIgnoreLabel.
/// Throws InputError when every position is ignored.
LossResult mlm_loss(const Matrix& logits, std::span<const std::int32_t> labels);

// ---------------------------------------------------------------------------
// Checkpoints: "PTKCKPT\0", u32 version, u64 step, u32 json length, config json,
// u32 tensor count, then per tensor u32 name length, name, u32 rank,
// u64 dims, f64 values. All integers and floats little-endian.

void save_checkpoint(const std::filesystem::path& path, const EncoderConfig& config, const Parameters& params,
                     std::uint64_t step);

struct Checkpoint {
    EncoderConfig config;
    Parameters params;
    std::uint64_t step = 0;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string config_to_json(const EncoderConfig& config);
EncoderConfig config_from_json(std::string_view json);

}  // namespace ptk::encoder
