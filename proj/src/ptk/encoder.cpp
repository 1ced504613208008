// SPDX-License-Identifier: Apache-2.0

#include "ptk/encoder.hpp"

#include "ptk/error.hpp"
#include "ptk/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

namespace ptk::encoder {

namespace {

// --- small dense kernels ----------------------------------------------------

// y = x W^T, W is [out x in] row-major.
Matrix linear(const Matrix& x, const ParamTensor& w) {
    const std::size_t out = w.shape[0];
    const std::size_t in = w.shape[1];
    Matrix y(x.rows, out);
    for (std::size_t i = 0; i < x.rows; ++i) {
        const double* xi = x.data.data() + i * in;
        double* yi = y.data.data() + i * out;
        for (std::size_t o = 0; o < out; ++o) {
            const double* wo = w.values.data() + o * in;
            double acc = 0.0;
            for (std::size_t k = 0; k < in; ++k) acc += xi[k] * wo[k];
            yi[o] = acc;
        }
    }
    return y;
}

// dx = dy W
Matrix linear_back_input(const Matrix& dy, const ParamTensor& w) {
    const std::size_t out = w.shape[0];
    const std::size_t in = w.shape[1];
    Matrix dx(dy.rows, in);
    for (std::size_t i = 0; i < dy.rows; ++i) {
        double* dxi = dx.data.data() + i * in;
        for (std::size_t o = 0; o < out; ++o) {
            const double g = dy(i, o);
            if (g == 0.0) continue;
            const double* wo = w.values.data() + o * in;
            for (std::size_t k = 0; k < in; ++k) dxi[k] += g * wo[k];
        }
    }
    return dx;
}

// dW += dy^T x
void linear_back_weight(const Matrix& dy, const Matrix& x, ParamTensor& dw) {
    const std::size_t out = dw.shape[0];
    const std::size_t in = dw.shape[1];
    for (std::size_t i = 0; i < dy.rows; ++i) {
        const double* xi = x.data.data() + i * in;
        for (std::size_t o = 0; o < out; ++o) {
            const double g = dy(i, o);
            if (g == 0.0) continue;
            double* dwo = dw.values.data() + o * in;
            for (std::size_t k = 0; k < in; ++k) dwo[k] += g * xi[k];
        }
    }
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_grad(double x) {
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    return 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

struct NormCache {
    Matrix xhat;
    std::vector<double> rstd;
};

// Bias-free layer norm.
Matrix layer_norm(const Matrix& x, const ParamTensor& w, double eps, NormCache& cache) {
    const std::size_t n = x.rows;
    const std::size_t h = x.cols;
    Matrix y(n, h);
    cache.xhat = Matrix(n, h);
    cache.rstd.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = x.row(i);
        double mean = 0.0;
        for (double v : r) mean += v;
        mean /= static_cast<double>(h);
        double var = 0.0;
        for (double v : r) var += (v - mean) * (v - mean);
        var /= static_cast<double>(h);
        const double rstd = 1.0 / std::sqrt(var + eps);
        cache.rstd[i] = rstd;
        for (std::size_t k = 0; k < h; ++k) {
            const double xh = (r[k] - mean) * rstd;
            cache.xhat(i, k) = xh;
            y(i, k) = xh * w.values[k];
        }
    }
    return y;
}

Matrix layer_norm_back(const Matrix& dy, const ParamTensor& w, const NormCache& cache, ParamTensor& dw) {
    const std::size_t n = dy.rows;
    const std::size_t h = dy.cols;
    Matrix dx(n, h);
    std::vector<double> dxhat(h);
    for (std::size_t i = 0; i < n; ++i) {
        double mean_d = 0.0;
        double mean_dx = 0.0;
        for (std::size_t k = 0; k < h; ++k) {
            const double g = dy(i, k);
            dw.values[k] += g * cache.xhat(i, k);
            dxhat[k] = g * w.values[k];
            mean_d += dxhat[k];
            mean_dx += dxhat[k] * cache.xhat(i, k);
        }
        mean_d /= static_cast<double>(h);
        mean_dx /= static_cast<double>(h);
        for (std::size_t k = 0; k < h; ++k) {
            dx(i, k) = cache.rstd[i] * (dxhat[k] - mean_d - cache.xhat(i, k) * mean_dx);
        }
    }
    return dx;
}

void add_inplace(Matrix& a, const Matrix& b) {
    for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

Matrix head_slice(const Matrix& x, std::size_t col0, std::size_t d) {
    Matrix out(x.rows, d);
    for (std::size_t i = 0; i < x.rows; ++i) {
        std::copy_n(x.data.data() + i * x.cols + col0, d, out.data.data() + i * d);
    }
    return out;
}

void head_store(Matrix& x, std::size_t col0, const Matrix& part) {
    for (std::size_t i = 0; i < part.rows; ++i) {
        std::copy_n(part.data.data() + i * part.cols, part.cols, x.data.data() + i * x.cols + col0);
    }
}

bool masked(const AttentionOptions& opt, std::size_t i, std::size_t j) {
    if (opt.kind != AttentionKind::local) return false;
    const std::size_t dist = i > j ? i - j : j - i;
    return 2 * dist > opt.window;
}

// Softmax attention on already-rotated q/k.
AttentionResult attend_rotated(const Matrix& q, const Matrix& k, const Matrix& v, const AttentionOptions& opt) {
    const std::size_t n = q.rows;
    const std::size_t d = q.cols;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    AttentionResult res{Matrix(n, v.cols), Matrix(n, n)};
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
            if (masked(opt, i, j)) {
                s[j] = -std::numeric_limits<double>::infinity();
                continue;
            }
            double acc = 0.0;
            for (std::size_t c = 0; c < d; ++c) acc += q(i, c) * k(j, c);
            s[j] = acc * scale;
            mx = std::max(mx, s[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double e = std::isinf(s[j]) ? 0.0 : std::exp(s[j] - mx);
            res.weights(i, j) = e;
            z += e;
        }
        for (std::size_t j = 0; j < n; ++j) {
            const double p = res.weights(i, j) / z;
            res.weights(i, j) = p;
            if (p == 0.0) continue;
            for (std::size_t c = 0; c < v.cols; ++c) res.output(i, c) += p * v(j, c);
        }
    }
    return res;
}

void require_shape(const ParamTensor& t, std::vector<std::size_t> shape) {
    if (t.shape != shape) throw InputError("parameter '" + t.name + "' has unexpected shape");
}

}  // namespace

// --- config -----------------------------------------------------------------

void EncoderConfig::validate() const {
    if (layers == 0) throw ConfigError("encoder: layers must be positive");
    if (hidden == 0 || heads == 0) throw ConfigError("encoder: hidden and heads must be positive");
    if (hidden % heads != 0) throw ConfigError("encoder: hidden must be divisible by heads");
    if (head_dim() % 2 != 0) throw ConfigError("encoder: head_dim must be even for rotary embeddings");
    if (intermediate == 0) throw ConfigError("encoder: intermediate must be positive");
    if (vocab_size == 0) throw ConfigError("encoder: vocab_size must be positive");
    if (max_seq == 0) throw ConfigError("encoder: max_seq must be positive");
    if (global_layer_period == 0) throw ConfigError("encoder: global_layer_period must be positive");
    if (local_window == 0) throw ConfigError("encoder: local_window must be positive");
    if (!(init_std > 0.0) || !std::isfinite(init_std)) throw ConfigError("encoder: init_std must be positive");
    if (!(norm_eps > 0.0)) throw ConfigError("encoder: norm_eps must be positive");
    rope.validate();
}

EncoderConfig encoder_preset(std::string_view name) {
    EncoderConfig c;
    c.name = std::string(name);
    std::string_view size = name;
    const bool is_short = size.ends_with("-short");
    if (is_short) size.remove_suffix(6);
    if (size == "tiny") {
        c.layers = 6, c.hidden = 768, c.intermediate = 1152, c.heads = 12, c.vocab_size = 27264;
    } else if (size == "base") {
        c.layers = 22, c.hidden = 768, c.intermediate = 1152, c.heads = 12, c.vocab_size = 42240;
    } else if (size == "large") {
        c.layers = 28, c.hidden = 1024, c.intermediate = 2624, c.heads = 16, c.vocab_size = 55616;
    } else {
        throw ConfigError("unknown encoder preset '" + std::string(name) + "' (expected tiny, base, large or -short)");
    }
    if (is_short) {
        c.vocab_size = 128000;
        c.max_seq = 8192;
    }
    return c;
}

// --- parameters -------------------------------------------------------------

std::size_t ParamTensor::numel() const noexcept {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

bool ParamTensor::all_finite() const noexcept {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

Parameters::Parameters(const EncoderConfig& c) {
    const std::size_t H = c.hidden, I = c.intermediate, V = c.vocab_size;
    auto add = [this](std::string name, std::vector<std::size_t> shape) {
        ParamTensor t{std::move(name), std::move(shape), {}};
        t.values.assign(t.numel(), 0.0);
        tensors_.push_back(std::move(t));
    };
    add("tok_embeddings", {V, H});
    add("emb_norm", {H});
    for (std::uint32_t l = 0; l < c.layers; ++l) {
        const std::string p = "layers." + std::to_string(l) + ".";
        add(p + "attn_norm", {H});
        add(p + "wqkv", {3 * H, H});
        add(p + "wo", {H, H});
        add(p + "mlp_norm", {H});
        add(p + "wi", {2 * I, H});
        add(p + "mlp_out", {H, I});
    }
    add("final_norm", {H});
    add("head.dense", {H, H});
    add("head.norm", {H});
    if (!c.tied_embeddings) add("decoder", {V, H});
}

ParamTensor& Parameters::at(std::string_view name) {
    for (auto& t : tensors_)
        if (t.name == name) return t;
    throw InputError("no parameter named '" + std::string(name) + "'");
}

const ParamTensor& Parameters::at(std::string_view name) const {
    return const_cast<Parameters*>(this)->at(name);
}

std::size_t Parameters::count() const noexcept {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.values.size();
    return n;
}

void Parameters::zero() noexcept {
    for (auto& t : tensors_) std::fill(t.values.begin(), t.values.end(), 0.0);
}

bool Parameters::all_finite() const noexcept {
    return std::all_of(tensors_.begin(), tensors_.end(), [](const ParamTensor& t) { return t.all_finite(); });
}

bool Parameters::operator==(const Parameters& other) const {
    if (tensors_.size() != other.tensors_.size()) return false;
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
        const auto& a = tensors_[i];
        const auto& b = other.tensors_[i];
        if (a.name != b.name || a.shape != b.shape) return false;
        // bitwise comparison, so NaN payloads and signed zeros count
        for (std::size_t k = 0; k < a.values.size(); ++k) {
            if (std::bit_cast<std::uint64_t>(a.values[k]) != std::bit_cast<std::uint64_t>(b.values[k])) return false;
        }
    }
    return true;
}

Parameters init_parameters(const EncoderConfig& config, std::uint64_t seed) {
    config.validate();
    Parameters p(config);
    Rng rng(substream_seed(seed, "encoder/init"));
    const double resid_std = config.init_std / std::sqrt(2.0 * config.layers);
    for (auto& t : p.tensors()) {
        if (t.shape.size() == 1) {
            std::fill(t.values.begin(), t.values.end(), 1.0);
            continue;
        }
        const bool resid = t.name.ends_with(".wo") || t.name.ends_with(".mlp_out");
        const double sd = resid ? resid_std : config.init_std;
        for (auto& v : t.values) v = sd * rng.normal();
    }
    return p;
}

// --- RoPE -------------------------------------------------------------------

RoPEParams make_rope(double base, std::uint32_t head_dim) {
    if (head_dim == 0 || head_dim % 2 != 0) throw ConfigError("rope: head_dim must be even and positive");
    if (!(base > 0.0) || !std::isfinite(base)) throw ConfigError("rope: base must be positive");
    RoPEParams p{base, head_dim, {}};
    p.thetas.resize(head_dim / 2);
    for (std::uint32_t i = 0; i < head_dim / 2; ++i) {
        p.thetas[i] = std::pow(base, -2.0 * i / static_cast<double>(head_dim));
    }
    return p;
}

void rope_apply_inplace(Matrix& x, const RoPEParams& params, bool inverse) {
    if (x.cols % 2 != 0) throw ConfigError("rope: head_dim must be even");
    if (x.cols != params.head_dim) throw ConfigError("rope: vector width does not match head_dim");
    const double sign = inverse ? -1.0 : 1.0;
    for (std::size_t p = 0; p < x.rows; ++p) {
        if (p == 0) continue;
        for (std::size_t i = 0; i < params.thetas.size(); ++i) {
            const double angle = sign * static_cast<double>(p) * params.thetas[i];
            const double c = std::cos(angle);
            const double s = std::sin(angle);
            double& a = x(p, 2 * i);
            double& b = x(p, 2 * i + 1);
            const double a0 = a;
            a = a0 * c - b * s;
            b = a0 * s + b * c;
        }
    }
}

Matrix rope_apply(const Matrix& x, const RoPEParams& params) {
    Matrix out = x;
    rope_apply_inplace(out, params);
    return out;
}

// --- attention --------------------------------------------------------------

AttentionResult attention(const Matrix& q, const Matrix& k, const Matrix& v, const AttentionOptions& options) {
    if (q.rows != k.rows || q.rows != v.rows || q.cols != k.cols) {
        throw InputError("attention: q, k, v shapes do not conform");
    }
    if (options.kind == AttentionKind::local && options.window == 0) {
        throw ConfigError("attention: local window must be positive");
    }
    if (!options.rope) return attend_rotated(q, k, v, options);
    Matrix qr = rope_apply(q, *options.rope);
    Matrix kr = rope_apply(k, *options.rope);
    return attend_rotated(qr, kr, v, options);
}

AttentionOptions attention_options(const EncoderConfig& config, AttentionKind kind, schedule::Step step) {
    AttentionOptions opt;
    opt.kind = kind;
    opt.window = kind == AttentionKind::local ? config.local_window : 0;
    if (config.use_rope) {
        const auto lk = kind == AttentionKind::local ? schedule::LayerKind::local : schedule::LayerKind::global;
        opt.rope = make_rope(schedule::rope_base_at(config.rope, step, lk), config.head_dim());
    }
    return opt;
}

// --- model ------------------------------------------------------------------

struct LayerCache {
    AttentionOptions opt;
    NormCache ln1, ln2;
    Matrix h1;
    Matrix q, k, v;  // rotated q/k
    std::vector<Matrix> probs;
    Matrix attn_out;  // concatenated heads, before wo
    Matrix h2;
    Matrix u;  // [n x 2I]
    Matrix g;  // gelu(in) * gate
};

struct ForwardCache {
    std::vector<TokenId> ids;
    NormCache emb_ln;
    std::vector<LayerCache> layers;
    NormCache final_ln;
    Matrix xf;
    Matrix z;  // head dense pre-activation
    NormCache head_ln;
    Matrix hh;
    Matrix logits;
};

Forward::Forward() = default;
Forward::~Forward() = default;
Forward::Forward(Forward&&) noexcept = default;
Forward& Forward::operator=(Forward&&) noexcept = default;

const Matrix& Forward::logits() const noexcept {
    static const Matrix empty;
    return cache_ ? cache_->logits : empty;
}

Forward forward(const EncoderConfig& config, const Parameters& params, std::span<const TokenId> ids,
                schedule::Step step) {
    config.validate();
    if (ids.empty()) throw InputError("forward: empty sequence");
    if (ids.size() > config.max_seq) {
        throw InputError("forward: sequence length " + std::to_string(ids.size()) + " exceeds max_seq " +
                         std::to_string(config.max_seq));
    }
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= config.vocab_size) {
            throw InputError("forward: token id " + std::to_string(ids[i]) + " at position " + std::to_string(i) +
                             " is out of range for vocab_size " + std::to_string(config.vocab_size));
        }
    }
    const std::size_t n = ids.size();
    const std::size_t H = config.hidden;
    const std::size_t I = config.intermediate;
    const std::size_t d = config.head_dim();
    const auto& emb = params.at("tok_embeddings");
    require_shape(emb, {config.vocab_size, H});

    Forward out;
    out.cache_ = std::make_unique<ForwardCache>();
    auto& c = *out.cache_;
    c.ids.assign(ids.begin(), ids.end());

    Matrix x0(n, H);
    for (std::size_t i = 0; i < n; ++i) std::copy_n(emb.values.data() + ids[i] * H, H, x0.row(i).data());
    Matrix x = layer_norm(x0, params.at("emb_norm"), config.norm_eps, c.emb_ln);

    c.layers.resize(config.layers);
    for (std::uint32_t l = 0; l < config.layers; ++l) {
        auto& lc = c.layers[l];
        const std::string p = "layers." + std::to_string(l) + ".";
        const auto kind = config.is_global(l) ? AttentionKind::global : AttentionKind::local;
        lc.opt = attention_options(config, kind, step);

        lc.h1 = layer_norm(x, params.at(p + "attn_norm"), config.norm_eps, lc.ln1);
        const Matrix qkv = linear(lc.h1, params.at(p + "wqkv"));
        lc.q = head_slice(qkv, 0, H);
        lc.k = head_slice(qkv, H, H);
        lc.v = head_slice(qkv, 2 * H, H);
        lc.attn_out = Matrix(n, H);
        lc.probs.resize(config.heads);
        for (std::uint32_t h = 0; h < config.heads; ++h) {
            Matrix qh = head_slice(lc.q, h * d, d);
            Matrix kh = head_slice(lc.k, h * d, d);
            const Matrix vh = head_slice(lc.v, h * d, d);
            if (lc.opt.rope) {
                rope_apply_inplace(qh, *lc.opt.rope);
                rope_apply_inplace(kh, *lc.opt.rope);
                head_store(lc.q, h * d, qh);
                head_store(lc.k, h * d, kh);
            }
            auto res = attend_rotated(qh, kh, vh, lc.opt);
            head_store(lc.attn_out, h * d, res.output);
            lc.probs[h] = std::move(res.weights);
        }
        add_inplace(x, linear(lc.attn_out, params.at(p + "wo")));

        lc.h2 = layer_norm(x, params.at(p + "mlp_norm"), config.norm_eps, lc.ln2);
        lc.u = linear(lc.h2, params.at(p + "wi"));
        lc.g = Matrix(n, I);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < I; ++j) lc.g(i, j) = gelu(lc.u(i, j)) * lc.u(i, I + j);
        }
        add_inplace(x, linear(lc.g, params.at(p + "mlp_out")));
    }

    c.xf = layer_norm(x, params.at("final_norm"), config.norm_eps, c.final_ln);
    c.z = linear(c.xf, params.at("head.dense"));
    Matrix a = c.z;
    for (auto& v : a.data) v = gelu(v);
    c.hh = layer_norm(a, params.at("head.norm"), config.norm_eps, c.head_ln);
    c.logits = linear(c.hh, config.tied_embeddings ? emb : params.at("decoder"));
    return out;
}

void backward(const EncoderConfig& config, const Parameters& params, const Forward& fwd, const Matrix& dlogits,
              Parameters& grads) {
    if (!fwd.cache_) throw InputError("backward: empty forward result");
    const auto& c = *fwd.cache_;
    const std::size_t n = c.ids.size();
    const std::size_t H = config.hidden;
    const std::size_t I = config.intermediate;
    const std::size_t d = config.head_dim();
    if (dlogits.rows != n || dlogits.cols != config.vocab_size) throw InputError("backward: dlogits shape mismatch");

    const char* dec_name = config.tied_embeddings ? "tok_embeddings" : "decoder";
    linear_back_weight(dlogits, c.hh, grads.at(dec_name));
    Matrix dhh = linear_back_input(dlogits, params.at(dec_name));
    Matrix da = layer_norm_back(dhh, params.at("head.norm"), c.head_ln, grads.at("head.norm"));
    for (std::size_t i = 0; i < da.data.size(); ++i) da.data[i] *= gelu_grad(c.z.data[i]);
    linear_back_weight(da, c.xf, grads.at("head.dense"));
    Matrix dxf = linear_back_input(da, params.at("head.dense"));
    Matrix dx = layer_norm_back(dxf, params.at("final_norm"), c.final_ln, grads.at("final_norm"));

    for (std::uint32_t l = config.layers; l-- > 0;) {
        const auto& lc = c.layers[l];
        const std::string p = "layers." + std::to_string(l) + ".";

        // feed-forward block
        linear_back_weight(dx, lc.g, grads.at(p + "mlp_out"));
        const Matrix dg = linear_back_input(dx, params.at(p + "mlp_out"));
        Matrix du(n, 2 * I);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < I; ++j) {
                const double in = lc.u(i, j);
                const double gate = lc.u(i, I + j);
                du(i, j) = dg(i, j) * gate * gelu_grad(in);
                du(i, I + j) = dg(i, j) * gelu(in);
            }
        }
        linear_back_weight(du, lc.h2, grads.at(p + "wi"));
        add_inplace(dx, layer_norm_back(linear_back_input(du, params.at(p + "wi")), params.at(p + "mlp_norm"), lc.ln2,
                                        grads.at(p + "mlp_norm")));

        // attention block
        linear_back_weight(dx, lc.attn_out, grads.at(p + "wo"));
        const Matrix dout = linear_back_input(dx, params.at(p + "wo"));
        Matrix dqkv(n, 3 * H);
        const double scale = 1.0 / std::sqrt(static_cast<double>(d));
        for (std::uint32_t h = 0; h < config.heads; ++h) {
            const Matrix& P = lc.probs[h];
            const Matrix qh = head_slice(lc.q, h * d, d);
            const Matrix kh = head_slice(lc.k, h * d, d);
            const Matrix vh = head_slice(lc.v, h * d, d);
            const Matrix doh = head_slice(dout, h * d, d);
            Matrix dq(n, d), dk(n, d), dv(n, d);
            std::vector<double> dp(n);
            for (std::size_t i = 0; i < n; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    double acc = 0.0;
                    for (std::size_t e = 0; e < d; ++e) acc += doh(i, e) * vh(j, e);
                    dp[j] = acc;
                    dot += acc * P(i, j);
                }
                for (std::size_t j = 0; j < n; ++j) {
                    const double pij = P(i, j);
                    if (pij == 0.0) continue;
                    for (std::size_t e = 0; e < d; ++e) dv(j, e) += pij * doh(i, e);
                    const double ds = pij * (dp[j] - dot) * scale;
                    for (std::size_t e = 0; e < d; ++e) {
                        dq(i, e) += ds * kh(j, e);
                        dk(j, e) += ds * qh(i, e);
                    }
                }
            }
            if (lc.opt.rope) {
                rope_apply_inplace(dq, *lc.opt.rope, true);
                rope_apply_inplace(dk, *lc.opt.rope, true);
            }
            head_store(dqkv, h * d, dq);
            head_store(dqkv, H + h * d, dk);
            head_store(dqkv, 2 * H + h * d, dv);
        }
        linear_back_weight(dqkv, lc.h1, grads.at(p + "wqkv"));
        add_inplace(dx, layer_norm_back(linear_back_input(dqkv, params.at(p + "wqkv")), params.at(p + "attn_norm"),
                                        lc.ln1, grads.at(p + "attn_norm")));
    }

    const Matrix dx0 = layer_norm_back(dx, params.at("emb_norm"), c.emb_ln, grads.at("emb_norm"));
    auto& demb = grads.at("tok_embeddings");
    for (std::size_t i = 0; i < n; ++i) {
        double* row = demb.values.data() + c.ids[i] * H;
        for (std::size_t k = 0; k < H; ++k) row[k] += dx0(i, k);
    }
}

LossResult mlm_loss(const Matrix& logits, std::span<const std::int32_t> labels) {
    if (labels.size() != logits.rows) throw InputError("mlm_loss: labels and logits disagree on length");
    LossResult r;
    r.dlogits = Matrix(logits.rows, logits.cols);
    for (auto lab : labels) {
        if (lab == kIgnoreLabel) continue;
        if (lab < 0 || static_cast<std::size_t>(lab) >= logits.cols) {
            throw InputError("mlm_loss: label " + std::to_string(lab) + " out of range");
        }
        ++r.counted;
    }
    if (r.counted == 0) throw InputError("mlm_loss: every position is ignored");
    const double inv = 1.0 / static_cast<double>(r.counted);
    for (std::size_t i = 0; i < logits.rows; ++i) {
        if (labels[i] == kIgnoreLabel) continue;
        const auto row = logits.row(i);
        const double mx = *std::max_element(row.begin(), row.end());
        double z = 0.0;
        for (double v : row) z += std::exp(v - mx);
        const double lse = mx + std::log(z);
        r.loss += (lse - row[labels[i]]) * inv;
        auto drow = r.dlogits.row(i);
        for (std::size_t k = 0; k < row.size(); ++k) drow[k] = std::exp(row[k] - lse) * inv;
        drow[labels[i]] -= inv;
    }
    return r;
}

// --- checkpoints ------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'P', 'T', 'K', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kCheckpointVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 8);
}

std::uint64_t get_le(std::istream& in, int bytes) {
    unsigned char b[8] = {};
    if (!in.read(reinterpret_cast<char*>(b), bytes)) throw InputError("checkpoint: truncated file");
    std::uint64_t v = 0;
    for (int i = bytes - 1; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

std::string get_bytes(std::istream& in, std::size_t n) {
    std::string s(n, '\0');
    if (n > 0 && !in.read(s.data(), static_cast<std::streamsize>(n))) throw InputError("checkpoint: truncated file");
    return s;
}

}  // namespace

std::string config_to_json(const EncoderConfig& c) {
    nlohmann::ordered_json j;
    j["name"] = c.name;
    j["layers"] = c.layers;
    j["hidden"] = c.hidden;
    j["intermediate"] = c.intermediate;
    j["heads"] = c.heads;
    j["vocab_size"] = c.vocab_size;
    j["max_seq"] = c.max_seq;
    j["global_layer_period"] = c.global_layer_period;
    j["local_window"] = c.local_window;
    j["use_rope"] = c.use_rope;
    j["tied_embeddings"] = c.tied_embeddings;
    j["init_std"] = c.init_std;
    j["norm_eps"] = c.norm_eps;
    j["rope"] = {{"global_base_stable", c.rope.global_base_stable},
                 {"global_base_extended", c.rope.global_base_extended},
                 {"switch_step", c.rope.switch_step},
                 {"local_base", c.rope.local_base}};
    return j.dump();
}

EncoderConfig config_from_json(std::string_view text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("encoder config: ") + e.what());
    }
    EncoderConfig c;
    try {
        c.name = j.at("name").get<std::string>();
        c.layers = j.at("layers").get<std::uint32_t>();
        c.hidden = j.at("hidden").get<std::uint32_t>();
        c.intermediate = j.at("intermediate").get<std::uint32_t>();
        c.heads = j.at("heads").get<std::uint32_t>();
        c.vocab_size = j.at("vocab_size").get<std::uint32_t>();
        c.max_seq = j.at("max_seq").get<std::uint32_t>();
        c.global_layer_period = j.at("global_layer_period").get<std::uint32_t>();
        c.local_window = j.at("local_window").get<std::uint32_t>();
        c.use_rope = j.at("use_rope").get<bool>();
        c.tied_embeddings = j.at("tied_embeddings").get<bool>();
        c.init_std = j.at("init_std").get<double>();
        c.norm_eps = j.at("norm_eps").get<double>();
        const auto& r = j.at("rope");
        c.rope.global_base_stable = r.at("global_base_stable").get<double>();
        c.rope.global_base_extended = r.at("global_base_extended").get<double>();
        c.rope.switch_step = r.at("switch_step").get<schedule::Step>();
        c.rope.local_base = r.at("local_base").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("encoder config: ") + e.what());
    }
    c.validate();
    return c;
}

void save_checkpoint(const std::filesystem::path& path, const EncoderConfig& config, const Parameters& params,
                     std::uint64_t step) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof kMagic);
    put_u32(out, kCheckpointVersion);
    put_u64(out, step);
    const std::string js = config_to_json(config);
    put_u32(out, static_cast<std::uint32_t>(js.size()));
    out.write(js.data(), static_cast<std::streamsize>(js.size()));
    put_u32(out, static_cast<std::uint32_t>(params.tensors().size()));
    for (const auto& t : params.tensors()) {
        put_u32(out, static_cast<std::uint32_t>(t.name.size()));
        out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
        for (auto dim : t.shape) put_u64(out, dim);
        for (double v : t.values) put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
    if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    const std::string magic = get_bytes(in, sizeof kMagic);
    if (magic != std::string(kMagic, sizeof kMagic)) throw InputError("checkpoint: bad magic in " + path.string());
    const auto version = get_le(in, 4);
    if (version != kCheckpointVersion) {
        throw InputError("checkpoint: unsupported version " + std::to_string(version));
    }
    Checkpoint ck;
    ck.step = get_le(in, 8);
    ck.config = config_from_json(get_bytes(in, get_le(in, 4)));
    Parameters expected(ck.config);
    const auto count = get_le(in, 4);
    if (count != expected.tensors().size()) throw InputError("checkpoint: tensor count does not match config");
    for (auto& t : expected.tensors()) {
        const std::string name = get_bytes(in, get_le(in, 4));
        if (name != t.name) throw InputError("checkpoint: expected tensor '" + t.name + "', found '" + name + "'");
        std::vector<std::size_t> shape(get_le(in, 4));
        for (auto& dim : shape) dim = get_le(in, 8);
        require_shape(t, shape);
        for (auto& v : t.values) v = std::bit_cast<double>(get_le(in, 8));
        if (!t.all_finite()) throw InputError("checkpoint: tensor '" + name + "' has non-finite values");
    }
    ck.params = std::move(expected);
    return ck;
}

}  // namespace ptk::encoder
