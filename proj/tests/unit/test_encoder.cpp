// SPDX-License-Identifier: Apache-2.0

#include "doctest.h"

#include "ptk/encoder.hpp"
#include "ptk/error.hpp"
#include "ptk/rng.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

using namespace ptk::encoder;

namespace {

EncoderConfig small_config() {
    EncoderConfig c;
    c.name = "grad-check";
    c.layers = 2;
    c.hidden = 16;
    c.intermediate = 24;
    c.heads = 2;
    c.vocab_size = 50;
    c.max_seq = 32;
    c.global_layer_period = 2;  // layer 0 global, layer 1 local
    c.local_window = 4;
    c.init_std = 0.2;
    return c;
}

Matrix random_matrix(std::size_t r, std::size_t c, ptk::Rng& rng) {
    Matrix m(r, c);
    for (auto& v : m.data) v = rng.normal();
    return m;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double loss_of(const EncoderConfig& c, const Parameters& p, const std::vector<TokenId>& ids,
               const std::vector<std::int32_t>& labels) {
    return mlm_loss(forward(c, p, ids, 0).logits(), labels).loss;
}

}  // namespace

TEST_SUITE("encoder") {

TEST_CASE("presets") {
    const auto tiny = encoder_preset("tiny");
    CHECK(tiny.layers == 6);
    CHECK(tiny.hidden == 768);
    CHECK(tiny.intermediate == 1152);
    CHECK(tiny.heads == 12);
    CHECK(tiny.vocab_size == 27264);
    const auto base = encoder_preset("base");
    CHECK(base.layers == 22);
    CHECK(base.vocab_size == 42240);
    const auto large = encoder_preset("large");
    CHECK(large.layers == 28);
    CHECK(large.hidden == 1024);
    CHECK(large.intermediate == 2624);
    CHECK(large.heads == 16);
    CHECK(large.vocab_size == 55616);
    const auto ls = encoder_preset("large-short");
    CHECK(ls.vocab_size == 128000);
    CHECK(ls.max_seq == 8192);
    CHECK_THROWS_AS(encoder_preset("xl"), ptk::ConfigError);
    for (const char* n : {"tiny", "base", "large"}) {
        const auto c = encoder_preset(n);
        CHECK(c.hidden % c.heads == 0);
        CHECK(c.head_dim() % 2 == 0);
    }
}

TEST_CASE("config validation") {
    auto c = small_config();
    c.heads = 3;
    CHECK_THROWS_AS(c.validate(), ptk::ConfigError);
    c = small_config();
    c.hidden = 18;  // head_dim 9
    CHECK_THROWS_AS(c.validate(), ptk::ConfigError);
}

TEST_CASE("rope thetas") {
    const auto r = make_rope(10000.0, 4);
    REQUIRE(r.thetas.size() == 2);
    CHECK(r.thetas[0] == 1.0);
    CHECK(r.thetas[1] == doctest::Approx(0.01).epsilon(1e-15));
    const auto big = make_rope(10000.0, 64);
    for (std::size_t i = 1; i < big.thetas.size(); ++i) {
        REQUIRE(big.thetas[i] < big.thetas[i - 1]);
        REQUIRE(big.thetas[i] > 0.0);
    }
    CHECK_THROWS_AS(make_rope(10000.0, 5), ptk::ConfigError);
    CHECK_THROWS_AS(make_rope(10000.0, 0), ptk::ConfigError);
    CHECK_THROWS_AS(make_rope(0.0, 4), ptk::ConfigError);
}

TEST_CASE("rope keeps position 0 and pair norms") {
    ptk::Rng rng(1);
    const auto r = make_rope(10000.0, 32);
    const Matrix x = random_matrix(300, 32, rng);
    const Matrix y = rope_apply(x, r);
    for (std::size_t c = 0; c < 32; ++c) CHECK(y(0, c) == x(0, c));
    double worst = 0.0;
    for (std::size_t p = 0; p < 300; ++p) {
        for (std::size_t i = 0; i < 16; ++i) {
            const double a = std::hypot(x(p, 2 * i), x(p, 2 * i + 1));
            const double b = std::hypot(y(p, 2 * i), y(p, 2 * i + 1));
            worst = std::max(worst, std::abs(a - b));
        }
    }
    CHECK(worst <= 1e-6);
    Matrix z = y;
    rope_apply_inplace(z, r, true);
    for (std::size_t i = 0; i < z.data.size(); ++i) REQUIRE(z.data[i] == doctest::Approx(x.data[i]).epsilon(1e-12));
}

TEST_CASE("rope inner products depend only on the offset") {
    ptk::Rng rng(2);
    const auto r = make_rope(10000.0, 16);
    Matrix q(1, 16), k(1, 16);
    for (int trial = 0; trial < 20; ++trial) {
        for (auto& v : q.data) v = rng.normal();
        for (auto& v : k.data) v = rng.normal();
        for (std::size_t offset = 0; offset < 40; offset += 3) {
            double ref = 0.0;
            for (std::size_t p1 = 0; p1 < 200; p1 += 37) {
                const std::size_t p2 = p1 + offset;
                Matrix qs(p2 + 1, 16), ks(p2 + 1, 16);
                std::copy(q.data.begin(), q.data.end(), qs.row(p1).begin());
                std::copy(k.data.begin(), k.data.end(), ks.row(p2).begin());
                rope_apply_inplace(qs, r);
                rope_apply_inplace(ks, r);
                const double v = dot(qs.row(p1), ks.row(p2));
                if (p1 == 0) {
                    ref = v;
                } else {
                    REQUIRE(std::abs(v - ref) <= 1e-5);
                }
            }
        }
    }
}

TEST_CASE("larger base rotates more slowly") {
    const auto small = make_rope(1e4, 64);
    const auto large = make_rope(1e6, 64);
    CHECK(small.thetas[0] == large.thetas[0]);
    for (std::size_t i = 1; i < 32; ++i) REQUIRE(large.thetas[i] < small.thetas[i]);
}

TEST_CASE("attention basics") {
    ptk::Rng rng(3);
    const Matrix q1 = random_matrix(1, 8, rng), k1 = random_matrix(1, 8, rng), v1 = random_matrix(1, 8, rng);
    CHECK(attention(q1, k1, v1, {}).output == v1);

    const Matrix q = random_matrix(12, 8, rng), k = random_matrix(12, 8, rng), v = random_matrix(12, 8, rng);
    AttentionOptions local;
    local.kind = AttentionKind::local;
    local.window = 4;
    for (const auto& opt : {AttentionOptions{}, local}) {
        const auto res = attention(q, k, v, opt);
        for (std::size_t i = 0; i < 12; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < 12; ++j) s += res.weights(i, j);
            REQUIRE(std::abs(s - 1.0) <= 1e-6);
        }
    }
    const auto res = attention(q, k, v, local);
    for (std::size_t i = 0; i < 12; ++i) {
        for (std::size_t j = 0; j < 12; ++j) {
            const std::size_t dist = i > j ? i - j : j - i;
            if (2 * dist > 4) REQUIRE(res.weights(i, j) == 0.0);
        }
    }
    local.window = 0;
    CHECK_THROWS_AS(attention(q, k, v, local), ptk::ConfigError);
    CHECK_THROWS_AS(attention(q, random_matrix(11, 8, rng), v, {}), ptk::InputError);
}

TEST_CASE("local attention with a wide window equals global") {
    ptk::Rng rng(4);
    const Matrix q = random_matrix(10, 8, rng), k = random_matrix(10, 8, rng), v = random_matrix(10, 8, rng);
    AttentionOptions global;
    global.rope = make_rope(10000.0, 8);
    AttentionOptions local = global;
    local.kind = AttentionKind::local;
    local.window = 20;
    const auto a = attention(q, k, v, global);
    const auto b = attention(q, k, v, local);
    for (std::size_t i = 0; i < a.output.data.size(); ++i) REQUIRE(std::abs(a.output.data[i] - b.output.data[i]) <= 1e-12);
}

TEST_CASE("attention options follow the rotary schedule") {
    auto c = small_config();
    c.rope.switch_step = 100;
    CHECK(attention_options(c, AttentionKind::global, 99).rope->base == 10000.0);
    CHECK(attention_options(c, AttentionKind::global, 100).rope->base == 1000000.0);
    CHECK(attention_options(c, AttentionKind::local, 100).rope->base == 10000.0);
    CHECK(attention_options(c, AttentionKind::local, 0).window == c.local_window);
    c.use_rope = false;
    CHECK_FALSE(attention_options(c, AttentionKind::global, 0).rope.has_value());
}

TEST_CASE("forward contract") {
    const auto c = small_config();
    const auto p = init_parameters(c, 5);
    CHECK(p.all_finite());
    const std::vector<TokenId> ids{1, 2, 3, 4, 5, 6, 7, 8};
    const auto a = forward(c, p, ids, 0);
    CHECK(a.logits().rows == 8);
    CHECK(a.logits().cols == 50);
    CHECK(forward(c, p, ids, 0).logits() == a.logits());
    for (const double v : a.logits().data) REQUIRE(std::isfinite(v));
    CHECK_THROWS_AS(forward(c, p, std::vector<TokenId>{50}, 0), ptk::InputError);
    CHECK_THROWS_AS(forward(c, p, std::vector<TokenId>(33, 1), 0), ptk::InputError);
    CHECK_THROWS_AS(forward(c, p, std::vector<TokenId>{}, 0), ptk::InputError);
}

TEST_CASE("tiny preset output shape") {
    const auto c = encoder_preset("tiny");
    const auto p = init_parameters(c, 1);
    const std::vector<TokenId> ids{0, 100, 2000, 27263, 5, 6, 7, 8};
    const auto f = forward(c, p, ids, 0);
    CHECK(f.logits().rows == 8);
    CHECK(f.logits().cols == 27264);
}

TEST_CASE("init is seeded and scaled") {
    const auto c = small_config();
    const auto a = init_parameters(c, 9);
    CHECK(a == init_parameters(c, 9));
    CHECK_FALSE(a == init_parameters(c, 10));
    for (const double v : a.at("layers.0.attn_norm").values) REQUIRE(v == 1.0);
    auto rms = [](const ParamTensor& t) {
        double s = 0.0;
        for (const double v : t.values) s += v * v;
        return std::sqrt(s / static_cast<double>(t.numel()));
    };
    CHECK(rms(a.at("layers.0.wo")) < rms(a.at("layers.0.wqkv")));
    CHECK(a.at("tok_embeddings").shape == std::vector<std::size_t>{50, 16});
    CHECK(a.at("layers.1.wi").shape == std::vector<std::size_t>{48, 16});
}

TEST_CASE("permutation equivariance without positions") {
    auto c = small_config();
    c.layers = 1;
    c.global_layer_period = 1;
    c.use_rope = false;
    const auto p = init_parameters(c, 6);
    const std::vector<TokenId> ids{3, 9, 14, 27, 41, 8};
    std::vector<TokenId> swapped = ids;
    std::swap(swapped[1], swapped[4]);
    const auto a = forward(c, p, ids, 0).logits();
    const auto b = forward(c, p, swapped, 0).logits();
    const std::size_t perm[] = {0, 4, 2, 3, 1, 5};
    for (std::size_t r = 0; r < 6; ++r) {
        for (std::size_t v = 0; v < c.vocab_size; ++v) REQUIRE(std::abs(a(perm[r], v) - b(r, v)) <= 1e-12);
    }
}

TEST_CASE("mlm loss") {
    Matrix uniform(4, 50);
    const std::vector<std::int32_t> labels{3, kIgnoreLabel, 7, 0};
    const auto l = mlm_loss(uniform, labels);
    CHECK(l.loss == doctest::Approx(std::log(50.0)).epsilon(1e-14));
    CHECK(l.counted == 3);
    for (std::size_t v = 0; v < 50; ++v) CHECK(l.dlogits(1, v) == 0.0);
    Matrix sharp(1, 5);
    sharp(0, 2) = 100.0;
    CHECK(mlm_loss(sharp, std::vector<std::int32_t>{2}).loss < 1e-30);
    CHECK_THROWS_AS(mlm_loss(uniform, std::vector<std::int32_t>(4, kIgnoreLabel)), ptk::InputError);
    CHECK_THROWS_AS(mlm_loss(uniform, std::vector<std::int32_t>{1}), ptk::InputError);
}

TEST_CASE("analytic gradient matches central differences") {
    for (const bool tied : {true, false}) {
        CAPTURE(tied);
        auto c = small_config();
        c.tied_embeddings = tied;
        auto p = init_parameters(c, 12);
        const std::vector<TokenId> ids{1, 17, 4, 33, 49, 2, 8, 21, 30, 11};
        const std::vector<std::int32_t> labels{kIgnoreLabel, 5, kIgnoreLabel, 12, 40, kIgnoreLabel, 3, 19,
                                               kIgnoreLabel, 44};
        const auto fwd = forward(c, p, ids, 0);
        const auto loss = mlm_loss(fwd.logits(), labels);
        Parameters grads(c);
        backward(c, p, fwd, loss.dlogits, grads);
        CHECK(grads.all_finite());

        ptk::Rng rng(31);
        auto& tensors = p.tensors();
        double worst = 0.0;
        int checked = 0;
        while (checked < 10) {
            const std::size_t t = rng.below(tensors.size());
            const std::size_t i = rng.below(tensors[t].numel());
            const double analytic = grads.tensors()[t].values[i];
            if (std::abs(analytic) < 1e-6) continue;  // no signal to compare against
            const double h = 1e-5;
            const double orig = tensors[t].values[i];
            tensors[t].values[i] = orig + h;
            const double up = loss_of(c, p, ids, labels);
            tensors[t].values[i] = orig - h;
            const double down = loss_of(c, p, ids, labels);
            tensors[t].values[i] = orig;
            const double numeric = (up - down) / (2 * h);
            const double rel = std::abs(analytic - numeric) / std::max(std::abs(analytic), std::abs(numeric));
            CAPTURE(tensors[t].name);
            CHECK(rel < 1e-4);
            worst = std::max(worst, rel);
            ++checked;
        }
        MESSAGE("worst relative error " << worst);
    }
}

TEST_CASE("checkpoint round trip") {
    auto c = small_config();
    c.rope.switch_step = 170;
    const auto p = init_parameters(c, 13);
    const auto path = std::filesystem::path(PTK_SCRATCH_DIR) / "unit-roundtrip.ptkc";
    save_checkpoint(path, c, p, 194);
    const auto ck = load_checkpoint(path);
    CHECK(ck.step == 194);
    CHECK(ck.params == p);
    CHECK(ck.config.hidden == 16);
    CHECK(ck.config.rope.switch_step == 170);
    CHECK(config_from_json(config_to_json(c)).local_window == c.local_window);
    const auto bad = std::filesystem::path(PTK_SCRATCH_DIR) / "unit-bad.ptkc";
    {
        std::ofstream out(bad, std::ios::binary);
        out << "NOTACKPT";
    }
    CHECK_THROWS_AS(load_checkpoint(bad), ptk::InputError);
    CHECK_THROWS_AS(load_checkpoint(std::filesystem::path(PTK_SCRATCH_DIR) / "missing.ptkc"), ptk::IoError);
}

}  // TEST_SUITE
