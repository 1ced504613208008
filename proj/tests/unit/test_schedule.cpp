// SPDX-License-Identifier: Apache-2.0

#include "doctest.h"

#include "ptk/error.hpp"
#include "ptk/rng.hpp"
#include "ptk/schedule.hpp"

#include <cmath>
#include <set>
#include <sstream>

using namespace ptk::schedule;

TEST_SUITE("schedule") {

TEST_CASE("default timeline boundaries") {
    const TrainingTimeline t;
    CHECK(t.total_steps == 138000);
    CHECK(t.lr_warmup_steps == 1380);
    CHECK(t.batch_warmup_steps == 4002);
    CHECK(t.stable_end_step == 117300);
    CHECK(t.decay_start_step == 133860);
    CHECK(t.decay_steps() == 4140);
    CHECK_NOTHROW(t.validate());
}

TEST_CASE("lr examples") {
    const auto t = timeline_preset("tiny");
    CHECK(lr_at(t, 0) == 0.0);
    CHECK(lr_at(t, 1380) == 8e-4);
    CHECK(lr_at(t, 135930) == doctest::Approx(1.4644660940672623e-4).epsilon(1e-14));
    CHECK(lr_at(t, t.total_steps) == 0.0);
    CHECK_THROWS_AS(lr_at(t, t.total_steps + 1), ptk::RangeError);
}

TEST_CASE("lr presets per model size") {
    CHECK(lr_at(timeline_preset("base"), 2000) == 5e-4);
    CHECK(lr_at(timeline_preset("base"), 120000) == 3e-4);
    CHECK(lr_at(timeline_preset("large"), 2000) == 3e-4);
    CHECK(lr_at(timeline_preset("large"), 120000) == 5e-5);
    CHECK_THROWS_AS(timeline_preset("huge"), ptk::ConfigError);
}

TEST_CASE("lr continuity and the single allowed jump") {
    const TrainingTimeline t;
    CHECK(lr_at(t, t.lr_warmup_steps - 1) == doctest::Approx(t.stable_lr).epsilon(1e-3));
    CHECK(lr_at(t, t.lr_warmup_steps + 1) == t.stable_lr);
    CHECK(lr_at(t, t.decay_start_step) == t.extension_lr);
    CHECK(lr_at(t, t.decay_start_step - 1) == t.extension_lr);
    CHECK(lr_at(t, t.stable_end_step - 1) == t.stable_lr);
    CHECK(lr_at(t, t.stable_end_step) == t.extension_lr);
    double prev = lr_at(t, t.decay_start_step);
    for (Step s = t.decay_start_step + 1; s <= t.total_steps; ++s) {
        const double v = lr_at(t, s);
        REQUIRE(v <= prev);
        prev = v;
    }
}

TEST_CASE("batch tokens") {
    const auto t = timeline_preset("tiny");
    CHECK(batch_tokens_at(t, 0) == 33000);
    CHECK(batch_tokens_at(t, 2001) == 1666500);
    CHECK(batch_tokens_at(t, 4002) == 3300000);
    CHECK(batch_tokens_at(t, 100000) == 3300000);
    std::uint64_t prev = 0;
    for (Step s = 0; s <= t.total_steps; s += 7) {
        REQUIRE(batch_tokens_at(t, s) >= prev);
        prev = batch_tokens_at(t, s);
    }
}

TEST_CASE("batch sum matches trapezoid area") {
    for (const char* name : {"tiny", "base-short"}) {
        const auto t = timeline_preset(name);
        double sum = 0.0;
        for (Step s = 0; s < t.total_steps; ++s) {
            sum += static_cast<double>(batch_tokens_at(t, s));
        }
        const double w = static_cast<double>(t.batch_warmup_steps);
        const double init = static_cast<double>(t.initial_batch_tokens);
        const double full = static_cast<double>(t.full_batch_tokens);
        const double area = w * init + (full - init) * (w - 1.0) / 2.0 +
                            full * static_cast<double>(t.total_steps - t.batch_warmup_steps);
        CHECK(std::abs(sum - area) <= static_cast<double>(t.total_steps));
    }
}

TEST_CASE("sequence length stages") {
    const TrainingTimeline t;
    CHECK(seq_len_at(t, 0) == 1024);
    CHECK(seq_len_at(t, 117299) == 1024);
    CHECK(seq_len_at(t, 117300) == 2048);
    CHECK(seq_len_at(t, 137999) == 16384);
    CHECK(seq_len_at(t, 138000) == 16384);
    std::set<std::uint32_t> distinct;
    std::uint32_t prev = 0;
    for (Step s = 0; s <= t.total_steps; ++s) {
        const auto v = seq_len_at(t, s);
        REQUIRE(v >= prev);
        prev = v;
        if (s >= t.stable_end_step) distinct.insert(v);
    }
    CHECK(distinct.size() == 6);
    // equal shares: 20700 / 6 = 3450 steps each
    CHECK(seq_len_at(t, 117300 + 3449) == 2048);
    CHECK(seq_len_at(t, 117300 + 3450) == 4096);
}

TEST_CASE("uneven extension split gives the remainder to the last stage") {
    auto t = TrainingTimeline{}.scaled_to(200);
    // 30 extension steps over 6 stages: 5 each
    CHECK(t.stable_end_step == 170);
    CHECK(seq_len_at(t, 174) == t.extension_stage_lengths[0]);
    CHECK(seq_len_at(t, 175) == t.extension_stage_lengths[1]);
    t.total_steps = 202;  // 32 extension steps: five stages of 5, the last gets 7
    REQUIRE_NOTHROW(t.validate());
    CHECK(seq_len_at(t, 194) == t.extension_stage_lengths[4]);
    CHECK(seq_len_at(t, 195) == t.extension_stage_lengths[5]);
    CHECK(seq_len_at(t, 202) == t.extension_stage_lengths[5]);
}

TEST_CASE("scaled timeline keeps phase fractions") {
    const auto t = TrainingTimeline{}.scaled_to(200);
    CHECK(t.lr_warmup_steps == 2);
    CHECK(t.batch_warmup_steps == 6);
    CHECK(t.stable_end_step == 170);
    CHECK(t.decay_start_step == 194);
    CHECK(t.total_steps == 200);
    const auto big = TrainingTimeline{}.scaled_to(138000);
    CHECK(big.stable_end_step == 117300);
    CHECK(big.decay_start_step == 133860);
}

TEST_CASE("timeline validation") {
    TrainingTimeline t;
    t.lr_warmup_steps = 0;
    CHECK_THROWS_AS(t.validate(), ptk::ConfigError);
    t = {};
    t.lr_warmup_steps = 5000;
    CHECK_THROWS_AS(t.validate(), ptk::ConfigError);
    t = {};
    t.decay_start_step = t.total_steps;
    CHECK_THROWS_AS(t.validate(), ptk::ConfigError);
    t = {};
    t.extension_stage_lengths[3] = t.extension_stage_lengths[2];
    CHECK_THROWS_AS(t.validate(), ptk::ConfigError);
    t = {};
    t.extension_stage_lengths[0] = 1024;
    CHECK_THROWS_AS(t.validate(), ptk::ConfigError);
}

TEST_CASE("rope base") {
    const RoPEBaseSchedule r;
    CHECK(rope_base_at(r, 0, LayerKind::global) == 10000.0);
    CHECK(rope_base_at(r, 117299, LayerKind::global) == 10000.0);
    CHECK(rope_base_at(r, 117300, LayerKind::global) == 1000000.0);
    CHECK(rope_base_at(r, 137999, LayerKind::local) == 10000.0);
    CHECK(rope_base_at(r, 0, LayerKind::local) == 10000.0);
    const auto scaled = rope_schedule_for(TrainingTimeline{}.scaled_to(200));
    CHECK(scaled.switch_step == 170);
    RoPEBaseSchedule bad;
    bad.global_base_extended = 5000;
    CHECK_THROWS_AS(bad.validate(), ptk::ConfigError);
}

TEST_CASE("dump includes the last step") {
    const auto t = TrainingTimeline{}.scaled_to(200);
    std::ostringstream out;
    dump_schedule(out, t, rope_schedule_for(t), 64, ',');
    const std::string s = out.str();
    CHECK(s.rfind("step,lr,batch_tokens,seq_len,global_rope_base\n", 0) == 0);
    CHECK(s.find("\n200,0,") != std::string::npos);
    CHECK(s.find("\n192,") != std::string::npos);
}

}  // TEST_SUITE
