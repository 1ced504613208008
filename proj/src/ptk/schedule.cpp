// SPDX-License-Identifier: Apache-2.0

#include "ptk/schedule.hpp"

#include "ptk/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

namespace ptk::schedule {

namespace {

void check_step(const TrainingTimeline& t, Step step) {
    if (step > t.total_steps) {
        throw RangeError("step " + std::to_string(step) + " outside [0, " + std::to_string(t.total_steps) + "]");
    }
}

// Reference run length the phase fractions are defined against.
constexpr double kReferenceSteps = 138000.0;

}  // namespace

void TrainingTimeline::validate() const {
    if (lr_warmup_steps == 0) {
        throw ConfigError("timeline: lr_warmup_steps must be > 0");
    }
    if (lr_warmup_steps > batch_warmup_steps) {
        throw ConfigError("timeline: lr_warmup_steps must be <= batch_warmup_steps");
    }
    if (batch_warmup_steps >= stable_end_step) {
        throw ConfigError("timeline: batch_warmup_steps must be < stable_end_step");
    }
    if (stable_end_step >= decay_start_step) {
        throw ConfigError("timeline: stable_end_step must be < decay_start_step");
    }
    if (decay_start_step >= total_steps) {
        throw ConfigError("timeline: decay_start_step must be < total_steps");
    }
    if (total_steps - stable_end_step < kExtensionStages) {
        throw ConfigError("timeline: fewer steps after stable_end_step than extension stages");
    }
    if (!(stable_lr > 0.0) || !(extension_lr > 0.0)) {
        throw ConfigError("timeline: learning rates must be positive");
    }
    if (full_batch_tokens == 0 || initial_batch_tokens == 0 || initial_batch_tokens > full_batch_tokens) {
        throw ConfigError("timeline: need 0 < initial_batch_tokens <= full_batch_tokens");
    }
    if (stable_seq_len == 0 || extension_stage_lengths[0] <= stable_seq_len) {
        throw ConfigError("timeline: first extension length must exceed stable_seq_len");
    }
    for (std::size_t i = 1; i < kExtensionStages; ++i) {
        if (extension_stage_lengths[i] <= extension_stage_lengths[i - 1]) {
            throw ConfigError("timeline: extension_stage_lengths must be strictly increasing");
        }
    }
}

TrainingTimeline TrainingTimeline::scaled_to(Step new_total) const {
    TrainingTimeline t = *this;
    const double f = static_cast<double>(new_total) / kReferenceSteps;
    auto at = [f](double ref) { return static_cast<Step>(std::llround(ref * f)); };
    t.total_steps = new_total;
    t.lr_warmup_steps = std::max<Step>(1, at(1380));
    t.batch_warmup_steps = std::max(t.lr_warmup_steps, at(4002));
    t.stable_end_step = std::max(t.batch_warmup_steps + 1, at(117300));
    t.decay_start_step = std::max(t.stable_end_step + 1, at(133860));
    t.validate();
    return t;
}

void RoPEBaseSchedule::validate() const {
    if (!(global_base_stable > 0.0) || !(local_base > 0.0)) {
        throw ConfigError("rope: bases must be positive");
    }
    if (!(global_base_extended > global_base_stable)) {
        throw ConfigError("rope: global_base_extended must exceed global_base_stable");
    }
}

TrainingTimeline timeline_preset(std::string_view name) {
    TrainingTimeline t;
    // LR pairs per model size; batch sizes are the stable-phase averages.
    if (name == "tiny") {
        t.stable_lr = 8e-4;
        t.extension_lr = 5e-4;
        t.full_batch_tokens = 3'300'000;
    } else if (name == "base") {
        t.stable_lr = 5e-4;
        t.extension_lr = 3e-4;
        t.full_batch_tokens = 3'100'000;
    } else if (name == "large") {
        t.stable_lr = 3e-4;
        t.extension_lr = 5e-5;
        t.full_batch_tokens = 3'000'000;
    } else if (name == "tiny-short" || name == "base-short" || name == "large-short") {
        t = timeline_preset(name.substr(0, name.find('-')));
        t.full_batch_tokens = 2'800'000;
        t.extension_stage_lengths = {1536, 2048, 3072, 4096, 6144, 8192};
    } else {
        throw ConfigError("unknown timeline preset '" + std::string(name) + "'");
    }
    t.initial_batch_tokens = t.full_batch_tokens / 100;
    return t;
}

RoPEBaseSchedule rope_schedule_for(const TrainingTimeline& timeline) {
    RoPEBaseSchedule r;
    r.switch_step = timeline.stable_end_step;
    return r;
}

double lr_at(const TrainingTimeline& t, Step step) {
    check_step(t, step);
    if (step <= t.lr_warmup_steps) {
        return t.stable_lr * static_cast<double>(step) / static_cast<double>(t.lr_warmup_steps);
    }
    if (step < t.stable_end_step) {
        return t.stable_lr;
    }
    if (step < t.decay_start_step) {
        return t.extension_lr;
    }
    const double progress = static_cast<double>(step - t.decay_start_step) / static_cast<double>(t.decay_steps());
    return t.extension_lr * (1.0 - std::sqrt(progress));
}

std::uint64_t batch_tokens_at(const TrainingTimeline& t, Step step) {
    check_step(t, step);
    if (step >= t.batch_warmup_steps) {
        return t.full_batch_tokens;
    }
    const double span = static_cast<double>(t.full_batch_tokens - t.initial_batch_tokens);
    const double v = static_cast<double>(t.initial_batch_tokens) +
                     span * static_cast<double>(step) / static_cast<double>(t.batch_warmup_steps);
    return static_cast<std::uint64_t>(std::llround(v));
}

std::uint32_t seq_len_at(const TrainingTimeline& t, Step step) {
    check_step(t, step);
    if (step < t.stable_end_step) {
        return t.stable_seq_len;
    }
    const Step share = (t.total_steps - t.stable_end_step) / kExtensionStages;
    const Step stage = std::min<Step>(kExtensionStages - 1, (step - t.stable_end_step) / share);
    return t.extension_stage_lengths[stage];
}

double rope_base_at(const RoPEBaseSchedule& sched, Step step, LayerKind kind) {
    if (kind == LayerKind::local) {
        return sched.local_base;
    }
    return step < sched.switch_step ? sched.global_base_stable : sched.global_base_extended;
}

void dump_schedule(std::ostream& out, const TrainingTimeline& t, const RoPEBaseSchedule& rope, Step stride,
                   char delim) {
    if (stride == 0) {
        throw ConfigError("schedule dump: stride must be > 0");
    }
    out << "step" << delim << "lr" << delim << "batch_tokens" << delim << "seq_len" << delim << "global_rope_base"
        << '\n';
    char buf[64];
    auto row = [&](Step s) {
        std::snprintf(buf, sizeof buf, "%.9g", lr_at(t, s));
        out << s << delim << buf << delim << batch_tokens_at(t, s) << delim << seq_len_at(t, s) << delim;
        std::snprintf(buf, sizeof buf, "%.9g", rope_base_at(rope, s, LayerKind::global));
        out << buf << '\n';
    };
    for (Step s = 0; s <= t.total_steps; s += stride) {
        row(s);
        if (t.total_steps - s < stride) {
            if (s != t.total_steps) {
                row(t.total_steps);
            }
            break;
        }
    }
}

}  // namespace ptk::schedule
