// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>

namespace ptk::schedule {

using Step = std::uint64_t;

inline constexpr std::size_t kExtensionStages = 6;

/// Phase boundaries and per-step schedules of one pretraining run.
///
/// Steps [0, stable_end_step) form the stable phase (LR warmup and batch-size
/// warmup both happen inside it), [stable_end_step, decay_start_step) the
/// context-extension phase at the second constant LR, and
/// [decay_start_step, total_steps] the annealing phase with 1 - sqrt decay.
struct TrainingTimeline {
    Step total_steps = 138000;
    Step lr_warmup_steps = 1380;
    Step batch_warmup_steps = 4002;
    Step stable_end_step = 117300;
    Step decay_start_step = 133860;
    double stable_lr = 8e-4;
    double extension_lr = 5e-4;
    std::uint64_t full_batch_tokens = 3'300'000;
    std::uint64_t initial_batch_tokens = 33'000;
    std::array<std::uint32_t, kExtensionStages> extension_stage_lengths{2048, 4096, 6144, 8192, 12288, 16384};
    std::uint32_t stable_seq_len = 1024;

    Step decay_steps() const noexcept { return total_steps - decay_start_step; }

    /// Throws ConfigError naming the first violated ordering constraint.
    void validate() const;

    /// Same phase fractions on a shorter run (desk-scale training).
    TrainingTimeline scaled_to(Step new_total) const;
};

enum class LayerKind { global, local };

struct RoPEBaseSchedule {
    double global_base_stable = 10000.0;
    double global_base_extended = 1000000.0;
    Step switch_step = 117300;
    double local_base = 10000.0;

    void validate() const;
};

/// Preset timelines: "tiny", "base", "large" and their "-short" variants
/// (final context 8192 and the 128K-vocabulary batch sizes).
TrainingTimeline timeline_preset(std::string_view name);
RoPEBaseSchedule rope_schedule_for(const TrainingTimeline& timeline);

double lr_at(const TrainingTimeline& timeline, Step step);
std::uint64_t batch_tokens_at(const TrainingTimeline& timeline, Step step);
std::uint32_t seq_len_at(const TrainingTimeline& timeline, Step step);
double rope_base_at(const RoPEBaseSchedule& sched, Step step, LayerKind kind);

/// Writes one delimiter-separated row per `stride` steps, always including the
/// final step: step, lr, batch_tokens, seq_len, global_rope_base.
void dump_schedule(std::ostream& out, const TrainingTimeline& timeline, const RoPEBaseSchedule& rope,
                   Step stride = 1, char delim = '\t');

}  // namespace ptk::schedule
