// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "ptk/document.hpp"
#include "ptk/encoder.hpp"
#include "ptk/schedule.hpp"
#include "ptk/tokenize.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ptk::trainer {

using TokenId = encoder::TokenId;

struct OptimizerSettings {
    double beta1 = 0.9;
    double beta2 = 0.98;
    double epsilon = 1e-6;
    double weight_decay = 1e-5;

    void validate() const;
};

/// Weight decay 1e-6 for the large sizes, 1e-5 otherwise.
OptimizerSettings optimizer_for_preset(std::string_view preset);

struct MaskingPolicy {
    double mask_rate = 0.30;
    double mask_frac = 0.8;
    double random_frac = 0.1;
    double keep_frac = 0.1;
    TokenId mask_id = 4;
    std::uint32_t vocab_size = 0;  // random replacements come from [0, vocab_size) minus never_mask
    std::set<TokenId> never_mask;

    void validate() const;
};

/// Policy for a vocabulary: [MASK] from its specials, all specials protected.
MaskingPolicy masking_for(const tokenize::Vocabulary& vocab, std::uint32_t model_vocab_size);

enum class Corruption : std::uint8_t { none, mask, random, keep };

struct MaskedSequence {
    std::vector<TokenId> ids;
    std::vector<std::int32_t> labels;
    std::vector<Corruption> corruption;
    std::size_t selected = 0;
    std::vector<std::string> warnings;
};

/// Per-position randomness is a pure function of (seed, step, row, position),
/// so results never depend on how sequences are distributed over threads.
MaskedSequence apply_masking(std::span<const TokenId> ids, const MaskingPolicy& policy, std::uint64_t seed,
                             schedule::Step step = 0, std::uint64_t row = 0);

struct MaskStats {
    std::uint64_t maskable = 0;
    std::uint64_t protected_tokens = 0;
    std::uint64_t selected = 0;
    std::uint64_t masked = 0;
    std::uint64_t randomized = 0;
    std::uint64_t kept = 0;
    std::uint64_t protected_selected = 0;  // must stay 0

    double selection_rate() const noexcept;
    double share(std::uint64_t part) const noexcept;
};

/// Masks a synthetic stream of `maskable` ordinary ids (uniform over the
/// non-protected range) with a protected id inserted every `special_every`
/// positions (0 = none), in rows of `row_len`, and tallies the outcome.
MaskStats mask_statistics(const MaskingPolicy& policy, std::uint64_t maskable, std::uint64_t special_every,
                          std::uint64_t seed, std::size_t row_len = 512);
void write_mask_stats(std::ostream& out, const MaskStats& stats, char delim = '\t');

// ---------------------------------------------------------------------------
// AdamW

class AdamW {
public:
    AdamW(const encoder::Parameters& shape_like, OptimizerSettings settings);

    /// One update with learning rate `lr`. Weight decay is decoupled
    /// (p *= 1 - lr * wd) and applies to matrices only.
    void step(encoder::Parameters& params, const encoder::Parameters& grads, double lr);
    std::uint64_t steps_taken() const noexcept { return t_; }

private:
    OptimizerSettings s_;
    encoder::Parameters m_;
    encoder::Parameters v_;
    std::uint64_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Token accounting

enum class Phase { warmup, stable, context_extension, annealing };
inline constexpr std::array<Phase, 4> kPhases{Phase::warmup, Phase::stable, Phase::context_extension,
                                              Phase::annealing};
std::string_view phase_label(Phase p) noexcept;  // W, S, C, A

/// Step counts of W [0, batch_warmup), S [batch_warmup, stable_end),
/// C [stable_end, decay_start), A [decay_start, total).
std::array<schedule::Step, 4> phase_steps(const schedule::TrainingTimeline& timeline);

struct PhaseTokens {
    schedule::Step steps = 0;
    double tokens = 0.0;
    double avg_batch_tokens = 0.0;
};

struct TokenLedger {
    std::array<PhaseTokens, 4> per_phase{};

    PhaseTokens& operator[](Phase p) noexcept { return per_phase[static_cast<std::size_t>(p)]; }
    const PhaseTokens& operator[](Phase p) const noexcept { return per_phase[static_cast<std::size_t>(p)]; }
    double total_tokens() const noexcept;
};

/// tokens = steps * avg batch per phase.
TokenLedger account_tokens(const schedule::TrainingTimeline& timeline, const std::array<double, 4>& avg_batch_tokens);
/// tokens = sum of batch_tokens_at over each phase's steps.
TokenLedger analytic_ledger(const schedule::TrainingTimeline& timeline);
void write_ledger(std::ostream& out, const TokenLedger& ledger, char delim = '\t');

/// One row of the published per-model token table (tokens and batch sizes
/// as printed, i.e. rounded to 0.1B / 0.1M).
struct ReportedTokens {
    std::string model;
    std::array<double, 4> phase_tokens;
    double total_tokens;
    std::array<double, 4> avg_batch_tokens;
};

const std::vector<ReportedTokens>& reported_token_table();

// ---------------------------------------------------------------------------
// Training

struct TrainOptions {
    encoder::EncoderConfig encoder;
    schedule::TrainingTimeline timeline;
    OptimizerSettings optimizer;
    MaskingPolicy masking;
    std::uint64_t seed = 0;
    unsigned threads = 1;
    std::filesystem::path output_dir;  // checkpoints and loss trace; empty = none written
    bool checkpoints = true;
};

struct TraceRow {
    schedule::Step step = 0;
    double lr = 0.0;
    std::uint64_t batch_tokens = 0;
    std::uint32_t seq_len = 0;
    double loss = 0.0;
};

struct TrainResult {
    std::vector<TraceRow> trace;
    TokenLedger ledger;  // tokens actually fed, per phase
    encoder::Parameters params;
    std::vector<std::filesystem::path> checkpoints;
};

/// Packs each document as [CLS] tokens [SEP] into one stream, cuts it into
/// sequences of seq_len_at(step), and runs total_steps AdamW steps. When the
/// stream runs out the document order is reshuffled and packing continues.
TrainResult train(const TrainOptions& options, const tokenize::Vocabulary& vocab, std::span<const Document> corpus);

void write_trace(std::ostream& out, std::span<const TraceRow> trace, char delim = '\t');

}  // namespace ptk::trainer
