// SPDX-License-Identifier: Apache-2.0

#include "ptk/trainer.hpp"

#include "ptk/error.hpp"
#include "ptk/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <thread>

namespace ptk::trainer {

namespace {

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

__extension__ using u128 = unsigned __int128;

// Maps 64 random bits onto [0, bound) by multiply-shift.
std::uint64_t below(std::uint64_t bits, std::uint64_t bound) {
    return static_cast<std::uint64_t>((static_cast<u128>(bits) * bound) >> 64);
}

}  // namespace

void OptimizerSettings::validate() const {
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("optimizer: beta1 must be in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("optimizer: beta2 must be in [0, 1)");
    if (!(epsilon > 0.0)) throw ConfigError("optimizer: epsilon must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("optimizer: weight_decay must be >= 0");
}

OptimizerSettings optimizer_for_preset(std::string_view preset) {
    OptimizerSettings s;
    if (preset.starts_with("large")) s.weight_decay = 1e-6;
    return s;
}

void MaskingPolicy::validate() const {
    if (!(mask_rate >= 0.0 && mask_rate < 1.0)) throw ConfigError("masking: mask_rate must be in [0, 1)");
    if (mask_frac < 0.0 || random_frac < 0.0 || keep_frac < 0.0) {
        throw ConfigError("masking: corruption split must be non-negative");
    }
    if (std::abs(mask_frac + random_frac + keep_frac - 1.0) > 1e-9) {
        throw ConfigError("masking: corruption split must sum to 1");
    }
    if (random_frac > 0.0) {
        if (vocab_size == 0) throw ConfigError("masking: vocab_size required for random replacement");
        std::size_t protected_ids = 0;
        for (auto id : never_mask) protected_ids += id < vocab_size ? 1 : 0;
        if (protected_ids >= vocab_size) throw ConfigError("masking: no ids left for random replacement");
    }
}

MaskingPolicy masking_for(const tokenize::Vocabulary& vocab, std::uint32_t model_vocab_size) {
    MaskingPolicy p;
    p.mask_id = vocab.special_id("[MASK]");
    p.vocab_size = static_cast<std::uint32_t>(std::min<std::size_t>(vocab.size(), model_vocab_size));
    for (TokenId id = 0; id < vocab.specials().size(); ++id) p.never_mask.insert(id);
    return p;
}

MaskedSequence apply_masking(std::span<const TokenId> ids, const MaskingPolicy& policy, std::uint64_t seed,
                             schedule::Step step, std::uint64_t row) {
    if (ids.empty()) throw InputError("apply_masking: empty sequence");
    MaskedSequence out;
    out.ids.assign(ids.begin(), ids.end());
    out.labels.assign(ids.size(), encoder::kIgnoreLabel);
    out.corruption.assign(ids.size(), Corruption::none);
    const std::uint64_t key = mix64(mix64(substream_seed(seed, "trainer/mask") ^ mix64(step)) ^ mix64(row + kGolden));
    std::size_t maskable = 0;
    for (std::size_t pos = 0; pos < ids.size(); ++pos) {
        if (policy.never_mask.contains(ids[pos])) continue;
        ++maskable;
        const std::uint64_t r0 = mix64(key ^ (pos * kGolden));
        if (!(to_unit(r0) < policy.mask_rate)) continue;
        ++out.selected;
        out.labels[pos] = static_cast<std::int32_t>(ids[pos]);
        const std::uint64_t r1 = mix64(r0);
        const double u = to_unit(r1);
        if (u < policy.mask_frac) {
            out.ids[pos] = policy.mask_id;
            out.corruption[pos] = Corruption::mask;
        } else if (u < policy.mask_frac + policy.random_frac) {
            std::uint64_t r = r1;
            TokenId repl;
            do {
                r = mix64(r);
                repl = static_cast<TokenId>(below(r, policy.vocab_size));
            } while (policy.never_mask.contains(repl));
            out.ids[pos] = repl;
            out.corruption[pos] = Corruption::random;
        } else {
            out.corruption[pos] = Corruption::keep;
        }
    }
    if (maskable == 0) out.warnings.push_back("sequence contains only protected tokens; nothing selected");
    return out;
}

double MaskStats::selection_rate() const noexcept {
    return maskable == 0 ? 0.0 : static_cast<double>(selected) / static_cast<double>(maskable);
}

double MaskStats::share(std::uint64_t part) const noexcept {
    return selected == 0 ? 0.0 : static_cast<double>(part) / static_cast<double>(selected);
}

MaskStats mask_statistics(const MaskingPolicy& policy, std::uint64_t maskable, std::uint64_t special_every,
                          std::uint64_t seed, std::size_t row_len) {
    policy.validate();
    if (row_len == 0) throw ConfigError("mask_statistics: row_len must be positive");
    std::vector<TokenId> pool;
    std::vector<TokenId> protected_ids(policy.never_mask.begin(), policy.never_mask.end());
    for (TokenId id = 0; id < policy.vocab_size; ++id)
        if (!policy.never_mask.contains(id)) pool.push_back(id);
    if (pool.empty()) throw ConfigError("mask_statistics: no maskable ids in the vocabulary");
    if (special_every > 0 && protected_ids.empty()) throw ConfigError("mask_statistics: no protected ids to insert");

    Rng rng(substream_seed(seed, "trainer/mask-stats"));
    MaskStats st;
    std::vector<TokenId> row;
    std::uint64_t emitted = 0;
    std::uint64_t position = 0;
    std::uint64_t row_index = 0;
    auto flush = [&] {
        if (row.empty()) return;
        const auto m = apply_masking(row, policy, seed, 0, row_index++);
        for (std::size_t i = 0; i < row.size(); ++i) {
            const bool prot = policy.never_mask.contains(row[i]);
            if (prot) {
                ++st.protected_tokens;
                if (m.corruption[i] != Corruption::none) ++st.protected_selected;
                continue;
            }
            ++st.maskable;
            switch (m.corruption[i]) {
                case Corruption::none: break;
                case Corruption::mask: ++st.selected, ++st.masked; break;
                case Corruption::random: ++st.selected, ++st.randomized; break;
                case Corruption::keep: ++st.selected, ++st.kept; break;
            }
        }
        row.clear();
    };
    while (emitted < maskable) {
        ++position;
        if (special_every > 0 && position % special_every == 0) {
            row.push_back(protected_ids[rng.below(protected_ids.size())]);
        } else {
            row.push_back(pool[rng.below(pool.size())]);
            ++emitted;
        }
        if (row.size() == row_len) flush();
    }
    flush();
    return st;
}

void write_mask_stats(std::ostream& out, const MaskStats& s, char delim) {
    char buf[64];
    auto line = [&](const char* key, double v) {
        std::snprintf(buf, sizeof buf, "%.6f", v);
        out << key << delim << buf << '\n';
    };
    out << "metric" << delim << "value" << '\n';
    out << "maskable" << delim << s.maskable << '\n';
    out << "protected" << delim << s.protected_tokens << '\n';
    out << "selected" << delim << s.selected << '\n';
    out << "protected_selected" << delim << s.protected_selected << '\n';
    line("selection_rate", s.selection_rate());
    line("mask_share", s.share(s.masked));
    line("random_share", s.share(s.randomized));
    line("keep_share", s.share(s.kept));
}

// --- AdamW ------------------------------------------------------------------

AdamW::AdamW(const encoder::Parameters& shape_like, OptimizerSettings settings)
    : s_(settings), m_(shape_like), v_(shape_like) {
    s_.validate();
    m_.zero();
    v_.zero();
}

void AdamW::step(encoder::Parameters& params, const encoder::Parameters& grads, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(s_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(s_.beta2, static_cast<double>(t_));
    auto& pt = params.tensors();
    const auto& gt = grads.tensors();
    if (pt.size() != gt.size()) throw InputError("adamw: parameter and gradient layouts differ");
    for (std::size_t i = 0; i < pt.size(); ++i) {
        auto& p = pt[i].values;
        const auto& g = gt[i].values;
        auto& m = m_.tensors()[i].values;
        auto& v = v_.tensors()[i].values;
        const double decay = pt[i].shape.size() >= 2 ? 1.0 - lr * s_.weight_decay : 1.0;
        for (std::size_t k = 0; k < p.size(); ++k) {
            m[k] = s_.beta1 * m[k] + (1.0 - s_.beta1) * g[k];
            v[k] = s_.beta2 * v[k] + (1.0 - s_.beta2) * g[k] * g[k];
            const double update = (m[k] / bc1) / (std::sqrt(v[k] / bc2) + s_.epsilon);
            p[k] = p[k] * decay - lr * update;
        }
    }
}

// --- token accounting -------------------------------------------------------

std::string_view phase_label(Phase p) noexcept {
    switch (p) {
        case Phase::warmup: return "W";
        case Phase::stable: return "S";
        case Phase::context_extension: return "C";
        case Phase::annealing: return "A";
    }
    return "?";
}

std::array<schedule::Step, 4> phase_steps(const schedule::TrainingTimeline& t) {
    t.validate();
    return {t.batch_warmup_steps, t.stable_end_step - t.batch_warmup_steps, t.decay_start_step - t.stable_end_step,
            t.total_steps - t.decay_start_step};
}

double TokenLedger::total_tokens() const noexcept {
    double s = 0.0;
    for (const auto& p : per_phase) s += p.tokens;
    return s;
}

TokenLedger account_tokens(const schedule::TrainingTimeline& timeline, const std::array<double, 4>& avg) {
    const auto steps = phase_steps(timeline);
    TokenLedger l;
    for (std::size_t i = 0; i < 4; ++i) {
        l.per_phase[i].steps = steps[i];
        l.per_phase[i].avg_batch_tokens = avg[i];
        l.per_phase[i].tokens = static_cast<double>(steps[i]) * avg[i];
    }
    return l;
}

TokenLedger analytic_ledger(const schedule::TrainingTimeline& timeline) {
    const auto steps = phase_steps(timeline);
    TokenLedger l;
    schedule::Step s = 0;
    for (std::size_t i = 0; i < 4; ++i) {
        std::uint64_t sum = 0;
        for (schedule::Step k = 0; k < steps[i]; ++k, ++s) sum += schedule::batch_tokens_at(timeline, s);
        auto& p = l.per_phase[i];
        p.steps = steps[i];
        p.tokens = static_cast<double>(sum);
        p.avg_batch_tokens = steps[i] == 0 ? 0.0 : p.tokens / static_cast<double>(steps[i]);
    }
    return l;
}

void write_ledger(std::ostream& out, const TokenLedger& ledger, char delim) {
    out << "phase" << delim << "steps" << delim << "tokens" << delim << "avg_batch_tokens" << '\n';
    char buf[64];
    for (auto p : kPhases) {
        const auto& row = ledger[p];
        out << phase_label(p) << delim << row.steps << delim;
        std::snprintf(buf, sizeof buf, "%.0f", row.tokens);
        out << buf << delim;
        std::snprintf(buf, sizeof buf, "%.1f", row.avg_batch_tokens);
        out << buf << '\n';
    }
    std::snprintf(buf, sizeof buf, "%.0f", ledger.total_tokens());
    out << "total" << delim << std::accumulate(ledger.per_phase.begin(), ledger.per_phase.end(), schedule::Step{0},
                                               [](schedule::Step a, const PhaseTokens& p) { return a + p.steps; })
        << delim << buf << delim << '\n';
}

const std::vector<ReportedTokens>& reported_token_table() {
    constexpr double B = 1e9;
    constexpr double M = 1e6;
    static const std::vector<ReportedTokens> rows = {
        {"tiny", {6.5 * B, 370.0 * B, 53.4 * B, 18.0 * B}, 447.9 * B, {1.6 * M, 3.3 * M, 3.2 * M, 4.4 * M}},
        {"tiny-edu", {6.5 * B, 370.0 * B, 53.4 * B, 9.4 * B}, 439.3 * B, {1.6 * M, 3.3 * M, 3.2 * M, 2.3 * M}},
        {"tiny-short", {5.6 * B, 320.4 * B, 31.3 * B, 4.9 * B}, 362.2 * B, {1.4 * M, 2.8 * M, 1.9 * M, 1.2 * M}},
        {"tiny-short-edu", {5.6 * B, 320.4 * B, 31.3 * B, 4.9 * B}, 362.2 * B, {1.4 * M, 2.8 * M, 1.9 * M, 1.2 * M}},
        {"base", {6.2 * B, 353.3 * B, 39.2 * B, 11.4 * B}, 410.2 * B, {1.6 * M, 3.1 * M, 2.4 * M, 2.8 * M}},
        {"base-edu", {6.2 * B, 353.3 * B, 39.2 * B, 5.9 * B}, 404.7 * B, {1.6 * M, 3.1 * M, 2.4 * M, 1.4 * M}},
        {"base-short", {5.7 * B, 320.4 * B, 34.1 * B, 4.9 * B}, 365.0 * B, {1.4 * M, 2.8 * M, 2.1 * M, 1.2 * M}},
        {"base-short-edu", {5.7 * B, 320.4 * B, 34.1 * B, 4.9 * B}, 365.0 * B, {1.4 * M, 2.8 * M, 2.1 * M, 1.2 * M}},
        {"large", {6.1 * B, 343.9 * B, 38.1 * B, 11.1 * B}, 399.2 * B, {1.5 * M, 3.0 * M, 2.3 * M, 2.7 * M}},
        {"large-edu", {6.1 * B, 343.9 * B, 38.1 * B, 5.6 * B}, 393.8 * B, {1.5 * M, 3.0 * M, 2.3 * M, 1.4 * M}},
        {"large-short", {5.7 * B, 320.3 * B, 31.3 * B, 4.9 * B}, 362.2 * B, {1.4 * M, 2.8 * M, 1.9 * M, 1.2 * M}},
        {"large-short-edu", {5.7 * B, 320.3 * B, 31.3 * B, 4.9 * B}, 362.2 * B, {1.4 * M, 2.8 * M, 1.9 * M, 1.2 * M}},
    };
    return rows;
}

// --- training ---------------------------------------------------------------

namespace {

// Streams [CLS] doc [SEP] units in a seeded order, reshuffling per epoch.
class Packer {
public:
    Packer(std::vector<std::vector<TokenId>> docs, std::uint64_t seed) : docs_(std::move(docs)), seed_(seed) {
        if (docs_.empty()) throw InputError("train: corpus is empty");
        order_.resize(docs_.size());
        reshuffle();
    }

    std::vector<TokenId> next(std::size_t len) {
        std::vector<TokenId> out;
        out.reserve(len);
        while (out.size() < len) {
            const auto& d = docs_[order_[doc_]];
            const std::size_t take = std::min(len - out.size(), d.size() - pos_);
            out.insert(out.end(), d.begin() + static_cast<std::ptrdiff_t>(pos_),
                       d.begin() + static_cast<std::ptrdiff_t>(pos_ + take));
            pos_ += take;
            if (pos_ == d.size()) {
                pos_ = 0;
                if (++doc_ == docs_.size()) {
                    ++epoch_;
                    reshuffle();
                }
            }
        }
        return out;
    }

    std::uint64_t epoch() const noexcept { return epoch_; }

private:
    void reshuffle() {
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        Rng rng(mix64(substream_seed(seed_, "trainer/shuffle") ^ mix64(epoch_)));
        rng.shuffle(std::span<std::size_t>(order_));
        doc_ = 0;
    }

    std::vector<std::vector<TokenId>> docs_;
    std::vector<std::size_t> order_;
    std::uint64_t seed_;
    std::uint64_t epoch_ = 0;
    std::size_t doc_ = 0;
    std::size_t pos_ = 0;
};

Phase phase_of(const schedule::TrainingTimeline& t, schedule::Step s) {
    if (s < t.batch_warmup_steps) return Phase::warmup;
    if (s < t.stable_end_step) return Phase::stable;
    if (s < t.decay_start_step) return Phase::context_extension;
    return Phase::annealing;
}

template <class F>
void parallel_for(std::size_t n, unsigned threads, F&& body) {
    const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n)));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += workers) body(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace

TrainResult train(const TrainOptions& opt, const tokenize::Vocabulary& vocab, std::span<const Document> corpus) {
    opt.encoder.validate();
    opt.timeline.validate();
    opt.optimizer.validate();
    opt.masking.validate();
    if (vocab.size() > opt.encoder.vocab_size) {
        throw ConfigError("train: tokenizer has " + std::to_string(vocab.size()) + " ids but encoder vocab_size is " +
                          std::to_string(opt.encoder.vocab_size));
    }
    for (schedule::Step s : {schedule::Step{0}, opt.timeline.total_steps}) {
        if (schedule::seq_len_at(opt.timeline, s) > opt.encoder.max_seq) {
            throw ConfigError("train: timeline sequence length exceeds encoder max_seq");
        }
    }

    const TokenId cls = vocab.special_id("[CLS]");
    const TokenId sep = vocab.special_id("[SEP]");
    std::vector<std::vector<TokenId>> encoded;
    encoded.reserve(corpus.size());
    for (const auto& d : corpus) {
        std::vector<TokenId> ids{cls};
        const auto body = vocab.encode(d.text);
        ids.insert(ids.end(), body.begin(), body.end());
        ids.push_back(sep);
        encoded.push_back(std::move(ids));
    }
    Packer packer(std::move(encoded), opt.seed);

    encoder::EncoderConfig enc = opt.encoder;
    enc.rope.switch_step = opt.timeline.stable_end_step;

    TrainResult result;
    result.params = encoder::init_parameters(enc, opt.seed);
    AdamW adam(result.params, opt.optimizer);
    encoder::Parameters grads(enc);
    std::vector<encoder::Parameters> seq_grads;

    if (!opt.output_dir.empty()) std::filesystem::create_directories(opt.output_dir);
    const std::array<schedule::Step, 3> boundaries{opt.timeline.stable_end_step, opt.timeline.decay_start_step,
                                                   opt.timeline.total_steps};

    for (schedule::Step step = 0; step < opt.timeline.total_steps; ++step) {
        const std::uint32_t seq_len = schedule::seq_len_at(opt.timeline, step);
        const std::uint64_t batch_tokens = schedule::batch_tokens_at(opt.timeline, step);
        const double lr = schedule::lr_at(opt.timeline, step);
        const std::size_t n_seq = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::llround(static_cast<double>(batch_tokens) / seq_len)));

        std::vector<MaskedSequence> batch;
        batch.reserve(n_seq);
        std::size_t counted = 0;
        for (std::size_t r = 0; r < n_seq; ++r) {
            batch.push_back(apply_masking(packer.next(seq_len), opt.masking, opt.seed, step, r));
            counted += batch.back().selected;
        }
        if (counted == 0) throw InputError("train: no positions selected for masking at step " + std::to_string(step));

        if (seq_grads.size() < n_seq) seq_grads.resize(n_seq, grads);
        std::vector<double> seq_loss(n_seq, 0.0);
        parallel_for(n_seq, opt.threads, [&](std::size_t r) {
            auto& g = seq_grads[r];
            g.zero();
            if (batch[r].selected == 0) return;
            auto fwd = encoder::forward(enc, result.params, batch[r].ids, step);
            auto loss = encoder::mlm_loss(fwd.logits(), batch[r].labels);
            const double w = static_cast<double>(loss.counted) / static_cast<double>(counted);
            for (auto& v : loss.dlogits.data) v *= w;
            seq_loss[r] = loss.loss * w;
            encoder::backward(enc, result.params, fwd, loss.dlogits, g);
        });

        // fixed-order reduction keeps results independent of thread count
        grads.zero();
        double batch_loss = 0.0;
        for (std::size_t r = 0; r < n_seq; ++r) {
            batch_loss += seq_loss[r];
            auto& dst = grads.tensors();
            const auto& src = seq_grads[r].tensors();
            for (std::size_t t = 0; t < dst.size(); ++t) {
                for (std::size_t k = 0; k < dst[t].values.size(); ++k) dst[t].values[k] += src[t].values[k];
            }
        }
        adam.step(result.params, grads, lr);
        if (!result.params.all_finite()) throw Error("train: non-finite parameters after step " + std::to_string(step));

        result.trace.push_back({step, lr, batch_tokens, seq_len, batch_loss});
        auto& ph = result.ledger[phase_of(opt.timeline, step)];
        ph.steps += 1;
        ph.tokens += static_cast<double>(n_seq * seq_len);

        const schedule::Step done = step + 1;
        if (opt.checkpoints && !opt.output_dir.empty() &&
            std::find(boundaries.begin(), boundaries.end(), done) != boundaries.end()) {
            auto path = opt.output_dir / ("checkpoint-step" + std::to_string(done) + ".ptkc");
            encoder::save_checkpoint(path, enc, result.params, done);
            result.checkpoints.push_back(std::move(path));
        }
    }
    for (auto& p : result.ledger.per_phase) {
        p.avg_batch_tokens = p.steps == 0 ? 0.0 : p.tokens / static_cast<double>(p.steps);
    }
    return result;
}

void write_trace(std::ostream& out, std::span<const TraceRow> trace, char delim) {
    out << "step" << delim << "lr" << delim << "batch_tokens" << delim << "seq_len" << delim << "loss" << '\n';
    char lr[40];
    char loss[40];
    for (const auto& r : trace) {
        std::snprintf(lr, sizeof lr, "%.17g", r.lr);
        std::snprintf(loss, sizeof loss, "%.17g", r.loss);
        out << r.step << delim << lr << delim << r.batch_tokens << delim << r.seq_len << delim << loss << '\n';
    }
}

}  // namespace ptk::trainer
