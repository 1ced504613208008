// SPDX-License-Identifier: Apache-2.0

#include "ptk/ptk.h"

#include "ptk/config.hpp"
#include "ptk/cost.hpp"
#include "ptk/document.hpp"
#include "ptk/error.hpp"
#include "ptk/mixture.hpp"
#include "ptk/retrieval.hpp"
#include "ptk/schedule.hpp"
#include "ptk/tokenize.hpp"
#include "ptk/trainer.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <new>
#include <sstream>
#include <string>

struct ptk_text {
    std::string data;
};

struct ptk_timeline {
    ptk::schedule::TrainingTimeline timeline;
    ptk::schedule::RoPEBaseSchedule rope;
};

struct ptk_vocab {
    ptk::tokenize::Vocabulary vocab;
};

namespace {

thread_local std::string g_last_error;

ptk_status fail(ptk_status status, const char* what) {
    g_last_error = what;
    return status;
}

// Runs `body`, translating exceptions into status codes.
template <class F>
ptk_status guarded(F&& body) noexcept {
    try {
        body();
        g_last_error.clear();
        return PTK_OK;
    } catch (const ptk::ConfigError& e) {
        return fail(PTK_ERR_CONFIG, e.what());
    } catch (const ptk::RangeError& e) {
        return fail(PTK_ERR_RANGE, e.what());
    } catch (const ptk::InputError& e) {
        return fail(PTK_ERR_INPUT, e.what());
    } catch (const ptk::IoError& e) {
        return fail(PTK_ERR_IO, e.what());
    } catch (const std::filesystem::filesystem_error& e) {
        return fail(PTK_ERR_IO, e.what());
    } catch (const std::bad_alloc&) {
        return fail(PTK_ERR_INTERNAL, "out of memory");
    } catch (const std::exception& e) {
        return fail(PTK_ERR_INTERNAL, e.what());
    } catch (...) {
        return fail(PTK_ERR_INTERNAL, "unknown error");
    }
}

void require(const void* p, const char* name) {
    if (p == nullptr) throw ptk::ConfigError(std::string(name) + " must not be NULL");
}

ptk_text* make_text(std::string s) { return new ptk_text{std::move(s)}; }

void set_text(ptk_text** out, std::string s) {
    if (out != nullptr) *out = make_text(std::move(s));
}

std::string join_lines(const std::vector<std::string>& lines) {
    std::string s;
    for (const auto& l : lines) s += l + '\n';
    return s;
}

std::vector<ptk::Document> load_corpus(const char* path) {
    require(path, "corpus path");
    return ptk::read_jsonl(std::filesystem::path(path));
}

void write_corpus(const char* path, const std::vector<ptk::Document>& docs) {
    if (path != nullptr && *path != '\0') ptk::write_jsonl(std::filesystem::path(path), docs);
}

ptk::cost::CostInputs to_inputs(const ptk_cost_inputs& in) {
    ptk::cost::CostInputs c;
    c.e_gpu_watts = in.e_gpu_watts;
    c.n_gpus = in.n_gpus;
    c.wall_hours = in.wall_hours;
    c.pue = in.pue;
    c.carbon_intensity = in.carbon_intensity;
    c.price_per_gpu_hour = in.price_per_gpu_hour;
    c.perf_ratio = in.perf_ratio;
    return c;
}

}  // namespace

extern "C" {

const char* ptk_version(void) { return "0.1.0"; }

const char* ptk_last_error(void) { return g_last_error.c_str(); }

const char* ptk_status_name(ptk_status status) {
    switch (status) {
        case PTK_OK: return "ok";
        case PTK_ERR_CONFIG: return "config";
        case PTK_ERR_RANGE: return "range";
        case PTK_ERR_INPUT: return "input";
        case PTK_ERR_IO: return "io";
        case PTK_ERR_INTERNAL: return "internal";
    }
    return "internal";
}

// ---- text ------------------------------------------------------------------

const char* ptk_text_data(const ptk_text* text) { return text == nullptr ? "" : text->data.c_str(); }
size_t ptk_text_size(const ptk_text* text) { return text == nullptr ? 0 : text->data.size(); }
void ptk_text_free(ptk_text* text) { delete text; }

// ---- schedule --------------------------------------------------------------

ptk_status ptk_timeline_preset(const char* name, ptk_timeline** out) {
    return guarded([&] {
        require(name, "name");
        require(out, "out");
        auto t = ptk::schedule::timeline_preset(name);
        *out = new ptk_timeline{t, ptk::schedule::rope_schedule_for(t)};
    });
}

ptk_status ptk_timeline_scale(ptk_timeline* timeline, uint64_t total_steps) {
    return guarded([&] {
        require(timeline, "timeline");
        timeline->timeline = timeline->timeline.scaled_to(total_steps);
        timeline->rope = ptk::schedule::rope_schedule_for(timeline->timeline);
    });
}

ptk_status ptk_timeline_total_steps(const ptk_timeline* timeline, uint64_t* out) {
    return guarded([&] {
        require(timeline, "timeline");
        require(out, "out");
        *out = timeline->timeline.total_steps;
    });
}

ptk_status ptk_timeline_lr(const ptk_timeline* timeline, uint64_t step, double* out) {
    return guarded([&] {
        require(timeline, "timeline");
        require(out, "out");
        *out = ptk::schedule::lr_at(timeline->timeline, step);
    });
}

ptk_status ptk_timeline_batch_tokens(const ptk_timeline* timeline, uint64_t step, uint64_t* out) {
    return guarded([&] {
        require(timeline, "timeline");
        require(out, "out");
        *out = ptk::schedule::batch_tokens_at(timeline->timeline, step);
    });
}

ptk_status ptk_timeline_seq_len(const ptk_timeline* timeline, uint64_t step, uint32_t* out) {
    return guarded([&] {
        require(timeline, "timeline");
        require(out, "out");
        *out = ptk::schedule::seq_len_at(timeline->timeline, step);
    });
}

ptk_status ptk_timeline_rope_base(const ptk_timeline* timeline, uint64_t step, int local, double* out) {
    return guarded([&] {
        require(timeline, "timeline");
        require(out, "out");
        if (step > timeline->timeline.total_steps) throw ptk::RangeError("step beyond total_steps");
        *out = ptk::schedule::rope_base_at(timeline->rope, step,
                                           local != 0 ? ptk::schedule::LayerKind::local
                                                      : ptk::schedule::LayerKind::global);
    });
}

ptk_status ptk_timeline_dump(const ptk_timeline* timeline, uint64_t stride, char delim, ptk_text** out) {
    return guarded([&] {
        require(timeline, "timeline");
        require(out, "out");
        std::ostringstream os;
        ptk::schedule::dump_schedule(os, timeline->timeline, timeline->rope, stride, delim);
        *out = make_text(os.str());
    });
}

ptk_status ptk_timeline_ledger(const ptk_timeline* timeline, char delim, ptk_text** out) {
    return guarded([&] {
        require(timeline, "timeline");
        require(out, "out");
        std::ostringstream os;
        ptk::trainer::write_ledger(os, ptk::trainer::analytic_ledger(timeline->timeline), delim);
        *out = make_text(os.str());
    });
}

void ptk_timeline_free(ptk_timeline* timeline) { delete timeline; }

// ---- tokenizer -------------------------------------------------------------

ptk_status ptk_plan_vocab(uint64_t predicted_optimal, uint64_t* out) {
    return guarded([&] {
        require(out, "out");
        *out = ptk::tokenize::plan_vocab(predicted_optimal);
    });
}

ptk_status ptk_predict_optimal_vocab_preset(const char* preset, uint64_t* predicted, uint64_t* planned) {
    return guarded([&] {
        require(preset, "preset");
        const auto p = ptk::tokenize::predict_optimal_vocab(ptk::tokenize::fixture_flops_budget(preset),
                                                            ptk::tokenize::kFixtureDataBudget,
                                                            &ptk::tokenize::fixture_vocab_fit());
        if (predicted != nullptr) *predicted = p;
        if (planned != nullptr) *planned = ptk::tokenize::plan_vocab(p);
    });
}

ptk_status ptk_vocab_train(const char* corpus_jsonl, size_t target_size, unsigned threads, ptk_vocab** out) {
    return guarded([&] {
        require(out, "out");
        const auto docs = load_corpus(corpus_jsonl);
        ptk::tokenize::BpeOptions opt;
        opt.target_size = target_size;
        opt.threads = threads == 0 ? 1 : threads;
        *out = new ptk_vocab{ptk::tokenize::bpe_train(std::span<const ptk::Document>(docs), opt)};
    });
}

ptk_status ptk_vocab_load(const char* path, ptk_vocab** out) {
    return guarded([&] {
        require(path, "path");
        require(out, "out");
        std::ifstream in(path);
        if (!in) throw ptk::IoError(std::string("cannot open ") + path);
        *out = new ptk_vocab{ptk::tokenize::Vocabulary::load(in)};
    });
}

ptk_status ptk_vocab_save(const ptk_vocab* vocab, const char* path) {
    return guarded([&] {
        require(vocab, "vocab");
        require(path, "path");
        std::ofstream out(path, std::ios::trunc);
        if (!out) throw ptk::IoError(std::string("cannot write ") + path);
        vocab->vocab.save(out);
        if (!out) throw ptk::IoError(std::string("failed writing ") + path);
    });
}

size_t ptk_vocab_size(const ptk_vocab* vocab) { return vocab == nullptr ? 0 : vocab->vocab.size(); }

ptk_status ptk_vocab_encode(const ptk_vocab* vocab, const char* text, size_t len, uint32_t* ids, size_t capacity,
                            size_t* count) {
    return guarded([&] {
        require(vocab, "vocab");
        require(count, "count");
        if (len > 0) require(text, "text");
        const auto enc = vocab->vocab.encode(std::string_view(text == nullptr ? "" : text, len));
        *count = enc.size();
        if (capacity > 0) {
            require(ids, "ids");
            std::memcpy(ids, enc.data(), std::min(capacity, enc.size()) * sizeof(uint32_t));
        }
    });
}

ptk_status ptk_vocab_decode(const ptk_vocab* vocab, const uint32_t* ids, size_t count, ptk_text** out) {
    return guarded([&] {
        require(vocab, "vocab");
        require(out, "out");
        if (count > 0) require(ids, "ids");
        *out = make_text(vocab->vocab.decode(std::span<const uint32_t>(ids, count)));
    });
}

ptk_status ptk_vocab_merges(const ptk_vocab* vocab, ptk_text** out) {
    return guarded([&] {
        require(vocab, "vocab");
        require(out, "out");
        std::ostringstream os;
        vocab->vocab.save(os);
        std::istringstream is(os.str());
        std::string line;
        std::string merges;
        while (std::getline(is, line)) {
            if (line.rfind("merge ", 0) == 0) merges += line.substr(6) + '\n';
        }
        *out = make_text(std::move(merges));
    });
}

void ptk_vocab_free(ptk_vocab* vocab) { delete vocab; }

ptk_status ptk_fertility(const ptk_vocab* vocab, const char* corpus_jsonl, char delim, ptk_text** report,
                         ptk_text** warnings) {
    return guarded([&] {
        require(vocab, "vocab");
        require(report, "report");
        const auto docs = load_corpus(corpus_jsonl);
        const auto rep = ptk::tokenize::fertility(vocab->vocab, docs);
        std::ostringstream os;
        ptk::tokenize::write_fertility(os, rep, delim);
        *report = make_text(os.str());
        set_text(warnings, join_lines(rep.warnings));
    });
}

// ---- mixture ---------------------------------------------------------------

ptk_status ptk_mix_build(const char* manifest_path, uint64_t seed, const char* out_jsonl, char delim,
                         ptk_text** report) {
    return guarded([&] {
        require(manifest_path, "manifest_path");
        require(report, "report");
        const auto manifest = ptk::mixture::load_manifest(manifest_path);
        const auto res = ptk::mixture::apply_sampling(manifest, seed);
        write_corpus(out_jsonl, res.docs);
        std::ostringstream os;
        ptk::mixture::write_build_report(os, res, delim);
        *report = make_text(os.str());
    });
}

ptk_status ptk_mix_audit(const char* manifest_path, char delim, ptk_text** report) {
    return guarded([&] {
        require(manifest_path, "manifest_path");
        require(report, "report");
        const auto manifest = ptk::mixture::load_manifest(manifest_path);
        std::ostringstream os;
        ptk::mixture::write_audit(os, ptk::mixture::audit_distribution(manifest), delim);
        *report = make_text(os.str());
    });
}

ptk_status ptk_mix_audit_corpus(const char* corpus_jsonl, char delim, ptk_text** report) {
    return guarded([&] {
        require(report, "report");
        const auto docs = load_corpus(corpus_jsonl);
        std::ostringstream os;
        ptk::mixture::write_audit(os, ptk::mixture::audit_documents(docs), delim);
        *report = make_text(os.str());
    });
}

ptk_status ptk_mix_sample_ext(const char* corpus_jsonl, uint64_t seed, uint64_t count, const char* out_jsonl,
                              char delim, ptk_text** report, ptk_text** warnings) {
    return guarded([&] {
        require(report, "report");
        const auto docs = load_corpus(corpus_jsonl);
        const auto buckets = ptk::mixture::default_extension_buckets();
        const auto res = ptk::mixture::sample_context_extension(
            docs, buckets, seed, count == 0 ? std::nullopt : std::optional<std::uint64_t>(count));
        write_corpus(out_jsonl, res.docs);
        std::ostringstream os;
        os << "bucket" << delim << "target_percent" << delim << "docs" << delim << "achieved_percent" << '\n';
        char buf[32];
        for (std::size_t i = 0; i < buckets.size(); ++i) {
            os << buckets[i].label << delim;
            std::snprintf(buf, sizeof buf, "%.2f", buckets[i].share * 100.0);
            os << buf << delim << res.per_bucket[i] << delim;
            std::snprintf(buf, sizeof buf, "%.2f", res.achieved_share[i] * 100.0);
            os << buf << '\n';
        }
        os << "total" << delim << "100.00" << delim << res.docs.size() << delim << "100.00" << '\n';
        *report = make_text(os.str());
        set_text(warnings, join_lines(res.warnings));
    });
}

ptk_status ptk_mix_anneal(const char* corpus_jsonl, const char* kind, double edu_threshold, const char* out_jsonl,
                          char delim, ptk_text** report, ptk_text** errors) {
    return guarded([&] {
        require(kind, "kind");
        require(report, "report");
        const auto mk = ptk::mixture::parse_mix_kind(kind);
        if (mk != ptk::mixture::MixKind::annealing_baseline && mk != ptk::mixture::MixKind::annealing_edu) {
            throw ptk::ConfigError(std::string("anneal kind must be baseline or edu, got '") + kind + "'");
        }
        const auto docs = load_corpus(corpus_jsonl);
        const auto res = ptk::mixture::compile_annealing(docs, mk, edu_threshold);
        write_corpus(out_jsonl, res.docs);
        std::ostringstream os;
        ptk::mixture::write_audit(os, res.audit, delim);
        *report = make_text(os.str());
        set_text(errors, join_lines(res.errors));
    });
}

ptk_status ptk_xling_prefix(const char* pair, const char* src, const char* tgt, ptk_text** out) {
    return guarded([&] {
        require(pair, "pair");
        require(src, "src");
        require(tgt, "tgt");
        require(out, "out");
        *out = make_text(ptk::to_json_line(ptk::mixture::prefix_xling(pair, src, tgt)) + '\n');
    });
}

// ---- training --------------------------------------------------------------

ptk_status ptk_mask_stats(uint64_t maskable, uint32_t vocab_size, uint32_t n_specials, uint64_t special_every,
                          double mask_rate, uint64_t seed, char delim, ptk_text** report) {
    return guarded([&] {
        require(report, "report");
        if (n_specials == 0) throw ptk::ConfigError("mask-stats: at least one special id ([MASK]) is required");
        ptk::trainer::MaskingPolicy policy;
        policy.mask_rate = mask_rate;
        policy.vocab_size = vocab_size;
        policy.mask_id = std::min<uint32_t>(4, n_specials - 1);
        for (uint32_t id = 0; id < n_specials; ++id) policy.never_mask.insert(id);
        const auto st = ptk::trainer::mask_statistics(policy, maskable, special_every, seed);
        std::ostringstream os;
        ptk::trainer::write_mask_stats(os, st, delim);
        *report = make_text(os.str());
    });
}

ptk_status ptk_config_check(const char* config_path, ptk_text** report) {
    if (config_path == nullptr || report == nullptr) return fail(PTK_ERR_CONFIG, "arguments must not be NULL");
    std::vector<std::string> errors;
    const ptk_status st = guarded([&] {
        const std::filesystem::path path(config_path);
        const std::string text = ptk::read_file(path);
        auto res = ptk::config::parse_config(text, path.parent_path());
        if (res.ok()) {
            *report = make_text(ptk::config::to_json(*res.config) + '\n');
        } else {
            errors = res.errors;
            throw ptk::ConfigError(std::to_string(errors.size()) + " config error(s) in " + path.string());
        }
    });
    if (st == PTK_ERR_CONFIG && !errors.empty()) *report = make_text(join_lines(errors));
    return st;
}

ptk_status ptk_train_toy(const char* config_path, int64_t seed_override, ptk_text** trace) {
    return guarded([&] {
        require(config_path, "config_path");
        auto cfg = ptk::config::load_config(config_path);
        if (seed_override >= 0) cfg.seed = static_cast<uint64_t>(seed_override);

        std::ifstream vin(cfg.vocab_path);
        if (!vin) throw ptk::IoError("cannot open " + cfg.vocab_path.string());
        const auto vocab = ptk::tokenize::Vocabulary::load(vin);
        const auto manifest = ptk::mixture::load_manifest(cfg.manifest_path);
        const auto mixed = ptk::mixture::apply_sampling(manifest, cfg.seed);

        ptk::trainer::TrainOptions opt;
        opt.encoder = cfg.encoder;
        opt.timeline = cfg.timeline;
        opt.optimizer = cfg.optimizer;
        opt.masking = ptk::trainer::masking_for(vocab, cfg.encoder.vocab_size);
        opt.masking.mask_rate = cfg.mask_rate;
        opt.masking.mask_frac = cfg.mask_frac;
        opt.masking.random_frac = cfg.random_frac;
        opt.masking.keep_frac = cfg.keep_frac;
        opt.seed = cfg.seed;
        opt.threads = cfg.threads;
        opt.output_dir = cfg.output_dir;
        const auto res = ptk::trainer::train(opt, vocab, mixed.docs);

        std::ostringstream os;
        ptk::trainer::write_trace(os, res.trace);
        {
            std::ofstream f(cfg.output_dir / "loss_trace.tsv", std::ios::trunc);
            f << os.str();
            if (!f) throw ptk::IoError("cannot write loss trace in " + cfg.output_dir.string());
        }
        {
            std::ofstream f(cfg.output_dir / "token_ledger.tsv", std::ios::trunc);
            ptk::trainer::write_ledger(f, res.ledger);
            if (!f) throw ptk::IoError("cannot write token ledger in " + cfg.output_dir.string());
        }
        set_text(trace, os.str());
    });
}

// ---- cost ------------------------------------------------------------------

void ptk_cost_defaults(ptk_cost_inputs* in) {
    if (in == nullptr) return;
    const ptk::cost::CostInputs d;
    *in = ptk_cost_inputs{d.e_gpu_watts, d.n_gpus,   d.wall_hours, d.pue, d.carbon_intensity, d.price_per_gpu_hour,
                          d.perf_ratio};
}

ptk_status ptk_cost_estimate(const ptk_cost_inputs* in, ptk_cost_report* out) {
    return guarded([&] {
        require(in, "inputs");
        require(out, "out");
        const auto r = ptk::cost::estimate(to_inputs(*in));
        *out = ptk_cost_report{r.energy_mwh, r.energy_mwh_2dp, r.co2_kg, r.co2_kg_exact, r.gpu_hours, r.price};
    });
}

ptk_status ptk_cost_batch(const char* runs_path, const ptk_cost_inputs* in, const char* currency, int human,
                          char delim, ptk_text** report) {
    return guarded([&] {
        require(runs_path, "runs_path");
        require(report, "report");
        ptk_cost_inputs defaults;
        ptk_cost_defaults(&defaults);
        auto inputs = to_inputs(in == nullptr ? defaults : *in);
        if (currency != nullptr) inputs.currency = currency;
        std::ifstream f(runs_path);
        if (!f) throw ptk::IoError(std::string("cannot open ") + runs_path);
        const auto rep = ptk::cost::batch_report(ptk::cost::parse_runs(f), inputs);
        std::ostringstream os;
        if (human != 0) {
            ptk::cost::write_table(os, rep, inputs.currency);
        } else {
            ptk::cost::write_delimited(os, rep, delim);
        }
        *report = make_text(os.str());
    });
}

// ---- retrieval -------------------------------------------------------------

ptk_status ptk_eval_ndcg(const char* run_path, const char* qrels_path, uint32_t k, double* mean, char delim,
                         ptk_text** per_query) {
    return guarded([&] {
        require(run_path, "run_path");
        require(qrels_path, "qrels_path");
        require(mean, "mean");
        ptk::retrieval::RankedRun run;
        std::ifstream rf(run_path);
        if (!rf) throw ptk::IoError(std::string("cannot open ") + run_path);
        ptk::retrieval::read_trec_run(rf, run);
        std::ifstream qf(qrels_path);
        if (!qf) throw ptk::IoError(std::string("cannot open ") + qrels_path);
        ptk::retrieval::read_trec_qrels(qf, run);
        *mean = ptk::retrieval::ndcg_at_k(run, k);
        if (per_query != nullptr) {
            std::ostringstream os;
            char buf[32];
            os << "query" << delim << "ndcg@" << k << '\n';
            for (const auto& [q, v] : ptk::retrieval::ndcg_per_query(run, k)) {
                std::snprintf(buf, sizeof buf, "%.6f", v);
                os << q << delim << buf << '\n';
            }
            std::snprintf(buf, sizeof buf, "%.6f", *mean);
            os << "mean" << delim << buf << '\n';
            *per_query = make_text(os.str());
        }
    });
}

ptk_status ptk_audit_footnote(uint64_t population, uint64_t rank1_hits, uint64_t rank5_hits, double* out) {
    return guarded([&] {
        require(out, "out");
        *out = ptk::retrieval::audit_footnote(population, rank1_hits, rank5_hits);
    });
}

}  // extern "C"
