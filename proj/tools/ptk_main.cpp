// SPDX-License-Identifier: Apache-2.0
//
// ptk command-line front end. Talks to the library only through the C API.

#include "ptk/ptk.h"

#include "CLI11.hpp"

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitUsage = 2;

struct TextDeleter {
    void operator()(ptk_text* t) const noexcept { ptk_text_free(t); }
};
using Text = std::unique_ptr<ptk_text, TextDeleter>;

// Operational failure reported by the library.
struct Failure {
    ptk_status status;
    std::string message;
};

void check(ptk_status st) {
    if (st != PTK_OK) throw Failure{st, ptk_last_error()};
}

std::string one_line(std::string s) {
    for (auto& c : s) {
        if (c == '\n' || c == '\r' || c == '\t') c = ' ';
    }
    while (!s.empty() && s.back() == ' ') s.pop_back();
    return s;
}

void emit(const Text& t, std::ostream& out = std::cout) { out << ptk_text_data(t.get()); }

void emit_warnings(const Text& t) {
    const std::string s = ptk_text_data(t.get());
    std::size_t start = 0;
    while (start < s.size()) {
        const auto end = s.find('\n', start);
        std::cerr << "warning: " << s.substr(start, end - start) << '\n';
        if (end == std::string::npos) break;
        start = end + 1;
    }
}

void write_file(const std::string& path, const Text& t) {
    std::ofstream f(path, std::ios::trunc | std::ios::binary);
    f << ptk_text_data(t.get());
    if (!f) throw Failure{PTK_ERR_IO, "cannot write " + path};
}

const std::map<std::string, char> kDelims{{"tab", '\t'}, {"comma", ','}};

unsigned default_threads() {
    if (const char* v = std::getenv("PTK_THREADS"); v != nullptr && *v != '\0') {
        try {
            const unsigned long n = std::stoul(v);
            if (n > 0 && n <= 1024) return static_cast<unsigned>(n);
        } catch (const std::exception&) {
        }
    }
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Pretraining toolkit: schedules, data mixtures, tokenizers, MLM training, cost and retrieval audits",
                 "ptk"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_version_flag("--version", std::string(ptk_version()));

    std::optional<std::uint64_t> seed;
    std::string delim_name = "tab";
    app.add_option("--seed", seed, "Global random seed (non-negative integer)");
    app.add_option("--delim", delim_name, "Delimiter for tabular output")
        ->check(CLI::IsMember({"tab", "comma"}))
        ->capture_default_str();
    auto delim = [&] { return kDelims.at(delim_name); };
    auto seed_or = [&](std::uint64_t fallback) { return seed.value_or(fallback); };

    // plan-vocab
    auto* plan = app.add_subcommand("plan-vocab", "Round a predicted optimal vocabulary size up to a multiple of 64");
    std::optional<std::uint64_t> plan_value;
    std::string plan_preset;
    auto* plan_value_opt = plan->add_option("predicted", plan_value, "Predicted optimal vocabulary size");
    auto* plan_preset_opt =
        plan->add_option("--preset", plan_preset, "Predict from a model-size preset (tiny, base, large)");
    plan_value_opt->excludes(plan_preset_opt);

    // bpe-train
    auto* bpe = app.add_subcommand("bpe-train", "Train a byte-level BPE vocabulary on a JSONL corpus");
    std::string bpe_corpus, bpe_out, bpe_merges;
    std::size_t bpe_size = 0;
    unsigned bpe_threads = default_threads();
    bpe->add_option("--corpus", bpe_corpus, "JSONL corpus")->required()->check(CLI::ExistingFile);
    bpe->add_option("--size", bpe_size, "Target vocabulary size (specials + 256 bytes + merges)")->required();
    bpe->add_option("--out", bpe_out, "Output vocabulary file")->required();
    bpe->add_option("--merges", bpe_merges, "Also write the merge list to this file");
    bpe->add_option("--threads", bpe_threads, "Worker threads for pair counting")->capture_default_str();

    // fertility
    auto* fert = app.add_subcommand("fertility", "Tokens per whitespace word, by language");
    std::string fert_vocab, fert_corpus;
    fert->add_option("--vocab", fert_vocab, "Vocabulary file")->required()->check(CLI::ExistingFile);
    fert->add_option("--corpus", fert_corpus, "JSONL corpus")->required()->check(CLI::ExistingFile);

    // schedule
    auto* sched = app.add_subcommand("schedule", "Training timeline utilities");
    sched->require_subcommand(1);
    std::string sched_preset = "tiny";
    std::optional<std::uint64_t> sched_total;
    std::uint64_t sched_stride = 1000;
    auto* sdump = sched->add_subcommand("dump", "Per-step lr, batch tokens, sequence length and rotary base");
    sdump->add_option("--preset", sched_preset, "Timeline preset")->capture_default_str();
    sdump->add_option("--total-steps", sched_total, "Rescale the timeline to this many steps");
    sdump->add_option("--stride", sched_stride, "Emit every n-th step (the last step is always included)")
        ->capture_default_str();
    auto* sledger = sched->add_subcommand("ledger", "Per-phase steps and tokens implied by the batch schedule");
    sledger->add_option("--preset", sched_preset, "Timeline preset")->capture_default_str();
    sledger->add_option("--total-steps", sched_total, "Rescale the timeline to this many steps");

    // mix
    auto* mix = app.add_subcommand("mix", "Data-mixture compilation and audits");
    mix->require_subcommand(1);
    std::string mix_manifest, mix_corpus, mix_out, mix_kind, mix_pair, mix_src, mix_tgt;
    std::uint64_t mix_count = 0;
    double mix_threshold = 2.0;
    auto* mbuild = mix->add_subcommand("build", "Dedup, scrub and oversample the corpora named in a manifest");
    mbuild->add_option("--manifest", mix_manifest, "Mixture manifest (TSV)")->required()->check(CLI::ExistingFile);
    mbuild->add_option("--out", mix_out, "Write the mixed documents to this JSONL file");
    auto* maudit = mix->add_subcommand("audit", "Per-language token shares of a manifest or a corpus");
    auto* maudit_manifest =
        maudit->add_option("--manifest", mix_manifest, "Mixture manifest (TSV)")->check(CLI::ExistingFile);
    auto* maudit_corpus = maudit->add_option("--corpus", mix_corpus, "JSONL corpus")->check(CLI::ExistingFile);
    maudit_manifest->excludes(maudit_corpus);
    maudit->require_option(1);
    auto* msample = mix->add_subcommand("sample-ext", "Length-bucket sampling for context extension");
    msample->add_option("--corpus", mix_corpus, "JSONL corpus")->required()->check(CLI::ExistingFile);
    msample->add_option("--count", mix_count, "Number of documents (0 = largest feasible)")->capture_default_str();
    msample->add_option("--out", mix_out, "Write the sampled documents to this JSONL file");
    auto* manneal = mix->add_subcommand("anneal", "Compile an annealing mix from a scored corpus");
    manneal->add_option("--corpus", mix_corpus, "JSONL corpus")->required()->check(CLI::ExistingFile);
    manneal->add_option("--kind", mix_kind, "Annealing mix")->required()->check(CLI::IsMember({"baseline", "edu"}));
    manneal->add_option("--threshold", mix_threshold, "Minimum educational score")->capture_default_str();
    manneal->add_option("--out", mix_out, "Write the selected documents to this JSONL file");
    auto* mxling = mix->add_subcommand("xling", "Instruction-prefixed translation pair as a JSONL line");
    mxling->add_option("--pair", mix_pair, "Language pair, e.g. eng-fin")->required();
    mxling->add_option("--src", mix_src, "Source text")->required();
    mxling->add_option("--tgt", mix_tgt, "Target text")->required();

    // mask-stats
    auto* mstats = app.add_subcommand("mask-stats", "Monte Carlo check of the MLM corruption policy");
    std::uint64_t ms_tokens = 100000;
    std::uint32_t ms_vocab = 1024;
    std::uint32_t ms_specials = 5;
    std::uint64_t ms_every = 10;
    double ms_rate = 0.30;
    mstats->add_option("--tokens", ms_tokens, "Maskable tokens to draw")->capture_default_str();
    mstats->add_option("--vocab-size", ms_vocab, "Vocabulary size")->capture_default_str();
    mstats->add_option("--specials", ms_specials, "Protected ids [0, n)")->capture_default_str();
    mstats->add_option("--special-every", ms_every, "Insert a protected id every n positions (0 = never)")
        ->capture_default_str();
    mstats->add_option("--rate", ms_rate, "Masking rate")->capture_default_str();

    // config-check / train-toy
    auto* ccheck = app.add_subcommand("config-check", "Validate a run config and print it with defaults filled");
    std::string cfg_path;
    ccheck->add_option("--config", cfg_path, "Run config (JSON)")->required()->check(CLI::ExistingFile);
    auto* ttoy = app.add_subcommand("train-toy", "Run the configured MLM training and write the loss trace");
    ttoy->add_option("--config", cfg_path, "Run config (JSON)")->required()->check(CLI::ExistingFile);
    bool ttoy_quiet = false;
    ttoy->add_flag("--quiet", ttoy_quiet, "Do not echo the loss trace");

    // cost
    auto* cost = app.add_subcommand("cost", "Energy, emissions and price of training runs");
    std::string cost_runs, cost_currency = "EUR";
    bool cost_table = false;
    ptk_cost_inputs ci;
    ptk_cost_defaults(&ci);
    cost->add_option("--runs", cost_runs, "File of 'name wall_hours' rows")->required()->check(CLI::ExistingFile);
    cost->add_option("--watts", ci.e_gpu_watts, "Power per GPU (W)")->capture_default_str();
    cost->add_option("--gpus", ci.n_gpus, "Number of GPUs")->capture_default_str();
    cost->add_option("--pue", ci.pue, "Power usage effectiveness")->capture_default_str();
    cost->add_option("--intensity", ci.carbon_intensity, "kg CO2 per kWh")->capture_default_str();
    cost->add_option("--price", ci.price_per_gpu_hour, "Price per GPU hour")->capture_default_str();
    cost->add_option("--perf-ratio", ci.perf_ratio, "Target / reference peak FLOPs")->capture_default_str();
    cost->add_option("--currency", cost_currency, "Currency label")->capture_default_str();
    cost->add_flag("--table", cost_table, "Aligned human-readable table instead of delimited rows");

    // eval-ndcg / audit-footnote
    auto* ndcg = app.add_subcommand("eval-ndcg", "Mean nDCG@k of a TREC run");
    std::string ndcg_run, ndcg_qrels;
    std::uint32_t ndcg_k = 10;
    ndcg->add_option("--run", ndcg_run, "TREC run file")->required()->check(CLI::ExistingFile);
    ndcg->add_option("--qrels", ndcg_qrels, "TREC qrels file")->required()->check(CLI::ExistingFile);
    ndcg->add_option("--k", ndcg_k, "Cutoff")->capture_default_str();
    bool ndcg_per_query = false;
    ndcg->add_flag("--per-query", ndcg_per_query, "Print per-query scores");
    auto* audit = app.add_subcommand("audit-footnote", "nDCG@10 of a population with hits at ranks 1 and 5");
    std::uint64_t au_pop = 0, au_r1 = 0, au_r5 = 0;
    audit->add_option("--population", au_pop, "Number of queries")->required();
    audit->add_option("--rank1", au_r1, "Queries answered at rank 1")->required();
    audit->add_option("--rank5", au_r5, "Queries answered at rank 5")->capture_default_str();

    if (argc <= 1) {
        std::cerr << app.help();
        return kExitUsage;
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        // help of the deepest subcommand reached before the error
        const CLI::App* ctx = &app;
        std::string prefix;
        for (auto subs = ctx->get_subcommands(); !subs.empty(); subs = ctx->get_subcommands()) {
            prefix += (prefix.empty() ? "" : " ") + ctx->get_name();
            ctx = subs.front();
        }
        std::cerr << "usage error: " << one_line(e.what()) << '\n' << ctx->help(prefix);
        return kExitUsage;
    }

    try {
        Text out;
        if (plan->parsed()) {
            std::uint64_t planned = 0;
            if (!plan_preset.empty()) {
                std::uint64_t predicted = 0;
                check(ptk_predict_optimal_vocab_preset(plan_preset.c_str(), &predicted, &planned));
                std::cout << "preset" << delim() << "predicted" << delim() << "planned\n"
                          << plan_preset << delim() << predicted << delim() << planned << '\n';
            } else if (plan_value) {
                check(ptk_plan_vocab(*plan_value, &planned));
                std::cout << planned << '\n';
            } else {
                std::cerr << "usage error: plan-vocab needs a predicted size or --preset\n";
                return kExitUsage;
            }
        } else if (bpe->parsed()) {
            ptk_vocab* v = nullptr;
            check(ptk_vocab_train(bpe_corpus.c_str(), bpe_size, bpe_threads, &v));
            std::unique_ptr<ptk_vocab, void (*)(ptk_vocab*)> vocab(v, ptk_vocab_free);
            check(ptk_vocab_save(vocab.get(), bpe_out.c_str()));
            if (!bpe_merges.empty()) {
                ptk_text* m = nullptr;
                check(ptk_vocab_merges(vocab.get(), &m));
                write_file(bpe_merges, Text(m));
            }
            std::cout << "vocab_size" << delim() << ptk_vocab_size(vocab.get()) << '\n';
        } else if (fert->parsed()) {
            ptk_vocab* v = nullptr;
            check(ptk_vocab_load(fert_vocab.c_str(), &v));
            std::unique_ptr<ptk_vocab, void (*)(ptk_vocab*)> vocab(v, ptk_vocab_free);
            ptk_text* rep = nullptr;
            ptk_text* warn = nullptr;
            check(ptk_fertility(vocab.get(), fert_corpus.c_str(), delim(), &rep, &warn));
            out.reset(rep);
            emit_warnings(Text(warn));
            emit(out);
        } else if (sched->parsed()) {
            ptk_timeline* t = nullptr;
            check(ptk_timeline_preset(sched_preset.c_str(), &t));
            std::unique_ptr<ptk_timeline, void (*)(ptk_timeline*)> tl(t, ptk_timeline_free);
            if (sched_total) check(ptk_timeline_scale(tl.get(), *sched_total));
            ptk_text* rep = nullptr;
            if (sdump->parsed()) {
                check(ptk_timeline_dump(tl.get(), sched_stride, delim(), &rep));
            } else {
                check(ptk_timeline_ledger(tl.get(), delim(), &rep));
            }
            out.reset(rep);
            emit(out);
        } else if (mix->parsed()) {
            ptk_text* rep = nullptr;
            ptk_text* extra = nullptr;
            const char* out_path = mix_out.empty() ? nullptr : mix_out.c_str();
            if (mbuild->parsed()) {
                check(ptk_mix_build(mix_manifest.c_str(), seed_or(0), out_path, delim(), &rep));
            } else if (maudit->parsed()) {
                if (!mix_manifest.empty()) {
                    check(ptk_mix_audit(mix_manifest.c_str(), delim(), &rep));
                } else {
                    check(ptk_mix_audit_corpus(mix_corpus.c_str(), delim(), &rep));
                }
            } else if (msample->parsed()) {
                check(ptk_mix_sample_ext(mix_corpus.c_str(), seed_or(0), mix_count, out_path, delim(), &rep, &extra));
            } else if (manneal->parsed()) {
                check(ptk_mix_anneal(mix_corpus.c_str(), mix_kind.c_str(), mix_threshold, out_path, delim(), &rep,
                                     &extra));
            } else {
                check(ptk_xling_prefix(mix_pair.c_str(), mix_src.c_str(), mix_tgt.c_str(), &rep));
            }
            out.reset(rep);
            emit_warnings(Text(extra));
            emit(out);
        } else if (mstats->parsed()) {
            ptk_text* rep = nullptr;
            check(ptk_mask_stats(ms_tokens, ms_vocab, ms_specials, ms_every, ms_rate, seed_or(0), delim(), &rep));
            out.reset(rep);
            emit(out);
        } else if (ccheck->parsed()) {
            ptk_text* rep = nullptr;
            const ptk_status st = ptk_config_check(cfg_path.c_str(), &rep);
            out.reset(rep);
            if (st == PTK_ERR_CONFIG && rep != nullptr) emit(out, std::cerr);
            check(st);
            emit(out);
        } else if (ttoy->parsed()) {
            ptk_text* rep = nullptr;
            check(ptk_train_toy(cfg_path.c_str(), seed ? static_cast<std::int64_t>(*seed) : -1, &rep));
            out.reset(rep);
            if (!ttoy_quiet) emit(out);
        } else if (cost->parsed()) {
            ptk_text* rep = nullptr;
            check(ptk_cost_batch(cost_runs.c_str(), &ci, cost_currency.c_str(), cost_table ? 1 : 0, delim(), &rep));
            out.reset(rep);
            emit(out);
        } else if (ndcg->parsed()) {
            ptk_text* rep = nullptr;
            double mean = 0.0;
            check(ptk_eval_ndcg(ndcg_run.c_str(), ndcg_qrels.c_str(), ndcg_k, &mean, delim(),
                                ndcg_per_query ? &rep : nullptr));
            out.reset(rep);
            if (ndcg_per_query) {
                emit(out);
            } else {
                std::printf("ndcg@%u%c%.6f\n", ndcg_k, delim(), mean);
            }
        } else if (audit->parsed()) {
            double score = 0.0;
            check(ptk_audit_footnote(au_pop, au_r1, au_r5, &score));
            std::printf("%.6f\n", score);
        }
    } catch (const Failure& f) {
        std::cout.flush();
        std::cerr << "error" << '\t' << ptk_status_name(f.status) << '\t' << one_line(f.message) << '\n';
        return kExitError;
    }
    std::cout.flush();
    return std::cout ? kExitOk : kExitError;
}
