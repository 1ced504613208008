/* SPDX-License-Identifier: Apache-2.0 */

/*
 * ptk: pretraining toolkit, C interface.
 *
 * Every fallible call returns a ptk_status. On failure the thread-local
 * message from ptk_last_error() describes the problem. Objects are opaque
 * handles released with the matching *_free function; passing NULL to a
 * free function is a no-op. Text results are returned as ptk_text handles.
 */

#ifndef PTK_PTK_H
#define PTK_PTK_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define PTK_API __declspec(dllexport)
#elif defined(__GNUC__)
#define PTK_API __attribute__((visibility("default")))
#else
#define PTK_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ptk_status {
    PTK_OK = 0,
    PTK_ERR_CONFIG = 1,   /* invalid configuration or parameter */
    PTK_ERR_RANGE = 2,    /* value outside its domain, e.g. step > total */
    PTK_ERR_INPUT = 3,    /* malformed or inconsistent input data */
    PTK_ERR_IO = 4,       /* file could not be read or written */
    PTK_ERR_INTERNAL = 5  /* anything else */
} ptk_status;

PTK_API const char* ptk_version(void);
/* Message of the last failed call on this thread ("" if none). */
PTK_API const char* ptk_last_error(void);
/* Short lowercase name: "ok", "config", "range", "input", "io", "internal". */
PTK_API const char* ptk_status_name(ptk_status status);

/* ---- text results ------------------------------------------------------ */

typedef struct ptk_text ptk_text;

PTK_API const char* ptk_text_data(const ptk_text* text); /* NUL-terminated */
PTK_API size_t ptk_text_size(const ptk_text* text);
PTK_API void ptk_text_free(ptk_text* text);

/* ---- schedule ---------------------------------------------------------- */

typedef struct ptk_timeline ptk_timeline;

/* "tiny", "base", "large" and the "-short" variants. */
PTK_API ptk_status ptk_timeline_preset(const char* name, ptk_timeline** out);
/* Rescales phase boundaries to a run of total_steps steps. */
PTK_API ptk_status ptk_timeline_scale(ptk_timeline* timeline, uint64_t total_steps);
PTK_API ptk_status ptk_timeline_total_steps(const ptk_timeline* timeline, uint64_t* out);
PTK_API ptk_status ptk_timeline_lr(const ptk_timeline* timeline, uint64_t step, double* out);
PTK_API ptk_status ptk_timeline_batch_tokens(const ptk_timeline* timeline, uint64_t step, uint64_t* out);
PTK_API ptk_status ptk_timeline_seq_len(const ptk_timeline* timeline, uint64_t step, uint32_t* out);
/* local != 0 selects the local-attention base. */
PTK_API ptk_status ptk_timeline_rope_base(const ptk_timeline* timeline, uint64_t step, int local, double* out);
PTK_API ptk_status ptk_timeline_dump(const ptk_timeline* timeline, uint64_t stride, char delim, ptk_text** out);
/* Per-phase step and token totals implied by the batch-size schedule. */
PTK_API ptk_status ptk_timeline_ledger(const ptk_timeline* timeline, char delim, ptk_text** out);
PTK_API void ptk_timeline_free(ptk_timeline* timeline);

/* ---- tokenizer --------------------------------------------------------- */

/* Rounds up to the next multiple of 64. */
PTK_API ptk_status ptk_plan_vocab(uint64_t predicted_optimal, uint64_t* out);
/* Predicted and planned vocabulary for a model-size preset under the
 * built-in fit ("tiny", "base", "large"). */
PTK_API ptk_status ptk_predict_optimal_vocab_preset(const char* preset, uint64_t* predicted, uint64_t* planned);

typedef struct ptk_vocab ptk_vocab;

/* Trains byte-level BPE on a JSONL corpus (one document per line). */
PTK_API ptk_status ptk_vocab_train(const char* corpus_jsonl, size_t target_size, unsigned threads, ptk_vocab** out);
PTK_API ptk_status ptk_vocab_load(const char* path, ptk_vocab** out);
PTK_API ptk_status ptk_vocab_save(const ptk_vocab* vocab, const char* path);
PTK_API size_t ptk_vocab_size(const ptk_vocab* vocab);
/* Writes up to capacity ids; *count receives the full length, so a call with
 * capacity 0 measures the output. */
PTK_API ptk_status ptk_vocab_encode(const ptk_vocab* vocab, const char* text, size_t len, uint32_t* ids,
                                    size_t capacity, size_t* count);
PTK_API ptk_status ptk_vocab_decode(const ptk_vocab* vocab, const uint32_t* ids, size_t count, ptk_text** out);
/* Merge list, one "left right" pair per line with bytes escaped. */
PTK_API ptk_status ptk_vocab_merges(const ptk_vocab* vocab, ptk_text** out);
PTK_API void ptk_vocab_free(ptk_vocab* vocab);

/* Tokens per whitespace word by language. warnings may be NULL. */
PTK_API ptk_status ptk_fertility(const ptk_vocab* vocab, const char* corpus_jsonl, char delim, ptk_text** report,
                                 ptk_text** warnings);

/* ---- data mixture ------------------------------------------------------ */

/* Dedup, PII scrubbing and oversampling of every manifest entry with a
 * corpus file; writes the documents to out_jsonl (may be NULL). */
PTK_API ptk_status ptk_mix_build(const char* manifest_path, uint64_t seed, const char* out_jsonl, char delim,
                                 ptk_text** report);
/* Per-language token shares of a manifest's final token counts. */
PTK_API ptk_status ptk_mix_audit(const char* manifest_path, char delim, ptk_text** report);
/* Per-language token shares of a JSONL corpus. */
PTK_API ptk_status ptk_mix_audit_corpus(const char* corpus_jsonl, char delim, ptk_text** report);
/* Length-bucket sampling for context extension. count 0 picks the largest
 * feasible size. warnings may be NULL. */
PTK_API ptk_status ptk_mix_sample_ext(const char* corpus_jsonl, uint64_t seed, uint64_t count, const char* out_jsonl,
                                      char delim, ptk_text** report, ptk_text** warnings);
/* kind: "baseline" or "edu". errors may be NULL. */
PTK_API ptk_status ptk_mix_anneal(const char* corpus_jsonl, const char* kind, double edu_threshold,
                                  const char* out_jsonl, char delim, ptk_text** report, ptk_text** errors);
/* One JSONL line holding the instruction-prefixed pair. */
PTK_API ptk_status ptk_xling_prefix(const char* pair, const char* src, const char* tgt, ptk_text** out);

/* ---- training ---------------------------------------------------------- */

/* Masks `maskable` synthetic tokens drawn from a vocabulary of vocab_size
 * ids whose first `n_specials` are protected, inserting a protected id every
 * special_every positions, and reports the selection statistics. */
PTK_API ptk_status ptk_mask_stats(uint64_t maskable, uint32_t vocab_size, uint32_t n_specials,
                                  uint64_t special_every, double mask_rate, uint64_t seed, char delim,
                                  ptk_text** report);
/* Validates a run config. On PTK_ERR_CONFIG, *report lists every problem;
 * on success it holds the resolved config as JSON. */
PTK_API ptk_status ptk_config_check(const char* config_path, ptk_text** report);
/* Runs the configured training. seed_override < 0 keeps the config's seed.
 * Writes loss_trace.tsv, token_ledger.tsv and checkpoints to the output
 * directory; *trace receives the loss trace. */
PTK_API ptk_status ptk_train_toy(const char* config_path, int64_t seed_override, ptk_text** trace);

/* ---- cost -------------------------------------------------------------- */

typedef struct ptk_cost_inputs {
    double e_gpu_watts;
    uint32_t n_gpus;
    double wall_hours;
    double pue;
    double carbon_intensity; /* kg CO2 per kWh */
    double price_per_gpu_hour;
    double perf_ratio;       /* target peak FLOPs / reference peak FLOPs */
} ptk_cost_inputs;

typedef struct ptk_cost_report {
    double energy_mwh;
    double energy_mwh_2dp;
    double co2_kg;       /* from the 2-decimal MWh figure */
    double co2_kg_exact;
    double gpu_hours;
    double price;
} ptk_cost_report;

PTK_API void ptk_cost_defaults(ptk_cost_inputs* in);
PTK_API ptk_status ptk_cost_estimate(const ptk_cost_inputs* in, ptk_cost_report* out);
/* Reads "name wall_hours" rows. human != 0 renders an aligned table. */
PTK_API ptk_status ptk_cost_batch(const char* runs_path, const ptk_cost_inputs* in, const char* currency, int human,
                                  char delim, ptk_text** report);

/* ---- retrieval metrics ------------------------------------------------- */

/* Mean nDCG@k of a TREC run against TREC qrels; per_query may be NULL. */
PTK_API ptk_status ptk_eval_ndcg(const char* run_path, const char* qrels_path, uint32_t k, double* mean,
                                 char delim, ptk_text** per_query);
PTK_API ptk_status ptk_audit_footnote(uint64_t population, uint64_t rank1_hits, uint64_t rank5_hits, double* out);

#ifdef __cplusplus
}
#endif

#endif /* PTK_PTK_H */
