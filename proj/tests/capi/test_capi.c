/* SPDX-License-Identifier: Apache-2.0 */

/* Exercises the shared library through its C header only.
 * Usage: ptk_capi_test <source_dir> <scratch_dir> */

#include "ptk/ptk.h"

#include <math.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

static int failures = 0;

#define EXPECT(cond)                                                            \
    do {                                                                        \
        if (!(cond)) {                                                          \
            fprintf(stderr, "%s:%d: expected %s\n", __FILE__, __LINE__, #cond); \
            ++failures;                                                         \
        }                                                                       \
    } while (0)

#define EXPECT_OK(call)                                                                             \
    do {                                                                                            \
        ptk_status s_ = (call);                                                                     \
        if (s_ != PTK_OK) {                                                                         \
            fprintf(stderr, "%s:%d: %s -> %s: %s\n", __FILE__, __LINE__, #call, ptk_status_name(s_), \
                    ptk_last_error());                                                              \
            ++failures;                                                                             \
        }                                                                                           \
    } while (0)

static char* join(const char* a, const char* b) {
    size_t n = strlen(a) + strlen(b) + 2;
    char* s = malloc(n);
    snprintf(s, n, "%s/%s", a, b);
    return s;
}

static void test_errors(void) {
    uint64_t v = 0;
    EXPECT(strcmp(ptk_version(), "0.1.0") == 0);
    EXPECT(ptk_plan_vocab(0, &v) == PTK_ERR_CONFIG);
    EXPECT(strlen(ptk_last_error()) > 0);
    EXPECT(ptk_plan_vocab(27224, NULL) == PTK_ERR_CONFIG);
    EXPECT(strcmp(ptk_status_name(PTK_ERR_RANGE), "range") == 0);
    EXPECT(strcmp(ptk_status_name(PTK_ERR_IO), "io") == 0);
    ptk_text_free(NULL);
    ptk_timeline_free(NULL);
    ptk_vocab_free(NULL);
    EXPECT(ptk_text_size(NULL) == 0);
}

static void test_schedule(void) {
    ptk_timeline* t = NULL;
    double lr = -1.0, base = 0.0;
    uint64_t batch = 0, total = 0;
    uint32_t len = 0;
    ptk_text* dump = NULL;

    EXPECT(ptk_timeline_preset("gigantic", &t) == PTK_ERR_CONFIG);
    EXPECT_OK(ptk_timeline_preset("tiny", &t));
    EXPECT_OK(ptk_timeline_lr(t, 1380, &lr));
    EXPECT(lr == 8e-4);
    EXPECT_OK(ptk_timeline_lr(t, 135930, &lr));
    EXPECT(fabs(lr - 1.4644660940672623e-4) < 1e-18);
    EXPECT_OK(ptk_timeline_batch_tokens(t, 2001, &batch));
    EXPECT(batch == 1666500);
    EXPECT_OK(ptk_timeline_seq_len(t, 137999, &len));
    EXPECT(len == 16384);
    EXPECT_OK(ptk_timeline_rope_base(t, 117300, 0, &base));
    EXPECT(base == 1000000.0);
    EXPECT_OK(ptk_timeline_rope_base(t, 117300, 1, &base));
    EXPECT(base == 10000.0);
    EXPECT(ptk_timeline_lr(t, 138001, &lr) == PTK_ERR_RANGE);

    EXPECT_OK(ptk_timeline_scale(t, 200));
    EXPECT_OK(ptk_timeline_total_steps(t, &total));
    EXPECT(total == 200);
    EXPECT_OK(ptk_timeline_rope_base(t, 170, 0, &base));
    EXPECT(base == 1000000.0);
    EXPECT_OK(ptk_timeline_dump(t, 100, ',', &dump));
    EXPECT(strncmp(ptk_text_data(dump), "step,lr,batch_tokens,seq_len,global_rope_base\n", 46) == 0);
    ptk_text_free(dump);
    EXPECT_OK(ptk_timeline_ledger(t, '\t', &dump));
    EXPECT(strstr(ptk_text_data(dump), "phase\t") == ptk_text_data(dump));
    ptk_text_free(dump);
    ptk_timeline_free(t);
}

static void test_vocab(const char* root, const char* scratch) {
    uint64_t predicted = 0, planned = 0;
    ptk_vocab* v = NULL;
    ptk_vocab* w = NULL;
    ptk_text* text = NULL;
    uint32_t ids[64];
    size_t count = 0;
    const char* probe = "Tervetuloa [MASK]  koti";
    char* vocab_path = join(root, "configs/toy.vocab");
    char* corpus = join(root, "data/synthetic/lat_text.jsonl");
    char* saved = join(scratch, "capi.vocab");

    EXPECT_OK(ptk_predict_optimal_vocab_preset("large", &predicted, &planned));
    EXPECT(predicted == 55571 && planned == 55616);

    EXPECT_OK(ptk_vocab_load(vocab_path, &v));
    EXPECT(ptk_vocab_size(v) == 512);
    EXPECT_OK(ptk_vocab_encode(v, probe, strlen(probe), NULL, 0, &count));
    EXPECT(count > 0 && count <= 64);
    EXPECT_OK(ptk_vocab_encode(v, probe, strlen(probe), ids, 64, &count));
    EXPECT_OK(ptk_vocab_decode(v, ids, count, &text));
    EXPECT(strcmp(ptk_text_data(text), probe) == 0);
    ptk_text_free(text);

    EXPECT_OK(ptk_vocab_save(v, saved));
    EXPECT_OK(ptk_vocab_load(saved, &w));
    EXPECT(ptk_vocab_size(w) == ptk_vocab_size(v));
    ptk_vocab_free(w);

    EXPECT_OK(ptk_fertility(v, corpus, '\t', &text, NULL));
    EXPECT(strstr(ptk_text_data(text), "lat\t") != NULL);
    ptk_text_free(text);
    ptk_vocab_free(v);

    EXPECT(ptk_vocab_load("/nonexistent/x.vocab", &v) == PTK_ERR_IO);
    EXPECT_OK(ptk_vocab_train(corpus, 300, 1, &v));
    EXPECT(ptk_vocab_size(v) == 300);
    ptk_vocab_free(v);
    EXPECT(ptk_vocab_train(corpus, 10, 1, &v) == PTK_ERR_CONFIG);
    free(vocab_path);
    free(corpus);
    free(saved);
}

static void test_mixture(const char* root, const char* scratch) {
    ptk_text* report = NULL;
    ptk_text* warnings = NULL;
    char* manifest = join(root, "data/manifests/pretrain.tsv");
    char* corpus = join(root, "data/synthetic/corpus.jsonl");
    char* out = join(scratch, "capi_anneal.jsonl");

    EXPECT_OK(ptk_mix_audit(manifest, '\t', &report));
    EXPECT(strstr(ptk_text_data(report), "fin\t") != NULL);
    ptk_text_free(report);

    EXPECT_OK(ptk_mix_anneal(corpus, "edu", 2.0, out, '\t', &report, &warnings));
    ptk_text_free(report);
    ptk_text_free(warnings);
    EXPECT(ptk_mix_anneal(corpus, "fancy", 2.0, NULL, '\t', &report, NULL) == PTK_ERR_CONFIG);

    EXPECT_OK(ptk_xling_prefix("eng-fin", "Hello", "Hei", &report));
    EXPECT(strstr(ptk_text_data(report), "Translate into Finnish: Hello\\nHei") != NULL);
    ptk_text_free(report);
    EXPECT(ptk_xling_prefix("xx-yy", "a", "b", &report) == PTK_ERR_CONFIG);
    EXPECT(strstr(ptk_last_error(), "eng-fin") != NULL);
    free(manifest);
    free(corpus);
    free(out);
}

static void test_cost_and_metrics(const char* root) {
    ptk_cost_inputs in;
    ptk_cost_report r;
    ptk_text* text = NULL;
    double score = 0.0;
    char* runs = join(root, "data/reference_runs.txt");

    ptk_cost_defaults(&in);
    EXPECT(in.e_gpu_watts == 560.0 && in.n_gpus == 32 && in.pue == 1.04);
    in.wall_hours = 299.23;
    EXPECT_OK(ptk_cost_estimate(&in, &r));
    EXPECT(r.energy_mwh_2dp == 5.58);
    EXPECT(fabs(r.co2_kg - 22.32) < 1e-9);
    EXPECT(fabs(r.gpu_hours - 9575.36) < 1e-9);
    EXPECT(fabs(r.price - 9366.0) <= 1.0);
    in.pue = 0.5;
    EXPECT(ptk_cost_estimate(&in, &r) == PTK_ERR_CONFIG);
    ptk_cost_defaults(&in);
    EXPECT_OK(ptk_cost_batch(runs, &in, "EUR", 0, '\t', &text));
    EXPECT(strstr(ptk_text_data(text), "total\t1257.14\t23.44\t93.76") != NULL);
    ptk_text_free(text);

    EXPECT_OK(ptk_audit_footnote(200, 14, 0, &score));
    EXPECT(fabs(score - 0.07) < 1e-15);
    EXPECT(ptk_audit_footnote(0, 0, 0, &score) == PTK_ERR_INPUT);
    EXPECT(ptk_eval_ndcg("/nonexistent/run", "/nonexistent/qrels", 10, &score, '\t', NULL) == PTK_ERR_IO);
    free(runs);
}

static void test_mask_stats(void) {
    ptk_text* text = NULL;
    EXPECT_OK(ptk_mask_stats(100000, 1024, 5, 10, 0.3, 7, '\t', &text));
    EXPECT(strstr(ptk_text_data(text), "protected_selected\t0\n") != NULL);
    ptk_text_free(text);
    EXPECT(ptk_mask_stats(1000, 1024, 5, 10, 1.5, 7, '\t', &text) == PTK_ERR_CONFIG);
}

static void test_config(const char* root) {
    ptk_text* report = NULL;
    char* good = join(root, "configs/toy_train.json");
    EXPECT_OK(ptk_config_check(good, &report));
    EXPECT(strstr(ptk_text_data(report), "\"switch_step\": 170") != NULL);
    ptk_text_free(report);
    EXPECT(ptk_config_check("/nonexistent/config.json", &report) != PTK_OK);
    free(good);
}

int main(int argc, char** argv) {
    if (argc != 3) {
        fprintf(stderr, "usage: %s <source_dir> <scratch_dir>\n", argv[0]);
        return 2;
    }
    test_errors();
    test_schedule();
    test_vocab(argv[1], argv[2]);
    test_mixture(argv[1], argv[2]);
    test_cost_and_metrics(argv[1]);
    test_mask_stats();
    test_config(argv[1]);
    if (failures != 0) {
        fprintf(stderr, "%d failure(s)\n", failures);
        return 1;
    }
    printf("capi: all checks passed\n");
    return 0;
}
