// SPDX-License-Identifier: Apache-2.0

#include "doctest.h"

#include "ptk/document.hpp"
#include "ptk/error.hpp"
#include "ptk/mixture.hpp"
#include "ptk/rng.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

using namespace ptk::mixture;
using ptk::Document;

namespace {

Document doc(std::string id, std::string lang, std::string text, std::uint64_t tokens = 0) {
    Document d;
    d.id = std::move(id);
    d.lang = std::move(lang);
    d.text = std::move(text);
    d.token_count = tokens ? tokens : ptk::whitespace_token_count(d.text);
    d.source = "test";
    return d;
}

std::uint64_t tokens_of(const std::vector<Document>& docs) {
    std::uint64_t n = 0;
    for (const auto& d : docs) n += d.token_count;
    return n;
}

std::filesystem::path src_dir() { return PTK_SOURCE_DIR; }

}  // namespace

TEST_SUITE("mixture") {

TEST_CASE("dedup examples") {
    const std::vector<Document> same{doc("a", "fin", "sama teksti"), doc("b", "fin", "sama teksti")};
    const auto out = dedup_exact(same);
    REQUIRE(out.size() == 1);
    CHECK(out[0].id == "a");
    const std::vector<Document> langs{doc("a", "fin", "text"), doc("b", "swe", "text")};
    CHECK(dedup_exact(langs).size() == 2);
    CHECK(dedup_exact(std::span<const Document>{}).empty());
}

TEST_CASE("dedup normalization") {
    CHECK(normalize_for_dedup("a \r\nb\t\r\n\n  ") == "a\nb");
    CHECK(normalize_for_dedup("Case") != normalize_for_dedup("case"));
    const std::vector<Document> v{doc("a", "eng", "line one\nline two"), doc("b", "eng", "line one  \r\nline two\n"),
                                  doc("c", "eng", "line one\rline two"), doc("d", "eng", "Line one\nline two")};
    const auto out = dedup_exact(v);
    REQUIRE(out.size() == 2);
    CHECK(out[0].id == "a");
    CHECK(out[1].id == "d");
}

TEST_CASE("engineered duplicate share gives the expected reduction") {
    // 6269 unique tokens followed by 3731 tokens of repeats: -37.31%
    std::vector<Document> docs;
    for (int i = 0; i < 6269; ++i) docs.push_back(doc("u" + std::to_string(i), "fin", "w" + std::to_string(i), 1));
    for (int i = 0; i < 3731; ++i) {
        docs.push_back(doc("d" + std::to_string(i), "fin", "w" + std::to_string(i % 6269) + "  ", 1));
    }
    DedupStats st;
    const auto out = dedup_exact(docs, &st);
    CHECK(out.size() == 6269);
    CHECK(std::abs(st.reduction_percent() - (-37.31)) <= 0.1);
}

TEST_CASE("dedup is idempotent, order preserving and never adds tokens") {
    ptk::Rng rng(3);
    std::vector<Document> docs;
    for (int i = 0; i < 500; ++i) {
        docs.push_back(doc(std::to_string(i), rng.below(2) ? "fin" : "eng", "t" + std::to_string(rng.below(120)),
                           1 + rng.below(9)));
    }
    const auto once = dedup_exact(docs);
    const auto twice = dedup_exact(once);
    CHECK(once == twice);
    CHECK(tokens_of(once) <= tokens_of(docs));
    for (std::size_t i = 1; i < once.size(); ++i) REQUIRE(std::stoi(once[i - 1].id) < std::stoi(once[i].id));
}

TEST_CASE("shared seen set across concurrent shards") {
    std::vector<Document> docs;
    for (int i = 0; i < 4000; ++i) docs.push_back(doc(std::to_string(i), "fin", "x" + std::to_string(i % 1000)));
    SeenSet seen;
    std::vector<std::vector<Document>> outs(4);
    std::vector<std::thread> workers;
    for (int s = 0; s < 4; ++s) {
        workers.emplace_back([&, s] {
            outs[s] = dedup_exact(std::span<const Document>(docs).subspan(s * 1000, 1000), seen);
        });
    }
    for (auto& w : workers) w.join();
    std::size_t total = 0;
    for (const auto& o : outs) total += o.size();
    CHECK(total == 1000);
    CHECK(seen.size() == 1000);
}

TEST_CASE("pii examples") {
    const auto& rules = default_pii_rules();
    CHECK(scrub_pii(doc("a", "fin", "mail me at a@b.fi"), rules).text == "mail me at [EMAIL]");
    CHECK(scrub_pii(doc("a", "fin", "soita +358 40 123 4567 nyt"), rules).text == "soita [PHONE] nyt");
    CHECK(scrub_pii(doc("a", "eng", "host 192.168.0.1 down"), rules).text == "host [IP] down");
    const std::string clean = "Ei mitään henkilötietoja 2024.";
    CHECK(scrub_pii(doc("a", "fin", clean), rules).text == clean);
    CHECK(rules.version() == "default-v1");
    CHECK_THROWS_AS(pii_rules_by_version("v0"), ptk::ConfigError);
    CHECK_THROWS_AS(PiiRuleSet("empty", {}), ptk::ConfigError);
}

TEST_CASE("pii scrubbing is idempotent on the synthetic corpus") {
    const auto docs = ptk::read_jsonl(src_dir() / "data/synthetic/corpus.jsonl");
    const auto& rules = default_pii_rules();
    std::size_t changed = 0;
    for (std::size_t i = 0; i < 1000 && i < docs.size(); ++i) {
        const auto once = scrub_pii(docs[i], rules);
        if (once.text != docs[i].text) ++changed;
        REQUIRE(scrub_pii(once, rules).text == once.text);
    }
    CHECK(changed > 0);
}

TEST_CASE("edu filter") {
    auto scored = [](double s) {
        auto d = doc("x", "fin", "a");
        d.edu_score = s;
        return d;
    };
    const std::vector<Document> docs{scored(2.0), scored(1.99), doc("n", "fin", "b")};
    const auto r = filter_edu(docs);
    REQUIRE(r.kept.size() == 1);
    CHECK(*r.kept[0].edu_score == 2.0);
    CHECK(r.dropped == 1);
    CHECK(r.errors.size() == 1);
}

TEST_CASE("edu filter keeps 60% of uniform integer scores 0..4") {
    std::vector<Document> docs;
    for (int i = 0; i < 10000; ++i) {
        auto d = doc(std::to_string(i), "eng", "t");
        d.edu_score = static_cast<double>(i % 5);
        docs.push_back(d);
    }
    const auto r = filter_edu(docs);
    CHECK(r.kept.size() == 6000);
    for (std::size_t i = 1; i < r.kept.size(); ++i) {
        REQUIRE(std::stoi(r.kept[i - 1].id) < std::stoi(r.kept[i].id));
    }
}

TEST_CASE("edu scores from a sidecar") {
    std::vector<Document> docs{doc("a", "fin", "x"), doc("b", "fin", "y")};
    std::istringstream side("# id score\na\t3.5\nzz\t1\n");
    CHECK(attach_edu_scores(docs, side) == 1);
    CHECK(docs[0].edu_score == 3.5);
    CHECK_FALSE(docs[1].edu_score.has_value());
    std::istringstream bad("a 3\n");
    CHECK_THROWS_AS(attach_edu_scores(docs, bad), ptk::InputError);
}

TEST_CASE("sampling with integer factors") {
    std::vector<Document> docs;
    for (int i = 0; i < 20; ++i) docs.push_back(doc(std::to_string(i), "fin", "t", 10 + i));
    CHECK(sample_dataset(docs, 1.0, 5) == docs);
    const auto three = sample_dataset(docs, 3.0, 5);
    REQUIRE(three.size() == 60);
    for (std::size_t i = 0; i < 60; ++i) REQUIRE(three[i] == docs[i % 20]);
    CHECK_THROWS_AS(sample_dataset(docs, 0.0, 5), ptk::ConfigError);
    CHECK_THROWS_AS(sample_dataset(docs, -1.0, 5), ptk::ConfigError);
}

TEST_CASE("oversampling at S = 30: 45.5M tokens to about 1.365B") {
    std::vector<Document> docs;
    for (int i = 0; i < 4550; ++i) docs.push_back(doc(std::to_string(i), "code", "x", 10000));
    const auto out = sample_dataset(docs, 30.0, 1);
    CHECK(tokens_of(out) == 1'365'000'000ULL);
}

TEST_CASE("subsampling at S = 0.83: 15.4B tokens to about 12.8B") {
    std::vector<Document> docs;
    ptk::Rng rng(8);
    for (int i = 0; i < 15400; ++i) docs.push_back(doc(std::to_string(i), "code", "x", 500000 + rng.below(1000001)));
    const double total = static_cast<double>(tokens_of(docs));
    const auto a = sample_dataset(docs, 0.83, 42);
    const auto b = sample_dataset(docs, 0.83, 42);
    CHECK(a == b);
    CHECK(std::abs(static_cast<double>(tokens_of(a)) - 0.83 * total) <= 0.005 * 0.83 * total);
    CHECK(std::abs(0.83 * 15.4e9 - 12.8e9) <= 0.05e9);
}

TEST_CASE("fractional sampling emits within 0.5% on random factors") {
    std::vector<Document> docs;
    ptk::Rng rng(9);
    for (int i = 0; i < 400; ++i) docs.push_back(doc(std::to_string(i), "fin", "x", 50 + rng.below(400)));
    const double total = static_cast<double>(tokens_of(docs));
    for (const double s : {0.25, 0.5, 1.37, 2.5, 4.9}) {
        const auto out = sample_dataset(docs, s, 77);
        CAPTURE(s);
        CHECK(std::abs(static_cast<double>(tokens_of(out)) - s * total) <= 0.005 * s * total);
    }
}

TEST_CASE("manifest parsing and final tokens") {
    const auto m = load_manifest(src_dir() / "data/manifests/pretrain.tsv");
    CHECK(m.kind == MixKind::pretrain);
    CHECK(m.entries.size() == 44);
    for (const auto& e : m.entries) {
        const double exact = static_cast<double>(e.processed_tokens) * e.spec.sampling_factor;
        REQUIRE(std::abs(static_cast<double>(e.final_tokens) - exact) <= 1.0);
        REQUIRE(e.spec.sampling_factor > 0.0);
        REQUIRE(ptk::is_known_language(e.spec.lang));
    }
    std::ostringstream out;
    write_manifest(out, m);
    std::istringstream back(out.str());
    const auto m2 = read_manifest(back);
    REQUIRE(m2.entries.size() == m.entries.size());
    CHECK(m2.entries[5].final_tokens == m.entries[5].final_tokens);
}

TEST_CASE("manifest errors") {
    std::istringstream neg("@kind\tpretrain\nname\tlang\tS\tpii_scrub\tdedup\tinitial_tokens\tprocessed_tokens\n"
                           "x\tfin\t-1\t0\t0\t-\t10\n");
    CHECK_THROWS_AS(read_manifest(neg), ptk::ConfigError);
    std::istringstream lang("@kind\tpretrain\nname\tlang\tS\tpii_scrub\tdedup\tinitial_tokens\tprocessed_tokens\n"
                            "x\tdeu\t1\t0\t0\t-\t10\n");
    CHECK_THROWS_AS(read_manifest(lang), ptk::Error);
    CHECK_THROWS_AS(parse_mix_kind("weird"), ptk::ConfigError);
}

TEST_CASE("language distribution of the pretraining manifest") {
    const auto m = load_manifest(src_dir() / "data/manifests/pretrain.tsv");
    const auto rows = audit_distribution(m);
    const std::map<std::string, double> expected{{"fin", 53.6}, {"eng", 20.7}, {"swe", 20.5}, {"code", 3.6},
                                                 {"xling", 1.0}, {"sme", 0.3},  {"lat", 0.3}};
    double sum = 0.0;
    for (const auto& r : rows) {
        CAPTURE(r.lang);
        CHECK(std::abs(r.percent - expected.at(r.lang)) <= 0.2);
        sum += r.percent;
    }
    CHECK(std::abs(sum - 100.0) <= 0.01);
    CHECK(rows.front().lang == "fin");
    CHECK(std::abs(static_cast<double>(rows.front().tokens) / 1e9 - 209.09) <= 0.2);
}

TEST_CASE("single-dataset manifest audits to 100%") {
    MixtureManifest m;
    ManifestEntry e;
    e.spec.name = "only";
    e.spec.lang = "sme";
    e.processed_tokens = 10;
    e.final_tokens = 10;
    m.entries.push_back(e);
    const auto rows = audit_distribution(m);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].percent == 100.0);
}

TEST_CASE("annealing fixtures") {
    const auto base = load_manifest(src_dir() / "data/manifests/anneal_baseline.tsv");
    double eng = 0.0;
    for (const auto& r : audit_distribution(base)) {
        if (r.lang == "eng") eng = r.percent;
    }
    CHECK(eng > 90.0);
    CHECK(std::abs(dataset_share(base, "eng", "FineWeb-Edu fortified") - 44.0) <= 1.0);
    const auto edu = load_manifest(src_dir() / "data/manifests/anneal_edu.tsv");
    CHECK(std::abs(dataset_share(edu, "fin", "HPLT 2.0") - 54.9) <= 0.5);
}

TEST_CASE("compile annealing mixes from a scored corpus") {
    const auto docs = ptk::read_jsonl(src_dir() / "data/synthetic/corpus.jsonl");
    const auto base = compile_annealing(docs, MixKind::annealing_baseline);
    const auto edu = compile_annealing(docs, MixKind::annealing_edu);
    CHECK(base.errors.empty());
    for (const auto& d : base.docs) REQUIRE(d.source != "HPLT 2.0");
    bool saw_hplt = false;
    for (const auto& d : edu.docs) {
        if (d.source == "HPLT 2.0") {
            saw_hplt = true;
            REQUIRE(*d.edu_score >= 2.0);
        }
    }
    CHECK(saw_hplt);
    CHECK_THROWS_AS(compile_annealing(docs, MixKind::pretrain), ptk::ConfigError);
}

TEST_CASE("cross-lingual prefixes") {
    CHECK(xling_instructions().size() == 12);
    const auto d = prefix_xling("eng-fin", "Hello", "Hei");
    CHECK(d.text == "Translate into Finnish: Hello\nHei");
    CHECK(d.lang == "xling");
    CHECK(prefix_xling("fin-eng", "Hei", "Hello").text.rfind("Käännä englanniksi:", 0) == 0);
    try {
        prefix_xling("xx-yy", "a", "b");
        FAIL("expected an error");
    } catch (const ptk::ConfigError& e) {
        CHECK(std::string(e.what()).find("swe-sme") != std::string::npos);
    }
}

TEST_CASE("context extension sampling") {
    std::vector<Document> docs;
    ptk::Rng rng(21);
    const std::uint64_t lo[] = {10, 1024, 10240, 16385};
    const std::uint64_t hi[] = {1024, 10240, 16385, 40000};
    const int pool[] = {2500, 8000, 200, 100};
    for (int b = 0; b < 4; ++b) {
        for (int i = 0; i < pool[b]; ++i) {
            docs.push_back(doc("b" + std::to_string(b) + "-" + std::to_string(i), "fin", "x",
                               lo[b] + rng.below(hi[b] - lo[b])));
        }
    }
    const auto buckets = default_extension_buckets();
    const auto s = sample_context_extension(docs, buckets, 5, 10000);
    CHECK(s.warnings.empty());
    CHECK(s.docs.size() == 10000);
    const double target[] = {0.2101, 0.7756, 0.0103, 0.0040};
    for (int b = 0; b < 4; ++b) CHECK(std::abs(s.achieved_share[b] - target[b]) <= 0.01);
    const auto again = sample_context_extension(docs, buckets, 5, 10000);
    CHECK(again.docs == s.docs);

    const std::vector<LengthBucket> only_short{{"<1K", 0, 1024, 1.0}, {"rest", 1024, UINT64_MAX, 0.0}};
    const auto short_only = sample_context_extension(docs, only_short, 5);
    CHECK(short_only.docs.size() == 2500);
    for (const auto& d : short_only.docs) REQUIRE(d.token_count < 1024);
}

TEST_CASE("unsatisfiable bucket yields a warning") {
    std::vector<Document> docs;
    for (int i = 0; i < 100; ++i) docs.push_back(doc(std::to_string(i), "fin", "x", 100 + i));
    const auto s = sample_context_extension(docs, default_extension_buckets(), 1, 100);
    CHECK_FALSE(s.warnings.empty());
    CHECK(s.achieved_share[0] == 1.0);
    std::vector<LengthBucket> bad = default_extension_buckets();
    bad[0].share = 0.5;
    CHECK_THROWS_AS(sample_context_extension(docs, bad, 1), ptk::ConfigError);
}

TEST_CASE("building the toy manifest is deterministic") {
    const auto m = load_manifest(src_dir() / "configs/toy_manifest.tsv");
    const auto a = apply_sampling(m, 2024);
    const auto b = apply_sampling(m, 2024);
    CHECK(a.docs == b.docs);
    for (const auto& row : a.rows) {
        CAPTURE(row.name);
        const double target = static_cast<double>(row.tokens_processed) * row.sampling_factor;
        CHECK(std::abs(static_cast<double>(row.tokens_emitted) - target) <= 0.005 * target);
        CHECK(row.dedup.tokens_out <= row.dedup.tokens_in);
    }
    // Only scrubbed entries must be free of contact strings.
    for (const auto& e : m.entries) {
        if (!e.spec.pii_scrub) continue;
        for (const auto& d : a.docs) {
            if (d.lang == e.spec.lang && d.source == e.spec.name) REQUIRE(d.text.find("@example.org") == std::string::npos);
        }
    }
}

TEST_CASE("jsonl round trip") {
    auto d = doc("id\"1", "sme", "čá\n\"quoted\"\t", 3);
    d.edu_score = 2.5;
    std::stringstream buf;
    ptk::write_jsonl(buf, {d});
    const auto back = ptk::read_jsonl(buf);
    REQUIRE(back.size() == 1);
    CHECK(back[0] == d);
    std::istringstream bad("{\"id\": 1}\n");
    CHECK_THROWS_AS(ptk::read_jsonl(bad), ptk::InputError);
}

}  // TEST_SUITE
