// SPDX-License-Identifier: Apache-2.0

#include "ptk/mixture.hpp"

#include "ptk/error.hpp"
#include "ptk/rng.hpp"

#include <sodium.h>

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cmath>
#include <cstring>
#include <istream>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_map>

namespace ptk::mixture {

// ---------------------------------------------------------------------------
// Dedup

std::string normalize_for_dedup(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    auto trim_line_end = [&out] {
        while (!out.empty() && (out.back() == ' ' || out.back() == '\t' || out.back() == '\f' || out.back() == '\v')) {
            out.pop_back();
        }
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (c == '\r') {
            trim_line_end();
            out += '\n';
            if (i + 1 < text.size() && text[i + 1] == '\n') {
                ++i;
            }
        } else if (c == '\n') {
            trim_line_end();
            out += '\n';
        } else {
            out += c;
        }
    }
    while (!out.empty() && std::isspace(static_cast<unsigned char>(out.back()))) {
        out.pop_back();
    }
    return out;
}

Hash128 dedup_key(std::string_view text) {
    static const bool ready = sodium_init() >= 0;
    if (!ready) {
        throw Error("libsodium initialisation failed");
    }
    const std::string norm = normalize_for_dedup(text);
    unsigned char digest[16];
    crypto_generichash(digest, sizeof digest, reinterpret_cast<const unsigned char*>(norm.data()), norm.size(),
                       nullptr, 0);
    Hash128 h;
    std::memcpy(&h.hi, digest, 8);
    std::memcpy(&h.lo, digest + 8, 8);
    return h;
}

bool SeenSet::insert_if_absent(std::string_view lang, const Hash128& key) {
    // Fold the language into the key so identical texts in different
    // languages never collide.
    const Hash128 scoped{key.hi ^ substream_seed(0, lang), key.lo};
    Stripe& s = stripes_[scoped.lo % kStripes];
    std::lock_guard lock(s.mu);
    return s.keys.insert(scoped).second;
}

std::size_t SeenSet::size() const {
    std::size_t n = 0;
    for (const auto& s : stripes_) {
        std::lock_guard lock(s.mu);
        n += s.keys.size();
    }
    return n;
}

double DedupStats::reduction_percent() const noexcept {
    if (tokens_in == 0) {
        return 0.0;
    }
    return 100.0 * (static_cast<double>(tokens_out) - static_cast<double>(tokens_in)) / static_cast<double>(tokens_in);
}

std::vector<Document> dedup_exact(std::span<const Document> docs, SeenSet& seen, DedupStats* stats) {
    std::vector<Document> out;
    DedupStats local;
    for (const auto& d : docs) {
        ++local.docs_in;
        local.tokens_in += d.token_count;
        if (seen.insert_if_absent(d.lang, dedup_key(d.text))) {
            ++local.docs_out;
            local.tokens_out += d.token_count;
            out.push_back(d);
        }
    }
    if (stats != nullptr) {
        *stats = local;
    }
    return out;
}

std::vector<Document> dedup_exact(std::span<const Document> docs, DedupStats* stats) {
    SeenSet seen;
    return dedup_exact(docs, seen, stats);
}

// ---------------------------------------------------------------------------
// PII

PiiRuleSet::PiiRuleSet(std::string version, std::vector<PiiRule> rules)
    : version_(std::move(version)), rules_(std::move(rules)) {
    if (rules_.empty()) {
        throw ConfigError("pii: rule set '" + version_ + "' is empty");
    }
    for (const auto& r : rules_) {
        try {
            compiled_.emplace_back(r.pattern, std::regex::ECMAScript | std::regex::optimize);
        } catch (const std::regex_error& e) {
            throw ConfigError("pii: rule '" + r.name + "' does not compile: " + e.what());
        }
    }
}

std::string PiiRuleSet::apply(std::string_view text) const {
    std::string s(text);
    for (std::size_t i = 0; i < rules_.size(); ++i) {
        s = std::regex_replace(s, compiled_[i], rules_[i].placeholder);
    }
    return s;
}

const PiiRuleSet& default_pii_rules() {
    static const PiiRuleSet rules(
        "default-v1",
        {
            {"email", R"([A-Za-z0-9._%+-]+@[A-Za-z0-9-]+(?:\.[A-Za-z0-9-]+)*\.[A-Za-z]{2,})", "[EMAIL]"},
            {"ip", R"(\b(?:(?:25[0-5]|2[0-4][0-9]|1[0-9]{2}|[1-9]?[0-9])\.){3}(?:25[0-5]|2[0-4][0-9]|1[0-9]{2}|[1-9]?[0-9])\b)",
             "[IP]"},
            {"phone", R"(\+[0-9]{1,3}(?:[ .-]?[0-9]{2,4}){2,5})", "[PHONE]"},
        });
    return rules;
}

const PiiRuleSet& pii_rules_by_version(std::string_view version) {
    if (version == default_pii_rules().version()) {
        return default_pii_rules();
    }
    throw ConfigError("pii: unknown rule set version '" + std::string(version) + "'");
}

Document scrub_pii(Document doc, const PiiRuleSet& rules, const TokenCounter& count) {
    std::string scrubbed = rules.apply(doc.text);
    if (scrubbed != doc.text) {
        doc.text = std::move(scrubbed);
        doc.token_count = count ? count(doc.text) : whitespace_token_count(doc.text);
    }
    return doc;
}

// ---------------------------------------------------------------------------
// Edu filter

EduFilterResult filter_edu(std::span<const Document> docs, double threshold) {
    EduFilterResult r;
    for (const auto& d : docs) {
        if (!d.edu_score) {
            r.errors.push_back("document '" + d.id + "' has no edu_score");
            continue;
        }
        if (*d.edu_score >= threshold) {
            r.kept.push_back(d);
        } else {
            ++r.dropped;
        }
    }
    return r;
}

std::size_t attach_edu_scores(std::vector<Document>& docs, std::istream& sidecar) {
    std::unordered_map<std::string, double> scores;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(sidecar, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') {
            continue;
        }
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw InputError("edu scores line " + std::to_string(lineno) + ": expected 'id<TAB>score'");
        }
        try {
            std::size_t used = 0;
            const std::string num = line.substr(tab + 1);
            scores[line.substr(0, tab)] = std::stod(num, &used);
            if (num.find_first_not_of(" \r", used) != std::string::npos) {
                throw std::invalid_argument("trailing");
            }
        } catch (const std::exception&) {
            throw InputError("edu scores line " + std::to_string(lineno) + ": bad score");
        }
    }
    std::size_t matched = 0;
    for (auto& d : docs) {
        if (const auto it = scores.find(d.id); it != scores.end()) {
            d.edu_score = it->second;
            ++matched;
        }
    }
    return matched;
}

// ---------------------------------------------------------------------------
// Sampling

std::vector<Document> sample_dataset(std::span<const Document> docs, double sampling_factor, std::uint64_t seed) {
    if (!(sampling_factor > 0.0) || !std::isfinite(sampling_factor)) {
        throw ConfigError("sampling factor must be positive");
    }
    const double whole = std::floor(sampling_factor);
    const double frac = sampling_factor - whole;
    std::vector<Document> out;
    out.reserve(static_cast<std::size_t>(whole + 1.0) * docs.size());
    for (std::uint64_t rep = 0; rep < static_cast<std::uint64_t>(whole); ++rep) {
        out.insert(out.end(), docs.begin(), docs.end());
    }
    if (frac <= 0.0 || docs.empty()) {
        return out;
    }
    const double total = std::accumulate(docs.begin(), docs.end(), 0.0,
                                         [](double acc, const Document& d) { return acc + double(d.token_count); });
    const double target = frac * total;
    std::vector<std::size_t> order(docs.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    rng.shuffle(std::span<std::size_t>(order));
    std::vector<bool> take(docs.size(), false);
    double acc = 0.0;
    for (const std::size_t i : order) {
        const double t = static_cast<double>(docs[i].token_count);
        if (std::abs(acc + t - target) < std::abs(acc - target)) {
            take[i] = true;
            acc += t;
        }
    }
    // Greedy leaves a gap of up to half a document. On small datasets that is
    // a visible share of the target, so trade one taken doc for one untaken
    // doc while that narrows the gap.
    for (int round = 0; round < 64; ++round) {
        const double gap = target - acc;
        std::vector<std::pair<double, std::size_t>> out_pool;
        for (std::size_t i = 0; i < docs.size(); ++i) {
            if (!take[i]) {
                out_pool.emplace_back(static_cast<double>(docs[i].token_count), i);
            }
        }
        if (out_pool.empty()) {
            break;
        }
        std::sort(out_pool.begin(), out_pool.end());
        double best = std::abs(gap);
        std::size_t best_in = docs.size();
        std::size_t best_out = docs.size();
        for (const std::size_t i : order) {
            if (!take[i]) {
                continue;
            }
            const double want = gap + static_cast<double>(docs[i].token_count);
            auto it = std::lower_bound(out_pool.begin(), out_pool.end(), std::make_pair(want, std::size_t{0}));
            for (auto c : {it, it == out_pool.begin() ? it : std::prev(it)}) {
                if (c == out_pool.end()) {
                    continue;
                }
                const double resid = std::abs(gap - (c->first - static_cast<double>(docs[i].token_count)));
                if (resid < best) {
                    best = resid;
                    best_in = i;
                    best_out = c->second;
                }
            }
        }
        if (best_in == docs.size()) {
            break;
        }
        take[best_in] = false;
        take[best_out] = true;
        acc += static_cast<double>(docs[best_out].token_count) - static_cast<double>(docs[best_in].token_count);
    }
    for (std::size_t i = 0; i < docs.size(); ++i) {
        if (take[i]) {
            out.push_back(docs[i]);
        }
    }
    return out;
}

BuildResult apply_sampling(const MixtureManifest& manifest, std::uint64_t seed) {
    manifest.validate();
    const PiiRuleSet& rules = pii_rules_by_version(manifest.pii_rules);
    BuildResult result;
    SeenSet seen;
    for (const auto& e : manifest.entries) {
        if (!e.spec.corpus) {
            continue;
        }
        std::vector<Document> docs = read_jsonl(*e.spec.corpus);
        BuildRow row;
        row.name = e.spec.name;
        row.lang = e.spec.lang;
        row.docs_in = docs.size();
        row.sampling_factor = e.spec.sampling_factor;
        if (e.spec.dedup) {
            docs = dedup_exact(docs, seen, &row.dedup);
        }
        if (e.spec.pii_scrub) {
            for (auto& d : docs) {
                d = scrub_pii(std::move(d), rules);
            }
        }
        for (const auto& d : docs) {
            row.tokens_processed += d.token_count;
        }
        row.tokens_target = final_tokens_for(row.tokens_processed, e.spec.sampling_factor);
        const std::uint64_t stream = substream_seed(seed, "mixture/" + e.spec.lang + "/" + e.spec.name);
        std::vector<Document> sampled = sample_dataset(docs, e.spec.sampling_factor, stream);
        for (const auto& d : sampled) {
            row.tokens_emitted += d.token_count;
        }
        result.docs.insert(result.docs.end(), std::make_move_iterator(sampled.begin()),
                           std::make_move_iterator(sampled.end()));
        result.rows.push_back(std::move(row));
    }
    return result;
}

void write_build_report(std::ostream& out, const BuildResult& r, char d) {
    out << "name" << d << "lang" << d << "docs_in" << d << "dedup_reduction_pct" << d << "processed_tokens" << d
        << "S" << d << "target_tokens" << d << "emitted_tokens\n";
    char buf[32];
    for (const auto& row : r.rows) {
        out << row.name << d << row.lang << d << row.docs_in << d;
        std::snprintf(buf, sizeof buf, "%.2f", row.dedup.reduction_percent());
        out << buf << d << row.tokens_processed << d;
        std::snprintf(buf, sizeof buf, "%.2f", row.sampling_factor);
        out << buf << d << row.tokens_target << d << row.tokens_emitted << '\n';
    }
}

// ---------------------------------------------------------------------------
// Context extension

std::vector<LengthBucket> default_extension_buckets() {
    constexpr auto open = std::numeric_limits<std::uint64_t>::max();
    return {
        {"<1K", 0, 1024, 0.2101},
        {"1K-10K", 1024, 10240, 0.7756},
        {"10K-16K", 10240, 16385, 0.0103},
        {">16K", 16385, open, 0.0040},
    };
}

ExtensionSample sample_context_extension(std::span<const Document> docs, const std::vector<LengthBucket>& buckets,
                                         std::uint64_t seed, std::optional<std::uint64_t> count) {
    if (buckets.empty()) {
        throw ConfigError("context extension: no buckets");
    }
    double share_sum = 0.0;
    for (std::size_t b = 0; b < buckets.size(); ++b) {
        if (buckets[b].share < 0.0 || buckets[b].lo >= buckets[b].hi) {
            throw ConfigError("context extension: bad bucket '" + buckets[b].label + "'");
        }
        if (b > 0 && buckets[b].lo != buckets[b - 1].hi) {
            throw ConfigError("context extension: buckets must partition lengths");
        }
        share_sum += buckets[b].share;
    }
    if (std::abs(share_sum - 1.0) > 1e-6) {
        throw ConfigError("context extension: bucket shares must sum to 1");
    }

    std::vector<std::vector<std::size_t>> pools(buckets.size());
    for (std::size_t i = 0; i < docs.size(); ++i) {
        for (std::size_t b = 0; b < buckets.size(); ++b) {
            if (docs[i].token_count >= buckets[b].lo && docs[i].token_count < buckets[b].hi) {
                pools[b].push_back(i);
                break;
            }
        }
    }

    std::uint64_t n = 0;
    if (count) {
        n = *count;
    } else {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t b = 0; b < buckets.size(); ++b) {
            if (buckets[b].share > 0.0) {
                best = std::min(best, static_cast<double>(pools[b].size()) / buckets[b].share);
            }
        }
        n = static_cast<std::uint64_t>(std::floor(best + 1e-9));
    }

    // Largest-remainder apportionment of n over the bucket shares.
    std::vector<std::uint64_t> quota(buckets.size());
    std::vector<std::pair<double, std::size_t>> remainders;
    std::uint64_t assigned = 0;
    for (std::size_t b = 0; b < buckets.size(); ++b) {
        const double exact = buckets[b].share * static_cast<double>(n);
        quota[b] = static_cast<std::uint64_t>(std::floor(exact));
        assigned += quota[b];
        remainders.emplace_back(exact - std::floor(exact), b);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; assigned < n && i < remainders.size(); ++i) {
        if (buckets[remainders[i].second].share > 0.0) {
            ++quota[remainders[i].second];
            ++assigned;
        }
    }

    ExtensionSample out;
    out.per_bucket.assign(buckets.size(), 0);
    std::vector<std::size_t> chosen;
    for (std::size_t b = 0; b < buckets.size(); ++b) {
        Rng rng(substream_seed(seed, "context-extension/" + buckets[b].label));
        rng.shuffle(std::span<std::size_t>(pools[b]));
        const std::uint64_t take = std::min<std::uint64_t>(quota[b], pools[b].size());
        if (take < quota[b]) {
            out.warnings.push_back("bucket " + buckets[b].label + ": wanted " + std::to_string(quota[b]) +
                                   " documents, input has " + std::to_string(pools[b].size()));
        }
        chosen.insert(chosen.end(), pools[b].begin(), pools[b].begin() + static_cast<std::ptrdiff_t>(take));
        out.per_bucket[b] = take;
    }
    Rng mix(substream_seed(seed, "context-extension/order"));
    mix.shuffle(std::span<std::size_t>(chosen));
    out.docs.reserve(chosen.size());
    for (const std::size_t i : chosen) {
        out.docs.push_back(docs[i]);
    }
    for (std::size_t b = 0; b < buckets.size(); ++b) {
        out.achieved_share.push_back(chosen.empty() ? 0.0
                                                    : static_cast<double>(out.per_bucket[b]) /
                                                          static_cast<double>(chosen.size()));
    }
    if (!out.warnings.empty()) {
        for (std::size_t b = 0; b < buckets.size(); ++b) {
            char buf[96];
            std::snprintf(buf, sizeof buf, "bucket %s: achieved share %.4f (target %.4f)", buckets[b].label.c_str(),
                          out.achieved_share[b], buckets[b].share);
            out.warnings.emplace_back(buf);
        }
    }
    return out;
}

}  // namespace ptk::mixture
