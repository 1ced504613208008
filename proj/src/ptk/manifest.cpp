// SPDX-License-Identifier: Apache-2.0

#include "ptk/error.hpp"
#include "ptk/mixture.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

namespace ptk::mixture {

std::string_view to_string(MixKind kind) noexcept {
    switch (kind) {
        case MixKind::pretrain:
            return "pretrain";
        case MixKind::context_extension:
            return "context_extension";
        case MixKind::annealing_baseline:
            return "annealing_baseline";
        case MixKind::annealing_edu:
            return "annealing_edu";
    }
    return "pretrain";
}

MixKind parse_mix_kind(std::string_view s) {
    if (s == "pretrain") {
        return MixKind::pretrain;
    }
    if (s == "context_extension") {
        return MixKind::context_extension;
    }
    if (s == "annealing_baseline" || s == "baseline") {
        return MixKind::annealing_baseline;
    }
    if (s == "annealing_edu" || s == "edu") {
        return MixKind::annealing_edu;
    }
    throw ConfigError("unknown mixture kind '" + std::string(s) + "'");
}

std::uint64_t final_tokens_for(std::uint64_t processed_tokens, double sampling_factor) {
    return static_cast<std::uint64_t>(std::llround(static_cast<double>(processed_tokens) * sampling_factor));
}

void MixtureManifest::validate() const {
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& e : entries) {
        const auto label = e.spec.lang + "/" + e.spec.name;
        if (!(e.spec.sampling_factor > 0.0) || !std::isfinite(e.spec.sampling_factor)) {
            throw ConfigError("manifest: " + label + ": sampling factor must be positive");
        }
        if (!is_known_language(e.spec.lang)) {
            throw ConfigError("manifest: " + label + ": unknown language");
        }
        if (!seen.emplace(e.spec.lang, e.spec.name).second) {
            throw ConfigError("manifest: duplicate dataset " + label);
        }
        const auto expected = final_tokens_for(e.processed_tokens, e.spec.sampling_factor);
        const auto diff = e.final_tokens > expected ? e.final_tokens - expected : expected - e.final_tokens;
        if (diff > 1) {
            throw ConfigError("manifest: " + label + ": final_tokens disagrees with processed x S");
        }
    }
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const auto tab = line.find('\t', start);
        out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
        if (tab == std::string::npos) {
            break;
        }
        start = tab + 1;
    }
    if (!out.empty() && !out.back().empty() && out.back().back() == '\r') {
        out.back().pop_back();
    }
    return out;
}

bool parse_flag(const std::string& s, const std::string& where) {
    if (s == "1" || s == "yes" || s == "true") {
        return true;
    }
    if (s == "0" || s == "no" || s == "false" || s == "-") {
        return false;
    }
    throw ConfigError(where + ": expected a flag (1/0), got '" + s + "'");
}

std::uint64_t parse_count(const std::string& s, const std::string& where) {
    if (s == "-" || s.empty()) {
        return 0;
    }
    try {
        std::size_t used = 0;
        const auto v = std::stoull(s, &used);
        if (used == s.size()) {
            return v;
        }
    } catch (const std::exception&) {
    }
    throw ConfigError(where + ": expected a token count, got '" + s + "'");
}

double parse_real(const std::string& s, const std::string& where) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used == s.size()) {
            return v;
        }
    } catch (const std::exception&) {
    }
    throw ConfigError(where + ": expected a number, got '" + s + "'");
}

constexpr std::string_view kColumns[] = {"name", "lang", "S", "pii_scrub", "dedup", "initial_tokens",
                                         "processed_tokens", "corpus"};

}  // namespace

MixtureManifest read_manifest(std::istream& in, const std::filesystem::path& base_dir) {
    MixtureManifest m;
    std::string line;
    std::size_t lineno = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string where = "manifest line " + std::to_string(lineno);
        if (line.empty() || line[0] == '#' || line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        auto fields = split_tabs(line);
        if (line[0] == '@') {
            if (fields.size() != 2) {
                throw ConfigError(where + ": expected '@key<TAB>value'");
            }
            if (fields[0] == "@kind") {
                m.kind = parse_mix_kind(fields[1]);
            } else if (fields[0] == "@pii_rules") {
                m.pii_rules = fields[1];
            } else {
                throw ConfigError(where + ": unknown directive " + fields[0]);
            }
            continue;
        }
        if (!header_seen) {
            if (fields.size() < 7 || fields.size() > 8) {
                throw ConfigError(where + ": header must list " + std::to_string(std::size(kColumns) - 1) +
                                  " or " + std::to_string(std::size(kColumns)) + " columns");
            }
            for (std::size_t i = 0; i < fields.size(); ++i) {
                if (fields[i] != kColumns[i]) {
                    throw ConfigError(where + ": column " + std::to_string(i + 1) + " must be '" +
                                      std::string(kColumns[i]) + "'");
                }
            }
            header_seen = true;
            continue;
        }
        if (fields.size() < 7 || fields.size() > 8) {
            throw ConfigError(where + ": expected 7 or 8 tab-separated fields");
        }
        ManifestEntry e;
        e.spec.name = fields[0];
        e.spec.lang = fields[1];
        e.spec.sampling_factor = parse_real(fields[2], where);
        e.spec.pii_scrub = parse_flag(fields[3], where);
        e.spec.dedup = parse_flag(fields[4], where);
        e.spec.initial_tokens = parse_count(fields[5], where);
        e.processed_tokens = parse_count(fields[6], where);
        if (fields.size() == 8 && fields[7] != "-" && !fields[7].empty()) {
            std::filesystem::path p(fields[7]);
            e.spec.corpus = p.is_absolute() ? p : base_dir / p;
        }
        if (!(e.spec.sampling_factor > 0.0)) {
            throw ConfigError(where + ": sampling factor must be positive");
        }
        e.final_tokens = final_tokens_for(e.processed_tokens, e.spec.sampling_factor);
        m.entries.push_back(std::move(e));
    }
    m.validate();
    return m;
}

MixtureManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open manifest " + path.string());
    }
    return read_manifest(in, path.parent_path());
}

void write_manifest(std::ostream& out, const MixtureManifest& m) {
    out << "@kind\t" << to_string(m.kind) << '\n' << "@pii_rules\t" << m.pii_rules << '\n';
    for (std::size_t i = 0; i < std::size(kColumns); ++i) {
        out << (i ? "\t" : "") << kColumns[i];
    }
    out << '\n';
    char buf[32];
    for (const auto& e : m.entries) {
        std::snprintf(buf, sizeof buf, "%.17g", e.spec.sampling_factor);
        out << e.spec.name << '\t' << e.spec.lang << '\t' << buf << '\t' << (e.spec.pii_scrub ? 1 : 0) << '\t'
            << (e.spec.dedup ? 1 : 0) << '\t' << e.spec.initial_tokens << '\t' << e.processed_tokens << '\t'
            << (e.spec.corpus ? e.spec.corpus->string() : "-") << '\n';
    }
}

// ---------------------------------------------------------------------------
// Audits

namespace {

std::vector<LanguageShare> to_shares(const std::map<std::string, std::uint64_t>& by_lang) {
    std::uint64_t total = 0;
    for (const auto& [lang, t] : by_lang) {
        total += t;
    }
    std::vector<LanguageShare> rows;
    for (const auto& [lang, t] : by_lang) {
        rows.push_back({lang, t, total == 0 ? 0.0 : 100.0 * static_cast<double>(t) / static_cast<double>(total)});
    }
    std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.tokens > b.tokens; });
    return rows;
}

}  // namespace

std::vector<LanguageShare> audit_distribution(const MixtureManifest& manifest) {
    std::map<std::string, std::uint64_t> by_lang;
    for (const auto& e : manifest.entries) {
        by_lang[e.spec.lang] += e.final_tokens;
    }
    return to_shares(by_lang);
}

double dataset_share(const MixtureManifest& manifest, std::string_view lang, std::string_view name) {
    std::uint64_t total = 0;
    std::uint64_t hit = 0;
    for (const auto& e : manifest.entries) {
        total += e.final_tokens;
        if (e.spec.lang == lang && e.spec.name == name) {
            hit += e.final_tokens;
        }
    }
    return total == 0 ? 0.0 : 100.0 * static_cast<double>(hit) / static_cast<double>(total);
}

std::vector<LanguageShare> audit_documents(std::span<const Document> docs) {
    std::map<std::string, std::uint64_t> by_lang;
    for (const auto& d : docs) {
        by_lang[d.lang] += d.token_count;
    }
    return to_shares(by_lang);
}

void write_audit(std::ostream& out, const std::vector<LanguageShare>& rows, char d) {
    out << "lang" << d << "tokens" << d << "percent\n";
    char buf[32];
    std::uint64_t total = 0;
    double pct = 0.0;
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%.2f", r.percent);
        out << r.lang << d << r.tokens << d << buf << '\n';
        total += r.tokens;
        pct += r.percent;
    }
    std::snprintf(buf, sizeof buf, "%.2f", pct);
    out << "total" << d << total << d << buf << '\n';
}

// ---------------------------------------------------------------------------
// Cross-lingual prefixes

const std::vector<std::pair<std::string, std::string>>& xling_instructions() {
    static const std::vector<std::pair<std::string, std::string>> table{
        {"eng-fin", "Translate into Finnish:"},
        {"eng-sme", "Translate into Northern Sámi:"},
        {"eng-swe", "Translate into Swedish:"},
        {"fin-eng", "Käännä englanniksi:"},
        {"fin-sme", "Käännä pohjoissaameksi:"},
        {"fin-swe", "Käännä ruotsiksi:"},
        {"sme-fin", "Jorgal suomagillii:"},
        {"sme-eng", "Jorgal eŋgelasgillii:"},
        {"sme-swe", "Jorgal ruoŧagillii:"},
        {"swe-fin", "Översätt till finska:"},
        {"swe-eng", "Översätt till engelska:"},
        {"swe-sme", "Översätt till nordsamiska:"},
    };
    return table;
}

const std::string& xling_instruction(std::string_view pair) {
    for (const auto& [code, instruction] : xling_instructions()) {
        if (code == pair) {
            return instruction;
        }
    }
    std::string valid;
    for (const auto& [code, instruction] : xling_instructions()) {
        valid += (valid.empty() ? "" : ", ") + code;
    }
    throw ConfigError("unknown language pair '" + std::string(pair) + "'; valid pairs: " + valid);
}

Document prefix_xling(std::string_view pair, std::string_view src, std::string_view tgt, std::string id) {
    const std::string& instruction = xling_instruction(pair);
    Document d;
    d.id = std::move(id);
    d.lang = "xling";
    d.source = std::string(pair);
    d.text.reserve(instruction.size() + src.size() + tgt.size() + 2);
    d.text.append(instruction).append(" ").append(src).append("\n").append(tgt);
    d.token_count = whitespace_token_count(d.text);
    return d;
}

// ---------------------------------------------------------------------------
// Annealing mixes

const std::vector<std::pair<std::string, std::string>>& annealing_sources(MixKind kind) {
    static const std::vector<std::pair<std::string, std::string>> baseline{
        {"code", "SmolLM"},
        {"fin", "Europarl"},
        {"fin", "Lönnrot"},
        {"fin", "Yle news"},
        {"eng", "FineWeb-Edu fortified"},
        {"eng", "British Library"},
        {"eng", "pes2o"},
        {"eng", "PubMed Central"},
        {"eng", "PubMed Abstracts"},
        {"eng", "Wikipedia"},
        {"sme", "saami-web"},
        {"swe", "Europarl"},
        {"swe", "Yle news"},
        {"swe", "NLFCL"},
    };
    static const std::vector<std::pair<std::string, std::string>> edu{
        {"code", "SmolLM"},
        {"fin", "HPLT 2.0"},
        {"eng", "FineWeb-Edu fortified"},
        {"sme", "saami-web"},
        {"swe", "HPLT 2.0"},
    };
    switch (kind) {
        case MixKind::annealing_baseline:
            return baseline;
        case MixKind::annealing_edu:
            return edu;
        default:
            throw ConfigError("annealing: kind must be baseline or edu");
    }
}

AnnealResult compile_annealing(std::span<const Document> docs, MixKind kind, double edu_threshold) {
    const auto& allowed = annealing_sources(kind);
    auto is_allowed = [&allowed](const Document& d) {
        return std::any_of(allowed.begin(), allowed.end(),
                           [&d](const auto& p) { return p.first == d.lang && p.second == d.source; });
    };
    AnnealResult r;
    for (const auto& d : docs) {
        if (!is_allowed(d)) {
            continue;
        }
        if (kind == MixKind::annealing_edu && d.source == "HPLT 2.0") {
            auto f = filter_edu(std::span<const Document>(&d, 1), edu_threshold);
            r.errors.insert(r.errors.end(), f.errors.begin(), f.errors.end());
            r.docs.insert(r.docs.end(), f.kept.begin(), f.kept.end());
        } else {
            r.docs.push_back(d);
        }
    }
    r.audit = audit_documents(r.docs);
    return r;
}

}  // namespace ptk::mixture
