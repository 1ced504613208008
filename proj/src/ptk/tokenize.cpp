// SPDX-License-Identifier: Apache-2.0

#include "ptk/tokenize.hpp"

#include "ptk/document.hpp"
#include "ptk/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <thread>

namespace ptk::tokenize {

std::vector<std::string> default_specials() {
    std::vector<std::string> s{"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
    for (std::size_t n = 2; n <= kMaxSpaceRun; ++n) {
        s.emplace_back(n, ' ');
    }
    return s;
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary(std::vector<std::string> specials) : specials_(std::move(specials)) {
    for (const auto& s : specials_) {
        if (s.empty()) {
            throw ConfigError("vocabulary: empty special token");
        }
        if (token_to_id_.contains(s)) {
            throw ConfigError("vocabulary: duplicate special token '" + s + "'");
        }
        token_to_id_.emplace(s, static_cast<TokenId>(id_to_token_.size()));
        id_to_token_.push_back(s);
    }
    for (std::size_t b = 0; b < kByteAlphabet; ++b) {
        std::string tok(1, static_cast<char>(b));
        // A one-byte special would collide with the byte token; keep the
        // byte id addressable through byte_id() and map the string to it.
        token_to_id_.insert_or_assign(tok, static_cast<TokenId>(id_to_token_.size()));
        id_to_token_.push_back(std::move(tok));
    }
}

TokenId Vocabulary::special_id(std::string_view name) const {
    for (std::size_t i = 0; i < specials_.size(); ++i) {
        if (specials_[i] == name) {
            return static_cast<TokenId>(i);
        }
    }
    throw ConfigError("vocabulary: no special token '" + std::string(name) + "'");
}

TokenId Vocabulary::add_merge(TokenId left, TokenId right) {
    if (left >= size() || right >= size() || is_special(left) || is_special(right)) {
        throw ConfigError("vocabulary: merge references an invalid or special id");
    }
    if (merge_rank_.contains(pair_key(left, right))) {
        throw ConfigError("vocabulary: duplicate merge");
    }
    std::string product = id_to_token_[left] + id_to_token_[right];
    TokenId result = 0;
    if (const auto it = token_to_id_.find(product); it != token_to_id_.end() && !is_special(it->second)) {
        result = it->second;
    } else {
        result = static_cast<TokenId>(id_to_token_.size());
        token_to_id_.insert_or_assign(product, result);
        id_to_token_.push_back(std::move(product));
    }
    merge_rank_.emplace(pair_key(left, right), merges_.size());
    merges_.push_back({left, right, result});
    return result;
}

Vocabulary Vocabulary::truncated(std::size_t n_merges) const {
    Vocabulary v(specials_);
    for (std::size_t i = 0; i < std::min(n_merges, merges_.size()); ++i) {
        v.add_merge(merges_[i].left, merges_[i].right);
    }
    return v;
}

namespace {

enum class CharClass { space, letter, digit, punct };

CharClass classify(unsigned char c) noexcept {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
        return CharClass::space;
    }
    if (c >= 0x80 || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z')) {
        return CharClass::letter;
    }
    if (c >= '0' && c <= '9') {
        return CharClass::digit;
    }
    return CharClass::punct;
}

void split_plain(std::string_view text, std::vector<Segment>& out) {
    std::size_t i = 0;
    while (i < text.size()) {
        const auto c = static_cast<unsigned char>(text[i]);
        std::size_t start = i;
        if (c == ' ' && i + 1 < text.size() && classify(static_cast<unsigned char>(text[i + 1])) != CharClass::space) {
            ++i;
        } else if (classify(c) == CharClass::space) {
            out.push_back({text.substr(i, 1), false});
            ++i;
            continue;
        }
        const CharClass cls = classify(static_cast<unsigned char>(text[i]));
        while (i < text.size() && classify(static_cast<unsigned char>(text[i])) == cls) {
            ++i;
        }
        out.push_back({text.substr(start, i - start), false});
    }
}

}  // namespace

std::vector<Segment> pretokenize(std::string_view text, const std::vector<std::string>& specials) {
    std::vector<Segment> out;
    std::size_t plain_start = 0;
    std::size_t i = 0;
    auto flush = [&](std::size_t end) {
        if (end > plain_start) {
            split_plain(text.substr(plain_start, end - plain_start), out);
        }
    };
    while (i < text.size()) {
        // Longest special match at i.
        std::size_t best = 0;
        for (const auto& s : specials) {
            if (s.size() > best && text.compare(i, s.size(), s) == 0) {
                best = s.size();
            }
        }
        // A space-run special of length n only matches a maximal run of
        // exactly that many remaining spaces; longer runs split greedily.
        if (best > 0 && text[i] == ' ') {
            std::size_t run = 0;
            while (i + run < text.size() && text[i + run] == ' ') {
                ++run;
            }
            best = 0;
            for (const auto& s : specials) {
                if (s.find_first_not_of(' ') == std::string::npos && s.size() <= run && s.size() > best) {
                    best = s.size();
                }
            }
        }
        if (best > 0) {
            flush(i);
            out.push_back({text.substr(i, best), true});
            i += best;
            plain_start = i;
        } else {
            ++i;
        }
    }
    flush(text.size());
    return out;
}

void Vocabulary::encode_piece(std::string_view piece, std::vector<TokenId>& out) const {
    std::vector<TokenId> symbols;
    symbols.reserve(piece.size());
    for (const char c : piece) {
        symbols.push_back(byte_id(static_cast<unsigned char>(c)));
    }
    while (symbols.size() > 1) {
        std::size_t best_rank = merges_.size();
        for (std::size_t j = 0; j + 1 < symbols.size(); ++j) {
            if (const auto it = merge_rank_.find(pair_key(symbols[j], symbols[j + 1])); it != merge_rank_.end()) {
                best_rank = std::min(best_rank, it->second);
            }
        }
        if (best_rank == merges_.size()) {
            break;
        }
        const Merge& m = merges_[best_rank];
        std::size_t w = 0;
        for (std::size_t r = 0; r < symbols.size(); ++r) {
            if (r + 1 < symbols.size() && symbols[r] == m.left && symbols[r + 1] == m.right) {
                symbols[w++] = m.result;
                ++r;
            } else {
                symbols[w++] = symbols[r];
            }
        }
        symbols.resize(w);
    }
    out.insert(out.end(), symbols.begin(), symbols.end());
}

std::vector<TokenId> Vocabulary::encode(std::string_view text) const {
    std::vector<TokenId> ids;
    for (const Segment& seg : pretokenize(text, specials_)) {
        if (seg.special) {
            ids.push_back(token_to_id_.at(std::string(seg.text)));
        } else {
            encode_piece(seg.text, ids);
        }
    }
    return ids;
}

std::string Vocabulary::decode(std::span<const TokenId> ids) const {
    std::string out;
    for (const TokenId id : ids) {
        if (id >= size()) {
            throw InputError("decode: id " + std::to_string(id) + " out of range");
        }
        out += id_to_token_[id];
    }
    return out;
}

// Vocabulary file: one entry per line, fields separated by a single space.
// Bytes outside printable ASCII, plus space and backslash, are written \xHH.
namespace {

std::string escape(std::string_view s) {
    std::string out;
    char buf[8];
    for (const char ch : s) {
        const auto c = static_cast<unsigned char>(ch);
        if (c > 0x20 && c < 0x7f && c != '\\') {
            out += ch;
        } else {
            std::snprintf(buf, sizeof buf, "\\x%02x", c);
            out += buf;
        }
    }
    return out;
}

std::string unescape(std::string_view s, std::size_t lineno) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] != '\\') {
            out += s[i];
            continue;
        }
        if (i + 3 >= s.size() || s[i + 1] != 'x') {
            throw InputError("vocab line " + std::to_string(lineno) + ": bad escape");
        }
        const std::string hex(s.substr(i + 2, 2));
        char* end = nullptr;
        const long v = std::strtol(hex.c_str(), &end, 16);
        if (hex.size() != 2 || end != hex.c_str() + 2) {
            throw InputError("vocab line " + std::to_string(lineno) + ": bad escape");
        }
        out += static_cast<char>(v);
        i += 3;
    }
    return out;
}

constexpr std::string_view kVocabHeader = "#ptk-vocab v1";

}  // namespace

void Vocabulary::save(std::ostream& out) const {
    out << kVocabHeader << '\n';
    for (const auto& s : specials_) {
        out << "special " << escape(s) << '\n';
    }
    for (const auto& m : merges_) {
        out << "merge " << escape(id_to_token_[m.left]) << ' ' << escape(id_to_token_[m.right]) << '\n';
    }
}

Vocabulary Vocabulary::load(std::istream& in) {
    std::string line;
    std::size_t lineno = 1;
    if (!std::getline(in, line) || line != kVocabHeader) {
        throw InputError("vocab: missing '" + std::string(kVocabHeader) + "' header");
    }
    std::vector<std::string> specials;
    std::vector<std::pair<std::string, std::string>> merges;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        std::istringstream ls(line);
        std::string kind, a, b, extra;
        ls >> kind >> a;
        if (kind == "special" && !a.empty() && !(ls >> extra)) {
            if (!merges.empty()) {
                throw InputError("vocab line " + std::to_string(lineno) + ": special after merges");
            }
            specials.push_back(unescape(a, lineno));
        } else if (kind == "merge" && (ls >> b) && !(ls >> extra)) {
            merges.emplace_back(unescape(a, lineno), unescape(b, lineno));
        } else {
            throw InputError("vocab line " + std::to_string(lineno) + ": malformed entry");
        }
    }
    Vocabulary v(std::move(specials));
    for (const auto& [l, r] : merges) {
        const auto li = v.token_to_id_.find(l);
        const auto ri = v.token_to_id_.find(r);
        if (li == v.token_to_id_.end() || ri == v.token_to_id_.end()) {
            throw InputError("vocab: merge references unknown token");
        }
        v.add_merge(li->second, ri->second);
    }
    return v;
}

// ---------------------------------------------------------------------------
// Training

namespace {

using PieceCounts = std::unordered_map<std::string, std::uint64_t>;

void count_pieces(std::span<const std::string> texts, const std::vector<std::string>& specials, PieceCounts& out) {
    for (const auto& t : texts) {
        for (const Segment& seg : pretokenize(t, specials)) {
            if (!seg.special) {
                ++out[std::string(seg.text)];
            }
        }
    }
}

struct Word {
    std::vector<TokenId> symbols;
    std::uint64_t count;
};

}  // namespace

Vocabulary bpe_train(std::span<const std::string> texts, const BpeOptions& opt) {
    if (texts.empty()) {
        throw ConfigError("bpe_train: empty corpus");
    }
    if (opt.target_size <= opt.specials.size() + kByteAlphabet) {
        throw ConfigError("bpe_train: target_size " + std::to_string(opt.target_size) +
                          " must exceed specials + byte alphabet (" +
                          std::to_string(opt.specials.size() + kByteAlphabet) + ")");
    }
    Vocabulary vocab(opt.specials);

    // Shard-parallel piece counting, then a merge-reduce.
    const unsigned n_shards = std::max(1u, std::min<unsigned>(opt.threads, static_cast<unsigned>(texts.size())));
    std::vector<PieceCounts> shard_counts(n_shards);
    {
        std::vector<std::thread> workers;
        const std::size_t per = (texts.size() + n_shards - 1) / n_shards;
        for (unsigned s = 0; s < n_shards; ++s) {
            const std::size_t lo = std::min(texts.size(), s * per);
            const std::size_t hi = std::min(texts.size(), lo + per);
            workers.emplace_back(
                [&, s, lo, hi] { count_pieces(texts.subspan(lo, hi - lo), opt.specials, shard_counts[s]); });
        }
        for (auto& w : workers) {
            w.join();
        }
    }
    PieceCounts counts = std::move(shard_counts[0]);
    for (unsigned s = 1; s < n_shards; ++s) {
        for (auto& [piece, n] : shard_counts[s]) {
            counts[piece] += n;
        }
    }
    std::vector<std::pair<std::string, std::uint64_t>> sorted(counts.begin(), counts.end());
    std::sort(sorted.begin(), sorted.end());

    std::vector<Word> words;
    words.reserve(sorted.size());
    for (const auto& [piece, n] : sorted) {
        Word w{{}, n};
        for (const char c : piece) {
            w.symbols.push_back(vocab.byte_id(static_cast<unsigned char>(c)));
        }
        words.push_back(std::move(w));
    }

    auto key = [](TokenId a, TokenId b) { return (std::uint64_t{a} << 32) | b; };
    std::unordered_map<std::uint64_t, std::int64_t> pair_counts;
    std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> pair_words;
    for (std::uint32_t wi = 0; wi < words.size(); ++wi) {
        const auto& sym = words[wi].symbols;
        for (std::size_t j = 0; j + 1 < sym.size(); ++j) {
            const auto k = key(sym[j], sym[j + 1]);
            pair_counts[k] += static_cast<std::int64_t>(words[wi].count);
            auto& list = pair_words[k];
            if (list.empty() || list.back() != wi) {
                list.push_back(wi);
            }
        }
    }

    while (vocab.size() < opt.target_size) {
        std::uint64_t best = 0;
        std::int64_t best_count = 0;
        for (const auto& [k, c] : pair_counts) {
            if (c <= 0) {
                continue;
            }
            if (c > best_count) {
                best = k;
                best_count = c;
            } else if (c == best_count) {
                const auto& bl = vocab.token((TokenId)(best >> 32));
                const auto& br = vocab.token((TokenId)(best & 0xffffffffu));
                const auto& cl = vocab.token((TokenId)(k >> 32));
                const auto& cr = vocab.token((TokenId)(k & 0xffffffffu));
                if (std::tie(cl, cr) < std::tie(bl, br)) {
                    best = k;
                }
            }
        }
        if (best_count == 0) {
            break;
        }
        const auto left = static_cast<TokenId>(best >> 32);
        const auto right = static_cast<TokenId>(best & 0xffffffffu);
        const TokenId merged = vocab.add_merge(left, right);

        const std::vector<std::uint32_t> affected = std::move(pair_words[best]);
        pair_words.erase(best);
        for (const std::uint32_t wi : affected) {
            Word& w = words[wi];
            const auto n = static_cast<std::int64_t>(w.count);
            for (std::size_t j = 0; j + 1 < w.symbols.size(); ++j) {
                pair_counts[key(w.symbols[j], w.symbols[j + 1])] -= n;
            }
            std::size_t out = 0;
            for (std::size_t r = 0; r < w.symbols.size(); ++r) {
                if (r + 1 < w.symbols.size() && w.symbols[r] == left && w.symbols[r + 1] == right) {
                    w.symbols[out++] = merged;
                    ++r;
                } else {
                    w.symbols[out++] = w.symbols[r];
                }
            }
            w.symbols.resize(out);
            for (std::size_t j = 0; j + 1 < w.symbols.size(); ++j) {
                const auto k = key(w.symbols[j], w.symbols[j + 1]);
                pair_counts[k] += n;
                auto& list = pair_words[k];
                if (list.empty() || list.back() != wi) {
                    list.push_back(wi);
                }
            }
        }
        pair_counts.erase(best);
        std::erase_if(pair_counts, [](const auto& kv) { return kv.second <= 0; });
    }
    return vocab;
}

Vocabulary bpe_train(std::span<const Document> corpus, const BpeOptions& options) {
    std::vector<std::string> texts;
    texts.reserve(corpus.size());
    for (const auto& d : corpus) {
        texts.push_back(d.text);
    }
    return bpe_train(std::span<const std::string>(texts), options);
}

// ---------------------------------------------------------------------------
// Size planning

std::uint64_t plan_vocab(std::uint64_t predicted_optimal) {
    if (predicted_optimal == 0) {
        throw ConfigError("plan_vocab: predicted size must be positive");
    }
    return (predicted_optimal + 63) / 64 * 64;
}

PowerLawVocabFit::PowerLawVocabFit(double coefficient, double exponent)
    : coefficient_(coefficient), exponent_(exponent) {
    if (!(coefficient > 0.0)) {
        throw ConfigError("vocab fit: coefficient must be positive");
    }
}

double PowerLawVocabFit::predict(double flops_budget, double) const {
    if (!(flops_budget > 0.0)) {
        throw ConfigError("vocab fit: flops budget must be positive");
    }
    return coefficient_ * std::pow(flops_budget, exponent_);
}

AnchoredVocabFit::AnchoredVocabFit(std::vector<std::pair<double, double>> anchors, double data_budget_tokens)
    : anchors_(std::move(anchors)), data_budget_(data_budget_tokens) {
    if (anchors_.size() < 2) {
        throw ConfigError("vocab fit: need at least two anchors");
    }
    std::sort(anchors_.begin(), anchors_.end());
    for (std::size_t i = 0; i < anchors_.size(); ++i) {
        if (!(anchors_[i].first > 0.0) || !(anchors_[i].second > 0.0)) {
            throw ConfigError("vocab fit: anchors must be positive");
        }
        if (i > 0 && !(anchors_[i].first > anchors_[i - 1].first)) {
            throw ConfigError("vocab fit: duplicate anchor budget");
        }
    }
}

double AnchoredVocabFit::predict(double flops_budget, double data_budget_tokens) const {
    if (!(flops_budget > 0.0)) {
        throw ConfigError("vocab fit: flops budget must be positive");
    }
    if (std::abs(data_budget_tokens - data_budget_) > 1e-9 * data_budget_) {
        throw ConfigError("vocab fit: anchors are calibrated only for a data budget of " +
                          std::to_string(static_cast<long long>(data_budget_)) + " tokens");
    }
    for (const auto& [c, v] : anchors_) {
        if (c == flops_budget) {
            return v;
        }
    }
    std::size_t seg = 0;
    while (seg + 2 < anchors_.size() && flops_budget > anchors_[seg + 1].first) {
        ++seg;
    }
    const auto [c0, v0] = anchors_[seg];
    const auto [c1, v1] = anchors_[seg + 1];
    const double slope = std::log(v1 / v0) / std::log(c1 / c0);
    return v0 * std::exp(slope * std::log(flops_budget / c0));
}

double fixture_flops_budget(std::string_view preset) {
    // Non-embedding parameters: total parameters minus vocab x hidden.
    double params = 0.0;
    if (preset == "tiny") {
        params = 51e6 - 27264.0 * 768.0;
    } else if (preset == "base") {
        params = 143e6 - 42240.0 * 768.0;
    } else if (preset == "large") {
        params = 401e6 - 55616.0 * 1024.0;
    } else {
        throw ConfigError("no fixture budget for preset '" + std::string(preset) + "'");
    }
    return 6.0 * params * kFixtureDataBudget;
}

const VocabFit& fixture_vocab_fit() {
    static const AnchoredVocabFit fit(
        {
            {fixture_flops_budget("tiny"), 27224.0},
            {fixture_flops_budget("base"), 42200.0},
            {fixture_flops_budget("large"), 55571.0},
        },
        kFixtureDataBudget);
    return fit;
}

std::uint64_t predict_optimal_vocab(double flops_budget, double data_budget_tokens, const VocabFit* fit) {
    if (fit == nullptr) {
        throw ConfigError("predict_optimal_vocab: no parametric fit supplied");
    }
    const double v = fit->predict(flops_budget, data_budget_tokens);
    if (!(v >= 1.0) || !std::isfinite(v)) {
        throw ConfigError("predict_optimal_vocab: fit produced a non-positive size");
    }
    return static_cast<std::uint64_t>(std::llround(v));
}

// ---------------------------------------------------------------------------
// Fertility

std::size_t count_words(std::string_view text) noexcept {
    return static_cast<std::size_t>(whitespace_token_count(text));
}

FertilityReport fertility(const TokenCounter& count_tokens, std::span<const Document> corpus) {
    FertilityReport report;
    std::map<std::string, LanguageFertility> acc;
    for (const auto& d : corpus) {
        auto& f = acc[d.lang];
        f.tokens += count_tokens(d.text);
        f.words += count_words(d.text);
    }
    for (auto& [lang, f] : acc) {
        if (f.words == 0) {
            report.warnings.push_back("language '" + lang + "' has no words; omitted");
            continue;
        }
        f.fertility = static_cast<double>(f.tokens) / static_cast<double>(f.words);
        report.per_language.emplace(lang, f);
    }
    return report;
}

FertilityReport fertility(const Vocabulary& vocab, std::span<const Document> corpus) {
    return fertility([&vocab](std::string_view t) { return vocab.encode(t).size(); }, corpus);
}

void write_fertility(std::ostream& out, const FertilityReport& report, char d) {
    out << "lang" << d << "tokens" << d << "words" << d << "fertility\n";
    char buf[32];
    for (const auto& [lang, f] : report.per_language) {
        std::snprintf(buf, sizeof buf, "%.4f", f.fertility);
        out << lang << d << f.tokens << d << f.words << d << buf << '\n';
    }
}

}  // namespace ptk::tokenize
