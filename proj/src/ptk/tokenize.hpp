// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace ptk {
struct Document;
}

namespace ptk::tokenize {

using TokenId = std::uint32_t;

inline constexpr std::size_t kByteAlphabet = 256;
inline constexpr std::size_t kMaxSpaceRun = 16;

/// BERT special tokens followed by repeated-space tokens for runs of 2..16.
std::vector<std::string> default_specials();

/// Byte-level BPE vocabulary. Ids are laid out as
///   [0, specials)                      special tokens
///   [specials, specials + 256)         single bytes
///   [specials + 256, size)             merge products, in merge order
/// Two merges that produce the same byte string share one id, so the
/// token <-> id map stays a bijection.
class Vocabulary {
public:
    struct Merge {
        TokenId left;
        TokenId right;
        TokenId result;
    };

    Vocabulary() = default;
    explicit Vocabulary(std::vector<std::string> specials);

    std::size_t size() const noexcept { return id_to_token_.size(); }
    const std::vector<std::string>& specials() const noexcept { return specials_; }
    const std::vector<Merge>& merges() const noexcept { return merges_; }
    const std::string& token(TokenId id) const { return id_to_token_.at(id); }
    TokenId byte_id(unsigned char b) const noexcept { return static_cast<TokenId>(specials_.size() + b); }
    bool is_special(TokenId id) const noexcept { return id < specials_.size(); }
    /// Id of a special token; throws ConfigError if absent.
    TokenId special_id(std::string_view name) const;

    /// Appends a merge of two existing ids and returns the id of the product.
    TokenId add_merge(TokenId left, TokenId right);

    /// Copy keeping only the first `n_merges` merges (a nested, smaller vocab).
    Vocabulary truncated(std::size_t n_merges) const;

    std::vector<TokenId> encode(std::string_view text) const;
    std::string decode(std::span<const TokenId> ids) const;

    void save(std::ostream& out) const;
    static Vocabulary load(std::istream& in);

private:
    static std::uint64_t pair_key(TokenId a, TokenId b) noexcept { return (std::uint64_t{a} << 32) | b; }
    void encode_piece(std::string_view piece, std::vector<TokenId>& out) const;

    std::vector<std::string> specials_;
    std::vector<Merge> merges_;
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, TokenId> token_to_id_;
    std::unordered_map<std::uint64_t, std::size_t> merge_rank_;
};

/// Splits text into special-token matches and ordinary pre-tokenized pieces.
/// A piece is an optional single leading space followed by a run of one
/// character class (letters incl. non-ASCII bytes, digits, punctuation), or
/// a single whitespace byte. Runs of 2+ spaces become space-run specials.
struct Segment {
    std::string_view text;
    bool special = false;
};
std::vector<Segment> pretokenize(std::string_view text, const std::vector<std::string>& specials);

struct BpeOptions {
    std::size_t target_size = 0;
    std::vector<std::string> specials = default_specials();
    unsigned threads = 1;
};

/// Greedy highest-frequency pair merging until `target_size` ids exist or no
/// adjacent pair is left. Ties go to the lexicographically smaller
/// (left bytes, right bytes).
Vocabulary bpe_train(std::span<const std::string> texts, const BpeOptions& options);
Vocabulary bpe_train(std::span<const Document> corpus, const BpeOptions& options);

// ---------------------------------------------------------------------------
// Vocabulary size planning

/// Smallest multiple of 64 that is >= predicted_optimal.
std::uint64_t plan_vocab(std::uint64_t predicted_optimal);

/// Predicts the loss-optimal vocabulary size for a compute and data budget.
class VocabFit {
public:
    virtual ~VocabFit() = default;
    virtual double predict(double flops_budget, double data_budget_tokens) const = 0;
};

/// V = coefficient * C^exponent.
class PowerLawVocabFit final : public VocabFit {
public:
    PowerLawVocabFit(double coefficient, double exponent);
    double predict(double flops_budget, double data_budget_tokens) const override;

private:
    double coefficient_;
    double exponent_;
};

/// Piecewise power law through fixed (budget, vocab) anchors, linear in
/// log-log space and extended with the end segments' slopes. Calibrated at a
/// single data budget.
class AnchoredVocabFit final : public VocabFit {
public:
    AnchoredVocabFit(std::vector<std::pair<double, double>> anchors, double data_budget_tokens);
    double predict(double flops_budget, double data_budget_tokens) const override;

private:
    std::vector<std::pair<double, double>> anchors_;
    double data_budget_;
};

inline constexpr double kFixtureDataBudget = 400e9;

/// Budget the fixture associates with a model-size preset ("tiny", "base",
/// "large"): 6 * non-embedding parameters * 400B tokens.
double fixture_flops_budget(std::string_view preset);
/// Fit reproducing the predicted sizes 27224 / 42200 / 55571 at the fixture budgets.
const VocabFit& fixture_vocab_fit();

/// Throws ConfigError when `fit` is null or the prediction is not positive.
std::uint64_t predict_optimal_vocab(double flops_budget, double data_budget_tokens, const VocabFit* fit);

// ---------------------------------------------------------------------------
// Fertility

struct LanguageFertility {
    std::uint64_t tokens = 0;
    std::uint64_t words = 0;
    double fertility = 0.0;
};

struct FertilityReport {
    std::map<std::string, LanguageFertility> per_language;
    std::vector<std::string> warnings;
};

using TokenCounter = std::function<std::size_t(std::string_view)>;

std::size_t count_words(std::string_view text) noexcept;
FertilityReport fertility(const TokenCounter& count_tokens, std::span<const Document> corpus);
FertilityReport fertility(const Vocabulary& vocab, std::span<const Document> corpus);
void write_fertility(std::ostream& out, const FertilityReport& report, char delim = '\t');

}  // namespace ptk::tokenize
