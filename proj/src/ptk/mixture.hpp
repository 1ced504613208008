// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "ptk/document.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <mutex>
#include <optional>
#include <regex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace ptk::mixture {

// ---------------------------------------------------------------------------
// Exact deduplication

struct Hash128 {
    std::uint64_t hi = 0;
    std::uint64_t lo = 0;
    bool operator==(const Hash128&) const = default;
};

struct Hash128Hasher {
    std::size_t operator()(const Hash128& h) const noexcept { return static_cast<std::size_t>(h.lo ^ (h.hi * 31)); }
};

/// Converts CRLF / CR to LF and strips trailing whitespace from every line
/// and from the end of the text. Case and Unicode form are left untouched.
std::string normalize_for_dedup(std::string_view text);

/// 128-bit BLAKE2b digest of the normalized text.
Hash128 dedup_key(std::string_view text);

/// Per-language set of seen dedup keys. insert_if_absent is atomic, so
/// disjoint shards may be deduplicated concurrently against one instance.
class SeenSet {
public:
    bool insert_if_absent(std::string_view lang, const Hash128& key);
    std::size_t size() const;

private:
    static constexpr std::size_t kStripes = 64;
    struct Stripe {
        mutable std::mutex mu;
        std::unordered_set<Hash128, Hash128Hasher> keys;
    };
    std::array<Stripe, kStripes> stripes_;
};

struct DedupStats {
    std::uint64_t docs_in = 0;
    std::uint64_t docs_out = 0;
    std::uint64_t tokens_in = 0;
    std::uint64_t tokens_out = 0;

    /// Token reduction as a signed percentage (negative when tokens drop).
    double reduction_percent() const noexcept;
};

/// Keeps the first document of every (lang, normalized text) class; order
/// of survivors is preserved.
std::vector<Document> dedup_exact(std::span<const Document> docs, SeenSet& seen, DedupStats* stats = nullptr);
std::vector<Document> dedup_exact(std::span<const Document> docs, DedupStats* stats = nullptr);

// ---------------------------------------------------------------------------
// PII scrubbing

struct PiiRule {
    std::string name;
    std::string pattern;  // ECMAScript regex
    std::string placeholder;
};

class PiiRuleSet {
public:
    PiiRuleSet(std::string version, std::vector<PiiRule> rules);

    const std::string& version() const noexcept { return version_; }
    const std::vector<PiiRule>& rules() const noexcept { return rules_; }
    std::string apply(std::string_view text) const;

private:
    std::string version_;
    std::vector<PiiRule> rules_;
    std::vector<std::regex> compiled_;
};

/// Email addresses, international phone numbers and IPv4 addresses.
const PiiRuleSet& default_pii_rules();
/// Looks up a rule set by its version label ("default-v1").
const PiiRuleSet& pii_rules_by_version(std::string_view version);

using TokenCounter = std::function<std::uint64_t(std::string_view)>;

/// Replaces matched spans with placeholders. If the text changed, the token
/// count is recomputed with `count` (whitespace words when empty).
Document scrub_pii(Document doc, const PiiRuleSet& rules, const TokenCounter& count = {});

// ---------------------------------------------------------------------------
// Educational-score filtering

inline constexpr double kDefaultEduThreshold = 2.0;

struct EduFilterResult {
    std::vector<Document> kept;
    std::vector<std::string> errors;  // one per document without a score
    std::uint64_t dropped = 0;
};

EduFilterResult filter_edu(std::span<const Document> docs, double threshold = kDefaultEduThreshold);

/// Reads `id<TAB>score` lines and sets edu_score on matching documents.
/// Returns the number of documents that received a score.
std::size_t attach_edu_scores(std::vector<Document>& docs, std::istream& sidecar);

// ---------------------------------------------------------------------------
// Manifests

enum class MixKind { pretrain, context_extension, annealing_baseline, annealing_edu };

std::string_view to_string(MixKind kind) noexcept;
MixKind parse_mix_kind(std::string_view s);

struct DatasetSpec {
    std::string name;
    std::string lang;
    double sampling_factor = 1.0;
    bool pii_scrub = false;
    bool dedup = false;
    std::uint64_t initial_tokens = 0;
    std::optional<std::filesystem::path> corpus;
};

struct ManifestEntry {
    DatasetSpec spec;
    std::uint64_t processed_tokens = 0;
    std::uint64_t final_tokens = 0;
};

struct MixtureManifest {
    MixKind kind = MixKind::pretrain;
    std::string pii_rules = "default-v1";
    std::vector<ManifestEntry> entries;

    void validate() const;
};

std::uint64_t final_tokens_for(std::uint64_t processed_tokens, double sampling_factor);

/// Tab-separated manifest. Lines starting with '#' are comments, '@key value'
/// lines set kind / pii_rules, then a header row and one row per dataset:
///   name lang S pii_scrub dedup initial_tokens processed_tokens [corpus]
/// Relative corpus paths resolve against `base_dir`.
MixtureManifest read_manifest(std::istream& in, const std::filesystem::path& base_dir = {});
MixtureManifest load_manifest(const std::filesystem::path& path);
void write_manifest(std::ostream& out, const MixtureManifest& manifest);

// ---------------------------------------------------------------------------
// Oversampling

/// Emits the documents floor(S) times in order, then a seeded subset whose
/// token total is as close as possible to frac(S) of the dataset's tokens.
/// Documents are never split.
std::vector<Document> sample_dataset(std::span<const Document> docs, double sampling_factor, std::uint64_t seed);

struct BuildRow {
    std::string name;
    std::string lang;
    std::uint64_t docs_in = 0;
    std::uint64_t tokens_processed = 0;
    double sampling_factor = 1.0;
    std::uint64_t tokens_target = 0;
    std::uint64_t tokens_emitted = 0;
    DedupStats dedup;
};

struct BuildResult {
    std::vector<Document> docs;
    std::vector<BuildRow> rows;
};

/// Runs dedup (global per language), PII scrubbing and oversampling for
/// every manifest entry that names a corpus file.
BuildResult apply_sampling(const MixtureManifest& manifest, std::uint64_t seed);
void write_build_report(std::ostream& out, const BuildResult& result, char delim = '\t');

// ---------------------------------------------------------------------------
// Cross-lingual prefixes

/// (pair code, instruction) for the 12 supported language pairs.
const std::vector<std::pair<std::string, std::string>>& xling_instructions();
const std::string& xling_instruction(std::string_view pair);

/// text = instruction + " " + src + "\n" + tgt, tagged lang "xling".
Document prefix_xling(std::string_view pair, std::string_view src, std::string_view tgt, std::string id = {});

// ---------------------------------------------------------------------------
// Context-extension sampling

struct LengthBucket {
    std::string label;
    std::uint64_t lo = 0;  // inclusive token count
    std::uint64_t hi = 0;  // exclusive; UINT64_MAX for open-ended
    double share = 0.0;    // fraction of output documents
};

/// <1K, 1K-10K, 10K-16K, >16K with shares 21.01 / 77.56 / 1.03 / 0.4 percent.
std::vector<LengthBucket> default_extension_buckets();

struct ExtensionSample {
    std::vector<Document> docs;
    std::vector<std::uint64_t> per_bucket;
    std::vector<double> achieved_share;
    std::vector<std::string> warnings;
};

/// Samples documents (without replacement) so bucket shares match the
/// targets. With no count, the output is the largest size every positive
/// bucket can fill.
ExtensionSample sample_context_extension(std::span<const Document> docs, const std::vector<LengthBucket>& buckets,
                                         std::uint64_t seed, std::optional<std::uint64_t> count = std::nullopt);

// ---------------------------------------------------------------------------
// Audits and annealing mixes

struct LanguageShare {
    std::string lang;
    std::uint64_t tokens = 0;
    double percent = 0.0;
};

/// Per-language totals of final_tokens, largest first.
std::vector<LanguageShare> audit_distribution(const MixtureManifest& manifest);
/// Share (percent) of final tokens held by entries of dataset `name` in `lang`.
double dataset_share(const MixtureManifest& manifest, std::string_view lang, std::string_view name);
std::vector<LanguageShare> audit_documents(std::span<const Document> docs);
void write_audit(std::ostream& out, const std::vector<LanguageShare>& rows, char delim = '\t');

struct AnnealResult {
    std::vector<Document> docs;
    std::vector<std::string> errors;
    std::vector<LanguageShare> audit;
};

/// Allowed (lang, source) pairs of an annealing mix. For the edu mix the
/// HPLT sources are additionally edu-filtered.
const std::vector<std::pair<std::string, std::string>>& annealing_sources(MixKind kind);

AnnealResult compile_annealing(std::span<const Document> docs, MixKind kind,
                               double edu_threshold = kDefaultEduThreshold);

}  // namespace ptk::mixture
