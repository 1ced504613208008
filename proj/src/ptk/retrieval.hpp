// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace ptk::retrieval {

struct ScoredDoc {
    std::string doc_id;
    double score = 0.0;
};

/// Ranked retrieval output plus graded judgments. Rankings are kept sorted
/// by descending score with ties broken by ascending doc id.
struct RankedRun {
    std::map<std::string, std::vector<ScoredDoc>> per_query;
    std::map<std::string, std::map<std::string, double>> qrels;

    void add(const std::string& query, std::string doc_id, double score);
    void sort_rankings();
};

/// Mean nDCG@k with gain 2^rel - 1 and discount log2(rank + 1). Queries
/// with no relevant document score 0 and still count in the mean.
double ndcg_at_k(const RankedRun& run, std::uint32_t k);

/// Per-query nDCG@k (same conventions), keyed by query id.
std::map<std::string, double> ndcg_per_query(const RankedRun& run, std::uint32_t k);

/// Builds a population of single-relevant-document queries in which
/// `rank1_hits` are retrieved at rank 1, `rank5_hits` at rank 5 and the rest
/// not at all, then scores that run with ndcg_at_k(run, 10).
double audit_footnote(std::uint64_t population, std::uint64_t rank1_hits, std::uint64_t rank5_hits);

/// TREC run lines: qid Q0 docid rank score tag.
void read_trec_run(std::istream& in, RankedRun& run);
/// TREC qrels lines: qid iter docid rel.
void read_trec_qrels(std::istream& in, RankedRun& run);

}  // namespace ptk::retrieval
