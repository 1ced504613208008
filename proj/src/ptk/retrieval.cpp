// SPDX-License-Identifier: Apache-2.0

#include "ptk/retrieval.hpp"

#include "ptk/error.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <sstream>

namespace ptk::retrieval {

void RankedRun::add(const std::string& query, std::string doc_id, double score) {
    per_query[query].push_back({std::move(doc_id), score});
}

void RankedRun::sort_rankings() {
    for (auto& [q, docs] : per_query) {
        std::stable_sort(docs.begin(), docs.end(), [](const ScoredDoc& a, const ScoredDoc& b) {
            if (a.score != b.score) {
                return a.score > b.score;
            }
            return a.doc_id < b.doc_id;
        });
    }
}

namespace {

double gain(double rel) { return std::exp2(rel) - 1.0; }
double discount(std::size_t rank) { return std::log2(static_cast<double>(rank) + 1.0); }

double query_ndcg(const std::vector<ScoredDoc>& ranking, const std::map<std::string, double>& judged,
                  std::uint32_t k) {
    std::vector<double> ideal;
    for (const auto& [doc, rel] : judged) {
        if (rel > 0.0) {
            ideal.push_back(rel);
        }
    }
    if (ideal.empty()) {
        return 0.0;
    }
    std::sort(ideal.begin(), ideal.end(), std::greater<>());
    double idcg = 0.0;
    for (std::size_t i = 0; i < ideal.size() && i < k; ++i) {
        idcg += gain(ideal[i]) / discount(i + 1);
    }
    double dcg = 0.0;
    for (std::size_t i = 0; i < ranking.size() && i < k; ++i) {
        const auto it = judged.find(ranking[i].doc_id);
        if (it != judged.end() && it->second > 0.0) {
            dcg += gain(it->second) / discount(i + 1);
        }
    }
    return dcg / idcg;
}

}  // namespace

std::map<std::string, double> ndcg_per_query(const RankedRun& run, std::uint32_t k) {
    if (k == 0) {
        throw ConfigError("ndcg: k must be >= 1");
    }
    if (run.per_query.empty()) {
        throw InputError("ndcg: empty run");
    }
    RankedRun sorted = run;
    sorted.sort_rankings();
    static const std::map<std::string, double> none;
    std::map<std::string, double> out;
    for (const auto& [q, ranking] : sorted.per_query) {
        const auto it = sorted.qrels.find(q);
        out[q] = query_ndcg(ranking, it == sorted.qrels.end() ? none : it->second, k);
    }
    return out;
}

double ndcg_at_k(const RankedRun& run, std::uint32_t k) {
    const auto per_query = ndcg_per_query(run, k);
    double sum = 0.0;
    for (const auto& [q, v] : per_query) {
        sum += v;
    }
    return sum / static_cast<double>(per_query.size());
}

double audit_footnote(std::uint64_t population, std::uint64_t rank1_hits, std::uint64_t rank5_hits) {
    if (population == 0) {
        throw InputError("audit: population must be > 0");
    }
    if (rank1_hits + rank5_hits > population) {
        throw InputError("audit: hits exceed population");
    }
    RankedRun run;
    for (std::uint64_t q = 0; q < population; ++q) {
        const std::string qid = "q" + std::to_string(q);
        const std::string relevant = qid + "-rel";
        run.qrels[qid][relevant] = 1.0;
        std::size_t rank_of_relevant = 0;  // 0: not retrieved
        if (q < rank1_hits) {
            rank_of_relevant = 1;
        } else if (q < rank1_hits + rank5_hits) {
            rank_of_relevant = 5;
        }
        for (std::size_t rank = 1; rank <= 10; ++rank) {
            const double score = 100.0 - static_cast<double>(rank);
            if (rank == rank_of_relevant) {
                run.add(qid, relevant, score);
            } else {
                run.add(qid, qid + "-n" + std::to_string(rank), score);
            }
        }
    }
    return ndcg_at_k(run, 10);
}

void read_trec_run(std::istream& in, RankedRun& run) {
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ls(line);
        std::string qid, q0, doc, tag;
        long long rank = 0;
        double score = 0.0;
        if (!(ls >> qid)) {
            continue;
        }
        if (!(ls >> q0 >> doc >> rank >> score)) {
            throw InputError("run line " + std::to_string(lineno) + ": expected 'qid Q0 docid rank score tag'");
        }
        run.add(qid, doc, score);
    }
    run.sort_rankings();
}

void read_trec_qrels(std::istream& in, RankedRun& run) {
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ls(line);
        std::string qid, iter, doc;
        double rel = 0.0;
        if (!(ls >> qid)) {
            continue;
        }
        if (!(ls >> iter >> doc >> rel)) {
            throw InputError("qrels line " + std::to_string(lineno) + ": expected 'qid iter docid rel'");
        }
        if (rel < 0.0) {
            throw InputError("qrels line " + std::to_string(lineno) + ": negative relevance grade");
        }
        run.qrels[qid][doc] = rel;
    }
}

}  // namespace ptk::retrieval
