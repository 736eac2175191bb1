#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "leagcn/dataset.hpp"
#include "leagcn/error.hpp"
#include "leagcn/model.hpp"
#include "leagcn/tensor.hpp"

namespace leagcn {

// 1-based rank of the target among all scores, descending. Ties resolve by
// ascending index so equal-score catalogs rank reproducibly.
inline std::size_t rank_of(const Tensor& scores, std::size_t target) {
    if (scores.rank() != 1) throw NumericError("ranking expects a score vector");
    if (target >= scores.size()) {
        throw DataError("target index " + std::to_string(target) + " outside catalog of " +
                        std::to_string(scores.size()));
    }
    const double s = scores[target];
    std::size_t rank = 1;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (scores[i] > s || (scores[i] == s && i < target)) ++rank;
    }
    return rank;
}

struct MetricTriple {
    double rc = 0.0;
    double mrr = 0.0;
    double ndcg = 0.0;
};

// Mean top-k metrics over a list of ranks, one relevant item per case: a case
// outside the cutoff contributes zero to all three.
inline MetricTriple metrics_at_k(const std::vector<std::size_t>& ranks, std::size_t k = 10) {
    if (k < 1) throw ConfigError("metric cutoff must be at least 1");
    if (ranks.empty()) throw DataError("cannot average metrics over zero cases");
    MetricTriple sums;
    for (std::size_t rank : ranks) {
        if (rank < 1) throw DataError("ranks are 1-based");
        if (rank > k) continue;
        const double r = static_cast<double>(rank);
        sums.rc += 1.0;
        sums.mrr += 1.0 / r;
        sums.ndcg += 1.0 / std::log2(r + 1.0);
    }
    const double n = static_cast<double>(ranks.size());
    return {sums.rc / n, sums.mrr / n, sums.ndcg / n};
}

struct EvalResult {
    std::size_t cases = 0;
    std::size_t k = 10;
    MetricTriple domain_a;
    MetricTriple domain_b;
    std::vector<std::size_t> ranks_a;
    std::vector<std::size_t> ranks_b;
};

// Full-catalog evaluation: every test case ranks its true next item against
// every item of its domain, no sampled negatives.
inline EvalResult evaluate(const ModelState& state, const CdsGraph& graph,
                           const std::vector<TestCase>& cases, std::size_t k = 10) {
    if (cases.empty()) throw DataError("test split is empty");
    ForwardGraph fw = begin_forward(state, graph);
    EvalResult out;
    out.cases = cases.size();
    out.k = k;
    for (const TestCase& tc : cases) {
        auto [scores_a, scores_b] = score_prefix(fw, state, tc.prefix.user, tc.prefix.events);
        out.ranks_a.push_back(rank_of(scores_a, tc.target_a));
        out.ranks_b.push_back(rank_of(scores_b, tc.target_b));
    }
    out.domain_a = metrics_at_k(out.ranks_a, k);
    out.domain_b = metrics_at_k(out.ranks_b, k);
    return out;
}

inline std::string metric_report_text(const EvalResult& result) {
    std::string text;
    auto rows = [&](char domain, const MetricTriple& m) {
        const std::string kk = std::to_string(result.k);
        text += std::string(1, domain) + "\trc\t" + kk + "\t" + format_double(m.rc) + "\n";
        text += std::string(1, domain) + "\tmrr\t" + kk + "\t" + format_double(m.mrr) + "\n";
        text += std::string(1, domain) + "\tndcg\t" + kk + "\t" + format_double(m.ndcg) + "\n";
    };
    rows('A', result.domain_a);
    rows('B', result.domain_b);
    return text;
}

inline void write_metric_report(const EvalResult& result, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    out << metric_report_text(result);
    if (!out.flush()) throw DataError("failed writing " + path);
}

}  // namespace leagcn
