#pragma once

// Independent reference implementations used by the test suites. Everything
// here is deliberately naive (dense matrices, brute-force scans, numeric
// differentiation) so a bug in the library cannot hide in its own oracle.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "leagcn/autodiff.hpp"
#include "leagcn/tensor.hpp"

namespace oracles {

// Central finite difference d(loss)/d(leaf) computed by perturbing one
// coordinate at a time and replaying the graph.
inline leagcn::Tensor fd_gradient(leagcn::ValueGraph& g, leagcn::NodeId loss,
                                  leagcn::NodeId leaf, double step = 1e-4) {
    leagcn::Tensor base = g.value(leaf);
    leagcn::Tensor out(base.shape());
    for (std::size_t i = 0; i < base.size(); ++i) {
        leagcn::Tensor plus = base;
        plus[i] += step;
        g.set_leaf(leaf, plus);
        g.recompute();
        const double fp = g.value(loss)[0];

        leagcn::Tensor minus = base;
        minus[i] -= step;
        g.set_leaf(leaf, minus);
        g.recompute();
        const double fm = g.value(loss)[0];

        out[i] = (fp - fm) / (2.0 * step);
    }
    g.set_leaf(leaf, base);
    g.recompute();
    return out;
}

// Relative error with a unit floor in the denominator, so tiny gradients are
// compared absolutely and large ones relatively.
inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

inline double max_rel_err(const leagcn::Tensor& a, const leagcn::Tensor& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, rel_err(a[i], b[i]));
    return worst;
}

// Checks the analytic gradient of `loss` w.r.t. `leaf` against fd_gradient.
// backward() must already have been called on the graph.
inline double gradcheck(leagcn::ValueGraph& g, leagcn::NodeId loss, leagcn::NodeId leaf,
                        double step = 1e-4) {
    leagcn::Tensor analytic = g.grad(leaf);
    leagcn::Tensor numeric = fd_gradient(g, loss, leaf, step);
    return max_rel_err(analytic, numeric);
}

// Dense propagation oracle for the graph encoder: given a full adjacency
// matrix over all nodes, computes D^{-1/2} A D^{-1/2} E with ordinary dense
// arithmetic. Zero-degree nodes contribute and receive nothing.
inline leagcn::Tensor dense_normalized_propagation(const std::vector<std::vector<double>>& adj,
                                                   const leagcn::Tensor& embeddings) {
    const std::size_t nnodes = adj.size();
    const std::size_t d = embeddings.cols();
    std::vector<double> degree(nnodes, 0.0);
    for (std::size_t i = 0; i < nnodes; ++i) {
        for (std::size_t j = 0; j < nnodes; ++j) degree[i] += adj[i][j];
    }
    std::vector<double> inv_sqrt(nnodes, 0.0);
    for (std::size_t i = 0; i < nnodes; ++i) {
        if (degree[i] > 0.0) inv_sqrt[i] = 1.0 / std::sqrt(degree[i]);
    }
    leagcn::Tensor out({nnodes, d});
    for (std::size_t i = 0; i < nnodes; ++i) {
        for (std::size_t j = 0; j < nnodes; ++j) {
            if (adj[i][j] == 0.0) continue;
            const double w = adj[i][j] * inv_sqrt[i] * inv_sqrt[j];
            for (std::size_t c = 0; c < d; ++c) out(i, c) += w * embeddings(j, c);
        }
    }
    return out;
}

// Brute-force rank of `target` in `scores`: sort indices by descending score
// with ascending index as the tiebreak, then scan for the target.
inline std::size_t brute_force_rank(const std::vector<double>& scores, std::size_t target) {
    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
        if (order[pos] == target) return pos + 1;
    }
    return 0;  // unreachable for a valid target
}

}  // namespace oracles
