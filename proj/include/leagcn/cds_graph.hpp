#pragma once

#include <array>
#include <fstream>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "leagcn/autodiff.hpp"
#include "leagcn/dataset.hpp"
#include "leagcn/error.hpp"
#include "leagcn/tensor.hpp"

namespace leagcn {

// Bipartite user-item incidence per domain, binary (repeat consumption
// collapses to one edge). Item-to-item sequential transitions are recorded
// for inspection but never propagated over; the aggregation below uses only
// user-item edges.
struct CdsGraph {
    std::size_t num_users = 0;
    std::size_t num_items_a = 0;
    std::size_t num_items_b = 0;

    std::vector<std::pair<std::size_t, std::size_t>> edges_a;  // (user, A-item)
    std::vector<std::pair<std::size_t, std::size_t>> edges_b;  // (user, B-item)

    std::vector<std::size_t> deg_a;   // per A-item: distinct users
    std::vector<std::size_t> deg_b;   // per B-item
    std::vector<std::size_t> deg_ua;  // per user: distinct A-items
    std::vector<std::size_t> deg_ub;  // per user: distinct B-items

    std::vector<std::pair<std::size_t, std::size_t>> transitions_a;  // consecutive A-items
    std::vector<std::pair<std::size_t, std::size_t>> transitions_b;
};

inline CdsGraph build_graph(const std::vector<HybridSequence>& train, std::size_t num_users,
                            std::size_t num_items_a, std::size_t num_items_b) {
    CdsGraph g;
    g.num_users = num_users;
    g.num_items_a = num_items_a;
    g.num_items_b = num_items_b;
    g.deg_a.assign(num_items_a, 0);
    g.deg_b.assign(num_items_b, 0);
    g.deg_ua.assign(num_users, 0);
    g.deg_ub.assign(num_users, 0);

    std::set<std::pair<std::size_t, std::size_t>> seen_a, seen_b;
    std::set<std::pair<std::size_t, std::size_t>> seen_ta, seen_tb;
    for (const HybridSequence& seq : train) {
        if (seq.user >= num_users) {
            throw DataError("training sequence user index " + std::to_string(seq.user) +
                            " out of range");
        }
        std::size_t prev_a = num_items_a, prev_b = num_items_b;
        for (const Event& e : seq.events) {
            const std::size_t limit = e.domain == 'A' ? num_items_a : num_items_b;
            if (e.item >= limit) {
                throw DataError("training sequence item index " + std::to_string(e.item) +
                                " out of range for domain " + std::string(1, e.domain));
            }
            if (e.domain == 'A') {
                if (seen_a.emplace(seq.user, e.item).second) {
                    g.edges_a.emplace_back(seq.user, e.item);
                    g.deg_a[e.item] += 1;
                    g.deg_ua[seq.user] += 1;
                }
                if (prev_a < num_items_a && seen_ta.emplace(prev_a, e.item).second) {
                    g.transitions_a.emplace_back(prev_a, e.item);
                }
                prev_a = e.item;
            } else {
                if (seen_b.emplace(seq.user, e.item).second) {
                    g.edges_b.emplace_back(seq.user, e.item);
                    g.deg_b[e.item] += 1;
                    g.deg_ub[seq.user] += 1;
                }
                if (prev_b < num_items_b && seen_tb.emplace(prev_b, e.item).second) {
                    g.transitions_b.emplace_back(prev_b, e.item);
                }
                prev_b = e.item;
            }
        }
    }
    return g;
}

// The four symmetric-normalized message maps of one aggregation step. Each
// edge (k, i) carries 1/sqrt(item degree * the user's same-domain degree) in
// both directions. Users present in training must touch both domains; items
// no training user touched simply receive and send nothing (their output
// rows stay zero, matching the dense-matrix view of the same graph).
struct PropagationMaps {
    SparseLinear a_to_u;  // A-item rows -> user rows
    SparseLinear b_to_u;
    SparseLinear u_to_a;  // user rows -> A-item rows
    SparseLinear u_to_b;
};

inline PropagationMaps make_propagation_maps(const CdsGraph& g) {
    for (std::size_t k = 0; k < g.num_users; ++k) {
        if ((g.deg_ua[k] == 0) != (g.deg_ub[k] == 0)) {
            throw DataError("training user " + std::to_string(k) +
                            " has edges in only one domain");
        }
    }
    PropagationMaps maps;
    maps.a_to_u.n_src = g.num_items_a;
    maps.a_to_u.n_dst = g.num_users;
    maps.u_to_a.n_src = g.num_users;
    maps.u_to_a.n_dst = g.num_items_a;
    for (const auto& [k, i] : g.edges_a) {
        const double coef =
            1.0 / std::sqrt(static_cast<double>(g.deg_a[i]) * static_cast<double>(g.deg_ua[k]));
        maps.a_to_u.edges.push_back({i, k, coef});
        maps.u_to_a.edges.push_back({k, i, coef});
    }
    maps.b_to_u.n_src = g.num_items_b;
    maps.b_to_u.n_dst = g.num_users;
    maps.u_to_b.n_src = g.num_users;
    maps.u_to_b.n_dst = g.num_items_b;
    for (const auto& [k, j] : g.edges_b) {
        const double coef =
            1.0 / std::sqrt(static_cast<double>(g.deg_b[j]) * static_cast<double>(g.deg_ub[k]));
        maps.b_to_u.edges.push_back({j, k, coef});
        maps.u_to_b.edges.push_back({k, j, coef});
    }
    return maps;
}

// One aggregation step inside a ValueGraph: differentiable w.r.t. the three
// input tables.
struct PropagatedNodes {
    NodeId users;
    NodeId items_a;
    NodeId items_b;
};

inline PropagatedNodes slap_nodes(ValueGraph& g, const PropagationMaps& maps, NodeId eu,
                                  NodeId ea, NodeId eb) {
    PropagatedNodes out;
    out.users = g.add(g.spmm(maps.a_to_u, ea), g.spmm(maps.b_to_u, eb));
    out.items_a = g.spmm(maps.u_to_a, eu);
    out.items_b = g.spmm(maps.u_to_b, eu);
    return out;
}

// MLAP: repeated aggregation with a mean over layers 0..L when combine is
// set (the L=1, combine-off case reduces to one plain step).
inline PropagatedNodes multilayer_nodes(ValueGraph& g, const PropagationMaps& maps, NodeId eu,
                                        NodeId ea, NodeId eb, std::size_t layers,
                                        bool combine = true) {
    if (layers == 0) throw ConfigError("propagation depth must be at least 1");
    std::vector<PropagatedNodes> history;
    history.push_back({eu, ea, eb});
    for (std::size_t l = 0; l < layers; ++l) {
        const PropagatedNodes& prev = history.back();
        history.push_back(slap_nodes(g, maps, prev.users, prev.items_a, prev.items_b));
    }
    if (!combine) return history.back();

    auto mean_over = [&](auto pick) {
        NodeId acc = pick(history[0]);
        for (std::size_t l = 1; l < history.size(); ++l) acc = g.add(acc, pick(history[l]));
        return g.scale(acc, 1.0 / static_cast<double>(history.size()));
    };
    PropagatedNodes out;
    out.users = mean_over([](const PropagatedNodes& p) { return p.users; });
    out.items_a = mean_over([](const PropagatedNodes& p) { return p.items_a; });
    out.items_b = mean_over([](const PropagatedNodes& p) { return p.items_b; });
    return out;
}

// Plain-tensor versions for oracle tests and benchmarks.

namespace detail {

inline Tensor apply_sparse(const SparseLinear& map, const Tensor& x) {
    Tensor out({map.n_dst, x.cols()});
    for (const auto& e : map.edges) {
        auto src = x.row_span(e.src);
        auto dst = out.row_span(e.dst);
        for (std::size_t c = 0; c < x.cols(); ++c) dst[c] += e.coef * src[c];
    }
    return out;
}

}  // namespace detail

struct PropagatedTensors {
    Tensor users;
    Tensor items_a;
    Tensor items_b;
};

inline PropagatedTensors slap_propagate(const CdsGraph& g, const Tensor& eu, const Tensor& ea,
                                        const Tensor& eb) {
    if (eu.rows() != g.num_users || ea.rows() != g.num_items_a || eb.rows() != g.num_items_b ||
        eu.cols() != ea.cols() || eu.cols() != eb.cols()) {
        throw NumericError("embedding shapes do not match the graph: users " + eu.shape_string() +
                           ", A " + ea.shape_string() + ", B " + eb.shape_string());
    }
    PropagationMaps maps = make_propagation_maps(g);
    PropagatedTensors out;
    Tensor from_a = detail::apply_sparse(maps.a_to_u, ea);
    Tensor from_b = detail::apply_sparse(maps.b_to_u, eb);
    out.users = Tensor({g.num_users, eu.cols()});
    for (std::size_t i = 0; i < out.users.size(); ++i) out.users[i] = from_a[i] + from_b[i];
    out.items_a = detail::apply_sparse(maps.u_to_a, eu);
    out.items_b = detail::apply_sparse(maps.u_to_b, eu);
    return out;
}

inline PropagatedTensors multilayer_propagate(const CdsGraph& g, const Tensor& eu,
                                              const Tensor& ea, const Tensor& eb,
                                              std::size_t layers, bool combine = true) {
    if (layers == 0) throw ConfigError("propagation depth must be at least 1");
    std::vector<PropagatedTensors> history;
    history.push_back({eu, ea, eb});
    for (std::size_t l = 0; l < layers; ++l) {
        const PropagatedTensors& prev = history.back();
        history.push_back(slap_propagate(g, prev.users, prev.items_a, prev.items_b));
    }
    if (!combine) return std::move(history.back());

    const double f = 1.0 / static_cast<double>(history.size());
    auto mean_over = [&](auto pick) {
        Tensor acc(pick(history[0]).shape());
        for (const PropagatedTensors& layer : history) {
            const Tensor& t = pick(layer);
            for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += t[i];
        }
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] *= f;
        return acc;
    };
    PropagatedTensors out;
    out.users = mean_over([](const PropagatedTensors& p) -> const Tensor& { return p.users; });
    out.items_a = mean_over([](const PropagatedTensors& p) -> const Tensor& { return p.items_a; });
    out.items_b = mean_over([](const PropagatedTensors& p) -> const Tensor& { return p.items_b; });
    return out;
}

// Debug edge dump, one line per user-item edge, sorted for stable diffs.
inline void dump_edges(const CdsGraph& g, const std::string& path) {
    auto sorted = [](std::vector<std::pair<std::size_t, std::size_t>> edges) {
        std::sort(edges.begin(), edges.end());
        return edges;
    };
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("cannot write graph dump: " + path);
    for (const auto& [k, i] : sorted(g.edges_a)) f << k << '\t' << i << '\t' << 'A' << '\n';
    for (const auto& [k, j] : sorted(g.edges_b)) f << k << '\t' << j << '\t' << 'B' << '\n';
}

}  // namespace leagcn
