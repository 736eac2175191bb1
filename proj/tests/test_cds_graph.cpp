#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "leagcn/cds_graph.hpp"
#include "leagcn/rng.hpp"
#include "oracles.hpp"

using leagcn::CdsGraph;
using leagcn::ConfigError;
using leagcn::DataError;
using leagcn::HybridSequence;
using leagcn::NodeId;
using leagcn::PropagatedTensors;
using leagcn::Rng;
using leagcn::Tensor;
using leagcn::ValueGraph;

namespace {

Tensor random_tensor(const std::vector<std::size_t>& shape, Rng& rng) {
    Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-1.0, 1.0);
    return t;
}

HybridSequence seq_of(std::size_t user, std::vector<leagcn::Event> events) {
    HybridSequence s;
    s.user = user;
    s.events = std::move(events);
    return s;
}

// Random overlapped corpus: every user touches at least one item per domain.
std::vector<HybridSequence> random_corpus(Rng& rng, std::size_t p, std::size_t m, std::size_t n) {
    std::vector<HybridSequence> seqs;
    for (std::size_t k = 0; k < p; ++k) {
        HybridSequence s;
        s.user = k;
        const std::size_t na = 1 + rng.below(m);
        const std::size_t nb = 1 + rng.below(n);
        for (std::size_t x = 0; x < na; ++x) s.events.push_back({rng.below(m), 'A'});
        for (std::size_t x = 0; x < nb; ++x) s.events.push_back({rng.below(n), 'B'});
        seqs.push_back(std::move(s));
    }
    return seqs;
}

// Dense blockwise reference: one bipartite block per domain, users first.
PropagatedTensors dense_reference(const CdsGraph& g, const Tensor& eu, const Tensor& ea,
                                  const Tensor& eb) {
    const std::size_t p = g.num_users, m = g.num_items_a, n = g.num_items_b;
    const std::size_t d = eu.cols();

    auto block = [&](std::size_t items, const std::vector<std::pair<std::size_t, std::size_t>>& edges,
                     const Tensor& ei) {
        std::vector<std::vector<double>> adj(p + items, std::vector<double>(p + items, 0.0));
        for (const auto& [k, i] : edges) {
            adj[k][p + i] = 1.0;
            adj[p + i][k] = 1.0;
        }
        Tensor stacked({p + items, d});
        for (std::size_t r = 0; r < p; ++r) {
            for (std::size_t c = 0; c < d; ++c) stacked(r, c) = eu(r, c);
        }
        for (std::size_t r = 0; r < items; ++r) {
            for (std::size_t c = 0; c < d; ++c) stacked(p + r, c) = ei(r, c);
        }
        return oracles::dense_normalized_propagation(adj, stacked);
    };

    Tensor block_a = block(m, g.edges_a, ea);
    Tensor block_b = block(n, g.edges_b, eb);

    PropagatedTensors out;
    out.users = Tensor({p, d});
    for (std::size_t r = 0; r < p; ++r) {
        for (std::size_t c = 0; c < d; ++c) out.users(r, c) = block_a(r, c) + block_b(r, c);
    }
    out.items_a = Tensor({m, d});
    for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < d; ++c) out.items_a(r, c) = block_a(p + r, c);
    }
    out.items_b = Tensor({n, d});
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < d; ++c) out.items_b(r, c) = block_b(p + r, c);
    }
    return out;
}

}  // namespace

TEST_CASE("graph build collapses repeats and counts degrees") {
    SECTION("one user, one item per domain") {
        auto g = leagcn::build_graph({seq_of(0, {{0, 'A'}, {0, 'B'}})}, 1, 1, 1);
        REQUIRE(g.edges_a.size() == 1);
        REQUIRE(g.edges_b.size() == 1);
        CHECK(g.deg_a[0] == 1);
        CHECK(g.deg_b[0] == 1);
        CHECK(g.deg_ua[0] == 1);
        CHECK(g.deg_ub[0] == 1);
    }

    SECTION("consuming an item twice yields a single edge") {
        auto g = leagcn::build_graph({seq_of(0, {{0, 'A'}, {0, 'B'}, {0, 'A'}})}, 1, 1, 1);
        CHECK(g.edges_a.size() == 1);
        CHECK(g.deg_a[0] == 1);
        CHECK(g.deg_ua[0] == 1);
    }

    SECTION("degree tables match a brute-force recount on random corpora") {
        Rng rng(13);
        for (int rep = 0; rep < 20; ++rep) {
            auto seqs = random_corpus(rng, 6, 5, 4);
            auto g = leagcn::build_graph(seqs, 6, 5, 4);

            std::set<std::pair<std::size_t, std::size_t>> pa, pb;
            for (const auto& s : seqs) {
                for (const auto& e : s.events) {
                    (e.domain == 'A' ? pa : pb).emplace(s.user, e.item);
                }
            }
            CHECK(g.edges_a.size() == pa.size());
            CHECK(g.edges_b.size() == pb.size());
            for (std::size_t i = 0; i < 5; ++i) {
                std::size_t cnt = 0;
                for (const auto& [k, it] : pa) cnt += it == i;
                CHECK(g.deg_a[i] == cnt);
            }
            for (std::size_t k = 0; k < 6; ++k) {
                std::size_t cnt = 0;
                for (const auto& [u, it] : pb) cnt += u == k;
                CHECK(g.deg_ub[k] == cnt);
            }
        }
    }

    SECTION("out-of-range indices are rejected") {
        CHECK_THROWS_AS(leagcn::build_graph({seq_of(0, {{5, 'A'}, {0, 'B'}})}, 1, 3, 1),
                        DataError);
        CHECK_THROWS_AS(leagcn::build_graph({seq_of(9, {{0, 'A'}, {0, 'B'}})}, 1, 3, 1),
                        DataError);
    }

    SECTION("item transitions are recorded but stay out of the edge lists") {
        auto g = leagcn::build_graph({seq_of(0, {{0, 'A'}, {0, 'B'}, {1, 'A'}, {2, 'A'}})}, 1, 3, 1);
        REQUIRE(g.transitions_a.size() == 2);
        CHECK(g.transitions_a[0] == std::pair<std::size_t, std::size_t>{0, 1});
        CHECK(g.transitions_a[1] == std::pair<std::size_t, std::size_t>{1, 2});
        CHECK(g.edges_a.size() == 3);
    }
}

TEST_CASE("single-user propagation has unit coefficients") {
    auto g = leagcn::build_graph({seq_of(0, {{0, 'A'}, {0, 'B'}})}, 1, 1, 1);
    Rng rng(5);
    Tensor eu = random_tensor({1, 3}, rng);
    Tensor ea = random_tensor({1, 3}, rng);
    Tensor eb = random_tensor({1, 3}, rng);
    auto out = leagcn::slap_propagate(g, eu, ea, eb);
    for (std::size_t c = 0; c < 3; ++c) {
        CHECK_THAT(out.users(0, c), Catch::Matchers::WithinAbs(ea(0, c) + eb(0, c), 1e-12));
        CHECK_THAT(out.items_a(0, c), Catch::Matchers::WithinAbs(eu(0, c), 1e-12));
        CHECK_THAT(out.items_b(0, c), Catch::Matchers::WithinAbs(eu(0, c), 1e-12));
    }
}

TEST_CASE("a degree-4 user and degree-1 item meet with coefficient one half") {
    auto g = leagcn::build_graph(
        {seq_of(0, {{0, 'A'}, {1, 'A'}, {2, 'A'}, {3, 'A'}, {0, 'B'}})}, 1, 4, 1);
    Rng rng(6);
    Tensor eu = random_tensor({1, 2}, rng);
    Tensor ea = random_tensor({4, 2}, rng);
    Tensor eb = random_tensor({1, 2}, rng);
    auto out = leagcn::slap_propagate(g, eu, ea, eb);
    for (std::size_t c = 0; c < 2; ++c) {
        CHECK_THAT(out.items_a(0, c), Catch::Matchers::WithinAbs(0.5 * eu(0, c), 1e-12));
    }
}

TEST_CASE("propagation equals the dense normalized oracle on random graphs") {
    Rng rng(2026);
    for (int rep = 0; rep < 50; ++rep) {
        const std::size_t p = 2 + rng.below(5);
        const std::size_t m = 1 + rng.below(std::min<std::size_t>(7, 18 - p));
        const std::size_t n = 1 + rng.below(std::min<std::size_t>(7, 19 - p - m));
        auto seqs = random_corpus(rng, p, m, n);
        auto g = leagcn::build_graph(seqs, p, m, n);

        Tensor eu = random_tensor({p, 4}, rng);
        Tensor ea = random_tensor({m, 4}, rng);
        Tensor eb = random_tensor({n, 4}, rng);

        auto got = leagcn::slap_propagate(g, eu, ea, eb);
        auto want = dense_reference(g, eu, ea, eb);
        CHECK(got.users.max_abs_diff(want.users) < 1e-10);
        CHECK(got.items_a.max_abs_diff(want.items_a) < 1e-10);
        CHECK(got.items_b.max_abs_diff(want.items_b) < 1e-10);
    }
}

TEST_CASE("propagation is linear in the embedding tables") {
    Rng rng(8);
    auto seqs = random_corpus(rng, 5, 4, 3);
    auto g = leagcn::build_graph(seqs, 5, 4, 3);
    const double alpha = 0.7, beta = -1.3;

    Tensor xu = random_tensor({5, 3}, rng), yu = random_tensor({5, 3}, rng);
    Tensor xa = random_tensor({4, 3}, rng), ya = random_tensor({4, 3}, rng);
    Tensor xb = random_tensor({3, 3}, rng), yb = random_tensor({3, 3}, rng);

    auto mix = [&](const Tensor& x, const Tensor& y) {
        Tensor out(x.shape());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = alpha * x[i] + beta * y[i];
        return out;
    };
    auto mixed = leagcn::slap_propagate(g, mix(xu, yu), mix(xa, ya), mix(xb, yb));
    auto px = leagcn::slap_propagate(g, xu, xa, xb);
    auto py = leagcn::slap_propagate(g, yu, ya, yb);

    auto check = [&](const Tensor& got, const Tensor& x, const Tensor& y) {
        for (std::size_t i = 0; i < got.size(); ++i) {
            CHECK_THAT(got[i], Catch::Matchers::WithinAbs(alpha * x[i] + beta * y[i], 1e-10));
        }
    };
    check(mixed.users, px.users, py.users);
    check(mixed.items_a, px.items_a, py.items_a);
    check(mixed.items_b, px.items_b, py.items_b);
}

TEST_CASE("relabeling users permutes user outputs and fixes item outputs") {
    Rng rng(21);
    auto seqs = random_corpus(rng, 5, 4, 3);
    auto g1 = leagcn::build_graph(seqs, 5, 4, 3);

    const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
    auto permuted = seqs;
    for (auto& s : permuted) s.user = perm[s.user];
    auto g2 = leagcn::build_graph(permuted, 5, 4, 3);

    Tensor eu = random_tensor({5, 3}, rng);
    Tensor ea = random_tensor({4, 3}, rng);
    Tensor eb = random_tensor({3, 3}, rng);
    Tensor eu_perm({5, 3});
    for (std::size_t k = 0; k < 5; ++k) {
        for (std::size_t c = 0; c < 3; ++c) eu_perm(perm[k], c) = eu(k, c);
    }

    auto out1 = leagcn::slap_propagate(g1, eu, ea, eb);
    auto out2 = leagcn::slap_propagate(g2, eu_perm, ea, eb);
    for (std::size_t k = 0; k < 5; ++k) {
        for (std::size_t c = 0; c < 3; ++c) {
            CHECK(out2.users(perm[k], c) == out1.users(k, c));
        }
    }
    CHECK(out2.items_a.max_abs_diff(out1.items_a) == 0.0);
    CHECK(out2.items_b.max_abs_diff(out1.items_b) == 0.0);
}

TEST_CASE("one step never leaks the other domain into item rows") {
    Rng rng(34);
    auto seqs = random_corpus(rng, 5, 4, 3);
    auto g = leagcn::build_graph(seqs, 5, 4, 3);
    Tensor eu = random_tensor({5, 3}, rng);
    Tensor ea = random_tensor({4, 3}, rng);
    Tensor eb = random_tensor({3, 3}, rng);

    auto base = leagcn::slap_propagate(g, eu, ea, eb);
    Tensor eb2 = random_tensor({3, 3}, rng);  // completely different B table
    auto poked = leagcn::slap_propagate(g, eu, ea, eb2);
    // Item rows aggregate user embeddings only, so both stay fixed; the B
    // perturbation shows up solely in the user rows.
    CHECK(poked.items_a.max_abs_diff(base.items_a) == 0.0);
    CHECK(poked.items_b.max_abs_diff(base.items_b) == 0.0);
    CHECK(poked.users.max_abs_diff(base.users) > 0.0);
}

TEST_CASE("multilayer propagation composes the single step") {
    Rng rng(44);
    auto seqs = random_corpus(rng, 5, 4, 3);
    auto g = leagcn::build_graph(seqs, 5, 4, 3);
    Tensor eu = random_tensor({5, 3}, rng);
    Tensor ea = random_tensor({4, 3}, rng);
    Tensor eb = random_tensor({3, 3}, rng);

    SECTION("depth 1 without combination equals one step") {
        auto a = leagcn::multilayer_propagate(g, eu, ea, eb, 1, false);
        auto b = leagcn::slap_propagate(g, eu, ea, eb);
        CHECK(a.users.max_abs_diff(b.users) == 0.0);
        CHECK(a.items_a.max_abs_diff(b.items_a) == 0.0);
        CHECK(a.items_b.max_abs_diff(b.items_b) == 0.0);
    }

    SECTION("depth 2 equals the dense oracle applied twice, layer-averaged") {
        auto got = leagcn::multilayer_propagate(g, eu, ea, eb, 2, true);
        auto l1 = dense_reference(g, eu, ea, eb);
        auto l2 = dense_reference(g, l1.users, l1.items_a, l1.items_b);
        Tensor want_u({5, 3});
        for (std::size_t i = 0; i < want_u.size(); ++i) {
            want_u[i] = (eu[i] + l1.users[i] + l2.users[i]) / 3.0;
        }
        CHECK(got.users.max_abs_diff(want_u) < 1e-10);
    }

    SECTION("depth 0 is rejected") {
        CHECK_THROWS_AS(leagcn::multilayer_propagate(g, eu, ea, eb, 0), ConfigError);
    }
}

TEST_CASE("a training user with edges in only one domain is rejected") {
    auto g = leagcn::build_graph({seq_of(0, {{0, 'A'}}), seq_of(1, {{1, 'A'}, {0, 'B'}})}, 2, 2, 1);
    CHECK_THROWS_AS(leagcn::make_propagation_maps(g), DataError);
}

TEST_CASE("graph-node propagation is differentiable end to end") {
    Rng rng(66);
    auto seqs = random_corpus(rng, 4, 3, 3);
    auto graph = leagcn::build_graph(seqs, 4, 3, 3);
    auto maps = leagcn::make_propagation_maps(graph);

    ValueGraph g;
    NodeId eu = g.leaf(random_tensor({4, 2}, rng), "eu");
    NodeId ea = g.leaf(random_tensor({3, 2}, rng), "ea");
    NodeId eb = g.leaf(random_tensor({3, 2}, rng), "eb");
    auto out = leagcn::multilayer_nodes(g, maps, eu, ea, eb, 2, true);

    auto reduce = [&](NodeId id) {
        NodeId w = g.constant(random_tensor(g.value(id).shape(), rng));
        return g.sum_axis(g.sum_axis(g.mul(id, w), 0), 0);
    };
    NodeId loss = g.add(g.add(reduce(out.users), reduce(out.items_a)), reduce(out.items_b));
    g.backward(loss);
    CHECK(oracles::gradcheck(g, loss, eu) < 1e-4);
    CHECK(oracles::gradcheck(g, loss, ea) < 1e-4);
    CHECK(oracles::gradcheck(g, loss, eb) < 1e-4);
}

TEST_CASE("edge dump lists each edge once in sorted order") {
    auto g = leagcn::build_graph(
        {seq_of(1, {{0, 'A'}, {0, 'B'}}), seq_of(0, {{1, 'A'}, {0, 'A'}, {0, 'B'}})}, 2, 2, 1);
    const auto path = (std::filesystem::temp_directory_path() / "edges.tsv").string();
    leagcn::dump_edges(g, path);
    std::ifstream f(path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    CHECK(text == "0\t0\tA\n0\t1\tA\n1\t0\tA\n0\t0\tB\n1\t0\tB\n");
    std::filesystem::remove(path);
}
