#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <optional>
#include <vector>

#include "leagcn/encoder.hpp"
#include "leagcn/rng.hpp"
#include "oracles.hpp"

using leagcn::Channel2Nodes;
using leagcn::ConfigError;
using leagcn::EaHead;
using leagcn::NodeId;
using leagcn::Rng;
using leagcn::Tensor;
using leagcn::ValueGraph;

namespace {

Tensor random_tensor(const std::vector<std::size_t>& shape, Rng& rng, double lo = -1.0,
                     double hi = 1.0) {
    Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

NodeId weighted_scalar(ValueGraph& g, NodeId id, Rng& rng) {
    NodeId w = g.constant(random_tensor(g.value(id).shape(), rng));
    NodeId prod = g.mul(id, w);
    if (g.value(id).rank() == 2) return g.sum_axis(g.sum_axis(prod, 0), 0);
    return g.sum_axis(prod, 0);
}

}  // namespace

TEST_CASE("double-normalized map on a single position collapses to ones") {
    ValueGraph g;
    NodeId e = g.constant(Tensor({1, 1}, {0.0}));
    NodeId mk = g.constant(Tensor({2, 1}, {0.0, 0.0}));  // scores [0, 0]
    auto attn = leagcn::ea_attention_map(g, e, std::nullopt, mk, 0.0);

    const Tensor& pre = g.value(attn.pre_l1);
    CHECK_THAT(pre(0, 0), Catch::Matchers::WithinAbs(0.5, 1e-12));
    CHECK_THAT(pre(0, 1), Catch::Matchers::WithinAbs(0.5, 1e-12));
    const Tensor& map = g.value(attn.map);
    CHECK_THAT(map(0, 0), Catch::Matchers::WithinAbs(1.0, 1e-12));
    CHECK_THAT(map(0, 1), Catch::Matchers::WithinAbs(1.0, 1e-12));
}

TEST_CASE("double normalization on the worked 2x2 score matrix") {
    ValueGraph g;
    NodeId e = g.constant(Tensor({2, 2}, {0.0, std::log(3.0), 0.0, 0.0}));
    NodeId mk = g.constant(Tensor({2, 2}, {1.0, 0.0, 0.0, 1.0}));  // identity: scores = E
    auto attn = leagcn::ea_attention_map(g, e, std::nullopt, mk, 0.0);

    const Tensor& pre = g.value(attn.pre_l1);
    CHECK_THAT(pre(0, 0), Catch::Matchers::WithinAbs(0.25, 1e-12));
    CHECK_THAT(pre(0, 1), Catch::Matchers::WithinAbs(0.75, 1e-12));
    CHECK_THAT(pre(1, 0), Catch::Matchers::WithinAbs(0.5, 1e-12));
    CHECK_THAT(pre(1, 1), Catch::Matchers::WithinAbs(0.5, 1e-12));

    const Tensor& map = g.value(attn.map);
    CHECK_THAT(map(0, 0), Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-12));
    CHECK_THAT(map(0, 1), Catch::Matchers::WithinAbs(0.6, 1e-12));
    CHECK_THAT(map(1, 0), Catch::Matchers::WithinAbs(2.0 / 3.0, 1e-12));
    CHECK_THAT(map(1, 1), Catch::Matchers::WithinAbs(0.4, 1e-12));
}

TEST_CASE("map row sums are 1 before L1 and column sums 1 after, on random input") {
    Rng rng(17);
    for (int rep = 0; rep < 50; ++rep) {
        ValueGraph g;
        const std::size_t t = 1 + rng.below(9);
        const std::size_t s = 1 + rng.below(6);
        NodeId e = g.constant(random_tensor({t, 4}, rng, -3.0, 3.0));
        NodeId v = g.constant(random_tensor({t, 4}, rng, -3.0, 3.0));
        NodeId mk = g.constant(random_tensor({s, 4}, rng, -3.0, 3.0));
        auto attn = leagcn::ea_attention_map(g, e, v, mk, 0.3);

        const Tensor& pre = g.value(attn.pre_l1);
        for (std::size_t r = 0; r < t; ++r) {
            double sum = 0.0;
            for (std::size_t c = 0; c < s; ++c) sum += pre(r, c);
            CHECK_THAT(sum, Catch::Matchers::WithinAbs(1.0, 1e-9));
        }
        const Tensor& map = g.value(attn.map);
        for (std::size_t c = 0; c < s; ++c) {
            double sum = 0.0;
            for (std::size_t r = 0; r < t; ++r) sum += map(r, c);
            CHECK_THAT(sum, Catch::Matchers::WithinAbs(1.0, 1e-9));
        }
    }
}

TEST_CASE("single-slot external attention ignores the sequence content") {
    // With one head and one memory slot every map entry is 1/T, so the
    // channel output is mv W1 / T no matter what the items are.
    Rng rng(23);
    const std::size_t t = 5, d = 3;
    Tensor mv = random_tensor({1, d}, rng);
    Tensor w1 = random_tensor({d, d}, rng);
    Tensor mk = random_tensor({1, d}, rng);

    auto run = [&](const Tensor& e_val) {
        ValueGraph g;
        NodeId e = g.constant(e_val);
        std::vector<EaHead> heads{{g.constant(mk), g.constant(mv)}};
        NodeId h1 = leagcn::ea_channel1(g, e, std::nullopt, heads, g.constant(w1), 0.0);
        return g.value(h1);
    };

    Tensor out1 = run(random_tensor({t, d}, rng));
    Tensor out2 = run(random_tensor({t, d}, rng));
    CHECK(out1.max_abs_diff(out2) < 1e-12);

    for (std::size_t c = 0; c < d; ++c) {
        double expect = 0.0;
        for (std::size_t k = 0; k < d; ++k) expect += mv(0, k) * w1(k, c);
        expect /= static_cast<double>(t);
        CHECK_THAT(out1[c], Catch::Matchers::WithinAbs(expect, 1e-12));
    }
}

TEST_CASE("at alpha zero the positional table cannot influence channel 1") {
    Rng rng(31);
    const std::size_t t = 4, d = 4;
    Tensor e_val = random_tensor({t, d}, rng);
    Tensor mk0 = random_tensor({3, 2}, rng), mv0 = random_tensor({3, 2}, rng);
    Tensor mk1 = random_tensor({3, 2}, rng), mv1 = random_tensor({3, 2}, rng);
    Tensor w1 = random_tensor({d, d}, rng);

    auto run = [&](std::optional<Tensor> v_val) {
        ValueGraph g;
        NodeId e = g.constant(e_val);
        std::optional<NodeId> v;
        if (v_val) v = g.constant(*v_val);
        std::vector<EaHead> heads{{g.constant(mk0), g.constant(mv0)},
                                  {g.constant(mk1), g.constant(mv1)}};
        NodeId h1 = leagcn::ea_channel1(g, e, v, heads, g.constant(w1), 0.0);
        return g.value(h1);
    };

    Tensor without = run(std::nullopt);
    Tensor with_junk = run(random_tensor({t, d}, rng, -9.0, 9.0));
    CHECK(without.max_abs_diff(with_junk) == 0.0);
}

TEST_CASE("channel-1 configuration errors") {
    Rng rng(3);
    ValueGraph g;
    NodeId e = g.constant(random_tensor({3, 4}, rng));
    NodeId w1 = g.constant(random_tensor({4, 4}, rng));
    std::vector<EaHead> three;
    for (int h = 0; h < 3; ++h) {
        three.push_back({g.constant(random_tensor({2, 1}, rng)),
                         g.constant(random_tensor({2, 1}, rng))});
    }
    CHECK_THROWS_AS(leagcn::ea_channel1(g, e, std::nullopt, three, w1, 0.0), ConfigError);
    CHECK_THROWS_AS(leagcn::ea_channel1(g, e, std::nullopt, {}, w1, 0.0), ConfigError);

    std::vector<EaHead> two{{g.constant(random_tensor({2, 2}, rng)),
                             g.constant(random_tensor({2, 2}, rng))},
                            {g.constant(random_tensor({2, 2}, rng)),
                             g.constant(random_tensor({2, 2}, rng))}};
    CHECK_THROWS_AS(leagcn::ea_channel1(g, e, std::nullopt, two, w1, 0.5), ConfigError);
    CHECK_THROWS_AS(leagcn::ea_channel1(g, e, std::nullopt, two, w1, 0.0, "sum"), ConfigError);
}

TEST_CASE("channel-1 gradients match finite differences") {
    Rng rng(47);
    ValueGraph g;
    NodeId e = g.leaf(random_tensor({4, 4}, rng), "e");
    NodeId v = g.leaf(random_tensor({4, 4}, rng), "v");
    std::vector<EaHead> heads;
    for (int h = 0; h < 2; ++h) {
        heads.push_back({g.leaf(random_tensor({3, 2}, rng), "mk" + std::to_string(h)),
                         g.leaf(random_tensor({3, 2}, rng), "mv" + std::to_string(h))});
    }
    NodeId w1 = g.leaf(random_tensor({4, 4}, rng), "w1");
    NodeId h1 = leagcn::ea_channel1(g, e, v, heads, w1, 0.3);
    NodeId loss = weighted_scalar(g, h1, rng);
    g.backward(loss);
    CHECK(oracles::gradcheck(g, loss, e) < 1e-4);
    CHECK(oracles::gradcheck(g, loss, v) < 1e-4);
    CHECK(oracles::gradcheck(g, loss, heads[0].mk) < 1e-4);
    CHECK(oracles::gradcheck(g, loss, heads[0].mv) < 1e-4);
    CHECK(oracles::gradcheck(g, loss, heads[1].mk) < 1e-4);
    CHECK(oracles::gradcheck(g, loss, heads[1].mv) < 1e-4);
    CHECK(oracles::gradcheck(g, loss, w1) < 1e-4);
}

TEST_CASE("channel 2 on a single position returns that item exactly") {
    Rng rng(52);
    ValueGraph g;
    Tensor e_val = random_tensor({1, 3}, rng);
    NodeId e = g.constant(e_val);
    NodeId w2 = g.constant(random_tensor({6, 3}, rng));
    NodeId b = g.constant(random_tensor({1, 3}, rng));
    NodeId w3 = g.constant(random_tensor({3}, rng));
    Channel2Nodes out = leagcn::mlp_channel2(g, e, w2, b, w3);
    CHECK_THAT(g.value(out.weights)[0], Catch::Matchers::WithinAbs(1.0, 1e-12));
    CHECK(g.value(out.h2).max_abs_diff(Tensor({3}, {e_val[0], e_val[1], e_val[2]})) < 1e-12);
}

TEST_CASE("channel 2 with identical items returns that item") {
    Rng rng(53);
    ValueGraph g;
    Tensor row = random_tensor({1, 3}, rng);
    Tensor e_val({4, 3});
    for (std::size_t r = 0; r < 4; ++r) {
        for (std::size_t c = 0; c < 3; ++c) e_val(r, c) = row(0, c);
    }
    NodeId e = g.constant(e_val);
    Channel2Nodes out = leagcn::mlp_channel2(g, e, g.constant(random_tensor({6, 3}, rng)),
                                             g.constant(random_tensor({1, 3}, rng)),
                                             g.constant(random_tensor({3}, rng)));
    for (std::size_t c = 0; c < 3; ++c) {
        CHECK_THAT(g.value(out.h2)[c], Catch::Matchers::WithinAbs(row(0, c), 1e-12));
    }
}

TEST_CASE("channel-2 weights form a convex combination of the items") {
    Rng rng(54);
    for (int rep = 0; rep < 30; ++rep) {
        ValueGraph g;
        const std::size_t t = 2 + rng.below(6);
        Tensor e_val = random_tensor({t, 4}, rng, -2.0, 2.0);
        Channel2Nodes out = leagcn::mlp_channel2(g, g.constant(e_val),
                                                 g.constant(random_tensor({8, 4}, rng)),
                                                 g.constant(random_tensor({1, 4}, rng)),
                                                 g.constant(random_tensor({4}, rng)));
        const Tensor& w = g.value(out.weights);
        double sum = 0.0;
        for (std::size_t i = 0; i < t; ++i) {
            CHECK(w[i] >= 0.0);
            sum += w[i];
        }
        CHECK_THAT(sum, Catch::Matchers::WithinAbs(1.0, 1e-9));

        const Tensor& h2 = g.value(out.h2);
        for (std::size_t c = 0; c < 4; ++c) {
            double lo = e_val(0, c), hi = e_val(0, c);
            for (std::size_t i = 1; i < t; ++i) {
                lo = std::min(lo, e_val(i, c));
                hi = std::max(hi, e_val(i, c));
            }
            CHECK(h2[c] >= lo - 1e-9);
            CHECK(h2[c] <= hi + 1e-9);
        }
    }
}

TEST_CASE("channel-2 gradients match finite differences") {
    Rng rng(61);
    ValueGraph g;
    NodeId e = g.leaf(random_tensor({4, 3}, rng), "e");
    NodeId w2 = g.leaf(random_tensor({6, 3}, rng), "w2");
    NodeId b = g.leaf(random_tensor({1, 3}, rng), "b");
    NodeId w3 = g.leaf(random_tensor({3}, rng), "w3");
    Channel2Nodes out = leagcn::mlp_channel2(g, e, w2, b, w3);
    NodeId loss = weighted_scalar(g, out.h2, rng);
    g.backward(loss);
    CHECK(oracles::gradcheck(g, loss, e) < 1e-4);
    CHECK(oracles::gradcheck(g, loss, w2) < 1e-4);
    CHECK(oracles::gradcheck(g, loss, b) < 1e-4);
    CHECK(oracles::gradcheck(g, loss, w3) < 1e-4);
}

TEST_CASE("fusion stacks the channel sum over the user embedding") {
    Rng rng(71);
    ValueGraph g;
    Tensor h2_val = random_tensor({3}, rng);
    Tensor user_val = random_tensor({3}, rng);
    NodeId zero = g.constant(Tensor({3}));
    NodeId h2 = g.constant(h2_val);
    NodeId user = g.constant(user_val);

    const Tensor& fused = g.value(leagcn::fuse(g, zero, h2, user));
    REQUIRE(fused.size() == 6);
    for (std::size_t c = 0; c < 3; ++c) {
        CHECK(fused[c] == h2_val[c]);  // zero H1 leaves channel 2
        CHECK(fused[3 + c] == user_val[c]);
    }

    Tensor h1_val = random_tensor({3}, rng);
    const Tensor& fused2 = g.value(leagcn::fuse(g, g.constant(h1_val), h2, user));
    for (std::size_t c = 0; c < 3; ++c) {
        CHECK_THAT(fused2[c] - h1_val[c] - h2_val[c], Catch::Matchers::WithinAbs(0.0, 1e-15));
    }

    Tensor user2_val = random_tensor({3}, rng);
    const Tensor& fused3 = g.value(leagcn::fuse(g, g.constant(h1_val), h2, g.constant(user2_val)));
    for (std::size_t c = 0; c < 3; ++c) {
        CHECK(fused3[c] == fused2[c]);  // first block does not see the user
        CHECK(fused3[3 + c] == user2_val[c]);
    }

    CHECK_THROWS_AS(leagcn::fuse(g, zero, h2, g.constant(Tensor({4}))), leagcn::NumericError);
}

TEST_CASE("self-attention reference: rows normalize, T=1 reduces to a projection") {
    Rng rng(81);

    SECTION("attention rows sum to 1") {
        ValueGraph g;
        leagcn::SelfAttentionParams p{g.constant(random_tensor({4, 4}, rng)),
                                      g.constant(random_tensor({4, 4}, rng)),
                                      g.constant(random_tensor({4, 4}, rng)),
                                      g.constant(random_tensor({4, 4}, rng))};
        auto out = leagcn::self_attention_reference(g, g.constant(random_tensor({5, 4}, rng)),
                                                    std::nullopt, p, 0.0);
        const Tensor& attn = g.value(out.attn);
        for (std::size_t r = 0; r < 5; ++r) {
            double sum = 0.0;
            for (std::size_t c = 0; c < 5; ++c) sum += attn(r, c);
            CHECK_THAT(sum, Catch::Matchers::WithinAbs(1.0, 1e-9));
        }
    }

    SECTION("a single position bypasses the attention mixing") {
        ValueGraph g;
        Tensor x = random_tensor({1, 3}, rng);
        Tensor wv = random_tensor({3, 3}, rng);
        Tensor wo = random_tensor({3, 3}, rng);
        leagcn::SelfAttentionParams p{g.constant(random_tensor({3, 3}, rng)),
                                      g.constant(random_tensor({3, 3}, rng)), g.constant(wv),
                                      g.constant(wo)};
        auto out = leagcn::self_attention_reference(g, g.constant(x), std::nullopt, p, 0.0);
        for (std::size_t c = 0; c < 3; ++c) {
            double expect = 0.0;
            for (std::size_t k = 0; k < 3; ++k) {
                double vk = 0.0;
                for (std::size_t j = 0; j < 3; ++j) vk += x(0, j) * wv(j, k);
                expect += vk * wo(k, c);
            }
            CHECK_THAT(g.value(out.pooled)[c], Catch::Matchers::WithinAbs(expect, 1e-12));
        }
    }

    SECTION("gradients match finite differences") {
        ValueGraph g;
        NodeId e = g.leaf(random_tensor({3, 4}, rng), "e");
        leagcn::SelfAttentionParams p{g.leaf(random_tensor({4, 4}, rng), "wq"),
                                      g.leaf(random_tensor({4, 4}, rng), "wk"),
                                      g.leaf(random_tensor({4, 4}, rng), "wv"),
                                      g.leaf(random_tensor({4, 4}, rng), "wo")};
        auto out = leagcn::self_attention_reference(g, e, std::nullopt, p, 0.0);
        NodeId loss = weighted_scalar(g, out.pooled, rng);
        g.backward(loss);
        CHECK(oracles::gradcheck(g, loss, e) < 1e-4);
        CHECK(oracles::gradcheck(g, loss, p.wq) < 1e-4);
        CHECK(oracles::gradcheck(g, loss, p.wk) < 1e-4);
        CHECK(oracles::gradcheck(g, loss, p.wv) < 1e-4);
        CHECK(oracles::gradcheck(g, loss, p.wo) < 1e-4);
    }
}

TEST_CASE("encoding the same inputs twice gives identical outputs") {
    Rng rng(91);
    Tensor e_val = random_tensor({4, 4}, rng);
    Tensor v_val = random_tensor({4, 4}, rng);
    Tensor mk = random_tensor({3, 4}, rng), mv = random_tensor({3, 4}, rng);
    Tensor w1 = random_tensor({4, 4}, rng);

    auto run = [&] {
        ValueGraph g;
        std::vector<EaHead> heads{{g.constant(mk), g.constant(mv)}};
        NodeId h1 = leagcn::ea_channel1(g, g.constant(e_val), g.constant(v_val), heads,
                                        g.constant(w1), 0.3);
        return g.value(h1);
    };
    CHECK(run().max_abs_diff(run()) == 0.0);
}
