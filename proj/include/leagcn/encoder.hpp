#pragma once

#include <optional>
#include <string>
#include <vector>

#include "leagcn/autodiff.hpp"
#include "leagcn/error.hpp"

namespace leagcn {

// Sequence encoders. All functions append nodes to an existing ValueGraph
// and return node ids; parameters arrive as already-created leaf nodes so
// one batch graph can share them across many sequences.

struct AttentionMapNodes {
    NodeId pre_l1;  // after the softmax stage: every position row sums to 1
    NodeId map;     // after column L1: every memory-slot column sums to 1
};

// External-attention map of one head: scores (E + alpha*V) Mk^T followed by
// double normalization (softmax across the S memory slots per position, then
// per-slot L1 across the T positions). V is ignored entirely at alpha = 0 so
// positional parameters cannot perturb the result even at the bit level.
inline AttentionMapNodes ea_attention_map(ValueGraph& g, NodeId e_seq,
                                          std::optional<NodeId> v_seq, NodeId mk, double alpha) {
    if (g.value(e_seq).rank() != 2) {
        throw NumericError("attention input must be T x d_h, got " +
                           g.value(e_seq).shape_string());
    }
    NodeId input = e_seq;
    if (alpha != 0.0) {
        if (!v_seq) throw ConfigError("positional weight is nonzero but no positions were given");
        input = g.add(e_seq, g.scale(*v_seq, alpha));
    }
    AttentionMapNodes out;
    out.pre_l1 = g.softmax(g.matmul(input, mk, false, true));
    out.map = g.col_l1norm(out.pre_l1);
    return out;
}

struct EaHead {
    NodeId mk;  // S x d_h
    NodeId mv;  // S x d_h
};

inline NodeId pool_rows(ValueGraph& g, NodeId rows, const std::string& pooling) {
    if (pooling == "mean") return g.mean_axis(rows, 0);
    if (pooling == "last") return g.row(rows, g.value(rows).rows() - 1);
    throw ConfigError("pooling must be \"mean\" or \"last\", got \"" + pooling + "\"");
}

// Channel 1: multi-head external attention. Heads split the model dimension
// (d_h = d / heads) and own independent memory pairs; W1 (d x d) mixes the
// reassembled heads and the position axis is pooled away.
inline NodeId ea_channel1(ValueGraph& g, NodeId e_seq, std::optional<NodeId> v_seq,
                          const std::vector<EaHead>& heads, NodeId w1, double alpha,
                          const std::string& pooling = "mean") {
    const Tensor& e = g.value(e_seq);
    if (heads.empty()) throw ConfigError("external attention needs at least one head");
    const std::size_t d = e.cols();
    if (d % heads.size() != 0) {
        throw ConfigError("head count " + std::to_string(heads.size()) +
                          " must divide the embedding size " + std::to_string(d));
    }
    const std::size_t dh = d / heads.size();
    if (alpha != 0.0 && !v_seq) {
        throw ConfigError("positional weight is nonzero but no positions were given");
    }

    std::vector<NodeId> head_outputs;
    for (std::size_t h = 0; h < heads.size(); ++h) {
        NodeId eh = heads.size() == 1 ? e_seq : g.slice_cols(e_seq, h * dh, (h + 1) * dh);
        std::optional<NodeId> vh;
        if (alpha != 0.0) {
            vh = heads.size() == 1 ? *v_seq : g.slice_cols(*v_seq, h * dh, (h + 1) * dh);
        }
        AttentionMapNodes attn = ea_attention_map(g, eh, vh, heads[h].mk, alpha);
        head_outputs.push_back(g.matmul(attn.map, heads[h].mv));  // T x dh
    }
    NodeId merged = head_outputs.size() == 1 ? head_outputs[0] : g.concat(head_outputs);
    return pool_rows(g, g.matmul(merged, w1), pooling);
}

struct Channel2Nodes {
    NodeId weights;  // T, softmax over positions
    NodeId h2;       // d
};

// Channel 2: every position is scored against the last one by a small MLP,
// w3^T relu(W2 [e_i (+) e_last] + b); softmax over positions weights a sum
// of the original item vectors, so the output stays in their convex hull.
inline Channel2Nodes mlp_channel2(ValueGraph& g, NodeId e_seq, NodeId w2, NodeId b, NodeId w3) {
    const Tensor& e = g.value(e_seq);
    if (e.rank() != 2) {
        throw NumericError("channel-2 input must be T x d, got " + e.shape_string());
    }
    const std::size_t t = e.rows();

    NodeId anchor_rows = g.lookup(e_seq, std::vector<std::size_t>(t, t - 1));
    NodeId pairs = g.concat({e_seq, anchor_rows});                       // T x 2d
    NodeId bias_rows = g.lookup(b, std::vector<std::size_t>(t, 0));      // T x d_mlp
    NodeId hidden = g.relu(g.add(g.matmul(pairs, w2), bias_rows));
    NodeId scores = g.matmul(hidden, w3);                                // T

    Channel2Nodes out;
    out.weights = g.softmax(scores);
    out.h2 = g.matmul(out.weights, e_seq);  // weighted sum of item vectors
    return out;
}

// H_S = Concat(H1 + H2, e_user): channel sum in the first d entries, the
// user's propagated embedding in the last d.
inline NodeId fuse(ValueGraph& g, NodeId h1, NodeId h2, NodeId e_user) {
    const Tensor& a = g.value(h1);
    if (a.rank() != 1 || !a.same_shape(g.value(h2)) || !a.same_shape(g.value(e_user))) {
        throw NumericError("fusion inputs must be three d-vectors, got " + a.shape_string() +
                           ", " + g.value(h2).shape_string() + ", " +
                           g.value(e_user).shape_string());
    }
    return g.concat({g.add(h1, h2), e_user});
}

struct SelfAttentionParams {
    NodeId wq;  // d x d each
    NodeId wk;
    NodeId wv;
    NodeId wo;
};

struct SelfAttentionNodes {
    NodeId attn;    // T x T, rows sum to 1
    NodeId pooled;  // d
};

// Quadratic baseline for the parameter and scaling comparisons: one layer of
// softmax(Q K^T / sqrt(d)) V with an output map, mean-pooled.
inline SelfAttentionNodes self_attention_reference(ValueGraph& g, NodeId e_seq,
                                                   std::optional<NodeId> v_seq,
                                                   const SelfAttentionParams& p, double alpha) {
    const Tensor& e = g.value(e_seq);
    const std::size_t d = e.cols();
    NodeId input = e_seq;
    if (alpha != 0.0) {
        if (!v_seq) throw ConfigError("positional weight is nonzero but no positions were given");
        input = g.add(e_seq, g.scale(*v_seq, alpha));
    }
    NodeId q = g.matmul(input, p.wq);
    NodeId k = g.matmul(input, p.wk);
    NodeId v = g.matmul(input, p.wv);

    SelfAttentionNodes out;
    out.attn = g.softmax(g.scale(g.matmul(q, k, false, true), 1.0 / std::sqrt(double(d))));
    out.pooled = g.mean_axis(g.matmul(g.matmul(out.attn, v), p.wo), 0);
    return out;
}

}  // namespace leagcn
