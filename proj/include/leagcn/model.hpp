#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "leagcn/autodiff.hpp"
#include "leagcn/cds_graph.hpp"
#include "leagcn/checkpoint.hpp"
#include "leagcn/dataset.hpp"
#include "leagcn/encoder.hpp"
#include "leagcn/error.hpp"
#include "leagcn/rng.hpp"
#include "leagcn/tensor.hpp"

namespace leagcn {

struct ModelConfig {
    std::size_t dim = 16;       // embedding width d
    double alpha = 0.3;         // positional participation in the attention map
    std::size_t heads = 4;      // external-attention head count
    std::size_t slots = 16;     // memory slots per head
    std::size_t mlp_dim = 0;    // channel-2 hidden width, 0 means same as dim
    double dropout = 0.1;       // applied to the fused sequence vector while training
    double lr_a = 0.002;        // step size for shared parameters and the A head
    double lr_b = 0.004;        // step size for the B head
    std::size_t batch = 256;
    double l2 = 1e-7;           // penalty weight on the three entity embedding tables
    std::size_t layers = 1;     // propagation depth over the shared graph
    std::string loss_mode = "all";   // which prefix targets train: all | last
    std::string pooling = "mean";    // channel-1 sequence pooling: mean | last
    std::string opt_mode = "dual";   // dual = per-domain step sizes, single = one optimizer
    std::string variant = "full";    // full | pos-off | ea-off | all-off
    std::size_t epochs = 100;
    std::uint64_t seed = 1;

    std::size_t mlp_width() const { return mlp_dim == 0 ? dim : mlp_dim; }

    // pos-off trains the same parameter set as the full model but pins the
    // positional weight to zero, so its forward pass matches full at alpha = 0
    // down to the last bit.
    double effective_alpha() const { return variant == "pos-off" ? 0.0 : alpha; }

    bool has_attention() const { return variant == "full" || variant == "pos-off"; }
    bool has_channel2() const { return variant != "all-off"; }

    void validate() const {
        if (dim == 0) throw ConfigError("embedding width must be positive");
        if (heads == 0) throw ConfigError("head count must be positive");
        if (dim % heads != 0) {
            throw ConfigError("head count " + std::to_string(heads) +
                              " must divide the embedding width " + std::to_string(dim));
        }
        if (slots == 0) throw ConfigError("memory slot count must be positive");
        if (layers == 0) throw ConfigError("propagation depth must be at least 1");
        if (alpha < 0.0 || alpha > 1.0) throw ConfigError("alpha must lie in [0, 1]");
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
        if (batch == 0) throw ConfigError("batch size must be positive");
        if (lr_a < 0.0 || lr_b < 0.0) throw ConfigError("step sizes must be nonnegative");
        if (l2 < 0.0) throw ConfigError("l2 weight must be nonnegative");
        if (loss_mode != "all" && loss_mode != "last") {
            throw ConfigError("unknown loss mode '" + loss_mode + "' (expected all or last)");
        }
        if (pooling != "mean" && pooling != "last") {
            throw ConfigError("unknown pooling '" + pooling + "' (expected mean or last)");
        }
        if (opt_mode != "dual" && opt_mode != "single") {
            throw ConfigError("unknown optimizer mode '" + opt_mode +
                              "' (expected dual or single)");
        }
        if (variant != "full" && variant != "pos-off" && variant != "ea-off" &&
            variant != "all-off") {
            throw ConfigError("unknown variant '" + variant + "'");
        }
    }
};

struct ModelState {
    ModelConfig config;
    std::size_t num_users = 0;
    std::size_t num_items_a = 0;
    std::size_t num_items_b = 0;
    std::size_t max_positions = 0;  // rows of the positional table
    ParamStore params;
};

namespace detail {

// Registry names in checkpoint order. The set depends on the variant: ea-off
// drops the attention memories and the positional table, all-off additionally
// drops the channel-2 scorer.
inline std::vector<std::string> registry_names(const ModelConfig& c) {
    std::vector<std::string> names{"emb.user", "emb.item_a", "emb.item_b"};
    if (c.has_attention()) {
        names.push_back("pos.table");
        for (std::size_t h = 0; h < c.heads; ++h) {
            names.push_back("ea.head" + std::to_string(h) + ".Mk");
            names.push_back("ea.head" + std::to_string(h) + ".Mv");
        }
        names.push_back("ea.W1");
    }
    if (c.has_channel2()) {
        names.push_back("ch2.W2");
        names.push_back("ch2.b");
        names.push_back("ch2.W3");
    }
    names.push_back("head_a.W");
    names.push_back("head_a.b");
    names.push_back("head_b.W");
    names.push_back("head_b.b");
    return names;
}

inline std::string shape_text(const std::vector<std::size_t>& shape) {
    std::string s;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s;
}

inline std::vector<std::size_t> registry_shape(const ModelConfig& c, const std::string& name,
                                               std::size_t p, std::size_t m, std::size_t n,
                                               std::size_t max_pos) {
    const std::size_t d = c.dim;
    const std::size_t dh = d / c.heads;
    if (name == "emb.user") return {p, d};
    if (name == "emb.item_a") return {m, d};
    if (name == "emb.item_b") return {n, d};
    if (name == "pos.table") return {max_pos, d};
    if (name.rfind("ea.head", 0) == 0) return {c.slots, dh};
    if (name == "ea.W1") return {d, d};
    if (name == "ch2.W2") return {2 * d, c.mlp_width()};
    if (name == "ch2.b") return {1, c.mlp_width()};
    if (name == "ch2.W3") return {c.mlp_width()};
    if (name == "head_a.W") return {m, 4 * d};
    if (name == "head_a.b") return {m};
    if (name == "head_b.W") return {n, 4 * d};
    if (name == "head_b.b") return {n};
    throw ConfigError("unknown parameter name '" + name + "'");
}

}  // namespace detail

// Builds a freshly initialized model. Every tensor draws from its own stream
// derived from the master seed and the tensor name, so the values of one
// tensor never depend on which other tensors the variant registers.
inline ModelState init_model(const ModelConfig& config, std::size_t num_users,
                             std::size_t num_items_a, std::size_t num_items_b,
                             std::size_t max_positions) {
    config.validate();
    if (num_users == 0 || num_items_a == 0 || num_items_b == 0) {
        throw DataError("model needs at least one user and one item per domain");
    }
    if (max_positions == 0) throw DataError("positional capacity must be positive");
    ModelState state;
    state.config = config;
    state.num_users = num_users;
    state.num_items_a = num_items_a;
    state.num_items_b = num_items_b;
    state.max_positions = max_positions;
    for (const std::string& name : detail::registry_names(config)) {
        Rng rng = Rng::derive(config.seed, name);
        state.params.add(name, xavier_init(detail::registry_shape(config, name, num_users,
                                                                  num_items_a, num_items_b,
                                                                  max_positions),
                                           rng));
    }
    return state;
}

// One value graph holding parameter leaves and the propagated entity tables,
// shared by every prefix encoded against it. The propagation coefficients are
// heap-owned here because the graph nodes keep pointers to them.
struct ForwardGraph {
    ValueGraph g;
    std::map<std::string, NodeId> leaf;
    std::unique_ptr<PropagationMaps> maps;
    NodeId users{};
    NodeId items_a{};
    NodeId items_b{};
};

inline ForwardGraph begin_forward(const ModelState& state, const CdsGraph& graph) {
    if (graph.num_users != state.num_users || graph.num_items_a != state.num_items_a ||
        graph.num_items_b != state.num_items_b) {
        throw DataError("graph entity counts do not match the model");
    }
    ForwardGraph fw;
    for (const auto& [name, tensor] : state.params.entries()) {
        fw.leaf[name] = fw.g.leaf(tensor, name);
    }
    fw.maps = std::make_unique<PropagationMaps>(make_propagation_maps(graph));
    PropagatedNodes prop;
    if (state.config.layers == 1) {
        prop = slap_nodes(fw.g, *fw.maps, fw.leaf.at("emb.user"), fw.leaf.at("emb.item_a"),
                          fw.leaf.at("emb.item_b"));
    } else {
        prop = multilayer_nodes(fw.g, *fw.maps, fw.leaf.at("emb.user"), fw.leaf.at("emb.item_a"),
                                fw.leaf.at("emb.item_b"), state.config.layers);
    }
    fw.users = prop.users;
    fw.items_a = prop.items_a;
    fw.items_b = prop.items_b;
    return fw;
}

namespace detail {

// Sequence representation of one domain view of a prefix: the propagated item
// rows run through the configured channels and are stacked over the user row.
inline NodeId encode_domain(ForwardGraph& fw, const ModelState& state, std::size_t user,
                            const std::vector<Event>& prefix, char domain, bool training,
                            Rng& dropout_rng) {
    const ModelConfig& c = state.config;
    std::vector<std::size_t> items;
    std::vector<std::size_t> positions;
    for (std::size_t i = 0; i < prefix.size(); ++i) {
        if (prefix[i].domain == domain) {
            items.push_back(prefix[i].item);
            positions.push_back(i);
        }
    }
    if (items.empty()) {
        throw DataError("prefix has no events in domain " + std::string(1, domain));
    }

    ValueGraph& g = fw.g;
    NodeId table = domain == 'A' ? fw.items_a : fw.items_b;
    NodeId e_seq = g.lookup(table, items);
    NodeId user_row = g.row(fw.users, user);

    NodeId rep{};
    if (c.has_attention()) {
        const double alpha = c.effective_alpha();
        std::optional<NodeId> v_seq;
        if (alpha != 0.0) {
            if (positions.back() >= state.max_positions) {
                throw DataError("position " + std::to_string(positions.back()) +
                                " exceeds the positional table (" +
                                std::to_string(state.max_positions) + " rows)");
            }
            v_seq = g.lookup(fw.leaf.at("pos.table"), positions);
        }
        std::vector<EaHead> heads;
        for (std::size_t h = 0; h < c.heads; ++h) {
            const std::string base = "ea.head" + std::to_string(h);
            heads.push_back({fw.leaf.at(base + ".Mk"), fw.leaf.at(base + ".Mv")});
        }
        NodeId h1 = ea_channel1(g, e_seq, v_seq, heads, fw.leaf.at("ea.W1"), alpha, c.pooling);
        Channel2Nodes ch2 = mlp_channel2(g, e_seq, fw.leaf.at("ch2.W2"), fw.leaf.at("ch2.b"),
                                         fw.leaf.at("ch2.W3"));
        rep = fuse(g, h1, ch2.h2, user_row);
    } else if (c.has_channel2()) {
        Channel2Nodes ch2 = mlp_channel2(g, e_seq, fw.leaf.at("ch2.W2"), fw.leaf.at("ch2.b"),
                                         fw.leaf.at("ch2.W3"));
        rep = g.concat({ch2.h2, user_row});
    } else {
        rep = g.concat({g.mean_axis(e_seq, 0), user_row});
    }
    if (training && c.dropout > 0.0) rep = g.dropout(rep, c.dropout, dropout_rng);
    return rep;
}

}  // namespace detail

struct PrefixLogits {
    NodeId logits_a{};
    NodeId logits_b{};
};

// Scores every catalog item of both domains for one prefix. The A head reads
// the concatenation [H_SA, H_SB]; the B head reads the reverse.
inline PrefixLogits forward_prefix(ForwardGraph& fw, const ModelState& state, std::size_t user,
                                   const std::vector<Event>& prefix, bool training,
                                   Rng& dropout_rng) {
    if (user >= state.num_users) {
        throw DataError("user index " + std::to_string(user) + " out of range");
    }
    NodeId hs_a = detail::encode_domain(fw, state, user, prefix, 'A', training, dropout_rng);
    NodeId hs_b = detail::encode_domain(fw, state, user, prefix, 'B', training, dropout_rng);
    ValueGraph& g = fw.g;
    PrefixLogits out;
    out.logits_a = g.add(g.matmul(g.concat({hs_a, hs_b}), fw.leaf.at("head_a.W"), false, true),
                         fw.leaf.at("head_a.b"));
    out.logits_b = g.add(g.matmul(g.concat({hs_b, hs_a}), fw.leaf.at("head_b.W"), false, true),
                         fw.leaf.at("head_b.b"));
    return out;
}

// Inference-mode scoring that returns plain score vectors for ranking.
inline std::pair<Tensor, Tensor> score_prefix(ForwardGraph& fw, const ModelState& state,
                                              std::size_t user,
                                              const std::vector<Event>& prefix) {
    Rng unused(0);
    PrefixLogits logits = forward_prefix(fw, state, user, prefix, false, unused);
    return {fw.g.value(logits.logits_a), fw.g.value(logits.logits_b)};
}

struct BatchTarget {
    std::size_t sequence = 0;  // index into the training split
    TrainingTarget target;
};

struct BatchLoss {
    NodeId loss_a{};
    NodeId loss_b{};
    std::size_t count_a = 0;
    std::size_t count_b = 0;
};

// Mean cross-entropy per domain over the batch, each plus the shared l2
// penalty on the three entity embedding tables. A domain with no targets in
// the batch yields a constant zero loss.
inline BatchLoss build_batch_loss(ForwardGraph& fw, const ModelState& state,
                                  const std::vector<HybridSequence>& sequences,
                                  const std::vector<BatchTarget>& batch, bool training,
                                  Rng& dropout_rng) {
    ValueGraph& g = fw.g;
    std::vector<NodeId> ce_a, ce_b;
    for (const BatchTarget& bt : batch) {
        const HybridSequence& seq = sequences.at(bt.sequence);
        if (bt.target.prefix_len == 0 || bt.target.prefix_len > seq.events.size()) {
            throw DataError("target prefix length out of range for user " +
                            std::to_string(seq.user));
        }
        std::vector<Event> prefix(seq.events.begin(),
                                  seq.events.begin() +
                                      static_cast<std::ptrdiff_t>(bt.target.prefix_len));
        PrefixLogits logits =
            forward_prefix(fw, state, seq.user, prefix, training, dropout_rng);
        if (bt.target.domain == 'A') {
            ce_a.push_back(g.cross_entropy(logits.logits_a, bt.target.item));
        } else {
            ce_b.push_back(g.cross_entropy(logits.logits_b, bt.target.item));
        }
    }

    NodeId penalty = g.scale(g.add(g.add(g.l2_penalty(fw.leaf.at("emb.user")),
                                         g.l2_penalty(fw.leaf.at("emb.item_a"))),
                                   g.l2_penalty(fw.leaf.at("emb.item_b"))),
                             state.config.l2);
    auto mean_of = [&](const std::vector<NodeId>& terms) -> NodeId {
        if (terms.empty()) return g.constant(Tensor::scalar(0.0));
        NodeId sum = terms[0];
        for (std::size_t i = 1; i < terms.size(); ++i) sum = g.add(sum, terms[i]);
        return g.add(g.scale(sum, 1.0 / static_cast<double>(terms.size())), penalty);
    };
    BatchLoss out;
    out.count_a = ce_a.size();
    out.count_b = ce_b.size();
    out.loss_a = mean_of(ce_a);
    out.loss_b = mean_of(ce_b);
    return out;
}

// Checkpoint plus a key=value sidecar describing the configuration and the
// entity counts the tensors were sized for.
inline void save_model(const ModelState& state, const std::string& path) {
    std::vector<std::pair<std::string, Tensor>> tensors;
    for (const auto& [name, tensor] : state.params.entries()) tensors.emplace_back(name, tensor);
    save_checkpoint(path, tensors);

    const ModelConfig& c = state.config;
    std::ostringstream meta;
    meta << "dim=" << c.dim << "\n";
    meta << "alpha=" << format_double(c.effective_alpha()) << "\n";
    meta << "heads=" << c.heads << "\n";
    meta << "slots=" << c.slots << "\n";
    meta << "mlp_dim=" << c.mlp_width() << "\n";
    meta << "dropout=" << format_double(c.dropout) << "\n";
    meta << "lr_a=" << format_double(c.lr_a) << "\n";
    meta << "lr_b=" << format_double(c.lr_b) << "\n";
    meta << "batch=" << c.batch << "\n";
    meta << "l2=" << format_double(c.l2) << "\n";
    meta << "layers=" << c.layers << "\n";
    meta << "loss_mode=" << c.loss_mode << "\n";
    meta << "pooling=" << c.pooling << "\n";
    meta << "opt_mode=" << c.opt_mode << "\n";
    meta << "variant=" << c.variant << "\n";
    meta << "epochs=" << c.epochs << "\n";
    meta << "seed=" << c.seed << "\n";
    meta << "num_users=" << state.num_users << "\n";
    meta << "num_items_a=" << state.num_items_a << "\n";
    meta << "num_items_b=" << state.num_items_b << "\n";
    meta << "max_positions=" << state.max_positions << "\n";
    std::ofstream out(path + ".meta", std::ios::binary);
    if (!out) throw DataError("cannot write " + path + ".meta");
    out << meta.str();
    if (!out.flush()) throw DataError("failed writing " + path + ".meta");
}

inline ModelState load_model(const std::string& path) {
    std::ifstream in(path + ".meta", std::ios::binary);
    if (!in) throw DataError("cannot read " + path + ".meta");
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw DataError(path + ".meta:" + std::to_string(lineno) + ": expected key=value");
        }
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    auto get = [&](const std::string& key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) throw DataError(path + ".meta: missing key '" + key + "'");
        return it->second;
    };
    auto get_size = [&](const std::string& key) {
        return static_cast<std::size_t>(std::stoull(get(key)));
    };
    auto get_double = [&](const std::string& key) { return std::stod(get(key)); };

    ModelState state;
    ModelConfig& c = state.config;
    c.dim = get_size("dim");
    c.alpha = get_double("alpha");
    c.heads = get_size("heads");
    c.slots = get_size("slots");
    c.mlp_dim = get_size("mlp_dim");
    c.dropout = get_double("dropout");
    c.lr_a = get_double("lr_a");
    c.lr_b = get_double("lr_b");
    c.batch = get_size("batch");
    c.l2 = get_double("l2");
    c.layers = get_size("layers");
    c.loss_mode = get("loss_mode");
    c.pooling = get("pooling");
    c.opt_mode = get("opt_mode");
    c.variant = get("variant");
    c.epochs = get_size("epochs");
    c.seed = std::stoull(get("seed"));
    c.validate();
    state.num_users = get_size("num_users");
    state.num_items_a = get_size("num_items_a");
    state.num_items_b = get_size("num_items_b");
    state.max_positions = get_size("max_positions");

    auto tensors = load_checkpoint(path);
    std::map<std::string, Tensor> by_name;
    for (auto& [name, tensor] : tensors) {
        if (by_name.count(name)) throw DataError(path + ": duplicate tensor '" + name + "'");
        by_name.emplace(name, std::move(tensor));
    }
    for (const std::string& name : detail::registry_names(c)) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw DataError(path + ": missing tensor '" + name + "'");
        auto want = detail::registry_shape(c, name, state.num_users, state.num_items_a,
                                           state.num_items_b, state.max_positions);
        if (it->second.shape() != want) {
            throw DataError(path + ": tensor '" + name + "' has shape " +
                            it->second.shape_string() + ", expected " + detail::shape_text(want));
        }
        state.params.add(name, std::move(it->second));
        by_name.erase(it);
    }
    if (!by_name.empty()) {
        throw DataError(path + ": unexpected tensor '" + by_name.begin()->first + "'");
    }
    return state;
}

}  // namespace leagcn
