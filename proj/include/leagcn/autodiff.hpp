#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "leagcn/error.hpp"
#include "leagcn/rng.hpp"
#include "leagcn/tensor.hpp"

namespace leagcn {

using NodeId = std::size_t;

// Constant weighted edge list describing a sparse linear map
// out[dst] += coef * in[src]. The descriptor is owned by the caller (the
// graph builder only borrows it) and must outlive every ValueGraph using it.
struct SparseLinear {
    struct Edge {
        std::size_t src;
        std::size_t dst;
        double coef;
    };
    std::size_t n_src = 0;
    std::size_t n_dst = 0;
    std::vector<Edge> edges;
};

enum class Op : std::uint8_t {
    kConstant,
    kLeaf,
    kMatmul,
    kAdd,
    kMul,
    kScale,
    kConcat,
    kRelu,
    kSoftmax,
    kColL1Norm,
    kLookup,
    kMeanAxis,
    kSumAxis,
    kL2Penalty,
    kDropout,
    kSpmm,
    kCrossEntropy,
    kSliceCols,
};

inline const char* op_name(Op op) {
    switch (op) {
        case Op::kConstant: return "constant";
        case Op::kLeaf: return "leaf";
        case Op::kMatmul: return "matmul";
        case Op::kAdd: return "add";
        case Op::kMul: return "mul";
        case Op::kScale: return "scale";
        case Op::kConcat: return "concat";
        case Op::kRelu: return "relu";
        case Op::kSoftmax: return "softmax";
        case Op::kColL1Norm: return "col_l1norm";
        case Op::kLookup: return "lookup";
        case Op::kMeanAxis: return "mean_axis";
        case Op::kSumAxis: return "sum_axis";
        case Op::kL2Penalty: return "l2_penalty";
        case Op::kDropout: return "dropout";
        case Op::kSpmm: return "spmm";
        case Op::kCrossEntropy: return "cross_entropy";
        case Op::kSliceCols: return "slice_cols";
    }
    return "?";
}

namespace detail {

// 2-D view of a tensor for matmul: rank-1 operands are promoted to a row
// or column vector, transposition is index arithmetic.
struct MatView {
    const Tensor* t;
    bool trans;
    std::size_t raw_rows;
    std::size_t raw_cols;

    std::size_t rows() const { return trans ? raw_cols : raw_rows; }
    std::size_t cols() const { return trans ? raw_rows : raw_cols; }
    double at(std::size_t i, std::size_t j) const {
        return trans ? (*t)[j * raw_cols + i] : (*t)[i * raw_cols + j];
    }
};

inline MatView view2d(const Tensor& t, bool trans, bool rank1_as_col) {
    if (t.rank() == 2) return {&t, trans, t.rows(), t.cols()};
    if (t.rank() == 1) {
        if (trans) throw NumericError("matmul: transpose of a rank-1 operand is not defined");
        if (rank1_as_col) return {&t, false, t.size(), 1};
        return {&t, false, 1, t.size()};
    }
    throw NumericError("matmul requires rank 1 or 2 operands, got rank " +
                       std::to_string(t.rank()));
}

inline std::vector<double> gemm(const MatView& a, const MatView& b) {
    const std::size_t m = a.rows(), n = b.cols(), k = a.cols();
    std::vector<double> c(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t l = 0; l < k; ++l) {
            const double av = a.at(i, l);
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) {
                c[i * n + j] += av * b.at(l, j);
            }
        }
    }
    return c;
}

// dst (raw layout, optionally transposed w.r.t. the m-by-n product) += C.
inline void accumulate_product(Tensor& dst, bool dst_trans, const std::vector<double>& c,
                               std::size_t m, std::size_t n) {
    if (dst.size() != m * n) {
        throw NumericError("internal: gradient accumulation size mismatch");
    }
    auto d = dst.data();
    if (!dst_trans || m == 1 || n == 1) {
        for (std::size_t i = 0; i < c.size(); ++i) d[i] += c[i];
        return;
    }
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            d[j * m + i] += c[i * n + j];
        }
    }
}

}  // namespace detail

// Append-only computation record over dense tensors. Node ids are already a
// topological order (inputs always precede their consumers). Forward values
// are computed eagerly as nodes are built; backward() fills a gradient for
// every leaf that needs one, zeros for leaves the loss never touches.
class ValueGraph {
public:
    struct Node {
        Op op = Op::kConstant;
        std::vector<NodeId> inputs;
        Tensor value;
        Tensor grad;
        bool needs_grad = false;
        std::string name;  // parameter leaves only

        // op attributes
        bool trans_a = false, trans_b = false;
        double factor = 0.0;
        std::size_t axis = 0;
        std::size_t col_from = 0, col_to = 0;
        std::size_t target = 0;
        bool scalar_index = false;
        std::vector<std::size_t> indices;
        const SparseLinear* sparse = nullptr;
        Tensor mask;  // dropout
    };

    NodeId constant(Tensor v) {
        Node n;
        n.op = Op::kConstant;
        n.value = std::move(v);
        n.needs_grad = false;
        return push(std::move(n));
    }

    NodeId leaf(Tensor v, std::string name = "") {
        Node n;
        n.op = Op::kLeaf;
        n.value = std::move(v);
        n.needs_grad = true;
        n.name = std::move(name);
        NodeId id = push(std::move(n));
        if (!nodes_[id].name.empty()) params_.push_back(id);
        return id;
    }

    NodeId matmul(NodeId a, NodeId b, bool trans_a = false, bool trans_b = false) {
        Node n = make(Op::kMatmul, {a, b});
        n.trans_a = trans_a;
        n.trans_b = trans_b;
        return push(std::move(n));
    }

    NodeId add(NodeId a, NodeId b) { return push(make(Op::kAdd, {a, b})); }
    NodeId mul(NodeId a, NodeId b) { return push(make(Op::kMul, {a, b})); }

    NodeId scale(NodeId a, double factor) {
        Node n = make(Op::kScale, {a});
        n.factor = factor;
        return push(std::move(n));
    }

    NodeId concat(std::vector<NodeId> parts) {
        if (parts.empty()) throw NumericError("concat of zero tensors");
        return push(make(Op::kConcat, std::move(parts)));
    }

    NodeId relu(NodeId a) { return push(make(Op::kRelu, {a})); }
    NodeId softmax(NodeId a) { return push(make(Op::kSoftmax, {a})); }
    NodeId col_l1norm(NodeId a) { return push(make(Op::kColL1Norm, {a})); }

    NodeId lookup(NodeId table, std::vector<std::size_t> indices) {
        if (indices.empty()) throw NumericError("lookup with zero indices");
        Node n = make(Op::kLookup, {table});
        n.indices = std::move(indices);
        return push(std::move(n));
    }

    // Single-row gather returning a rank-1 vector.
    NodeId row(NodeId table, std::size_t index) {
        Node n = make(Op::kLookup, {table});
        n.indices = {index};
        n.scalar_index = true;
        return push(std::move(n));
    }

    NodeId mean_axis(NodeId a, std::size_t axis) {
        Node n = make(Op::kMeanAxis, {a});
        n.axis = axis;
        return push(std::move(n));
    }

    NodeId sum_axis(NodeId a, std::size_t axis) {
        Node n = make(Op::kSumAxis, {a});
        n.axis = axis;
        return push(std::move(n));
    }

    NodeId l2_penalty(NodeId a) { return push(make(Op::kL2Penalty, {a})); }

    // Inverted dropout; the mask is sampled once at build time from the given
    // stream and reused by recompute(), so a fixed seed fixes the whole run.
    NodeId dropout(NodeId a, double rate, Rng& rng) {
        if (rate < 0.0 || rate >= 1.0) throw NumericError("dropout rate must be in [0, 1)");
        if (rate == 0.0) return a;
        Node n = make(Op::kDropout, {a});
        n.factor = rate;
        const Tensor& x = nodes_[a].value;
        n.mask = Tensor(x.shape());
        const double keep = 1.0 - rate;
        for (std::size_t i = 0; i < n.mask.size(); ++i) {
            n.mask[i] = rng.uniform() >= rate ? 1.0 / keep : 0.0;
        }
        return push(std::move(n));
    }

    NodeId spmm(const SparseLinear& map, NodeId x) {
        Node n = make(Op::kSpmm, {x});
        n.sparse = &map;
        return push(std::move(n));
    }

    // Fused softmax-cross-entropy of a rank-1 logit vector against one target
    // class; gradient is exactly softmax(z) - onehot(target).
    NodeId cross_entropy(NodeId logits, std::size_t target) {
        Node n = make(Op::kCrossEntropy, {logits});
        n.target = target;
        return push(std::move(n));
    }

    NodeId slice_cols(NodeId a, std::size_t from, std::size_t to) {
        Node n = make(Op::kSliceCols, {a});
        n.col_from = from;
        n.col_to = to;
        return push(std::move(n));
    }

    std::size_t size() const { return nodes_.size(); }
    const Node& node(NodeId id) const { return nodes_.at(id); }
    const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
    const Tensor& forward(NodeId id) const { return value(id); }

    const std::vector<NodeId>& param_nodes() const { return params_; }

    // Replace a leaf/constant value (same shape); recompute() replays the rest.
    void set_leaf(NodeId id, Tensor v) {
        Node& n = nodes_.at(id);
        if (n.op != Op::kLeaf && n.op != Op::kConstant) {
            throw NumericError("set_leaf on a non-leaf node");
        }
        if (!n.value.same_shape(v)) {
            throw NumericError("set_leaf shape mismatch: " + n.value.shape_string() + " vs " +
                               v.shape_string());
        }
        n.value = std::move(v);
    }

    void recompute() {
        for (Node& n : nodes_) {
            if (n.op != Op::kLeaf && n.op != Op::kConstant) compute_forward(n);
        }
    }

    // Reverse-mode sweep from a scalar loss. Fills grads for all needs_grad
    // nodes; returns the per-parameter table keyed by leaf name.
    std::map<std::string, Tensor> backward(NodeId loss) {
        const Node& loss_node = nodes_.at(loss);
        if (loss_node.value.size() != 1) {
            throw NumericError("backward requires a scalar loss node, got shape " +
                               loss_node.value.shape_string());
        }
        for (Node& n : nodes_) {
            if (n.needs_grad) {
                n.grad = Tensor(n.value.shape());
            } else {
                n.grad = Tensor();
            }
        }
        if (nodes_[loss].needs_grad) {
            nodes_[loss].grad[0] = 1.0;
            for (NodeId id = loss + 1; id-- > 0;) {
                Node& n = nodes_[id];
                if (!n.needs_grad || n.op == Op::kLeaf || n.op == Op::kConstant) continue;
                propagate(n);
            }
        }
        std::map<std::string, Tensor> table;
        for (NodeId id : params_) {
            const Node& n = nodes_[id];
            table[n.name] = n.grad.empty() ? Tensor(n.value.shape()) : n.grad;
        }
        return table;
    }

    const Tensor& grad(NodeId id) const {
        const Node& n = nodes_.at(id);
        if (n.grad.empty()) throw NumericError("no gradient recorded for node");
        return n.grad;
    }

private:
    Node make(Op op, std::vector<NodeId> inputs) {
        Node n;
        n.op = op;
        for (NodeId id : inputs) {
            if (id >= nodes_.size()) throw NumericError("op input refers to an unknown node");
            n.needs_grad = n.needs_grad || nodes_[id].needs_grad;
        }
        n.inputs = std::move(inputs);
        return n;
    }

    NodeId push(Node n) {
        if (n.op != Op::kLeaf && n.op != Op::kConstant) compute_forward(n);
        check_finite(n.value, op_name(n.op));
        nodes_.push_back(std::move(n));
        return nodes_.size() - 1;
    }

    [[noreturn]] void shape_error(const Node& n, const std::string& detail) const {
        std::string msg = std::string("shape mismatch in ") + op_name(n.op) + ": " + detail +
                          " (operands";
        for (NodeId id : n.inputs) msg += " " + nodes_[id].value.shape_string();
        msg += ")";
        throw NumericError(msg);
    }

    void compute_forward(Node& n) {
        switch (n.op) {
            case Op::kConstant:
            case Op::kLeaf:
                return;
            case Op::kMatmul: {
                const Tensor& a = nodes_[n.inputs[0]].value;
                const Tensor& b = nodes_[n.inputs[1]].value;
                auto va = detail::view2d(a, n.trans_a, /*rank1_as_col=*/false);
                auto vb = detail::view2d(b, n.trans_b, /*rank1_as_col=*/true);
                if (va.cols() != vb.rows()) {
                    shape_error(n, "inner extents " + std::to_string(va.cols()) + " vs " +
                                       std::to_string(vb.rows()));
                }
                auto c = detail::gemm(va, vb);
                const std::size_t m = va.rows(), k = vb.cols();
                if (a.rank() == 1 && b.rank() == 1) {
                    n.value = Tensor({1}, std::move(c));
                } else if (a.rank() == 1) {
                    n.value = Tensor({k}, std::move(c));
                } else if (b.rank() == 1) {
                    n.value = Tensor({m}, std::move(c));
                } else {
                    n.value = Tensor({m, k}, std::move(c));
                }
                return;
            }
            case Op::kAdd:
            case Op::kMul: {
                const Tensor& a = nodes_[n.inputs[0]].value;
                const Tensor& b = nodes_[n.inputs[1]].value;
                if (!a.same_shape(b)) {
                    shape_error(n, "elementwise operands differ");
                }
                Tensor out(a.shape());
                if (n.op == Op::kAdd) {
                    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
                } else {
                    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
                }
                n.value = std::move(out);
                return;
            }
            case Op::kScale: {
                const Tensor& a = nodes_[n.inputs[0]].value;
                Tensor out(a.shape());
                for (std::size_t i = 0; i < out.size(); ++i) out[i] = n.factor * a[i];
                n.value = std::move(out);
                return;
            }
            case Op::kConcat: {
                const Tensor& first = nodes_[n.inputs[0]].value;
                if (first.rank() == 1) {
                    std::size_t total = 0;
                    for (NodeId id : n.inputs) {
                        const Tensor& p = nodes_[id].value;
                        if (p.rank() != 1) shape_error(n, "mixed ranks");
                        total += p.size();
                    }
                    Tensor out({total});
                    std::size_t off = 0;
                    for (NodeId id : n.inputs) {
                        const Tensor& p = nodes_[id].value;
                        std::copy(p.data().begin(), p.data().end(), out.data().begin() + off);
                        off += p.size();
                    }
                    n.value = std::move(out);
                    return;
                }
                const std::size_t rows = first.rows();
                std::size_t total_cols = 0;
                for (NodeId id : n.inputs) {
                    const Tensor& p = nodes_[id].value;
                    if (p.rank() != 2 || p.rows() != rows) {
                        shape_error(n, "row counts differ");
                    }
                    total_cols += p.cols();
                }
                Tensor out({rows, total_cols});
                std::size_t col_off = 0;
                for (NodeId id : n.inputs) {
                    const Tensor& p = nodes_[id].value;
                    for (std::size_t r = 0; r < rows; ++r) {
                        std::copy(p.row_span(r).begin(), p.row_span(r).end(),
                                  out.row_span(r).begin() + col_off);
                    }
                    col_off += p.cols();
                }
                n.value = std::move(out);
                return;
            }
            case Op::kRelu: {
                const Tensor& a = nodes_[n.inputs[0]].value;
                Tensor out(a.shape());
                for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
                n.value = std::move(out);
                return;
            }
            case Op::kSoftmax: {
                const Tensor& a = nodes_[n.inputs[0]].value;
                Tensor out(a.shape());
                const std::size_t rows = a.rank() == 2 ? a.rows() : 1;
                const std::size_t cols = a.rank() == 2 ? a.cols() : a.size();
                for (std::size_t r = 0; r < rows; ++r) {
                    const double* x = a.data().data() + r * cols;
                    double* y = out.data().data() + r * cols;
                    double mx = x[0];
                    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
                    double sum = 0.0;
                    for (std::size_t j = 0; j < cols; ++j) {
                        y[j] = std::exp(x[j] - mx);
                        sum += y[j];
                    }
                    for (std::size_t j = 0; j < cols; ++j) y[j] /= sum;
                }
                n.value = std::move(out);
                return;
            }
            case Op::kColL1Norm: {
                const Tensor& a = nodes_[n.inputs[0]].value;
                if (a.rank() != 2) shape_error(n, "requires a rank-2 input");
                Tensor out(a.shape());
                const std::size_t rows = a.rows(), cols = a.cols();
                std::vector<double> colsum(cols, 0.0);
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < cols; ++j) colsum[j] += a(r, j);
                }
                for (std::size_t j = 0; j < cols; ++j) {
                    if (colsum[j] <= 0.0) {
                        throw NumericError("col_l1norm: nonpositive column sum");
                    }
                }
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < cols; ++j) out(r, j) = a(r, j) / colsum[j];
                }
                n.value = std::move(out);
                return;
            }
            case Op::kLookup: {
                const Tensor& table = nodes_[n.inputs[0]].value;
                if (table.rank() != 2) shape_error(n, "lookup table must be rank 2");
                const std::size_t d = table.cols();
                for (std::size_t idx : n.indices) {
                    if (idx >= table.rows()) {
                        throw NumericError("lookup index " + std::to_string(idx) +
                                           " out of range for table " + table.shape_string());
                    }
                }
                if (n.scalar_index) {
                    Tensor out({d});
                    auto src = table.row_span(n.indices[0]);
                    std::copy(src.begin(), src.end(), out.data().begin());
                    n.value = std::move(out);
                    return;
                }
                Tensor out({n.indices.size(), d});
                for (std::size_t t = 0; t < n.indices.size(); ++t) {
                    auto src = table.row_span(n.indices[t]);
                    std::copy(src.begin(), src.end(), out.row_span(t).begin());
                }
                n.value = std::move(out);
                return;
            }
            case Op::kMeanAxis:
            case Op::kSumAxis: {
                const Tensor& a = nodes_[n.inputs[0]].value;
                const bool mean = n.op == Op::kMeanAxis;
                if (a.rank() == 1) {
                    if (n.axis != 0) shape_error(n, "axis out of range for rank-1");
                    double s = 0.0;
                    for (double v : a.data()) s += v;
                    n.value = Tensor::scalar(mean ? s / static_cast<double>(a.size()) : s);
                    return;
                }
                if (a.rank() != 2 || n.axis > 1) shape_error(n, "axis out of range");
                const std::size_t rows = a.rows(), cols = a.cols();
                if (n.axis == 0) {
                    Tensor out({cols});
                    for (std::size_t r = 0; r < rows; ++r) {
                        for (std::size_t j = 0; j < cols; ++j) out[j] += a(r, j);
                    }
                    if (mean) {
                        for (std::size_t j = 0; j < cols; ++j) out[j] /= static_cast<double>(rows);
                    }
                    n.value = std::move(out);
                } else {
                    Tensor out({rows});
                    for (std::size_t r = 0; r < rows; ++r) {
                        double s = 0.0;
                        for (std::size_t j = 0; j < cols; ++j) s += a(r, j);
                        out[r] = mean ? s / static_cast<double>(cols) : s;
                    }
                    n.value = std::move(out);
                }
                return;
            }
            case Op::kL2Penalty: {
                const Tensor& a = nodes_[n.inputs[0]].value;
                double s = 0.0;
                for (double v : a.data()) s += v * v;
                n.value = Tensor::scalar(s);
                return;
            }
            case Op::kDropout: {
                const Tensor& a = nodes_[n.inputs[0]].value;
                if (!a.same_shape(n.mask)) shape_error(n, "mask shape differs");
                Tensor out(a.shape());
                for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * n.mask[i];
                n.value = std::move(out);
                return;
            }
            case Op::kSpmm: {
                const Tensor& x = nodes_[n.inputs[0]].value;
                const SparseLinear& map = *n.sparse;
                if (x.rank() != 2 || x.rows() != map.n_src) {
                    shape_error(n, "expected " + std::to_string(map.n_src) + " source rows");
                }
                const std::size_t d = x.cols();
                Tensor out({map.n_dst, d});
                for (const auto& e : map.edges) {
                    auto src = x.row_span(e.src);
                    auto dst = out.row_span(e.dst);
                    for (std::size_t j = 0; j < d; ++j) dst[j] += e.coef * src[j];
                }
                n.value = std::move(out);
                return;
            }
            case Op::kCrossEntropy: {
                const Tensor& z = nodes_[n.inputs[0]].value;
                if (z.rank() != 1) shape_error(n, "logits must be rank 1");
                if (n.target >= z.size()) {
                    throw NumericError("cross_entropy target out of range");
                }
                double mx = z[0];
                for (std::size_t i = 1; i < z.size(); ++i) mx = std::max(mx, z[i]);
                double sum = 0.0;
                for (std::size_t i = 0; i < z.size(); ++i) sum += std::exp(z[i] - mx);
                n.value = Tensor::scalar(mx + std::log(sum) - z[n.target]);
                return;
            }
            case Op::kSliceCols: {
                const Tensor& a = nodes_[n.inputs[0]].value;
                const std::size_t width = a.rank() == 2 ? a.cols() : a.size();
                if (n.col_from >= n.col_to || n.col_to > width) {
                    shape_error(n, "column range [" + std::to_string(n.col_from) + ", " +
                                       std::to_string(n.col_to) + ")");
                }
                const std::size_t w = n.col_to - n.col_from;
                if (a.rank() == 1) {
                    Tensor out({w});
                    for (std::size_t j = 0; j < w; ++j) out[j] = a[n.col_from + j];
                    n.value = std::move(out);
                    return;
                }
                Tensor out({a.rows(), w});
                for (std::size_t r = 0; r < a.rows(); ++r) {
                    auto src = a.row_span(r);
                    auto dst = out.row_span(r);
                    for (std::size_t j = 0; j < w; ++j) dst[j] = src[n.col_from + j];
                }
                n.value = std::move(out);
                return;
            }
        }
        throw NumericError("unhandled op");
    }

    Tensor& grad_of(NodeId id) { return nodes_[id].grad; }
    bool wants_grad(NodeId id) const { return nodes_[id].needs_grad; }

    void propagate(Node& n) {
        const Tensor& g = n.grad;
        switch (n.op) {
            case Op::kConstant:
            case Op::kLeaf:
                return;
            case Op::kMatmul: {
                const Tensor& a = nodes_[n.inputs[0]].value;
                const Tensor& b = nodes_[n.inputs[1]].value;
                auto va = detail::view2d(a, n.trans_a, false);
                auto vb = detail::view2d(b, n.trans_b, true);
                const std::size_t m = va.rows(), k = vb.cols();
                detail::MatView vg{&g, false, m, k};
                if (wants_grad(n.inputs[0])) {
                    // dA_eff = G * B_eff^T; store transposed if trans_a.
                    detail::MatView vbt{vb.t, !vb.trans, vb.raw_rows, vb.raw_cols};
                    auto c = detail::gemm(vg, vbt);
                    detail::accumulate_product(grad_of(n.inputs[0]), n.trans_a, c, m, va.cols());
                }
                if (wants_grad(n.inputs[1])) {
                    // dB_eff = A_eff^T * G; store transposed if trans_b.
                    detail::MatView vat{va.t, !va.trans, va.raw_rows, va.raw_cols};
                    auto c = detail::gemm(vat, vg);
                    detail::accumulate_product(grad_of(n.inputs[1]), n.trans_b, c, va.cols(), k);
                }
                return;
            }
            case Op::kAdd: {
                for (int s = 0; s < 2; ++s) {
                    if (!wants_grad(n.inputs[s])) continue;
                    Tensor& dst = grad_of(n.inputs[s]);
                    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
                }
                return;
            }
            case Op::kMul: {
                for (int s = 0; s < 2; ++s) {
                    if (!wants_grad(n.inputs[s])) continue;
                    const Tensor& other = nodes_[n.inputs[1 - s]].value;
                    Tensor& dst = grad_of(n.inputs[s]);
                    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * other[i];
                }
                return;
            }
            case Op::kScale: {
                if (!wants_grad(n.inputs[0])) return;
                Tensor& dst = grad_of(n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) dst[i] += n.factor * g[i];
                return;
            }
            case Op::kConcat: {
                const Tensor& first = nodes_[n.inputs[0]].value;
                if (first.rank() == 1) {
                    std::size_t off = 0;
                    for (NodeId id : n.inputs) {
                        const std::size_t len = nodes_[id].value.size();
                        if (wants_grad(id)) {
                            Tensor& dst = grad_of(id);
                            for (std::size_t i = 0; i < len; ++i) dst[i] += g[off + i];
                        }
                        off += len;
                    }
                    return;
                }
                const std::size_t rows = first.rows();
                std::size_t col_off = 0;
                for (NodeId id : n.inputs) {
                    const std::size_t w = nodes_[id].value.cols();
                    if (wants_grad(id)) {
                        Tensor& dst = grad_of(id);
                        for (std::size_t r = 0; r < rows; ++r) {
                            for (std::size_t j = 0; j < w; ++j) {
                                dst(r, j) += g(r, col_off + j);
                            }
                        }
                    }
                    col_off += w;
                }
                return;
            }
            case Op::kRelu: {
                if (!wants_grad(n.inputs[0])) return;
                const Tensor& x = nodes_[n.inputs[0]].value;
                Tensor& dst = grad_of(n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    if (x[i] > 0.0) dst[i] += g[i];
                }
                return;
            }
            case Op::kSoftmax: {
                if (!wants_grad(n.inputs[0])) return;
                const Tensor& y = n.value;
                Tensor& dst = grad_of(n.inputs[0]);
                const std::size_t rows = y.rank() == 2 ? y.rows() : 1;
                const std::size_t cols = y.rank() == 2 ? y.cols() : y.size();
                for (std::size_t r = 0; r < rows; ++r) {
                    const double* yr = y.data().data() + r * cols;
                    const double* gr = g.data().data() + r * cols;
                    double dot = 0.0;
                    for (std::size_t j = 0; j < cols; ++j) dot += gr[j] * yr[j];
                    double* dr = dst.data().data() + r * cols;
                    for (std::size_t j = 0; j < cols; ++j) dr[j] += yr[j] * (gr[j] - dot);
                }
                return;
            }
            case Op::kColL1Norm: {
                if (!wants_grad(n.inputs[0])) return;
                const Tensor& x = nodes_[n.inputs[0]].value;
                const Tensor& y = n.value;
                Tensor& dst = grad_of(n.inputs[0]);
                const std::size_t rows = x.rows(), cols = x.cols();
                for (std::size_t j = 0; j < cols; ++j) {
                    double colsum = 0.0, dot = 0.0;
                    for (std::size_t r = 0; r < rows; ++r) {
                        colsum += x(r, j);
                        dot += g(r, j) * y(r, j);
                    }
                    for (std::size_t r = 0; r < rows; ++r) {
                        dst(r, j) += (g(r, j) - dot) / colsum;
                    }
                }
                return;
            }
            case Op::kLookup: {
                if (!wants_grad(n.inputs[0])) return;
                Tensor& dst = grad_of(n.inputs[0]);
                const std::size_t d = dst.cols();
                for (std::size_t t = 0; t < n.indices.size(); ++t) {
                    const double* gr = g.data().data() + t * d;
                    double* dr = dst.data().data() + n.indices[t] * d;
                    for (std::size_t j = 0; j < d; ++j) dr[j] += gr[j];
                }
                return;
            }
            case Op::kMeanAxis:
            case Op::kSumAxis: {
                if (!wants_grad(n.inputs[0])) return;
                const Tensor& x = nodes_[n.inputs[0]].value;
                Tensor& dst = grad_of(n.inputs[0]);
                const bool mean = n.op == Op::kMeanAxis;
                if (x.rank() == 1) {
                    const double f = mean ? 1.0 / static_cast<double>(x.size()) : 1.0;
                    for (std::size_t i = 0; i < x.size(); ++i) dst[i] += f * g[0];
                    return;
                }
                const std::size_t rows = x.rows(), cols = x.cols();
                if (n.axis == 0) {
                    const double f = mean ? 1.0 / static_cast<double>(rows) : 1.0;
                    for (std::size_t r = 0; r < rows; ++r) {
                        for (std::size_t j = 0; j < cols; ++j) dst(r, j) += f * g[j];
                    }
                } else {
                    const double f = mean ? 1.0 / static_cast<double>(cols) : 1.0;
                    for (std::size_t r = 0; r < rows; ++r) {
                        for (std::size_t j = 0; j < cols; ++j) dst(r, j) += f * g[r];
                    }
                }
                return;
            }
            case Op::kL2Penalty: {
                if (!wants_grad(n.inputs[0])) return;
                const Tensor& x = nodes_[n.inputs[0]].value;
                Tensor& dst = grad_of(n.inputs[0]);
                for (std::size_t i = 0; i < x.size(); ++i) dst[i] += 2.0 * x[i] * g[0];
                return;
            }
            case Op::kDropout: {
                if (!wants_grad(n.inputs[0])) return;
                Tensor& dst = grad_of(n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * n.mask[i];
                return;
            }
            case Op::kSpmm: {
                if (!wants_grad(n.inputs[0])) return;
                Tensor& dst = grad_of(n.inputs[0]);
                const std::size_t d = dst.cols();
                for (const auto& e : n.sparse->edges) {
                    auto gr = g.row_span(e.dst);
                    auto dr = dst.row_span(e.src);
                    for (std::size_t j = 0; j < d; ++j) dr[j] += e.coef * gr[j];
                }
                return;
            }
            case Op::kCrossEntropy: {
                if (!wants_grad(n.inputs[0])) return;
                const Tensor& z = nodes_[n.inputs[0]].value;
                Tensor& dst = grad_of(n.inputs[0]);
                double mx = z[0];
                for (std::size_t i = 1; i < z.size(); ++i) mx = std::max(mx, z[i]);
                double sum = 0.0;
                for (std::size_t i = 0; i < z.size(); ++i) sum += std::exp(z[i] - mx);
                for (std::size_t i = 0; i < z.size(); ++i) {
                    double p = std::exp(z[i] - mx) / sum;
                    dst[i] += (p - (i == n.target ? 1.0 : 0.0)) * g[0];
                }
                return;
            }
            case Op::kSliceCols: {
                if (!wants_grad(n.inputs[0])) return;
                const Tensor& x = nodes_[n.inputs[0]].value;
                Tensor& dst = grad_of(n.inputs[0]);
                if (x.rank() == 1) {
                    for (std::size_t j = 0; j < g.size(); ++j) dst[n.col_from + j] += g[j];
                    return;
                }
                for (std::size_t r = 0; r < x.rows(); ++r) {
                    for (std::size_t j = 0; j < g.cols(); ++j) {
                        dst(r, n.col_from + j) += g(r, j);
                    }
                }
                return;
            }
        }
    }

    // Deque so references handed out by value()/node() survive later pushes.
    std::deque<Node> nodes_;
    std::vector<NodeId> params_;
};

// Xavier/Glorot uniform init: values in +-sqrt(6 / (fan_in + fan_out)).
// fan_in is the product of all extents but the last, fan_out the last extent;
// for a rank-2 table (r x c) that is the usual r + c fan sum.
inline Tensor xavier_init(const std::vector<std::size_t>& shape, Rng& rng) {
    Tensor out(shape);  // rejects empty shapes and zero extents
    std::size_t fan_in = 1;
    for (std::size_t i = 0; i + 1 < shape.size(); ++i) fan_in *= shape[i];
    const std::size_t fan_out = shape.back();
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = rng.uniform(-bound, bound);
    return out;
}

inline Tensor xavier_init(const std::vector<std::size_t>& shape, std::uint64_t seed) {
    Rng rng(seed);
    return xavier_init(shape, rng);
}

}  // namespace leagcn
