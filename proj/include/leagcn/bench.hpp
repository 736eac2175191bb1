#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "leagcn/autodiff.hpp"
#include "leagcn/cds_graph.hpp"
#include "leagcn/dataset.hpp"
#include "leagcn/encoder.hpp"
#include "leagcn/error.hpp"
#include "leagcn/metrics.hpp"
#include "leagcn/model.hpp"
#include "leagcn/rng.hpp"
#include "leagcn/trainer.hpp"

namespace leagcn {

struct ParamRow {
    std::string name;
    std::string shape;
    std::size_t count = 0;
};

struct ParamReport {
    std::vector<ParamRow> rows;
    std::size_t total = 0;
    std::size_t ea_enumerated = 0;      // registered attention tensors (memories + W1)
    std::size_t ea_analytic = 0;        // 2*S*d + d*d
    std::size_t self_attention = 0;     // 4*d*d for the reference encoder
    bool ea_smaller = false;
};

// Closed-form scalar count for the whole registry, written out independently
// of the registry walk so the two can cross-check each other.
inline std::size_t analytic_parameter_count(const ModelConfig& c, std::size_t p, std::size_t m,
                                            std::size_t n, std::size_t max_positions) {
    const std::size_t d = c.dim;
    std::size_t count = p * d + m * d + n * d;
    if (c.has_attention()) {
        count += max_positions * d;      // positional table
        count += 2 * c.slots * d;        // heads * 2 * S * (d / heads)
        count += d * d;                  // W1
    }
    if (c.has_channel2()) {
        count += 2 * d * c.mlp_width() + c.mlp_width() + c.mlp_width();
    }
    count += m * 4 * d + m;  // A head
    count += n * 4 * d + n;  // B head
    return count;
}

inline ParamReport count_parameters(const ModelState& state) {
    const ModelConfig& c = state.config;
    ParamReport report;
    for (const auto& [name, tensor] : state.params.entries()) {
        report.rows.push_back({name, tensor.shape_string(), tensor.size()});
        report.total += tensor.size();
        if (name.rfind("ea.", 0) == 0) report.ea_enumerated += tensor.size();
    }
    report.ea_analytic = c.has_attention() ? 2 * c.slots * c.dim + c.dim * c.dim : 0;
    report.self_attention = 4 * c.dim * c.dim;
    report.ea_smaller = report.ea_analytic < report.self_attention;
    return report;
}

inline std::string param_report_text(const ParamReport& report) {
    std::string text;
    for (const ParamRow& row : report.rows) {
        text += row.name + "\t" + row.shape + "\t" + std::to_string(row.count) + "\n";
    }
    text += "total\t-\t" + std::to_string(report.total) + "\n";
    text += "ea.channel1\t-\t" + std::to_string(report.ea_analytic) + "\n";
    text += "self_attention.reference\t-\t" + std::to_string(report.self_attention) + "\n";
    text += "ea.smaller_than_self_attention\t-\t" + std::string(report.ea_smaller ? "1" : "0") +
            "\n";
    return text;
}

inline void write_param_report(const ParamReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    out << param_report_text(report);
    if (!out.flush()) throw DataError("failed writing " + path);
}

struct ScalingPoint {
    std::size_t length = 0;
    double median_seconds = 0.0;
};

struct ScalingCurve {
    std::string encoder;
    std::vector<ScalingPoint> points;
    double exponent = 0.0;
};

struct ScalingReport {
    std::vector<ScalingCurve> curves;
};

namespace detail {

inline double seconds_between(std::chrono::steady_clock::time_point a,
                              std::chrono::steady_clock::time_point b) {
    return std::chrono::duration<double>(b - a).count();
}

// Smallest observable step of the wall clock, so timing samples can be sized
// to span comfortably more than one tick.
inline double timer_tick_seconds() {
    auto t0 = std::chrono::steady_clock::now();
    auto t1 = t0;
    while (t1 == t0) t1 = std::chrono::steady_clock::now();
    return seconds_between(t0, t1);
}

// Median seconds for one replay of the graph's compute nodes. When a single
// replay is shorter than ten clock ticks the replays per sample double until
// the sample is measurable.
inline double median_recompute_seconds(ValueGraph& g, std::size_t repeats) {
    const double floor_seconds = 10.0 * timer_tick_seconds();
    std::size_t replays = 1;
    for (;;) {
        auto t0 = std::chrono::steady_clock::now();
        for (std::size_t i = 0; i < replays; ++i) g.recompute();
        auto t1 = std::chrono::steady_clock::now();
        if (seconds_between(t0, t1) >= floor_seconds || replays >= (std::size_t{1} << 24)) break;
        replays *= 2;
    }
    std::vector<double> samples;
    for (std::size_t r = 0; r < repeats; ++r) {
        auto t0 = std::chrono::steady_clock::now();
        for (std::size_t i = 0; i < replays; ++i) g.recompute();
        auto t1 = std::chrono::steady_clock::now();
        samples.push_back(seconds_between(t0, t1) / static_cast<double>(replays));
    }
    std::sort(samples.begin(), samples.end());
    return samples[samples.size() / 2];
}

inline Tensor random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
    Tensor t({rows, cols});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-1.0, 1.0);
    return t;
}

inline ValueGraph build_ea_bench_graph(std::size_t length, std::size_t d, std::size_t slots,
                                       std::size_t heads, Rng& rng) {
    ValueGraph g;
    NodeId e_seq = g.constant(random_matrix(length, d, rng));
    std::vector<EaHead> memories;
    const std::size_t dh = d / heads;
    for (std::size_t h = 0; h < heads; ++h) {
        memories.push_back(
            {g.constant(random_matrix(slots, dh, rng)), g.constant(random_matrix(slots, dh, rng))});
    }
    ea_channel1(g, e_seq, std::nullopt, memories, g.constant(random_matrix(d, d, rng)), 0.0);
    return g;
}

inline ValueGraph build_self_attention_bench_graph(std::size_t length, std::size_t d, Rng& rng) {
    ValueGraph g;
    NodeId e_seq = g.constant(random_matrix(length, d, rng));
    SelfAttentionParams p{g.constant(random_matrix(d, d, rng)),
                          g.constant(random_matrix(d, d, rng)),
                          g.constant(random_matrix(d, d, rng)),
                          g.constant(random_matrix(d, d, rng))};
    self_attention_reference(g, e_seq, std::nullopt, p, 0.0);
    return g;
}

inline double power_law_exponent(const std::vector<ScalingPoint>& points) {
    double mean_x = 0.0, mean_y = 0.0;
    for (const ScalingPoint& p : points) {
        mean_x += std::log(static_cast<double>(p.length));
        mean_y += std::log(p.median_seconds);
    }
    mean_x /= static_cast<double>(points.size());
    mean_y /= static_cast<double>(points.size());
    double cov = 0.0, var = 0.0;
    for (const ScalingPoint& p : points) {
        const double dx = std::log(static_cast<double>(p.length)) - mean_x;
        cov += dx * (std::log(p.median_seconds) - mean_y);
        var += dx * dx;
    }
    return cov / var;
}

}  // namespace detail

// Times one forward replay of each encoder across the length grid and fits a
// power law to the medians. Constant sequence lengths across encoders keep
// the comparison apples to apples at equal width d.
inline ScalingReport time_scaling(const std::vector<std::size_t>& lengths, std::size_t repeats,
                                  std::size_t d, std::size_t slots, std::size_t heads,
                                  std::uint64_t seed) {
    if (lengths.size() < 2) throw ConfigError("scaling needs at least two lengths");
    for (std::size_t i = 1; i < lengths.size(); ++i) {
        if (lengths[i] <= lengths[i - 1]) {
            throw ConfigError("scaling lengths must strictly increase");
        }
    }
    if (lengths.back() < 16 * lengths.front()) {
        throw ConfigError("scaling lengths must span at least a factor of 16");
    }
    if (repeats < 5) throw ConfigError("scaling needs at least 5 repeats");
    if (heads == 0 || d % heads != 0) {
        throw ConfigError("head count must divide the embedding width");
    }

    ScalingReport report;
    ScalingCurve ea{"ea", {}, 0.0};
    ScalingCurve sa{"self_attention", {}, 0.0};
    for (std::size_t t : lengths) {
        Rng rng = Rng::derive(seed, "bench-" + std::to_string(t));
        ValueGraph ea_graph = detail::build_ea_bench_graph(t, d, slots, heads, rng);
        ea.points.push_back({t, detail::median_recompute_seconds(ea_graph, repeats)});
        ValueGraph sa_graph = detail::build_self_attention_bench_graph(t, d, rng);
        sa.points.push_back({t, detail::median_recompute_seconds(sa_graph, repeats)});
    }
    ea.exponent = detail::power_law_exponent(ea.points);
    sa.exponent = detail::power_law_exponent(sa.points);
    report.curves.push_back(std::move(ea));
    report.curves.push_back(std::move(sa));
    return report;
}

inline std::string scaling_report_text(const ScalingReport& report) {
    std::string text;
    for (const ScalingCurve& curve : report.curves) {
        for (const ScalingPoint& p : curve.points) {
            text += curve.encoder + "\t" + std::to_string(p.length) + "\t" +
                    format_double(p.median_seconds) + "\n";
        }
    }
    for (const ScalingCurve& curve : report.curves) {
        text += curve.encoder + "\t" + format_double(curve.exponent) + "\n";
    }
    return text;
}

inline void write_scaling_report(const ScalingReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    out << scaling_report_text(report);
    if (!out.flush()) throw DataError("failed writing " + path);
}

struct SweepRow {
    double setting = 0.0;
    char domain = 'A';
    MetricTriple metrics;
};

struct SweepTable {
    std::string parameter;  // layers | alpha | beta
    std::size_t k = 10;
    std::vector<SweepRow> rows;
};

namespace detail {

inline void sweep_point(SweepTable& table, double setting, const ModelConfig& config,
                        const std::vector<HybridSequence>& train, const CdsGraph& graph,
                        const std::vector<TestCase>& test, std::size_t max_positions,
                        std::size_t k) {
    ModelState state = init_model(config, graph.num_users, graph.num_items_a, graph.num_items_b,
                                  max_positions);
    train_model(state, train, graph);
    EvalResult result = evaluate(state, graph, test, k);
    table.rows.push_back({setting, 'A', result.domain_a});
    table.rows.push_back({setting, 'B', result.domain_b});
}

}  // namespace detail

// Trains one model per propagation depth under the same seed and budget and
// reports the three metrics per domain per depth.
inline SweepTable layer_sweep(const std::vector<HybridSequence>& train, const CdsGraph& graph,
                              const std::vector<TestCase>& test, const ModelConfig& base,
                              const std::vector<std::size_t>& depths, std::size_t max_positions,
                              std::size_t k = 10) {
    if (depths.empty()) throw ConfigError("layer sweep needs at least one depth");
    SweepTable table{"layers", k, {}};
    for (std::size_t depth : depths) {
        ModelConfig config = base;
        config.layers = depth;
        detail::sweep_point(table, static_cast<double>(depth), config, train, graph, test,
                            max_positions, k);
    }
    return table;
}

// The positional-participation grid 0, 0.1, ..., 1.
inline SweepTable sweep_alpha(const std::vector<HybridSequence>& train, const CdsGraph& graph,
                              const std::vector<TestCase>& test, const ModelConfig& base,
                              std::size_t max_positions, std::size_t k = 10) {
    SweepTable table{"alpha", k, {}};
    for (int i = 0; i <= 10; ++i) {
        ModelConfig config = base;
        config.alpha = static_cast<double>(i) / 10.0;
        detail::sweep_point(table, config.alpha, config, train, graph, test, max_positions, k);
    }
    return table;
}

// The head-count grid 1, 2, 4, 8, 16.
inline SweepTable sweep_beta(const std::vector<HybridSequence>& train, const CdsGraph& graph,
                             const std::vector<TestCase>& test, const ModelConfig& base,
                             std::size_t max_positions, std::size_t k = 10) {
    SweepTable table{"beta", k, {}};
    for (std::size_t beta : {1, 2, 4, 8, 16}) {
        ModelConfig config = base;
        config.heads = beta;
        if (config.dim % beta != 0) {
            throw ConfigError("head grid value " + std::to_string(beta) +
                              " does not divide the embedding width " +
                              std::to_string(config.dim));
        }
        detail::sweep_point(table, static_cast<double>(beta), config, train, graph, test,
                            max_positions, k);
    }
    return table;
}

inline std::string sweep_table_text(const SweepTable& table) {
    std::string text;
    for (const SweepRow& row : table.rows) {
        text += format_double(row.setting) + "\t" + std::string(1, row.domain) + "\t" +
                format_double(row.metrics.rc) + "\t" + format_double(row.metrics.mrr) + "\t" +
                format_double(row.metrics.ndcg) + "\n";
    }
    return text;
}

inline void write_sweep_table(const SweepTable& table, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    out << sweep_table_text(table);
    if (!out.flush()) throw DataError("failed writing " + path);
}

}  // namespace leagcn
