#pragma once

#include <cstdint>
#include <fstream>
#include <string>

#include "leagcn/error.hpp"
#include "leagcn/model.hpp"

namespace leagcn {

// Everything a command run can be told, from defaults, a config file, or
// flags, in that precedence order. Model hyperparameters mirror ModelConfig;
// the rest is paths and per-command knobs.
struct RunConfig {
    std::size_t dim = 16;
    double alpha = 0.3;
    std::size_t heads = 4;
    std::size_t slots = 16;
    std::size_t mlp_dim = 0;
    double dropout = 0.1;
    double lr_a = 0.002;
    double lr_b = 0.004;
    std::size_t batch = 256;
    double l2 = 1e-7;
    std::size_t layers = 1;
    std::string loss_mode = "all";
    std::string pooling = "mean";
    std::string opt_mode = "dual";
    std::string variant = "full";
    std::size_t epochs = 100;
    std::uint64_t seed = 1;

    std::string data;
    std::string cache = "cache";
    std::string checkpoint = "model.ckpt";
    std::string report = "metrics.tsv";
    std::string epoch_log = "epochs.tsv";
    std::string bench_out = "bench.tsv";

    double ratio = 0.8;      // train share of sequences in prepare
    std::size_t k = 10;      // metric cutoff
    std::string mode = "params";  // bench mode
    std::size_t repeats = 7;      // timing samples per scaling point

    // Entity counts for dataset-free parameter accounting (bench params).
    std::size_t users = 1000;
    std::size_t items_a = 1000;
    std::size_t items_b = 1000;
    std::size_t max_len = 50;

    bool verbose = false;

    ModelConfig model() const {
        ModelConfig m;
        m.dim = dim;
        m.alpha = alpha;
        m.heads = heads;
        m.slots = slots;
        m.mlp_dim = mlp_dim;
        m.dropout = dropout;
        m.lr_a = lr_a;
        m.lr_b = lr_b;
        m.batch = batch;
        m.l2 = l2;
        m.layers = layers;
        m.loss_mode = loss_mode;
        m.pooling = pooling;
        m.opt_mode = opt_mode;
        m.variant = variant;
        m.epochs = epochs;
        m.seed = seed;
        return m;
    }
};

namespace detail {

inline std::size_t config_size(const std::string& value, const std::string& context) {
    std::size_t consumed = 0;
    unsigned long long v = 0;
    try {
        v = std::stoull(value, &consumed);
    } catch (const std::exception&) {
        throw ConfigError(context + ": expected a nonnegative integer, got '" + value + "'");
    }
    if (consumed != value.size() || value[0] == '-') {
        throw ConfigError(context + ": expected a nonnegative integer, got '" + value + "'");
    }
    return static_cast<std::size_t>(v);
}

inline double config_double(const std::string& value, const std::string& context) {
    std::size_t consumed = 0;
    double v = 0.0;
    try {
        v = std::stod(value, &consumed);
    } catch (const std::exception&) {
        throw ConfigError(context + ": expected a number, got '" + value + "'");
    }
    if (consumed != value.size()) {
        throw ConfigError(context + ": expected a number, got '" + value + "'");
    }
    return v;
}

inline bool config_bool(const std::string& value, const std::string& context) {
    if (value == "1" || value == "true") return true;
    if (value == "0" || value == "false") return false;
    throw ConfigError(context + ": expected a boolean (0/1/true/false), got '" + value + "'");
}

}  // namespace detail

// Assigns one key. `context` names the source (file position or flag) for
// error messages. Unknown keys are errors so typos cannot silently fall back
// to defaults.
inline void apply_config_value(RunConfig& cfg, const std::string& key, const std::string& value,
                               const std::string& context) {
    if (key == "dim") cfg.dim = detail::config_size(value, context);
    else if (key == "alpha") cfg.alpha = detail::config_double(value, context);
    else if (key == "heads") cfg.heads = detail::config_size(value, context);
    else if (key == "slots") cfg.slots = detail::config_size(value, context);
    else if (key == "mlp_dim") cfg.mlp_dim = detail::config_size(value, context);
    else if (key == "dropout") cfg.dropout = detail::config_double(value, context);
    else if (key == "lr_a") cfg.lr_a = detail::config_double(value, context);
    else if (key == "lr_b") cfg.lr_b = detail::config_double(value, context);
    else if (key == "batch") cfg.batch = detail::config_size(value, context);
    else if (key == "l2") cfg.l2 = detail::config_double(value, context);
    else if (key == "layers") cfg.layers = detail::config_size(value, context);
    else if (key == "loss_mode") cfg.loss_mode = value;
    else if (key == "pooling") cfg.pooling = value;
    else if (key == "opt_mode") cfg.opt_mode = value;
    else if (key == "variant") cfg.variant = value;
    else if (key == "epochs") cfg.epochs = detail::config_size(value, context);
    else if (key == "seed") cfg.seed = detail::config_size(value, context);
    else if (key == "data") cfg.data = value;
    else if (key == "cache") cfg.cache = value;
    else if (key == "checkpoint") cfg.checkpoint = value;
    else if (key == "report") cfg.report = value;
    else if (key == "epoch_log") cfg.epoch_log = value;
    else if (key == "bench_out") cfg.bench_out = value;
    else if (key == "ratio") cfg.ratio = detail::config_double(value, context);
    else if (key == "k") cfg.k = detail::config_size(value, context);
    else if (key == "mode") cfg.mode = value;
    else if (key == "repeats") cfg.repeats = detail::config_size(value, context);
    else if (key == "users") cfg.users = detail::config_size(value, context);
    else if (key == "items_a") cfg.items_a = detail::config_size(value, context);
    else if (key == "items_b") cfg.items_b = detail::config_size(value, context);
    else if (key == "max_len") cfg.max_len = detail::config_size(value, context);
    else if (key == "verbose") cfg.verbose = detail::config_bool(value, context);
    else throw ConfigError(context + ": unknown config key '" + key + "'");
}

// Flat key=value file, one pair per line; blank lines and lines starting
// with '#' are skipped.
inline void load_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        const auto last = line.find_last_not_of(" \t\r");
        const std::string trimmed = line.substr(first, last - first + 1);
        if (trimmed[0] == '#') continue;
        const std::string context = path + ":" + std::to_string(lineno);
        const auto eq = trimmed.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(context + ": expected key=value, got '" + trimmed + "'");
        }
        const auto strip = [](std::string s) {
            const auto a = s.find_first_not_of(" \t");
            if (a == std::string::npos) return std::string();
            const auto b = s.find_last_not_of(" \t");
            return s.substr(a, b - a + 1);
        };
        const std::string key = strip(trimmed.substr(0, eq));
        if (key.empty()) {
            throw ConfigError(context + ": expected key=value, got '" + trimmed + "'");
        }
        apply_config_value(cfg, key, strip(trimmed.substr(eq + 1)), context);
    }
}

}  // namespace leagcn
