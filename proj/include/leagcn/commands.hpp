#pragma once

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "leagcn/bench.hpp"
#include "leagcn/cds_graph.hpp"
#include "leagcn/config.hpp"
#include "leagcn/dataset.hpp"
#include "leagcn/error.hpp"
#include "leagcn/metrics.hpp"
#include "leagcn/model.hpp"
#include "leagcn/trainer.hpp"

namespace leagcn {

namespace detail {

// Positional capacity: the longest hybrid sequence anywhere in the corpus,
// so every prefix a command can encode fits the table.
inline std::size_t corpus_max_length(const DatasetSplit& split) {
    std::size_t max_len = 1;
    for (const auto& seq : split.train) max_len = std::max(max_len, seq.events.size());
    for (const auto& seq : split.test_full) max_len = std::max(max_len, seq.events.size());
    return max_len;
}

}  // namespace detail

// Raw log to cached dataset: parse, drop cold entities, index, split, and
// write the cache directory plus a headline stats file.
inline void cmd_prepare(const RunConfig& cfg) {
    if (cfg.data.empty()) {
        throw ConfigError("prepare needs an input log (data= in the config or --data)");
    }
    InteractionLog log = ingest(cfg.data);
    InteractionLog kept = filter_cold(log);
    Vocab vocab = build_vocab(kept);
    std::vector<HybridSequence> sequences = build_sequences(kept, vocab);
    DatasetSplit split = split_train_test(sequences, cfg.ratio, cfg.seed);
    std::filesystem::create_directories(cfg.cache);
    save_cache(cfg.cache, vocab, split);
    write_stats(cfg.cache + "/stats.tsv", dataset_stats(vocab, kept, split));
    if (cfg.verbose) {
        std::cerr << "prepared " << vocab.num_users() << " users, " << vocab.num_items_a()
                  << "+" << vocab.num_items_b() << " items, " << split.train.size()
                  << " train / " << split.test.size() << " test sequences\n";
    }
}

inline void cmd_train(const RunConfig& cfg) {
    auto [vocab, split] = load_cache(cfg.cache);
    CdsGraph graph = build_graph(split.train, vocab.num_users(), vocab.num_items_a(),
                                 vocab.num_items_b());
    ModelState state = init_model(cfg.model(), vocab.num_users(), vocab.num_items_a(),
                                  vocab.num_items_b(), detail::corpus_max_length(split));
    TrainOptions options;
    options.verbose = cfg.verbose;
    std::vector<EpochRecord> log = train_model(state, split.train, graph, options);
    write_epoch_log(log, cfg.epoch_log);
    save_model(state, cfg.checkpoint);
    if (cfg.verbose) {
        std::cerr << "trained " << cfg.epochs << " epochs, checkpoint at " << cfg.checkpoint
                  << "\n";
    }
}

inline void cmd_eval(const RunConfig& cfg) {
    auto [vocab, split] = load_cache(cfg.cache);
    ModelState state = load_model(cfg.checkpoint);
    CdsGraph graph = build_graph(split.train, vocab.num_users(), vocab.num_items_a(),
                                 vocab.num_items_b());
    EvalResult result = evaluate(state, graph, split.test, cfg.k);
    write_metric_report(result, cfg.report);
    if (cfg.verbose) {
        std::cerr << "evaluated " << result.cases << " cases, report at " << cfg.report << "\n";
    }
}

inline void cmd_bench(const RunConfig& cfg) {
    if (cfg.mode == "params") {
        // Architecture-level accounting, no dataset involved: entity counts
        // come from the config so the report is reproducible anywhere.
        ModelState state =
            init_model(cfg.model(), cfg.users, cfg.items_a, cfg.items_b, cfg.max_len);
        write_param_report(count_parameters(state), cfg.bench_out);
    } else if (cfg.mode == "scaling") {
        ScalingReport report = time_scaling({64, 128, 256, 512, 1024, 2048, 4096}, cfg.repeats,
                                            cfg.dim, cfg.slots, cfg.heads, cfg.seed);
        write_scaling_report(report, cfg.bench_out);
    } else if (cfg.mode == "layers" || cfg.mode == "sweep-alpha" || cfg.mode == "sweep-beta") {
        auto [vocab, split] = load_cache(cfg.cache);
        CdsGraph graph = build_graph(split.train, vocab.num_users(), vocab.num_items_a(),
                                     vocab.num_items_b());
        const std::size_t max_len = detail::corpus_max_length(split);
        SweepTable table;
        if (cfg.mode == "layers") {
            table = layer_sweep(split.train, graph, split.test, cfg.model(), {1, 2, 3}, max_len,
                                cfg.k);
        } else if (cfg.mode == "sweep-alpha") {
            table = sweep_alpha(split.train, graph, split.test, cfg.model(), max_len, cfg.k);
        } else {
            table = sweep_beta(split.train, graph, split.test, cfg.model(), max_len, cfg.k);
        }
        write_sweep_table(table, cfg.bench_out);
    } else {
        throw ConfigError("unknown bench mode '" + cfg.mode +
                          "' (expected params, scaling, layers, sweep-alpha or sweep-beta)");
    }
    if (cfg.verbose) std::cerr << "bench " << cfg.mode << " written to " << cfg.bench_out << "\n";
}

}  // namespace leagcn
