#include <cstdint>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "leagcn/commands.hpp"
#include "leagcn/config.hpp"
#include "leagcn/error.hpp"

int main(int argc, char** argv) {
    CLI::App app{"dual-domain sequential recommender over a shared interaction graph"};
    app.require_subcommand(1);

    std::string config_path;
    std::uint64_t seed = 0;
    bool verbose = false;
    app.add_option("--config", config_path, "key=value configuration file");
    CLI::Option* seed_opt = app.add_option("--seed", seed, "master random seed");
    app.add_flag("--verbose", verbose, "progress output on stderr");

    CLI::App* prepare = app.add_subcommand("prepare", "turn a raw interaction log into a cache");
    prepare->fallthrough();
    std::string data, prepare_out;
    double ratio = 0.0;
    CLI::Option* data_opt = prepare->add_option("--data", data, "raw interaction TSV");
    CLI::Option* prepare_out_opt = prepare->add_option("--out", prepare_out, "cache directory");
    CLI::Option* ratio_opt = prepare->add_option("--ratio", ratio, "train share of sequences");

    CLI::App* train = app.add_subcommand("train", "train a model from a cached dataset");
    train->fallthrough();
    std::string train_cache, train_ckpt, train_log, variant;
    std::size_t layers = 0, epochs = 0;
    CLI::Option* train_cache_opt = train->add_option("--cache", train_cache, "cache directory");
    CLI::Option* train_out_opt = train->add_option("--out", train_ckpt, "checkpoint path");
    CLI::Option* train_log_opt = train->add_option("--log", train_log, "epoch log path");
    CLI::Option* variant_opt =
        train->add_option("--variant", variant, "full, pos-off, ea-off or all-off");
    CLI::Option* layers_opt = train->add_option("--layers", layers, "propagation depth");
    CLI::Option* epochs_opt = train->add_option("--epochs", epochs, "training epochs");

    CLI::App* eval = app.add_subcommand("eval", "rank the held-out targets with a checkpoint");
    eval->fallthrough();
    std::string eval_cache, eval_ckpt, eval_report;
    std::size_t cutoff = 0;
    CLI::Option* eval_cache_opt = eval->add_option("--cache", eval_cache, "cache directory");
    CLI::Option* eval_ckpt_opt = eval->add_option("--checkpoint", eval_ckpt, "checkpoint path");
    CLI::Option* cutoff_opt = eval->add_option("--k", cutoff, "metric cutoff");
    CLI::Option* eval_out_opt = eval->add_option("--out", eval_report, "metric report path");

    CLI::App* bench = app.add_subcommand("bench", "parameter, timing and sweep reports");
    bench->fallthrough();
    std::string mode, bench_cache, bench_out;
    std::size_t repeats = 0;
    CLI::Option* mode_opt = bench->add_option(
        "--mode", mode, "params, scaling, layers, sweep-alpha or sweep-beta");
    CLI::Option* bench_cache_opt = bench->add_option("--cache", bench_cache, "cache directory");
    CLI::Option* bench_out_opt = bench->add_option("--out", bench_out, "report path");
    CLI::Option* repeats_opt = bench->add_option("--repeats", repeats, "timing samples per point");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }

    try {
        leagcn::RunConfig cfg;
        if (!config_path.empty()) leagcn::load_config_file(cfg, config_path);
        if (seed_opt->count()) cfg.seed = seed;
        if (verbose) cfg.verbose = true;

        if (prepare->parsed()) {
            if (data_opt->count()) cfg.data = data;
            if (prepare_out_opt->count()) cfg.cache = prepare_out;
            if (ratio_opt->count()) cfg.ratio = ratio;
            leagcn::cmd_prepare(cfg);
        } else if (train->parsed()) {
            if (train_cache_opt->count()) cfg.cache = train_cache;
            if (train_out_opt->count()) cfg.checkpoint = train_ckpt;
            if (train_log_opt->count()) cfg.epoch_log = train_log;
            if (variant_opt->count()) cfg.variant = variant;
            if (layers_opt->count()) cfg.layers = layers;
            if (epochs_opt->count()) cfg.epochs = epochs;
            leagcn::cmd_train(cfg);
        } else if (eval->parsed()) {
            if (eval_cache_opt->count()) cfg.cache = eval_cache;
            if (eval_ckpt_opt->count()) cfg.checkpoint = eval_ckpt;
            if (cutoff_opt->count()) cfg.k = cutoff;
            if (eval_out_opt->count()) cfg.report = eval_report;
            leagcn::cmd_eval(cfg);
        } else if (bench->parsed()) {
            if (mode_opt->count()) cfg.mode = mode;
            if (bench_cache_opt->count()) cfg.cache = bench_cache;
            if (bench_out_opt->count()) cfg.bench_out = bench_out;
            if (repeats_opt->count()) cfg.repeats = repeats;
            leagcn::cmd_bench(cfg);
        }
        return 0;
    } catch (const leagcn::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const leagcn::DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const leagcn::NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
