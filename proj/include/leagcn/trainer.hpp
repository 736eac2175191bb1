#pragma once

#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "leagcn/adam.hpp"
#include "leagcn/cds_graph.hpp"
#include "leagcn/dataset.hpp"
#include "leagcn/error.hpp"
#include "leagcn/model.hpp"
#include "leagcn/rng.hpp"

namespace leagcn {

struct EpochRecord {
    std::size_t epoch = 0;
    double loss_a = 0.0;
    double loss_b = 0.0;
};

struct TrainOptions {
    bool verbose = false;
    std::ostream* progress = nullptr;  // defaults to stderr when verbose
};

namespace detail {

inline void add_into(Tensor& dst, const Tensor& src) {
    if (!dst.same_shape(src)) {
        throw NumericError("gradient shape drift: " + dst.shape_string() + " vs " +
                           src.shape_string());
    }
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace detail

// Runs the full training loop on a prepared split. Each batch is encoded in
// a fresh graph against the current parameters; the two domain losses get
// separate backward passes, shared parameters and the A head step on the
// summed gradient with lr_a while the B head steps with lr_b (opt_mode
// "single" collapses everything onto one optimizer instead).
inline std::vector<EpochRecord> train_model(ModelState& state,
                                            const std::vector<HybridSequence>& sequences,
                                            const CdsGraph& graph,
                                            const TrainOptions& options = {}) {
    const ModelConfig& c = state.config;
    std::ostream& progress = options.progress ? *options.progress : std::cerr;

    std::vector<BatchTarget> targets;
    for (std::size_t si = 0; si < sequences.size(); ++si) {
        for (const TrainingTarget& t : make_training_targets(sequences[si], c.loss_mode)) {
            targets.push_back({si, t});
        }
    }
    if (targets.empty()) throw DataError("training split yields no usable targets");

    std::vector<std::string> names_a, names_b, names_all;
    for (const std::string& name : state.params.names()) {
        names_all.push_back(name);
        if (name.rfind("head_b.", 0) == 0) {
            names_b.push_back(name);
        } else {
            names_a.push_back(name);
        }
    }
    AdamState opt_a(c.lr_a);
    AdamState opt_b(c.lr_b);
    Rng dropout_rng = Rng::derive(c.seed, "dropout");

    std::vector<EpochRecord> log;
    for (std::size_t epoch = 0; epoch < c.epochs; ++epoch) {
        std::vector<std::size_t> order(targets.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffle_rng = Rng::derive(c.seed, "shuffle-epoch-" + std::to_string(epoch));
        shuffle_rng.shuffle(order);

        double sum_a = 0.0, sum_b = 0.0;
        std::size_t seen_a = 0, seen_b = 0;
        for (std::size_t start = 0; start < order.size(); start += c.batch) {
            const std::size_t batch_index = start / c.batch;
            std::vector<BatchTarget> batch;
            for (std::size_t i = start; i < std::min(order.size(), start + c.batch); ++i) {
                batch.push_back(targets[order[i]]);
            }
            try {
                ForwardGraph fw = begin_forward(state, graph);
                BatchLoss bl = build_batch_loss(fw, state, sequences, batch, true, dropout_rng);
                const double la = fw.g.value(bl.loss_a)[0];
                const double lb = fw.g.value(bl.loss_b)[0];
                if (!std::isfinite(la) || !std::isfinite(lb)) {
                    throw NumericError("loss is not finite");
                }
                if (bl.count_a == 0) {
                    progress << "warning: batch " << batch_index << " of epoch " << epoch
                             << " has no domain-A targets\n";
                }
                if (bl.count_b == 0) {
                    progress << "warning: batch " << batch_index << " of epoch " << epoch
                             << " has no domain-B targets\n";
                }

                std::map<std::string, Tensor> grads = fw.g.backward(bl.loss_a);
                std::map<std::string, Tensor> grads_b = fw.g.backward(bl.loss_b);
                for (auto& [name, g] : grads) detail::add_into(g, grads_b.at(name));

                if (c.opt_mode == "single") {
                    opt_a.step(state.params, grads, names_all);
                } else {
                    opt_a.step(state.params, grads, names_a);
                    opt_b.step(state.params, grads, names_b);
                }

                sum_a += la * static_cast<double>(bl.count_a);
                sum_b += lb * static_cast<double>(bl.count_b);
                seen_a += bl.count_a;
                seen_b += bl.count_b;
            } catch (const NumericError& e) {
                throw NumericError("epoch " + std::to_string(epoch) + " batch " +
                                   std::to_string(batch_index) + ": " + e.what());
            }
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.loss_a = seen_a ? sum_a / static_cast<double>(seen_a) : 0.0;
        rec.loss_b = seen_b ? sum_b / static_cast<double>(seen_b) : 0.0;
        log.push_back(rec);
        if (options.verbose) {
            progress << "epoch " << epoch << " loss_A " << format_double(rec.loss_a)
                     << " loss_B " << format_double(rec.loss_b) << "\n";
        }
    }
    return log;
}

inline void write_epoch_log(const std::vector<EpochRecord>& log, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    for (const EpochRecord& rec : log) {
        out << rec.epoch << "\t" << format_double(rec.loss_a) << "\t"
            << format_double(rec.loss_b) << "\n";
    }
    if (!out.flush()) throw DataError("failed writing " + path);
}

}  // namespace leagcn
