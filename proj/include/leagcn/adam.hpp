#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "leagcn/error.hpp"
#include "leagcn/tensor.hpp"

namespace leagcn {

// Adam with bias correction. One AdamState instance covers one parameter
// group; moment tensors are allocated lazily on the first step so the state
// never needs to know the registry layout up front. The step counter is
// shared by the whole group and advances once per step() call.
class AdamState {
public:
    explicit AdamState(double lr, double beta1 = 0.9, double beta2 = 0.999,
                       double epsilon = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(epsilon) {}

    double learning_rate() const { return lr_; }
    std::size_t steps_taken() const { return t_; }

    // Applies one update to every named parameter in `names`, reading
    // gradients from `grads` and updating `params` in place. Missing names
    // or shape drift are hard errors: silently skipping a tensor would turn
    // an optimizer wiring bug into a quiet training failure.
    void step(ParamStore& params, const std::map<std::string, Tensor>& grads,
              const std::vector<std::string>& names) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (const std::string& name : names) {
            Tensor& p = params.at(name);
            auto it = grads.find(name);
            if (it == grads.end()) {
                throw NumericError("adam: no gradient for parameter " + name);
            }
            const Tensor& g = it->second;
            if (!g.same_shape(p)) {
                throw NumericError("adam: gradient shape " + g.shape_string() +
                                   " does not match parameter " + name + " " + p.shape_string());
            }
            Tensor& m = moment(m_, name, p);
            Tensor& v = moment(v_, name, p);
            for (std::size_t i = 0; i < p.size(); ++i) {
                m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
                v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                p[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
            check_finite(p, "adam update of " + name);
        }
    }

private:
    static Tensor& moment(std::map<std::string, Tensor>& store, const std::string& name,
                          const Tensor& like) {
        auto it = store.find(name);
        if (it == store.end()) {
            it = store.emplace(name, Tensor(like.shape())).first;
        } else if (!it->second.same_shape(like)) {
            throw NumericError("adam: parameter " + name + " changed shape mid-run");
        }
        return it->second;
    }

    double lr_;
    double beta1_;
    double beta2_;
    double eps_;
    std::size_t t_ = 0;
    std::map<std::string, Tensor> m_;
    std::map<std::string, Tensor> v_;
};

}  // namespace leagcn
