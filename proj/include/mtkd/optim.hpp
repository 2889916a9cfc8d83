#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "mtkd/error.hpp"
#include "mtkd/tensor.hpp"

namespace mtkd {

enum class OptAlgo { sgd, adam };

struct OptimizerConfig {
    OptAlgo algorithm = OptAlgo::adam;
    double learning_rate = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::optional<double> clip_norm; // global-norm clip applied before the update

    void validate() const {
        // 0 is allowed so a degenerate no-op run stays expressible.
        if (!(learning_rate >= 0)) fail("tensor", "optimizer: learning_rate must be >= 0");
        if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
            fail("tensor", "optimizer: betas must lie in [0,1)");
        if (clip_norm && !(*clip_norm > 0)) fail("tensor", "optimizer: clip_norm must be > 0");
    }
};

// Scales gradients in place so the global norm is at most clip_norm.
// Never increases the norm and preserves direction.
template <typename S>
double clip_gradients(std::span<Tensor<S>> params, double clip_norm) {
    double sq = 0;
    for (auto& p : params)
        for (S g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
    double norm = std::sqrt(sq);
    if (norm > clip_norm && norm > 0) {
        S factor = static_cast<S>(clip_norm / norm);
        for (auto& p : params)
            for (S& g : p.grad()) g *= factor;
    }
    return norm;
}

// Holds per-parameter adam moments keyed by node identity, so a parameter
// that is updated only on its own task's batches keeps a consistent state.
template <typename S>
class Optimizer {
public:
    explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) { cfg_.validate(); }

    const OptimizerConfig& config() const { return cfg_; }
    long step_index() const { return step_; }

    // One update over `params`; every tensor must carry a gradient.
    // Gradients are zeroed afterwards.
    void step(std::span<Tensor<S>> params) {
        ++step_;
        for (auto& p : params)
            if (!p.has_grad())
                fail("tensor", "optimizer_step: parameter '" + p.name() + "' has no gradient");
        if (cfg_.clip_norm) clip_gradients(params, *cfg_.clip_norm);

        for (auto& p : params) {
            auto& d = p.data();
            auto& g = p.grad();
            if (cfg_.algorithm == OptAlgo::sgd) {
                S lr = static_cast<S>(cfg_.learning_rate);
                for (size_t i = 0; i < d.size(); ++i) d[i] -= lr * g[i];
            } else {
                AdamState& st = states_[p.node()];
                if (st.m.empty()) {
                    st.m.assign(d.size(), 0.0);
                    st.v.assign(d.size(), 0.0);
                }
                ++st.t;
                double b1 = cfg_.beta1, b2 = cfg_.beta2;
                double bc1 = 1.0 - std::pow(b1, st.t);
                double bc2 = 1.0 - std::pow(b2, st.t);
                for (size_t i = 0; i < d.size(); ++i) {
                    double gi = static_cast<double>(g[i]);
                    st.m[i] = b1 * st.m[i] + (1 - b1) * gi;
                    st.v[i] = b2 * st.v[i] + (1 - b2) * gi * gi;
                    double mhat = st.m[i] / bc1;
                    double vhat = st.v[i] / bc2;
                    d[i] -= static_cast<S>(cfg_.learning_rate * mhat /
                                           (std::sqrt(vhat) + cfg_.epsilon));
                }
            }
            p.zero_grad();
        }
    }

private:
    struct AdamState {
        std::vector<double> m, v; // moments kept in double for both precisions
        long t = 0;
    };

    OptimizerConfig cfg_;
    long step_ = 0;
    std::unordered_map<TensorNode<S>*, AdamState> states_;
};

} // namespace mtkd
