#pragma once

// Adam optimizer with bias-corrected first and second moments.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "aligncat/tensor.hpp"

namespace aligncat {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::size_t step = 0;
    std::vector<Tensor> m;
    std::vector<Tensor> v;

    bool fresh() const { return step == 0 && m.empty() && v.empty(); }
};

// One update over a parameter list. Moment buffers are allocated on first use
// and stay parallel to the parameter list afterwards.
inline void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
                      AdamState& state, const AdamConfig& cfg) {
    if (params.size() != grads.size())
        throw std::invalid_argument("adam_step: " + std::to_string(params.size()) + " params vs " +
                                    std::to_string(grads.size()) + " grads");
    if (state.m.empty()) {
        for (const Tensor* p : params) {
            state.m.push_back(Tensor::zeros_like(*p));
            state.v.push_back(Tensor::zeros_like(*p));
        }
    }
    if (state.m.size() != params.size())
        throw std::invalid_argument("adam_step: state tracks " + std::to_string(state.m.size()) +
                                    " params, got " + std::to_string(params.size()));
    state.step += 1;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& w = *params[p];
        const Tensor& g = grads[p];
        if (!w.same_shape(g))
            throw shape_error("adam_step: param " + shape_str(w.shape()) + " vs grad " +
                              shape_str(g.shape()));
        Tensor& m = state.m[p];
        Tensor& v = state.v[p];
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            double mhat = m[i] / bc1;
            double vhat = v[i] / bc2;
            w[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

}  // namespace aligncat
