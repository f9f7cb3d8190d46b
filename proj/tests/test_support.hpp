#pragma once

// Shared test utilities: the central finite-difference gradient oracle and
// random tensor helpers. The oracle only re-evaluates a caller-supplied
// forward closure, so it stays independent of the backward implementation
// it checks.

#include <cmath>
#include <functional>
#include <vector>

#include "everadapt/model.hpp"
#include "everadapt/rng.hpp"
#include "everadapt/tensor.hpp"

namespace testutil {

inline double rel_err(double a, double b) {
    return std::fabs(a - b) / std::max({1e-3, std::fabs(a), std::fabs(b)});
}

// Central differences d(eval)/d(x[i]) with step h. eval() must recompute
// the full forward pass from current tensor contents.
inline std::vector<double> finite_difference(const std::function<double()>& eval,
                                             everadapt::Tensor& x, double h = 1e-5) {
    std::vector<double> grad(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x.data[i];
        x.data[i] = saved + h;
        const double fp = eval();
        x.data[i] = saved - h;
        const double fm = eval();
        x.data[i] = saved;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

// Max relative error between an analytic gradient and the FD oracle.
inline double max_grad_err(const std::function<double()>& eval, everadapt::Tensor& x,
                           const std::vector<double>& analytic, double h = 1e-5) {
    const auto fd = finite_difference(eval, x, h);
    double worst = 0.0;
    for (std::size_t i = 0; i < fd.size(); ++i)
        worst = std::max(worst, rel_err(analytic[i], fd[i]));
    return worst;
}

inline void fill_uniform(everadapt::Tensor& t, everadapt::Rng& rng, double lo = -1.0,
                         double hi = 1.0) {
    for (double& v : t.data) v = rng.uniform(lo, hi);
}

// Uniform values kept away from zero, for kink-free ReLU probes.
inline void fill_away_from_zero(everadapt::Tensor& t, everadapt::Rng& rng,
                                double margin = 0.05) {
    for (double& v : t.data) {
        double u = rng.uniform(-1.0, 1.0);
        v = u >= 0.0 ? margin + u : -margin + u;
    }
}

// Hand-wired model whose logits equal `biases` for any input: conv weights
// and biases are zero, so the classifier bias is all that remains.
// Input shape is [B,1,4].
inline everadapt::Model make_bias_model(const std::vector<double>& biases) {
    using namespace everadapt;
    ModelSpec spec;
    spec.conv_blocks = {{2, 1, 0.0}};
    spec.pool_window = 2;
    spec.adaptive_out = 1;
    spec.feature_dim = 2;
    spec.num_classes = biases.size();
    Model m = build_model(spec, 0);
    for (auto& v : m.blocks[0].kernel->data) v = 0.0;
    for (auto& v : m.blocks[0].bias->data) v = 0.0;
    m.blocks[0].norm.mode = NormMode::EvalBN;
    m.blocks[0].norm.stats_initialized = true;
    for (auto& v : m.fc_weight->data) v = 0.0;
    m.fc_bias->data = biases;
    m.set_training(false);
    return m;
}

// Hand-wired binary classifier on [B,1,4] segments: class 0 for positive
// signals, class 1 for negative ones (two 1-tap conv channels +x / -x,
// ReLU, pooling, identity classifier).
inline everadapt::Model make_sign_model() {
    using namespace everadapt;
    ModelSpec spec;
    spec.conv_blocks = {{2, 1, 0.0}};
    spec.pool_window = 2;
    spec.adaptive_out = 1;
    spec.feature_dim = 2;
    spec.num_classes = 2;
    Model m = build_model(spec, 0);
    m.blocks[0].kernel->data = {1.0, -1.0};   // [2,1,1]
    m.blocks[0].bias->data = {0.0, 0.0};
    m.blocks[0].norm.mode = NormMode::EvalBN;
    m.blocks[0].norm.stats_initialized = true;
    m.fc_weight->data = {1.0, 0.0, 0.0, 1.0};
    m.fc_bias->data = {0.0, 0.0};
    m.set_training(false);
    return m;
}

} // namespace testutil
