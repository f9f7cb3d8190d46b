#pragma once

#include <cmath>
#include <vector>

#include "everadapt/graph.hpp"
#include "everadapt/ops.hpp"
#include "everadapt/tensor.hpp"

// Batch normalization in three modes:
//   TrainBN - normalize by current batch statistics, update the running
//             EMA estimates (source pretraining).
//   EvalBN  - normalize by the running estimates, no update.
//   CBN     - continual batch normalization: every batch is standardized
//             against the frozen source-domain EMA statistics. The running
//             estimates are never mutated in this mode; gamma and beta keep
//             receiving gradients.

namespace everadapt {

enum class NormMode { TrainBN, EvalBN, CBN };

struct BatchNormState {
    TensorPtr gamma;              // [C], learnable scale
    TensorPtr beta;               // [C], learnable shift
    std::vector<double> mu_ema;   // [C], running mean
    std::vector<double> var_ema;  // [C], running variance (biased estimator)
    double epsilon = 1e-5;
    double ema_momentum = 0.1;
    NormMode mode = NormMode::TrainBN;
    bool stats_initialized = false;
    // When set, TrainBN forwards normalize by batch statistics but leave
    // the running estimates untouched (the cbn_source_stream=batch option).
    bool freeze_ema = false;

    static BatchNormState create(std::size_t channels, double epsilon = 1e-5,
                                 double ema_momentum = 0.1) {
        BatchNormState st;
        st.gamma = make_param({channels}, std::vector<double>(channels, 1.0));
        st.beta = make_param({channels}, std::vector<double>(channels, 0.0));
        st.mu_ema.assign(channels, 0.0);
        st.var_ema.assign(channels, 1.0);
        st.epsilon = epsilon;
        st.ema_momentum = ema_momentum;
        return st;
    }

    std::size_t channels() const { return gamma ? gamma->size() : 0; }
};

namespace detail {

struct BnLayout {
    std::size_t batch, channels, spatial;
};

inline BnLayout bn_layout(const TensorPtr& x, const BatchNormState& st) {
    if (x->rank() != 2 && x->rank() != 3)
        throw dimension_error("batch norm: expected input [B,C] or [B,C,L]");
    BnLayout ly{x->dim(0), x->dim(1), x->rank() == 3 ? x->dim(2) : 1};
    if (ly.channels != st.channels())
        throw dimension_error("batch norm: channel count does not match state");
    return ly;
}

// Per-channel mean/variance over batch and spatial axes (biased, divide by m).
inline void batch_stats(const TensorPtr& x, const BnLayout& ly,
                        std::vector<double>& mu, std::vector<double>& var) {
    const std::size_t m = ly.batch * ly.spatial;
    mu.assign(ly.channels, 0.0);
    var.assign(ly.channels, 0.0);
    for (std::size_t b = 0; b < ly.batch; ++b)
        for (std::size_t c = 0; c < ly.channels; ++c)
            for (std::size_t l = 0; l < ly.spatial; ++l)
                mu[c] += x->data[(b * ly.channels + c) * ly.spatial + l];
    for (std::size_t c = 0; c < ly.channels; ++c) mu[c] /= static_cast<double>(m);
    for (std::size_t b = 0; b < ly.batch; ++b)
        for (std::size_t c = 0; c < ly.channels; ++c)
            for (std::size_t l = 0; l < ly.spatial; ++l) {
                const double d = x->data[(b * ly.channels + c) * ly.spatial + l] - mu[c];
                var[c] += d * d;
            }
    for (std::size_t c = 0; c < ly.channels; ++c) var[c] /= static_cast<double>(m);
}

// Normalization against fixed per-channel constants; gradients w.r.t. the
// constants do not exist (they are not functions of the input).
inline TensorPtr normalize_fixed(Graph& g, const TensorPtr& x, BatchNormState& st,
                                 const std::vector<double>& mu,
                                 const std::vector<double>& var, const char* op_name) {
    const BnLayout ly = bn_layout(x, st);
    auto inv = std::make_shared<std::vector<double>>(ly.channels);
    for (std::size_t c = 0; c < ly.channels; ++c)
        (*inv)[c] = 1.0 / std::sqrt(var[c] + st.epsilon);

    const TensorPtr gamma = st.gamma, beta = st.beta;
    bool rg = x->requires_grad || gamma->requires_grad || beta->requires_grad;
    auto out = everadapt::detail::make_output(x->shape, rg);
    auto xhat = std::make_shared<std::vector<double>>(x->size());
    for (std::size_t b = 0; b < ly.batch; ++b)
        for (std::size_t c = 0; c < ly.channels; ++c)
            for (std::size_t l = 0; l < ly.spatial; ++l) {
                const std::size_t i = (b * ly.channels + c) * ly.spatial + l;
                (*xhat)[i] = (x->data[i] - mu[c]) * (*inv)[c];
                out->data[i] = gamma->data[c] * (*xhat)[i] + beta->data[c];
            }
    if (rg) {
        g.record(out, [x, gamma, beta, out, xhat, inv, ly] {
            if (x->requires_grad) x->ensure_grad();
            if (gamma->requires_grad) gamma->ensure_grad();
            if (beta->requires_grad) beta->ensure_grad();
            for (std::size_t b = 0; b < ly.batch; ++b)
                for (std::size_t c = 0; c < ly.channels; ++c)
                    for (std::size_t l = 0; l < ly.spatial; ++l) {
                        const std::size_t i = (b * ly.channels + c) * ly.spatial + l;
                        const double go = out->grad[i];
                        if (gamma->requires_grad) gamma->grad[c] += go * (*xhat)[i];
                        if (beta->requires_grad) beta->grad[c] += go;
                        if (x->requires_grad)
                            x->grad[i] += go * gamma->data[c] * (*inv)[c];
                    }
        }, op_name);
    }
    return out;
}

} // namespace detail

// mu_ema <- (1-alpha) mu_ema + alpha mu_batch, likewise for the variance.
inline void ema_update(BatchNormState& st, const std::vector<double>& mu_batch,
                       const std::vector<double>& var_batch) {
    if (mu_batch.size() != st.channels() || var_batch.size() != st.channels())
        throw dimension_error("ema_update: statistics length does not match state");
    const double a = st.ema_momentum;
    for (std::size_t c = 0; c < st.channels(); ++c) {
        st.mu_ema[c] = (1.0 - a) * st.mu_ema[c] + a * mu_batch[c];
        st.var_ema[c] = (1.0 - a) * st.var_ema[c] + a * var_batch[c];
    }
    st.stats_initialized = true;
}

// Conventional batch normalization (TrainBN and EvalBN modes).
inline TensorPtr bn_forward(Graph& g, const TensorPtr& x, BatchNormState& st) {
    if (st.mode == NormMode::CBN)
        throw state_error("bn_forward called on a state in CBN mode; use cbn_forward");
    const detail::BnLayout ly = detail::bn_layout(x, st);

    if (st.mode == NormMode::EvalBN)
        return detail::normalize_fixed(g, x, st, st.mu_ema, st.var_ema, "bn_eval");

    if (ly.batch < 2)
        throw value_error("bn_forward: training mode needs a batch of at least 2");

    std::vector<double> mu, var;
    detail::batch_stats(x, ly, mu, var);

    auto inv = std::make_shared<std::vector<double>>(ly.channels);
    for (std::size_t c = 0; c < ly.channels; ++c)
        (*inv)[c] = 1.0 / std::sqrt(var[c] + st.epsilon);

    const TensorPtr gamma = st.gamma, beta = st.beta;
    bool rg = x->requires_grad || gamma->requires_grad || beta->requires_grad;
    auto out = detail::make_output(x->shape, rg);
    auto xhat = std::make_shared<std::vector<double>>(x->size());
    for (std::size_t b = 0; b < ly.batch; ++b)
        for (std::size_t c = 0; c < ly.channels; ++c)
            for (std::size_t l = 0; l < ly.spatial; ++l) {
                const std::size_t i = (b * ly.channels + c) * ly.spatial + l;
                (*xhat)[i] = (x->data[i] - mu[c]) * (*inv)[c];
                out->data[i] = gamma->data[c] * (*xhat)[i] + beta->data[c];
            }

    if (rg) {
        g.record(out, [x, gamma, beta, out, xhat, inv, ly] {
            // Batch statistics are functions of the input, so the input
            // gradient carries the mean/variance terms.
            const double m = static_cast<double>(ly.batch * ly.spatial);
            if (x->requires_grad) x->ensure_grad();
            if (gamma->requires_grad) gamma->ensure_grad();
            if (beta->requires_grad) beta->ensure_grad();
            for (std::size_t c = 0; c < ly.channels; ++c) {
                double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                for (std::size_t b = 0; b < ly.batch; ++b)
                    for (std::size_t l = 0; l < ly.spatial; ++l) {
                        const std::size_t i = (b * ly.channels + c) * ly.spatial + l;
                        const double go = out->grad[i];
                        if (gamma->requires_grad) gamma->grad[c] += go * (*xhat)[i];
                        if (beta->requires_grad) beta->grad[c] += go;
                        const double dxhat = go * gamma->data[c];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * (*xhat)[i];
                    }
                if (!x->requires_grad) continue;
                for (std::size_t b = 0; b < ly.batch; ++b)
                    for (std::size_t l = 0; l < ly.spatial; ++l) {
                        const std::size_t i = (b * ly.channels + c) * ly.spatial + l;
                        const double dxhat = out->grad[i] * gamma->data[c];
                        x->grad[i] += (*inv)[c] / m *
                                      (m * dxhat - sum_dxhat - (*xhat)[i] * sum_dxhat_xhat);
                    }
            }
        }, "bn_train");
    }

    if (!st.freeze_ema) ema_update(st, mu, var);
    return out;
}

// Continual batch normalization: standardize against the frozen source EMA
// statistics. The state is deliberately const; only gamma/beta (shared
// TensorPtr parameters) continue to train.
inline TensorPtr cbn_forward(Graph& g, const TensorPtr& x, const BatchNormState& st) {
    if (st.mode != NormMode::CBN)
        throw state_error("cbn_forward requires the state to be in CBN mode");
    if (!st.stats_initialized)
        throw state_error("cbn_forward: source statistics not populated; pretrain first");
    // normalize_fixed never touches the running stats; the const_cast only
    // satisfies the shared signature.
    return detail::normalize_fixed(g, x, const_cast<BatchNormState&>(st),
                                   st.mu_ema, st.var_ema, "cbn");
}

// Mode dispatch used by the model layers.
inline TensorPtr norm_forward(Graph& g, const TensorPtr& x, BatchNormState& st) {
    return st.mode == NormMode::CBN ? cbn_forward(g, x, st) : bn_forward(g, x, st);
}

// Pre-affine normalized values against the running statistics; pure helper
// for probing representation stability.
inline Tensor reference_normalize(const Tensor& x, const BatchNormState& st) {
    Tensor out(x.shape);
    const std::size_t ch = st.channels();
    const std::size_t batch = x.dim(0);
    const std::size_t spatial = x.rank() == 3 ? x.dim(2) : 1;
    if (x.dim(1) != ch) throw dimension_error("reference_normalize: channel mismatch");
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t c = 0; c < ch; ++c)
            for (std::size_t l = 0; l < spatial; ++l) {
                const std::size_t i = (b * ch + c) * spatial + l;
                out.data[i] = (x.data[i] - st.mu_ema[c]) /
                              std::sqrt(st.var_ema[c] + st.epsilon);
            }
    return out;
}

} // namespace everadapt
