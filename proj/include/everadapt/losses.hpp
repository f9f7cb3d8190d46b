#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "everadapt/model.hpp"
#include "everadapt/ops.hpp"

namespace everadapt {

// Sum of RBF kernels k(u,v) = sum_k exp(-|u-v|^2 / (2 sigma_k^2)). With
// median_heuristic set, the bandwidth list is treated as a ladder of
// multipliers applied to the median pairwise distance of the joint batch;
// otherwise the values are absolute. The resolved bandwidths are treated
// as constants by the backward pass.
struct KernelConfig {
    std::vector<double> bandwidths{0.25, 0.5, 1.0, 2.0, 4.0};
    bool median_heuristic = true;

    void validate() const {
        if (bandwidths.empty()) throw config_error("kernel: bandwidth list is empty");
        for (double b : bandwidths)
            if (!(b > 0.0)) throw config_error("kernel: bandwidths must be positive");
    }
};

// Schedule and weighting of the adaptation objective. alpha(t) ramps the
// balance from entropy minimization toward class-conditional alignment;
// beta_replay scales the memory self-training term.
struct LossWeights {
    double alpha_start = 1.0;
    double alpha_end = 0.1;
    std::size_t total_steps = 1;
    double beta_replay = 1.0;
};

// Mean over the batch of -log softmax(logits)[label].
inline TensorPtr cross_entropy(Graph& g, const TensorPtr& logits,
                               const std::vector<int>& labels) {
    if (logits->rank() != 2) throw dimension_error("cross_entropy: expected logits [B,C]");
    const std::size_t batch = logits->dim(0), classes = logits->dim(1);
    if (labels.size() != batch)
        throw dimension_error("cross_entropy: label count does not match batch");
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= classes)
            throw value_error("cross_entropy: label out of range");

    bool rg = logits->requires_grad;
    auto out = detail::make_output({std::size_t{1}}, rg);
    // Save the softmax for the backward pass.
    auto probs = std::make_shared<std::vector<double>>(batch * classes);
    double total = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
        double mx = logits->at2(b, 0);
        for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, logits->at2(b, c));
        double z = 0.0;
        for (std::size_t c = 0; c < classes; ++c) z += std::exp(logits->at2(b, c) - mx);
        const double log_z = std::log(z) + mx;
        total += log_z - logits->at2(b, static_cast<std::size_t>(labels[b]));
        for (std::size_t c = 0; c < classes; ++c)
            (*probs)[b * classes + c] = std::exp(logits->at2(b, c) - log_z);
    }
    out->data[0] = total / static_cast<double>(batch);

    if (rg) {
        auto labels_copy = std::make_shared<std::vector<int>>(labels);
        g.record(out, [logits, out, probs, labels_copy, batch, classes] {
            logits->ensure_grad();
            const double go = out->grad[0] / static_cast<double>(batch);
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t c = 0; c < classes; ++c) {
                    double v = (*probs)[b * classes + c];
                    if (c == static_cast<std::size_t>((*labels_copy)[b])) v -= 1.0;
                    logits->grad[b * classes + c] += go * v;
                }
        }, "cross_entropy");
    }
    return out;
}

namespace detail {

// Median pairwise Euclidean distance across the rows of both sets.
// Falls back to 1 when the points are (near) coincident.
inline double median_pairwise_distance(const TensorPtr& a, const TensorPtr& b) {
    const std::size_t d = a->dim(1);
    std::vector<const double*> rows;
    for (std::size_t i = 0; i < a->dim(0); ++i) rows.push_back(&a->data[i * d]);
    for (std::size_t i = 0; i < b->dim(0); ++i) rows.push_back(&b->data[i * d]);
    std::vector<double> dists;
    dists.reserve(rows.size() * (rows.size() - 1) / 2);
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = i + 1; j < rows.size(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = rows[i][k] - rows[j][k];
                s += diff * diff;
            }
            dists.push_back(std::sqrt(s));
        }
    if (dists.empty()) return 1.0;
    std::nth_element(dists.begin(), dists.begin() + dists.size() / 2, dists.end());
    const double med = dists[dists.size() / 2];
    return med > 1e-12 ? med : 1.0;
}

inline std::vector<double> resolve_bandwidths(const TensorPtr& a, const TensorPtr& b,
                                              const KernelConfig& cfg) {
    cfg.validate();
    if (!cfg.median_heuristic) return cfg.bandwidths;
    const double med = median_pairwise_distance(a, b);
    std::vector<double> out(cfg.bandwidths);
    for (double& v : out) v *= med;
    return out;
}

// Biased (V-statistic) squared-MMD estimate with fixed absolute bandwidths:
//   mean_aa k + mean_bb k - 2 mean_ab k
// including diagonal terms, which makes mmd(A,A) exactly zero.
inline TensorPtr mmd_fixed(Graph& g, const TensorPtr& a, const TensorPtr& b,
                           std::vector<double> sigmas) {
    if (a->rank() != 2 || b->rank() != 2 || a->dim(1) != b->dim(1))
        throw dimension_error("mmd: expected two matrices [N,d] with matching d");
    if (a->dim(0) == 0 || b->dim(0) == 0)
        throw value_error("mmd: both sets must contain at least one sample");
    const std::size_t na = a->dim(0), nb = b->dim(0), d = a->dim(1);

    auto kernel_sum = [&](const TensorPtr& x, const TensorPtr& y) {
        double s = 0.0;
        for (std::size_t i = 0; i < x->dim(0); ++i)
            for (std::size_t j = 0; j < y->dim(0); ++j) {
                double r2 = 0.0;
                for (std::size_t k = 0; k < d; ++k) {
                    const double diff = x->data[i * d + k] - y->data[j * d + k];
                    r2 += diff * diff;
                }
                for (double sg : sigmas) s += std::exp(-r2 / (2.0 * sg * sg));
            }
        return s;
    };

    const double t_aa = kernel_sum(a, a) / static_cast<double>(na * na);
    const double t_bb = kernel_sum(b, b) / static_cast<double>(nb * nb);
    const double t_ab = kernel_sum(a, b) / static_cast<double>(na * nb);

    bool rg = a->requires_grad || b->requires_grad;
    auto out = detail::make_output({std::size_t{1}}, rg);
    out->data[0] = t_aa + t_bb - 2.0 * t_ab;

    if (rg) {
        auto sig = std::make_shared<std::vector<double>>(std::move(sigmas));
        g.record(out, [a, b, out, sig, na, nb, d] {
            const double go = out->grad[0];
            if (a->requires_grad) a->ensure_grad();
            if (b->requires_grad) b->ensure_grad();
            // w(u,v) = sum_k exp(-r^2/(2 s_k^2)) / s_k^2 weights the (u-v)
            // direction of each pair.
            auto pair_weight = [&](const double* u, const double* v) {
                double r2 = 0.0;
                for (std::size_t k = 0; k < d; ++k) {
                    const double diff = u[k] - v[k];
                    r2 += diff * diff;
                }
                double w = 0.0;
                for (double sg : *sig) w += std::exp(-r2 / (2.0 * sg * sg)) / (sg * sg);
                return w;
            };
            if (a->requires_grad) {
                for (std::size_t p = 0; p < na; ++p) {
                    const double* ap = &a->data[p * d];
                    for (std::size_t j = 0; j < na; ++j) {
                        if (j == p) continue;
                        const double w = pair_weight(ap, &a->data[j * d]) /
                                         static_cast<double>(na * na);
                        for (std::size_t k = 0; k < d; ++k)
                            a->grad[p * d + k] -=
                                go * 2.0 * w * (ap[k] - a->data[j * d + k]);
                    }
                    for (std::size_t j = 0; j < nb; ++j) {
                        const double w = pair_weight(ap, &b->data[j * d]) /
                                         static_cast<double>(na * nb);
                        for (std::size_t k = 0; k < d; ++k)
                            a->grad[p * d + k] +=
                                go * 2.0 * w * (ap[k] - b->data[j * d + k]);
                    }
                }
            }
            if (b->requires_grad) {
                for (std::size_t q = 0; q < nb; ++q) {
                    const double* bq = &b->data[q * d];
                    for (std::size_t j = 0; j < nb; ++j) {
                        if (j == q) continue;
                        const double w = pair_weight(bq, &b->data[j * d]) /
                                         static_cast<double>(nb * nb);
                        for (std::size_t k = 0; k < d; ++k)
                            b->grad[q * d + k] -=
                                go * 2.0 * w * (bq[k] - b->data[j * d + k]);
                    }
                    for (std::size_t i = 0; i < na; ++i) {
                        const double w = pair_weight(&a->data[i * d], bq) /
                                         static_cast<double>(na * nb);
                        for (std::size_t k = 0; k < d; ++k)
                            b->grad[q * d + k] -=
                                go * 2.0 * w * (a->data[i * d + k] - bq[k]);
                    }
                }
            }
        }, "mmd");
    }
    return out;
}

} // namespace detail

// Squared-MMD estimate between two sample sets.
inline TensorPtr mmd(Graph& g, const TensorPtr& set_a, const TensorPtr& set_b,
                     const KernelConfig& kernel) {
    return detail::mmd_fixed(g, set_a, set_b,
                             detail::resolve_bandwidths(set_a, set_b, kernel));
}

// Class-level alignment: sum of per-class MMD terms over classes present in
// both domains. Bandwidths are resolved once on the joint batch and shared
// by every class term. Classes with fewer than two samples on either side
// are skipped; their MMD estimate is pure noise.
inline TensorPtr class_conditional_mmd(Graph& g, const TensorPtr& feat_s,
                                       const std::vector<int>& labels_s,
                                       const TensorPtr& feat_t,
                                       const std::vector<int>& pseudo_t,
                                       std::size_t num_classes,
                                       const KernelConfig& kernel) {
    if (feat_s->rank() != 2 || feat_t->rank() != 2 || feat_s->dim(1) != feat_t->dim(1))
        throw dimension_error("class_conditional_mmd: feature matrices must share d");
    if (labels_s.size() != feat_s->dim(0) || pseudo_t.size() != feat_t->dim(0))
        throw dimension_error("class_conditional_mmd: label count mismatch");
    for (int y : labels_s)
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
            throw value_error("class_conditional_mmd: source label out of range");
    for (int y : pseudo_t)
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
            throw value_error("class_conditional_mmd: pseudo-label out of range");

    const std::vector<double> sigmas = detail::resolve_bandwidths(feat_s, feat_t, kernel);

    TensorPtr total;
    for (std::size_t c = 0; c < num_classes; ++c) {
        std::vector<std::size_t> is, it;
        for (std::size_t i = 0; i < labels_s.size(); ++i)
            if (static_cast<std::size_t>(labels_s[i]) == c) is.push_back(i);
        for (std::size_t i = 0; i < pseudo_t.size(); ++i)
            if (static_cast<std::size_t>(pseudo_t[i]) == c) it.push_back(i);
        if (is.size() < 2 || it.size() < 2) continue;
        TensorPtr term = detail::mmd_fixed(g, take_rows(g, feat_s, is),
                                           take_rows(g, feat_t, it), sigmas);
        total = total ? add(g, total, term) : term;
    }
    return total ? total : scalar_tensor(0.0);
}

// Mean prediction entropy: mean_b of -sum_c p log p with p = softmax(logits).
inline TensorPtr entropy_loss(Graph& g, const TensorPtr& logits) {
    if (logits->rank() != 2) throw dimension_error("entropy_loss: expected logits [B,C]");
    const std::size_t batch = logits->dim(0), classes = logits->dim(1);

    bool rg = logits->requires_grad;
    auto out = detail::make_output({std::size_t{1}}, rg);
    auto probs = std::make_shared<std::vector<double>>(batch * classes);
    auto row_entropy = std::make_shared<std::vector<double>>(batch);
    double total = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
        double mx = logits->at2(b, 0);
        for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, logits->at2(b, c));
        double z = 0.0;
        for (std::size_t c = 0; c < classes; ++c) z += std::exp(logits->at2(b, c) - mx);
        double h = 0.0;
        for (std::size_t c = 0; c < classes; ++c) {
            const double p = std::exp(logits->at2(b, c) - mx) / z;
            (*probs)[b * classes + c] = p;
            if (p > 0.0) h -= p * std::log(p);
        }
        (*row_entropy)[b] = h;
        total += h;
    }
    out->data[0] = total / static_cast<double>(batch);

    if (rg) {
        // dH/dz_j = -p_j (log p_j + H)
        g.record(out, [logits, out, probs, row_entropy, batch, classes] {
            logits->ensure_grad();
            const double go = out->grad[0] / static_cast<double>(batch);
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t c = 0; c < classes; ++c) {
                    const double p = (*probs)[b * classes + c];
                    if (p <= 0.0) continue;
                    logits->grad[b * classes + c] -=
                        go * p * (std::log(p) + (*row_entropy)[b]);
                }
        }, "entropy_loss");
    }
    return out;
}

// Self-training on buffered segments with their frozen pseudo-labels.
// An empty memory batch (first target domain) contributes zero and raises
// the flag instead of erroring.
inline TensorPtr replay_loss(Graph& g, Model& model, const TensorPtr& memory_segments,
                             const std::vector<int>& memory_labels,
                             bool* empty_buffer_flag = nullptr) {
    if (!memory_segments || memory_labels.empty()) {
        if (empty_buffer_flag) *empty_buffer_flag = true;
        return scalar_tensor(0.0);
    }
    if (empty_buffer_flag) *empty_buffer_flag = false;
    TensorPtr logits = model.forward(g, memory_segments);
    return cross_entropy(g, logits, memory_labels);
}

// Linear ramp alpha(t) = start + (end - start) * min(t / total, 1).
inline double alpha_schedule(std::size_t step, const LossWeights& w) {
    if (w.total_steps == 0) throw value_error("alpha_schedule: total_steps must be >= 1");
    const double frac = std::min(static_cast<double>(step) /
                                 static_cast<double>(w.total_steps), 1.0);
    return w.alpha_start + (w.alpha_end - w.alpha_start) * frac;
}

// alpha(t) L_e + (1 - alpha(t)) L_loc + beta L_m + L_s, as one graph node
// chain so a single backward pass covers every component.
inline TensorPtr overall_loss(Graph& g, const TensorPtr& l_entropy,
                              const TensorPtr& l_local, const TensorPtr& l_replay,
                              const TensorPtr& l_source, std::size_t step,
                              const LossWeights& w) {
    const double a = alpha_schedule(step, w);
    TensorPtr total = add(g, scale(g, l_entropy, a), scale(g, l_local, 1.0 - a));
    total = add(g, total, scale(g, l_replay, w.beta_replay));
    return add(g, total, l_source);
}

} // namespace everadapt
