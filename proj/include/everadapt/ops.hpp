#pragma once

#include <algorithm>
#include <cmath>

#include "everadapt/graph.hpp"
#include "everadapt/rng.hpp"
#include "everadapt/tensor.hpp"

// Differentiable tensor operations. Each op computes its forward result
// eagerly and, when any input carries requires_grad, records a backprop
// closure on the tape. Gradient formulas are checked against central
// finite differences in the test suite.

namespace everadapt {

namespace detail {

inline bool any_requires_grad(std::initializer_list<const TensorPtr*> ins) {
    for (const TensorPtr* t : ins)
        if (*t && (*t)->requires_grad) return true;
    return false;
}

inline TensorPtr make_output(std::vector<std::size_t> shape, bool requires_grad) {
    auto out = make_tensor(std::move(shape));
    out->requires_grad = requires_grad;
    return out;
}

} // namespace detail

// out[b,o] = sum_i in[b,i] * w[o,i] + bias[o]
inline TensorPtr dense(Graph& g, const TensorPtr& input, const TensorPtr& weight,
                       const TensorPtr& bias) {
    if (input->rank() != 2 || weight->rank() != 2 || bias->rank() != 1)
        throw dimension_error("dense: expected input [B,Fin], weight [Fout,Fin], bias [Fout]");
    const std::size_t batch = input->dim(0), fin = input->dim(1);
    const std::size_t fout = weight->dim(0);
    if (weight->dim(1) != fin)
        throw dimension_error("dense: weight columns " + weight->shape_str() +
                              " do not match input features " + input->shape_str());
    if (bias->dim(0) != fout)
        throw dimension_error("dense: bias length does not match output features");

    bool rg = detail::any_requires_grad({&input, &weight, &bias});
    auto out = detail::make_output({batch, fout}, rg);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t o = 0; o < fout; ++o) {
            double acc = bias->data[o];
            for (std::size_t i = 0; i < fin; ++i)
                acc += input->at2(b, i) * weight->at2(o, i);
            out->at2(b, o) = acc;
        }
    }
    if (rg) {
        g.record(out, [input, weight, bias, out, batch, fin, fout] {
            if (input->requires_grad) input->ensure_grad();
            if (weight->requires_grad) weight->ensure_grad();
            if (bias->requires_grad) bias->ensure_grad();
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t o = 0; o < fout; ++o) {
                    const double go = out->grad[b * fout + o];
                    if (go == 0.0) continue;
                    if (bias->requires_grad) bias->grad[o] += go;
                    for (std::size_t i = 0; i < fin; ++i) {
                        if (input->requires_grad)
                            input->grad[b * fin + i] += go * weight->at2(o, i);
                        if (weight->requires_grad)
                            weight->grad[o * fin + i] += go * input->at2(b, i);
                    }
                }
            }
        }, "dense");
    }
    return out;
}

// 1-D cross-correlation. out[b,o,t] = sum_{c,k} in[b,c,t*stride+k-pad] * w[o,c,k] + bias[o]
inline TensorPtr conv1d(Graph& g, const TensorPtr& input, const TensorPtr& kernel,
                        const TensorPtr& bias, std::size_t stride, std::size_t padding) {
    if (input->rank() != 3 || kernel->rank() != 3 || bias->rank() != 1)
        throw dimension_error("conv1d: expected input [B,Cin,L], kernel [Cout,Cin,K], bias [Cout]");
    if (stride == 0) throw value_error("conv1d: stride must be positive");
    const std::size_t batch = input->dim(0), cin = input->dim(1), len = input->dim(2);
    const std::size_t cout = kernel->dim(0), ksize = kernel->dim(2);
    if (kernel->dim(1) != cin)
        throw dimension_error("conv1d: kernel input channels do not match input");
    if (bias->dim(0) != cout)
        throw dimension_error("conv1d: bias length does not match output channels");
    if (len + 2 * padding < ksize)
        throw dimension_error("conv1d: kernel longer than padded input");
    const std::size_t lout = (len + 2 * padding - ksize) / stride + 1;

    bool rg = detail::any_requires_grad({&input, &kernel, &bias});
    auto out = detail::make_output({batch, cout, lout}, rg);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t o = 0; o < cout; ++o) {
            for (std::size_t t = 0; t < lout; ++t) {
                double acc = bias->data[o];
                const std::ptrdiff_t start =
                    static_cast<std::ptrdiff_t>(t * stride) - static_cast<std::ptrdiff_t>(padding);
                for (std::size_t c = 0; c < cin; ++c) {
                    for (std::size_t k = 0; k < ksize; ++k) {
                        const std::ptrdiff_t pos = start + static_cast<std::ptrdiff_t>(k);
                        if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(len)) continue;
                        acc += input->at3(b, c, static_cast<std::size_t>(pos)) *
                               kernel->at3(o, c, k);
                    }
                }
                out->at3(b, o, t) = acc;
            }
        }
    }
    if (rg) {
        g.record(out, [input, kernel, bias, out, batch, cin, len, cout, ksize, lout,
                       stride, padding] {
            if (input->requires_grad) input->ensure_grad();
            if (kernel->requires_grad) kernel->ensure_grad();
            if (bias->requires_grad) bias->ensure_grad();
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t o = 0; o < cout; ++o) {
                    for (std::size_t t = 0; t < lout; ++t) {
                        const double go = out->grad[(b * cout + o) * lout + t];
                        if (go == 0.0) continue;
                        if (bias->requires_grad) bias->grad[o] += go;
                        const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(t * stride) -
                                                     static_cast<std::ptrdiff_t>(padding);
                        for (std::size_t c = 0; c < cin; ++c) {
                            for (std::size_t k = 0; k < ksize; ++k) {
                                const std::ptrdiff_t pos =
                                    start + static_cast<std::ptrdiff_t>(k);
                                if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(len)) continue;
                                const std::size_t p = static_cast<std::size_t>(pos);
                                if (input->requires_grad)
                                    input->grad[(b * cin + c) * len + p] +=
                                        go * kernel->at3(o, c, k);
                                if (kernel->requires_grad)
                                    kernel->grad[(o * cin + c) * ksize + k] +=
                                        go * input->at3(b, c, p);
                            }
                        }
                    }
                }
            }
        }, "conv1d");
    }
    return out;
}

// Elementwise max(0, x); subgradient at 0 is 0.
inline TensorPtr relu(Graph& g, const TensorPtr& x) {
    bool rg = x->requires_grad;
    auto out = detail::make_output(x->shape, rg);
    for (std::size_t i = 0; i < x->size(); ++i)
        out->data[i] = x->data[i] > 0.0 ? x->data[i] : 0.0;
    if (rg) {
        g.record(out, [x, out] {
            x->ensure_grad();
            for (std::size_t i = 0; i < x->size(); ++i)
                if (x->data[i] > 0.0) x->grad[i] += out->grad[i];
        }, "relu");
    }
    return out;
}

// Windowed maximum over the last axis; ties route the gradient to the
// first maximal index.
inline TensorPtr maxpool1d(Graph& g, const TensorPtr& x, std::size_t window,
                           std::size_t stride) {
    if (x->rank() != 3) throw dimension_error("maxpool1d: expected input [B,C,L]");
    if (window == 0 || stride == 0)
        throw value_error("maxpool1d: window and stride must be positive");
    const std::size_t batch = x->dim(0), ch = x->dim(1), len = x->dim(2);
    if (window > len) throw dimension_error("maxpool1d: window larger than input length");
    const std::size_t lout = (len - window) / stride + 1;

    bool rg = x->requires_grad;
    auto out = detail::make_output({batch, ch, lout}, rg);
    auto argmax = std::make_shared<std::vector<std::size_t>>(batch * ch * lout);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t c = 0; c < ch; ++c) {
            for (std::size_t t = 0; t < lout; ++t) {
                std::size_t best = t * stride;
                double best_v = x->at3(b, c, best);
                for (std::size_t k = 1; k < window; ++k) {
                    const std::size_t p = t * stride + k;
                    if (x->at3(b, c, p) > best_v) {
                        best_v = x->at3(b, c, p);
                        best = p;
                    }
                }
                out->at3(b, c, t) = best_v;
                (*argmax)[(b * ch + c) * lout + t] = best;
            }
        }
    }
    if (rg) {
        g.record(out, [x, out, argmax, batch, ch, lout, len] {
            x->ensure_grad();
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t c = 0; c < ch; ++c)
                    for (std::size_t t = 0; t < lout; ++t)
                        x->grad[(b * ch + c) * len + (*argmax)[(b * ch + c) * lout + t]] +=
                            out->grad[(b * ch + c) * lout + t];
        }, "maxpool1d");
    }
    return out;
}

// Averages contiguous bins [floor(i*L/out_len), floor((i+1)*L/out_len)).
inline TensorPtr adaptive_avg_pool1d(Graph& g, const TensorPtr& x, std::size_t out_len) {
    if (x->rank() != 3) throw dimension_error("adaptive_avg_pool1d: expected input [B,C,L]");
    if (out_len == 0) throw value_error("adaptive_avg_pool1d: out_len must be positive");
    const std::size_t batch = x->dim(0), ch = x->dim(1), len = x->dim(2);
    if (out_len > len)
        throw dimension_error("adaptive_avg_pool1d: out_len exceeds input length");

    bool rg = x->requires_grad;
    auto out = detail::make_output({batch, ch, out_len}, rg);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t c = 0; c < ch; ++c) {
            for (std::size_t t = 0; t < out_len; ++t) {
                const std::size_t lo = t * len / out_len;
                const std::size_t hi = (t + 1) * len / out_len;
                double acc = 0.0;
                for (std::size_t p = lo; p < hi; ++p) acc += x->at3(b, c, p);
                out->at3(b, c, t) = acc / static_cast<double>(hi - lo);
            }
        }
    }
    if (rg) {
        g.record(out, [x, out, batch, ch, len, out_len] {
            x->ensure_grad();
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t c = 0; c < ch; ++c) {
                    for (std::size_t t = 0; t < out_len; ++t) {
                        const std::size_t lo = t * len / out_len;
                        const std::size_t hi = (t + 1) * len / out_len;
                        const double go =
                            out->grad[(b * ch + c) * out_len + t] / static_cast<double>(hi - lo);
                        for (std::size_t p = lo; p < hi; ++p)
                            x->grad[(b * ch + c) * len + p] += go;
                    }
                }
            }
        }, "adaptive_avg_pool1d");
    }
    return out;
}

// Inverted dropout: zero with probability p, scale survivors by 1/(1-p),
// identity in eval mode. The mask is drawn from the supplied generator so
// that runs are reproducible.
inline TensorPtr dropout(Graph& g, const TensorPtr& x, double p, bool training, Rng& rng) {
    if (p < 0.0 || p >= 1.0) throw value_error("dropout: p must be in [0,1)");
    if (!training || p == 0.0) {
        bool rg = x->requires_grad;
        auto out = detail::make_output(x->shape, rg);
        out->data = x->data;
        if (rg) {
            g.record(out, [x, out] {
                x->ensure_grad();
                for (std::size_t i = 0; i < x->size(); ++i) x->grad[i] += out->grad[i];
            }, "dropout");
        }
        return out;
    }
    const double keep_scale = 1.0 / (1.0 - p);
    auto mask = std::make_shared<std::vector<double>>(x->size());
    for (std::size_t i = 0; i < x->size(); ++i)
        (*mask)[i] = rng.uniform() < p ? 0.0 : keep_scale;

    bool rg = x->requires_grad;
    auto out = detail::make_output(x->shape, rg);
    for (std::size_t i = 0; i < x->size(); ++i) out->data[i] = x->data[i] * (*mask)[i];
    if (rg) {
        g.record(out, [x, out, mask] {
            x->ensure_grad();
            for (std::size_t i = 0; i < x->size(); ++i)
                x->grad[i] += out->grad[i] * (*mask)[i];
        }, "dropout");
    }
    return out;
}

// Row-wise softmax with max subtraction.
inline TensorPtr softmax(Graph& g, const TensorPtr& logits) {
    if (logits->rank() != 2) throw dimension_error("softmax: expected logits [B,C]");
    const std::size_t batch = logits->dim(0), classes = logits->dim(1);

    bool rg = logits->requires_grad;
    auto out = detail::make_output(logits->shape, rg);
    for (std::size_t b = 0; b < batch; ++b) {
        double mx = logits->at2(b, 0);
        for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, logits->at2(b, c));
        double z = 0.0;
        for (std::size_t c = 0; c < classes; ++c) {
            const double e = std::exp(logits->at2(b, c) - mx);
            out->at2(b, c) = e;
            z += e;
        }
        for (std::size_t c = 0; c < classes; ++c) out->at2(b, c) /= z;
    }
    if (rg) {
        g.record(out, [logits, out, batch, classes] {
            logits->ensure_grad();
            for (std::size_t b = 0; b < batch; ++b) {
                double dot = 0.0;
                for (std::size_t c = 0; c < classes; ++c)
                    dot += out->grad[b * classes + c] * out->at2(b, c);
                for (std::size_t c = 0; c < classes; ++c)
                    logits->grad[b * classes + c] +=
                        out->at2(b, c) * (out->grad[b * classes + c] - dot);
            }
        }, "softmax");
    }
    return out;
}

inline TensorPtr add(Graph& g, const TensorPtr& a, const TensorPtr& b) {
    if (a->shape != b->shape)
        throw dimension_error("add: shape mismatch " + a->shape_str() + " vs " + b->shape_str());
    bool rg = detail::any_requires_grad({&a, &b});
    auto out = detail::make_output(a->shape, rg);
    for (std::size_t i = 0; i < a->size(); ++i) out->data[i] = a->data[i] + b->data[i];
    if (rg) {
        g.record(out, [a, b, out] {
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::size_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::size_t i = 0; i < b->size(); ++i) b->grad[i] += out->grad[i];
            }
        }, "add");
    }
    return out;
}

inline TensorPtr mul(Graph& g, const TensorPtr& a, const TensorPtr& b) {
    if (a->shape != b->shape)
        throw dimension_error("mul: shape mismatch " + a->shape_str() + " vs " + b->shape_str());
    bool rg = detail::any_requires_grad({&a, &b});
    auto out = detail::make_output(a->shape, rg);
    for (std::size_t i = 0; i < a->size(); ++i) out->data[i] = a->data[i] * b->data[i];
    if (rg) {
        g.record(out, [a, b, out] {
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::size_t i = 0; i < a->size(); ++i)
                    a->grad[i] += out->grad[i] * b->data[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::size_t i = 0; i < b->size(); ++i)
                    b->grad[i] += out->grad[i] * a->data[i];
            }
        }, "mul");
    }
    return out;
}

inline TensorPtr scale(Graph& g, const TensorPtr& a, double c) {
    bool rg = a->requires_grad;
    auto out = detail::make_output(a->shape, rg);
    for (std::size_t i = 0; i < a->size(); ++i) out->data[i] = a->data[i] * c;
    if (rg) {
        g.record(out, [a, out, c] {
            a->ensure_grad();
            for (std::size_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[i] * c;
        }, "scale");
    }
    return out;
}

inline TensorPtr sum(Graph& g, const TensorPtr& a) {
    bool rg = a->requires_grad;
    auto out = detail::make_output({std::size_t{1}}, rg);
    double acc = 0.0;
    for (double v : a->data) acc += v;
    out->data[0] = acc;
    if (rg) {
        g.record(out, [a, out] {
            a->ensure_grad();
            for (std::size_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[0];
        }, "sum");
    }
    return out;
}

inline TensorPtr mean(Graph& g, const TensorPtr& a) {
    if (a->size() == 0) throw value_error("mean: empty tensor");
    auto out = sum(g, a);
    return scale(g, out, 1.0 / static_cast<double>(a->size()));
}

inline TensorPtr reshape(Graph& g, const TensorPtr& a, std::vector<std::size_t> shape) {
    if (Tensor::count(shape) != a->size())
        throw dimension_error("reshape: element count mismatch");
    bool rg = a->requires_grad;
    auto out = detail::make_output(std::move(shape), rg);
    out->data = a->data;
    if (rg) {
        g.record(out, [a, out] {
            a->ensure_grad();
            for (std::size_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[i];
        }, "reshape");
    }
    return out;
}

// Gathers rows of a [N,d] matrix; backward scatter-adds into the source.
inline TensorPtr take_rows(Graph& g, const TensorPtr& a, std::vector<std::size_t> rows) {
    if (a->rank() != 2) throw dimension_error("take_rows: expected matrix [N,d]");
    const std::size_t d = a->dim(1);
    for (std::size_t r : rows)
        if (r >= a->dim(0)) throw value_error("take_rows: row index out of range");

    bool rg = a->requires_grad;
    auto idx = std::make_shared<std::vector<std::size_t>>(std::move(rows));
    auto out = detail::make_output({idx->size(), d}, rg);
    for (std::size_t m = 0; m < idx->size(); ++m)
        for (std::size_t j = 0; j < d; ++j) out->at2(m, j) = a->at2((*idx)[m], j);
    if (rg) {
        g.record(out, [a, out, idx, d] {
            a->ensure_grad();
            for (std::size_t m = 0; m < idx->size(); ++m)
                for (std::size_t j = 0; j < d; ++j)
                    a->grad[(*idx)[m] * d + j] += out->grad[m * d + j];
        }, "take_rows");
    }
    return out;
}

// p <- p - lr * (grad + weight_decay * p), then zero the gradients.
inline void sgd_step(const std::vector<TensorPtr>& params, double lr, double weight_decay) {
    for (const TensorPtr& p : params) {
        if (p->grad.size() != p->data.size())
            throw state_error("sgd_step: parameter has no gradient");
        for (std::size_t i = 0; i < p->size(); ++i)
            p->data[i] -= lr * (p->grad[i] + weight_decay * p->data[i]);
        p->zero_grad();
    }
}

} // namespace everadapt
