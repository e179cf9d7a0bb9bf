#pragma once

// Differentiable tensor operations used by the network modules.
// Batched signal tensors are [batch, channels, time].

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "mdn/autograd.hpp"

namespace mdn::ops {

namespace detail {
inline void same_shape(const Var& a, const Var& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
    }
}
} // namespace detail

inline Var add(const Var& a, const Var& b) {
    detail::same_shape(a, b, "add");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    return make_result(std::move(out), {a, b}, [](Node& n) {
        for (std::size_t k = 0; k < 2; ++k) {
            if (Tensor* g = parent_grad(n, k)) {
                for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i];
            }
        }
    });
}

inline Var sub(const Var& a, const Var& b) {
    detail::same_shape(a, b, "sub");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    return make_result(std::move(out), {a, b}, [](Node& n) {
        if (Tensor* g = parent_grad(n, 0)) {
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i];
        }
        if (Tensor* g = parent_grad(n, 1)) {
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= n.grad[i];
        }
    });
}

inline Var mul(const Var& a, const Var& b) {
    detail::same_shape(a, b, "mul");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return make_result(std::move(out), {a, b}, [](Node& n) {
        const Tensor& av = parent_value(n, 0);
        const Tensor& bv = parent_value(n, 1);
        if (Tensor* g = parent_grad(n, 0)) {
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i] * bv[i];
        }
        if (Tensor* g = parent_grad(n, 1)) {
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i] * av[i];
        }
    });
}

inline Var scale(const Var& a, double s) {
    Tensor out = a.value();
    for (auto& v : out.data) v *= s;
    return make_result(std::move(out), {a}, [s](Node& n) {
        if (Tensor* g = parent_grad(n, 0)) {
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += s * n.grad[i];
        }
    });
}

/// a + c for a constant tensor c.
inline Var add_const(const Var& a, const Tensor& c) {
    require_shape(c, a.shape(), "add_const");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += c[i];
    return make_result(std::move(out), {a}, [](Node& n) {
        if (Tensor* g = parent_grad(n, 0)) {
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i];
        }
    });
}

inline Var sum_all(const Var& a) {
    double s = 0.0;
    for (double v : a.value().data) s += v;
    return make_result(Tensor({1}, s), {a}, [](Node& n) {
        if (Tensor* g = parent_grad(n, 0)) {
            for (auto& v : g->data) v += n.grad[0];
        }
    });
}

inline Var mean_all(const Var& a) {
    if (a.size() == 0) throw DimensionError("mean_all: empty tensor");
    return scale(sum_all(a), 1.0 / static_cast<double>(a.size()));
}

/// Sum_i w_i * x_i over same-shaped inputs with constant weights.
inline Var weighted_sum(const std::vector<Var>& xs, const std::vector<double>& w) {
    if (xs.empty() || xs.size() != w.size()) throw DimensionError("weighted_sum: inputs and weights differ in length");
    Tensor out(xs[0].shape());
    for (std::size_t k = 0; k < xs.size(); ++k) {
        detail::same_shape(xs[0], xs[k], "weighted_sum");
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += w[k] * xs[k].value()[i];
    }
    return make_result(std::move(out), xs, [w](Node& n) {
        for (std::size_t k = 0; k < w.size(); ++k) {
            if (Tensor* g = parent_grad(n, k)) {
                for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += w[k] * n.grad[i];
            }
        }
    });
}

/// Per-row convex mix: out[b] = Sum_k weights[b][k] * xs[k][b]. Leading axis is the batch.
inline Var mix_rows(const std::vector<Var>& xs, const std::vector<std::vector<double>>& weights) {
    if (xs.empty()) throw DimensionError("mix_rows: no sources");
    const std::size_t batch = xs[0].shape().at(0);
    if (weights.size() != batch) throw DimensionError("mix_rows: one weight vector per row required");
    for (const auto& w : weights) {
        if (w.size() != xs.size()) throw DimensionError("mix_rows: weight vector length must equal source count");
    }
    for (const auto& x : xs) detail::same_shape(xs[0], x, "mix_rows");
    const std::size_t row = xs[0].size() / batch;
    Tensor out(xs[0].shape());
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t k = 0; k < xs.size(); ++k) {
            const double wk = weights[b][k];
            for (std::size_t i = b * row; i < (b + 1) * row; ++i) out[i] += wk * xs[k].value()[i];
        }
    }
    return make_result(std::move(out), xs, [weights, row](Node& n) {
        for (std::size_t k = 0; k < n.parents.size(); ++k) {
            Tensor* g = parent_grad(n, k);
            if (!g) continue;
            for (std::size_t b = 0; b < weights.size(); ++b) {
                for (std::size_t i = b * row; i < (b + 1) * row; ++i) (*g)[i] += weights[b][k] * n.grad[i];
            }
        }
    });
}

/// Multiplies row b (leading axis) by coeffs[b].
inline Var scale_rows(const Var& x, const std::vector<double>& coeffs) {
    const std::size_t batch = x.shape().at(0);
    if (coeffs.size() != batch) throw DimensionError("scale_rows: coefficient count must equal batch size");
    const std::size_t row = x.size() / batch;
    Tensor out = x.value();
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = b * row; i < (b + 1) * row; ++i) out[i] *= coeffs[b];
    return make_result(std::move(out), {x}, [coeffs, row](Node& n) {
        if (Tensor* g = parent_grad(n, 0)) {
            for (std::size_t b = 0; b < coeffs.size(); ++b)
                for (std::size_t i = b * row; i < (b + 1) * row; ++i) (*g)[i] += coeffs[b] * n.grad[i];
        }
    });
}

inline Var reshape(const Var& x, Shape shape) {
    if (shape_size(shape) != x.size()) {
        throw DimensionError("reshape: cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
    }
    Tensor out(std::move(shape), x.value().data);
    return make_result(std::move(out), {x}, [](Node& n) {
        if (Tensor* g = parent_grad(n, 0)) {
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i];
        }
    });
}

/// [B, ...] -> [B, prod(...)].
inline Var flatten(const Var& x) {
    const std::size_t batch = x.shape().at(0);
    return reshape(x, {batch, x.size() / batch});
}

/// x [B, in] * W^T + b, with W [out, in] and optional b [out].
inline Var linear(const Var& x, const Var& w, const Var& b) {
    require_rank(x.value(), 2, "linear input");
    require_rank(w.value(), 2, "linear weight");
    const std::size_t batch = x.shape()[0], in = x.shape()[1], out_dim = w.shape()[0];
    if (w.shape()[1] != in) {
        throw DimensionError("linear: input width " + std::to_string(in) + " does not match weight " +
                             shape_string(w.shape()));
    }
    const bool has_bias = b.defined();
    if (has_bias) require_shape(b.value(), {out_dim}, "linear bias");
    Tensor out({batch, out_dim});
    const auto& xv = x.value().data;
    const auto& wv = w.value().data;
    for (std::size_t r = 0; r < batch; ++r) {
        for (std::size_t o = 0; o < out_dim; ++o) {
            double acc = has_bias ? b.value()[o] : 0.0;
            const double* xr = &xv[r * in];
            const double* wr = &wv[o * in];
            for (std::size_t i = 0; i < in; ++i) acc += xr[i] * wr[i];
            out[r * out_dim + o] = acc;
        }
    }
    std::vector<Var> parents{x, w};
    if (has_bias) parents.push_back(b);
    return make_result(std::move(out), parents, [batch, in, out_dim, has_bias](Node& n) {
        const auto& xv = parent_value(n, 0).data;
        const auto& wv = parent_value(n, 1).data;
        Tensor* gx = parent_grad(n, 0);
        Tensor* gw = parent_grad(n, 1);
        Tensor* gb = has_bias ? parent_grad(n, 2) : nullptr;
        for (std::size_t r = 0; r < batch; ++r) {
            for (std::size_t o = 0; o < out_dim; ++o) {
                const double g = n.grad[r * out_dim + o];
                if (g == 0.0) continue;
                if (gx) {
                    for (std::size_t i = 0; i < in; ++i) (*gx)[r * in + i] += g * wv[o * in + i];
                }
                if (gw) {
                    for (std::size_t i = 0; i < in; ++i) (*gw)[o * in + i] += g * xv[r * in + i];
                }
                if (gb) (*gb)[o] += g;
            }
        }
    });
}

/// Left padding used by every "same" convolution: kernel k covers
/// offsets [-left, k-1-left].
inline std::size_t same_pad_left(std::size_t kernel) { return (kernel - 1) / 2; }

/// Grouped 1-D convolution with "same" zero padding.
/// x [B, Cin, T], w [Cout, Cin/groups, k], optional b [Cout] -> [B, Cout, T].
inline Var conv1d(const Var& x, const Var& w, const Var& b, std::size_t groups = 1) {
    require_rank(x.value(), 3, "conv1d input");
    require_rank(w.value(), 3, "conv1d weight");
    const std::size_t batch = x.shape()[0], cin = x.shape()[1], len = x.shape()[2];
    const std::size_t cout = w.shape()[0], cin_g = w.shape()[1], k = w.shape()[2];
    if (groups == 0 || cin % groups != 0 || cout % groups != 0 || cin / groups != cin_g) {
        throw DimensionError("conv1d: weight " + shape_string(w.shape()) + " incompatible with input " +
                             shape_string(x.shape()) + " and groups=" + std::to_string(groups));
    }
    const bool has_bias = b.defined();
    if (has_bias) require_shape(b.value(), {cout}, "conv1d bias");
    const std::size_t cout_g = cout / groups;
    const long pl = static_cast<long>(same_pad_left(k));
    const long tl = static_cast<long>(len);

    Tensor out({batch, cout, len});
    const auto& xv = x.value().data;
    const auto& wv = w.value().data;
    for (std::size_t bi = 0; bi < batch; ++bi) {
        for (std::size_t o = 0; o < cout; ++o) {
            const std::size_t g = o / cout_g;
            double* orow = &out.data[(bi * cout + o) * len];
            const double bias = has_bias ? b.value()[o] : 0.0;
            for (std::size_t t = 0; t < len; ++t) orow[t] = bias;
            for (std::size_t ci = 0; ci < cin_g; ++ci) {
                const double* xrow = &xv[(bi * cin + g * cin_g + ci) * len];
                const double* wrow = &wv[(o * cin_g + ci) * k];
                for (std::size_t j = 0; j < k; ++j) {
                    const double wj = wrow[j];
                    const long shift = static_cast<long>(j) - pl;
                    const long t0 = std::max(0L, -shift);
                    const long t1 = std::min(tl, tl - shift);
                    for (long t = t0; t < t1; ++t) orow[t] += wj * xrow[t + shift];
                }
            }
        }
    }
    std::vector<Var> parents{x, w};
    if (has_bias) parents.push_back(b);
    return make_result(std::move(out), parents,
                       [batch, cin, len, cout, cin_g, cout_g, k, pl, tl, has_bias](Node& n) {
        const auto& xv = parent_value(n, 0).data;
        const auto& wv = parent_value(n, 1).data;
        Tensor* gx = parent_grad(n, 0);
        Tensor* gw = parent_grad(n, 1);
        Tensor* gb = has_bias ? parent_grad(n, 2) : nullptr;
        for (std::size_t bi = 0; bi < batch; ++bi) {
            for (std::size_t o = 0; o < cout; ++o) {
                const std::size_t g = o / cout_g;
                const double* grow = &n.grad.data[(bi * cout + o) * len];
                if (gb) {
                    for (std::size_t t = 0; t < len; ++t) (*gb)[o] += grow[t];
                }
                for (std::size_t ci = 0; ci < cin_g; ++ci) {
                    const std::size_t xoff = (bi * cin + g * cin_g + ci) * len;
                    const std::size_t woff = (o * cin_g + ci) * k;
                    for (std::size_t j = 0; j < k; ++j) {
                        const long shift = static_cast<long>(j) - pl;
                        const long t0 = std::max(0L, -shift);
                        const long t1 = std::min(tl, tl - shift);
                        if (gw) {
                            double acc = 0.0;
                            for (long t = t0; t < t1; ++t) acc += grow[t] * xv[xoff + t + shift];
                            (*gw)[woff + j] += acc;
                        }
                        if (gx) {
                            const double wj = wv[woff + j];
                            for (long t = t0; t < t1; ++t) (*gx)[xoff + t + shift] += wj * grow[t];
                        }
                    }
                }
            }
        }
    });
}

/// Per-electrode temporal filtering with a shared filter bank.
/// x [B, C, T], w [F, k], b [F] -> [B, F, C, T].
inline Var temporal_conv(const Var& x, const Var& w, const Var& b) {
    require_rank(x.value(), 3, "temporal_conv input");
    require_rank(w.value(), 2, "temporal_conv weight");
    const std::size_t batch = x.shape()[0], chans = x.shape()[1], len = x.shape()[2];
    const std::size_t filters = w.shape()[0];
    require_shape(b.value(), {filters}, "temporal_conv bias");
    // Same arithmetic as a single-input-channel conv1d over [B*C, 1, T].
    Var flat = reshape(x, {batch * chans, 1, len});
    Var w3 = reshape(w, {filters, 1, w.shape()[1]});
    Var y = conv1d(flat, w3, b, 1); // [B*C, F, T]
    // Permute [B, C, F, T] -> [B, F, C, T].
    Tensor out({batch, filters, chans, len});
    const auto& yv = y.value().data;
    for (std::size_t bi = 0; bi < batch; ++bi)
        for (std::size_t c = 0; c < chans; ++c)
            for (std::size_t f = 0; f < filters; ++f)
                std::copy_n(&yv[((bi * chans + c) * filters + f) * len], len,
                            &out.data[((bi * filters + f) * chans + c) * len]);
    return make_result(std::move(out), {y}, [batch, chans, filters, len](Node& n) {
        if (Tensor* g = parent_grad(n, 0)) {
            for (std::size_t bi = 0; bi < batch; ++bi)
                for (std::size_t c = 0; c < chans; ++c)
                    for (std::size_t f = 0; f < filters; ++f) {
                        const double* src = &n.grad.data[((bi * filters + f) * chans + c) * len];
                        double* dst = &g->data[((bi * chans + c) * filters + f) * len];
                        for (std::size_t t = 0; t < len; ++t) dst[t] += src[t];
                    }
        }
    });
}

/// Depthwise spatial filter: each temporal map f gets `multiplier` spatial
/// filters over the electrodes.
/// h [B, F, C, T], w [F*M, C], b [F*M] -> [B, F*M, T].
inline Var spatial_depthwise(const Var& h, const Var& w, const Var& b) {
    require_rank(h.value(), 4, "spatial_depthwise input");
    const std::size_t batch = h.shape()[0], filters = h.shape()[1], chans = h.shape()[2], len = h.shape()[3];
    require_rank(w.value(), 2, "spatial_depthwise weight");
    const std::size_t outs = w.shape()[0];
    if (w.shape()[1] != chans || outs % filters != 0) {
        throw DimensionError("spatial_depthwise: weight " + shape_string(w.shape()) + " incompatible with input " +
                             shape_string(h.shape()));
    }
    require_shape(b.value(), {outs}, "spatial_depthwise bias");
    const std::size_t mult = outs / filters;
    Tensor out({batch, outs, len});
    const auto& hv = h.value().data;
    const auto& wv = w.value().data;
    for (std::size_t bi = 0; bi < batch; ++bi)
        for (std::size_t o = 0; o < outs; ++o) {
            const std::size_t f = o / mult;
            double* orow = &out.data[(bi * outs + o) * len];
            for (std::size_t t = 0; t < len; ++t) orow[t] = b.value()[o];
            for (std::size_t c = 0; c < chans; ++c) {
                const double wc = wv[o * chans + c];
                const double* hrow = &hv[((bi * filters + f) * chans + c) * len];
                for (std::size_t t = 0; t < len; ++t) orow[t] += wc * hrow[t];
            }
        }
    return make_result(std::move(out), {h, w, b}, [batch, filters, chans, len, outs, mult](Node& n) {
        const auto& hv = parent_value(n, 0).data;
        const auto& wv = parent_value(n, 1).data;
        Tensor* gh = parent_grad(n, 0);
        Tensor* gw = parent_grad(n, 1);
        Tensor* gb = parent_grad(n, 2);
        for (std::size_t bi = 0; bi < batch; ++bi)
            for (std::size_t o = 0; o < outs; ++o) {
                const std::size_t f = o / mult;
                const double* grow = &n.grad.data[(bi * outs + o) * len];
                if (gb) {
                    for (std::size_t t = 0; t < len; ++t) (*gb)[o] += grow[t];
                }
                for (std::size_t c = 0; c < chans; ++c) {
                    const std::size_t hoff = ((bi * filters + f) * chans + c) * len;
                    if (gw) {
                        double acc = 0.0;
                        for (std::size_t t = 0; t < len; ++t) acc += grow[t] * hv[hoff + t];
                        (*gw)[o * chans + c] += acc;
                    }
                    if (gh) {
                        const double wc = wv[o * chans + c];
                        for (std::size_t t = 0; t < len; ++t) (*gh)[hoff + t] += wc * grow[t];
                    }
                }
            }
    });
}

/// Exponential linear unit (alpha = 1).
inline Var elu(const Var& x) {
    Tensor out = x.value();
    for (auto& v : out.data) v = v > 0.0 ? v : std::expm1(v);
    return make_result(std::move(out), {x}, [](Node& n) {
        if (Tensor* g = parent_grad(n, 0)) {
            const auto& xv = parent_value(n, 0).data;
            for (std::size_t i = 0; i < g->size(); ++i)
                (*g)[i] += n.grad[i] * (xv[i] > 0.0 ? 1.0 : std::exp(xv[i]));
        }
    });
}

inline Var tanh(const Var& x) {
    Tensor out = x.value();
    for (auto& v : out.data) v = std::tanh(v);
    return make_result(std::move(out), {x}, [](Node& n) {
        if (Tensor* g = parent_grad(n, 0)) {
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i] * (1.0 - n.value[i] * n.value[i]);
        }
    });
}

/// Non-overlapping average pooling along the last axis; a trailing remainder
/// shorter than `window` is dropped.
inline Var avg_pool_time(const Var& x, std::size_t window) {
    if (window == 0) throw DimensionError("avg_pool_time: window must be >= 1");
    const std::size_t len = x.shape().back();
    if (len < window) {
        throw DimensionError("avg_pool_time: time extent " + std::to_string(len) + " shorter than pooling window " +
                             std::to_string(window));
    }
    const std::size_t outer = x.size() / len, olen = len / window;
    Shape shape = x.shape();
    shape.back() = olen;
    Tensor out(shape);
    const double inv = 1.0 / static_cast<double>(window);
    for (std::size_t r = 0; r < outer; ++r)
        for (std::size_t t = 0; t < olen; ++t) {
            double acc = 0.0;
            for (std::size_t j = 0; j < window; ++j) acc += x.value()[r * len + t * window + j];
            out[r * olen + t] = acc * inv;
        }
    return make_result(std::move(out), {x}, [outer, len, olen, window, inv](Node& n) {
        if (Tensor* g = parent_grad(n, 0)) {
            for (std::size_t r = 0; r < outer; ++r)
                for (std::size_t t = 0; t < olen; ++t)
                    for (std::size_t j = 0; j < window; ++j)
                        (*g)[r * len + t * window + j] += n.grad[r * olen + t] * inv;
        }
    });
}

/// Softmax-over-time attention weights a[b, t] for features f [B, F, T],
/// scores s_t = w . f_t + bias.
inline Tensor attention_weights(const Tensor& f, const Tensor& w, const Tensor& bias) {
    require_rank(f, 3, "attention_pool input");
    const std::size_t batch = f.shape[0], feats = f.shape[1], len = f.shape[2];
    require_shape(w, {feats}, "attention_pool weight");
    require_shape(bias, {1}, "attention_pool bias");
    if (len == 0) throw DimensionError("attention_pool: empty time axis");
    Tensor a({batch, len});
    for (std::size_t b = 0; b < batch; ++b) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t t = 0; t < len; ++t) {
            double s = bias[0];
            for (std::size_t c = 0; c < feats; ++c) s += w[c] * f[(b * feats + c) * len + t];
            a[b * len + t] = s;
            mx = std::max(mx, s);
        }
        double z = 0.0;
        for (std::size_t t = 0; t < len; ++t) z += (a[b * len + t] = std::exp(a[b * len + t] - mx));
        for (std::size_t t = 0; t < len; ++t) a[b * len + t] /= z;
    }
    return a;
}

/// z[b] = Sum_t a[b,t] f[b,:,t]. f [B, F, T] -> [B, F].
inline Var attention_pool(const Var& f, const Var& w, const Var& bias) {
    Tensor a = attention_weights(f.value(), w.value(), bias.value());
    const std::size_t batch = f.shape()[0], feats = f.shape()[1], len = f.shape()[2];
    Tensor out({batch, feats});
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t c = 0; c < feats; ++c) {
            double acc = 0.0;
            for (std::size_t t = 0; t < len; ++t) acc += a[b * len + t] * f.value()[(b * feats + c) * len + t];
            out[b * feats + c] = acc;
        }
    return make_result(std::move(out), {f, w, bias}, [a, batch, feats, len](Node& n) {
        const Tensor& fv = parent_value(n, 0);
        const Tensor& wv = parent_value(n, 1);
        Tensor* gf = parent_grad(n, 0);
        Tensor* gw = parent_grad(n, 1);
        Tensor* gbias = parent_grad(n, 2);
        std::vector<double> ds(len);
        for (std::size_t b = 0; b < batch; ++b) {
            const double* g = &n.grad.data[b * feats];
            double gz = 0.0;
            for (std::size_t c = 0; c < feats; ++c) gz += g[c] * n.value[b * feats + c];
            for (std::size_t t = 0; t < len; ++t) {
                double gf_t = 0.0;
                for (std::size_t c = 0; c < feats; ++c) gf_t += g[c] * fv[(b * feats + c) * len + t];
                ds[t] = a[b * len + t] * (gf_t - gz);
            }
            for (std::size_t t = 0; t < len; ++t) {
                const double at = a[b * len + t];
                for (std::size_t c = 0; c < feats; ++c) {
                    const std::size_t idx = (b * feats + c) * len + t;
                    if (gf) (*gf)[idx] += at * g[c] + ds[t] * wv[c];
                    if (gw) (*gw)[c] += ds[t] * fv[idx];
                }
                if (gbias) (*gbias)[0] += ds[t];
            }
        }
    });
}

/// Nearest-neighbour upsampling along time: [B, C, Tin] -> [B, C, len],
/// output index t reads input index floor(t * Tin / len).
inline Var upsample_time(const Var& x, std::size_t len) {
    require_rank(x.value(), 3, "upsample_time input");
    const std::size_t rows = x.shape()[0] * x.shape()[1], tin = x.shape()[2];
    if (tin == 0 || len == 0) throw DimensionError("upsample_time: empty time axis");
    Tensor out({x.shape()[0], x.shape()[1], len});
    std::vector<std::size_t> src(len);
    for (std::size_t t = 0; t < len; ++t) src[t] = t * tin / len;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t t = 0; t < len; ++t) out[r * len + t] = x.value()[r * tin + src[t]];
    return make_result(std::move(out), {x}, [rows, tin, len, src](Node& n) {
        if (Tensor* g = parent_grad(n, 0)) {
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t t = 0; t < len; ++t) (*g)[r * tin + src[t]] += n.grad[r * len + t];
        }
    });
}

/// Row-wise L2 normalization of x [B, D]. A zero row maps to the first
/// basis vector with zero gradient.
inline Var l2_normalize_rows(const Var& x) {
    require_rank(x.value(), 2, "l2_normalize_rows input");
    const std::size_t batch = x.shape()[0], dim = x.shape()[1];
    if (dim == 0) throw DimensionError("l2_normalize_rows: zero-width rows");
    Tensor out({batch, dim});
    std::vector<double> norms(batch);
    for (std::size_t b = 0; b < batch; ++b) {
        double ss = 0.0;
        for (std::size_t i = 0; i < dim; ++i) ss += x.value()[b * dim + i] * x.value()[b * dim + i];
        norms[b] = std::sqrt(ss);
        if (norms[b] > 0.0 && std::isfinite(norms[b])) {
            for (std::size_t i = 0; i < dim; ++i) out[b * dim + i] = x.value()[b * dim + i] / norms[b];
        } else {
            norms[b] = 0.0;
            out[b * dim] = 1.0;
        }
    }
    return make_result(std::move(out), {x}, [batch, dim, norms](Node& n) {
        if (Tensor* g = parent_grad(n, 0)) {
            for (std::size_t b = 0; b < batch; ++b) {
                if (norms[b] == 0.0) continue;
                double yg = 0.0;
                for (std::size_t i = 0; i < dim; ++i) yg += n.value[b * dim + i] * n.grad[b * dim + i];
                for (std::size_t i = 0; i < dim; ++i)
                    (*g)[b * dim + i] += (n.grad[b * dim + i] - n.value[b * dim + i] * yg) / norms[b];
            }
        }
    });
}

/// (z - mean) / sd elementwise with constant mean and sd of z's shape.
inline Var standardize(const Var& z, const Tensor& mean, const Tensor& sd) {
    require_shape(mean, z.shape(), "standardize mean");
    require_shape(sd, z.shape(), "standardize sd");
    Tensor out = z.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (out[i] - mean[i]) / sd[i];
    return make_result(std::move(out), {z}, [sd](Node& n) {
        if (Tensor* g = parent_grad(n, 0)) {
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i] / sd[i];
        }
    });
}

/// h [B, H, T] + table[idx[b]] broadcast over time; table [N, H].
inline Var add_row_embedding(const Var& h, const Var& table, const std::vector<std::size_t>& idx) {
    require_rank(h.value(), 3, "add_row_embedding input");
    require_rank(table.value(), 2, "add_row_embedding table");
    const std::size_t batch = h.shape()[0], hidden = h.shape()[1], len = h.shape()[2];
    if (table.shape()[1] != hidden || idx.size() != batch) {
        throw DimensionError("add_row_embedding: table " + shape_string(table.shape()) + " or index count " +
                             std::to_string(idx.size()) + " incompatible with " + shape_string(h.shape()));
    }
    for (auto i : idx) {
        if (i >= table.shape()[0]) throw DimensionError("add_row_embedding: index out of range");
    }
    Tensor out = h.value();
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t c = 0; c < hidden; ++c) {
            const double e = table.value()[idx[b] * hidden + c];
            for (std::size_t t = 0; t < len; ++t) out[(b * hidden + c) * len + t] += e;
        }
    return make_result(std::move(out), {h, table}, [idx, batch, hidden, len](Node& n) {
        Tensor* gh = parent_grad(n, 0);
        Tensor* gt = parent_grad(n, 1);
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t c = 0; c < hidden; ++c)
                for (std::size_t t = 0; t < len; ++t) {
                    const double g = n.grad[(b * hidden + c) * len + t];
                    if (gh) (*gh)[(b * hidden + c) * len + t] += g;
                    if (gt) (*gt)[idx[b] * hidden + c] += g;
                }
    });
}

/// x [B, C, T] + b[c] broadcast over batch and time.
inline Var add_channel_bias(const Var& x, const Var& bias) {
    require_rank(x.value(), 3, "add_channel_bias input");
    const std::size_t batch = x.shape()[0], chans = x.shape()[1], len = x.shape()[2];
    require_shape(bias.value(), {chans}, "add_channel_bias bias");
    Tensor out = x.value();
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t c = 0; c < chans; ++c)
            for (std::size_t t = 0; t < len; ++t) out[(b * chans + c) * len + t] += bias.value()[c];
    return make_result(std::move(out), {x, bias}, [batch, chans, len](Node& n) {
        Tensor* gx = parent_grad(n, 0);
        Tensor* gb = parent_grad(n, 1);
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t c = 0; c < chans; ++c)
                for (std::size_t t = 0; t < len; ++t) {
                    const double g = n.grad[(b * chans + c) * len + t];
                    if (gx) (*gx)[(b * chans + c) * len + t] += g;
                    if (gb) (*gb)[c] += g;
                }
    });
}

/// Cellwise three-way selection: mask 0 -> a, 1 -> b, -1 -> c.
inline Var select_by_mask(const std::vector<std::int8_t>& mask, const Var& a, const Var& b, const Var& c) {
    detail::same_shape(a, b, "select_by_mask");
    detail::same_shape(a, c, "select_by_mask");
    if (mask.size() != a.size()) throw DimensionError("select_by_mask: mask size does not match sources");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        switch (mask[i]) {
        case 0: out[i] = a.value()[i]; break;
        case 1: out[i] = b.value()[i]; break;
        case -1: out[i] = c.value()[i]; break;
        default: throw DimensionError("select_by_mask: mask value outside {-1, 0, 1}");
        }
    }
    return make_result(std::move(out), {a, b, c}, [mask](Node& n) {
        Tensor* g[3] = {parent_grad(n, 0), parent_grad(n, 1), parent_grad(n, 2)};
        for (std::size_t i = 0; i < mask.size(); ++i) {
            const int src = mask[i] == 0 ? 0 : (mask[i] == 1 ? 1 : 2);
            if (g[src]) (*g[src])[i] += n.grad[i];
        }
    });
}

/// Rows [begin, end) of the leading axis.
inline Var slice_rows(const Var& x, std::size_t begin, std::size_t end) {
    const std::size_t batch = x.shape().at(0);
    if (begin > end || end > batch) throw DimensionError("slice_rows: range out of bounds");
    const std::size_t row = batch ? x.size() / batch : 0;
    Shape shape = x.shape();
    shape[0] = end - begin;
    Tensor out(shape, std::vector<double>(x.value().data.begin() + begin * row, x.value().data.begin() + end * row));
    return make_result(std::move(out), {x}, [begin, row](Node& n) {
        if (Tensor* g = parent_grad(n, 0)) {
            for (std::size_t i = 0; i < n.grad.size(); ++i) (*g)[begin * row + i] += n.grad[i];
        }
    });
}

} // namespace mdn::ops
