#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <regex>
#include <string>
#include <vector>

#include "mdn/ops.hpp"

namespace mdn {

enum class ClassificationKind { ce, mse };

inline const char* to_string(ClassificationKind k) { return k == ClassificationKind::ce ? "CE" : "MSE"; }

/// Weights of the three objective terms. A scheduled weight ramps linearly
/// from 0 to its maximum over `*_epochs` epochs; an unscheduled one is
/// constant at its maximum.
struct LossWeights {
    double alpha = 1.0;
    double beta_max = 0.05;
    double beta_epochs = 100.0;
    bool beta_scheduled = true;
    double gamma_max = 0.2;
    double gamma_epochs = 50.0;
    bool gamma_scheduled = true;
    ClassificationKind classification_kind = ClassificationKind::ce;
    double tau = 0.07;

    void validate() const {
        if (!(alpha >= 0.0 && beta_max >= 0.0 && gamma_max >= 0.0)) throw ConfigError("loss weights must be >= 0");
        if (!(beta_epochs >= 1.0 && gamma_epochs >= 1.0)) throw ConfigError("loss schedule epochs must be >= 1");
        if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
    }

    /// Parses names like "CE_a1_bsched0.05_gsched0.2" or "MSE_a0.5_b0_gsched 0.2".
    static LossWeights parse(const std::string& name) {
        std::string s;
        for (char c : name) {
            if (c != ' ') s += c;
        }
        static const std::regex re(R"(^(CE|MSE)_a([0-9]*\.?[0-9]+)_b(sched)?([0-9]*\.?[0-9]+)_g(sched)?([0-9]*\.?[0-9]+)$)");
        std::smatch m;
        if (!std::regex_match(s, m, re)) throw ConfigError("loss: cannot parse loss name \"" + name + "\"");
        LossWeights w;
        w.classification_kind = m[1] == "CE" ? ClassificationKind::ce : ClassificationKind::mse;
        w.alpha = std::stod(m[2]);
        w.beta_scheduled = m[3].matched;
        w.beta_max = std::stod(m[4]);
        w.gamma_scheduled = m[5].matched;
        w.gamma_max = std::stod(m[6]);
        return w;
    }

    std::string name() const {
        auto num = [](double v) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%g", v);
            return std::string(buf);
        };
        return std::string(to_string(classification_kind)) + "_a" + num(alpha) + "_b" + (beta_scheduled ? "sched" : "") +
               num(beta_max) + "_g" + (gamma_scheduled ? "sched" : "") + num(gamma_max);
    }
};

inline double ramp(double epoch, double max_value, double epochs) {
    return std::min(1.0, epoch / epochs) * max_value;
}

/// beta = min(1, epoch / 100) * 0.05 with the default weights.
inline double schedule_beta(double epoch, const LossWeights& w = {}) {
    if (epoch < 0.0) throw ConfigError("schedule: epoch must be >= 0");
    return w.beta_scheduled ? ramp(epoch, w.beta_max, w.beta_epochs) : w.beta_max;
}

/// gamma = min(1, epoch / 50) * 0.2 with the default weights.
inline double schedule_gamma(double epoch, const LossWeights& w = {}) {
    if (epoch < 0.0) throw ConfigError("schedule: epoch must be >= 0");
    return w.gamma_scheduled ? ramp(epoch, w.gamma_max, w.gamma_epochs) : w.gamma_max;
}

namespace loss_detail {

inline void check_labels(const std::vector<std::size_t>& labels, std::size_t batch, std::size_t classes) {
    if (labels.size() != batch) throw DimensionError("loss: one label per row required");
    for (auto y : labels) {
        if (y >= classes) {
            throw ConfigError("loss: label " + std::to_string(y) + " out of range for " + std::to_string(classes) +
                              " classes");
        }
    }
}

inline std::vector<double> softmax_row(const double* logits, std::size_t k) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < k; ++i) mx = std::max(mx, logits[i]);
    std::vector<double> p(k);
    double z = 0.0;
    for (std::size_t i = 0; i < k; ++i) z += (p[i] = std::exp(logits[i] - mx));
    for (auto& v : p) v /= z;
    return p;
}

} // namespace loss_detail

inline Tensor softmax_rows(const Tensor& logits) {
    require_rank(logits, 2, "softmax_rows");
    Tensor out(logits.shape);
    const std::size_t k = logits.shape[1];
    for (std::size_t b = 0; b < logits.shape[0]; ++b) {
        auto p = loss_detail::softmax_row(&logits.data[b * k], k);
        std::copy(p.begin(), p.end(), out.data.begin() + b * k);
    }
    return out;
}

/// Mean over the batch of -log softmax(logits)[label].
inline Var ce_loss(const Var& logits, const std::vector<std::size_t>& labels) {
    require_rank(logits.value(), 2, "ce_loss logits");
    const std::size_t batch = logits.shape()[0], k = logits.shape()[1];
    loss_detail::check_labels(labels, batch, k);
    Tensor probs = softmax_rows(logits.value());
    double total = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
        const double* l = &logits.value().data[b * k];
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < k; ++i) mx = std::max(mx, l[i]);
        double z = 0.0;
        for (std::size_t i = 0; i < k; ++i) z += std::exp(l[i] - mx);
        total += mx + std::log(z) - l[labels[b]];
    }
    const double inv = 1.0 / static_cast<double>(batch);
    return make_result(Tensor({1}, total * inv), {logits}, [probs, labels, k, inv](Node& n) {
        if (Tensor* g = parent_grad(n, 0)) {
            for (std::size_t b = 0; b < labels.size(); ++b)
                for (std::size_t i = 0; i < k; ++i)
                    (*g)[b * k + i] += n.grad[0] * inv * (probs[b * k + i] - (i == labels[b] ? 1.0 : 0.0));
        }
    });
}

/// Mean over the batch of ||predictions - one_hot||^2 on already-normalized
/// predictions [B, K].
inline Var mse_class_loss(const Var& predictions, const std::vector<std::size_t>& labels) {
    require_rank(predictions.value(), 2, "mse_class_loss predictions");
    const std::size_t batch = predictions.shape()[0], k = predictions.shape()[1];
    loss_detail::check_labels(labels, batch, k);
    double total = 0.0;
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < k; ++i) {
            const double d = predictions.value()[b * k + i] - (i == labels[b] ? 1.0 : 0.0);
            total += d * d;
        }
    const double inv = 1.0 / static_cast<double>(batch);
    return make_result(Tensor({1}, total * inv), {predictions}, [labels, k, inv](Node& n) {
        if (Tensor* g = parent_grad(n, 0)) {
            const auto& p = parent_value(n, 0);
            for (std::size_t b = 0; b < labels.size(); ++b)
                for (std::size_t i = 0; i < k; ++i)
                    (*g)[b * k + i] += n.grad[0] * inv * 2.0 * (p[b * k + i] - (i == labels[b] ? 1.0 : 0.0));
        }
    });
}

/// Row-wise softmax as a differentiable op.
inline Var softmax(const Var& logits) {
    Tensor probs = softmax_rows(logits.value());
    const std::size_t k = logits.shape()[1];
    return make_result(std::move(probs), {logits}, [k](Node& n) {
        if (Tensor* g = parent_grad(n, 0)) {
            const std::size_t batch = n.value.shape[0];
            for (std::size_t b = 0; b < batch; ++b) {
                double dot = 0.0;
                for (std::size_t i = 0; i < k; ++i) dot += n.value[b * k + i] * n.grad[b * k + i];
                for (std::size_t i = 0; i < k; ++i)
                    (*g)[b * k + i] += n.value[b * k + i] * (n.grad[b * k + i] - dot);
            }
        }
    });
}

/// Supervised contrastive loss over unit-norm projections [B, D'].
/// For anchor i with positives P(i) (same label, excluding i) and candidates
/// A(i) (all but i):
///   l_i = -1/|P(i)| * Sum_{p in P(i)} log( exp(s_ip) / Sum_{a in A(i)} exp(s_ia) ),
///   s_ij = z_i . z_j / tau.
/// The loss is the mean of l_i over anchors with nonempty P(i); anchors
/// without positives contribute nothing, and a batch without any positive
/// pair yields 0.
inline Var supcon_loss(const Var& projections, const std::vector<std::size_t>& labels, double tau) {
    if (!(tau > 0.0)) throw ConfigError("supcon: tau must be > 0");
    require_rank(projections.value(), 2, "supcon projections");
    const std::size_t batch = projections.shape()[0], dim = projections.shape()[1];
    if (batch < 2) throw DimensionError("supcon: batch must contain at least 2 samples");
    if (labels.size() != batch) throw DimensionError("supcon: one label per row required");
    const auto& z = projections.value().data;

    Tensor sim({batch, batch});
    for (std::size_t i = 0; i < batch; ++i)
        for (std::size_t j = 0; j < batch; ++j) {
            double d = 0.0;
            for (std::size_t c = 0; c < dim; ++c) d += z[i * dim + c] * z[j * dim + c];
            sim[i * batch + j] = d / tau;
        }

    // coef[i][a] = d l_i / d s_ia  (softmax over A(i) minus the positive indicator / |P(i)|)
    Tensor coef({batch, batch});
    double total = 0.0;
    std::size_t anchors = 0;
    for (std::size_t i = 0; i < batch; ++i) {
        std::size_t npos = 0;
        for (std::size_t j = 0; j < batch; ++j) npos += (j != i && labels[j] == labels[i]) ? 1 : 0;
        if (npos == 0) continue;
        ++anchors;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < batch; ++a) {
            if (a != i) mx = std::max(mx, sim[i * batch + a]);
        }
        double zsum = 0.0;
        for (std::size_t a = 0; a < batch; ++a) {
            if (a != i) zsum += std::exp(sim[i * batch + a] - mx);
        }
        const double lse = mx + std::log(zsum);
        double pos_sum = 0.0;
        for (std::size_t p = 0; p < batch; ++p) {
            if (p != i && labels[p] == labels[i]) pos_sum += sim[i * batch + p];
        }
        total += lse - pos_sum / static_cast<double>(npos);
        for (std::size_t a = 0; a < batch; ++a) {
            if (a == i) continue;
            coef[i * batch + a] = std::exp(sim[i * batch + a] - lse) -
                                  (labels[a] == labels[i] ? 1.0 / static_cast<double>(npos) : 0.0);
        }
    }
    const double inv = anchors ? 1.0 / static_cast<double>(anchors) : 0.0;
    return make_result(Tensor({1}, total * inv), {projections}, [coef, batch, dim, inv, tau](Node& n) {
        Tensor* g = parent_grad(n, 0);
        if (!g || inv == 0.0) return;
        const auto& z = parent_value(n, 0).data;
        const double s = n.grad[0] * inv / tau;
        for (std::size_t i = 0; i < batch; ++i)
            for (std::size_t a = 0; a < batch; ++a) {
                const double c = coef[i * batch + a];
                if (c == 0.0) continue;
                for (std::size_t d = 0; d < dim; ++d) {
                    (*g)[i * dim + d] += s * c * z[a * dim + d];
                    (*g)[a * dim + d] += s * c * z[i * dim + d];
                }
            }
    });
}

/// Mean absolute difference over all cells.
inline Var l1_recon(const Var& a, const Var& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("l1_recon: shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    }
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) total += std::abs(a.value()[i] - b.value()[i]);
    const double inv = 1.0 / static_cast<double>(a.size());
    return make_result(Tensor({1}, total * inv), {a, b}, [inv](Node& n) {
        const auto& av = parent_value(n, 0).data;
        const auto& bv = parent_value(n, 1).data;
        Tensor* ga = parent_grad(n, 0);
        Tensor* gb = parent_grad(n, 1);
        for (std::size_t i = 0; i < av.size(); ++i) {
            const double d = av[i] - bv[i];
            const double sgn = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
            if (ga) (*ga)[i] += n.grad[0] * inv * sgn;
            if (gb) (*gb)[i] -= n.grad[0] * inv * sgn;
        }
    });
}

/// Classification term per the configured kind; MSE compares softmaxed
/// logits against one-hot targets.
inline Var classification_loss(const Var& logits, const std::vector<std::size_t>& labels, ClassificationKind kind) {
    return kind == ClassificationKind::ce ? ce_loss(logits, labels) : mse_class_loss(softmax(logits), labels);
}

struct LossBreakdown {
    double classification = 0.0;
    double reconstruction = 0.0;
    double contrastive = 0.0;
    double total = 0.0;
    double beta = 0.0;
    double gamma = 0.0;
};

struct LossParts {
    Var classification;
    Var reconstruction; ///< may be undefined (no decoder)
    Var contrastive;    ///< may be undefined
};

struct TotalLoss {
    Var total;
    LossBreakdown breakdown;
};

/// alpha * classification + beta(epoch) * reconstruction + gamma(epoch) * contrastive.
inline TotalLoss total_loss(const LossParts& parts, const LossWeights& w, double epoch) {
    TotalLoss out;
    auto& bd = out.breakdown;
    bd.beta = schedule_beta(epoch, w);
    bd.gamma = schedule_gamma(epoch, w);
    std::vector<Var> terms;
    std::vector<double> coeffs;
    auto add = [&](const Var& v, double c, double& slot) {
        if (!v.defined()) return;
        slot = v.item();
        if (!std::isfinite(slot)) throw std::runtime_error("total_loss: non-finite loss term");
        terms.push_back(v);
        coeffs.push_back(c);
    };
    add(parts.classification, w.alpha, bd.classification);
    add(parts.reconstruction, bd.beta, bd.reconstruction);
    add(parts.contrastive, bd.gamma, bd.contrastive);
    bd.total = w.alpha * bd.classification + bd.beta * bd.reconstruction + bd.gamma * bd.contrastive;
    out.total = terms.empty() ? Var::constant(Tensor({1}, 0.0)) : ops::weighted_sum(terms, coeffs);
    return out;
}

} // namespace mdn
