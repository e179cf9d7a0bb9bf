#pragma once

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mdn/ops.hpp"
#include "mdn/params.hpp"

namespace mdn {

enum class Conditioning { none, label };

struct DiffusionConfig {
    std::size_t n_steps = 50;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    Conditioning conditioning = Conditioning::label;
    std::size_t hidden = 16;
    std::size_t kernel = 5;
    /// Fraction of n_steps used as the starting noise level for refinement.
    double refine_strength = 0.5;
    /// Sample from pure noise at step n_steps instead of refining x.
    bool full_sampling = false;
    /// Scale on the stochastic term of each reverse step (0 = deterministic mean path).
    double reverse_noise = 1.0;
    double lambda_aux = 1.0;
    /// Probability of replacing the label with the null condition in training.
    double condition_dropout = 0.1;

    void validate() const {
        if (n_steps == 0) throw ConfigError("diffusion: n_steps must be >= 1");
        if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
            throw ConfigError("diffusion: need 0 < beta_start <= beta_end < 1");
        }
        if (!(refine_strength >= 0.0 && refine_strength <= 1.0)) {
            throw ConfigError("diffusion: refine_strength must lie in [0, 1]");
        }
        if (hidden == 0 || kernel == 0) throw ConfigError("diffusion: hidden and kernel must be >= 1");
        if (!(lambda_aux >= 0.0)) throw ConfigError("diffusion: lambda_aux must be >= 0");
    }
};

/// Linear beta schedule with cumulative products; steps are 1-indexed.
class NoiseSchedule {
public:
    NoiseSchedule() = default;

    explicit NoiseSchedule(const DiffusionConfig& cfg) : NoiseSchedule(linear_betas(cfg)) {}

    explicit NoiseSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
        double prev = 0.0, acc = 1.0;
        for (double b : betas_) {
            if (!(b >= 0.0 && b < 1.0) || b < prev) {
                throw ConfigError("noise schedule: betas must be nondecreasing in [0, 1)");
            }
            prev = b;
            acc *= 1.0 - b;
            alpha_bar_.push_back(acc);
        }
    }

    static std::vector<double> linear_betas(const DiffusionConfig& cfg) {
        cfg.validate();
        std::vector<double> b(cfg.n_steps);
        for (std::size_t i = 0; i < cfg.n_steps; ++i) {
            const double frac = cfg.n_steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(cfg.n_steps - 1);
            b[i] = cfg.beta_start + frac * (cfg.beta_end - cfg.beta_start);
        }
        return b;
    }

    std::size_t steps() const { return betas_.size(); }
    double beta(std::size_t t) const { return betas_.at(check(t) - 1); }
    double alpha(std::size_t t) const { return 1.0 - beta(t); }
    double alpha_bar(std::size_t t) const { return t == 0 ? 1.0 : alpha_bar_.at(check(t) - 1); }

    /// Variance of q(x_{t-1} | x_t, x_0).
    double posterior_variance(std::size_t t) const {
        return beta(t) * (1.0 - alpha_bar(t - 1)) / (1.0 - alpha_bar(t));
    }

    std::size_t check(std::size_t t) const {
        if (t < 1 || t > betas_.size()) {
            throw ConfigError("diffusion step " + std::to_string(t) + " outside [1, " + std::to_string(betas_.size()) + "]");
        }
        return t;
    }

private:
    std::vector<double> betas_;
    std::vector<double> alpha_bar_;
};

/// x_t = sqrt(abar_t) x + sqrt(1 - abar_t) noise.
inline Tensor forward_noise(const NoiseSchedule& schedule, const Tensor& x, std::size_t t, const Tensor& noise) {
    require_shape(noise, x.shape, "forward_noise noise");
    const double ab = schedule.alpha_bar(schedule.check(t));
    const double a = std::sqrt(ab), s = std::sqrt(1.0 - ab);
    Tensor out(x.shape);
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = a * x[i] + s * noise[i];
    return out;
}

inline Tensor gaussian_like(const Shape& shape, Rng& rng) {
    std::normal_distribution<double> unit(0.0, 1.0);
    Tensor t(shape);
    for (auto& v : t.data) v = unit(rng);
    return t;
}

struct DdpmTerms {
    Var total;
    Var eps_mse;
    Var aux_l1;
};

namespace detail {
inline Var abs_mean(const Var& r) {
    Tensor out({1});
    double s = 0.0;
    for (double v : r.value().data) s += std::abs(v);
    const double inv = 1.0 / static_cast<double>(r.size());
    out[0] = s * inv;
    return make_result(std::move(out), {r}, [inv](Node& n) {
        if (Tensor* g = parent_grad(n, 0)) {
            const auto& rv = parent_value(n, 0).data;
            for (std::size_t i = 0; i < g->size(); ++i) {
                const double sgn = rv[i] > 0.0 ? 1.0 : (rv[i] < 0.0 ? -1.0 : 0.0);
                (*g)[i] += n.grad[0] * sgn * inv;
            }
        }
    });
}
} // namespace detail

/// eps-MSE + lambda_aux * mean |x0_hat - x| where, per row b,
/// x0_hat = inv_sqrt_ab[b] * xt + ratio[b] * eps_hat
/// (inv_sqrt_ab = 1/sqrt(abar), ratio = -sqrt(1-abar)/sqrt(abar)).
inline DdpmTerms ddpm_objective(const Var& eps_hat, const Tensor& noise, const Tensor& x, const Tensor& xt,
                                const std::vector<double>& inv_sqrt_ab, const std::vector<double>& ratio,
                                double lambda_aux) {
    require_shape(eps_hat.value(), x.shape, "ddpm predicted noise");
    const std::size_t batch = x.shape.at(0), row = x.size() / batch;
    Var noise_v = Var::constant(noise);
    Var diff = ops::sub(eps_hat, noise_v);
    Var eps_mse = ops::mean_all(ops::mul(diff, diff));
    Tensor offset = xt;
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = b * row; i < (b + 1) * row; ++i) offset[i] = inv_sqrt_ab[b] * xt[i] - x[i];
    Var residual = ops::add_const(ops::scale_rows(eps_hat, ratio), offset);
    Var aux = detail::abs_mean(residual);
    Var total = lambda_aux == 0.0 ? eps_mse : ops::add(eps_mse, ops::scale(aux, lambda_aux));
    return {total, eps_mse, aux};
}

/// Conditional DDPM with a two-layer 1-D convolutional noise predictor.
/// Step and class embeddings are added to the hidden layer; the class table
/// carries one extra "null" row used when no label is supplied.
class Diffusion {
public:
    Diffusion() = default;

    Diffusion(const DiffusionConfig& cfg, std::size_t channels, std::size_t n_classes, Rng& rng)
        : cfg_(cfg), schedule_(cfg), channels_(channels), n_classes_(n_classes) {
        const std::size_t h = cfg_.hidden, k = cfg_.kernel;
        conv1_w = init_uniform({h, channels, k}, channels * k, rng);
        conv1_b = init_zeros({h});
        conv2_w = init_uniform({channels, h, k}, h * k, rng);
        conv2_b = init_zeros({channels});
        step_embed = init_uniform({cfg_.n_steps, h}, h, rng);
        class_embed = init_uniform({n_classes + 1, h}, h, rng);
    }

    const DiffusionConfig& config() const { return cfg_; }
    const NoiseSchedule& schedule() const { return schedule_; }
    std::size_t null_condition() const { return n_classes_; }

    /// Predicted noise for x_t [B, C, T] at per-row steps (1-indexed) and conditions.
    Var predict_noise(const Var& xt, const std::vector<std::size_t>& steps,
                      const std::vector<std::size_t>& conditions) const {
        if (xt.shape().size() != 3 || xt.shape()[1] != channels_) {
            throw DimensionError("diffusion: expected [B, " + std::to_string(channels_) + ", T], got " +
                                 shape_string(xt.shape()));
        }
        std::vector<std::size_t> step_rows(steps.size());
        for (std::size_t b = 0; b < steps.size(); ++b) step_rows[b] = schedule_.check(steps[b]) - 1;
        Var h = ops::conv1d(xt, conv1_w, conv1_b, 1);
        h = ops::add_row_embedding(h, step_embed, step_rows);
        if (cfg_.conditioning == Conditioning::label) h = ops::add_row_embedding(h, class_embed, conditions);
        return ops::conv1d(ops::tanh(h), conv2_w, conv2_b, 1);
    }

    /// Condition indices for a batch: labels when given, else the null row.
    std::vector<std::size_t> conditions_for(std::size_t batch, const std::vector<std::size_t>* labels) const {
        std::vector<std::size_t> c(batch, null_condition());
        if (labels && cfg_.conditioning == Conditioning::label) {
            if (labels->size() != batch) throw DimensionError("diffusion: one label per row required");
            c = *labels;
        }
        return c;
    }

    /// One reverse step x_t -> x_{t-1}.
    Tensor reverse_step(const Tensor& xt, std::size_t t, const std::vector<std::size_t>& conditions, Rng& rng,
                        double noise_scale) const {
        NoGradGuard guard;
        std::vector<std::size_t> steps(xt.shape[0], t);
        Tensor eps = predict_noise(Var::constant(xt), steps, conditions).value();
        const double beta = schedule_.beta(t);
        const double coef = beta / std::sqrt(1.0 - schedule_.alpha_bar(t));
        const double inv_sqrt_alpha = 1.0 / std::sqrt(schedule_.alpha(t));
        Tensor out(xt.shape);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = inv_sqrt_alpha * (xt[i] - coef * eps[i]);
        if (t > 1 && noise_scale > 0.0) {
            const double sigma = noise_scale * std::sqrt(schedule_.posterior_variance(t));
            Tensor z = gaussian_like(xt.shape, rng);
            for (std::size_t i = 0; i < out.size(); ++i) out[i] += sigma * z[i];
        }
        return out;
    }

    /// Refined signal x_hat for x [B, C, T]: noise x to the configured level,
    /// then run the reverse chain back to step 0. With full_sampling the chain
    /// starts from pure noise at the last step.
    Tensor denoise(const Tensor& x, const std::vector<std::size_t>* labels, Rng& rng) const {
        if (x.rank() != 3 || x.shape[1] != channels_) {
            throw DimensionError("denoise: expected [B, " + std::to_string(channels_) + ", T], got " +
                                 shape_string(x.shape));
        }
        const auto conditions = conditions_for(x.shape[0], labels);
        std::size_t start;
        Tensor xt;
        if (cfg_.full_sampling) {
            start = schedule_.steps();
            xt = gaussian_like(x.shape, rng);
        } else {
            start = static_cast<std::size_t>(std::llround(cfg_.refine_strength * static_cast<double>(schedule_.steps())));
            if (start == 0) return x;
            xt = forward_noise(schedule_, x, start, gaussian_like(x.shape, rng));
        }
        for (std::size_t t = start; t >= 1; --t) xt = reverse_step(xt, t, conditions, rng, cfg_.reverse_noise);
        return xt;
    }

    /// Same chain as denoise() (same random draws, same values) but recorded
    /// on the autograd tape so gradients reach the noise predictor.
    Var denoise_graph(const Tensor& x, const std::vector<std::size_t>* labels, Rng& rng) const {
        if (x.rank() != 3 || x.shape[1] != channels_) {
            throw DimensionError("denoise: expected [B, " + std::to_string(channels_) + ", T], got " +
                                 shape_string(x.shape));
        }
        const auto conditions = conditions_for(x.shape[0], labels);
        std::size_t start;
        Var xt;
        if (cfg_.full_sampling) {
            start = schedule_.steps();
            xt = Var::constant(gaussian_like(x.shape, rng));
        } else {
            start = static_cast<std::size_t>(std::llround(cfg_.refine_strength * static_cast<double>(schedule_.steps())));
            if (start == 0) return Var::constant(x);
            xt = Var::constant(forward_noise(schedule_, x, start, gaussian_like(x.shape, rng)));
        }
        for (std::size_t t = start; t >= 1; --t) {
            std::vector<std::size_t> steps(x.shape[0], t);
            Var eps = predict_noise(xt, steps, conditions);
            const double coef = schedule_.beta(t) / std::sqrt(1.0 - schedule_.alpha_bar(t));
            xt = ops::scale(ops::sub(xt, ops::scale(eps, coef)), 1.0 / std::sqrt(schedule_.alpha(t)));
            if (t > 1 && cfg_.reverse_noise > 0.0) {
                const double sigma = cfg_.reverse_noise * std::sqrt(schedule_.posterior_variance(t));
                Tensor z = gaussian_like(x.shape, rng);
                for (auto& v : z.data) v *= sigma;
                xt = ops::add(xt, Var::constant(std::move(z)));
            }
        }
        return xt;
    }

    /// Training loss for explicit steps and noise: eps-prediction MSE plus
    /// lambda_aux * mean |x0_hat - x|, where x0_hat is the one-step clean-signal
    /// estimate implied by the predicted noise.
    DdpmTerms train_loss(const Tensor& x, const std::vector<std::size_t>& steps, const Tensor& noise,
                          const std::vector<std::size_t>& conditions) const {
        require_shape(noise, x.shape, "ddpm noise");
        const std::size_t batch = x.shape.at(0), row = x.size() / batch;
        if (steps.size() != batch) throw DimensionError("ddpm: one step per row required");
        Tensor xt(x.shape);
        std::vector<double> inv_sqrt_ab(batch), ratio(batch);
        for (std::size_t b = 0; b < batch; ++b) {
            const double ab = schedule_.alpha_bar(schedule_.check(steps[b]));
            const double a = std::sqrt(ab), s = std::sqrt(1.0 - ab);
            inv_sqrt_ab[b] = 1.0 / a;
            ratio[b] = -s / a;
            for (std::size_t i = b * row; i < (b + 1) * row; ++i) xt[i] = a * x[i] + s * noise[i];
        }
        Var eps_hat = predict_noise(Var::constant(xt), steps, conditions);
        return ddpm_objective(eps_hat, noise, x, xt, inv_sqrt_ab, ratio, cfg_.lambda_aux);
    }

    /// Samples steps, noise, and (with dropout) conditions, then returns the loss.
    DdpmTerms train_loss(const Tensor& x, const std::vector<std::size_t>& labels, Rng& rng) const {
        const std::size_t batch = x.shape.at(0);
        std::uniform_int_distribution<std::size_t> step_dist(1, schedule_.steps());
        std::bernoulli_distribution drop(cfg_.condition_dropout);
        std::vector<std::size_t> steps(batch), conditions = conditions_for(batch, &labels);
        for (std::size_t b = 0; b < batch; ++b) {
            steps[b] = step_dist(rng);
            if (cfg_.conditioning == Conditioning::label && drop(rng)) conditions[b] = null_condition();
        }
        Tensor noise = gaussian_like(x.shape, rng);
        return train_loss(x, steps, noise, conditions);
    }

    NamedParameters parameters() const {
        return {{"conv1_w", conv1_w}, {"conv1_b", conv1_b},       {"conv2_w", conv2_w},
                {"conv2_b", conv2_b}, {"step_embed", step_embed}, {"class_embed", class_embed}};
    }

    Var conv1_w, conv1_b, conv2_w, conv2_b, step_embed, class_embed;

private:
    DiffusionConfig cfg_;
    NoiseSchedule schedule_;
    std::size_t channels_ = 0;
    std::size_t n_classes_ = 0;
};

} // namespace mdn
