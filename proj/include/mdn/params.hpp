#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mdn/autograd.hpp"

namespace mdn {

using Rng = std::mt19937_64;

using NamedParameters = std::vector<std::pair<std::string, Var>>;

inline void append_prefixed(NamedParameters& out, const std::string& prefix, const NamedParameters& in) {
    for (const auto& [name, v] : in) out.emplace_back(prefix + name, v);
}

/// Uniform(-bound, bound) with bound = 1/sqrt(fan_in).
inline Var init_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = dist(rng);
    return Var::parameter(std::move(t));
}

inline Var init_zeros(Shape shape) { return Var::parameter(Tensor(std::move(shape))); }

inline void zero_grads(const NamedParameters& params) {
    for (auto [name, v] : params) v.zero_grad();
}

/// Adam with bias correction.
class Adam {
public:
    struct Options {
        double learning_rate = 1e-3;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double epsilon = 1e-8;
    };

    Adam(NamedParameters params, Options options) : params_(std::move(params)), options_(options) {
        for (const auto& [name, v] : params_) {
            m_.emplace_back(v.shape());
            v_.emplace_back(v.shape());
        }
    }

    void zero_grad() { zero_grads(params_); }

    void step() {
        ++steps_;
        const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
        const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
        for (std::size_t p = 0; p < params_.size(); ++p) {
            Var& param = params_[p].second;
            Tensor& value = param.mutable_value();
            const Tensor& g = param.grad();
            for (std::size_t i = 0; i < value.size(); ++i) {
                m_[p][i] = options_.beta1 * m_[p][i] + (1.0 - options_.beta1) * g[i];
                v_[p][i] = options_.beta2 * v_[p][i] + (1.0 - options_.beta2) * g[i] * g[i];
                const double mhat = m_[p][i] / c1;
                const double vhat = v_[p][i] / c2;
                value[i] -= options_.learning_rate * mhat / (std::sqrt(vhat) + options_.epsilon);
            }
        }
    }

    std::uint64_t steps() const { return steps_; }

private:
    NamedParameters params_;
    Options options_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    std::uint64_t steps_ = 0;
};

} // namespace mdn
