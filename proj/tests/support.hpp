#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "mdn/autograd.hpp"
#include "mdn/data.hpp"
#include "mdn/params.hpp"

namespace mdn::testing {

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(shape);
    for (auto& v : t.data) v = u(rng);
    return t;
}

/// Norm-wise relative error ||a - b|| / max(||a||, ||b||, floor).
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-8) {
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

/// Worst relative error between backprop gradients of the scalar `loss()`
/// and central finite differences, over every parameter in `params`.
inline double gradient_error(const std::function<Var()>& loss, std::vector<Var> params, double h = 1e-6) {
    for (auto& p : params) p.zero_grad();
    backward(loss());
    double worst = 0.0;
    for (auto& p : params) {
        std::vector<double> analytic = p.grad().data, numeric(p.size());
        auto& data = p.mutable_value().data;
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double keep = data[i];
            double up, down;
            {
                NoGradGuard g;
                data[i] = keep + h;
                up = loss().item();
                data[i] = keep - h;
                down = loss().item();
            }
            data[i] = keep;
            numeric[i] = (up - down) / (2.0 * h);
        }
        worst = std::max(worst, relative_error(analytic, numeric));
    }
    return worst;
}

/// Small split from the synthetic generator: subjects s1-s4 seen, s5-s6 unseen.
inline DatasetSplit tiny_split(std::size_t trials_per_class = 6, std::size_t timepoints = 32, std::uint64_t seed = 3) {
    SyntheticSpec spec;
    spec.trials_per_subject_class = trials_per_class;
    spec.timepoints = timepoints;
    spec.channels = 4;
    spec.seed = seed;
    SplitOptions opt;
    opt.unseen_subject_ids = {"s5", "s6"};
    opt.calibration_per_subject = 4;
    return make_splits(generate_synthetic(spec), opt);
}

} // namespace mdn::testing
