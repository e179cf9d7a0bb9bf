#include <gtest/gtest.h>

#include "mdn/diffusion.hpp"
#include "support.hpp"

using namespace mdn;
using mdn::testing::gradient_error;
using mdn::testing::random_tensor;

namespace {

DiffusionConfig small_diffusion() {
    DiffusionConfig c;
    c.n_steps = 10;
    c.hidden = 4;
    c.kernel = 3;
    return c;
}

} // namespace

TEST(NoiseSchedule, LinearBetasAndCumulativeProducts) {
    DiffusionConfig cfg;
    const NoiseSchedule s(cfg);
    ASSERT_EQ(s.steps(), 50u);
    EXPECT_DOUBLE_EQ(s.beta(1), 1e-4);
    EXPECT_DOUBLE_EQ(s.beta(50), 0.02);
    EXPECT_NEAR(s.beta(25), 1e-4 + 24.0 / 49.0 * (0.02 - 1e-4), 1e-15);
    double acc = 1.0;
    for (std::size_t t = 1; t <= 50; ++t) {
        acc *= 1.0 - s.beta(t);
        EXPECT_NEAR(s.alpha_bar(t), acc, 1e-15);
        EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
    }
    EXPECT_EQ(s.alpha_bar(0), 1.0);
    EXPECT_THROW(s.beta(0), ConfigError);
    EXPECT_THROW(s.beta(51), ConfigError);
}

TEST(NoiseSchedule, RejectsInvalidBetas) {
    EXPECT_THROW(NoiseSchedule(std::vector<double>{0.1, 0.05}), ConfigError);
    EXPECT_THROW(NoiseSchedule(std::vector<double>{1.0}), ConfigError);
    DiffusionConfig cfg;
    cfg.beta_start = 0.05;
    cfg.beta_end = 0.01;
    EXPECT_THROW(NoiseSchedule{cfg}, ConfigError);
    cfg = {};
    cfg.n_steps = 0;
    EXPECT_THROW(NoiseSchedule{cfg}, ConfigError);
}

TEST(ForwardNoise, ClosedForm) {
    Rng rng(1);
    const NoiseSchedule s(small_diffusion());
    const Tensor x = random_tensor({2, 3, 5}, rng), eps = random_tensor({2, 3, 5}, rng);
    for (std::size_t t = 1; t <= 10; ++t) {
        const Tensor xt = forward_noise(s, x, t, eps);
        const double ab = s.alpha_bar(t);
        for (std::size_t i = 0; i < x.size(); ++i)
            EXPECT_NEAR(xt[i], std::sqrt(ab) * x[i] + std::sqrt(1.0 - ab) * eps[i], 1e-15);
    }
    EXPECT_THROW(forward_noise(s, x, 1, Tensor({2, 3, 4})), DimensionError);
}

TEST(DdpmObjective, PerfectNoisePredictionGivesZeroLoss) {
    Rng rng(2);
    const NoiseSchedule s(small_diffusion());
    const Tensor x = random_tensor({3, 2, 4}, rng), noise = random_tensor({3, 2, 4}, rng);
    const std::vector<std::size_t> steps{1, 5, 10};
    Tensor xt(x.shape);
    std::vector<double> inv(3), ratio(3);
    for (std::size_t b = 0; b < 3; ++b) {
        const double ab = s.alpha_bar(steps[b]);
        inv[b] = 1.0 / std::sqrt(ab);
        ratio[b] = -std::sqrt(1.0 - ab) / std::sqrt(ab);
        for (std::size_t i = b * 8; i < (b + 1) * 8; ++i) xt[i] = std::sqrt(ab) * x[i] + std::sqrt(1.0 - ab) * noise[i];
    }
    const auto terms = ddpm_objective(Var::constant(noise), noise, x, xt, inv, ratio, 1.0);
    EXPECT_EQ(terms.eps_mse.item(), 0.0);
    EXPECT_NEAR(terms.aux_l1.item(), 0.0, 1e-12);
    EXPECT_NEAR(terms.total.item(), 0.0, 1e-12);
}

TEST(DdpmObjective, MatchesDirectFormulaAndGradients) {
    Rng rng(3);
    const DiffusionConfig cfg = small_diffusion();
    Diffusion d(cfg, 2, 3, rng);
    const Tensor x = random_tensor({3, 2, 6}, rng), noise = random_tensor({3, 2, 6}, rng);
    const std::vector<std::size_t> steps{2, 7, 10}, cond{0, 3, 2};
    const auto terms = d.train_loss(x, steps, noise, cond);

    Tensor xt(x.shape);
    for (std::size_t b = 0; b < 3; ++b) {
        const double ab = d.schedule().alpha_bar(steps[b]);
        for (std::size_t i = b * 12; i < (b + 1) * 12; ++i) xt[i] = std::sqrt(ab) * x[i] + std::sqrt(1.0 - ab) * noise[i];
    }
    const Tensor eps = d.predict_noise(Var::constant(xt), steps, cond).value();
    double mse = 0.0, l1 = 0.0;
    for (std::size_t b = 0; b < 3; ++b) {
        const double ab = d.schedule().alpha_bar(steps[b]);
        for (std::size_t i = b * 12; i < (b + 1) * 12; ++i) {
            mse += (eps[i] - noise[i]) * (eps[i] - noise[i]);
            const double x0 = (xt[i] - std::sqrt(1.0 - ab) * eps[i]) / std::sqrt(ab);
            l1 += std::abs(x0 - x[i]);
        }
    }
    EXPECT_NEAR(terms.eps_mse.item(), mse / 36.0, 1e-12);
    EXPECT_NEAR(terms.aux_l1.item(), l1 / 36.0, 1e-12);
    EXPECT_NEAR(terms.total.item(), mse / 36.0 + l1 / 36.0, 1e-12);

    std::vector<Var> params;
    for (auto& [n, p] : d.parameters()) params.push_back(p);
    EXPECT_LT(gradient_error([&] { return d.train_loss(x, steps, noise, cond).total; }, params), 1e-5);
}

TEST(Diffusion, NullConditionIgnoresLabels) {
    Rng rng(4);
    auto cfg = small_diffusion();
    Diffusion d(cfg, 2, 3, rng);
    EXPECT_EQ(d.null_condition(), 3u);
    const std::vector<std::size_t> labels{0, 2};
    EXPECT_EQ(d.conditions_for(2, nullptr), (std::vector<std::size_t>{3, 3}));
    EXPECT_EQ(d.conditions_for(2, &labels), labels);
    cfg.conditioning = Conditioning::none;
    Diffusion u(cfg, 2, 3, rng);
    EXPECT_EQ(u.conditions_for(2, &labels), (std::vector<std::size_t>{3, 3}));
}

TEST(Diffusion, ZeroStrengthIsIdentity) {
    Rng rng(5);
    auto cfg = small_diffusion();
    cfg.refine_strength = 0.0;
    Diffusion d(cfg, 2, 3, rng);
    const Tensor x = random_tensor({2, 2, 5}, rng);
    EXPECT_EQ(d.denoise(x, nullptr, rng).data, x.data);
}

TEST(Diffusion, DenoiseIsSeedDeterministicAndShapePreserving) {
    Rng init(6);
    Diffusion d(small_diffusion(), 2, 3, init);
    const Tensor x = random_tensor({3, 2, 7}, init);
    Rng a(10), b(10), c(11);
    const Tensor ya = d.denoise(x, nullptr, a), yb = d.denoise(x, nullptr, b), yc = d.denoise(x, nullptr, c);
    EXPECT_EQ(ya.shape, x.shape);
    EXPECT_EQ(ya.data, yb.data);
    EXPECT_NE(ya.data, yc.data);
    for (double v : ya.data) EXPECT_TRUE(std::isfinite(v));
    EXPECT_THROW(d.denoise(Tensor({1, 3, 7}), nullptr, a), DimensionError);
}

TEST(Diffusion, GraphChainEqualsPlainChain) {
    for (bool full : {false, true}) {
        Rng init(7);
        auto cfg = small_diffusion();
        cfg.full_sampling = full;
        Diffusion d(cfg, 2, 3, init);
        const Tensor x = random_tensor({2, 2, 6}, init);
        const std::vector<std::size_t> labels{1, 0};
        Rng a(3), b(3);
        const Tensor plain = d.denoise(x, &labels, a);
        const Tensor graph = d.denoise_graph(x, &labels, b).value();
        for (std::size_t i = 0; i < plain.size(); ++i) EXPECT_NEAR(graph[i], plain[i], 1e-12);
        EXPECT_EQ(a(), b());
    }
}

TEST(Diffusion, GraphChainGradientsMatchFiniteDifferences) {
    Rng init(8);
    auto cfg = small_diffusion();
    cfg.n_steps = 4;
    Diffusion d(cfg, 2, 2, init);
    const Tensor x = random_tensor({2, 2, 5}, init);
    const Tensor probe = random_tensor({2, 2, 5}, init);
    std::vector<Var> params;
    for (auto& [n, p] : d.parameters()) params.push_back(p);
    const double err = gradient_error(
        [&] {
            Rng r(1);
            return ops::sum_all(ops::mul(d.denoise_graph(x, nullptr, r), Var::constant(probe)));
        },
        params);
    EXPECT_LT(err, 1e-5);
}

TEST(Diffusion, SampledTrainingLossIsFiniteAndReproducible) {
    Rng init(9);
    Diffusion d(small_diffusion(), 2, 3, init);
    const Tensor x = random_tensor({4, 2, 6}, init);
    Rng a(2), b(2);
    const std::vector<std::size_t> labels{0, 1, 2, 0};
    const double la = d.train_loss(x, labels, a).total.item(), lb = d.train_loss(x, labels, b).total.item();
    EXPECT_TRUE(std::isfinite(la));
    EXPECT_EQ(la, lb);
}
