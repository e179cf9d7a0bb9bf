#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mdn/ops.hpp"
#include "mdn/params.hpp"

namespace mdn {

/// Ternary C x T mask: 0 keeps x, 1 takes x_hat, -1 takes x_dec.
struct MaskMatrix {
    std::size_t channels = 0;
    std::size_t timepoints = 0;
    std::vector<std::int8_t> cells;

    std::int8_t at(std::size_t c, std::size_t t) const { return cells[c * timepoints + t]; }
};

enum class RatioMode { fixed, random };

struct MixupConfig {
    /// -1 temporal masked mixup at the input; 0 weighted average at the input;
    /// 1-3 weighted average after encoder block 1-3; 4 after attention pooling.
    int layer = -1;
    double flip_prob = 0.01;
    std::size_t window_min = 5;
    std::size_t window_max = 0; ///< 0 = T/8 (at least window_min)
    RatioMode ratio_mode = RatioMode::fixed;
    std::size_t warmup_epochs = 0;

    std::size_t resolved_window_max(std::size_t timepoints) const {
        if (window_max) return window_max;
        return std::max(window_min, timepoints / 8);
    }

    void validate(std::size_t timepoints) const {
        if (layer < -1 || layer > 4) throw ConfigError("mixup_layer must be in {-1, 0, 1, 2, 3, 4}, got " + std::to_string(layer));
        if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) throw ConfigError("flip_prob must lie in [0, 1]");
        const std::size_t wmax = resolved_window_max(timepoints);
        if (window_min < 1 || window_min > wmax || wmax > timepoints) {
            throw ConfigError("mixup windows need 1 <= window_min <= window_max <= T (got " + std::to_string(window_min) +
                              ", " + std::to_string(wmax) + ", T=" + std::to_string(timepoints) + ")");
        }
    }
};

inline const char* to_string(RatioMode m) { return m == RatioMode::fixed ? "fixed" : "random"; }

inline double sample_beta(double a, double b, Rng& rng) {
    std::gamma_distribution<double> ga(a, 1.0), gb(b, 1.0);
    const double x = ga(rng), y = gb(rng);
    // Both draws can underflow to zero for small shape parameters.
    if (x + y == 0.0) return std::bernoulli_distribution(a / (a + b))(rng) ? 1.0 : 0.0;
    return x / (x + y);
}

/// Probability that a nonzero mask cell becomes -1 for one epoch: 0.5 for
/// the fixed ratio, a Beta(0.2, 0.2) draw for the random ratio.
inline double epoch_flip_ratio(const MixupConfig& cfg, Rng& rng) {
    return cfg.ratio_mode == RatioMode::fixed ? 0.5 : sample_beta(0.2, 0.2, rng);
}

struct MaskWindow {
    std::size_t channel;
    std::size_t start;
    std::size_t length; ///< after clipping at T
};

struct TemporalMaskDraw {
    MaskMatrix mask;
    std::vector<MaskWindow> windows;
};

/// Seeds cells with probability p (row-major scan), expands each seed
/// rightward to a window of uniform length in [window_min, window_max]
/// clipped at T, then flips each covered cell to -1 with probability
/// `negative_ratio`.
inline TemporalMaskDraw build_temporal_mask_detailed(std::size_t channels, std::size_t timepoints,
                                                     const MixupConfig& cfg, Rng& rng, double negative_ratio) {
    cfg.validate(timepoints);
    TemporalMaskDraw draw;
    draw.mask.channels = channels;
    draw.mask.timepoints = timepoints;
    draw.mask.cells.assign(channels * timepoints, 0);
    std::bernoulli_distribution seed(cfg.flip_prob);
    std::uniform_int_distribution<std::size_t> length(cfg.window_min, cfg.resolved_window_max(timepoints));
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t t = 0; t < timepoints; ++t) {
            if (seed(rng)) draw.windows.push_back({c, t, 0});
        }
    for (auto& w : draw.windows) {
        const std::size_t len = length(rng);
        w.length = std::min(len, timepoints - w.start);
        for (std::size_t t = w.start; t < w.start + w.length; ++t) draw.mask.cells[w.channel * timepoints + t] = 1;
    }
    std::bernoulli_distribution negative(negative_ratio);
    for (auto& cell : draw.mask.cells) {
        if (cell == 1 && negative(rng)) cell = -1;
    }
    return draw;
}

inline MaskMatrix build_temporal_mask(std::size_t channels, std::size_t timepoints, const MixupConfig& cfg, Rng& rng,
                                      double negative_ratio = 0.5) {
    return build_temporal_mask_detailed(channels, timepoints, cfg, rng, negative_ratio).mask;
}

/// Cellwise source selection for one trial (tensors of shape [C, T] or
/// [1, C, T]).
inline Tensor apply_temporal_mixup(const Tensor& x, const Tensor& x_hat, const Tensor& x_dec, const MaskMatrix& mask) {
    if (x.shape != x_hat.shape || x.shape != x_dec.shape) throw DimensionError("temporal mixup: source shapes differ");
    if (mask.cells.size() != x.size() || x.shape.back() != mask.timepoints) {
        throw DimensionError("temporal mixup: mask shape " + std::to_string(mask.channels) + "x" +
                             std::to_string(mask.timepoints) + " does not match source " + shape_string(x.shape));
    }
    Tensor out(x.shape);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const auto m = mask.cells[i];
        out[i] = m == 0 ? x[i] : (m == 1 ? x_hat[i] : x_dec[i]);
    }
    return out;
}

enum class MixWeightMode { equal, random };

/// Equal weights, or a Dirichlet(0.2, ..., 0.2) draw.
inline std::vector<double> sample_mix_weights(MixWeightMode mode, std::size_t n_sources, Rng& rng) {
    if (n_sources != 2 && n_sources != 3) throw ConfigError("mix weights: n_sources must be 2 or 3");
    std::vector<double> w(n_sources, 1.0 / static_cast<double>(n_sources));
    if (mode == MixWeightMode::equal) return w;
    std::gamma_distribution<double> g(0.2, 1.0);
    double total = 0.0;
    for (auto& v : w) total += (v = g(rng));
    if (total == 0.0) {
        // All gamma draws underflowed: put the mass on one uniformly chosen source.
        std::fill(w.begin(), w.end(), 0.0);
        w[std::uniform_int_distribution<std::size_t>(0, n_sources - 1)(rng)] = 1.0;
        return w;
    }
    for (auto& v : w) v /= total;
    return w;
}

inline Tensor weighted_average_mix(const std::vector<Tensor>& sources, const std::vector<double>& weights) {
    if (sources.empty() || sources.size() != weights.size()) {
        throw DimensionError("weighted mix: need one weight per source");
    }
    Tensor out(sources[0].shape);
    for (std::size_t k = 0; k < sources.size(); ++k) {
        if (sources[k].shape != sources[0].shape) throw DimensionError("weighted mix: source shapes differ");
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += weights[k] * sources[k][i];
    }
    return out;
}

/// Activations of the three pathways at one integration point.
struct MixSources {
    Var x;
    Var x_hat;
    Var x_dec;
};

/// Per-epoch mixing state, drawn once at the start of each epoch.
struct MixupEpoch {
    std::size_t epoch = 0;
    double negative_ratio = 0.5;
};

inline MixupEpoch begin_mixup_epoch(const MixupConfig& cfg, std::size_t epoch, Rng& rng) {
    return {epoch, epoch_flip_ratio(cfg, rng)};
}

inline bool mixup_active(const MixupConfig& cfg, std::size_t epoch) { return epoch >= cfg.warmup_epochs; }

/// Mixes a batch of activations at `layer`. Identity (returns sources.x)
/// during warmup. Layer -1 draws one temporal mask per trial; other layers
/// draw one weight vector per trial.
inline Var mixup_at(int layer, const MixupEpoch& state, const MixupConfig& cfg, const MixSources& sources, Rng& rng) {
    if (layer < -1 || layer > 4) throw ConfigError("mixup_at: layer must be in {-1, 0, 1, 2, 3, 4}");
    if (layer != cfg.layer) throw ConfigError("mixup_at: layer does not match configuration");
    if (!mixup_active(cfg, state.epoch)) return sources.x;
    const Shape& shape = sources.x.shape();
    if (layer == 4 && shape.size() != 2) {
        throw DimensionError("mixup_at: layer 4 mixes latent vectors [B, D], got " + shape_string(shape));
    }
    if (layer <= 3 && shape.size() != 3) {
        throw DimensionError("mixup_at: layer " + std::to_string(layer) + " mixes [B, channels, time], got " +
                             shape_string(shape));
    }
    const std::size_t batch = shape[0];
    if (layer == -1) {
        const std::size_t c = shape[1], t = shape[2];
        std::vector<std::int8_t> cells;
        cells.reserve(sources.x.size());
        for (std::size_t b = 0; b < batch; ++b) {
            auto m = build_temporal_mask(c, t, cfg, rng, state.negative_ratio);
            cells.insert(cells.end(), m.cells.begin(), m.cells.end());
        }
        return ops::select_by_mask(cells, sources.x, sources.x_hat, sources.x_dec);
    }
    const auto mode = cfg.ratio_mode == RatioMode::fixed ? MixWeightMode::equal : MixWeightMode::random;
    std::vector<std::vector<double>> weights(batch);
    for (auto& w : weights) w = sample_mix_weights(mode, 3, rng);
    return ops::mix_rows({sources.x, sources.x_hat, sources.x_dec}, weights);
}

} // namespace mdn
