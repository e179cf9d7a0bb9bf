#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "mdn/ops.hpp"
#include "mdn/params.hpp"

namespace mdn {

/// EEGNet-style encoder geometry. A temporal kernel of 0 means "a quarter of
/// that block's input time extent".
struct EncoderConfig {
    std::size_t channels = 8;
    std::size_t timepoints = 64;
    std::size_t temporal_filters = 8;  ///< F1
    std::size_t depth_multiplier = 2;  ///< spatial filters per temporal map
    std::size_t latent_dim = 64;       ///< D
    std::size_t projection_dim = 32;   ///< D'
    std::size_t pool1 = 4;
    std::size_t pool2 = 2;
    std::size_t pool3 = 2;
    std::size_t kernel1 = 0;
    std::size_t kernel2 = 0;
    std::size_t kernel3 = 0;

    std::size_t feature_channels() const { return temporal_filters * depth_multiplier; }
    std::size_t min_timepoints() const { return pool1 * pool2 * pool3; }
    std::size_t time1() const { return timepoints / pool1; }
    std::size_t time2() const { return time1() / pool2; }
    std::size_t time3() const { return time2() / pool3; }
    std::size_t k1() const { return kernel1 ? kernel1 : std::max<std::size_t>(1, timepoints / 4); }
    std::size_t k2() const { return kernel2 ? kernel2 : std::max<std::size_t>(1, time1() / 4); }
    std::size_t k3() const { return kernel3 ? kernel3 : std::max<std::size_t>(1, time2() / 4); }

    void validate() const {
        if (channels == 0 || temporal_filters == 0 || depth_multiplier == 0 || latent_dim == 0 ||
            projection_dim == 0 || pool1 == 0 || pool2 == 0 || pool3 == 0) {
            throw ConfigError("encoder: sizes and pooling factors must be >= 1");
        }
        if (timepoints < min_timepoints()) {
            throw DimensionError("encoder: T=" + std::to_string(timepoints) + " is below the minimum pooling extent " +
                                 std::to_string(min_timepoints()));
        }
    }
};

/// Block outputs dn1 [B, F2, T1], dn2 [B, F2, T2], dn3 [B, D, T3].
struct MultiScaleFeatures {
    Var dn1, dn2, dn3;

    const Var& block(int i) const { return i == 1 ? dn1 : (i == 2 ? dn2 : dn3); }
};

/// Block 1: temporal conv -> depthwise spatial conv -> ELU -> pool.
/// Blocks 2 and 3: separable conv (depthwise temporal + pointwise) -> ELU -> pool.
/// Attention pooling over dn3 yields z.
class Encoder {
public:
    Encoder() = default;

    Encoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg_.validate();
        const std::size_t f1 = cfg_.temporal_filters, f2 = cfg_.feature_channels(), d = cfg_.latent_dim;
        temporal_w = init_uniform({f1, cfg_.k1()}, cfg_.k1(), rng);
        temporal_b = init_zeros({f1});
        spatial_w = init_uniform({f2, cfg_.channels}, cfg_.channels, rng);
        spatial_b = init_zeros({f2});
        depth2_w = init_uniform({f2, 1, cfg_.k2()}, cfg_.k2(), rng);
        depth2_b = init_zeros({f2});
        point2_w = init_uniform({f2, f2, 1}, f2, rng);
        point2_b = init_zeros({f2});
        depth3_w = init_uniform({f2, 1, cfg_.k3()}, cfg_.k3(), rng);
        depth3_b = init_zeros({f2});
        point3_w = init_uniform({d, f2, 1}, f2, rng);
        point3_b = init_zeros({d});
        attn_w = init_uniform({d}, d, rng);
        attn_b = init_zeros({1});
    }

    const EncoderConfig& config() const { return cfg_; }

    void check_input(const Var& x) const {
        const Shape& s = x.shape();
        if (s.size() != 3 || s[1] != cfg_.channels || s[2] != cfg_.timepoints) {
            throw DimensionError("encode: expected [B, " + std::to_string(cfg_.channels) + ", " +
                                 std::to_string(cfg_.timepoints) + "], got " + shape_string(s));
        }
    }

    /// Applies block `index` (1..3) to the previous block's output (x for block 1).
    Var block(int index, const Var& input) const {
        switch (index) {
        case 1: {
            check_input(input);
            Var h = ops::temporal_conv(input, temporal_w, temporal_b);
            h = ops::spatial_depthwise(h, spatial_w, spatial_b);
            return ops::avg_pool_time(ops::elu(h), cfg_.pool1);
        }
        case 2: {
            Var h = ops::conv1d(input, depth2_w, depth2_b, cfg_.feature_channels());
            h = ops::conv1d(h, point2_w, point2_b, 1);
            return ops::avg_pool_time(ops::elu(h), cfg_.pool2);
        }
        case 3: {
            Var h = ops::conv1d(input, depth3_w, depth3_b, cfg_.feature_channels());
            h = ops::conv1d(h, point3_w, point3_b, 1);
            return ops::avg_pool_time(ops::elu(h), cfg_.pool3);
        }
        default: throw ConfigError("encoder: block index must be 1, 2 or 3");
        }
    }

    MultiScaleFeatures encode(const Var& x) const {
        MultiScaleFeatures f;
        f.dn1 = block(1, x);
        f.dn2 = block(2, f.dn1);
        f.dn3 = block(3, f.dn2);
        return f;
    }

    /// Continues the stack from the output of block `after` (0 = raw input).
    Var features_from(int after, const Var& h) const {
        Var out = h;
        for (int b = after + 1; b <= 3; ++b) out = block(b, out);
        return out;
    }

    Var attention_pool(const Var& dn3) const { return ops::attention_pool(dn3, attn_w, attn_b); }

    Tensor attention_weights(const Tensor& dn3) const {
        return ops::attention_weights(dn3, attn_w.value(), attn_b.value());
    }

    NamedParameters parameters() const {
        return {{"temporal_w", temporal_w}, {"temporal_b", temporal_b}, {"spatial_w", spatial_w},
                {"spatial_b", spatial_b},   {"depth2_w", depth2_w},     {"depth2_b", depth2_b},
                {"point2_w", point2_w},     {"point2_b", point2_b},     {"depth3_w", depth3_w},
                {"depth3_b", depth3_b},     {"point3_w", point3_w},     {"point3_b", point3_b},
                {"attn_w", attn_w},         {"attn_b", attn_b}};
    }

    Var temporal_w, temporal_b, spatial_w, spatial_b;
    Var depth2_w, depth2_b, point2_w, point2_b;
    Var depth3_w, depth3_b, point3_w, point3_b;
    Var attn_w, attn_b;

private:
    EncoderConfig cfg_;
};

/// One hidden ELU layer followed by L2 normalization.
class ProjectionHead {
public:
    ProjectionHead() = default;

    ProjectionHead(std::size_t in_dim, std::size_t out_dim, Rng& rng) {
        w1 = init_uniform({in_dim, in_dim}, in_dim, rng);
        b1 = init_zeros({in_dim});
        w2 = init_uniform({out_dim, in_dim}, in_dim, rng);
        b2 = init_zeros({out_dim});
    }

    /// Pre-normalization output.
    Var raw(const Var& z) const { return ops::linear(ops::elu(ops::linear(z, w1, b1)), w2, b2); }

    Var project(const Var& z) const { return ops::l2_normalize_rows(raw(z)); }

    NamedParameters parameters() const { return {{"w1", w1}, {"b1", b1}, {"w2", w2}, {"b2", b2}}; }

    Var w1, b1, w2, b2;
};

// --- Subject-wise latent normalization -------------------------------------

struct LatentMoments {
    std::vector<double> mean;
    std::vector<double> sd;

    bool operator==(const LatentMoments&) const = default;
};

struct SubjectStats {
    std::map<std::string, LatentMoments> subjects;
    double epsilon = 1e-5;

    bool contains(const std::string& s) const { return subjects.count(s) != 0; }
};

enum class StatsMode { seen, unseen };

inline const char* to_string(StatsMode m) { return m == StatsMode::seen ? "seen" : "unseen"; }

/// Per-subject mean and population standard deviation, sd clamped below by eps.
inline SubjectStats fit_subject_stats(const std::map<std::string, std::vector<std::vector<double>>>& groups,
                                      double epsilon = 1e-5) {
    if (!(epsilon > 0.0)) throw ConfigError("fit_subject_stats: epsilon must be > 0");
    SubjectStats stats;
    stats.epsilon = epsilon;
    for (const auto& [subject, latents] : groups) {
        if (latents.size() < 2) {
            throw ConfigError("fit_subject_stats: subject '" + subject + "' has " + std::to_string(latents.size()) +
                              " latent(s); at least 2 are required");
        }
        const std::size_t d = latents[0].size();
        LatentMoments m{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
        for (const auto& z : latents) {
            if (z.size() != d) throw DimensionError("fit_subject_stats: latents of subject '" + subject + "' differ in length");
            for (std::size_t i = 0; i < d; ++i) m.mean[i] += z[i];
        }
        const double n = static_cast<double>(latents.size());
        for (auto& v : m.mean) v /= n;
        for (const auto& z : latents)
            for (std::size_t i = 0; i < d; ++i) m.sd[i] += (z[i] - m.mean[i]) * (z[i] - m.mean[i]);
        for (auto& v : m.sd) v = std::max(std::sqrt(v / n), epsilon);
        stats.subjects.emplace(subject, std::move(m));
    }
    return stats;
}

inline const LatentMoments& lookup_stats(const SubjectStats& stats, StatsMode mode, const std::string& subject) {
    auto it = stats.subjects.find(subject);
    if (it == stats.subjects.end()) {
        throw LookupError(mode == StatsMode::seen
                              ? "normalize_latent: unknown seen subject '" + subject + "'"
                              : "normalize_latent: no calibration statistics for unseen subject '" + subject + "'");
    }
    return it->second;
}

/// (z - mu_s) / sigma_s.
inline std::vector<double> normalize_latent(const std::vector<double>& z, const SubjectStats& stats, StatsMode mode,
                                            const std::string& subject) {
    const auto& m = lookup_stats(stats, mode, subject);
    if (m.mean.size() != z.size()) throw DimensionError("normalize_latent: latent length does not match statistics");
    std::vector<double> out(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = (z[i] - m.mean[i]) / m.sd[i];
    return out;
}

/// z_norm * sigma_s + mu_s.
inline std::vector<double> denormalize_latent(const std::vector<double>& z_norm, const SubjectStats& stats,
                                              StatsMode mode, const std::string& subject) {
    const auto& m = lookup_stats(stats, mode, subject);
    if (m.mean.size() != z_norm.size()) throw DimensionError("denormalize_latent: latent length does not match statistics");
    std::vector<double> out(z_norm.size());
    for (std::size_t i = 0; i < z_norm.size(); ++i) out[i] = z_norm[i] * m.sd[i] + m.mean[i];
    return out;
}

/// Batched, differentiable form: row b of z [B, D] uses subjects[b]'s moments.
inline Var normalize_latent_batch(const Var& z, const SubjectStats& stats, StatsMode mode,
                                  const std::vector<std::string>& subjects) {
    const std::size_t batch = z.shape().at(0), d = z.shape().at(1);
    if (subjects.size() != batch) throw DimensionError("normalize_latent_batch: one subject id per row required");
    Tensor mean({batch, d}), sd({batch, d});
    for (std::size_t b = 0; b < batch; ++b) {
        const auto& m = lookup_stats(stats, mode, subjects[b]);
        if (m.mean.size() != d) throw DimensionError("normalize_latent_batch: latent length does not match statistics");
        std::copy(m.mean.begin(), m.mean.end(), mean.data.begin() + b * d);
        std::copy(m.sd.begin(), m.sd.end(), sd.data.begin() + b * d);
    }
    return ops::standardize(z, mean, sd);
}

} // namespace mdn
