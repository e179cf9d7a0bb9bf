#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "mdn/error.hpp"

namespace mdn::stats {

class StatsError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline double mean(const std::vector<double>& v) {
    if (v.empty()) throw StatsError("mean of an empty sample");
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Sample variance (n - 1 denominator).
inline double sample_variance(const std::vector<double>& v) {
    if (v.size() < 2) throw StatsError("sample variance needs n >= 2");
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size() - 1);
}

inline void check_finite(const std::vector<double>& v, const char* what) {
    for (double x : v) {
        if (!std::isfinite(x)) throw StatsError(std::string(what) + ": values must be finite");
    }
}

inline void check_paired(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw StatsError("paired samples must have equal length");
    check_finite(a, "paired samples");
    check_finite(b, "paired samples");
}

struct EffectSize {
    double d = 0.0;
    double se = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    int df = 0;
    /// Zero pooled variance with unequal means; d is +/-inf.
    bool infinite = false;
};

inline double t_quantile(double p, double df) {
    return boost::math::quantile(boost::math::students_t_distribution<double>(df), p);
}

/// Cohen's d with pooled sample variance, SE_d = sqrt((n1+n2)/(n1 n2) + d^2/(2(n1+n2))),
/// and a 95% CI d +/- t_{0.975, n1+n2-2} SE_d.
inline EffectSize cohens_d(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() < 2 || b.size() < 2) throw StatsError("cohens_d: both samples need n >= 2");
    check_finite(a, "cohens_d");
    check_finite(b, "cohens_d");
    const double n1 = static_cast<double>(a.size()), n2 = static_cast<double>(b.size());
    const double diff = mean(a) - mean(b);
    const double pooled =
        std::sqrt(((n1 - 1.0) * sample_variance(a) + (n2 - 1.0) * sample_variance(b)) / (n1 + n2 - 2.0));
    EffectSize e;
    e.df = static_cast<int>(a.size() + b.size() - 2);
    if (pooled == 0.0) {
        if (diff != 0.0) {
            const double inf = std::numeric_limits<double>::infinity();
            e.infinite = true;
            e.d = diff > 0.0 ? inf : -inf;
            e.se = inf;
            e.ci_low = -inf;
            e.ci_high = inf;
            return e;
        }
        e.d = 0.0;
    } else {
        e.d = diff / pooled;
    }
    e.se = std::sqrt((n1 + n2) / (n1 * n2) + e.d * e.d / (2.0 * (n1 + n2)));
    const double half = t_quantile(0.975, e.df) * e.se;
    e.ci_low = e.d - half;
    e.ci_high = e.d + half;
    return e;
}

/// (mean_a - mean_b) / |mean_b|.
inline double relative_improvement(double mean_a, double mean_b) {
    if (mean_b == 0.0) throw StatsError("relative_improvement: undefined for mean_b = 0");
    return (mean_a - mean_b) / std::abs(mean_b);
}

enum class Agreement { none, majority, complete };

inline const char* to_string(Agreement a) {
    return a == Agreement::complete ? "Complete" : (a == Agreement::majority ? "Majority" : "None");
}

struct AgreementResult {
    Agreement level = Agreement::none;
    int direction = 0; ///< +1 when a > b on the agreeing seeds, -1 when a < b
};

/// Sign pattern of a_i - b_i: Complete if all strictly one sign, Majority if
/// at least ceil(2n/3) share one strict sign. Zero differences agree with neither.
inline AgreementResult seed_agreement(const std::vector<double>& a, const std::vector<double>& b) {
    check_paired(a, b);
    const std::size_t n = a.size();
    std::size_t pos = 0, neg = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = a[i] - b[i];
        pos += d > 0.0 ? 1 : 0;
        neg += d < 0.0 ? 1 : 0;
    }
    if (n == 0) return {};
    const std::size_t need = (2 * n + 2) / 3;
    if (pos == n) return {Agreement::complete, 1};
    if (neg == n) return {Agreement::complete, -1};
    if (pos >= need) return {Agreement::majority, 1};
    if (neg >= need) return {Agreement::majority, -1};
    return {};
}

enum class EvidenceLevel { strong, moderate, weak, minimal };

inline const char* to_string(EvidenceLevel e) {
    switch (e) {
    case EvidenceLevel::strong: return "Strong";
    case EvidenceLevel::moderate: return "Moderate";
    case EvidenceLevel::weak: return "Weak";
    case EvidenceLevel::minimal: return "Minimal";
    }
    return "";
}

/// Level from effect size and relative improvement under the given agreement.
/// |d| >= 0.5 and rel >= 2% is Strong, either one Moderate, |d| >= 0.3 Weak,
/// |d| >= 0.2 Minimal; Majority agreement moves one level down.
inline std::optional<EvidenceLevel> classify_evidence(Agreement agreement, double d, double rel) {
    if (agreement == Agreement::none) return std::nullopt;
    const double ad = std::abs(d);
    int level;
    if (ad >= 0.5 && rel >= 0.02) level = 0;
    else if (ad >= 0.5 || rel >= 0.02) level = 1;
    else if (ad >= 0.3) level = 2;
    else if (ad >= 0.2) level = 3;
    else return std::nullopt;
    if (agreement == Agreement::majority) ++level;
    if (level > 3) return std::nullopt;
    return static_cast<EvidenceLevel>(level);
}

struct EvidenceAssessment {
    AgreementResult agreement;
    EffectSize effect;
    double relative = 0.0;
    std::optional<EvidenceLevel> level; ///< set only when a is superior to b
};

/// Evidence that configuration a is superior to b. Only a positive agreement
/// direction can yield a level, so (a, b) and (b, a) are never both rated.
inline EvidenceAssessment assess_evidence(const std::vector<double>& a, const std::vector<double>& b) {
    check_paired(a, b);
    EvidenceAssessment out;
    out.agreement = seed_agreement(a, b);
    out.effect = cohens_d(a, b);
    const double ma = mean(a), mb = mean(b);
    if (mb != 0.0) out.relative = relative_improvement(ma, mb);
    else out.relative = ma > mb ? std::numeric_limits<double>::infinity() : (ma < mb ? -std::numeric_limits<double>::infinity() : 0.0);
    if (out.agreement.direction > 0) out.level = classify_evidence(out.agreement.level, out.effect.d, out.relative);
    return out;
}

/// Square 0/1 matrix: w[i][j] = 1 iff i shows evidence of superiority over j.
using WinLossMatrix = std::vector<std::vector<int>>;

/// sum_j W_ij / sum_j (W_ij + W_ji); undefined with no decisive comparisons.
inline std::optional<double> win_rate(const WinLossMatrix& w, std::size_t i) {
    double wins = 0.0, total = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
        wins += w[i][j];
        total += w[i][j] + w[j][i];
    }
    if (total == 0.0) return std::nullopt;
    return wins / total;
}

struct BayesPosterior {
    double p_left = 0.0;
    double p_rope = 0.0;
    double p_right = 0.0;

    bool superior() const { return p_right > 0.85; }
};

/// Paired Student-t posterior of the mean difference of a_i - b_i (df = n - 1,
/// location = mean, scale = sd / sqrt(n)) split at -rope and +rope. With zero
/// variance all mass sits in the region containing the mean difference.
inline BayesPosterior bayes_rope(const std::vector<double>& a, const std::vector<double>& b, double rope = 0.01) {
    check_paired(a, b);
    if (a.size() < 2) throw StatsError("bayes_rope: need n >= 2 paired values");
    if (!(rope >= 0.0)) throw StatsError("bayes_rope: rope must be >= 0");
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
    const double loc = mean(d);
    const double sd = std::sqrt(sample_variance(d));
    BayesPosterior p;
    if (sd == 0.0) {
        if (loc < -rope) p.p_left = 1.0;
        else if (loc > rope) p.p_right = 1.0;
        else p.p_rope = 1.0;
        return p;
    }
    const double scale = sd / std::sqrt(static_cast<double>(d.size()));
    const boost::math::students_t_distribution<double> t(static_cast<double>(d.size() - 1));
    p.p_left = boost::math::cdf(t, (-rope - loc) / scale);
    p.p_right = boost::math::cdf(boost::math::complement(t, (rope - loc) / scale));
    p.p_rope = std::max(0.0, 1.0 - p.p_left - p.p_right);
    return p;
}

/// Ranks of the values (1-based), ties sharing the average rank.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
    std::vector<double> rank(n);
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = 0.5 * static_cast<double>(i + j) + 1.0;
        i = j + 1;
    }
    return rank;
}

struct WilcoxonResult {
    double p_value = 1.0;
    double statistic = 0.0; ///< sum of ranks of positive differences
    std::size_t n_used = 0; ///< nonzero differences
};

/// Two-sided exact signed-rank test: zero differences are dropped, tied
/// magnitudes get average ranks, and the null distribution enumerates all
/// 2^n sign assignments. p = min(1, 2 * smaller tail).
inline WilcoxonResult wilcoxon_exact(const std::vector<double>& a, const std::vector<double>& b) {
    check_paired(a, b);
    if (a.empty()) throw StatsError("wilcoxon_exact: need n >= 1");
    std::vector<double> mags;
    std::vector<bool> positive;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        if (d == 0.0) continue;
        mags.push_back(std::abs(d));
        positive.push_back(d > 0.0);
    }
    WilcoxonResult r;
    r.n_used = mags.size();
    if (mags.empty()) return r;
    if (mags.size() > 24) throw StatsError("wilcoxon_exact: enumeration limited to 24 nonzero differences");
    const auto rank = average_ranks(mags);
    for (std::size_t i = 0; i < rank.size(); ++i) r.statistic += positive[i] ? rank[i] : 0.0;
    const std::uint64_t total = std::uint64_t{1} << rank.size();
    std::uint64_t ge = 0, le = 0;
    for (std::uint64_t mask = 0; mask < total; ++mask) {
        double w = 0.0;
        for (std::size_t i = 0; i < rank.size(); ++i) {
            if (mask >> i & 1U) w += rank[i];
        }
        ge += w >= r.statistic - 1e-9 ? 1 : 0;
        le += w <= r.statistic + 1e-9 ? 1 : 0;
    }
    r.p_value = std::min(1.0, 2.0 * static_cast<double>(std::min(ge, le)) / static_cast<double>(total));
    return r;
}

struct PermutationResult {
    double p_value = 1.0;
    double statistic = 0.0; ///< mean(a) - mean(b)
    bool exact = true;
    std::uint64_t resamples = 0; ///< partitions enumerated or drawn
};

inline double binomial(std::size_t n, std::size_t k) {
    double r = 1.0;
    for (std::size_t i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
    return std::round(r);
}

/// Two-sample permutation test of |mean(a) - mean(b)|: exact over all
/// C(n1 + n2, n1) relabelings when that count is at most 1e5, otherwise
/// `n_resamples` random relabelings with p = (hits + 1) / (n_resamples + 1).
inline PermutationResult permutation_test(const std::vector<double>& a, const std::vector<double>& b,
                                          std::size_t n_resamples = 10000, std::uint64_t seed = 0) {
    if (a.empty() || b.empty()) throw StatsError("permutation_test: both samples must be nonempty");
    check_finite(a, "permutation_test");
    check_finite(b, "permutation_test");
    std::vector<double> pooled(a);
    pooled.insert(pooled.end(), b.begin(), b.end());
    const std::size_t n1 = a.size(), n = pooled.size();
    const double total_sum = std::accumulate(pooled.begin(), pooled.end(), 0.0);
    PermutationResult r;
    r.statistic = mean(a) - mean(b);
    const double observed = std::abs(r.statistic);
    const double tol = 1e-12 * std::max(1.0, observed);
    auto stat_of = [&](double sum_a) {
        return std::abs(sum_a / static_cast<double>(n1) - (total_sum - sum_a) / static_cast<double>(n - n1));
    };
    if (binomial(n, n1) <= 1e5) {
        std::vector<std::size_t> idx(n1);
        std::iota(idx.begin(), idx.end(), 0);
        std::uint64_t hits = 0, count = 0;
        while (true) {
            double s = 0.0;
            for (auto i : idx) s += pooled[i];
            hits += stat_of(s) >= observed - tol ? 1 : 0;
            ++count;
            std::size_t k = n1;
            while (k > 0 && idx[k - 1] == n - n1 + k - 1) --k;
            if (k == 0) break;
            ++idx[k - 1];
            for (std::size_t j = k; j < n1; ++j) idx[j] = idx[j - 1] + 1;
        }
        r.p_value = static_cast<double>(hits) / static_cast<double>(count);
        r.resamples = count;
        return r;
    }
    if (n_resamples == 0) throw StatsError("permutation_test: n_resamples must be >= 1");
    std::mt19937_64 rng(seed);
    std::vector<double> work = pooled;
    std::uint64_t hits = 0;
    for (std::size_t s = 0; s < n_resamples; ++s) {
        std::shuffle(work.begin(), work.end(), rng);
        const double sum_a = std::accumulate(work.begin(), work.begin() + static_cast<std::ptrdiff_t>(n1), 0.0);
        hits += stat_of(sum_a) >= observed - tol ? 1 : 0;
    }
    r.exact = false;
    r.resamples = n_resamples;
    r.p_value = static_cast<double>(hits + 1) / static_cast<double>(n_resamples + 1);
    return r;
}

inline double bonferroni(double p, std::size_t m) {
    if (!(p >= 0.0 && p <= 1.0)) throw StatsError("bonferroni: p must lie in [0, 1]");
    if (m < 1) throw StatsError("bonferroni: m must be >= 1");
    return std::min(1.0, p * static_cast<double>(m));
}

} // namespace mdn::stats
