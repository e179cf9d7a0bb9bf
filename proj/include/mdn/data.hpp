#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "mdn/error.hpp"
#include "mdn/params.hpp"
#include "mdn/tensor.hpp"

namespace mdn {

/// One C x T signal window, channel-major, with its class and provenance.
struct LabeledTrial {
    std::size_t channels = 0;
    std::size_t timepoints = 0;
    std::vector<float> signal;
    std::size_t label = 0;
    std::string subject_id;
    std::string session_id; ///< empty when the source has no session metadata

    float at(std::size_t c, std::size_t t) const { return signal[c * timepoints + t]; }

    bool operator==(const LabeledTrial&) const = default;
};

/// Checks the per-trial invariants against the dataset dimensions.
inline void validate_trial(const LabeledTrial& trial, std::size_t channels, std::size_t timepoints,
                           std::size_t n_classes) {
    if (trial.channels != channels || trial.timepoints != timepoints ||
        trial.signal.size() != channels * timepoints) {
        throw DimensionError("trial of subject '" + trial.subject_id + "' has shape " +
                             std::to_string(trial.channels) + "x" + std::to_string(trial.timepoints) + ", expected " +
                             std::to_string(channels) + "x" + std::to_string(timepoints));
    }
    if (trial.label >= n_classes) {
        throw ConfigError("trial of subject '" + trial.subject_id + "' has label " + std::to_string(trial.label) +
                          " >= n_classes " + std::to_string(n_classes));
    }
    for (float v : trial.signal) {
        if (!std::isfinite(v)) throw FormatError("trial of subject '" + trial.subject_id + "' has non-finite samples");
    }
}

/// Stacks trials into a [B, C, T] tensor.
inline Tensor stack_signals(const std::vector<const LabeledTrial*>& trials) {
    if (trials.empty()) throw DimensionError("stack_signals: no trials");
    const std::size_t c = trials[0]->channels, t = trials[0]->timepoints;
    Tensor out({trials.size(), c, t});
    for (std::size_t b = 0; b < trials.size(); ++b) {
        if (trials[b]->channels != c || trials[b]->timepoints != t) {
            throw DimensionError("stack_signals: trials differ in shape");
        }
        std::copy(trials[b]->signal.begin(), trials[b]->signal.end(), out.data.begin() + b * c * t);
    }
    return out;
}

inline Tensor stack_signals(const std::vector<LabeledTrial>& trials) {
    std::vector<const LabeledTrial*> ptrs;
    ptrs.reserve(trials.size());
    for (const auto& t : trials) ptrs.push_back(&t);
    return stack_signals(ptrs);
}

struct SyntheticSpec {
    std::size_t n_subjects = 6;
    std::size_t n_classes = 4;
    std::size_t channels = 8;
    std::size_t timepoints = 64;
    std::size_t trials_per_subject_class = 20;
    double noise_sd = 0.5;
    double subject_shift_sd = 1.0;
    /// Oscillation frequency per class, in cycles per trial window.
    std::vector<double> base_freqs{2.0, 4.0, 6.0, 8.0};
    std::uint64_t seed = 7;

    void validate() const {
        if (n_subjects < 1 || n_classes < 1 || channels < 1 || timepoints < 1 || trials_per_subject_class < 1) {
            throw ConfigError("synthetic spec: all counts must be >= 1");
        }
        if (!(noise_sd >= 0.0) || !(subject_shift_sd >= 0.0)) {
            throw ConfigError("synthetic spec: noise_sd and subject_shift_sd must be >= 0");
        }
        if (base_freqs.size() != n_classes) {
            throw ConfigError("synthetic spec: base_freqs needs one frequency per class (" + std::to_string(n_classes) +
                              "), got " + std::to_string(base_freqs.size()));
        }
    }
};

inline std::string synthetic_subject_name(std::size_t index) { return "s" + std::to_string(index + 1); }

/// Class sinusoid + per-subject constant channel offset + white noise.
/// Trials are ordered subject-major, then class, then repetition.
inline std::vector<LabeledTrial> generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    std::normal_distribution<double> unit(0.0, 1.0);
    std::vector<LabeledTrial> out;
    out.reserve(spec.n_subjects * spec.n_classes * spec.trials_per_subject_class);
    const double two_pi = 2.0 * std::numbers::pi;
    for (std::size_t s = 0; s < spec.n_subjects; ++s) {
        std::vector<double> offset(spec.channels);
        for (auto& o : offset) o = spec.subject_shift_sd * unit(rng);
        for (std::size_t k = 0; k < spec.n_classes; ++k) {
            for (std::size_t r = 0; r < spec.trials_per_subject_class; ++r) {
                LabeledTrial trial;
                trial.channels = spec.channels;
                trial.timepoints = spec.timepoints;
                trial.label = k;
                trial.subject_id = synthetic_subject_name(s);
                trial.signal.resize(spec.channels * spec.timepoints);
                for (std::size_t c = 0; c < spec.channels; ++c)
                    for (std::size_t t = 0; t < spec.timepoints; ++t) {
                        const double phase = two_pi * spec.base_freqs[k] * static_cast<double>(t) /
                                             static_cast<double>(spec.timepoints);
                        double v = std::sin(phase) + offset[c];
                        if (spec.noise_sd > 0.0) v += spec.noise_sd * unit(rng);
                        trial.signal[c * spec.timepoints + t] = static_cast<float>(v);
                    }
                out.push_back(std::move(trial));
            }
        }
    }
    return out;
}

struct DatasetSplit {
    std::vector<LabeledTrial> train;
    std::vector<LabeledTrial> val;
    std::vector<LabeledTrial> test_seen;
    std::vector<LabeledTrial> test_unseen;
    std::vector<LabeledTrial> calibration_unseen;
};

struct SplitOptions {
    std::vector<std::string> unseen_subject_ids;
    double val_fraction = 0.15;
    double seen_test_fraction = 0.2;
    std::size_t calibration_per_subject = 8;
    std::uint64_t seed = 0;
};

namespace detail {

/// Picks `count` indices from a group so that labels are spread round-robin.
inline std::vector<std::size_t> stratified_order(const std::vector<LabeledTrial>& trials,
                                                 std::vector<std::size_t> group, Rng& rng) {
    std::shuffle(group.begin(), group.end(), rng);
    std::map<std::size_t, std::vector<std::size_t>> by_label;
    for (auto i : group) by_label[trials[i].label].push_back(i);
    std::vector<std::size_t> order;
    order.reserve(group.size());
    for (std::size_t round = 0; order.size() < group.size(); ++round) {
        for (auto& [label, members] : by_label) {
            if (round < members.size()) order.push_back(members[round]);
        }
    }
    return order;
}

/// Counts for (test, val) carved from a group of n trials, keeping at least one
/// trial for training.
inline std::pair<std::size_t, std::size_t> carve_counts(std::size_t n, double test_fraction, double val_fraction) {
    auto nt = static_cast<std::size_t>(std::llround(static_cast<double>(n) * test_fraction));
    auto nv = static_cast<std::size_t>(std::llround(static_cast<double>(n) * val_fraction));
    while (nt + nv >= n && nt + nv > 0) {
        if (nt >= nv) --nt;
        else --nv;
    }
    return {nt, nv};
}

} // namespace detail

/// Subject-disjoint seen/unseen split with per-unseen-subject calibration
/// trials and session-disjoint seen testing when session ids are present.
inline DatasetSplit make_splits(const std::vector<LabeledTrial>& trials, const SplitOptions& opt) {
    if (!(opt.val_fraction > 0.0 && opt.val_fraction < 1.0) ||
        !(opt.seen_test_fraction > 0.0 && opt.seen_test_fraction < 1.0)) {
        throw ConfigError("split: val_fraction and seen_test_fraction must lie in (0, 1)");
    }
    if (opt.unseen_subject_ids.empty()) throw ConfigError("split: unseen_subject_ids must be nonempty");

    std::map<std::string, std::vector<std::size_t>> by_subject;
    for (std::size_t i = 0; i < trials.size(); ++i) by_subject[trials[i].subject_id].push_back(i);
    const std::set<std::string> unseen(opt.unseen_subject_ids.begin(), opt.unseen_subject_ids.end());
    for (const auto& s : unseen) {
        if (!by_subject.count(s)) throw ConfigError("split: unseen subject '" + s + "' has no trials");
    }
    if (unseen.size() >= by_subject.size()) throw ConfigError("split: no seen subjects");

    Rng rng(opt.seed);
    std::vector<int> where(trials.size(), -1); // 0 train, 1 val, 2 test_seen, 3 test_unseen, 4 calibration

    for (const auto& [subject, members] : by_subject) {
        if (unseen.count(subject)) {
            if (members.size() < opt.calibration_per_subject) {
                throw ConfigError("split: unseen subject '" + subject + "' has " + std::to_string(members.size()) +
                                  " trials, fewer than calibration_per_subject=" +
                                  std::to_string(opt.calibration_per_subject));
            }
            auto order = detail::stratified_order(trials, members, rng);
            for (std::size_t k = 0; k < order.size(); ++k) where[order[k]] = k < opt.calibration_per_subject ? 4 : 3;
            continue;
        }

        std::set<std::string> sessions;
        for (auto i : members) {
            if (!trials[i].session_id.empty()) sessions.insert(trials[i].session_id);
        }
        std::vector<std::size_t> pool = members;
        if (!sessions.empty()) {
            // Whole sessions go to test_seen; at least one session stays for training.
            std::vector<std::string> order(sessions.begin(), sessions.end());
            std::shuffle(order.begin(), order.end(), rng);
            std::set<std::string> test_sessions;
            std::size_t taken = 0;
            const double target = opt.seen_test_fraction * static_cast<double>(members.size());
            for (std::size_t k = 0; k + 1 < order.size() && static_cast<double>(taken) < target; ++k) {
                test_sessions.insert(order[k]);
                for (auto i : members) taken += trials[i].session_id == order[k] ? 1 : 0;
            }
            pool.clear();
            for (auto i : members) {
                if (test_sessions.count(trials[i].session_id)) where[i] = 2;
                else pool.push_back(i);
            }
            std::map<std::size_t, std::vector<std::size_t>> by_label;
            for (auto i : pool) by_label[trials[i].label].push_back(i);
            for (auto& [label, group] : by_label) {
                std::shuffle(group.begin(), group.end(), rng);
                auto [nt, nv] = detail::carve_counts(group.size(), 0.0, opt.val_fraction);
                (void)nt;
                for (std::size_t k = 0; k < group.size(); ++k) where[group[k]] = k < nv ? 1 : 0;
            }
            continue;
        }

        std::map<std::size_t, std::vector<std::size_t>> by_label;
        for (auto i : pool) by_label[trials[i].label].push_back(i);
        for (auto& [label, group] : by_label) {
            std::shuffle(group.begin(), group.end(), rng);
            auto [nt, nv] = detail::carve_counts(group.size(), opt.seen_test_fraction, opt.val_fraction);
            for (std::size_t k = 0; k < group.size(); ++k) where[group[k]] = k < nt ? 2 : (k < nt + nv ? 1 : 0);
        }
    }

    DatasetSplit split;
    std::vector<LabeledTrial>* parts[5] = {&split.train, &split.val, &split.test_seen, &split.test_unseen,
                                           &split.calibration_unseen};
    for (std::size_t i = 0; i < trials.size(); ++i) parts[where[i]]->push_back(trials[i]);
    return split;
}

} // namespace mdn
