#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "mdn/tensor.hpp"

namespace mdn {

struct MetricReport {
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    std::optional<double> macro_auc; ///< absent when fewer than two classes occur in the truth
    std::vector<std::vector<std::size_t>> confusion; ///< [true][predicted]
    std::vector<std::string> warnings;
};

/// Metric names in reporting order.
inline const std::vector<std::string>& metric_names() {
    static const std::vector<std::string> names{"accuracy", "macro_f1", "macro_precision", "macro_recall", "macro_auc"};
    return names;
}

inline std::optional<double> metric_value(const MetricReport& r, const std::string& name) {
    if (name == "accuracy") return r.accuracy;
    if (name == "macro_f1") return r.macro_f1;
    if (name == "macro_precision") return r.macro_precision;
    if (name == "macro_recall") return r.macro_recall;
    if (name == "macro_auc") return r.macro_auc;
    return std::nullopt;
}

inline std::size_t argmax_row(const Tensor& scores, std::size_t row) {
    const std::size_t k = scores.shape[1];
    std::size_t best = 0;
    for (std::size_t i = 1; i < k; ++i) {
        if (scores[row * k + i] > scores[row * k + best]) best = i;
    }
    return best;
}

/// Area under the ROC curve of `scores` for positives vs negatives, via the
/// Mann-Whitney statistic with midranks for ties.
inline double binary_auc(const std::vector<double>& scores, const std::vector<bool>& positive) {
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    std::vector<double> rank(n);
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mid;
        i = j + 1;
    }
    double pos = 0.0, rank_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (positive[i]) {
            pos += 1.0;
            rank_sum += rank[i];
        }
    }
    const double neg = static_cast<double>(n) - pos;
    return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

/// Accuracy (fraction correct), macro precision/recall/F1 over the classes
/// that occur in the truth or the predictions, and macro one-vs-rest AUC
/// over classes present in the truth. `scores` is [N, K] (softmax outputs).
inline MetricReport compute_metrics(const std::vector<std::size_t>& truth, const Tensor& scores, std::size_t n_classes) {
    require_rank(scores, 2, "compute_metrics scores");
    const std::size_t n = truth.size();
    if (n == 0) throw DimensionError("compute_metrics: empty trial set");
    if (scores.shape[0] != n || scores.shape[1] != n_classes) {
        throw DimensionError("compute_metrics: scores shape " + shape_string(scores.shape) + " does not match " +
                             std::to_string(n) + " trials x " + std::to_string(n_classes) + " classes");
    }
    MetricReport r;
    r.confusion.assign(n_classes, std::vector<std::size_t>(n_classes, 0));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t p = argmax_row(scores, i);
        ++r.confusion[truth[i]][p];
        correct += p == truth[i] ? 1 : 0;
    }
    r.accuracy = static_cast<double>(correct) / static_cast<double>(n);

    std::size_t used = 0;
    for (std::size_t k = 0; k < n_classes; ++k) {
        std::size_t tp = r.confusion[k][k], fn = 0, fp = 0;
        for (std::size_t j = 0; j < n_classes; ++j) {
            if (j == k) continue;
            fn += r.confusion[k][j];
            fp += r.confusion[j][k];
        }
        if (tp + fn + fp == 0) continue;
        ++used;
        const double prec = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
        const double rec = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
        r.macro_precision += prec;
        r.macro_recall += rec;
        r.macro_f1 += prec + rec > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
    }
    r.macro_precision /= static_cast<double>(used);
    r.macro_recall /= static_cast<double>(used);
    r.macro_f1 /= static_cast<double>(used);

    std::vector<std::size_t> present;
    for (std::size_t k = 0; k < n_classes; ++k) {
        std::size_t count = 0;
        for (auto y : truth) count += y == k ? 1 : 0;
        if (count > 0 && count < n) present.push_back(k);
    }
    if (present.size() < 2) {
        r.warnings.emplace_back("macro_auc undefined: fewer than two classes present in the evaluated trials");
    } else {
        double acc = 0.0;
        std::vector<double> s(n);
        std::vector<bool> pos(n);
        for (auto k : present) {
            for (std::size_t i = 0; i < n; ++i) {
                s[i] = scores[i * n_classes + k];
                pos[i] = truth[i] == k;
            }
            acc += binary_auc(s, pos);
        }
        r.macro_auc = acc / static_cast<double>(present.size());
    }
    return r;
}

} // namespace mdn
