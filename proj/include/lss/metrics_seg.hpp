#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "lss/core.hpp"
#include "lss/pid_loss.hpp"

namespace lss {

struct SegScore {
    double dice = 0.0;
    double iou = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double specificity = 0.0;
};

namespace detail {

inline double safe_ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }

}  // namespace detail

// Count-based overlap scores. Both-empty masks score a perfect 1 for
// dice/iou/precision/recall; an empty side against a non-empty one scores 0
// where the denominator vanishes.
inline SegScore seg_score(const BinaryMask& pred, const BinaryMask& gt) {
    if (!pred.same_shape(gt)) throw InputError("seg_score: shape mismatch");
    const ConfusionCounts c = hard_confusion(pred, gt);
    SegScore s;
    if (c.tp == 0.0 && c.fp == 0.0 && c.fn == 0.0) {
        s.dice = s.iou = s.precision = s.recall = 1.0;
    } else {
        s.dice = detail::safe_ratio(2.0 * c.tp, 2.0 * c.tp + c.fp + c.fn);
        s.iou = detail::safe_ratio(c.tp, c.tp + c.fp + c.fn);
        s.precision = detail::safe_ratio(c.tp, c.tp + c.fp);
        s.recall = detail::safe_ratio(c.tp, c.tp + c.fn);
    }
    s.specificity = (c.tn == 0.0 && c.fp == 0.0) ? 1.0 : detail::safe_ratio(c.tn, c.tn + c.fp);
    return s;
}

// Symmetric Hausdorff distance, Euclidean on pixel centers. Both empty -> 0;
// exactly one empty -> +inf sentinel.
inline double hausdorff(const BinaryMask& a, const BinaryMask& b) {
    if (!a.same_shape(b)) throw InputError("hausdorff: shape mismatch");
    std::vector<std::pair<int, int>> pa, pb;
    for (int r = 0; r < a.height; ++r)
        for (int c = 0; c < a.width; ++c) {
            if (a.at(r, c)) pa.emplace_back(r, c);
            if (b.at(r, c)) pb.emplace_back(r, c);
        }
    if (pa.empty() && pb.empty()) return 0.0;
    if (pa.empty() || pb.empty()) return std::numeric_limits<double>::infinity();

    auto directed = [](const std::vector<std::pair<int, int>>& from,
                       const std::vector<std::pair<int, int>>& to) {
        double worst = 0.0;
        for (const auto& p : from) {
            double best = std::numeric_limits<double>::max();
            for (const auto& q : to) {
                const double dr = p.first - q.first;
                const double dc = p.second - q.second;
                best = std::min(best, dr * dr + dc * dc);
                if (best == 0.0) break;
            }
            worst = std::max(worst, best);
        }
        return std::sqrt(worst);
    };
    return std::max(directed(pa, pb), directed(pb, pa));
}

// Directed distances at a percentile (e.g. 95) instead of the max; the
// default full Hausdorff corresponds to percentile 100.
inline double hausdorff_percentile(const BinaryMask& a, const BinaryMask& b, double percentile) {
    if (!a.same_shape(b)) throw InputError("hausdorff_percentile: shape mismatch");
    if (!(percentile > 0.0) || percentile > 100.0)
        throw ParameterError("hausdorff_percentile: percentile must be in (0, 100]");
    std::vector<std::pair<int, int>> pa, pb;
    for (int r = 0; r < a.height; ++r)
        for (int c = 0; c < a.width; ++c) {
            if (a.at(r, c)) pa.emplace_back(r, c);
            if (b.at(r, c)) pb.emplace_back(r, c);
        }
    if (pa.empty() && pb.empty()) return 0.0;
    if (pa.empty() || pb.empty()) return std::numeric_limits<double>::infinity();

    auto directed = [percentile](const std::vector<std::pair<int, int>>& from,
                                 const std::vector<std::pair<int, int>>& to) {
        std::vector<double> dists;
        dists.reserve(from.size());
        for (const auto& p : from) {
            double best = std::numeric_limits<double>::max();
            for (const auto& q : to) {
                const double dr = p.first - q.first;
                const double dc = p.second - q.second;
                best = std::min(best, dr * dr + dc * dc);
            }
            dists.push_back(std::sqrt(best));
        }
        std::sort(dists.begin(), dists.end());
        const size_t idx = std::min(
            dists.size() - 1,
            static_cast<size_t>(std::ceil(percentile / 100.0 * dists.size())) - 1);
        return dists[idx];
    };
    return std::max(directed(pa, pb), directed(pb, pa));
}

// Per-class one-vs-rest scores over the three grades, with the confusion
// matrix indexed [true][pred]. Zero-denominator precision/recall is reported
// as 0 and flagged so macro averages stay total.
struct ClassReport {
    std::array<std::array<long, 3>, 3> confusion{};  // [true][pred], order A/BC/D
    std::array<double, 3> precision{};
    std::array<double, 3> recall{};
    std::array<double, 3> f1{};
    std::array<double, 3> specificity{};
    std::array<bool, 3> precision_defined{};
    std::array<bool, 3> recall_defined{};
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
    double accuracy = 0.0;
    long total = 0;
};

inline int grade_index(Grade g) {
    switch (g) {
        case Grade::A: return 0;
        case Grade::BC: return 1;
        case Grade::D: return 2;
    }
    return 0;
}

inline ClassReport classification_report(const std::vector<Grade>& pred,
                                         const std::vector<Grade>& truth) {
    if (pred.size() != truth.size())
        throw InputError("classification_report: length mismatch");
    if (pred.empty()) throw InputError("classification_report: empty input");

    ClassReport rep;
    rep.total = static_cast<long>(pred.size());
    for (size_t i = 0; i < pred.size(); ++i)
        rep.confusion[grade_index(truth[i])][grade_index(pred[i])] += 1;

    long trace = 0;
    for (int k = 0; k < 3; ++k) trace += rep.confusion[k][k];
    rep.accuracy = static_cast<double>(trace) / static_cast<double>(rep.total);

    for (int k = 0; k < 3; ++k) {
        long tp = rep.confusion[k][k];
        long pred_k = 0, true_k = 0;
        for (int j = 0; j < 3; ++j) {
            pred_k += rep.confusion[j][k];
            true_k += rep.confusion[k][j];
        }
        const long fp = pred_k - tp;
        const long fn = true_k - tp;
        const long tn = rep.total - tp - fp - fn;
        rep.precision_defined[k] = pred_k > 0;
        rep.recall_defined[k] = true_k > 0;
        rep.precision[k] = pred_k > 0 ? static_cast<double>(tp) / pred_k : 0.0;
        rep.recall[k] = true_k > 0 ? static_cast<double>(tp) / true_k : 0.0;
        rep.f1[k] = (rep.precision[k] + rep.recall[k]) > 0.0
                        ? 2.0 * rep.precision[k] * rep.recall[k] /
                              (rep.precision[k] + rep.recall[k])
                        : 0.0;
        rep.specificity[k] =
            (tn + fp) > 0 ? static_cast<double>(tn) / static_cast<double>(tn + fp) : 0.0;
    }
    rep.macro_precision = (rep.precision[0] + rep.precision[1] + rep.precision[2]) / 3.0;
    rep.macro_recall = (rep.recall[0] + rep.recall[1] + rep.recall[2]) / 3.0;
    rep.macro_f1 = (rep.f1[0] + rep.f1[1] + rep.f1[2]) / 3.0;
    return rep;
}

// AUC by trapezoidal integration over all score thresholds; ties averaged,
// equivalent to the pair-counting rank statistic.
inline double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw InputError("roc_auc: length mismatch");
    long n_pos = 0, n_neg = 0;
    for (int l : labels) (l ? n_pos : n_neg) += 1;
    if (n_pos == 0 || n_neg == 0)
        throw InputError("roc_auc: both classes must be present");

    std::vector<size_t> order(scores.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });

    double auc = 0.0;
    double tp = 0.0, fp = 0.0, prev_tp = 0.0, prev_fp = 0.0;
    size_t i = 0;
    while (i < order.size()) {
        const double s = scores[order[i]];
        // consume the whole tie group before emitting a ROC vertex
        while (i < order.size() && scores[order[i]] == s) {
            if (labels[order[i]]) tp += 1.0;
            else fp += 1.0;
            ++i;
        }
        auc += (fp - prev_fp) * (tp + prev_tp) / 2.0;
        prev_tp = tp;
        prev_fp = fp;
    }
    return auc / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

struct McNemarResult {
    long b = 0;  // A correct, B wrong
    long c = 0;  // A wrong, B correct
    double statistic = 0.0;
    double p_value = 1.0;
    bool exact = false;  // binomial fallback used (b + c < 25)
};

namespace detail {

// two-sided exact binomial tail for McNemar, p = 1/2
inline double binomial_two_sided(long k, long n) {
    // sum C(n, i) / 2^n for i <= k, doubled and capped at 1
    double tail = 0.0;
    double coef = 1.0;  // C(n, 0)
    for (long i = 0; i <= k; ++i) {
        tail += coef;
        coef = coef * static_cast<double>(n - i) / static_cast<double>(i + 1);
    }
    const double p = 2.0 * tail * std::pow(0.5, static_cast<double>(n));
    return std::min(1.0, p);
}

}  // namespace detail

// Continuity-corrected chi-square on the discordant pairs, with an exact
// binomial fallback for small counts.
inline McNemarResult mcnemar(const std::vector<int>& correct_a, const std::vector<int>& correct_b) {
    if (correct_a.size() != correct_b.size()) throw InputError("mcnemar: length mismatch");
    McNemarResult res;
    for (size_t i = 0; i < correct_a.size(); ++i) {
        if (correct_a[i] && !correct_b[i]) ++res.b;
        if (!correct_a[i] && correct_b[i]) ++res.c;
    }
    const long n = res.b + res.c;
    if (n == 0) {
        res.statistic = 0.0;
        res.p_value = 1.0;
        return res;
    }
    if (n < 25) {
        res.exact = true;
        res.statistic = 0.0;
        res.p_value = detail::binomial_two_sided(std::min(res.b, res.c), n);
        return res;
    }
    const double diff = std::abs(static_cast<double>(res.b) - static_cast<double>(res.c));
    const double corrected = diff - 1.0;
    res.statistic = corrected * corrected / static_cast<double>(n);
    // chi-square with 1 df survival: P(X > x) = erfc(sqrt(x / 2))
    res.p_value = std::erfc(std::sqrt(res.statistic / 2.0));
    return res;
}

}  // namespace lss
