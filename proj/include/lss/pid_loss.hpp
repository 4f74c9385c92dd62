#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "lss/core.hpp"
#include "lss/tinynet.hpp"

namespace lss {

// TP/FP/FN/TN tallies; soft (probability-weighted) or hard (thresholded).
struct ConfusionCounts {
    double tp = 0.0;
    double fp = 0.0;
    double fn = 0.0;
    double tn = 0.0;
    double epsilon = 1e-6;

    double total() const { return tp + fp + fn + tn; }
};

struct LossParams {
    double gamma = 4.0 / 3.0;  // focal exponent on (1 - TI)
    double epsilon = 1e-6;

    void validate() const {
        if (!(gamma > 0.0)) throw ParameterError("LossParams: gamma must be > 0");
        if (!(epsilon > 0.0)) throw ParameterError("LossParams: epsilon must be > 0");
    }
};

// tp = sum p*y, fp = sum p*(1-y), fn = sum (1-p)*y, tn = sum (1-p)(1-y)
inline ConfusionCounts soft_confusion(const ProbMap& probs, const BinaryMask& gt,
                                      double epsilon = 1e-6) {
    if (probs.height != gt.height || probs.width != gt.width)
        throw InputError("soft_confusion: shape mismatch");
    ConfusionCounts c;
    c.epsilon = epsilon;
    for (size_t i = 0; i < probs.size(); ++i) {
        const double p = probs.probs[i];
        const double y = gt.bits[i] ? 1.0 : 0.0;
        c.tp += p * y;
        c.fp += p * (1.0 - y);
        c.fn += (1.0 - p) * y;
        c.tn += (1.0 - p) * (1.0 - y);
    }
    return c;
}

inline ConfusionCounts hard_confusion(const ProbMap& probs, const BinaryMask& gt,
                                      double thresh = 0.5, double epsilon = 1e-6) {
    if (probs.height != gt.height || probs.width != gt.width)
        throw InputError("hard_confusion: shape mismatch");
    ConfusionCounts c;
    c.epsilon = epsilon;
    for (size_t i = 0; i < probs.size(); ++i) {
        const bool pred = probs.probs[i] > thresh;
        const bool y = gt.bits[i] != 0;
        if (pred && y)
            c.tp += 1.0;
        else if (pred && !y)
            c.fp += 1.0;
        else if (!pred && y)
            c.fn += 1.0;
        else
            c.tn += 1.0;
    }
    return c;
}

inline ConfusionCounts hard_confusion(const BinaryMask& pred, const BinaryMask& gt,
                                      double epsilon = 1e-6) {
    if (!pred.same_shape(gt)) throw InputError("hard_confusion: shape mismatch");
    ConfusionCounts c;
    c.epsilon = epsilon;
    for (size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred.bits[i] != 0;
        const bool y = gt.bits[i] != 0;
        if (p && y)
            c.tp += 1.0;
        else if (p && !y)
            c.fp += 1.0;
        else if (!p && y)
            c.fn += 1.0;
        else
            c.tn += 1.0;
    }
    return c;
}

// e = (FN - FP) / (FN + FP + eps), the normalized segmentation bias.
inline double imbalance_signal(const ConfusionCounts& c) {
    if (c.fn < 0.0 || c.fp < 0.0) throw InputError("imbalance_signal: negative counts");
    if (c.fn == 0.0 && c.fp == 0.0) return 0.0;
    return (c.fn - c.fp) / (c.fn + c.fp + c.epsilon);
}

// Closed-loop controller state. beta is the FN weight of the Tversky index,
// alpha = 1 - beta; the clamp keeps beta inside [beta_min, beta_max] and the
// integral accumulator inside +-integral_max (anti-windup).
struct PidState {
    double kp = 0.05;
    double ki = 0.005;
    double kd = 0.01;
    double integral = 0.0;
    double prev_error = 0.0;
    double beta = 0.75;
    double beta_min = 0.65;
    double beta_max = 0.85;
    double integral_max = 10.0;
    int epoch = 0;

    double alpha() const { return 1.0 - beta; }
};

// u = kp*e + ki*sum(e) + kd*(e - e_prev); beta_{t+1} = clamp(beta_t + u).
// Returns the raw control output u before the clamp is applied to beta.
inline double pid_update(PidState& state, double e_t) {
    if (!std::isfinite(e_t)) throw NumericError("pid_update: non-finite error signal");
    state.integral = std::clamp(state.integral + e_t, -state.integral_max, state.integral_max);
    const double delta = e_t - state.prev_error;  // prev_error starts at 0
    const double u = state.kp * e_t + state.ki * state.integral + state.kd * delta;
    state.beta = std::clamp(state.beta + u, state.beta_min, state.beta_max);
    state.prev_error = e_t;
    state.epoch += 1;
    return u;
}

// TI = (TP + eps) / (TP + alpha*FP + beta*FN + eps)
inline double tversky_index(const ConfusionCounts& c, double alpha, double beta) {
    if (alpha < 0.0 || beta < 0.0) throw ParameterError("tversky_index: weights must be >= 0");
    return (c.tp + c.epsilon) / (c.tp + alpha * c.fp + beta * c.fn + c.epsilon);
}

inline constexpr double kProbClip = 1e-7;

struct LossValueGrad {
    double loss = 0.0;
    std::vector<double> grad;  // dLoss/dprob per pixel
};

// Loss_PT = (1 - TI)^gamma over the soft confusion counts, with the analytic
// gradient through tp/fp/fn. Probabilities are clipped away from {0,1}.
inline LossValueGrad focal_tversky_loss(const ProbMap& probs, const BinaryMask& gt, double alpha,
                                        double beta, const LossParams& lp = {}) {
    lp.validate();
    if (probs.height != gt.height || probs.width != gt.width)
        throw InputError("focal_tversky_loss: shape mismatch");

    ProbMap clipped = probs;
    for (double& p : clipped.probs) p = std::clamp(p, kProbClip, 1.0 - kProbClip);

    const ConfusionCounts c = soft_confusion(clipped, gt, lp.epsilon);
    const double num = c.tp + lp.epsilon;
    const double den = c.tp + alpha * c.fp + beta * c.fn + lp.epsilon;
    const double ti = num / den;
    const double one_minus = std::max(0.0, 1.0 - ti);

    LossValueGrad out;
    out.loss = std::pow(one_minus, lp.gamma);
    out.grad.assign(probs.size(), 0.0);

    // dTI/dtp = (den - num) / den^2 ; dTI/dfp = -alpha*num/den^2 ; dTI/dfn = -beta*num/den^2
    const double dti_dtp = (den - num) / (den * den);
    const double dti_dfp = -alpha * num / (den * den);
    const double dti_dfn = -beta * num / (den * den);
    // dloss/dTI = -gamma * (1 - TI)^(gamma - 1)
    const double dloss_dti =
        one_minus > 0.0 ? -lp.gamma * std::pow(one_minus, lp.gamma - 1.0) : 0.0;

    for (size_t i = 0; i < probs.size(); ++i) {
        const double y = gt.bits[i] ? 1.0 : 0.0;
        // dtp/dp = y ; dfp/dp = 1-y ; dfn/dp = -y
        const double dti_dp = dti_dtp * y + dti_dfp * (1.0 - y) - dti_dfn * y;
        out.grad[i] = dloss_dti * dti_dp;
    }
    return out;
}

// Mean binary cross-entropy with analytic gradient (p - y) / (p (1-p)) / N.
inline LossValueGrad bce_loss(const ProbMap& probs, const BinaryMask& gt) {
    if (probs.height != gt.height || probs.width != gt.width)
        throw InputError("bce_loss: shape mismatch");
    LossValueGrad out;
    out.grad.assign(probs.size(), 0.0);
    const double inv_n = 1.0 / static_cast<double>(probs.size());
    double acc = 0.0;
    for (size_t i = 0; i < probs.size(); ++i) {
        const double p = std::clamp(probs.probs[i], kProbClip, 1.0 - kProbClip);
        const double y = gt.bits[i] ? 1.0 : 0.0;
        acc -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
        out.grad[i] = (p - y) / (p * (1.0 - p)) * inv_n;
    }
    out.loss = acc * inv_n;
    return out;
}

}  // namespace lss
