#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "lss/core.hpp"
#include "lss/tinynet.hpp"

namespace lss {

// Adaptive-moment update with decoupled weight decay: the decay is a
// multiplicative shrink by lr*wd applied independently of the gradient term.
struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

struct AdamWState {
    int64_t step = 0;
    std::vector<double> m;  // first moment
    std::vector<double> v;  // second moment
};

inline void adamw_step(std::vector<double>& param, const std::vector<double>& grad,
                       AdamWState& state, const AdamWConfig& cfg) {
    if (param.size() != grad.size()) throw ShapeError("adamw_step: param/grad size mismatch");
    if (state.m.empty()) {
        state.m.assign(param.size(), 0.0);
        state.v.assign(param.size(), 0.0);
    }
    if (state.m.size() != param.size()) throw ShapeError("adamw_step: state size mismatch");
    for (double g : grad)
        if (!std::isfinite(g)) throw NumericError("adamw_step: non-finite gradient");

    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (size_t i = 0; i < param.size(); ++i) {
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grad[i];
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        const double m_hat = state.m[i] / bc1;
        const double v_hat = state.v[i] / bc2;
        param[i] *= (1.0 - cfg.lr * cfg.weight_decay);
        param[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
}

// Two parameter groups over TinyNetParams: encoder = {patch_embed,
// prompt_table, attention} at encoder_lr, decoder stack at decoder_lr.
class TinyNetOptimizer {
  public:
    TinyNetOptimizer(const TinyNetParams& params, double encoder_lr, double decoder_lr,
                     double weight_decay) {
        encoder_cfg_.lr = encoder_lr;
        encoder_cfg_.weight_decay = weight_decay;
        decoder_cfg_.lr = decoder_lr;
        decoder_cfg_.weight_decay = weight_decay;
        for_each_trainable(const_cast<TinyNetParams&>(params),
                           [this](const std::string&, std::vector<double>& t,
                                  const std::vector<int64_t>&, bool) {
                               states_.emplace_back();
                               states_.back().m.assign(t.size(), 0.0);
                               states_.back().v.assign(t.size(), 0.0);
                           });
    }

    void step(TinyNetParams& params, const TinyNetGrads& grads) {
        std::vector<std::vector<double>*> param_tensors;
        std::vector<bool> is_encoder;
        for_each_trainable(params, [&](const std::string&, std::vector<double>& t,
                                       const std::vector<int64_t>&, bool encoder) {
            param_tensors.push_back(&t);
            is_encoder.push_back(encoder);
        });
        std::vector<const std::vector<double>*> grad_tensors;
        for_each_trainable(const_cast<TinyNetGrads&>(grads),
                           [&](const std::string&, std::vector<double>& t,
                               const std::vector<int64_t>&, bool) { grad_tensors.push_back(&t); });
        if (param_tensors.size() != grad_tensors.size() || param_tensors.size() != states_.size())
            throw ShapeError("TinyNetOptimizer: tensor registry mismatch");
        for (size_t i = 0; i < param_tensors.size(); ++i)
            adamw_step(*param_tensors[i], *grad_tensors[i], states_[i],
                       is_encoder[i] ? encoder_cfg_ : decoder_cfg_);
    }

  private:
    AdamWConfig encoder_cfg_;
    AdamWConfig decoder_cfg_;
    std::vector<AdamWState> states_;
};

}  // namespace lss
