#include "mung/optimizer.hpp"

#include <cmath>

namespace mung {

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    if (cfg_.lr <= 0.0) throw ValueError("adamw: learning rate must be > 0");
    for (const Tensor& p : params_) {
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
    }
}

double AdamW::step(double clip_norm, double lr_scale) {
    double sq = 0.0;
    for (const Tensor& p : params_) {
        if (!p.has_grad()) continue;
        for (double g : p.grad()) {
            if (!std::isfinite(g)) throw NumericError("adamw: non-finite gradient");
            sq += g * g;
        }
    }
    const double norm = std::sqrt(sq);
    const double clip = (clip_norm > 0.0 && norm > clip_norm) ? clip_norm / norm : 1.0;

    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    const double lr = cfg_.lr * lr_scale;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i];
        if (!p.has_grad()) continue;
        const auto& grad = p.grad();
        std::vector<double> delta(p.numel());
        for (std::size_t j = 0; j < grad.size(); ++j) {
            const double g = grad[j] * clip;
            m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g;
            v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = m_[i][j] / bc1;
            const double vhat = v_[i][j] / bc2;
            delta[j] = -lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                              cfg_.weight_decay * p.data()[j]);
        }
        p.apply_update(delta);
    }
    return norm;
}

void AdamW::zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
}

}  // namespace mung
