#include "readi/optim.hpp"

#include <cmath>

#include "readi/common.hpp"

namespace readi {

AdamW::AdamW(std::vector<Tensor> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    if (cfg_.lr <= 0.0f) throw ConfigError("adamw: lr must be positive");
    if (cfg_.weight_decay < 0.0f) throw ConfigError("adamw: weight_decay must be non-negative");
    state_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        state_[i].m.assign(params_[i].size(), 0.0f);
        state_[i].v.assign(params_[i].size(), 0.0f);
    }
}

bool AdamW::step() {
    double norm_sq = 0.0;
    bool finite = true;
    for (const Tensor& p : params_) {
        if (!p.has_grad()) continue;
        for (float g : p.grad()) {
            if (!is_finite(g)) finite = false;
            norm_sq += static_cast<double>(g) * static_cast<double>(g);
        }
    }
    last_norm_ = std::sqrt(norm_sq);
    if (!finite || !is_finite(static_cast<float>(last_norm_))) {
        ++rejected_;
        zero_grad();
        return false;
    }

    float clip_f = 1.0f;
    if (cfg_.clip_norm > 0.0f && last_norm_ > static_cast<double>(cfg_.clip_norm)) {
        clip_f = static_cast<float>(static_cast<double>(cfg_.clip_norm) / last_norm_);
    }

    ++t_;
    const float bc1 = static_cast<float>(1.0 - std::pow(static_cast<double>(cfg_.beta1), t_));
    const float bc2 = static_cast<float>(1.0 - std::pow(static_cast<double>(cfg_.beta2), t_));

    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i];
        OptimState& st = state_[i];
        const float* g = p.has_grad() ? p.grad().data() : nullptr;
        float* w = p.data();
        for (std::size_t j = 0; j < p.size(); ++j) {
            const float gj = g ? g[j] * clip_f : 0.0f;
            st.m[j] = cfg_.beta1 * st.m[j] + (1.0f - cfg_.beta1) * gj;
            st.v[j] = cfg_.beta2 * st.v[j] + (1.0f - cfg_.beta2) * gj * gj;
            const float mhat = st.m[j] / bc1;
            const float vhat = st.v[j] / bc2;
            w[j] = w[j] - cfg_.lr * cfg_.weight_decay * w[j] -
                   cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
    zero_grad();
    return true;
}

void AdamW::zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
}

} // namespace readi
