#pragma once

#include <vector>

#include "readi/tensor.hpp"

namespace readi {

// per-parameter AdamW accumulators
struct OptimState {
    std::vector<float> m;
    std::vector<float> v;
};

struct AdamConfig {
    float lr = 5e-5f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float weight_decay = 0.01f;
    float clip_norm = 35.0f; // <= 0 disables clipping
};

// AdamW with decoupled weight decay and global-norm gradient clipping:
//   theta <- theta - lr*wd*theta - lr*mhat/(sqrt(vhat)+eps)
class AdamW {
public:
    explicit AdamW(std::vector<Tensor> params, AdamConfig cfg = {});

    // one update from the grads currently on the params (missing grad = zero).
    // Clears grads afterwards. A non-finite gradient rejects the whole step,
    // leaving params and moments untouched; returns false in that case.
    bool step();

    void zero_grad();

    long long step_count() const { return t_; }
    int rejected_steps() const { return rejected_; }
    // pre-clip global L2 norm seen by the most recent step attempt
    double last_grad_norm() const { return last_norm_; }
    const AdamConfig& config() const { return cfg_; }

private:
    std::vector<Tensor> params_;
    std::vector<OptimState> state_;
    AdamConfig cfg_;
    long long t_ = 0;
    int rejected_ = 0;
    double last_norm_ = 0.0;
};

} // namespace readi
