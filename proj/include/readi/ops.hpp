#pragma once

#include <vector>

#include "readi/kernels.hpp"
#include "readi/tensor.hpp"

// Differentiable ops. Every op computes eagerly and, when an active Tape sees
// an input that requires grad (or was itself tape-produced), records a node
// whose backward accumulates into the inputs' grad buffers. Reductions use
// double accumulators internally.

namespace readi {

// While alive on a thread, every op additionally evaluates a full double
// precision shadow of its forward pass (TensorImpl::hi_data). The f32 outputs
// are untouched. Finite-difference gradient checks need this: an f32-rounded
// loss cannot resolve rel-tol-1e-4 difference quotients.
struct ShadowGuard {
    ShadowGuard();
    ~ShadowGuard();
    ShadowGuard(const ShadowGuard&) = delete;
    ShadowGuard& operator=(const ShadowGuard&) = delete;
};
bool shadow_active();

// elementwise, same shape
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, float c);
Tensor add_const(const Tensor& a, float c);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);  // domain x > 0
Tensor sqrt(const Tensor& x); // domain x > 0 for gradient

// 2-d only
Tensor transpose(const Tensor& a);

// general product with optional operand transposes; a [m,k] (or [k,m]), b [k,n] (or [n,k])
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);

// y [d,n] = w [d,f] * x [f,n] + bias [d] per column (bias optional: pass undefined Tensor)
Tensor linear_cols(const Tensor& w, const Tensor& x, const Tensor& bias);

// stride-1 cross-correlation; x [cin,h,w], w [cout,cin,kh,kw] with kh,kw odd,
// bias [cout] optional
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, kernels::Pad pad);

// axis 0: normalize down each column; axis 1: along each row. 1-d treated as single row.
Tensor softmax(const Tensor& x, int axis);

// channel-wise normalization of x [C,H,W]. Train mode uses per-channel spatial
// statistics (biased variance) and, when running_mean/var are defined, updates
// them in place with momentum (they stay off the tape). Eval mode normalizes
// by the running stats.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor running_mean, Tensor running_var,
                  bool training, float momentum = 0.1f, float eps = 1e-5f);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);

// stack [d_i, n] blocks vertically into [sum d_i, n]
Tensor concat_rows(const std::vector<Tensor>& parts);

// scalars -> [n]
Tensor stack_scalars(const std::vector<Tensor>& scalars);

// x [n] -> scalar log(sum exp(x)), max-shifted
Tensor logsumexp(const Tensor& x);

// mean over all elements of the stable binary cross-entropy with logits;
// weights optional (same shape), applied per element before the mean
Tensor bce_logits_mean(const Tensor& logits, const Tensor& targets, const Tensor& weights);

// logits [K,M], labels[j] in [0,K), mask[j] in {0,1}; mean cross-entropy over
// masked columns (zero scalar when mask is empty)
Tensor softmax_ce_masked(const Tensor& logits, const std::vector<int>& labels,
                         const std::vector<float>& mask);

// pred/target [K,M], mask [M]; mean smooth-L1 (delta=1) over masked columns
Tensor smooth_l1_masked(const Tensor& pred, const Tensor& target,
                        const std::vector<float>& mask);

} // namespace readi
