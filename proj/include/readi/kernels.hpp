#pragma once

#include <cstddef>

// Dense compute kernels. matmul and the convolution forward/weight-grad
// kernels have a serial reference implementation and an OpenMP variant that
// parallelizes only across output elements, so the per-element accumulation
// order is identical and results match the serial path bit for bit. The
// convolution input-grad kernel is a scatter and stays serial. Accumulation
// is done in double and rounded to f32 once per output element.

namespace readi::kernels {

// runtime toggle for the OpenMP path (no effect on results, only on timing)
void set_parallel(bool on);
bool parallel_enabled();
int max_threads();

enum class Pad {
    none,         // valid convolution, output h-kh+1
    same_reflect, // mirror padding without edge repeat, output h
};

// mirror index without edge repeat, valid for -(n-1) <= i <= 2n-2
inline int reflect_ix(int i, int n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * n - 2 - i;
    return i;
}

int conv_out_dim(int in, int k, Pad pad);

// c[m,n] (+)= op(a) * op(b), op controlled by the trans flags.
// a is [m,k] (or [k,m] when trans_a), b is [k,n] (or [n,k] when trans_b).
void matmul(const float* a, const float* b, float* c,
            int m, int n, int k, bool trans_a, bool trans_b, bool accumulate);
void matmul_serial(const float* a, const float* b, float* c,
                   int m, int n, int k, bool trans_a, bool trans_b, bool accumulate);
void matmul_parallel(const float* a, const float* b, float* c,
                     int m, int n, int k, bool trans_a, bool trans_b, bool accumulate);

// 2-d cross-correlation, stride 1: x [cin,h,w], w [cout,cin,kh,kw],
// bias [cout] (nullable), y [cout,ho,wo]. kh, kw odd.
void conv2d_forward(const float* x, const float* w, const float* bias, float* y,
                    int cin, int h, int wd, int cout, int kh, int kw, Pad pad);
void conv2d_forward_serial(const float* x, const float* w, const float* bias, float* y,
                           int cin, int h, int wd, int cout, int kh, int kw, Pad pad);
void conv2d_forward_parallel(const float* x, const float* w, const float* bias, float* y,
                             int cin, int h, int wd, int cout, int kh, int kw, Pad pad);

// gx [cin,h,w] += input gradient (gy [cout,ho,wo]); serial scatter
void conv2d_backward_input(const float* gy, const float* w, float* gx,
                           int cin, int h, int wd, int cout, int kh, int kw, Pad pad);

// gw [cout,cin,kh,kw] +=, gb [cout] += (either nullable)
void conv2d_backward_weight(const float* gy, const float* x, float* gw, float* gb,
                            int cin, int h, int wd, int cout, int kh, int kw, Pad pad);
void conv2d_backward_weight_serial(const float* gy, const float* x, float* gw, float* gb,
                                   int cin, int h, int wd, int cout, int kh, int kw, Pad pad);
void conv2d_backward_weight_parallel(const float* gy, const float* x, float* gw, float* gb,
                                     int cin, int h, int wd, int cout, int kh, int kw, Pad pad);

} // namespace readi::kernels
