#include "readi/kernels.hpp"

#include <atomic>

#ifdef READI_HAVE_OPENMP
#include <omp.h>
#endif

namespace readi::kernels {

namespace {

std::atomic<bool> g_parallel{true};

// below this many output elements the OpenMP fork overhead dominates
constexpr std::size_t kParallelCutoff = 2048;

bool use_parallel(std::size_t out_elems) {
#ifdef READI_HAVE_OPENMP
    return g_parallel.load(std::memory_order_relaxed) &&
           out_elems >= kParallelCutoff && omp_get_max_threads() > 1;
#else
    (void)out_elems;
    return false;
#endif
}

inline double matmul_cell(const float* a, const float* b,
                          int i, int j, int m, int n, int k,
                          bool trans_a, bool trans_b) {
    double acc = 0.0;
    for (int p = 0; p < k; ++p) {
        const float av = trans_a ? a[static_cast<std::size_t>(p) * m + i]
                                 : a[static_cast<std::size_t>(i) * k + p];
        const float bv = trans_b ? b[static_cast<std::size_t>(j) * k + p]
                                 : b[static_cast<std::size_t>(p) * n + j];
        acc += static_cast<double>(av) * static_cast<double>(bv);
    }
    return acc;
}

inline double conv_cell(const float* x, const float* w,
                        int co, int oy, int ox,
                        int cin, int h, int wd, int kh, int kw,
                        int pad_y, int pad_x, bool reflect) {
    double acc = 0.0;
    for (int ci = 0; ci < cin; ++ci) {
        for (int ky = 0; ky < kh; ++ky) {
            int iy = oy - pad_y + ky;
            if (reflect) iy = reflect_ix(iy, h);
            for (int kx = 0; kx < kw; ++kx) {
                int ix = ox - pad_x + kx;
                if (reflect) ix = reflect_ix(ix, wd);
                const float xv = x[(static_cast<std::size_t>(ci) * h + iy) * wd + ix];
                const float wv = w[((static_cast<std::size_t>(co) * cin + ci) * kh + ky) * kw + kx];
                acc += static_cast<double>(xv) * static_cast<double>(wv);
            }
        }
    }
    return acc;
}

inline double conv_weight_cell(const float* gy, const float* x,
                               int co, int ci, int ky, int kx,
                               int h, int wd, int ho, int wo,
                               int pad_y, int pad_x, bool reflect) {
    double acc = 0.0;
    for (int oy = 0; oy < ho; ++oy) {
        int iy = oy - pad_y + ky;
        if (reflect) iy = reflect_ix(iy, h);
        for (int ox = 0; ox < wo; ++ox) {
            int ix = ox - pad_x + kx;
            if (reflect) ix = reflect_ix(ix, wd);
            const float gv = gy[(static_cast<std::size_t>(co) * ho + oy) * wo + ox];
            const float xv = x[(static_cast<std::size_t>(ci) * h + iy) * wd + ix];
            acc += static_cast<double>(gv) * static_cast<double>(xv);
        }
    }
    return acc;
}

} // namespace

void set_parallel(bool on) { g_parallel.store(on, std::memory_order_relaxed); }

bool parallel_enabled() { return g_parallel.load(std::memory_order_relaxed); }

int max_threads() {
#ifdef READI_HAVE_OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

int conv_out_dim(int in, int k, Pad pad) {
    return pad == Pad::same_reflect ? in : in - k + 1;
}

void matmul_serial(const float* a, const float* b, float* c,
                   int m, int n, int k, bool trans_a, bool trans_b, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            const double acc = matmul_cell(a, b, i, j, m, n, k, trans_a, trans_b);
            float* out = &c[static_cast<std::size_t>(i) * n + j];
            *out = accumulate ? *out + static_cast<float>(acc) : static_cast<float>(acc);
        }
    }
}

void matmul_parallel(const float* a, const float* b, float* c,
                     int m, int n, int k, bool trans_a, bool trans_b, bool accumulate) {
#ifdef READI_HAVE_OPENMP
#pragma omp parallel for collapse(2) schedule(static)
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            const double acc = matmul_cell(a, b, i, j, m, n, k, trans_a, trans_b);
            float* out = &c[static_cast<std::size_t>(i) * n + j];
            *out = accumulate ? *out + static_cast<float>(acc) : static_cast<float>(acc);
        }
    }
#else
    matmul_serial(a, b, c, m, n, k, trans_a, trans_b, accumulate);
#endif
}

void matmul(const float* a, const float* b, float* c,
            int m, int n, int k, bool trans_a, bool trans_b, bool accumulate) {
    if (use_parallel(static_cast<std::size_t>(m) * n)) {
        matmul_parallel(a, b, c, m, n, k, trans_a, trans_b, accumulate);
    } else {
        matmul_serial(a, b, c, m, n, k, trans_a, trans_b, accumulate);
    }
}

void conv2d_forward_serial(const float* x, const float* w, const float* bias, float* y,
                           int cin, int h, int wd, int cout, int kh, int kw, Pad pad) {
    const int ho = conv_out_dim(h, kh, pad);
    const int wo = conv_out_dim(wd, kw, pad);
    const bool reflect = pad == Pad::same_reflect;
    const int py = reflect ? kh / 2 : 0;
    const int px = reflect ? kw / 2 : 0;
    for (int co = 0; co < cout; ++co) {
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
                double acc = conv_cell(x, w, co, oy, ox, cin, h, wd, kh, kw, py, px, reflect);
                if (bias) acc += static_cast<double>(bias[co]);
                y[(static_cast<std::size_t>(co) * ho + oy) * wo + ox] = static_cast<float>(acc);
            }
        }
    }
}

void conv2d_forward_parallel(const float* x, const float* w, const float* bias, float* y,
                             int cin, int h, int wd, int cout, int kh, int kw, Pad pad) {
#ifdef READI_HAVE_OPENMP
    const int ho = conv_out_dim(h, kh, pad);
    const int wo = conv_out_dim(wd, kw, pad);
    const bool reflect = pad == Pad::same_reflect;
    const int py = reflect ? kh / 2 : 0;
    const int px = reflect ? kw / 2 : 0;
#pragma omp parallel for collapse(2) schedule(static)
    for (int co = 0; co < cout; ++co) {
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
                double acc = conv_cell(x, w, co, oy, ox, cin, h, wd, kh, kw, py, px, reflect);
                if (bias) acc += static_cast<double>(bias[co]);
                y[(static_cast<std::size_t>(co) * ho + oy) * wo + ox] = static_cast<float>(acc);
            }
        }
    }
#else
    conv2d_forward_serial(x, w, bias, y, cin, h, wd, cout, kh, kw, pad);
#endif
}

void conv2d_forward(const float* x, const float* w, const float* bias, float* y,
                    int cin, int h, int wd, int cout, int kh, int kw, Pad pad) {
    const std::size_t out = static_cast<std::size_t>(cout) *
                            conv_out_dim(h, kh, pad) * conv_out_dim(wd, kw, pad);
    if (use_parallel(out)) {
        conv2d_forward_parallel(x, w, bias, y, cin, h, wd, cout, kh, kw, pad);
    } else {
        conv2d_forward_serial(x, w, bias, y, cin, h, wd, cout, kh, kw, pad);
    }
}

void conv2d_backward_input(const float* gy, const float* w, float* gx,
                           int cin, int h, int wd, int cout, int kh, int kw, Pad pad) {
    const int ho = conv_out_dim(h, kh, pad);
    const int wo = conv_out_dim(wd, kw, pad);
    const bool reflect = pad == Pad::same_reflect;
    const int py = reflect ? kh / 2 : 0;
    const int px = reflect ? kw / 2 : 0;
    // reflect padding maps several raw indices onto one input pixel, so this
    // is a scatter; kept serial for deterministic accumulation order
    for (int co = 0; co < cout; ++co) {
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
                const float gv = gy[(static_cast<std::size_t>(co) * ho + oy) * wo + ox];
                for (int ci = 0; ci < cin; ++ci) {
                    for (int ky = 0; ky < kh; ++ky) {
                        int iy = oy - py + ky;
                        if (reflect) iy = reflect_ix(iy, h);
                        for (int kx = 0; kx < kw; ++kx) {
                            int ix = ox - px + kx;
                            if (reflect) ix = reflect_ix(ix, wd);
                            const float wv =
                                w[((static_cast<std::size_t>(co) * cin + ci) * kh + ky) * kw + kx];
                            gx[(static_cast<std::size_t>(ci) * h + iy) * wd + ix] += gv * wv;
                        }
                    }
                }
            }
        }
    }
}

void conv2d_backward_weight_serial(const float* gy, const float* x, float* gw, float* gb,
                                   int cin, int h, int wd, int cout, int kh, int kw, Pad pad) {
    const int ho = conv_out_dim(h, kh, pad);
    const int wo = conv_out_dim(wd, kw, pad);
    const bool reflect = pad == Pad::same_reflect;
    const int py = reflect ? kh / 2 : 0;
    const int px = reflect ? kw / 2 : 0;
    for (int co = 0; co < cout; ++co) {
        if (gw) {
            for (int ci = 0; ci < cin; ++ci) {
                for (int ky = 0; ky < kh; ++ky) {
                    for (int kx = 0; kx < kw; ++kx) {
                        const double acc = conv_weight_cell(gy, x, co, ci, ky, kx,
                                                            h, wd, ho, wo, py, px, reflect);
                        gw[((static_cast<std::size_t>(co) * cin + ci) * kh + ky) * kw + kx] +=
                            static_cast<float>(acc);
                    }
                }
            }
        }
        if (gb) {
            double acc = 0.0;
            const float* g = &gy[static_cast<std::size_t>(co) * ho * wo];
            for (int t = 0; t < ho * wo; ++t) acc += static_cast<double>(g[t]);
            gb[co] += static_cast<float>(acc);
        }
    }
}

void conv2d_backward_weight_parallel(const float* gy, const float* x, float* gw, float* gb,
                                     int cin, int h, int wd, int cout, int kh, int kw, Pad pad) {
#ifdef READI_HAVE_OPENMP
    const int ho = conv_out_dim(h, kh, pad);
    const int wo = conv_out_dim(wd, kw, pad);
    const bool reflect = pad == Pad::same_reflect;
    const int py = reflect ? kh / 2 : 0;
    const int px = reflect ? kw / 2 : 0;
#pragma omp parallel for schedule(static)
    for (int co = 0; co < cout; ++co) {
        if (gw) {
            for (int ci = 0; ci < cin; ++ci) {
                for (int ky = 0; ky < kh; ++ky) {
                    for (int kx = 0; kx < kw; ++kx) {
                        const double acc = conv_weight_cell(gy, x, co, ci, ky, kx,
                                                            h, wd, ho, wo, py, px, reflect);
                        gw[((static_cast<std::size_t>(co) * cin + ci) * kh + ky) * kw + kx] +=
                            static_cast<float>(acc);
                    }
                }
            }
        }
        if (gb) {
            double acc = 0.0;
            const float* g = &gy[static_cast<std::size_t>(co) * ho * wo];
            for (int t = 0; t < ho * wo; ++t) acc += static_cast<double>(g[t]);
            gb[co] += static_cast<float>(acc);
        }
    }
#else
    conv2d_backward_weight_serial(gy, x, gw, gb, cin, h, wd, cout, kh, kw, pad);
#endif
}

void conv2d_backward_weight(const float* gy, const float* x, float* gw, float* gb,
                            int cin, int h, int wd, int cout, int kh, int kw, Pad pad) {
    const std::size_t out = static_cast<std::size_t>(cout) * cin * kh * kw;
    if (use_parallel(out)) {
        conv2d_backward_weight_parallel(gy, x, gw, gb, cin, h, wd, cout, kh, kw, pad);
    } else {
        conv2d_backward_weight_serial(gy, x, gw, gb, cin, h, wd, cout, kh, kw, pad);
    }
}

} // namespace readi::kernels
