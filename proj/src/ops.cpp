#include "readi/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <fmt/format.h>

#include "readi/autograd.hpp"
#include "readi/common.hpp"

namespace readi {

namespace {

#ifdef READI_CHECK_FINITE
inline void fin(const Tensor& t, const char* what) { t.check_finite(what); }
#else
inline void fin(const Tensor&, const char*) {}
#endif

void same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(fmt::format("{}: shape mismatch {} vs {}", op,
                                     shape_str(a.shape()), shape_str(b.shape())));
    }
}

void record(const Tensor& out, std::function<void()> fn) {
    Tape::active()->record(out.handle(), std::move(fn));
}

double hi_of(const Tensor& t) { return t.item_hi(); }

void carry_hi_binary(Tensor& out, const Tensor& a, const Tensor& b,
                     double (*f)(double, double)) {
    if (out.is_scalar() && a.is_scalar() && b.is_scalar()) {
        out.set_hi(f(hi_of(a), hi_of(b)));
    }
}

Tensor unary_elementwise(const Tensor& x, const char* name,
                         float (*f)(float),
                         // dx given (x, y, g)
                         float (*df)(float, float, float)) {
    const std::size_t n = x.size();
    std::vector<float> v(n);
    const float* px = x.data();
    for (std::size_t i = 0; i < n; ++i) v[i] = f(px[i]);
    Tensor out = make_tensor_unchecked(x.shape(), std::move(v));
    fin(out, name);
    if (needs_grad(x)) {
        auto xi = x.handle();
        auto oi = out.handle();
        record(out, [xi, oi, df] {
            const auto& g = *oi->grad;
            auto& d = grad_of(xi);
            for (std::size_t i = 0; i < g.size(); ++i) {
                d[i] += df(xi->data[i], oi->data[i], g[i]);
            }
        });
    }
    return out;
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    same_shape(a, b, "add");
    const std::size_t n = a.size();
    std::vector<float> v(n);
    const float* pa = a.data();
    const float* pb = b.data();
    for (std::size_t i = 0; i < n; ++i) v[i] = pa[i] + pb[i];
    Tensor out = make_tensor_unchecked(a.shape(), std::move(v));
    carry_hi_binary(out, a, b, [](double x, double y) { return x + y; });
    fin(out, "add");
    const bool ga = needs_grad(a), gb = needs_grad(b);
    if (ga || gb) {
        auto ai = a.handle(), bi = b.handle(), oi = out.handle();
        record(out, [ai, bi, oi, ga, gb] {
            const auto& g = *oi->grad;
            if (ga) {
                auto& d = grad_of(ai);
                for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
            }
            if (gb) {
                auto& d = grad_of(bi);
                for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
            }
        });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    same_shape(a, b, "sub");
    const std::size_t n = a.size();
    std::vector<float> v(n);
    const float* pa = a.data();
    const float* pb = b.data();
    for (std::size_t i = 0; i < n; ++i) v[i] = pa[i] - pb[i];
    Tensor out = make_tensor_unchecked(a.shape(), std::move(v));
    carry_hi_binary(out, a, b, [](double x, double y) { return x - y; });
    fin(out, "sub");
    const bool ga = needs_grad(a), gb = needs_grad(b);
    if (ga || gb) {
        auto ai = a.handle(), bi = b.handle(), oi = out.handle();
        record(out, [ai, bi, oi, ga, gb] {
            const auto& g = *oi->grad;
            if (ga) {
                auto& d = grad_of(ai);
                for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
            }
            if (gb) {
                auto& d = grad_of(bi);
                for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
            }
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    same_shape(a, b, "mul");
    const std::size_t n = a.size();
    std::vector<float> v(n);
    const float* pa = a.data();
    const float* pb = b.data();
    for (std::size_t i = 0; i < n; ++i) v[i] = pa[i] * pb[i];
    Tensor out = make_tensor_unchecked(a.shape(), std::move(v));
    carry_hi_binary(out, a, b, [](double x, double y) { return x * y; });
    fin(out, "mul");
    const bool ga = needs_grad(a), gb = needs_grad(b);
    if (ga || gb) {
        auto ai = a.handle(), bi = b.handle(), oi = out.handle();
        record(out, [ai, bi, oi, ga, gb] {
            const auto& g = *oi->grad;
            if (ga) {
                auto& d = grad_of(ai);
                for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * bi->data[i];
            }
            if (gb) {
                auto& d = grad_of(bi);
                for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * ai->data[i];
            }
        });
    }
    return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
    same_shape(a, b, "div");
    const std::size_t n = a.size();
    std::vector<float> v(n);
    const float* pa = a.data();
    const float* pb = b.data();
    for (std::size_t i = 0; i < n; ++i) {
        if (pb[i] == 0.0f) throw ContractError("div: zero denominator");
        v[i] = pa[i] / pb[i];
    }
    Tensor out = make_tensor_unchecked(a.shape(), std::move(v));
    carry_hi_binary(out, a, b, [](double x, double y) { return x / y; });
    fin(out, "div");
    const bool ga = needs_grad(a), gb = needs_grad(b);
    if (ga || gb) {
        auto ai = a.handle(), bi = b.handle(), oi = out.handle();
        record(out, [ai, bi, oi, ga, gb] {
            const auto& g = *oi->grad;
            if (ga) {
                auto& d = grad_of(ai);
                for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] / bi->data[i];
            }
            if (gb) {
                auto& d = grad_of(bi);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    d[i] -= g[i] * oi->data[i] / bi->data[i];
                }
            }
        });
    }
    return out;
}

Tensor scale(const Tensor& a, float c) {
    const std::size_t n = a.size();
    std::vector<float> v(n);
    const float* pa = a.data();
    for (std::size_t i = 0; i < n; ++i) v[i] = pa[i] * c;
    Tensor out = make_tensor_unchecked(a.shape(), std::move(v));
    if (out.is_scalar()) out.set_hi(hi_of(a) * static_cast<double>(c));
    fin(out, "scale");
    if (needs_grad(a)) {
        auto ai = a.handle(), oi = out.handle();
        record(out, [ai, oi, c] {
            const auto& g = *oi->grad;
            auto& d = grad_of(ai);
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * c;
        });
    }
    return out;
}

Tensor add_const(const Tensor& a, float c) {
    const std::size_t n = a.size();
    std::vector<float> v(n);
    const float* pa = a.data();
    for (std::size_t i = 0; i < n; ++i) v[i] = pa[i] + c;
    Tensor out = make_tensor_unchecked(a.shape(), std::move(v));
    if (out.is_scalar()) out.set_hi(hi_of(a) + static_cast<double>(c));
    fin(out, "add_const");
    if (needs_grad(a)) {
        auto ai = a.handle(), oi = out.handle();
        record(out, [ai, oi] {
            const auto& g = *oi->grad;
            auto& d = grad_of(ai);
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
        });
    }
    return out;
}

Tensor relu(const Tensor& x) {
    Tensor out = unary_elementwise(
        x, "relu", [](float v) { return v > 0.0f ? v : 0.0f; },
        [](float xv, float, float g) { return xv > 0.0f ? g : 0.0f; });
    if (out.is_scalar()) out.set_hi(std::max(hi_of(x), 0.0));
    return out;
}

Tensor sigmoid(const Tensor& x) {
    Tensor out = unary_elementwise(
        x, "sigmoid",
        [](float v) { return 1.0f / (1.0f + std::exp(-v)); },
        [](float, float yv, float g) { return g * yv * (1.0f - yv); });
    if (out.is_scalar()) out.set_hi(1.0 / (1.0 + std::exp(-hi_of(x))));
    return out;
}

Tensor exp(const Tensor& x) {
    Tensor out = unary_elementwise(
        x, "exp", [](float v) { return std::exp(v); },
        [](float, float yv, float g) { return g * yv; });
    if (out.is_scalar()) out.set_hi(std::exp(hi_of(x)));
    return out;
}

Tensor log(const Tensor& x) {
    const float* px = x.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (px[i] <= 0.0f) throw ContractError("log: non-positive input");
    }
    Tensor out = unary_elementwise(
        x, "log", [](float v) { return std::log(v); },
        [](float xv, float, float g) { return g / xv; });
    if (out.is_scalar()) out.set_hi(std::log(hi_of(x)));
    return out;
}

Tensor sqrt(const Tensor& x) {
    const float* px = x.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (px[i] < 0.0f) throw ContractError("sqrt: negative input");
    }
    Tensor out = unary_elementwise(
        x, "sqrt", [](float v) { return std::sqrt(v); },
        [](float, float yv, float g) { return yv > 0.0f ? g * 0.5f / yv : 0.0f; });
    if (out.is_scalar()) out.set_hi(std::sqrt(hi_of(x)));
    return out;
}

Tensor transpose(const Tensor& a) {
    if (a.ndim() != 2) throw ShapeError("transpose: needs a 2-d tensor");
    const int r = a.dim(0), c = a.dim(1);
    std::vector<float> v(a.size());
    const float* pa = a.data();
    for (int i = 0; i < r; ++i) {
        for (int j = 0; j < c; ++j) {
            v[static_cast<std::size_t>(j) * r + i] = pa[static_cast<std::size_t>(i) * c + j];
        }
    }
    Tensor out = make_tensor_unchecked({c, r}, std::move(v));
    if (needs_grad(a)) {
        auto ai = a.handle(), oi = out.handle();
        record(out, [ai, oi, r, c] {
            const auto& g = *oi->grad;
            auto& d = grad_of(ai);
            for (int j = 0; j < c; ++j) {
                for (int i = 0; i < r; ++i) {
                    d[static_cast<std::size_t>(i) * c + j] += g[static_cast<std::size_t>(j) * r + i];
                }
            }
        });
    }
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
    if (a.ndim() != 2 || b.ndim() != 2) throw ShapeError("matmul: needs 2-d tensors");
    const int m = trans_a ? a.dim(1) : a.dim(0);
    const int ka = trans_a ? a.dim(0) : a.dim(1);
    const int kb = trans_b ? b.dim(1) : b.dim(0);
    const int n = trans_b ? b.dim(0) : b.dim(1);
    if (ka != kb) {
        throw ShapeError(fmt::format("matmul: inner dimensions disagree, {} vs {}",
                                     shape_str(a.shape()), shape_str(b.shape())));
    }
    const int k = ka;
    std::vector<float> v(static_cast<std::size_t>(m) * n);
    kernels::matmul(a.data(), b.data(), v.data(), m, n, k, trans_a, trans_b, false);
    Tensor out = make_tensor_unchecked({m, n}, std::move(v));
    fin(out, "matmul");
    const bool ga = needs_grad(a), gb = needs_grad(b);
    if (ga || gb) {
        auto ai = a.handle(), bi = b.handle(), oi = out.handle();
        record(out, [ai, bi, oi, ga, gb, m, n, k, trans_a, trans_b] {
            const float* g = oi->grad->data();
            if (ga) {
                float* da = grad_of(ai).data();
                if (!trans_a) {
                    kernels::matmul(g, bi->data.data(), da, m, k, n, false, !trans_b, true);
                } else {
                    kernels::matmul(bi->data.data(), g, da, k, m, n, trans_b, true, true);
                }
            }
            if (gb) {
                float* db = grad_of(bi).data();
                if (!trans_b) {
                    kernels::matmul(ai->data.data(), g, db, k, n, m, !trans_a, false, true);
                } else {
                    kernels::matmul(g, ai->data.data(), db, n, k, m, true, trans_a, true);
                }
            }
        });
    }
    return out;
}

Tensor linear_cols(const Tensor& w, const Tensor& x, const Tensor& bias) {
    if (w.ndim() != 2 || x.ndim() != 2) throw ShapeError("linear_cols: needs 2-d tensors");
    const int d = w.dim(0), f = w.dim(1), n = x.dim(1);
    if (x.dim(0) != f) {
        throw ShapeError(fmt::format("linear_cols: weight {} vs input {}",
                                     shape_str(w.shape()), shape_str(x.shape())));
    }
    if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != d)) {
        throw ShapeError("linear_cols: bias shape mismatch");
    }
    std::vector<float> v(static_cast<std::size_t>(d) * n);
    kernels::matmul(w.data(), x.data(), v.data(), d, n, f, false, false, false);
    if (bias.defined()) {
        const float* pb = bias.data();
        for (int i = 0; i < d; ++i) {
            for (int j = 0; j < n; ++j) v[static_cast<std::size_t>(i) * n + j] += pb[i];
        }
    }
    Tensor out = make_tensor_unchecked({d, n}, std::move(v));
    fin(out, "linear_cols");
    const bool gw = needs_grad(w), gx = needs_grad(x);
    const bool gb = bias.defined() && needs_grad(bias);
    if (gw || gx || gb) {
        auto wi = w.handle(), xi = x.handle(), oi = out.handle();
        auto bi = bias.defined() ? bias.handle() : nullptr;
        record(out, [wi, xi, bi, oi, gw, gx, gb, d, f, n] {
            const float* g = oi->grad->data();
            if (gw) {
                kernels::matmul(g, xi->data.data(), grad_of(wi).data(), d, f, n, false, true, true);
            }
            if (gx) {
                kernels::matmul(wi->data.data(), g, grad_of(xi).data(), f, n, d, true, false, true);
            }
            if (gb) {
                auto& db = grad_of(bi);
                for (int i = 0; i < d; ++i) {
                    double acc = 0.0;
                    for (int j = 0; j < n; ++j) acc += g[static_cast<std::size_t>(i) * n + j];
                    db[i] += static_cast<float>(acc);
                }
            }
        });
    }
    return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, kernels::Pad pad) {
    if (x.ndim() != 3 || w.ndim() != 4) throw ShapeError("conv2d: x must be 3-d, kernel 4-d");
    const int cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != cin) {
        throw ShapeError(fmt::format("conv2d: kernel {} vs input {}",
                                     shape_str(w.shape()), shape_str(x.shape())));
    }
    if (kh % 2 == 0 || kw % 2 == 0) throw ConfigError("conv2d: kernel size must be odd");
    if (pad == kernels::Pad::none && (kh > h || kw > wd)) {
        throw ShapeError("conv2d: kernel larger than input without padding");
    }
    if (pad == kernels::Pad::same_reflect && (kh / 2 > h - 1 || kw / 2 > wd - 1)) {
        throw ShapeError("conv2d: reflect padding needs kernel radius < input size");
    }
    if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != cout)) {
        throw ShapeError("conv2d: bias shape mismatch");
    }
    const int ho = kernels::conv_out_dim(h, kh, pad);
    const int wo = kernels::conv_out_dim(wd, kw, pad);
    std::vector<float> v(static_cast<std::size_t>(cout) * ho * wo);
    kernels::conv2d_forward(x.data(), w.data(), bias.defined() ? bias.data() : nullptr,
                            v.data(), cin, h, wd, cout, kh, kw, pad);
    Tensor out = make_tensor_unchecked({cout, ho, wo}, std::move(v));
    fin(out, "conv2d");
    const bool gx = needs_grad(x), gw = needs_grad(w);
    const bool gb = bias.defined() && needs_grad(bias);
    if (gx || gw || gb) {
        auto xi = x.handle(), wi = w.handle(), oi = out.handle();
        auto bi = bias.defined() ? bias.handle() : nullptr;
        record(out, [xi, wi, bi, oi, gx, gw, gb, cin, h, wd, cout, kh, kw, pad] {
            const float* g = oi->grad->data();
            if (gx) {
                kernels::conv2d_backward_input(g, wi->data.data(), grad_of(xi).data(),
                                               cin, h, wd, cout, kh, kw, pad);
            }
            if (gw || gb) {
                kernels::conv2d_backward_weight(g, xi->data.data(),
                                                gw ? grad_of(wi).data() : nullptr,
                                                gb ? grad_of(bi).data() : nullptr,
                                                cin, h, wd, cout, kh, kw, pad);
            }
        });
    }
    return out;
}

Tensor softmax(const Tensor& x, int axis) {
    Shape sh = x.shape();
    int rows, cols;
    if (x.ndim() == 1) {
        if (axis != 0) throw ConfigError("softmax: 1-d tensor only has axis 0");
        rows = 1;
        cols = x.dim(0);
        axis = 1;
    } else if (x.ndim() == 2) {
        if (axis != 0 && axis != 1) throw ConfigError("softmax: axis must be 0 or 1");
        rows = x.dim(0);
        cols = x.dim(1);
    } else {
        throw ShapeError("softmax: needs a 1-d or 2-d tensor");
    }
    // lines run along the chosen axis
    const int n_lines = axis == 1 ? rows : cols;
    const int len = axis == 1 ? cols : rows;
    const std::size_t stride = axis == 1 ? 1 : static_cast<std::size_t>(cols);
    const std::size_t line_step = axis == 1 ? static_cast<std::size_t>(cols) : 1;

    std::vector<float> v(x.size());
    const float* px = x.data();
    for (int l = 0; l < n_lines; ++l) {
        const std::size_t base = l * line_step;
        float mx = px[base];
        for (int t = 1; t < len; ++t) mx = std::max(mx, px[base + t * stride]);
        double denom = 0.0;
        for (int t = 0; t < len; ++t) {
            const float e = std::exp(px[base + t * stride] - mx);
            v[base + t * stride] = e;
            denom += static_cast<double>(e);
        }
        const float inv = static_cast<float>(1.0 / denom);
        for (int t = 0; t < len; ++t) v[base + t * stride] *= inv;
    }
    Tensor out = make_tensor_unchecked(std::move(sh), std::move(v));
    fin(out, "softmax");
    if (needs_grad(x)) {
        auto xi = x.handle(), oi = out.handle();
        record(out, [xi, oi, n_lines, len, stride, line_step] {
            const auto& g = *oi->grad;
            const auto& y = oi->data;
            auto& d = grad_of(xi);
            for (int l = 0; l < n_lines; ++l) {
                const std::size_t base = l * line_step;
                double dot = 0.0;
                for (int t = 0; t < len; ++t) {
                    const std::size_t i = base + t * stride;
                    dot += static_cast<double>(g[i]) * static_cast<double>(y[i]);
                }
                const float s = static_cast<float>(dot);
                for (int t = 0; t < len; ++t) {
                    const std::size_t i = base + t * stride;
                    d[i] += y[i] * (g[i] - s);
                }
            }
        });
    }
    return out;
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor running_mean, Tensor running_var,
                  bool training, float momentum, float eps) {
    if (x.ndim() != 3) throw ShapeError("batch_norm: input must be [C,H,W]");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int m = h * w;
    if (gamma.ndim() != 1 || gamma.dim(0) != c || beta.ndim() != 1 || beta.dim(0) != c) {
        throw ShapeError("batch_norm: scale/shift must be [C]");
    }
    const bool has_running = running_mean.defined() && running_var.defined();
    if (!training && !has_running) {
        throw ContractError("batch_norm: eval mode requires running stats");
    }
    if (has_running &&
        (running_mean.size() != static_cast<std::size_t>(c) ||
         running_var.size() != static_cast<std::size_t>(c))) {
        throw ShapeError("batch_norm: running stats must be [C]");
    }

    std::vector<float> xhat(x.size());
    std::vector<float> inv_std(c);
    const float* px = x.data();
    if (training) {
        for (int ci = 0; ci < c; ++ci) {
            const float* xc = px + static_cast<std::size_t>(ci) * m;
            double mu = 0.0;
            for (int t = 0; t < m; ++t) mu += static_cast<double>(xc[t]);
            mu /= m;
            double var = 0.0;
            for (int t = 0; t < m; ++t) {
                const double dv = static_cast<double>(xc[t]) - mu;
                var += dv * dv;
            }
            var /= m;
            const float muf = static_cast<float>(mu);
            const float inv = static_cast<float>(1.0 / std::sqrt(var + static_cast<double>(eps)));
            inv_std[ci] = inv;
            float* xh = xhat.data() + static_cast<std::size_t>(ci) * m;
            for (int t = 0; t < m; ++t) xh[t] = (xc[t] - muf) * inv;
            if (has_running) {
                float* rm = running_mean.data();
                float* rv = running_var.data();
                rm[ci] = (1.0f - momentum) * rm[ci] + momentum * muf;
                rv[ci] = (1.0f - momentum) * rv[ci] + momentum * static_cast<float>(var);
            }
        }
    } else {
        const float* rm = running_mean.data();
        const float* rv = running_var.data();
        for (int ci = 0; ci < c; ++ci) {
            if (rv[ci] < 0.0f) throw ContractError("batch_norm: negative running variance");
            const float inv = 1.0f / std::sqrt(rv[ci] + eps);
            inv_std[ci] = inv;
            const float* xc = px + static_cast<std::size_t>(ci) * m;
            float* xh = xhat.data() + static_cast<std::size_t>(ci) * m;
            for (int t = 0; t < m; ++t) xh[t] = (xc[t] - rm[ci]) * inv;
        }
    }

    std::vector<float> v(x.size());
    const float* pg = gamma.data();
    const float* pb = beta.data();
    for (int ci = 0; ci < c; ++ci) {
        const float* xh = xhat.data() + static_cast<std::size_t>(ci) * m;
        float* vc = v.data() + static_cast<std::size_t>(ci) * m;
        for (int t = 0; t < m; ++t) vc[t] = pg[ci] * xh[t] + pb[ci];
    }
    Tensor out = make_tensor_unchecked(x.shape(), std::move(v));
    fin(out, "batch_norm");

    const bool gx = needs_grad(x), gg = needs_grad(gamma), gb = needs_grad(beta);
    if (gx || gg || gb) {
        auto xi = x.handle(), gi = gamma.handle(), bi = beta.handle(), oi = out.handle();
        auto xh = std::make_shared<std::vector<float>>(std::move(xhat));
        auto istd = std::make_shared<std::vector<float>>(std::move(inv_std));
        record(out, [xi, gi, bi, oi, xh, istd, gx, gg, gb, c, m, training] {
            const auto& g = *oi->grad;
            for (int ci = 0; ci < c; ++ci) {
                const float* gc = g.data() + static_cast<std::size_t>(ci) * m;
                const float* xhc = xh->data() + static_cast<std::size_t>(ci) * m;
                double sum_g = 0.0, sum_gx = 0.0;
                for (int t = 0; t < m; ++t) {
                    sum_g += static_cast<double>(gc[t]);
                    sum_gx += static_cast<double>(gc[t]) * static_cast<double>(xhc[t]);
                }
                if (gg) grad_of(gi)[ci] += static_cast<float>(sum_gx);
                if (gb) grad_of(bi)[ci] += static_cast<float>(sum_g);
                if (gx) {
                    auto& d = grad_of(xi);
                    float* dc = d.data() + static_cast<std::size_t>(ci) * m;
                    const float k = gi->data[ci] * (*istd)[ci];
                    if (training) {
                        const float mg = static_cast<float>(sum_g / m);
                        const float mgx = static_cast<float>(sum_gx / m);
                        for (int t = 0; t < m; ++t) {
                            dc[t] += k * (gc[t] - mg - xhc[t] * mgx);
                        }
                    } else {
                        for (int t = 0; t < m; ++t) dc[t] += k * gc[t];
                    }
                }
            }
        });
    }
    return out;
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    const float* px = x.data();
    for (std::size_t i = 0; i < x.size(); ++i) acc += static_cast<double>(px[i]);
    Tensor out = make_tensor_unchecked({1}, {static_cast<float>(acc)});
    out.set_hi(acc);
    fin(out, "sum");
    if (needs_grad(x)) {
        auto xi = x.handle(), oi = out.handle();
        record(out, [xi, oi] {
            const float g = (*oi->grad)[0];
            auto& d = grad_of(xi);
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g;
        });
    }
    return out;
}

Tensor mean(const Tensor& x) {
    double acc = 0.0;
    const float* px = x.data();
    const std::size_t n = x.size();
    for (std::size_t i = 0; i < n; ++i) acc += static_cast<double>(px[i]);
    Tensor out = make_tensor_unchecked({1}, {static_cast<float>(acc / n)});
    out.set_hi(acc / static_cast<double>(n));
    fin(out, "mean");
    if (needs_grad(x)) {
        auto xi = x.handle(), oi = out.handle();
        record(out, [xi, oi, n] {
            const float g = (*oi->grad)[0] / static_cast<float>(n);
            auto& d = grad_of(xi);
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g;
        });
    }
    return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.size()) {
        throw ShapeError(fmt::format("reshape: {} incompatible with {} elements",
                                     shape_str(shape), x.size()));
    }
    std::vector<float> v(x.data(), x.data() + x.size());
    Tensor out = make_tensor_unchecked(std::move(shape), std::move(v));
    if (needs_grad(x)) {
        auto xi = x.handle(), oi = out.handle();
        record(out, [xi, oi] {
            const auto& g = *oi->grad;
            auto& d = grad_of(xi);
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
        });
    }
    return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    const int n = parts[0].dim(1);
    int total = 0;
    for (const Tensor& p : parts) {
        if (p.ndim() != 2 || p.dim(1) != n) {
            throw ShapeError("concat_rows: inputs must be 2-d with equal column counts");
        }
        total += p.dim(0);
    }
    std::vector<float> v;
    v.reserve(static_cast<std::size_t>(total) * n);
    for (const Tensor& p : parts) v.insert(v.end(), p.data(), p.data() + p.size());
    Tensor out = make_tensor_unchecked({total, n}, std::move(v));
    bool any = false;
    std::vector<bool> need(parts.size());
    for (std::size_t i = 0; i < parts.size(); ++i) {
        need[i] = needs_grad(parts[i]);
        any = any || need[i];
    }
    if (any) {
        std::vector<std::shared_ptr<TensorImpl>> handles;
        handles.reserve(parts.size());
        for (const Tensor& p : parts) handles.push_back(p.handle());
        auto oi = out.handle();
        record(out, [handles, need, oi] {
            const auto& g = *oi->grad;
            std::size_t off = 0;
            for (std::size_t i = 0; i < handles.size(); ++i) {
                const std::size_t sz = handles[i]->data.size();
                if (need[i]) {
                    auto& d = grad_of(handles[i]);
                    for (std::size_t t = 0; t < sz; ++t) d[t] += g[off + t];
                }
                off += sz;
            }
        });
    }
    return out;
}

Tensor stack_scalars(const std::vector<Tensor>& scalars) {
    if (scalars.empty()) throw ShapeError("stack_scalars: no inputs");
    std::vector<float> v(scalars.size());
    for (std::size_t i = 0; i < scalars.size(); ++i) {
        if (scalars[i].size() != 1) throw ShapeError("stack_scalars: inputs must be scalar");
        v[i] = scalars[i].data()[0];
    }
    Tensor out = make_tensor_unchecked({static_cast<int>(scalars.size())}, std::move(v));
    bool any = false;
    std::vector<bool> need(scalars.size());
    for (std::size_t i = 0; i < scalars.size(); ++i) {
        need[i] = needs_grad(scalars[i]);
        any = any || need[i];
    }
    if (any) {
        std::vector<std::shared_ptr<TensorImpl>> handles;
        handles.reserve(scalars.size());
        for (const Tensor& s : scalars) handles.push_back(s.handle());
        auto oi = out.handle();
        record(out, [handles, need, oi] {
            const auto& g = *oi->grad;
            for (std::size_t i = 0; i < handles.size(); ++i) {
                if (need[i]) grad_of(handles[i])[0] += g[i];
            }
        });
    }
    return out;
}

Tensor logsumexp(const Tensor& x) {
    if (x.ndim() != 1) throw ShapeError("logsumexp: needs a 1-d tensor");
    const int n = x.dim(0);
    const float* px = x.data();
    float mx = px[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, px[i]);
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += std::exp(static_cast<double>(px[i] - mx));
    const float lse = mx + static_cast<float>(std::log(s));
    Tensor out = make_tensor_unchecked({1}, {lse});
    out.set_hi(static_cast<double>(mx) + std::log(s));
    fin(out, "logsumexp");
    if (needs_grad(x)) {
        auto xi = x.handle(), oi = out.handle();
        record(out, [xi, oi] {
            const float g = (*oi->grad)[0];
            const float lse = oi->data[0];
            auto& d = grad_of(xi);
            for (std::size_t i = 0; i < d.size(); ++i) {
                d[i] += g * std::exp(xi->data[i] - lse);
            }
        });
    }
    return out;
}

Tensor bce_logits_mean(const Tensor& logits, const Tensor& targets, const Tensor& weights) {
    same_shape(logits, targets, "bce_logits_mean");
    if (weights.defined()) same_shape(logits, weights, "bce_logits_mean weights");
    const std::size_t n = logits.size();
    const float* px = logits.data();
    const float* pt = targets.data();
    const float* pw = weights.defined() ? weights.data() : nullptr;
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const float x = px[i];
        const float l = std::max(x, 0.0f) - x * pt[i] + std::log1p(std::exp(-std::abs(x)));
        acc += static_cast<double>(pw ? pw[i] * l : l);
    }
    Tensor out = make_tensor_unchecked({1}, {static_cast<float>(acc / n)});
    out.set_hi(acc / static_cast<double>(n));
    fin(out, "bce_logits_mean");
    if (needs_grad(logits)) {
        auto xi = logits.handle(), ti = targets.handle(), oi = out.handle();
        auto wi = weights.defined() ? weights.handle() : nullptr;
        record(out, [xi, ti, wi, oi, n] {
            const float g = (*oi->grad)[0] / static_cast<float>(n);
            auto& d = grad_of(xi);
            for (std::size_t i = 0; i < n; ++i) {
                const float s = 1.0f / (1.0f + std::exp(-xi->data[i]));
                const float w = wi ? wi->data[i] : 1.0f;
                d[i] += g * w * (s - ti->data[i]);
            }
        });
    }
    return out;
}

Tensor softmax_ce_masked(const Tensor& logits, const std::vector<int>& labels,
                         const std::vector<float>& mask) {
    if (logits.ndim() != 2) throw ShapeError("softmax_ce_masked: logits must be [K,M]");
    const int k = logits.dim(0), mcol = logits.dim(1);
    if (static_cast<int>(labels.size()) != mcol || static_cast<int>(mask.size()) != mcol) {
        throw ShapeError("softmax_ce_masked: labels/mask length mismatch");
    }
    double m_eff = 0.0;
    for (float v : mask) m_eff += static_cast<double>(v);
    if (m_eff == 0.0) return Tensor::scalar(0.0f);

    const float* px = logits.data();
    double acc = 0.0;
    for (int j = 0; j < mcol; ++j) {
        if (mask[j] == 0.0f) continue;
        if (labels[j] < 0 || labels[j] >= k) throw ContractError("softmax_ce_masked: label out of range");
        float mx = px[j];
        for (int i = 1; i < k; ++i) mx = std::max(mx, px[static_cast<std::size_t>(i) * mcol + j]);
        double s = 0.0;
        for (int i = 0; i < k; ++i) {
            s += std::exp(static_cast<double>(px[static_cast<std::size_t>(i) * mcol + j] - mx));
        }
        const double lse = static_cast<double>(mx) + std::log(s);
        acc += mask[j] * (lse - static_cast<double>(px[static_cast<std::size_t>(labels[j]) * mcol + j]));
    }
    Tensor out = make_tensor_unchecked({1}, {static_cast<float>(acc / m_eff)});
    out.set_hi(acc / m_eff);
    fin(out, "softmax_ce_masked");
    if (needs_grad(logits)) {
        auto xi = logits.handle(), oi = out.handle();
        const float inv = static_cast<float>(1.0 / m_eff);
        record(out, [xi, oi, labels, mask, k, mcol, inv] {
            const float g = (*oi->grad)[0] * inv;
            auto& d = grad_of(xi);
            const auto& x = xi->data;
            for (int j = 0; j < mcol; ++j) {
                if (mask[j] == 0.0f) continue;
                float mx = x[j];
                for (int i = 1; i < k; ++i) mx = std::max(mx, x[static_cast<std::size_t>(i) * mcol + j]);
                double s = 0.0;
                for (int i = 0; i < k; ++i) {
                    s += std::exp(static_cast<double>(x[static_cast<std::size_t>(i) * mcol + j] - mx));
                }
                for (int i = 0; i < k; ++i) {
                    const std::size_t idx = static_cast<std::size_t>(i) * mcol + j;
                    const float p = static_cast<float>(std::exp(static_cast<double>(x[idx] - mx)) / s);
                    const float onehot = i == labels[j] ? 1.0f : 0.0f;
                    d[idx] += g * mask[j] * (p - onehot);
                }
            }
        });
    }
    return out;
}

Tensor smooth_l1_masked(const Tensor& pred, const Tensor& target,
                        const std::vector<float>& mask) {
    same_shape(pred, target, "smooth_l1_masked");
    if (pred.ndim() != 2) throw ShapeError("smooth_l1_masked: inputs must be [K,M]");
    const int k = pred.dim(0), mcol = pred.dim(1);
    if (static_cast<int>(mask.size()) != mcol) {
        throw ShapeError("smooth_l1_masked: mask length mismatch");
    }
    double m_eff = 0.0;
    for (float v : mask) m_eff += static_cast<double>(v);
    if (m_eff == 0.0) return Tensor::scalar(0.0f);

    const float* pp = pred.data();
    const float* pt = target.data();
    double acc = 0.0;
    for (int i = 0; i < k; ++i) {
        for (int j = 0; j < mcol; ++j) {
            if (mask[j] == 0.0f) continue;
            const float dv = pp[static_cast<std::size_t>(i) * mcol + j] -
                             pt[static_cast<std::size_t>(i) * mcol + j];
            const float a = std::abs(dv);
            acc += mask[j] * (a < 1.0f ? 0.5f * dv * dv : a - 0.5f);
        }
    }
    const double denom = m_eff * k;
    Tensor out = make_tensor_unchecked({1}, {static_cast<float>(acc / denom)});
    out.set_hi(acc / denom);
    fin(out, "smooth_l1_masked");
    if (needs_grad(pred)) {
        auto pi = pred.handle(), ti = target.handle(), oi = out.handle();
        const float inv = static_cast<float>(1.0 / denom);
        record(out, [pi, ti, oi, mask, k, mcol, inv] {
            const float g = (*oi->grad)[0] * inv;
            auto& d = grad_of(pi);
            for (int i = 0; i < k; ++i) {
                for (int j = 0; j < mcol; ++j) {
                    if (mask[j] == 0.0f) continue;
                    const std::size_t idx = static_cast<std::size_t>(i) * mcol + j;
                    const float dv = pi->data[idx] - ti->data[idx];
                    d[idx] += g * mask[j] * std::clamp(dv, -1.0f, 1.0f);
                }
            }
        });
    }
    return out;
}

} // namespace readi
