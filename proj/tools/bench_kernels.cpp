// Times the serial reference kernels against their OpenMP variants and checks
// that both produce bit-identical outputs on the benchmark shapes.

#include <algorithm>
#include <chrono>
#include <cstring>
#include <functional>
#include <vector>

#include <fmt/core.h>

#include "readi/kernels.hpp"
#include "readi/rng.hpp"

namespace {

using clk = std::chrono::steady_clock;

double time_ms(const std::function<void()>& fn, int reps) {
    fn(); // warm
    const auto t0 = clk::now();
    for (int i = 0; i < reps; ++i) fn();
    const auto t1 = clk::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

std::vector<float> random_vec(std::size_t n, readi::Rng& rng) {
    std::vector<float> v(n);
    for (auto& x : v) x = rng.uniform_f(-1.0f, 1.0f);
    return v;
}

bool bit_equal(const std::vector<float>& a, const std::vector<float>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

} // namespace

int main() {
    readi::Rng rng(42);
    fmt::print("threads available: {}\n", readi::kernels::max_threads());

    {
        const int m = 256, n = 256, k = 256;
        auto a = random_vec(static_cast<std::size_t>(m) * k, rng);
        auto b = random_vec(static_cast<std::size_t>(k) * n, rng);
        std::vector<float> c_s(static_cast<std::size_t>(m) * n);
        std::vector<float> c_p(c_s.size());
        const double ts = time_ms(
            [&] { readi::kernels::matmul_serial(a.data(), b.data(), c_s.data(), m, n, k, false, false, false); }, 5);
        const double tp = time_ms(
            [&] { readi::kernels::matmul_parallel(a.data(), b.data(), c_p.data(), m, n, k, false, false, false); }, 5);
        fmt::print("matmul {}x{}x{}: serial {:.2f} ms, omp {:.2f} ms, speedup {:.2f}x, bit-identical {}\n",
                   m, n, k, ts, tp, ts / tp, bit_equal(c_s, c_p));
    }

    {
        const int cin = 16, h = 64, w = 64, cout = 16, kk = 3;
        auto x = random_vec(static_cast<std::size_t>(cin) * h * w, rng);
        auto wt = random_vec(static_cast<std::size_t>(cout) * cin * kk * kk, rng);
        std::vector<float> y_s(static_cast<std::size_t>(cout) * h * w);
        std::vector<float> y_p(y_s.size());
        const auto pad = readi::kernels::Pad::same_reflect;
        const double ts = time_ms(
            [&] { readi::kernels::conv2d_forward_serial(x.data(), wt.data(), nullptr, y_s.data(), cin, h, w, cout, kk, kk, pad); }, 5);
        const double tp = time_ms(
            [&] { readi::kernels::conv2d_forward_parallel(x.data(), wt.data(), nullptr, y_p.data(), cin, h, w, cout, kk, kk, pad); }, 5);
        fmt::print("conv2d {}ch {}x{} k{}: serial {:.2f} ms, omp {:.2f} ms, speedup {:.2f}x, bit-identical {}\n",
                   cin, h, w, kk, ts, tp, ts / tp, bit_equal(y_s, y_p));
    }

    {
        const int cin = 16, h = 64, w = 64, cout = 16, kk = 3;
        auto x = random_vec(static_cast<std::size_t>(cin) * h * w, rng);
        auto gy = random_vec(static_cast<std::size_t>(cout) * h * w, rng);
        std::vector<float> gw_s(static_cast<std::size_t>(cout) * cin * kk * kk);
        std::vector<float> gw_p(gw_s.size());
        const auto pad = readi::kernels::Pad::same_reflect;
        const double ts = time_ms([&] {
            std::fill(gw_s.begin(), gw_s.end(), 0.0f);
            readi::kernels::conv2d_backward_weight_serial(gy.data(), x.data(), gw_s.data(), nullptr, cin, h, w, cout, kk, kk, pad);
        }, 5);
        const double tp = time_ms([&] {
            std::fill(gw_p.begin(), gw_p.end(), 0.0f);
            readi::kernels::conv2d_backward_weight_parallel(gy.data(), x.data(), gw_p.data(), nullptr, cin, h, w, cout, kk, kk, pad);
        }, 5);
        fmt::print("conv2d wgrad {}ch {}x{} k{}: serial {:.2f} ms, omp {:.2f} ms, speedup {:.2f}x, bit-identical {}\n",
                   cin, h, w, kk, ts, tp, ts / tp, bit_equal(gw_s, gw_p));
    }

    return 0;
}
