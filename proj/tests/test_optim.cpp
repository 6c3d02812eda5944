#include "doctest.h"

#include <cmath>
#include <vector>

#include "readi/autograd.hpp"
#include "readi/ops.hpp"
#include "readi/optim.hpp"
#include "readi/rng.hpp"
#include "readi/tensor.hpp"

using namespace readi;

TEST_CASE("adamw zero grad leaves params when decay off, decays otherwise") {
    AdamConfig cfg;
    cfg.lr = 1e-2f;
    cfg.weight_decay = 0.0f;
    Tensor p = Tensor::from({3}, {1, -2, 3}).set_requires_grad(true);
    AdamW opt({p}, cfg);
    p.mutable_grad(); // zeros
    CHECK(opt.step());
    CHECK(p.at(0) == 1.0f);
    CHECK(p.at(1) == -2.0f);
    CHECK(p.at(2) == 3.0f);

    cfg.weight_decay = 0.01f;
    Tensor q = Tensor::from({2}, {1, -2}).set_requires_grad(true);
    AdamW opt2({q}, cfg);
    q.mutable_grad();
    CHECK(opt2.step());
    CHECK(q.at(0) == doctest::Approx(1.0f * (1.0f - 1e-2f * 0.01f)).epsilon(1e-7));
    CHECK(q.at(1) == doctest::Approx(-2.0f * (1.0f - 1e-2f * 0.01f)).epsilon(1e-7));
}

TEST_CASE("adamw two fixed-grad steps match a reference implementation") {
    AdamConfig cfg;
    cfg.lr = 1e-3f;
    cfg.beta1 = 0.9f;
    cfg.beta2 = 0.999f;
    cfg.eps = 1e-8f;
    cfg.weight_decay = 0.01f;
    cfg.clip_norm = 0.0f;

    Tensor p = Tensor::from({1}, {0.5f}).set_requires_grad(true);
    AdamW opt({p}, cfg);

    const double g = 0.3;
    double theta = 0.5, m = 0.0, v = 0.0;
    for (int t = 1; t <= 2; ++t) {
        p.mutable_grad()[0] = static_cast<float>(g);
        CHECK(opt.step());

        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mhat = m / (1.0 - std::pow(0.9, t));
        const double vhat = v / (1.0 - std::pow(0.999, t));
        theta = theta - 1e-3 * 0.01 * theta - 1e-3 * mhat / (std::sqrt(vhat) + 1e-8);
        CHECK(p.at(0) == doctest::Approx(theta).epsilon(1e-6));
    }
    CHECK(opt.step_count() == 2);
}

TEST_CASE("adamw clips the global grad norm at the threshold only when exceeded") {
    AdamConfig cfg;
    cfg.clip_norm = 35.0f;
    cfg.lr = 1e-3f;
    cfg.weight_decay = 0.0f;

    Tensor a = Tensor::from({2}, {0, 0}).set_requires_grad(true);
    Tensor b = Tensor::from({1}, {0}).set_requires_grad(true);
    AdamW opt({a, b}, cfg);

    // pre-clip norm 50 -> clipped; after one step from zero moments, the
    // update direction is g/|g| scaled, so both elements move equally for
    // equal grads
    a.mutable_grad() = {30.0f, 40.0f};
    b.mutable_grad() = {0.0f};
    CHECK(opt.step());
    CHECK(opt.last_grad_norm() == doctest::Approx(50.0).epsilon(1e-9));

    // small grads stay untouched: effective step equals the unclipped formula
    Tensor c = Tensor::from({1}, {0}).set_requires_grad(true);
    AdamW opt_ref({c}, cfg);
    c.mutable_grad() = {1.0f};
    CHECK(opt_ref.step());
    CHECK(opt_ref.last_grad_norm() == doctest::Approx(1.0));
    // with bias correction the first step is lr * g/(sqrt(g^2)+eps) ~ lr
    CHECK(c.at(0) == doctest::Approx(-1e-3).epsilon(1e-3));
}

TEST_CASE("adamw rejects non-finite grads and reports it") {
    Tensor p = Tensor::from({2}, {1, 2}).set_requires_grad(true);
    AdamW opt({p});
    p.mutable_grad() = {1.0f, std::numeric_limits<float>::quiet_NaN()};
    CHECK_FALSE(opt.step());
    CHECK(opt.rejected_steps() == 1);
    CHECK(opt.step_count() == 0);
    CHECK(p.at(0) == 1.0f);
    CHECK(p.at(1) == 2.0f);
    CHECK_FALSE(p.has_grad());
}

TEST_CASE("training a tiny least-squares problem converges") {
    Rng rng(5);
    Tensor w = Tensor::from({1, 3}, {0.1f, -0.1f, 0.2f}).set_requires_grad(true);
    std::vector<float> xv(3 * 32), yv(32);
    const float wtrue[3] = {0.7f, -1.2f, 0.4f};
    for (int j = 0; j < 32; ++j) {
        float dot = 0.0f;
        for (int i = 0; i < 3; ++i) {
            const float x = rng.uniform_f(-1, 1);
            xv[static_cast<std::size_t>(i) * 32 + j] = x;
            dot += wtrue[i] * x;
        }
        yv[j] = dot;
    }
    Tensor x = Tensor::from({3, 32}, xv);
    Tensor y = Tensor::from({1, 32}, yv);

    AdamConfig cfg;
    cfg.lr = 0.05f;
    cfg.weight_decay = 0.0f;
    AdamW opt({w}, cfg);
    float last = 1e9f;
    for (int it = 0; it < 300; ++it) {
        Tape tape;
        Tensor err = sub(matmul(w, x), y);
        Tensor loss = mean(mul(err, err));
        last = loss.item();
        tape.backward(loss);
        opt.step();
    }
    CHECK(last < 1e-4f);
    CHECK(w.at(0) == doctest::Approx(0.7).epsilon(0.05));
    CHECK(w.at(1) == doctest::Approx(-1.2).epsilon(0.05));
    CHECK(w.at(2) == doctest::Approx(0.4).epsilon(0.05));
}
