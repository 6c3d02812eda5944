#include "doctest.h"

#include <cmath>
#include <cstring>
#include <vector>

#include "readi/autograd.hpp"
#include "readi/common.hpp"
#include "readi/kernels.hpp"
#include "readi/ops.hpp"
#include "readi/rng.hpp"
#include "readi/tensor.hpp"

using namespace readi;

TEST_CASE("tensor construction validates shape and finiteness") {
    Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.size() == 6);
    CHECK(t.at2(1, 2) == 6.0f);
    CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), ShapeError);
    CHECK_THROWS_AS(Tensor::from({1}, {std::numeric_limits<float>::quiet_NaN()}), ContractError);
    CHECK_THROWS_AS(Tensor::from({0}, {}), ShapeError);
}

TEST_CASE("rng streams are deterministic and distributions sane") {
    Rng a(123), b(123), c(124);
    for (int i = 0; i < 16; ++i) CHECK(a.next_u64() == b.next_u64());
    bool differs = false;
    Rng a2(123);
    for (int i = 0; i < 16; ++i) differs = differs || a2.next_u64() != c.next_u64();
    CHECK(differs);

    Rng r(7);
    double acc = 0.0;
    for (int i = 0; i < 20000; ++i) {
        const double u = r.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        acc += u;
    }
    CHECK(acc / 20000 == doctest::Approx(0.5).epsilon(0.02));

    double nacc = 0.0, nsq = 0.0;
    for (int i = 0; i < 20000; ++i) {
        const double z = r.normal();
        nacc += z;
        nsq += z * z;
    }
    CHECK(nacc / 20000 == doctest::Approx(0.0).epsilon(1.0).scale(0.03));
    CHECK(nsq / 20000 == doctest::Approx(1.0).epsilon(0.05));

    double pacc = 0.0;
    for (int i = 0; i < 20000; ++i) pacc += r.poisson(3.0);
    CHECK(pacc / 20000 == doctest::Approx(3.0).epsilon(0.05));
}

TEST_CASE("matmul matches hand oracles") {
    // identity
    Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Tensor m = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6});
    Tensor r = matmul(eye, m);
    for (std::size_t i = 0; i < m.size(); ++i) CHECK(r.at(i) == m.at(i));

    // zeros
    Tensor z = Tensor::zeros({2, 3});
    Tensor any = Tensor::from({3, 4}, std::vector<float>(12, 2.5f));
    Tensor zr = matmul(z, any);
    for (std::size_t i = 0; i < zr.size(); ++i) CHECK(zr.at(i) == 0.0f);

    // hand multiplication
    Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from({2, 1}, {5, 6});
    Tensor c = matmul(a, b);
    CHECK(c.at(0) == 17.0f);
    CHECK(c.at(1) == 39.0f);

    // transpose flags agree with explicit transpose
    Rng rng(3);
    std::vector<float> av(6), bv(6);
    for (auto& v : av) v = rng.uniform_f(-1, 1);
    for (auto& v : bv) v = rng.uniform_f(-1, 1);
    Tensor at = Tensor::from({3, 2}, av);
    Tensor bt = Tensor::from({3, 2}, bv);
    Tensor viaflag = matmul(at, bt, true, false);        // [2,2]
    Tensor viaop = matmul(transpose(at), bt);
    for (std::size_t i = 0; i < viaflag.size(); ++i) {
        CHECK(viaflag.at(i) == doctest::Approx(viaop.at(i)).epsilon(1e-6));
    }

    CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
}

TEST_CASE("conv2d oracles") {
    // 1x1 identity kernel
    Tensor x = Tensor::from({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    Tensor k1 = Tensor::from({1, 1, 1, 1}, {1});
    Tensor y = conv2d(x, k1, Tensor(), kernels::Pad::same_reflect);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.at(i) == x.at(i));

    // constant image, normalized kernel, reflect padding -> unchanged constant
    Tensor cimg = Tensor::full({1, 5, 5}, 0.7f);
    Tensor nk = Tensor::full({1, 1, 3, 3}, 1.0f / 9.0f);
    Tensor cy = conv2d(cimg, nk, Tensor(), kernels::Pad::same_reflect);
    for (std::size_t i = 0; i < cy.size(); ++i) {
        CHECK(cy.at(i) == doctest::Approx(0.7f).epsilon(1e-6));
    }

    // valid conv with all-ones kernel sums the input
    Tensor ones = Tensor::full({1, 1, 3, 3}, 1.0f);
    Tensor s = conv2d(x, ones, Tensor(), kernels::Pad::none);
    CHECK(s.size() == 1);
    CHECK(s.at(0) == 45.0f);

    // even kernel rejected
    CHECK_THROWS_AS(conv2d(x, Tensor::zeros({1, 1, 2, 2}), Tensor(), kernels::Pad::none),
                    ConfigError);
}

TEST_CASE("softmax normalizes, is stable, matches closed form") {
    Tensor v = Tensor::from({4}, {2, 2, 2, 2});
    Tensor s = softmax(v, 0);
    for (int i = 0; i < 4; ++i) CHECK(s.at(i) == doctest::Approx(0.25).epsilon(1e-6));

    Tensor big = Tensor::from({2}, {0, 5000});
    Tensor sb = softmax(big, 0);
    CHECK(is_finite(sb.at(0)));
    CHECK(sb.at(1) == doctest::Approx(1.0).epsilon(1e-6));

    Tensor ab = Tensor::from({2}, {1, 2});
    Tensor sab = softmax(ab, 0);
    CHECK(sab.at(0) == doctest::Approx(1.0 / (1.0 + std::exp(1.0))).epsilon(1e-6));
    CHECK(sab.at(1) == doctest::Approx(std::exp(1.0) / (1.0 + std::exp(1.0))).epsilon(1e-6));

    // rows of a 2-d softmax sum to 1, entries non-negative
    Rng rng(11);
    std::vector<float> mv(5 * 7);
    for (auto& x : mv) x = rng.uniform_f(-4, 4);
    Tensor m = Tensor::from({5, 7}, mv);
    Tensor sm = softmax(m, 1);
    for (int r = 0; r < 5; ++r) {
        double rowsum = 0.0;
        for (int c = 0; c < 7; ++c) {
            CHECK(sm.at2(r, c) >= 0.0f);
            rowsum += sm.at2(r, c);
        }
        CHECK(rowsum == doctest::Approx(1.0).epsilon(1e-6));
    }
    // and columns for axis 0
    Tensor sm0 = softmax(m, 0);
    for (int c = 0; c < 7; ++c) {
        double colsum = 0.0;
        for (int r = 0; r < 5; ++r) colsum += sm0.at2(r, c);
        CHECK(colsum == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("batch_norm oracles") {
    Tensor gamma1 = Tensor::from({1}, {1});
    Tensor beta0 = Tensor::from({1}, {0});

    // train mode on {1,3}: normalized to {-1,+1} modulo the eps effect
    Tensor x = Tensor::from({1, 1, 2}, {1, 3});
    Tensor y = batch_norm(x, gamma1, beta0, Tensor(), Tensor(), true);
    CHECK(y.at(0) == doctest::Approx(-1.0).epsilon(1e-4));
    CHECK(y.at(1) == doctest::Approx(1.0).epsilon(1e-4));

    // eval with stats (0,1): input passes through modulo eps
    Tensor rm = Tensor::from({1}, {0});
    Tensor rv = Tensor::from({1}, {1});
    Tensor xin = Tensor::from({1, 1, 4}, {-1.5f, -0.5f, 0.5f, 1.5f});
    Tensor ye = batch_norm(xin, gamma1, beta0, rm, rv, false);
    for (std::size_t i = 0; i < xin.size(); ++i) {
        CHECK(ye.at(i) == doctest::Approx(xin.at(i)).epsilon(1e-4));
    }

    // scale 0 -> output equals shift
    Tensor g0 = Tensor::from({1}, {0});
    Tensor b7 = Tensor::from({1}, {0.7f});
    Tensor yz = batch_norm(xin, g0, b7, rm, rv, false);
    for (std::size_t i = 0; i < yz.size(); ++i) CHECK(yz.at(i) == 0.7f);

    // train mode updates running stats with momentum
    Tensor rm2 = Tensor::from({1}, {0});
    Tensor rv2 = Tensor::from({1}, {1});
    batch_norm(x, gamma1, beta0, rm2, rv2, true, 0.1f);
    CHECK(rm2.at(0) == doctest::Approx(0.1 * 2.0).epsilon(1e-6));        // batch mean 2
    CHECK(rv2.at(0) == doctest::Approx(0.9 * 1.0 + 0.1 * 1.0).epsilon(1e-6)); // biased var 1
}

TEST_CASE("kernel parallel variants are bit-identical to serial") {
    Rng rng(99);
    const int m = 37, n = 53, k = 29;
    std::vector<float> a(static_cast<std::size_t>(m) * k), b(static_cast<std::size_t>(k) * n);
    for (auto& v : a) v = rng.uniform_f(-2, 2);
    for (auto& v : b) v = rng.uniform_f(-2, 2);
    for (bool ta : {false, true}) {
        for (bool tb : {false, true}) {
            // reinterpret flat buffers under transposed shapes; sizes line up
            std::vector<float> cs(static_cast<std::size_t>(m) * n, 1.0f);
            std::vector<float> cp(cs);
            kernels::matmul_serial(a.data(), b.data(), cs.data(), m, n, k, ta, tb, true);
            kernels::matmul_parallel(a.data(), b.data(), cp.data(), m, n, k, ta, tb, true);
            CHECK(std::memcmp(cs.data(), cp.data(), cs.size() * sizeof(float)) == 0);
        }
    }

    const int cin = 3, h = 17, w = 19, cout = 5, kk = 3;
    std::vector<float> x(static_cast<std::size_t>(cin) * h * w);
    std::vector<float> wt(static_cast<std::size_t>(cout) * cin * kk * kk), bias(cout);
    for (auto& v : x) v = rng.uniform_f(-1, 1);
    for (auto& v : wt) v = rng.uniform_f(-1, 1);
    for (auto& v : bias) v = rng.uniform_f(-1, 1);
    for (auto pad : {kernels::Pad::none, kernels::Pad::same_reflect}) {
        const int ho = kernels::conv_out_dim(h, kk, pad);
        const int wo = kernels::conv_out_dim(w, kk, pad);
        std::vector<float> ys(static_cast<std::size_t>(cout) * ho * wo), yp(ys);
        kernels::conv2d_forward_serial(x.data(), wt.data(), bias.data(), ys.data(),
                                       cin, h, w, cout, kk, kk, pad);
        kernels::conv2d_forward_parallel(x.data(), wt.data(), bias.data(), yp.data(),
                                         cin, h, w, cout, kk, kk, pad);
        CHECK(std::memcmp(ys.data(), yp.data(), ys.size() * sizeof(float)) == 0);

        std::vector<float> gy(static_cast<std::size_t>(cout) * ho * wo);
        for (auto& v : gy) v = rng.uniform_f(-1, 1);
        std::vector<float> gws(wt.size()), gwp(wt.size()), gbs(cout), gbp(cout);
        kernels::conv2d_backward_weight_serial(gy.data(), x.data(), gws.data(), gbs.data(),
                                               cin, h, w, cout, kk, kk, pad);
        kernels::conv2d_backward_weight_parallel(gy.data(), x.data(), gwp.data(), gbp.data(),
                                                 cin, h, w, cout, kk, kk, pad);
        CHECK(std::memcmp(gws.data(), gwp.data(), gws.size() * sizeof(float)) == 0);
        CHECK(std::memcmp(gbs.data(), gbp.data(), gbs.size() * sizeof(float)) == 0);
    }
}

TEST_CASE("backward populates trainable leaves only") {
    Tensor w = Tensor::from({2, 2}, {1, 2, 3, 4}).set_requires_grad(true);
    Tensor frozen = Tensor::from({2, 2}, {5, 6, 7, 8});

    Tape tape;
    Tensor loss = sum(matmul(w, frozen));
    tape.backward(loss);

    REQUIRE(w.has_grad());
    CHECK_FALSE(frozen.has_grad());
    // d/dW sum(W F) = rowwise sums of F broadcast: grad[i][j] = sum_k F[j][k]
    CHECK(w.grad()[0] == doctest::Approx(11.0f)); // F row 0 sum
    CHECK(w.grad()[1] == doctest::Approx(15.0f)); // F row 1 sum
    CHECK(w.grad()[2] == doctest::Approx(11.0f));
    CHECK(w.grad()[3] == doctest::Approx(15.0f));
}

TEST_CASE("backward on sum gives all-ones and rejects misuse") {
    Tensor w = Tensor::from({3}, {1, 2, 3}).set_requires_grad(true);
    {
        Tape tape;
        Tensor loss = sum(w);
        tape.backward(loss);
        for (float g : w.grad()) CHECK(g == 1.0f);
    }
    w.zero_grad();
    {
        Tape tape;
        Tensor notscalar = scale(w, 2.0f);
        CHECK_THROWS_AS(tape.backward(notscalar), ContractError);
    }
    {
        CHECK_THROWS_AS(backward(Tensor::scalar(1.0f)), ContractError);
    }
}

TEST_CASE("inference outside a tape records nothing") {
    Tensor w = Tensor::from({2, 2}, {1, 0, 0, 1}).set_requires_grad(true);
    Tensor y = matmul(w, w);
    CHECK_FALSE(y.impl()->tape_mark > 0);
    CHECK_FALSE(w.has_grad());
}
