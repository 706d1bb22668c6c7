#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ewt/adam.hpp"
#include "ewt/rng.hpp"
#include "ewt/tensor.hpp"
#include "gradcheck.hpp"

using namespace ewt;
using D = Tensor<double>;

namespace {

D random_tensor(Shape s, SplitMix64& rng, bool rg = true) {
    D t(std::move(s));
    for (auto& v : t.data()) v = rng.uniform(-1, 1);
    t.set_requires_grad(rg);
    return t;
}

}  // namespace

TEST_CASE("conv2d identity kernel is the identity map") {
    D x({1, 1, 3, 3}, {0, 0, 0, 0, 1, 0, 0, 0, 0});
    D w({1, 1, 3, 3}, {0, 0, 0, 0, 1, 0, 0, 0, 0});
    D b({1}, {0.0});
    D y = conv2d(x, w, b, 1, 1);
    for (std::size_t i = 0; i < 9; ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("conv2d all-ones receptive field sums") {
    D x({1, 1, 3, 3}, std::vector<double>(9, 1.0));
    D w({1, 1, 3, 3}, std::vector<double>(9, 1.0));
    D b({1}, {0.0});
    D y = conv2d(x, w, b, 1, 1);
    CHECK(y.data()[4] == doctest::Approx(9));  // center
    CHECK(y.data()[0] == doctest::Approx(4));  // corner
    CHECK(y.data()[8] == doctest::Approx(4));
}

TEST_CASE("conv2d shape arithmetic") {
    SplitMix64 rng(1);
    D x = random_tensor({2, 4, 16, 16}, rng, false);
    D w = random_tensor({8, 4, 3, 3}, rng, false);
    D b = random_tensor({8}, rng, false);
    CHECK(conv2d(x, w, b, 1, 1).shape() == Shape{2, 8, 16, 16});
    D w5({5, 3, 3, 3});
    CHECK_THROWS_AS(conv2d(x, w5, b, 1, 1), DimensionError);
}

TEST_CASE("matmul hand values and identity") {
    D a({2, 2}, {1, 2, 3, 4});
    D b({2, 2}, {5, 6, 7, 8});
    D c = matmul(a, b);
    CHECK(c.data() == std::vector<double>{19, 22, 43, 50});

    D eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    SplitMix64 rng(2);
    D m = random_tensor({3, 3}, rng, false);
    D r = matmul(eye, m);
    for (std::size_t i = 0; i < 9; ++i) CHECK(r.data()[i] == doctest::Approx(m.data()[i]));
}

TEST_CASE("matmul batched shape and mismatch error") {
    SplitMix64 rng(3);
    D a = random_tensor({4, 6, 64, 30}, rng, false);
    D b = random_tensor({4, 6, 30, 64}, rng, false);
    CHECK(matmul(a, b).shape() == Shape{4, 6, 64, 64});
    D bad = random_tensor({4, 6, 31, 64}, rng, false);
    CHECK_THROWS_AS(matmul(a, bad), DimensionError);
}

TEST_CASE("softmax examples") {
    D x({2}, {0, 0});
    CHECK(softmax(x, 0).data()[0] == doctest::Approx(0.5));

    D y({2}, {std::log(1.0), std::log(3.0)});
    auto sy = softmax(y, 0).data();
    CHECK(sy[0] == doctest::Approx(0.25));
    CHECK(sy[1] == doctest::Approx(0.75));

    D z({3}, {1.0, -1e9, 2.0});
    auto sz = softmax(z, 0).data();
    CHECK(sz[1] < 1e-8);
    CHECK(sz[0] + sz[1] + sz[2] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("softmax rows sum to one and are nonnegative") {
    SplitMix64 rng(4);
    D x = random_tensor({3, 5, 7}, rng, false);
    for (std::size_t axis = 0; axis < 3; ++axis) {
        D s = softmax(x, axis);
        for (double v : s.data()) CHECK(v >= 0.0);
        // spot-check sums over the softmax axis
        D ssum = sum_all(s);
        CHECK(ssum.item() == doctest::Approx(double(x.numel() / x.shape()[axis])).epsilon(1e-9));
    }
}

TEST_CASE("layer_norm examples") {
    D g({3}, {1, 1, 1});
    D b({3}, {0, 0, 0});
    D c({3}, {5, 5, 5});
    auto y = layer_norm(c, g, b).data();
    for (double v : y) CHECK(std::abs(v) < 1e-3);

    D x({2}, {1, 3});
    D g2({2}, {1, 1});
    D b2({2}, {0, 0});
    auto y2 = layer_norm(x, g2, b2, 1e-12).data();
    CHECK(y2[0] == doctest::Approx(-1).epsilon(1e-5));
    CHECK(y2[1] == doctest::Approx(1).epsilon(1e-5));

    D g0({2}, {0, 0});
    D bb({2}, {4, 4});
    auto y3 = layer_norm(x, g0, bb).data();
    CHECK(y3[0] == doctest::Approx(4));
    CHECK(y3[1] == doctest::Approx(4));
}

TEST_CASE("backward basics") {
    SplitMix64 rng(5);
    D x = random_tensor({2, 3}, rng);
    sum_all(x).backward();
    for (double g : x.grad()) CHECK(g == doctest::Approx(1.0));

    D v({2}, {1, -2});
    v.set_requires_grad(true);
    sum_all(mul(v, v)).backward();
    CHECK(v.grad()[0] == doctest::Approx(2));
    CHECK(v.grad()[1] == doctest::Approx(-4));

    CHECK_THROWS_AS(x.backward(), ContractError);
}

TEST_CASE("gradient accumulation doubles without zeroing") {
    D x({3}, {1, 2, 3});
    x.set_requires_grad(true);
    sum_all(mul(x, x)).backward();
    std::vector<double> once = x.grad();
    sum_all(mul(x, x)).backward();
    for (std::size_t i = 0; i < 3; ++i) CHECK(x.grad()[i] == doctest::Approx(2 * once[i]));
}

TEST_CASE("reshape and permute round-trip bit-exactly") {
    SplitMix64 rng(6);
    D x = random_tensor({2, 3, 4, 5}, rng, false);
    D r = reshape(reshape(x, {6, 20}), {2, 3, 4, 5});
    CHECK(r.data() == x.data());
    D p = permute(permute(x, {2, 0, 3, 1}), {1, 3, 0, 2});
    CHECK(p.data() == x.data());
}

TEST_CASE("finite differences across every primitive op") {
    using ewt::testing::grad_check;
    SplitMix64 rng(42);
    for (int seed = 0; seed < 5; ++seed) {
        SplitMix64 r(100 + seed);
        {
            D a = random_tensor({2, 3}, r), b = random_tensor({2, 3}, r);
            auto res = grad_check([&] { return sum_all(mul(add(a, b), sub(a, b))); }, {a, b});
            CHECK_MESSAGE(res.max_rel_err <= 1e-4, res.worst);
        }
        {
            D a = random_tensor({2, 4}, r);
            auto res = grad_check([&] { return mean_all(mul(relu(a), gelu(a))); }, {a});
            CHECK_MESSAGE(res.max_rel_err <= 1e-4, res.worst);
        }
        {
            D a = random_tensor({2, 3, 4}, r), b = random_tensor({2, 4, 2}, r);
            auto res = grad_check([&] { return sum_all(mul(matmul(a, b), matmul(a, b))); }, {a, b});
            CHECK_MESSAGE(res.max_rel_err <= 1e-4, res.worst);
        }
        {
            D a = random_tensor({3, 4}, r);
            auto res = grad_check([&] { return sum_all(mul(softmax(a, 1), a)); }, {a});
            CHECK_MESSAGE(res.max_rel_err <= 1e-4, res.worst);
        }
        {
            D x = random_tensor({3, 4}, r), g = random_tensor({4}, r), b = random_tensor({4}, r);
            auto res = grad_check([&] { return sum_all(mul(layer_norm(x, g, b), x)); }, {x, g, b});
            CHECK_MESSAGE(res.max_rel_err <= 1e-4, res.worst);
        }
        {
            D x = random_tensor({1, 2, 4, 4}, r), w = random_tensor({3, 2, 3, 3}, r),
              b = random_tensor({3}, r);
            auto res =
                grad_check([&] { return sum_all(mul(conv2d(x, w, b, 1, 1), conv2d(x, w, b, 1, 1))); },
                           {x, w, b});
            CHECK_MESSAGE(res.max_rel_err <= 1e-4, res.worst);
        }
        {
            D x = random_tensor({2, 3, 4}, r), w = random_tensor({4, 5}, r), b = random_tensor({5}, r);
            auto res = grad_check([&] { return mean_all(abs_t(linear(x, w, b))); }, {x, w, b});
            CHECK_MESSAGE(res.max_rel_err <= 1e-4, res.worst);
        }
        {
            D a = random_tensor({2, 2, 2}, r), b = random_tensor({2, 3, 2}, r);
            auto res = grad_check(
                [&] {
                    D c = concat(std::vector<D>{a, b}, 1);
                    return sum_all(mul(narrow(c, 1, 1, 3), narrow(c, 1, 2, 3)));
                },
                {a, b});
            CHECK_MESSAGE(res.max_rel_err <= 1e-4, res.worst);
        }
        {
            D a = random_tensor({2, 3, 4, 5}, r);
            auto res = grad_check(
                [&] {
                    D p = permute(reshape(a, {2, 3, 20}), {2, 0, 1});
                    return sum_all(mul(p, p));
                },
                {a});
            CHECK_MESSAGE(res.max_rel_err <= 1e-4, res.worst);
        }
    }
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    D w({3}, {1, 2, 3});
    w.set_requires_grad(true);
    w.zero_grad();
    std::vector<D> params{w};
    AdamState<double> st;
    adam_step(params, st, 0.1);
    CHECK(st.step == 1);
    CHECK(w.data() == std::vector<double>{1, 2, 3});
}

TEST_CASE("adam: first step magnitude is about lr") {
    D w({2}, {0.0, 0.0});
    w.set_requires_grad(true);
    w.grad() = {0.5, -2.0};
    std::vector<D> params{w};
    AdamState<double> st;
    adam_step(params, st, 0.01);
    CHECK(w.data()[0] == doctest::Approx(-0.01).epsilon(1e-4));
    CHECK(w.data()[1] == doctest::Approx(0.01).epsilon(1e-4));
}

TEST_CASE("adam converges on (w-3)^2") {
    D w({1}, {0.0});
    w.set_requires_grad(true);
    std::vector<D> params{w};
    AdamState<double> st;
    for (int i = 0; i < 200; ++i) {
        w.zero_grad();
        D diff = sub(w, D::scalar(3.0));
        sum_all(mul(diff, diff)).backward();
        adam_step(params, st, 0.1);
    }
    CHECK(std::abs(w.data()[0] - 3.0) < 0.1);
}

TEST_CASE("l1 loss examples") {
    D a({2}, {0, 2}), b({2}, {1, 0});
    CHECK(l1_loss(a, b).item() == doctest::Approx(1.5));
    CHECK(l1_loss(a, a).item() == doctest::Approx(0));
    D c({3}, {0.5, 0.5, 0.5}), z({3}, {0, 0, 0});
    CHECK(l1_loss(c, z).item() == doctest::Approx(0.5));
    D wrong({3});
    CHECK_THROWS_AS(l1_loss(a, wrong), DimensionError);
}

TEST_CASE("no-grad guard suppresses tape recording") {
    D x({2}, {1, 2});
    x.set_requires_grad(true);
    NoGradGuard ng;
    D y = sum_all(x);
    CHECK_FALSE(y.requires_grad());
    CHECK(y.is_leaf());
}
