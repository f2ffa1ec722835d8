#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "metadepth/ops.hpp"
#include "metadepth/rng.hpp"
#include "metadepth/tensor.hpp"

using namespace metadepth;

namespace {

Tensor<double> random_tensor(Shape shape, RngStream& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(lo, hi);
    return t;
}

Tensor<double> random_mask(Shape shape, RngStream& rng, double keep = 0.7) {
    Tensor<double> t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.bernoulli(keep) ? 1.0 : 0.0;
    return t;
}

// Central-difference gradient oracle. `loss_fn` must rebuild the scalar loss
// from the current tensor contents on every call; the tape gradients of every
// tensor in `inputs` are compared against (f(x+e)-f(x-e))/2e element-wise.
void check_gradients(const std::vector<Tensor<double>*>& inputs,
                     const std::function<Tensor<double>()>& loss_fn, double rel_tol = 1e-4,
                     double abs_floor = 1e-7) {
    for (auto* t : inputs) {
        t->set_requires_grad(true);
        t->drop_grad();
    }
    std::vector<std::vector<double>> auto_grads;
    {
        Tape<double> tape;
        TapeScope<double> scope(tape);
        Tensor<double> loss = loss_fn();
        backward(loss);
    }
    for (auto* t : inputs) auto_grads.push_back(t->grad_values());
    for (auto* t : inputs) t->set_requires_grad(false);

    const double eps = 1e-5;
    for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
        Tensor<double>& x = *inputs[ti];
        for (std::int64_t i = 0; i < x.numel(); ++i) {
            const double saved = x.data()[i];
            x.data()[i] = saved + eps;
            const double up = loss_fn().item();
            x.data()[i] = saved - eps;
            const double down = loss_fn().item();
            x.data()[i] = saved;
            const double fd = (up - down) / (2.0 * eps);
            const double ad = auto_grads[ti][static_cast<std::size_t>(i)];
            const double err = std::abs(fd - ad);
            const double bound = rel_tol * std::max(std::abs(fd), std::abs(ad)) + abs_floor;
            INFO("input ", ti, " element ", i, ": finite-diff ", fd, " vs tape ", ad);
            CHECK(err <= bound);
        }
    }
}

// Plain six-loop cross-correlation, kept deliberately naive so it cannot
// share a bug with the production kernel.
Tensor<double> conv2d_reference(const Tensor<double>& input, const Tensor<double>& kernel,
                                const Tensor<double>& bias, int stride, int padding) {
    const std::int64_t n = input.dim(0), ci = input.dim(1), h = input.dim(2), w = input.dim(3);
    const std::int64_t co = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
    const std::int64_t ho = (h + 2 * padding - kh) / stride + 1;
    const std::int64_t wo = (w + 2 * padding - kw) / stride + 1;
    Tensor<double> out(Shape{n, co, ho, wo});
    for (std::int64_t in = 0; in < n; ++in)
        for (std::int64_t oc = 0; oc < co; ++oc)
            for (std::int64_t oy = 0; oy < ho; ++oy)
                for (std::int64_t ox = 0; ox < wo; ++ox) {
                    double acc = bias.data()[oc];
                    for (std::int64_t ic = 0; ic < ci; ++ic)
                        for (std::int64_t ky = 0; ky < kh; ++ky)
                            for (std::int64_t kx = 0; kx < kw; ++kx) {
                                const std::int64_t iy = oy * stride + ky - padding;
                                const std::int64_t ix = ox * stride + kx - padding;
                                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                                acc += input.data()[((in * ci + ic) * h + iy) * w + ix] *
                                       kernel.data()[((oc * ci + ic) * kh + ky) * kw + kx];
                            }
                    out.data()[((in * co + oc) * ho + oy) * wo + ox] = acc;
                }
    return out;
}

}  // namespace

TEST_CASE("tensor copies alias storage while clone detaches it") {
    Tensor<double> a(Shape{2, 3}, 1.0);
    Tensor<double> b = a;
    CHECK(a.same_storage(b));
    b.data()[0] = 5.0;
    CHECK(a.data()[0] == 5.0);

    Tensor<double> c = a.clone();
    CHECK(!a.same_storage(c));
    c.data()[0] = 9.0;
    CHECK(a.data()[0] == 5.0);
}

TEST_CASE("item refuses non-scalar tensors") {
    Tensor<double> t(Shape{2, 2}, 0.0);
    CHECK_THROWS_AS((void)t.item(), UsageError);
    CHECK(Tensor<double>::scalar(3.5).item() == 3.5);
}

TEST_CASE("shape constructor rejects mismatched data length") {
    CHECK_THROWS_AS(Tensor<double>(Shape{2, 2}, std::vector<double>{1.0, 2.0}), DimensionError);
}

TEST_CASE("backward demands a scalar, an active tape, and a fresh tape") {
    Tensor<double> x(Shape{2}, std::vector<double>{1.0, 2.0});
    x.set_requires_grad(true);

    SUBCASE("no active tape") {
        Tensor<double> s = Tensor<double>::scalar(1.0);
        CHECK_THROWS_AS(backward(s), UsageError);
    }
    SUBCASE("non-scalar loss") {
        Tape<double> tape;
        TapeScope<double> scope(tape);
        Tensor<double> y = elu(x);
        CHECK_THROWS_AS(backward(y), UsageError);
    }
    SUBCASE("tape cannot be consumed twice") {
        Tape<double> tape;
        TapeScope<double> scope(tape);
        Tensor<double> s = sum(x);
        backward(s);
        CHECK_THROWS_AS(backward(s), UsageError);
    }
}

TEST_CASE("ops do not record when no tape is active") {
    Tensor<double> x(Shape{1, 2, 4, 4}, 0.5);
    x.set_requires_grad(true);
    Tensor<double> y = sigmoid(x);
    CHECK(!y.requires_grad());
}

TEST_CASE("conv2d matches a naive six-loop reference") {
    RngStream rng(42, 7);
    struct Cfg {
        std::int64_t n, ci, h, w, co, k;
        int stride, padding;
    };
    const Cfg cases[] = {
        {1, 1, 5, 5, 1, 3, 1, 0}, {2, 3, 6, 6, 4, 3, 1, 1}, {1, 2, 8, 8, 3, 3, 2, 1},
        {2, 4, 7, 5, 2, 1, 1, 0}, {1, 3, 9, 9, 5, 5, 2, 2}, {3, 2, 4, 6, 2, 3, 1, 1},
    };
    for (const Cfg& c : cases) {
        CAPTURE(c.h);
        CAPTURE(c.stride);
        Tensor<double> input = random_tensor({c.n, c.ci, c.h, c.w}, rng);
        Tensor<double> kernel = random_tensor({c.co, c.ci, c.k, c.k}, rng);
        Tensor<double> bias = random_tensor({c.co}, rng);
        Tensor<double> got = conv2d(input, kernel, bias, c.stride, c.padding);
        Tensor<double> want = conv2d_reference(input, kernel, bias, c.stride, c.padding);
        REQUIRE(got.shape() == want.shape());
        for (std::int64_t i = 0; i < got.numel(); ++i)
            CHECK(std::abs(got.data()[i] - want.data()[i]) <= 1e-12);
    }
}

TEST_CASE("conv2d rejects inconsistent operands") {
    Tensor<double> input(Shape{1, 3, 8, 8}, 0.1);
    Tensor<double> kernel(Shape{4, 2, 3, 3}, 0.1);  // channel mismatch
    Tensor<double> bias(Shape{4}, 0.0);
    CHECK_THROWS_AS(conv2d(input, kernel, bias, 1, 1), DimensionError);
    Tensor<double> kernel_ok(Shape{4, 3, 3, 3}, 0.1);
    Tensor<double> bias_bad(Shape{3}, 0.0);
    CHECK_THROWS_AS(conv2d(input, kernel_ok, bias_bad, 1, 1), DimensionError);
}

TEST_CASE("elu and sigmoid match their closed forms") {
    RngStream rng(1, 2);
    Tensor<double> x = random_tensor({64}, rng, -4.0, 4.0);
    Tensor<double> ye = elu(x);
    Tensor<double> ys = sigmoid(x);
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        const double v = x.data()[i];
        const double elu_ref = v > 0.0 ? v : std::expm1(v);
        const double sig_ref = 1.0 / (1.0 + std::exp(-v));
        CHECK(ye.data()[i] == doctest::Approx(elu_ref).epsilon(1e-12));
        CHECK(ys.data()[i] == doctest::Approx(sig_ref).epsilon(1e-12));
    }
}

TEST_CASE("sigmoid saturates to exact endpoints without overflow") {
    Tensor<double> x(Shape{2}, std::vector<double>{-1e4, 1e4});
    Tensor<double> y = sigmoid(x);
    CHECK(y.data()[0] == 0.0);
    CHECK(y.data()[1] == 1.0);
}

TEST_CASE("upsample2x interpolates a hand-checked 2x2 block") {
    // align-corners=false: output sample centers sit at (i+0.5)/2 - 0.5 in
    // input coordinates, so the four center outputs blend all four inputs.
    Tensor<double> x(Shape{1, 1, 2, 2}, std::vector<double>{0.0, 1.0, 2.0, 3.0});
    Tensor<double> y = upsample2x(x);
    REQUIRE(y.shape() == Shape{1, 1, 4, 4});
    // corners replicate the nearest input
    CHECK(y.data()[0] == doctest::Approx(0.0));
    CHECK(y.data()[3] == doctest::Approx(1.0));
    CHECK(y.data()[12] == doctest::Approx(2.0));
    CHECK(y.data()[15] == doctest::Approx(3.0));
    // interior points average atbilinear weights 0.75/0.25
    CHECK(y.data()[5] == doctest::Approx(0.75 * (0.75 * 0.0 + 0.25 * 1.0) +
                                         0.25 * (0.75 * 2.0 + 0.25 * 3.0)));
    CHECK(y.data()[10] == doctest::Approx(0.25 * (0.25 * 0.0 + 0.75 * 1.0) +
                                          0.75 * (0.25 * 2.0 + 0.75 * 3.0)));
}

TEST_CASE("l2_loss averages masked squared error and counts valid pixels") {
    Tensor<double> pred(Shape{1, 1, 2, 2}, std::vector<double>{1.0, 2.0, 3.0, 4.0});
    Tensor<double> target(Shape{1, 1, 2, 2}, std::vector<double>{0.0, 0.0, 0.0, 0.0});
    Tensor<double> mask(Shape{1, 1, 2, 2}, std::vector<double>{1.0, 0.0, 1.0, 0.0});
    MaskedLoss<double> loss = l2_loss(pred, target, mask);
    CHECK(loss.valid_count == 2);
    CHECK(loss.value.item() == doctest::Approx((1.0 + 9.0) / 2.0));
}

TEST_CASE("l2_loss with an all-zero mask reports zero valid pixels and a detached zero") {
    Tensor<double> pred(Shape{4}, 2.0);
    pred.set_requires_grad(true);
    Tensor<double> target(Shape{4}, 0.0);
    Tensor<double> mask(Shape{4}, 0.0);
    Tape<double> tape;
    TapeScope<double> scope(tape);
    MaskedLoss<double> loss = l2_loss(pred, target, mask);
    CHECK(loss.valid_count == 0);
    CHECK(loss.value.item() == 0.0);
    CHECK(!loss.value.requires_grad());
}

TEST_CASE("blend_batch computes per-sample convex combinations") {
    Tensor<double> a(Shape{2, 1, 1, 2}, std::vector<double>{1.0, 2.0, 3.0, 4.0});
    Tensor<double> b(Shape{2, 1, 1, 2}, std::vector<double>{5.0, 6.0, 7.0, 8.0});
    Tensor<double> out = blend_batch(a, b, {0.25, 1.0});
    CHECK(out.data()[0] == doctest::Approx(0.25 * 1.0 + 0.75 * 5.0));
    CHECK(out.data()[1] == doctest::Approx(0.25 * 2.0 + 0.75 * 6.0));
    CHECK(out.data()[2] == doctest::Approx(3.0));
    CHECK(out.data()[3] == doctest::Approx(4.0));
    CHECK_THROWS_AS(blend_batch(a, b, {0.5}), DimensionError);
}

TEST_CASE("select_channels swaps exactly the dropped channels") {
    Tensor<double> a(Shape{1, 3, 1, 2}, std::vector<double>{1, 1, 2, 2, 3, 3});
    Tensor<double> b(Shape{1, 3, 1, 2}, std::vector<double>{9, 9, 8, 8, 7, 7});
    Tensor<double> out = select_channels(a, b, {1, 0, 1});
    CHECK(out.data()[0] == 1.0);
    CHECK(out.data()[2] == 8.0);
    CHECK(out.data()[4] == 3.0);
    CHECK_THROWS_AS(select_channels(a, b, {1, 0}), DimensionError);
}

TEST_CASE("gradients agree with central differences across op zoo") {
    RngStream rng(777, 3);

    SUBCASE("conv2d stride 1 no padding") {
        Tensor<double> in = random_tensor({2, 2, 5, 5}, rng);
        Tensor<double> k = random_tensor({3, 2, 3, 3}, rng);
        Tensor<double> b = random_tensor({3}, rng);
        Tensor<double> tgt = random_tensor({2, 3, 3, 3}, rng);
        Tensor<double> ones(Shape{2, 3, 3, 3}, 1.0);
        check_gradients({&in, &k, &b}, [&] {
            return l2_loss(conv2d(in, k, b, 1, 0), tgt, ones).value;
        });
    }
    SUBCASE("conv2d stride 2 padding 1") {
        Tensor<double> in = random_tensor({1, 3, 6, 6}, rng);
        Tensor<double> k = random_tensor({2, 3, 3, 3}, rng);
        Tensor<double> b = random_tensor({2}, rng);
        Tensor<double> tgt = random_tensor({1, 2, 3, 3}, rng);
        Tensor<double> ones(Shape{1, 2, 3, 3}, 1.0);
        check_gradients({&in, &k, &b}, [&] {
            return l2_loss(conv2d(in, k, b, 2, 1), tgt, ones).value;
        });
    }
    SUBCASE("conv2d 1x1 kernel") {
        Tensor<double> in = random_tensor({2, 4, 3, 3}, rng);
        Tensor<double> k = random_tensor({2, 4, 1, 1}, rng);
        Tensor<double> b = random_tensor({2}, rng);
        check_gradients({&in, &k, &b}, [&] { return sum(conv2d(in, k, b, 1, 0)); });
    }
    SUBCASE("elu crossing the origin") {
        Tensor<double> x = random_tensor({3, 2, 2, 2}, rng, -2.0, 2.0);
        Tensor<double> tgt = random_tensor({3, 2, 2, 2}, rng);
        Tensor<double> ones(Shape{3, 2, 2, 2}, 1.0);
        check_gradients({&x}, [&] { return l2_loss(elu(x), tgt, ones).value; });
    }
    SUBCASE("sigmoid") {
        Tensor<double> x = random_tensor({2, 2, 3, 3}, rng, -3.0, 3.0);
        Tensor<double> tgt = random_tensor({2, 2, 3, 3}, rng);
        Tensor<double> ones(Shape{2, 2, 3, 3}, 1.0);
        check_gradients({&x}, [&] { return l2_loss(sigmoid(x), tgt, ones).value; });
    }
    SUBCASE("upsample2x") {
        Tensor<double> x = random_tensor({2, 2, 3, 3}, rng);
        Tensor<double> tgt = random_tensor({2, 2, 6, 6}, rng);
        Tensor<double> ones(Shape{2, 2, 6, 6}, 1.0);
        check_gradients({&x}, [&] { return l2_loss(upsample2x(x), tgt, ones).value; });
    }
    SUBCASE("l2_loss with holes in the mask") {
        Tensor<double> pred = random_tensor({2, 1, 4, 4}, rng);
        Tensor<double> tgt = random_tensor({2, 1, 4, 4}, rng);
        Tensor<double> mask = random_mask({2, 1, 4, 4}, rng, 0.6);
        check_gradients({&pred}, [&] { return l2_loss(pred, tgt, mask).value; });
    }
    SUBCASE("concat_channels") {
        Tensor<double> a = random_tensor({2, 2, 3, 3}, rng);
        Tensor<double> b = random_tensor({2, 3, 3, 3}, rng);
        Tensor<double> tgt = random_tensor({2, 5, 3, 3}, rng);
        Tensor<double> ones(Shape{2, 5, 3, 3}, 1.0);
        check_gradients({&a, &b}, [&] { return l2_loss(concat_channels(a, b), tgt, ones).value; });
    }
    SUBCASE("scale and sum") {
        Tensor<double> x = random_tensor({3, 5}, rng);
        check_gradients({&x}, [&] { return scale(sum(x), -2.5); });
    }
    SUBCASE("blend_batch propagates through both operands") {
        Tensor<double> a = random_tensor({3, 2, 2, 2}, rng);
        Tensor<double> b = random_tensor({3, 2, 2, 2}, rng);
        Tensor<double> tgt = random_tensor({3, 2, 2, 2}, rng);
        Tensor<double> ones(Shape{3, 2, 2, 2}, 1.0);
        const std::vector<double> lam = {0.3, 0.9, 0.0};
        check_gradients({&a, &b}, [&] { return l2_loss(blend_batch(a, b, lam), tgt, ones).value; });
    }
    SUBCASE("select_channels propagates to the chosen source only") {
        Tensor<double> a = random_tensor({2, 4, 2, 2}, rng);
        Tensor<double> b = random_tensor({2, 4, 2, 2}, rng);
        Tensor<double> tgt = random_tensor({2, 4, 2, 2}, rng);
        Tensor<double> ones(Shape{2, 4, 2, 2}, 1.0);
        const std::vector<std::uint8_t> keep = {1, 0, 0, 1};
        check_gradients({&a, &b}, [&] {
            return l2_loss(select_channels(a, b, keep), tgt, ones).value;
        });
    }
    SUBCASE("two-layer composition with every op in the chain") {
        Tensor<double> in = random_tensor({1, 2, 8, 8}, rng, -0.5, 0.5);
        Tensor<double> k1 = random_tensor({3, 2, 3, 3}, rng, -0.4, 0.4);
        Tensor<double> b1 = random_tensor({3}, rng, -0.1, 0.1);
        Tensor<double> k2 = random_tensor({1, 6, 3, 3}, rng, -0.4, 0.4);
        Tensor<double> b2 = random_tensor({1}, rng, -0.1, 0.1);
        Tensor<double> tgt = random_tensor({1, 1, 8, 8}, rng, 0.0, 1.0);
        Tensor<double> mask = random_mask({1, 1, 8, 8}, rng, 0.8);
        check_gradients({&in, &k1, &b1, &k2, &b2}, [&] {
            Tensor<double> h = elu(conv2d(in, k1, b1, 2, 1));   // (1,3,4,4)
            Tensor<double> u = upsample2x(h);                   // (1,3,8,8)
            Tensor<double> c = concat_channels(u, upsample2x(scale(h, 0.5)));
            Tensor<double> d = sigmoid(conv2d(c, k2, b2, 1, 1));
            return l2_loss(d, tgt, mask).value;
        });
    }
}

TEST_CASE("gradient accumulation sums across repeated backward passes") {
    // Two tapes over the same parameters accumulate into one grad buffer;
    // this is the contract the gradient-accumulation baseline relies on.
    Tensor<double> x(Shape{3}, std::vector<double>{1.0, -2.0, 0.5});
    x.set_requires_grad(true);
    {
        Tape<double> tape;
        TapeScope<double> scope(tape);
        Tensor<double> s = sum(x);
        backward(s);
    }
    {
        Tape<double> tape;
        TapeScope<double> scope(tape);
        Tensor<double> s = scale(sum(x), 2.0);
        backward(s);
    }
    for (int i = 0; i < 3; ++i) CHECK(x.grad_values()[static_cast<std::size_t>(i)] == doctest::Approx(3.0));
}

TEST_CASE("debug verification flags non-finite op outputs") {
    set_debug_checks(true);
    Tensor<double> x(Shape{2}, std::vector<double>{1.0, std::numeric_limits<double>::quiet_NaN()});
    CHECK_THROWS_AS((void)elu(x), NumericError);
    set_debug_checks(false);
    CHECK_NOTHROW((void)elu(x));
}
