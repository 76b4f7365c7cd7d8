#include <cmath>
#include <vector>

#include "doctest.h"
#include "hybridseg/errors.hpp"
#include "hybridseg/rng.hpp"
#include "hybridseg/tensor.hpp"

using namespace hseg;

namespace {

Tensor random_leaf(Shape shape, Rng& rng, bool requires_grad = true, float lo = -1.0f,
                   float hi = 1.0f) {
    auto t = Tensor::zeros(shape, requires_grad);
    for (auto& v : t.mutable_data()) v = rng.uniform(lo, hi);
    return t;
}

}  // namespace

TEST_CASE("shape helpers") {
    CHECK(shape_numel({2, 3, 4}) == 24);
    CHECK(shape_numel({}) == 1);  // rank-0 scalar
    CHECK(shape_str({2, 3}) == "[2, 3]");
}

TEST_CASE("construction and element access") {
    auto z = Tensor::zeros({2, 3});
    CHECK(z.numel() == 6);
    CHECK(z.rank() == 2);
    for (float v : z.data()) CHECK(v == 0.0f);

    auto f = Tensor::full({4}, 2.5f);
    for (float v : f.data()) CHECK(v == 2.5f);

    auto s = Tensor::scalar(7.0f);
    CHECK(s.item() == 7.0f);

    auto t = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    CHECK(t.at({0, 1}) == 2.0f);
    CHECK(t.at({1, 0}) == 3.0f);

    CHECK_THROWS_AS(Tensor::zeros({2, 0}), DimensionError);
    CHECK_THROWS_AS(Tensor::from_data({3}, {1, 2}), DimensionError);
    CHECK_THROWS_AS(Tensor::from_data({1}, {std::nanf("")}), Error);
    CHECK_THROWS_AS(t.item(), UsageError);
    CHECK_THROWS_AS(t.at({0, 5}), DimensionError);
}

TEST_CASE("copying a tensor copies the handle, not the storage") {
    auto a = Tensor::zeros({2});
    Tensor b = a;
    a.mutable_data()[0] = 3.0f;
    CHECK(b.data()[0] == 3.0f);

    auto d = a.detached();
    a.mutable_data()[0] = 9.0f;
    CHECK(d.data()[0] == 3.0f);  // detached copies the values
}

TEST_CASE("mutable_data is restricted to leaves") {
    auto a = Tensor::zeros({2}, true);
    auto b = add(a, a);
    CHECK_THROWS_AS(b.mutable_data(), UsageError);
}

TEST_CASE("elementwise ops broadcast trailing axes") {
    auto a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    auto b = Tensor::from_data({3}, {10, 20, 30});
    auto s = add(a, b);
    CHECK(s.at({0, 0}) == 11.0f);
    CHECK(s.at({1, 2}) == 36.0f);

    auto d = sub(a, b);
    CHECK(d.at({1, 0}) == -6.0f);

    auto m = mul(a, Tensor::scalar(2.0f));
    CHECK(m.at({1, 1}) == 10.0f);

    CHECK(scale(a, -1.0f).at({0, 2}) == -3.0f);
    CHECK(relu(Tensor::from_data({2}, {-1, 2})).at({1}) == 2.0f);
    CHECK(relu(Tensor::from_data({2}, {-1, 2})).at({0}) == 0.0f);
    CHECK(sigmoid(Tensor::scalar(0.0f)).item() == doctest::Approx(0.5));

    auto bad = Tensor::zeros({4});
    CHECK_THROWS_AS(add(a, bad), DimensionError);
}

TEST_CASE("matmul with optional transposes") {
    auto a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    auto b = Tensor::from_data({3, 2}, {7, 8, 9, 10, 11, 12});
    auto c = matmul(a, b);
    CHECK(c.shape() == Shape{2, 2});
    CHECK(c.at({0, 0}) == 58.0f);
    CHECK(c.at({1, 1}) == 154.0f);

    // (a b)^T = b^T a^T exercised through the transpose flags.
    auto ct = matmul(b, a, true, true);
    CHECK(ct.at({0, 0}) == c.at({0, 0}));
    CHECK(ct.at({1, 0}) == c.at({0, 1}));

    CHECK_THROWS_AS(matmul(a, a), DimensionError);
}

TEST_CASE("conv2d computes a hand-checked cross-correlation") {
    // 1x1x3x3 input, single 2x2 kernel, stride 1, no padding.
    auto x = Tensor::from_data({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    auto w = Tensor::from_data({1, 1, 2, 2}, {1, 0, 0, 1});
    ConvSpec spec{1, 1, 2, 2, 1, 0, 1};
    auto y = conv2d(x, w, std::nullopt, spec);
    CHECK(y.shape() == Shape{1, 1, 2, 2});
    CHECK(y.at({0, 0, 0, 0}) == 6.0f);   // 1 + 5
    CHECK(y.at({0, 0, 1, 1}) == 14.0f);  // 5 + 9

    auto bias = Tensor::from_data({1}, {0.5f});
    auto yb = conv2d(x, w, bias, spec);
    CHECK(yb.at({0, 0, 0, 0}) == 6.5f);

    // Stride-2 with padding 1 keeps the corners.
    ConvSpec s2{1, 1, 2, 2, 2, 1, 1};
    auto y2 = conv2d(x, w, std::nullopt, s2);
    CHECK(y2.shape() == Shape{1, 1, 2, 2});
    CHECK(y2.at({0, 0, 0, 0}) == 1.0f);  // only x[0,0] under the kernel
}

TEST_CASE("grouped conv splits channels") {
    auto x = Tensor::from_data({1, 2, 2, 2}, {1, 1, 1, 1, 2, 2, 2, 2});
    auto w = Tensor::from_data({2, 1, 1, 1}, {3, 5});
    ConvSpec spec{2, 2, 1, 1, 1, 0, 2};  // depthwise 1x1
    auto y = conv2d(x, w, std::nullopt, spec);
    CHECK(y.at({0, 0, 0, 0}) == 3.0f);
    CHECK(y.at({0, 1, 0, 0}) == 10.0f);

    ConvSpec bad{3, 2, 1, 1, 1, 0, 2};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("transpose_conv2d is the adjoint of conv2d") {
    // <conv(x), y> == <x, conv_T(y)> for matching specs.
    Rng rng(11);
    auto x = random_leaf({1, 3, 6, 6}, rng, false);
    auto w = random_leaf({4, 3, 2, 2}, rng, false);  // conv weight [C_out, C_in, kh, kw]
    ConvSpec spec{3, 4, 2, 2, 2, 0, 1};
    auto y = conv2d(x, w, std::nullopt, spec);
    auto g = random_leaf(y.shape(), rng, false);

    // transpose_conv2d reads the weight as [C_in, C_out, kh, kw] with its
    // C_in equal to the forward conv's C_out, which is exactly w's layout.
    ConvSpec tspec{4, 3, 2, 2, 2, 0, 1};
    auto xt = transpose_conv2d(g, w, tspec);
    REQUIRE(xt.shape() == x.shape());

    double lhs = 0.0, rhs = 0.0;
    for (std::int64_t i = 0; i < y.numel(); ++i)
        lhs += static_cast<double>(y.data()[i]) * g.data()[i];
    for (std::int64_t i = 0; i < x.numel(); ++i)
        rhs += static_cast<double>(x.data()[i]) * xt.data()[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-4));
}

TEST_CASE("pooling") {
    auto x = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
    CHECK(pool2d(PoolKind::Max, x, 2, 2).item() == 4.0f);
    CHECK(pool2d(PoolKind::Avg, x, 2, 2).item() == 2.5f);

    auto g = pool2d(PoolKind::GlobalAvg, x, 0, 0);
    CHECK(g.shape() == Shape{1, 1, 1, 1});
    CHECK(g.item() == 2.5f);

    auto odd = Tensor::zeros({1, 1, 3, 3});
    CHECK_THROWS_AS(pool2d(PoolKind::Max, odd, 2, 2), ConfigError);
}

TEST_CASE("structural ops") {
    auto x = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});

    auto r = reshape(x, {3, 2});
    CHECK(r.at({2, 1}) == 6.0f);
    CHECK_THROWS_AS(reshape(x, {4, 2}), DimensionError);

    auto t = transpose2d(x);
    CHECK(t.shape() == Shape{3, 2});
    CHECK(t.at({0, 1}) == 4.0f);

    auto c = concat({x, x}, 0);
    CHECK(c.shape() == Shape{4, 3});
    CHECK(c.at({3, 2}) == 6.0f);
    auto c1 = concat({x, x}, 1);
    CHECK(c1.shape() == Shape{2, 6});
    CHECK(c1.at({0, 4}) == 2.0f);

    auto n = narrow(x, 1, 1, 2);
    CHECK(n.shape() == Shape{2, 2});
    CHECK(n.at({0, 0}) == 2.0f);
    CHECK_THROWS_AS(narrow(x, 1, 2, 3), DimensionError);

    auto img = Tensor::from_data({1, 1, 1}, {5});
    auto p = pad2d(img, 1, 0, 0, 1);
    CHECK(p.shape() == Shape{1, 2, 2});
    CHECK(p.at({0, 0, 0}) == 0.0f);
    CHECK(p.at({0, 1, 0}) == 5.0f);
    CHECK(p.at({0, 1, 1}) == 0.0f);
}

TEST_CASE("softmax rows are simplex points") {
    auto x = Tensor::from_data({2, 3}, {1, 2, 3, -1, 0, 1});
    auto s = softmax(x, 1);
    for (int r = 0; r < 2; ++r) {
        double total = 0.0;
        for (int c = 0; c < 3; ++c) total += s.at({r, c});
        CHECK(total == doctest::Approx(1.0));
    }
    // Shift invariance: both rows differ by a constant, so they coincide.
    CHECK(s.at({0, 0}) == doctest::Approx(s.at({1, 0})));
    // Large logits must not overflow.
    auto big = softmax(Tensor::from_data({1, 2}, {1000.0f, 1000.0f}), 1);
    CHECK(big.at({0, 0}) == doctest::Approx(0.5));
}

TEST_CASE("layer_norm standardizes the last axis") {
    auto x = Tensor::from_data({2, 4}, {1, 2, 3, 4, -2, 0, 2, 4});
    auto gamma = Tensor::full({4}, 1.0f);
    auto beta = Tensor::zeros({4});
    auto y = layer_norm(x, gamma, beta);
    for (int r = 0; r < 2; ++r) {
        double mean = 0.0, var = 0.0;
        for (int c = 0; c < 4; ++c) mean += y.at({r, c});
        mean /= 4;
        for (int c = 0; c < 4; ++c) var += (y.at({r, c}) - mean) * (y.at({r, c}) - mean);
        CHECK(mean == doctest::Approx(0.0).epsilon(1e-5));
        CHECK(var / 4 == doctest::Approx(1.0).epsilon(1e-3));
    }
}

TEST_CASE("batch_norm train vs eval statistics") {
    Rng rng(3);
    auto x = random_leaf({4, 2, 3, 3}, rng, false);
    auto scl = Tensor::full({2}, 1.0f);
    auto shf = Tensor::zeros({2});
    auto rm = Tensor::zeros({2});
    auto rv = Tensor::full({2}, 1.0f);

    auto y = batch_norm(x, scl, shf, rm, rv, Mode::Train, 0.1f);
    // Per-channel output statistics are standardized in train mode.
    for (int c = 0; c < 2; ++c) {
        double mean = 0.0, var = 0.0;
        for (int n = 0; n < 4; ++n)
            for (int i = 0; i < 9; ++i) mean += y.at({n, c, i / 3, i % 3});
        mean /= 36;
        for (int n = 0; n < 4; ++n)
            for (int i = 0; i < 9; ++i) {
                double d = y.at({n, c, i / 3, i % 3}) - mean;
                var += d * d;
            }
        CHECK(mean == doctest::Approx(0.0).epsilon(1e-4));
        CHECK(var / 36 == doctest::Approx(1.0).epsilon(1e-3));
    }
    // Running stats moved toward the batch stats.
    CHECK(rm.data()[0] != 0.0f);
    CHECK(rv.data()[0] != 1.0f);

    // Eval mode with identity running stats is a pass-through.
    auto rm0 = Tensor::zeros({2});
    auto rv0 = Tensor::full({2}, 1.0f);
    auto ye = batch_norm(x, scl, shf, rm0, rv0, Mode::Eval);
    CHECK(ye.at({0, 0, 0, 0}) ==
          doctest::Approx(x.at({0, 0, 0, 0})).epsilon(1e-4));
    // And eval must not touch the running stats.
    CHECK(rm0.data()[0] == 0.0f);
    CHECK(rv0.data()[0] == 1.0f);
}

TEST_CASE("dropout modes") {
    Rng rng(5);
    auto x = Tensor::full({100}, 1.0f, true);
    auto ye = dropout(x, 0.5f, Mode::Eval, rng);
    for (float v : ye.data()) CHECK(v == 1.0f);  // eval is identity

    auto yt = dropout(x, 0.5f, Mode::Train, rng);
    int zeros = 0;
    for (float v : yt.data()) {
        if (v == 0.0f) {
            ++zeros;
        } else {
            CHECK(v == doctest::Approx(2.0f));  // inverted scaling 1/(1-p)
        }
    }
    CHECK(zeros > 20);
    CHECK(zeros < 80);
}

TEST_CASE("reductions") {
    auto x = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    CHECK(sum(x).item() == 10.0f);
    CHECK(mean(x).item() == 2.5f);

    auto m = Tensor::from_data({1, 2, 1, 2}, {1, 3, 5, 7});
    auto ms = reduce_mean_spatial(m);
    CHECK(ms.shape() == Shape{1, 2});
    CHECK(ms.at({0, 0}) == 2.0f);
    CHECK(reduce_max_spatial(m).at({0, 1}) == 7.0f);

    auto mc = reduce_mean_channels(m);
    CHECK(mc.shape() == Shape{1, 1, 1, 2});
    CHECK(mc.at({0, 0, 0, 0}) == 3.0f);
    CHECK(reduce_max_channels(m).at({0, 0, 0, 1}) == 7.0f);
}

TEST_CASE("backward through a composite expression") {
    // f = sum((x * x) + 2x); df/dx = 2x + 2.
    auto x = Tensor::from_data({3}, {1, -2, 0.5f}, true);
    auto f = sum(add(mul(x, x), scale(x, 2.0f)));
    f.backward();
    REQUIRE(x.has_grad());
    CHECK(x.grad()[0] == doctest::Approx(4.0f));
    CHECK(x.grad()[1] == doctest::Approx(-2.0f));
    CHECK(x.grad()[2] == doctest::Approx(3.0f));
}

TEST_CASE("gradients accumulate across uses and reset on zero_grad") {
    auto x = Tensor::from_data({1}, {3}, true);
    auto f = sum(mul(x, x));
    f.backward();
    CHECK(x.grad()[0] == doctest::Approx(6.0f));
    f.backward();  // second sweep accumulates
    CHECK(x.grad()[0] == doctest::Approx(12.0f));
    x.zero_grad();
    CHECK(x.grad()[0] == 0.0f);
}

TEST_CASE("broadcast backward reduces over the broadcast axes") {
    auto a = Tensor::from_data({2, 2}, {1, 2, 3, 4}, true);
    auto b = Tensor::from_data({2}, {10, 20}, true);
    sum(mul(a, b)).backward();
    CHECK(a.grad()[0] == doctest::Approx(10.0f));
    CHECK(a.grad()[3] == doctest::Approx(20.0f));
    CHECK(b.grad()[0] == doctest::Approx(4.0f));   // 1 + 3
    CHECK(b.grad()[1] == doctest::Approx(6.0f));   // 2 + 4
}

TEST_CASE("NoGradGuard suppresses graph recording") {
    auto x = Tensor::from_data({2}, {1, 2}, true);
    CHECK(grad_enabled());
    {
        NoGradGuard guard;
        CHECK(!grad_enabled());
        auto y = sum(mul(x, x));
        CHECK(!y.requires_grad());
        CHECK_THROWS_AS(y.backward(), UsageError);
    }
    CHECK(grad_enabled());
}

TEST_CASE("backward requires a scalar root") {
    auto x = Tensor::from_data({2}, {1, 2}, true);
    auto y = mul(x, x);
    CHECK_THROWS_AS(y.backward(), UsageError);
}

TEST_CASE("conv spec geometry") {
    ConvSpec s{1, 1, 3, 3, 2, 1, 1};
    auto [oh, ow] = s.out_size(9, 9);
    CHECK(oh == 4);
    CHECK(ow == 4);
    CHECK_THROWS_AS(s.out_size(8, 8), ConfigError);  // not integral

    ConvSpec t{1, 1, 2, 2, 2, 0, 1};
    auto [th, tw] = t.transposed_out_size(4, 4);
    CHECK(th == 8);
    CHECK(tw == 8);
}
