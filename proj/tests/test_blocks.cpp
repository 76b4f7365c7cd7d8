#include <cmath>

#include "doctest.h"
#include "hybridseg/blocks.hpp"
#include "hybridseg/errors.hpp"
#include "hybridseg/rng.hpp"
#include "hybridseg/tensor.hpp"

using namespace hseg;

namespace {

Tensor random_leaf(Shape shape, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
    auto t = Tensor::zeros(shape);
    for (auto& v : t.mutable_data()) v = rng.uniform(lo, hi);
    return t;
}

void zero_out(Tensor t) {
    for (auto& v : t.mutable_data()) v = 0.0f;
}

}  // namespace

TEST_CASE("he_uniform respects the fan-in bound") {
    Rng rng(7);
    const std::int64_t fan_in = 48;
    auto w = he_uniform({4, 12, 10}, fan_in, rng);
    CHECK(w.requires_grad());
    const float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
    float max_abs = 0.0f;
    for (float v : w.data()) {
        CHECK(std::abs(v) <= bound);
        max_abs = std::max(max_abs, std::abs(v));
    }
    // With 480 draws the empirical max should approach the bound.
    CHECK(max_abs > 0.8f * bound);
    CHECK_THROWS_AS(he_uniform({2}, 0, rng), ConfigError);
}

TEST_CASE("squeeze-and-excitation gates per channel") {
    Rng rng(1);
    auto p = make_se_params(8, 4, rng);
    CHECK(p.w1.shape() == Shape{2, 8});
    CHECK(p.w2.shape() == Shape{8, 2});

    auto x = random_leaf({2, 8, 3, 3}, rng);
    auto y = se_forward(x, p);
    CHECK(y.shape() == x.shape());

    // Zeroed MLP gives sigmoid(0) = 1/2, so the block halves its input.
    zero_out(p.w1);
    zero_out(p.w2);
    auto half = se_forward(x, p);
    for (std::int64_t i = 0; i < x.numel(); ++i)
        CHECK(half.data()[i] == doctest::Approx(0.5f * x.data()[i]));

    // Reduction clamps to the channel count instead of failing.
    auto narrow_p = make_se_params(4, 16, rng);
    CHECK(narrow_p.w1.shape() == Shape{1, 4});

    CHECK_THROWS_AS(se_forward(Tensor::zeros({8, 3, 3}), p), DimensionError);
    CHECK_THROWS_AS(se_forward(Tensor::zeros({1, 4, 3, 3}), p), DimensionError);
    CHECK_THROWS_AS(make_se_params(6, 4, rng), ConfigError);  // 6 % 4 != 0
}

TEST_CASE("cbam applies channel then spatial attention") {
    Rng rng(2);
    auto p = make_cbam_params(8, 4, 7, rng);
    CHECK(p.spatial_w.shape() == Shape{1, 2, 7, 7});

    auto x = random_leaf({1, 8, 5, 5}, rng, 0.1f, 1.0f);
    auto y = cbam_forward(x, p);
    CHECK(y.shape() == x.shape());

    // Zeroed weights: channel gate 1/2, spatial gate sigmoid(0) = 1/2.
    zero_out(p.mlp_w1);
    zero_out(p.mlp_w2);
    zero_out(p.spatial_w);
    zero_out(p.spatial_b);
    auto q = cbam_forward(x, p);
    for (std::int64_t i = 0; i < x.numel(); ++i)
        CHECK(q.data()[i] == doctest::Approx(0.25f * x.data()[i]));

    CHECK_THROWS_AS(make_cbam_params(8, 4, 6, rng), ConfigError);  // even kernel
}

TEST_CASE("attention gate scales the skip path") {
    Rng rng(3);
    auto p = make_attn_gate_params(6, 10, 3, rng);
    auto skip = random_leaf({2, 6, 4, 4}, rng);
    auto gate = random_leaf({2, 10, 4, 4}, rng);
    auto y = attention_gate(skip, gate, p);
    CHECK(y.shape() == skip.shape());

    // Zeroed psi projection leaves a uniform coefficient of 1/2.
    zero_out(p.psi_w);
    zero_out(p.psi_b);
    auto half = attention_gate(skip, gate, p);
    for (std::int64_t i = 0; i < skip.numel(); ++i)
        CHECK(half.data()[i] == doctest::Approx(0.5f * skip.data()[i]));

    auto small = Tensor::zeros({2, 10, 2, 2});
    CHECK_THROWS_AS(attention_gate(skip, small, p), DimensionError);
}

TEST_CASE("scaled dot-product attention limit cases") {
    Rng rng(4);
    // A single key: the softmax collapses and every query returns v.
    auto q = random_leaf({5, 3}, rng);
    auto k = random_leaf({1, 3}, rng);
    auto v = Tensor::from_data({1, 2}, {0.3f, -1.2f});
    auto out = scaled_dot_product_attention(q, k, v);
    REQUIRE(out.shape() == Shape{5, 2});
    for (int r = 0; r < 5; ++r) {
        CHECK(out.at({r, 0}) == doctest::Approx(0.3f));
        CHECK(out.at({r, 1}) == doctest::Approx(-1.2f));
    }

    // Zero queries weight all keys equally: each row is the mean of v.
    auto q0 = Tensor::zeros({2, 3});
    auto k4 = random_leaf({4, 3}, rng);
    auto v4 = random_leaf({4, 2}, rng);
    auto mean_out = scaled_dot_product_attention(q0, k4, v4);
    for (int c = 0; c < 2; ++c) {
        double m = 0.0;
        for (int r = 0; r < 4; ++r) m += v4.at({r, c});
        CHECK(mean_out.at({0, c}) == doctest::Approx(m / 4).epsilon(1e-5));
        CHECK(mean_out.at({1, c}) == doctest::Approx(m / 4).epsilon(1e-5));
    }
}

TEST_CASE("transformer block keeps token geometry and is deterministic in eval") {
    Rng rng(5);
    auto p = make_transformer_block_params(16, 4, 32, 0.1f, rng);
    CHECK(p.wq.size() == 4);
    CHECK(p.wq[0].shape() == Shape{16, 4});
    CHECK(p.wo.shape() == Shape{16, 16});

    auto x = random_leaf({9, 16}, rng);
    Rng r1(11), r2(11);
    auto y1 = transformer_block(x, p, r1, Mode::Eval);
    auto y2 = transformer_block(x, p, r2, Mode::Eval);
    REQUIRE(y1.shape() == Shape{9, 16});
    for (std::int64_t i = 0; i < y1.numel(); ++i) CHECK(y1.data()[i] == y2.data()[i]);
    CHECK(r1.state() == Rng(11).state());  // eval consumes no randomness

    // Train mode draws dropout masks, so the rng must advance.
    auto yt = transformer_block(x, p, r1, Mode::Train);
    CHECK(!(r1.state() == Rng(11).state()));
    CHECK(yt.shape() == Shape{9, 16});

    CHECK_THROWS_AS(make_transformer_block_params(16, 3, 32, 0.1f, rng), ConfigError);
}

TEST_CASE("mhsa output spans the model width") {
    Rng rng(6);
    auto p = make_transformer_block_params(12, 3, 24, 0.0f, rng);
    auto x = random_leaf({7, 12}, rng);
    Rng r(0);
    auto y = mhsa(x, p, r, Mode::Eval);
    CHECK(y.shape() == Shape{7, 12});
}

TEST_CASE("resnext block preserves geometry and builds a shortcut only when needed") {
    Rng rng(7);
    auto same = make_resnext_params(8, 8, rng);
    CHECK(!same.shortcut_w.defined());
    auto wide = make_resnext_params(8, 12, rng);
    CHECK(wide.shortcut_w.defined());
    CHECK(wide.shortcut_w.shape() == Shape{12, 8, 1, 1});

    auto x = random_leaf({2, 8, 5, 5}, rng);
    CHECK(resnext_block(x, same).shape() == Shape{2, 8, 5, 5});
    CHECK(resnext_block(x, wide).shape() == Shape{2, 12, 5, 5});

    // With a zeroed residual branch the identity block reduces to relu(x).
    zero_out(same.reduce_w);
    zero_out(same.reduce_b);
    zero_out(same.dw_w);
    zero_out(same.dw_b);
    zero_out(same.expand_w);
    zero_out(same.expand_b);
    auto y = resnext_block(x, same);
    for (std::int64_t i = 0; i < x.numel(); ++i)
        CHECK(y.data()[i] == doctest::Approx(std::max(0.0f, x.data()[i])));
}

TEST_CASE("conv_bn fuses padding, stride, and crop into exact downsampling") {
    Rng rng(8);
    auto p = make_conv_bn_params(3, 6, 3, 1, 1, rng);
    CHECK(p.w.shape() == Shape{6, 3, 3, 3});
    CHECK(p.bn_var.data()[0] == 1.0f);
    CHECK(p.bn_mean.data()[0] == 0.0f);

    auto x = random_leaf({2, 3, 8, 8}, rng);
    auto y = conv_norm_act(x, p, Mode::Train);
    CHECK(y.shape() == Shape{2, 6, 8, 8});
    for (float v : y.data()) CHECK(v >= 0.0f);

    // The asymmetric-padding fields reproduce the halving geometry used by
    // the encoder: pad bottom/right by one and stride 2 with no base pad.
    auto q = make_conv_bn_params(3, 4, 3, 2, 0, rng);
    q.pad_bottom = 1;
    q.pad_right = 1;
    auto z = conv_bn(x, q, Mode::Train);
    CHECK(z.shape() == Shape{2, 4, 4, 4});
}
