#include <cmath>

#include "doctest.h"
#include "hybridseg/errors.hpp"
#include "hybridseg/loss.hpp"
#include "hybridseg/metrics.hpp"
#include "hybridseg/rng.hpp"

using namespace hseg;

namespace {

Tensor random_probs(Shape shape, Rng& rng) {
    auto t = Tensor::zeros(shape);
    for (auto& v : t.mutable_data()) v = rng.uniform(0.01f, 0.99f);
    return t;
}

Tensor random_mask(Shape shape, Rng& rng, double p = 0.5) {
    auto t = Tensor::zeros(shape);
    for (auto& v : t.mutable_data()) v = rng.next_float() < p ? 1.0f : 0.0f;
    return t;
}

}  // namespace

TEST_CASE("bce matches the closed form") {
    auto half = Tensor::full({4}, 0.5f);
    auto ones = Tensor::full({4}, 1.0f);
    CHECK(bce_loss(half, ones).item() == doctest::Approx(std::log(2.0)));

    auto zeros = Tensor::zeros({4});
    CHECK(bce_loss(half, zeros).item() == doctest::Approx(std::log(2.0)));

    // Saturated predictions stay finite through the clamp.
    auto sat = Tensor::full({4}, 1.0f);
    auto l = bce_loss(sat, zeros);
    CHECK(std::isfinite(l.item()));
    CHECK(l.item() == doctest::Approx(-std::log(1e-7)).epsilon(1e-3));
}

TEST_CASE("bce gradient points toward the target") {
    auto p = Tensor::full({1}, 0.3f, true);
    auto y1 = Tensor::full({1}, 1.0f);
    bce_loss(p, y1).backward();
    CHECK(p.grad()[0] < 0.0f);  // increase p to reduce the loss

    p.zero_grad();
    bce_loss(p, Tensor::zeros({1})).backward();
    CHECK(p.grad()[0] > 0.0f);

    // Analytic value: d/dp [-y log p - (1-y) log(1-p)] = (p - y) / (p (1-p)).
    auto q = Tensor::full({1}, 0.25f, true);
    bce_loss(q, y1).backward();
    CHECK(q.grad()[0] == doctest::Approx((0.25 - 1.0) / (0.25 * 0.75)).epsilon(1e-4));
}

TEST_CASE("dice loss spans agreement to disjointness") {
    auto y = Tensor::from_data({4}, {1, 1, 0, 0});
    CHECK(dice_loss(y, y).item() == doctest::Approx(0.0).epsilon(1e-5));

    auto flipped = Tensor::from_data({4}, {0, 0, 1, 1});
    CHECK(dice_loss(y, flipped).item() == doctest::Approx(1.0).epsilon(1e-5));

    // Half agreement: 2*1 / (2 + 2) = 1/2.
    auto half = Tensor::from_data({4}, {1, 0, 1, 0});
    CHECK(dice_loss(y, half).item() == doctest::Approx(0.5).epsilon(1e-4));

    // The smoothing constant keeps an all-empty pair at zero loss.
    auto empty = Tensor::zeros({4});
    CHECK(dice_loss(empty, empty).item() == doctest::Approx(0.0));
}

TEST_CASE("dice gradient rewards overlap") {
    auto p = Tensor::full({4}, 0.5f, true);
    auto y = Tensor::from_data({4}, {1, 0, 1, 0});
    dice_loss(p, y).backward();
    CHECK(p.grad()[0] < 0.0f);  // raising p where y = 1 lowers the loss
    CHECK(p.grad()[1] > 0.0f);
}

TEST_CASE("hybrid loss decomposes exactly") {
    Rng rng(1);
    auto p = random_probs({2, 1, 8, 8}, rng);
    auto y = random_mask({2, 1, 8, 8}, rng);

    LossConfig cfg;
    cfg.lambda = 0.7f;
    auto h = hybrid_loss(p, y, cfg);
    CHECK(h.total.item() ==
          doctest::Approx(h.bce.item() + 0.7 * h.dice.item()).epsilon(1e-6));
    CHECK(h.bce.item() == doctest::Approx(bce_loss(p, y, cfg).item()));
    CHECK(h.dice.item() == doctest::Approx(dice_loss(p, y, cfg).item()));
}

TEST_CASE("binarize thresholds strictly") {
    auto p = Tensor::from_data({4}, {0.2f, 0.5f, 0.500001f, 0.9f});
    auto b = binarize(p);
    CHECK(b.data()[0] == 0.0f);
    CHECK(b.data()[1] == 0.0f);  // exactly at the threshold stays 0
    CHECK(b.data()[2] == 1.0f);
    CHECK(b.data()[3] == 1.0f);
    CHECK(!b.requires_grad());

    auto c = binarize(p, 0.1f);
    CHECK(c.data()[0] == 1.0f);
}

TEST_CASE("confusion counts match hand counts and reject soft inputs") {
    auto pred = Tensor::from_data({6}, {1, 1, 0, 0, 1, 0});
    auto target = Tensor::from_data({6}, {1, 0, 1, 0, 1, 1});
    auto c = confusion(pred, target);
    CHECK(c.tp == 2);
    CHECK(c.fp == 1);
    CHECK(c.fn == 2);
    CHECK(c.tn == 1);

    CHECK(precision_score(c) == doctest::Approx(2.0 / 3.0));
    CHECK(recall_score(c) == doctest::Approx(2.0 / 4.0));
    CHECK(dice_score(c) == doctest::Approx(2.0 * 2 / (2.0 * 2 + 1 + 2)));
    CHECK(iou_score(c) == doctest::Approx(2.0 / (2 + 1 + 2)));

    auto soft = Tensor::from_data({6}, {1, 0.5f, 0, 0, 1, 0});
    CHECK_THROWS_AS(confusion(soft, target), UsageError);
    CHECK_THROWS_AS(confusion(pred, Tensor::zeros({4})), DimensionError);
}

TEST_CASE("empty-mask conventions") {
    ConfusionCounts both{0, 0, 0, 16};
    CHECK(dice_score(both) == 1.0);
    CHECK(iou_score(both) == 1.0);
    CHECK(precision_score(both) == 1.0);
    CHECK(recall_score(both) == 1.0);

    ConfusionCounts pred_only{0, 5, 0, 11};
    CHECK(dice_score(pred_only) == 0.0);
    CHECK(precision_score(pred_only) == 0.0);
    CHECK(recall_score(pred_only) == 0.0);

    ConfusionCounts target_only{0, 0, 5, 11};
    CHECK(dice_score(target_only) == 0.0);
    CHECK(iou_score(target_only) == 0.0);
}

TEST_CASE("dice-jaccard identity holds on random masks") {
    Rng rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        auto pred = random_mask({1, 16, 16}, rng, 0.3);
        auto target = random_mask({1, 16, 16}, rng, 0.3);
        auto c = confusion(pred, target);
        const double d = dice_score(c);
        const double j = iou_score(c);
        CHECK(d == doctest::Approx(2.0 * j / (1.0 + j)).epsilon(1e-12));
    }
}

TEST_CASE("metric scores agree with brute-force pixel counting") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        auto pred = random_mask({1, 12, 12}, rng, 0.4);
        auto target = random_mask({1, 12, 12}, rng, 0.4);
        std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
        for (std::int64_t i = 0; i < pred.numel(); ++i) {
            const bool p = pred.data()[i] > 0.5f;
            const bool t = target.data()[i] > 0.5f;
            tp += p && t;
            fp += p && !t;
            fn += !p && t;
            tn += !p && !t;
        }
        auto c = confusion(pred, target);
        CHECK(c.tp == tp);
        CHECK(c.fp == fp);
        CHECK(c.fn == fn);
        CHECK(c.tn == tn);
    }
}
