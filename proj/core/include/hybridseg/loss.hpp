#pragma once

#include "hybridseg/tensor.hpp"

namespace hseg {

struct LossConfig {
    float lambda = 1.0f;     // dice weight in the hybrid sum
    float bce_clamp = 1e-7f; // predictions clamped to [clamp, 1 - clamp]
    float dice_eps = 1e-6f;  // smoothing in the soft-dice ratio
};

/// Mean binary cross-entropy over all elements; predictions are clamped
/// before the logs so saturated outputs stay finite. Differentiable scalar.
Tensor bce_loss(const Tensor& pred, const Tensor& target, const LossConfig& cfg = {});

/// Soft dice loss 1 - (2*sum(p*y) + eps) / (sum(p) + sum(y) + eps) over all
/// elements. Differentiable scalar.
Tensor dice_loss(const Tensor& pred, const Tensor& target, const LossConfig& cfg = {});

struct HybridLoss {
    Tensor total;  // bce + lambda * dice
    Tensor bce;
    Tensor dice;
};

HybridLoss hybrid_loss(const Tensor& pred, const Tensor& target, const LossConfig& cfg = {});

}  // namespace hseg
