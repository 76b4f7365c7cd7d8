#pragma once

#include <cstdint>

#include "hybridseg/tensor.hpp"

namespace hseg {

/// Hard threshold: strictly greater than `threshold` maps to 1, else 0.
/// Returns a detached tensor; metrics never feed gradients.
Tensor binarize(const Tensor& pred, float threshold = 0.5f);

struct ConfusionCounts {
    std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

/// Element counts over two binary masks of equal shape. Throws UsageError if
/// either input holds a value other than exactly 0 or 1.
ConfusionCounts confusion(const Tensor& pred, const Tensor& target);

// Empty-mask conventions for all four: both masks empty scores 1.0, exactly
// one empty scores 0.0.
double dice_score(const ConfusionCounts& c);
double iou_score(const ConfusionCounts& c);
double precision_score(const ConfusionCounts& c);
double recall_score(const ConfusionCounts& c);

}  // namespace hseg
