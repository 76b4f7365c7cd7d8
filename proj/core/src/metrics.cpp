#include "hybridseg/metrics.hpp"

#include "hybridseg/errors.hpp"

namespace hseg {

Tensor binarize(const Tensor& pred, float threshold) {
    if (!pred.defined()) throw UsageError("binarize: undefined tensor");
    const auto& pv = pred.node()->value;
    std::vector<float> out(pv.size());
    for (std::size_t i = 0; i < pv.size(); ++i) out[i] = pv[i] > threshold ? 1.0f : 0.0f;
    return Tensor::from_data(pred.shape(), std::move(out));
}

ConfusionCounts confusion(const Tensor& pred, const Tensor& target) {
    if (!pred.defined() || !target.defined()) throw UsageError("confusion: undefined tensor");
    if (pred.shape() != target.shape()) {
        throw DimensionError("confusion: prediction " + shape_str(pred.shape()) + " and target " +
                             shape_str(target.shape()) + " disagree");
    }
    const auto& pv = pred.node()->value;
    const auto& yv = target.node()->value;
    ConfusionCounts c;
    for (std::size_t i = 0; i < pv.size(); ++i) {
        const float p = pv[i];
        const float y = yv[i];
        if ((p != 0.0f && p != 1.0f) || (y != 0.0f && y != 1.0f)) {
            throw UsageError("confusion: inputs must be binary masks (0/1 values)");
        }
        if (p == 1.0f) {
            (y == 1.0f ? c.tp : c.fp) += 1;
        } else {
            (y == 1.0f ? c.fn : c.tn) += 1;
        }
    }
    return c;
}

double dice_score(const ConfusionCounts& c) {
    if (c.tp + c.fp == 0 && c.tp + c.fn == 0) return 1.0;
    return 2.0 * static_cast<double>(c.tp) / static_cast<double>(2 * c.tp + c.fp + c.fn);
}

double iou_score(const ConfusionCounts& c) {
    if (c.tp + c.fp == 0 && c.tp + c.fn == 0) return 1.0;
    return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp + c.fn);
}

double precision_score(const ConfusionCounts& c) {
    if (c.tp + c.fp == 0) return c.tp + c.fn == 0 ? 1.0 : 0.0;
    return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
}

double recall_score(const ConfusionCounts& c) {
    if (c.tp + c.fn == 0) return c.tp + c.fp == 0 ? 1.0 : 0.0;
    return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

}  // namespace hseg
