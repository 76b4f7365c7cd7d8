#include "hybridseg/loss.hpp"

#include <cmath>

#include "hybridseg/errors.hpp"

namespace hseg {

namespace {

void check_pair(const Tensor& pred, const Tensor& target, const char* op) {
    if (!pred.defined() || !target.defined()) throw UsageError(std::string(op) + ": undefined tensor");
    if (pred.shape() != target.shape()) {
        throw DimensionError(std::string(op) + ": prediction " + shape_str(pred.shape()) +
                             " and target " + shape_str(target.shape()) + " disagree");
    }
}

}  // namespace

Tensor bce_loss(const Tensor& pred, const Tensor& target, const LossConfig& cfg) {
    check_pair(pred, target, "bce_loss");
    const auto& pv = pred.node()->value;
    const auto& yv = target.node()->value;
    const double lo = static_cast<double>(cfg.bce_clamp);
    const double hi = 1.0 - lo;
    const std::int64_t n = pred.numel();

    double sum = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double p = std::min(std::max(static_cast<double>(pv[i]), lo), hi);
        const double y = static_cast<double>(yv[i]);
        sum -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
    }
    const float value = static_cast<float>(sum / static_cast<double>(n));

    const float clamp = cfg.bce_clamp;
    return make_op({1}, {value}, {pred, target}, [lo, hi, clamp, n](detail::Node& nd) {
        auto& pp = *nd.parents[0];
        auto& py = *nd.parents[1];
        const double g = static_cast<double>(nd.grad[0]) / static_cast<double>(n);
        (void)clamp;
        if (pp.requires_grad) {
            auto gp = pp.grad_acc();
            for (std::int64_t i = 0; i < n; ++i) {
                const double p = static_cast<double>(pp.value[i]);
                if (p <= lo || p >= hi) continue;  // clamped region: flat
                const double y = static_cast<double>(py.value[i]);
                gp[i] += static_cast<float>(g * (p - y) / (p * (1.0 - p)));
            }
        }
        if (py.requires_grad) {
            auto gy = py.grad_acc();
            for (std::int64_t i = 0; i < n; ++i) {
                const double p = std::min(std::max(static_cast<double>(pp.value[i]), lo), hi);
                gy[i] += static_cast<float>(g * (std::log(1.0 - p) - std::log(p)));
            }
        }
    });
}

Tensor dice_loss(const Tensor& pred, const Tensor& target, const LossConfig& cfg) {
    check_pair(pred, target, "dice_loss");
    const auto& pv = pred.node()->value;
    const auto& yv = target.node()->value;
    const std::int64_t n = pred.numel();
    const double eps = static_cast<double>(cfg.dice_eps);

    double s_py = 0.0, s_p = 0.0, s_y = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double p = static_cast<double>(pv[i]);
        const double y = static_cast<double>(yv[i]);
        s_py += p * y;
        s_p += p;
        s_y += y;
    }
    const double num = 2.0 * s_py + eps;
    const double den = s_p + s_y + eps;
    const float value = static_cast<float>(1.0 - num / den);

    return make_op({1}, {value}, {pred, target}, [num, den, n](detail::Node& nd) {
        auto& pp = *nd.parents[0];
        auto& py = *nd.parents[1];
        const double g = static_cast<double>(nd.grad[0]);
        const double den2 = den * den;
        if (pp.requires_grad) {
            auto gp = pp.grad_acc();
            for (std::int64_t i = 0; i < n; ++i) {
                const double y = static_cast<double>(py.value[i]);
                gp[i] += static_cast<float>(g * (num - 2.0 * y * den) / den2);
            }
        }
        if (py.requires_grad) {
            auto gy = py.grad_acc();
            for (std::int64_t i = 0; i < n; ++i) {
                const double p = static_cast<double>(pp.value[i]);
                gy[i] += static_cast<float>(g * (num - 2.0 * p * den) / den2);
            }
        }
    });
}

HybridLoss hybrid_loss(const Tensor& pred, const Tensor& target, const LossConfig& cfg) {
    HybridLoss out;
    out.bce = bce_loss(pred, target, cfg);
    out.dice = dice_loss(pred, target, cfg);
    out.total = add(out.bce, scale(out.dice, cfg.lambda));
    return out;
}

}  // namespace hseg
