#include <cmath>
#include <vector>

#include "gemm.hpp"
#include "hybridseg/tensor.hpp"
#include "op_common.hpp"

namespace hseg {

using detail::cnode;

// --- matmul -----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
    auto& an = cnode(a, "matmul");
    auto& bn = cnode(b, "matmul");
    if (an.shape.size() != 2 || bn.shape.size() != 2)
        throw DimensionError("matmul: expected rank-2 operands, got " + shape_str(an.shape) +
                             " and " + shape_str(bn.shape));
    const std::int64_t m = trans_a ? an.shape[1] : an.shape[0];
    const std::int64_t ka = trans_a ? an.shape[0] : an.shape[1];
    const std::int64_t kb = trans_b ? bn.shape[1] : bn.shape[0];
    const std::int64_t n = trans_b ? bn.shape[0] : bn.shape[1];
    if (ka != kb)
        throw DimensionError("matmul: inner dimensions disagree, " + shape_str(an.shape) +
                             (trans_a ? "^T" : "") + " x " + shape_str(bn.shape) +
                             (trans_b ? "^T" : ""));
    std::vector<float> out(static_cast<std::size_t>(m * n));
    detail::gemm(an.value.data(), bn.value.data(), out.data(), m, n, ka, trans_a, trans_b, false);
    return make_op({m, n}, std::move(out), {a, b},
                   [m, n, k = ka, trans_a, trans_b](detail::Node& node) {
                       auto& pa = *node.parents[0];
                       auto& pb = *node.parents[1];
                       const float* g = node.grad.data();
                       const float* av = pa.value.data();
                       const float* bv = pb.value.data();
                       if (pa.requires_grad) {
                           float* da = pa.grad_acc().data();
                           if (!trans_a && !trans_b)
                               detail::gemm(g, bv, da, m, k, n, false, true, true);
                           else if (trans_a && !trans_b)
                               detail::gemm(bv, g, da, k, m, n, false, true, true);
                           else if (!trans_a && trans_b)
                               detail::gemm(g, bv, da, m, k, n, false, false, true);
                           else
                               detail::gemm(bv, g, da, k, m, n, true, true, true);
                       }
                       if (pb.requires_grad) {
                           float* db = pb.grad_acc().data();
                           if (!trans_a && !trans_b)
                               detail::gemm(av, g, db, k, n, m, true, false, true);
                           else if (trans_a && !trans_b)
                               detail::gemm(av, g, db, k, n, m, false, false, true);
                           else if (!trans_a && trans_b)
                               detail::gemm(g, av, db, n, k, m, true, false, true);
                           else
                               detail::gemm(g, av, db, n, k, m, true, true, true);
                       }
                   });
}

// --- conv2d -----------------------------------------------------------------

namespace {

// Shared bookkeeping for the convolution ops.
struct ConvLayout {
    bool batched = false;
    std::int64_t n = 1, cin = 0, h = 0, w = 0;
    std::int64_t cout = 0, oh = 0, ow = 0;
    std::int64_t groups = 1, cig = 0, cog = 0;
    std::int64_t kdim = 0;  // rows of the im2col matrix per group
    detail::Conv2dGeom geom{};
};

ConvLayout conv_layout(const detail::Node& xn, const ConvSpec& spec, const char* op) {
    spec.validate();
    ConvLayout L;
    L.batched = xn.shape.size() == 4;
    if (!L.batched && xn.shape.size() != 3)
        throw DimensionError(std::string(op) + ": expected [C,H,W] or [N,C,H,W], got " +
                             shape_str(xn.shape));
    L.n = L.batched ? xn.shape[0] : 1;
    L.cin = xn.shape[L.batched ? 1 : 0];
    L.h = xn.shape[L.batched ? 2 : 1];
    L.w = xn.shape[L.batched ? 3 : 2];
    if (L.cin != spec.in_channels)
        throw DimensionError(std::string(op) + ": input has " + std::to_string(L.cin) +
                             " channels, spec expects " + std::to_string(spec.in_channels));
    L.cout = spec.out_channels;
    L.groups = spec.groups;
    L.cig = L.cin / L.groups;
    L.cog = L.cout / L.groups;
    return L;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias,
              const ConvSpec& spec) {
    auto& xn = cnode(x, "conv2d");
    auto& wn = cnode(w, "conv2d");
    ConvLayout L = conv_layout(xn, spec, "conv2d");
    const Shape want_w{L.cout, L.cig, spec.kernel_h, spec.kernel_w};
    if (wn.shape != want_w)
        throw DimensionError("conv2d: weight shape " + shape_str(wn.shape) + ", expected " +
                             shape_str(want_w));
    if (bias) {
        auto& bn = cnode(*bias, "conv2d");
        if (bn.shape != Shape{L.cout})
            throw DimensionError("conv2d: bias shape " + shape_str(bn.shape) + ", expected [" +
                                 std::to_string(L.cout) + "]");
    }
    auto [oh, ow] = spec.out_size(L.h, L.w);
    L.oh = oh;
    L.ow = ow;
    L.kdim = L.cig * spec.kernel_h * spec.kernel_w;
    L.geom = {L.cig,       L.h,         L.w,         spec.kernel_h, spec.kernel_w,
              spec.stride, spec.padding, oh,          ow};

    const std::int64_t plane = oh * ow;
    std::vector<float> out(static_cast<std::size_t>(L.n * L.cout * plane));
    std::vector<float> col(static_cast<std::size_t>(L.kdim * plane));
    const float* xv = xn.value.data();
    const float* wv = wn.value.data();
    for (std::int64_t b = 0; b < L.n; ++b)
        for (std::int64_t gi = 0; gi < L.groups; ++gi) {
            detail::im2col(xv + (b * L.cin + gi * L.cig) * L.h * L.w, col.data(), L.geom, L.cig);
            detail::gemm(wv + gi * L.cog * L.kdim, col.data(),
                         out.data() + (b * L.cout + gi * L.cog) * plane, L.cog, plane, L.kdim,
                         false, false, false);
        }
    if (bias) {
        const float* bv = bias->data().data();
        for (std::int64_t b = 0; b < L.n; ++b)
            for (std::int64_t c = 0; c < L.cout; ++c) {
                float* dst = out.data() + (b * L.cout + c) * plane;
                for (std::int64_t p = 0; p < plane; ++p) dst[p] += bv[c];
            }
    }

    Shape out_shape = L.batched ? Shape{L.n, L.cout, oh, ow} : Shape{L.cout, oh, ow};
    std::vector<Tensor> inputs{x, w};
    if (bias) inputs.push_back(*bias);
    const bool has_bias = bias.has_value();
    return make_op(std::move(out_shape), std::move(out), inputs, [L, has_bias](detail::Node& n) {
        auto& px = *n.parents[0];
        auto& pw = *n.parents[1];
        const std::int64_t plane = L.oh * L.ow;
        const float* g = n.grad.data();
        std::vector<float> col(static_cast<std::size_t>(L.kdim * plane));
        if (px.requires_grad) {
            float* gx = px.grad_acc().data();
            const float* wv = pw.value.data();
            for (std::int64_t b = 0; b < L.n; ++b)
                for (std::int64_t gi = 0; gi < L.groups; ++gi) {
                    detail::gemm(wv + gi * L.cog * L.kdim, g + (b * L.cout + gi * L.cog) * plane,
                                 col.data(), L.kdim, plane, L.cog, true, false, false);
                    detail::col2im_accumulate(col.data(), gx + (b * L.cin + gi * L.cig) * L.h * L.w,
                                              L.geom, L.cig);
                }
        }
        if (pw.requires_grad) {
            float* gw = pw.grad_acc().data();
            const float* xv = px.value.data();
            for (std::int64_t b = 0; b < L.n; ++b)
                for (std::int64_t gi = 0; gi < L.groups; ++gi) {
                    detail::im2col(xv + (b * L.cin + gi * L.cig) * L.h * L.w, col.data(), L.geom,
                                   L.cig);
                    detail::gemm(g + (b * L.cout + gi * L.cog) * plane, col.data(),
                                 gw + gi * L.cog * L.kdim, L.cog, L.kdim, plane, false, true, true);
                }
        }
        if (has_bias && n.parents[2]->requires_grad) {
            auto gb = n.parents[2]->grad_acc();
            for (std::int64_t c = 0; c < L.cout; ++c) {
                double acc = 0.0;
                for (std::int64_t b = 0; b < L.n; ++b) {
                    const float* src = g + (b * L.cout + c) * plane;
                    for (std::int64_t p = 0; p < plane; ++p) acc += static_cast<double>(src[p]);
                }
                gb[c] += static_cast<float>(acc);
            }
        }
    });
}

// --- transpose_conv2d ---------------------------------------------------------

Tensor transpose_conv2d(const Tensor& x, const Tensor& w, const ConvSpec& spec) {
    auto& xn = cnode(x, "transpose_conv2d");
    auto& wn = cnode(w, "transpose_conv2d");
    ConvLayout L = conv_layout(xn, spec, "transpose_conv2d");
    const Shape want_w{L.cin, L.cog, spec.kernel_h, spec.kernel_w};
    if (wn.shape != want_w)
        throw DimensionError("transpose_conv2d: weight shape " + shape_str(wn.shape) +
                             ", expected " + shape_str(want_w));
    auto [oh, ow] = spec.transposed_out_size(L.h, L.w);
    L.oh = oh;
    L.ow = ow;
    // geom describes the matching forward conv: conv([cog,oh,ow]) -> [.,h,w].
    L.kdim = L.cog * spec.kernel_h * spec.kernel_w;
    L.geom = {L.cog,       oh,          ow,          spec.kernel_h, spec.kernel_w,
              spec.stride, spec.padding, L.h,         L.w};

    const std::int64_t in_plane = L.h * L.w;
    const std::int64_t out_plane = oh * ow;
    std::vector<float> out(static_cast<std::size_t>(L.n * L.cout * out_plane), 0.0f);
    std::vector<float> col(static_cast<std::size_t>(L.kdim * in_plane));
    const float* xv = xn.value.data();
    const float* wv = wn.value.data();
    for (std::int64_t b = 0; b < L.n; ++b)
        for (std::int64_t gi = 0; gi < L.groups; ++gi) {
            detail::gemm(wv + gi * L.cig * L.kdim, xv + (b * L.cin + gi * L.cig) * in_plane,
                         col.data(), L.kdim, in_plane, L.cig, true, false, false);
            detail::col2im_scatter_add(col.data(),
                                       out.data() + (b * L.cout + gi * L.cog) * out_plane, L.geom,
                                       L.cog);
        }

    Shape out_shape = L.batched ? Shape{L.n, L.cout, oh, ow} : Shape{L.cout, oh, ow};
    return make_op(std::move(out_shape), std::move(out), {x, w}, [L](detail::Node& n) {
        auto& px = *n.parents[0];
        auto& pw = *n.parents[1];
        const std::int64_t in_plane = L.h * L.w;
        const std::int64_t out_plane = L.oh * L.ow;
        const float* g = n.grad.data();
        std::vector<float> col(static_cast<std::size_t>(L.kdim * in_plane));
        for (std::int64_t b = 0; b < L.n; ++b)
            for (std::int64_t gi = 0; gi < L.groups; ++gi) {
                detail::im2col(g + (b * L.cout + gi * L.cog) * out_plane, col.data(), L.geom,
                               L.cog);
                if (px.requires_grad)
                    detail::gemm(pw.value.data() + gi * L.cig * L.kdim, col.data(),
                                 px.grad_acc().data() + (b * L.cin + gi * L.cig) * in_plane, L.cig,
                                 in_plane, L.kdim, false, false, true);
                if (pw.requires_grad)
                    detail::gemm(px.value.data() + (b * L.cin + gi * L.cig) * in_plane, col.data(),
                                 pw.grad_acc().data() + gi * L.cig * L.kdim, L.cig, L.kdim,
                                 in_plane, false, true, true);
            }
    });
}

// --- pool2d -------------------------------------------------------------------

Tensor pool2d(PoolKind kind, const Tensor& x, int window, int stride) {
    auto& xn = cnode(x, "pool2d");
    const bool batched = xn.shape.size() == 4;
    if (!batched && xn.shape.size() != 3)
        throw DimensionError("pool2d: expected [C,H,W] or [N,C,H,W], got " + shape_str(xn.shape));
    const std::int64_t nb = batched ? xn.shape[0] : 1;
    const std::int64_t c = xn.shape[batched ? 1 : 0];
    const std::int64_t h = xn.shape[batched ? 2 : 1];
    const std::int64_t w = xn.shape[batched ? 3 : 2];
    const std::int64_t plane = h * w;
    const float* xv = xn.value.data();

    if (kind == PoolKind::GlobalAvg) {
        const double inv = 1.0 / static_cast<double>(plane);
        std::vector<float> out(static_cast<std::size_t>(nb * c));
        for (std::int64_t i = 0; i < nb * c; ++i) {
            double acc = 0.0;
            const float* src = xv + i * plane;
            for (std::int64_t p = 0; p < plane; ++p) acc += static_cast<double>(src[p]);
            out[i] = static_cast<float>(acc * inv);
        }
        Shape out_shape = batched ? Shape{nb, c, 1, 1} : Shape{c, 1, 1};
        return make_op(std::move(out_shape), std::move(out), {x}, [plane, inv](detail::Node& n) {
            auto& p = *n.parents[0];
            if (!p.requires_grad) return;
            auto gp = p.grad_acc();
            for (std::int64_t i = 0; i < n.numel(); ++i) {
                const float gv = static_cast<float>(static_cast<double>(n.grad[i]) * inv);
                float* dst = gp.data() + i * plane;
                for (std::int64_t j = 0; j < plane; ++j) dst[j] += gv;
            }
        });
    }

    if (window < 1 || stride < 1) throw ConfigError("pool2d: window and stride must be positive");
    if (window > h || window > w)
        throw ConfigError("pool2d: window " + std::to_string(window) + " larger than input " +
                          std::to_string(h) + "x" + std::to_string(w));
    if ((h - window) % stride != 0 || (w - window) % stride != 0)
        throw ConfigError("pool2d: stride " + std::to_string(stride) +
                          " does not produce an integral output size");
    const std::int64_t oh = (h - window) / stride + 1;
    const std::int64_t ow = (w - window) / stride + 1;
    const std::int64_t out_plane = oh * ow;
    std::vector<float> out(static_cast<std::size_t>(nb * c * out_plane));

    if (kind == PoolKind::Max) {
        auto arg = std::make_shared<std::vector<std::int64_t>>(out.size());
        for (std::int64_t i = 0; i < nb * c; ++i) {
            const float* src = xv + i * plane;
            for (std::int64_t oy = 0; oy < oh; ++oy)
                for (std::int64_t ox = 0; ox < ow; ++ox) {
                    std::int64_t best = (oy * stride) * w + ox * stride;
                    for (std::int64_t ky = 0; ky < window; ++ky)
                        for (std::int64_t kx = 0; kx < window; ++kx) {
                            const std::int64_t idx = (oy * stride + ky) * w + ox * stride + kx;
                            if (src[idx] > src[best]) best = idx;
                        }
                    out[i * out_plane + oy * ow + ox] = src[best];
                    (*arg)[i * out_plane + oy * ow + ox] = best;
                }
        }
        Shape out_shape = batched ? Shape{nb, c, oh, ow} : Shape{c, oh, ow};
        return make_op(std::move(out_shape), std::move(out), {x},
                       [plane, out_plane, arg](detail::Node& n) {
                           auto& p = *n.parents[0];
                           if (!p.requires_grad) return;
                           auto gp = p.grad_acc();
                           for (std::int64_t i = 0; i < n.numel(); ++i)
                               gp[(i / out_plane) * plane + (*arg)[i]] += n.grad[i];
                       });
    }

    const double inv = 1.0 / (static_cast<double>(window) * window);
    for (std::int64_t i = 0; i < nb * c; ++i) {
        const float* src = xv + i * plane;
        for (std::int64_t oy = 0; oy < oh; ++oy)
            for (std::int64_t ox = 0; ox < ow; ++ox) {
                double acc = 0.0;
                for (std::int64_t ky = 0; ky < window; ++ky)
                    for (std::int64_t kx = 0; kx < window; ++kx)
                        acc += static_cast<double>(
                            src[(oy * stride + ky) * w + ox * stride + kx]);
                out[i * out_plane + oy * ow + ox] = static_cast<float>(acc * inv);
            }
    }
    Shape out_shape = batched ? Shape{nb, c, oh, ow} : Shape{c, oh, ow};
    return make_op(std::move(out_shape), std::move(out), {x},
                   [w, plane, oh, ow, window, stride, inv](detail::Node& n) {
                       auto& p = *n.parents[0];
                       if (!p.requires_grad) return;
                       auto gp = p.grad_acc();
                       const std::int64_t out_plane = oh * ow;
                       for (std::int64_t i = 0; i < n.numel(); ++i) {
                           const std::int64_t img = i / out_plane;
                           const std::int64_t oy = (i % out_plane) / ow;
                           const std::int64_t ox = i % ow;
                           const float gv =
                               static_cast<float>(static_cast<double>(n.grad[i]) * inv);
                           float* dst = gp.data() + img * plane;
                           for (std::int64_t ky = 0; ky < window; ++ky)
                               for (std::int64_t kx = 0; kx < window; ++kx)
                                   dst[(oy * stride + ky) * w + ox * stride + kx] += gv;
                       }
                   });
}

}  // namespace hseg
