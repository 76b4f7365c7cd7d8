#include <cmath>
#include <vector>

#include "hybridseg/rng.hpp"
#include "hybridseg/tensor.hpp"
#include "op_common.hpp"

namespace hseg {

using detail::cnode;

Tensor softmax(const Tensor& x, int axis) {
    auto& xn = cnode(x, "softmax");
    const int rank = static_cast<int>(xn.shape.size());
    if (axis < 0 || axis >= rank)
        throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for rank " +
                             std::to_string(rank));
    std::int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= xn.shape[d];
    for (int d = axis + 1; d < rank; ++d) inner *= xn.shape[d];
    const std::int64_t dim = xn.shape[axis];

    std::vector<float> out(xn.value.size());
    const float* xv = xn.value.data();
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t t = 0; t < inner; ++t) {
            const std::int64_t base = o * dim * inner + t;
            double mx = xv[base];
            for (std::int64_t j = 1; j < dim; ++j)
                mx = std::max(mx, static_cast<double>(xv[base + j * inner]));
            double sum = 0.0;
            for (std::int64_t j = 0; j < dim; ++j)
                sum += std::exp(static_cast<double>(xv[base + j * inner]) - mx);
            const double inv = 1.0 / sum;
            for (std::int64_t j = 0; j < dim; ++j)
                out[base + j * inner] = static_cast<float>(
                    std::exp(static_cast<double>(xv[base + j * inner]) - mx) * inv);
        }
    return make_op(xn.shape, std::move(out), {x}, [outer, inner, dim](detail::Node& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        auto gp = p.grad_acc();
        const float* g = n.grad.data();
        const float* y = n.value.data();
        for (std::int64_t o = 0; o < outer; ++o)
            for (std::int64_t t = 0; t < inner; ++t) {
                const std::int64_t base = o * dim * inner + t;
                double dot = 0.0;
                for (std::int64_t j = 0; j < dim; ++j)
                    dot += static_cast<double>(g[base + j * inner]) *
                           static_cast<double>(y[base + j * inner]);
                for (std::int64_t j = 0; j < dim; ++j) {
                    const std::int64_t i = base + j * inner;
                    gp[i] += static_cast<float>(static_cast<double>(y[i]) *
                                                (static_cast<double>(g[i]) - dot));
                }
            }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
    auto& xn = cnode(x, "layer_norm");
    auto& gn = cnode(gamma, "layer_norm");
    auto& bn = cnode(beta, "layer_norm");
    if (xn.shape.empty()) throw DimensionError("layer_norm: scalar input");
    const std::int64_t dim = xn.shape.back();
    if (gn.shape != Shape{dim} || bn.shape != Shape{dim})
        throw DimensionError("layer_norm: gamma/beta must have shape [" + std::to_string(dim) +
                             "], got " + shape_str(gn.shape) + " and " + shape_str(bn.shape));
    const std::int64_t outer = xn.numel() / dim;
    const double invd = 1.0 / static_cast<double>(dim);

    std::vector<float> out(xn.value.size());
    const float* xv = xn.value.data();
    const float* gv = gn.value.data();
    const float* bv = bn.value.data();
    for (std::int64_t o = 0; o < outer; ++o) {
        const float* src = xv + o * dim;
        double mu = 0.0;
        for (std::int64_t j = 0; j < dim; ++j) mu += static_cast<double>(src[j]);
        mu *= invd;
        double var = 0.0;
        for (std::int64_t j = 0; j < dim; ++j) {
            const double d = static_cast<double>(src[j]) - mu;
            var += d * d;
        }
        var *= invd;
        const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
        float* dst = out.data() + o * dim;
        for (std::int64_t j = 0; j < dim; ++j)
            dst[j] = static_cast<float>((static_cast<double>(src[j]) - mu) * inv *
                                            static_cast<double>(gv[j]) +
                                        static_cast<double>(bv[j]));
    }
    return make_op(xn.shape, std::move(out), {x, gamma, beta},
                   [outer, dim, invd, eps](detail::Node& n) {
                       auto& px = *n.parents[0];
                       auto& pg = *n.parents[1];
                       auto& pb = *n.parents[2];
                       const float* xv = px.value.data();
                       const float* gv = pg.value.data();
                       const float* g = n.grad.data();
                       std::vector<double> dgamma(static_cast<std::size_t>(dim), 0.0);
                       std::vector<double> dbeta(static_cast<std::size_t>(dim), 0.0);
                       std::vector<double> xhat(static_cast<std::size_t>(dim));
                       for (std::int64_t o = 0; o < outer; ++o) {
                           const float* src = xv + o * dim;
                           const float* gr = g + o * dim;
                           double mu = 0.0;
                           for (std::int64_t j = 0; j < dim; ++j)
                               mu += static_cast<double>(src[j]);
                           mu *= invd;
                           double var = 0.0;
                           for (std::int64_t j = 0; j < dim; ++j) {
                               const double d = static_cast<double>(src[j]) - mu;
                               var += d * d;
                           }
                           var *= invd;
                           const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
                           double s1 = 0.0, s2 = 0.0;
                           for (std::int64_t j = 0; j < dim; ++j) {
                               xhat[j] = (static_cast<double>(src[j]) - mu) * inv;
                               const double dxh =
                                   static_cast<double>(gr[j]) * static_cast<double>(gv[j]);
                               s1 += dxh;
                               s2 += dxh * xhat[j];
                               dgamma[j] += static_cast<double>(gr[j]) * xhat[j];
                               dbeta[j] += static_cast<double>(gr[j]);
                           }
                           if (px.requires_grad) {
                               auto gp = px.grad_acc();
                               for (std::int64_t j = 0; j < dim; ++j) {
                                   const double dxh =
                                       static_cast<double>(gr[j]) * static_cast<double>(gv[j]);
                                   gp[o * dim + j] += static_cast<float>(
                                       inv * (dxh - s1 * invd - xhat[j] * s2 * invd));
                               }
                           }
                       }
                       if (pg.requires_grad) {
                           auto gp = pg.grad_acc();
                           for (std::int64_t j = 0; j < dim; ++j)
                               gp[j] += static_cast<float>(dgamma[j]);
                       }
                       if (pb.requires_grad) {
                           auto gp = pb.grad_acc();
                           for (std::int64_t j = 0; j < dim; ++j)
                               gp[j] += static_cast<float>(dbeta[j]);
                       }
                   });
}

Tensor batch_norm(const Tensor& x, const Tensor& scale, const Tensor& shift,
                  const Tensor& running_mean, const Tensor& running_var, Mode mode,
                  float momentum, float eps) {
    auto& xn = cnode(x, "batch_norm");
    auto& sn = cnode(scale, "batch_norm");
    auto& hn = cnode(shift, "batch_norm");
    auto& rmn = cnode(running_mean, "batch_norm");
    auto& rvn = cnode(running_var, "batch_norm");
    if (xn.shape.size() != 4)
        throw DimensionError("batch_norm: expected [N,C,H,W], got " + shape_str(xn.shape));
    const std::int64_t nb = xn.shape[0], c = xn.shape[1], plane = xn.shape[2] * xn.shape[3];
    for (auto* pn : {&sn, &hn, &rmn, &rvn})
        if (pn->shape != Shape{c})
            throw DimensionError("batch_norm: per-channel parameters must have shape [" +
                                 std::to_string(c) + "], got " + shape_str(pn->shape));
    if (!rmn.leaf || !rvn.leaf)
        throw UsageError("batch_norm: running statistics must be leaf tensors");

    const std::int64_t m = nb * plane;
    const double invm = 1.0 / static_cast<double>(m);
    auto mu = std::make_shared<std::vector<double>>(static_cast<std::size_t>(c));
    auto inv = std::make_shared<std::vector<double>>(static_cast<std::size_t>(c));
    const float* xv = xn.value.data();

    if (mode == Mode::Train) {
        for (std::int64_t ch = 0; ch < c; ++ch) {
            double s = 0.0;
            for (std::int64_t b = 0; b < nb; ++b) {
                const float* src = xv + (b * c + ch) * plane;
                for (std::int64_t p = 0; p < plane; ++p) s += static_cast<double>(src[p]);
            }
            const double mean = s * invm;
            double v = 0.0;
            for (std::int64_t b = 0; b < nb; ++b) {
                const float* src = xv + (b * c + ch) * plane;
                for (std::int64_t p = 0; p < plane; ++p) {
                    const double d = static_cast<double>(src[p]) - mean;
                    v += d * d;
                }
            }
            const double var = v * invm;  // biased, matching the running update
            (*mu)[ch] = mean;
            (*inv)[ch] = 1.0 / std::sqrt(var + static_cast<double>(eps));
            rmn.value[ch] = static_cast<float>((1.0 - momentum) * rmn.value[ch] + momentum * mean);
            rvn.value[ch] = static_cast<float>((1.0 - momentum) * rvn.value[ch] + momentum * var);
        }
    } else {
        for (std::int64_t ch = 0; ch < c; ++ch) {
            (*mu)[ch] = rmn.value[ch];
            (*inv)[ch] = 1.0 / std::sqrt(static_cast<double>(rvn.value[ch]) +
                                         static_cast<double>(eps));
        }
    }

    std::vector<float> out(xn.value.size());
    const float* sv = sn.value.data();
    const float* hv = hn.value.data();
    for (std::int64_t b = 0; b < nb; ++b)
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const float* src = xv + (b * c + ch) * plane;
            float* dst = out.data() + (b * c + ch) * plane;
            const double a = (*inv)[ch] * static_cast<double>(sv[ch]);
            const double off =
                static_cast<double>(hv[ch]) - (*mu)[ch] * a;
            for (std::int64_t p = 0; p < plane; ++p)
                dst[p] = static_cast<float>(static_cast<double>(src[p]) * a + off);
        }

    const bool train = mode == Mode::Train;
    return make_op(xn.shape, std::move(out), {x, scale, shift},
                   [nb, c, plane, invm, mu, inv, train](detail::Node& n) {
                       auto& px = *n.parents[0];
                       auto& ps = *n.parents[1];
                       auto& ph = *n.parents[2];
                       const float* xv = px.value.data();
                       const float* sv = ps.value.data();
                       const float* g = n.grad.data();
                       for (std::int64_t ch = 0; ch < c; ++ch) {
                           const double mc = (*mu)[ch], ic = (*inv)[ch];
                           double s1 = 0.0, s2 = 0.0;
                           for (std::int64_t b = 0; b < nb; ++b) {
                               const std::int64_t base = (b * c + ch) * plane;
                               for (std::int64_t p = 0; p < plane; ++p) {
                                   const double gv = g[base + p];
                                   s1 += gv;
                                   s2 += gv * (static_cast<double>(xv[base + p]) - mc) * ic;
                               }
                           }
                           if (ps.requires_grad) ps.grad_acc()[ch] += static_cast<float>(s2);
                           if (ph.requires_grad) ph.grad_acc()[ch] += static_cast<float>(s1);
                           if (px.requires_grad) {
                               auto gp = px.grad_acc();
                               const double a = ic * static_cast<double>(sv[ch]);
                               for (std::int64_t b = 0; b < nb; ++b) {
                                   const std::int64_t base = (b * c + ch) * plane;
                                   for (std::int64_t p = 0; p < plane; ++p) {
                                       const double gv = g[base + p];
                                       double dx = gv;
                                       if (train) {
                                           const double xh =
                                               (static_cast<double>(xv[base + p]) - mc) * ic;
                                           dx -= invm * (s1 + xh * s2);
                                       }
                                       gp[base + p] += static_cast<float>(dx * a);
                                   }
                               }
                           }
                       }
                   });
}

Tensor dropout(const Tensor& x, float p, Mode mode, Rng& rng) {
    auto& xn = cnode(x, "dropout");
    if (p < 0.0f || p >= 1.0f)
        throw ConfigError("dropout: p must be in [0, 1), got " + std::to_string(p));
    if (mode == Mode::Eval || p == 0.0f) return x;

    const float keep_scale = static_cast<float>(1.0 / (1.0 - static_cast<double>(p)));
    auto factor = std::make_shared<std::vector<float>>(xn.value.size());
    std::vector<float> out(xn.value.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const float f = rng.next_float() < p ? 0.0f : keep_scale;
        (*factor)[i] = f;
        out[i] = xn.value[i] * f;
    }
    return make_op(xn.shape, std::move(out), {x}, [factor](detail::Node& n) {
        auto& px = *n.parents[0];
        if (!px.requires_grad) return;
        auto gp = px.grad_acc();
        for (std::int64_t i = 0; i < n.numel(); ++i) gp[i] += n.grad[i] * (*factor)[i];
    });
}

}  // namespace hseg
