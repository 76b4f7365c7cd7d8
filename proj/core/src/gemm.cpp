#include "gemm.hpp"

#include <vector>

#include "hybridseg/parallel.hpp"

namespace hseg::detail {

namespace {

// Contiguous dot product, fixed 4-way accumulator tree.
inline double dot_rows(const float* a, const float* b, std::int64_t k) {
    double acc0 = 0.0, acc1 = 0.0, acc2 = 0.0, acc3 = 0.0;
    std::int64_t p = 0;
    for (; p + 4 <= k; p += 4) {
        acc0 += static_cast<double>(a[p]) * static_cast<double>(b[p]);
        acc1 += static_cast<double>(a[p + 1]) * static_cast<double>(b[p + 1]);
        acc2 += static_cast<double>(a[p + 2]) * static_cast<double>(b[p + 2]);
        acc3 += static_cast<double>(a[p + 3]) * static_cast<double>(b[p + 3]);
    }
    for (; p < k; ++p) acc0 += static_cast<double>(a[p]) * static_cast<double>(b[p]);
    return ((acc0 + acc1) + (acc2 + acc3));
}

thread_local std::vector<double> tl_row_acc;

// Iterations per parallel grain for a given per-iteration cost.
inline std::int64_t grain_for(std::int64_t per_iter_work) {
    const std::int64_t target = 1 << 14;
    return per_iter_work >= target ? 1 : target / (per_iter_work > 0 ? per_iter_work : 1);
}

}  // namespace

void gemm(const float* a, const float* b, float* c, std::int64_t m, std::int64_t n,
          std::int64_t k, bool trans_a, bool trans_b, bool accumulate) {
    if (!trans_a && !trans_b) {
        // C[i,:] = sum_p A[i,p] * B[p,:]  (axpy over contiguous B rows)
        parallel_for(
            m,
            [&](std::int64_t i) {
                std::vector<double>& acc = tl_row_acc;
                acc.assign(static_cast<size_t>(n), 0.0);
                const float* arow = a + i * k;
                for (std::int64_t p = 0; p < k; ++p) {
                    const double av = static_cast<double>(arow[p]);
                    if (av == 0.0) continue;
                    const float* brow = b + p * n;
                    for (std::int64_t j = 0; j < n; ++j)
                        acc[j] += av * static_cast<double>(brow[j]);
                }
                float* crow = c + i * n;
                if (accumulate)
                    for (std::int64_t j = 0; j < n; ++j) crow[j] += static_cast<float>(acc[j]);
                else
                    for (std::int64_t j = 0; j < n; ++j) crow[j] = static_cast<float>(acc[j]);
            },
            grain_for(n * k));
    } else if (trans_a && !trans_b) {
        // C[i,:] = sum_p A[p,i] * B[p,:]
        parallel_for(
            m,
            [&](std::int64_t i) {
                std::vector<double>& acc = tl_row_acc;
                acc.assign(static_cast<size_t>(n), 0.0);
                for (std::int64_t p = 0; p < k; ++p) {
                    const double av = static_cast<double>(a[p * m + i]);
                    if (av == 0.0) continue;
                    const float* brow = b + p * n;
                    for (std::int64_t j = 0; j < n; ++j)
                        acc[j] += av * static_cast<double>(brow[j]);
                }
                float* crow = c + i * n;
                if (accumulate)
                    for (std::int64_t j = 0; j < n; ++j) crow[j] += static_cast<float>(acc[j]);
                else
                    for (std::int64_t j = 0; j < n; ++j) crow[j] = static_cast<float>(acc[j]);
            },
            grain_for(n * k));
    } else if (!trans_a && trans_b) {
        // C[i,j] = dot(A[i,:], B[j,:])
        parallel_for(
            m,
            [&](std::int64_t i) {
                const float* arow = a + i * k;
                float* crow = c + i * n;
                for (std::int64_t j = 0; j < n; ++j) {
                    const double d = dot_rows(arow, b + j * k, k);
                    if (accumulate)
                        crow[j] += static_cast<float>(d);
                    else
                        crow[j] = static_cast<float>(d);
                }
            },
            grain_for(n * k));
    } else {
        // C[i,j] = sum_p A[p,i] * B[j,p]
        parallel_for(
            m,
            [&](std::int64_t i) {
                float* crow = c + i * n;
                for (std::int64_t j = 0; j < n; ++j) {
                    const float* brow = b + j * k;
                    double acc = 0.0;
                    for (std::int64_t p = 0; p < k; ++p)
                        acc += static_cast<double>(a[p * m + i]) * static_cast<double>(brow[p]);
                    if (accumulate)
                        crow[j] += static_cast<float>(acc);
                    else
                        crow[j] = static_cast<float>(acc);
                }
            },
            grain_for(n * k));
    }
}

void im2col(const float* x, float* col, const Conv2dGeom& g, std::int64_t channels) {
    const std::int64_t plane = g.height * g.width;
    const std::int64_t out_plane = g.out_h * g.out_w;
    parallel_for(
        channels * g.kernel_h * g.kernel_w,
        [&](std::int64_t row) {
            const std::int64_t kj = row % g.kernel_w;
            const std::int64_t ki = (row / g.kernel_w) % g.kernel_h;
            const std::int64_t c = row / (g.kernel_w * g.kernel_h);
            const float* xc = x + c * plane;
            float* dst = col + row * out_plane;
            for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
                const std::int64_t iy = oy * g.stride - g.padding + ki;
                if (iy < 0 || iy >= g.height) {
                    for (std::int64_t ox = 0; ox < g.out_w; ++ox) dst[oy * g.out_w + ox] = 0.0f;
                    continue;
                }
                const float* xrow = xc + iy * g.width;
                for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
                    const std::int64_t ix = ox * g.stride - g.padding + kj;
                    dst[oy * g.out_w + ox] = (ix >= 0 && ix < g.width) ? xrow[ix] : 0.0f;
                }
            }
        },
        grain_for(out_plane));
}

void col2im_accumulate(const float* col, float* dx, const Conv2dGeom& g, std::int64_t channels) {
    const std::int64_t plane = g.height * g.width;
    const std::int64_t out_plane = g.out_h * g.out_w;
    // Gather per input pixel so accumulation order is fixed per element.
    parallel_for(
        channels,
        [&](std::int64_t c) {
            float* dxc = dx + c * plane;
            const float* colc = col + c * g.kernel_h * g.kernel_w * out_plane;
            for (std::int64_t ki = 0; ki < g.kernel_h; ++ki) {
                for (std::int64_t kj = 0; kj < g.kernel_w; ++kj) {
                    const float* src = colc + (ki * g.kernel_w + kj) * out_plane;
                    for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
                        const std::int64_t iy = oy * g.stride - g.padding + ki;
                        if (iy < 0 || iy >= g.height) continue;
                        float* dxrow = dxc + iy * g.width;
                        for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
                            const std::int64_t ix = ox * g.stride - g.padding + kj;
                            if (ix >= 0 && ix < g.width) dxrow[ix] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        },
        grain_for(g.kernel_h * g.kernel_w * out_plane));
}

void col2im_scatter_add(const float* col, float* out, const Conv2dGeom& g, std::int64_t channels) {
    col2im_accumulate(col, out, g, channels);
}

}  // namespace hseg::detail
