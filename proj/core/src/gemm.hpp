#pragma once

#include <cstdint>

// Internal float32 kernels with float64 accumulation. Every reduction runs
// in a fixed order (k ascending, fixed 4-way tail split), so results are
// bitwise reproducible and independent of the number of worker threads.

namespace hseg::detail {

/// C[m x n] = op(A) * op(B), or += when `accumulate`. Row-major, packed.
void gemm(const float* a, const float* b, float* c, std::int64_t m, std::int64_t n,
          std::int64_t k, bool trans_a, bool trans_b, bool accumulate);

struct Conv2dGeom {
    std::int64_t in_channels, height, width;
    std::int64_t kernel_h, kernel_w;
    std::int64_t stride, padding;
    std::int64_t out_h, out_w;
};

/// col[(c*kh+ki)*kw+kj][oy*out_w+ox] = x[c][oy*s-p+ki][ox*s-p+kj], zero outside.
/// x covers `channels` channels starting at its own base pointer.
void im2col(const float* x, float* col, const Conv2dGeom& g, std::int64_t channels);

/// Adjoint gather of im2col: dx[c][iy][ix] += sum of matching col entries.
void col2im_accumulate(const float* col, float* dx, const Conv2dGeom& g, std::int64_t channels);

/// Scatter-add used by transposed convolution: out[c][iy*s-p+ki][ix*s-p+kj] +=
/// col[(c*kh+ki)*kw+kj][iy*in_w+ix], where the col spatial grid is the tconv
/// *input* grid and `g` describes the matching forward convolution
/// (g.height/width = tconv output size, g.out_h/out_w = tconv input size).
void col2im_scatter_add(const float* col, float* out, const Conv2dGeom& g, std::int64_t channels);

}  // namespace hseg::detail
