#pragma once

#include <string>

#include "hybridseg/tensor.hpp"

namespace hseg {

// Plain image transforms over detached [C,H,W] tensors; nothing here joins
// the autodiff tape. Samplers use half-pixel centers; out-of-bounds reads
// reflect about the border without repeating the edge pixel.

Tensor resize_bilinear(const Tensor& img, std::int64_t out_h, std::int64_t out_w);
/// Nearest-neighbour resize; binary inputs stay binary.
Tensor resize_nearest(const Tensor& img, std::int64_t out_h, std::int64_t out_w);

Tensor flip_horizontal(const Tensor& img);  // mirrors columns
Tensor flip_vertical(const Tensor& img);    // mirrors rows
/// Rotates counter-clockwise by quarter_turns * 90 degrees (exact copy).
Tensor rotate90(const Tensor& img, int quarter_turns);

/// Rotation about the image centre by an arbitrary angle (degrees,
/// counter-clockwise), bilinear sampling with reflected borders.
Tensor rotate_bilinear(const Tensor& img, double degrees);
/// Same geometry with nearest sampling, for masks.
Tensor rotate_nearest(const Tensor& img, double degrees);

/// Separable Gaussian blur, radius ceil(3*sigma), kernel normalized to 1.
Tensor gaussian_blur(const Tensor& img, double sigma);
/// out = clamp(0.5 + gain * (x - 0.5), 0, 1).
Tensor adjust_contrast(const Tensor& img, float gain);

/// Binary (P5) PGM, values scaled by 255; input [1,H,W] or [H,W] in [0,1].
void write_pgm(const std::string& path, const Tensor& img);
/// Reads an 8-bit P5 PGM into [1,H,W] scaled to [0,1].
Tensor read_pgm(const std::string& path);

}  // namespace hseg
