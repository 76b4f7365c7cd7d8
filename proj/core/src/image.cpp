#include "hybridseg/image.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>

#include "hybridseg/errors.hpp"

namespace hseg {

namespace {

constexpr double kPi = 3.14159265358979323846;

void check_chw(const Tensor& img, const char* op) {
    if (!img.defined() || img.rank() != 3) {
        throw DimensionError(std::string(op) + ": expected a [C,H,W] image");
    }
}

/// Mirror an index into [0, n) without repeating the border sample.
std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
    if (n == 1) return 0;
    const std::int64_t period = 2 * (n - 1);
    i = std::llabs(i) % period;
    return i < n ? i : period - i;
}

std::int64_t clamp_index(std::int64_t i, std::int64_t n) {
    return i < 0 ? 0 : (i >= n ? n - 1 : i);
}

struct Plane {
    const float* src;
    std::int64_t h, w;
    float at_reflect(std::int64_t y, std::int64_t x) const {
        return src[reflect_index(y, h) * w + reflect_index(x, w)];
    }
    float at_clamp(std::int64_t y, std::int64_t x) const {
        return src[clamp_index(y, h) * w + clamp_index(x, w)];
    }
};

template <typename PerPixel>
Tensor map_geometry(const Tensor& img, std::int64_t out_h, std::int64_t out_w, PerPixel&& fn) {
    const std::int64_t c = img.shape()[0];
    const std::int64_t h = img.shape()[1];
    const std::int64_t w = img.shape()[2];
    const auto& src = img.node()->value;
    std::vector<float> out(static_cast<std::size_t>(c * out_h * out_w));
    for (std::int64_t ci = 0; ci < c; ++ci) {
        Plane plane{src.data() + ci * h * w, h, w};
        float* dst = out.data() + ci * out_h * out_w;
        for (std::int64_t y = 0; y < out_h; ++y) {
            for (std::int64_t x = 0; x < out_w; ++x) {
                dst[y * out_w + x] = fn(plane, y, x);
            }
        }
    }
    return Tensor::from_data({c, out_h, out_w}, std::move(out));
}

float sample_bilinear_reflect(const Plane& p, double sy, double sx) {
    const std::int64_t y0 = static_cast<std::int64_t>(std::floor(sy));
    const std::int64_t x0 = static_cast<std::int64_t>(std::floor(sx));
    const double fy = sy - static_cast<double>(y0);
    const double fx = sx - static_cast<double>(x0);
    const double v00 = p.at_reflect(y0, x0);
    const double v01 = p.at_reflect(y0, x0 + 1);
    const double v10 = p.at_reflect(y0 + 1, x0);
    const double v11 = p.at_reflect(y0 + 1, x0 + 1);
    const double top = v00 + fx * (v01 - v00);
    const double bot = v10 + fx * (v11 - v10);
    return static_cast<float>(top + fy * (bot - top));
}

}  // namespace

Tensor resize_bilinear(const Tensor& img, std::int64_t out_h, std::int64_t out_w) {
    check_chw(img, "resize_bilinear");
    if (out_h < 1 || out_w < 1) throw ConfigError("resize_bilinear: output size must be positive");
    const double sy = static_cast<double>(img.shape()[1]) / static_cast<double>(out_h);
    const double sx = static_cast<double>(img.shape()[2]) / static_cast<double>(out_w);
    return map_geometry(img, out_h, out_w, [&](const Plane& p, std::int64_t y, std::int64_t x) {
        const double src_y = (static_cast<double>(y) + 0.5) * sy - 0.5;
        const double src_x = (static_cast<double>(x) + 0.5) * sx - 0.5;
        const std::int64_t y0 = static_cast<std::int64_t>(std::floor(src_y));
        const std::int64_t x0 = static_cast<std::int64_t>(std::floor(src_x));
        const double fy = src_y - static_cast<double>(y0);
        const double fx = src_x - static_cast<double>(x0);
        const double v00 = p.at_clamp(y0, x0);
        const double v01 = p.at_clamp(y0, x0 + 1);
        const double v10 = p.at_clamp(y0 + 1, x0);
        const double v11 = p.at_clamp(y0 + 1, x0 + 1);
        const double top = v00 + fx * (v01 - v00);
        const double bot = v10 + fx * (v11 - v10);
        return static_cast<float>(top + fy * (bot - top));
    });
}

Tensor resize_nearest(const Tensor& img, std::int64_t out_h, std::int64_t out_w) {
    check_chw(img, "resize_nearest");
    if (out_h < 1 || out_w < 1) throw ConfigError("resize_nearest: output size must be positive");
    const double sy = static_cast<double>(img.shape()[1]) / static_cast<double>(out_h);
    const double sx = static_cast<double>(img.shape()[2]) / static_cast<double>(out_w);
    return map_geometry(img, out_h, out_w, [&](const Plane& p, std::int64_t y, std::int64_t x) {
        const auto src_y = static_cast<std::int64_t>(std::floor((static_cast<double>(y) + 0.5) * sy));
        const auto src_x = static_cast<std::int64_t>(std::floor((static_cast<double>(x) + 0.5) * sx));
        return p.at_clamp(src_y, src_x);
    });
}

Tensor flip_horizontal(const Tensor& img) {
    check_chw(img, "flip_horizontal");
    const std::int64_t h = img.shape()[1];
    const std::int64_t w = img.shape()[2];
    return map_geometry(img, h, w, [w](const Plane& p, std::int64_t y, std::int64_t x) {
        return p.src[y * w + (w - 1 - x)];
    });
}

Tensor flip_vertical(const Tensor& img) {
    check_chw(img, "flip_vertical");
    const std::int64_t h = img.shape()[1];
    const std::int64_t w = img.shape()[2];
    return map_geometry(img, h, w, [h, w](const Plane& p, std::int64_t y, std::int64_t x) {
        return p.src[(h - 1 - y) * w + x];
    });
}

Tensor rotate90(const Tensor& img, int quarter_turns) {
    check_chw(img, "rotate90");
    const std::int64_t h = img.shape()[1];
    const std::int64_t w = img.shape()[2];
    const int k = ((quarter_turns % 4) + 4) % 4;
    switch (k) {
        case 0:
            return Tensor::from_data(img.shape(), img.node()->value);
        case 1:
            return map_geometry(img, w, h, [w](const Plane& p, std::int64_t y, std::int64_t x) {
                return p.src[x * w + (w - 1 - y)];
            });
        case 2:
            return map_geometry(img, h, w, [h, w](const Plane& p, std::int64_t y, std::int64_t x) {
                return p.src[(h - 1 - y) * w + (w - 1 - x)];
            });
        default:
            return map_geometry(img, w, h, [h, w](const Plane& p, std::int64_t y, std::int64_t x) {
                return p.src[(h - 1 - x) * w + y];
            });
    }
}

namespace {

template <bool Bilinear>
Tensor rotate_impl(const Tensor& img, double degrees) {
    const std::int64_t h = img.shape()[1];
    const std::int64_t w = img.shape()[2];
    const double rad = degrees * kPi / 180.0;
    const double c = std::cos(rad);
    const double s = std::sin(rad);
    const double cy = 0.5 * static_cast<double>(h - 1);
    const double cx = 0.5 * static_cast<double>(w - 1);
    return map_geometry(img, h, w, [&](const Plane& p, std::int64_t y, std::int64_t x) {
        const double dy = static_cast<double>(y) - cy;
        const double dx = static_cast<double>(x) - cx;
        const double src_x = cx + c * dx + s * dy;
        const double src_y = cy - s * dx + c * dy;
        if constexpr (Bilinear) {
            return sample_bilinear_reflect(p, src_y, src_x);
        } else {
            const auto ny = static_cast<std::int64_t>(std::llround(src_y));
            const auto nx = static_cast<std::int64_t>(std::llround(src_x));
            return p.at_reflect(ny, nx);
        }
    });
}

}  // namespace

Tensor rotate_bilinear(const Tensor& img, double degrees) {
    check_chw(img, "rotate_bilinear");
    return rotate_impl<true>(img, degrees);
}

Tensor rotate_nearest(const Tensor& img, double degrees) {
    check_chw(img, "rotate_nearest");
    return rotate_impl<false>(img, degrees);
}

Tensor gaussian_blur(const Tensor& img, double sigma) {
    check_chw(img, "gaussian_blur");
    if (!(sigma > 0.0)) throw ConfigError("gaussian_blur: sigma must be positive");
    const std::int64_t radius = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double total = 0.0;
    for (std::int64_t i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
        kernel[static_cast<std::size_t>(i + radius)] = v;
        total += v;
    }
    for (auto& v : kernel) v /= total;

    Tensor horizontal =
        map_geometry(img, img.shape()[1], img.shape()[2], [&](const Plane& p, std::int64_t y, std::int64_t x) {
            double acc = 0.0;
            for (std::int64_t i = -radius; i <= radius; ++i) {
                acc += kernel[static_cast<std::size_t>(i + radius)] * p.at_reflect(y, x + i);
            }
            return static_cast<float>(acc);
        });
    return map_geometry(horizontal, img.shape()[1], img.shape()[2],
                        [&](const Plane& p, std::int64_t y, std::int64_t x) {
                            double acc = 0.0;
                            for (std::int64_t i = -radius; i <= radius; ++i) {
                                acc += kernel[static_cast<std::size_t>(i + radius)] * p.at_reflect(y + i, x);
                            }
                            return static_cast<float>(acc);
                        });
}

Tensor adjust_contrast(const Tensor& img, float gain) {
    check_chw(img, "adjust_contrast");
    const auto& src = img.node()->value;
    std::vector<float> out(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) {
        const float v = 0.5f + gain * (src[i] - 0.5f);
        out[i] = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
    }
    return Tensor::from_data(img.shape(), std::move(out));
}

void write_pgm(const std::string& path, const Tensor& img) {
    if (!img.defined() || (img.rank() != 2 && !(img.rank() == 3 && img.shape()[0] == 1))) {
        throw DimensionError("write_pgm: expected [H,W] or [1,H,W]");
    }
    const std::int64_t h = img.shape()[img.rank() - 2];
    const std::int64_t w = img.shape()[img.rank() - 1];
    const auto& v = img.node()->value;
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f << "P5\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(w));
    for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
            const float clamped = std::min(std::max(v[static_cast<std::size_t>(y * w + x)], 0.0f), 1.0f);
            row[static_cast<std::size_t>(x)] =
                static_cast<unsigned char>(std::lround(clamped * 255.0f));
        }
        f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!f) throw IoError("failed writing '" + path + "'");
}

Tensor read_pgm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "' for reading");
    std::string magic;
    f >> magic;
    if (magic != "P5") throw FormatError("'" + path + "' is not a binary PGM (P5) file");
    auto next_int = [&]() -> std::int64_t {
        // Skip whitespace and '#' comment lines between header fields.
        while (true) {
            const int ch = f.peek();
            if (ch == '#') {
                std::string line;
                std::getline(f, line);
            } else if (std::isspace(ch)) {
                f.get();
            } else {
                break;
            }
        }
        std::int64_t v = -1;
        f >> v;
        if (!f || v < 0) throw ParseError("'" + path + "': malformed PGM header");
        return v;
    };
    const std::int64_t w = next_int();
    const std::int64_t h = next_int();
    const std::int64_t maxval = next_int();
    if (w < 1 || h < 1 || maxval < 1 || maxval > 255) {
        throw ParseError("'" + path + "': unsupported PGM geometry or depth");
    }
    f.get();  // single whitespace byte before the raster
    std::vector<unsigned char> raw(static_cast<std::size_t>(w * h));
    f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (f.gcount() != static_cast<std::streamsize>(raw.size())) {
        throw ParseError("'" + path + "': truncated PGM raster");
    }
    std::vector<float> out(raw.size());
    const float inv = 1.0f / static_cast<float>(maxval);
    for (std::size_t i = 0; i < raw.size(); ++i) out[i] = static_cast<float>(raw[i]) * inv;
    return Tensor::from_data({1, h, w}, std::move(out));
}

}  // namespace hseg
