#include "hybridseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "hybridseg/errors.hpp"
#include "hybridseg/image.hpp"
#include "hybridseg/nta.hpp"
#include "json.hpp"

namespace hseg {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::string fmt_param(const char* key, float v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%s=%.4f", key, static_cast<double>(v));
    return buf;
}

std::string pad_index(std::int64_t i, int width) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%0*lld", width, static_cast<long long>(i));
    return buf;
}

}  // namespace

Volume volume_from_series(const DicomSeries& series) {
    Volume v;
    v.depth = series.depth;
    v.height = series.rows;
    v.width = series.cols;
    v.data = series.data;
    return v;
}

Volume normalize_volume(const Volume& v) {
    if (v.data.empty()) throw UsageError("normalize_volume: empty volume");
    std::vector<float> sorted = v.data;
    std::sort(sorted.begin(), sorted.end());
    const auto n = static_cast<std::int64_t>(sorted.size());
    const double lo = sorted[static_cast<std::size_t>(
        static_cast<std::int64_t>(std::floor(0.01 * static_cast<double>(n - 1))))];
    const double hi = sorted[static_cast<std::size_t>(
        static_cast<std::int64_t>(std::ceil(0.99 * static_cast<double>(n - 1))))];

    Volume out = v;
    if (hi <= lo) {
        std::fill(out.data.begin(), out.data.end(), 0.5f);
        return out;
    }
    const double inv = 1.0 / (hi - lo);
    for (auto& x : out.data) {
        const double t = (static_cast<double>(x) - lo) * inv;
        x = static_cast<float>(t < 0.0 ? 0.0 : (t > 1.0 ? 1.0 : t));
    }
    return out;
}

std::vector<SliceSample> slice_and_pair(const Volume& image, const Volume& mask,
                                        const SliceMeta& meta, std::int64_t out_size) {
    if (image.depth != mask.depth || image.height != mask.height || image.width != mask.width) {
        throw DimensionError("slice_and_pair: image and mask volumes disagree on shape");
    }
    if (out_size < 1) throw ConfigError("slice_and_pair: output size must be positive");

    std::vector<SliceSample> out;
    out.reserve(static_cast<std::size_t>(image.depth));
    const std::int64_t plane = image.height * image.width;
    for (std::int64_t z = 0; z < image.depth; ++z) {
        std::vector<float> img_plane(image.data.begin() + z * plane,
                                     image.data.begin() + (z + 1) * plane);
        std::vector<float> msk_plane(mask.data.begin() + z * plane,
                                     mask.data.begin() + (z + 1) * plane);
        Tensor img = resize_bilinear(
            Tensor::from_data({1, image.height, image.width}, std::move(img_plane)), out_size,
            out_size);
        Tensor msk = resize_nearest(
            Tensor::from_data({1, mask.height, mask.width}, std::move(msk_plane)), out_size,
            out_size);

        const auto& g = img.node()->value;
        std::vector<float> rgb(g.size() * 3);
        std::copy(g.begin(), g.end(), rgb.begin());
        std::copy(g.begin(), g.end(), rgb.begin() + static_cast<std::ptrdiff_t>(g.size()));
        std::copy(g.begin(), g.end(), rgb.begin() + 2 * static_cast<std::ptrdiff_t>(g.size()));

        std::vector<float> bin(msk.node()->value.size());
        for (std::size_t i = 0; i < bin.size(); ++i) {
            bin[i] = msk.node()->value[i] > 0.5f ? 1.0f : 0.0f;
        }

        SliceSample s;
        s.id = meta.id_prefix + pad_index(z, 4);
        s.patient = meta.patient;
        s.modality = meta.modality;
        s.source = s.id;
        s.image = Tensor::from_data({3, out_size, out_size}, std::move(rgb));
        s.mask = Tensor::from_data({1, out_size, out_size}, std::move(bin));
        out.push_back(std::move(s));
    }
    return out;
}

const char* augment_op_name(AugmentOp op) {
    switch (op) {
        case AugmentOp::None: return "none";
        case AugmentOp::FlipH: return "flip_h";
        case AugmentOp::FlipV: return "flip_v";
        case AugmentOp::Rot90: return "rot90";
        case AugmentOp::RotFree: return "rot15";
        case AugmentOp::Blur: return "blur";
        case AugmentOp::Contrast: return "contrast";
    }
    throw ConfigError("unknown augmentation op");
}

SliceSample augment(const SliceSample& s, AugmentOp op, Rng& rng) {
    SliceSample out;
    out.id = s.id;
    out.patient = s.patient;
    out.modality = s.modality;
    out.source = s.id;
    out.op = augment_op_name(op);

    switch (op) {
        case AugmentOp::None:
            out.image = s.image;
            out.mask = s.mask;
            break;
        case AugmentOp::FlipH:
            out.image = flip_horizontal(s.image);
            out.mask = flip_horizontal(s.mask);
            break;
        case AugmentOp::FlipV:
            out.image = flip_vertical(s.image);
            out.mask = flip_vertical(s.mask);
            break;
        case AugmentOp::Rot90: {
            const int k = static_cast<int>(1 + rng.next_below(3));
            out.image = rotate90(s.image, k);
            out.mask = rotate90(s.mask, k);
            out.op_params = "k=" + std::to_string(k);
            break;
        }
        case AugmentOp::RotFree: {
            const float angle = rng.uniform(-15.0f, 15.0f);
            out.image = rotate_bilinear(s.image, static_cast<double>(angle));
            out.mask = rotate_nearest(s.mask, static_cast<double>(angle));
            out.op_params = fmt_param("angle", angle);
            break;
        }
        case AugmentOp::Blur: {
            const float sigma = rng.uniform(0.5f, 1.5f);
            out.image = gaussian_blur(s.image, static_cast<double>(sigma));
            out.mask = s.mask;
            out.op_params = fmt_param("sigma", sigma);
            break;
        }
        case AugmentOp::Contrast: {
            const float gain = rng.uniform(0.8f, 1.2f);
            out.image = adjust_contrast(s.image, gain);
            out.mask = s.mask;
            out.op_params = fmt_param("gain", gain);
            break;
        }
    }
    return out;
}

std::vector<SliceSample> build_augmented_dataset(const std::vector<SliceSample>& samples,
                                                 const AugmentPlan& plan) {
    if (samples.empty()) throw UsageError("build_augmented_dataset: no input samples");
    if (!(plan.multiplier >= 1.0)) {
        throw ConfigError("build_augmented_dataset: multiplier must be >= 1");
    }
    const auto n = static_cast<std::int64_t>(samples.size());
    const auto total = static_cast<std::int64_t>(
        std::ceil(plan.multiplier * static_cast<double>(n) - 1e-9));
    static constexpr AugmentOp kOps[] = {AugmentOp::FlipH,   AugmentOp::FlipV, AugmentOp::Rot90,
                                         AugmentOp::RotFree, AugmentOp::Blur,  AugmentOp::Contrast};

    std::vector<SliceSample> out = samples;
    out.reserve(static_cast<std::size_t>(total));
    for (std::int64_t j = 0; j + n < total; ++j) {
        const SliceSample& src = samples[static_cast<std::size_t>(j % n)];
        const AugmentOp op = kOps[static_cast<std::size_t>((j / n) % 6)];
        Rng item_rng(derive_seed(plan.seed, static_cast<std::uint64_t>(j)));
        SliceSample a = augment(src, op, item_rng);
        a.id = "aug" + pad_index(n + j, 6);
        out.push_back(std::move(a));
    }
    return out;
}

std::vector<SliceSample> generate_synthetic(int count, std::int64_t size, std::uint64_t seed,
                                            double tumor_prob) {
    if (count < 0) throw ConfigError("generate_synthetic: count must be non-negative");
    if (size < 32) throw ConfigError("generate_synthetic: size must be at least 32");
    if (!(tumor_prob >= 0.0 && tumor_prob <= 1.0)) {
        throw ConfigError("generate_synthetic: tumor probability must lie in [0, 1]");
    }

    std::vector<SliceSample> out;
    out.reserve(static_cast<std::size_t>(count));
    const double s = static_cast<double>(size);

    for (int i = 0; i < count; ++i) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));

        // Smooth background: coarse random grid upsampled to full size.
        std::vector<float> grid(25);
        for (auto& g : grid) g = rng.uniform(0.10f, 0.24f);
        Tensor bg = resize_bilinear(Tensor::from_data({1, 5, 5}, std::move(grid)), size, size);
        std::vector<float> img = bg.node()->value;
        for (auto& v : img) v += rng.uniform(-0.01f, 0.01f);

        std::vector<float> mask(img.size(), 0.0f);
        if (rng.next_float() < static_cast<float>(tumor_prob)) {
            const int blobs = 1 + (rng.next_float() < 0.35f ? 1 : 0);
            for (int b = 0; b < blobs; ++b) {
                // The lead lesion is large and high-contrast; a second one,
                // when present, is smaller and off to the side.
                const float rlo = b == 0 ? 0.34f : 0.10f;
                const float rhi = b == 0 ? 0.46f : 0.16f;
                const float clo = b == 0 ? 0.40f : 0.15f;
                const float chi = b == 0 ? 0.60f : 0.85f;
                const double cx = static_cast<double>(rng.uniform(clo, chi)) * s;
                const double cy = static_cast<double>(rng.uniform(clo, chi)) * s;
                const double ra = static_cast<double>(rng.uniform(rlo, rhi)) * s;
                const double rb = static_cast<double>(rng.uniform(rlo, rhi)) * s;
                const double phi = static_cast<double>(rng.uniform(0.0f, static_cast<float>(kPi)));
                const double bright = static_cast<double>(rng.uniform(0.55f, 0.65f));
                double amp[4], phase[4];
                for (int k = 0; k < 4; ++k) {
                    amp[k] = static_cast<double>(rng.uniform(-0.02f, 0.02f));
                    phase[k] = static_cast<double>(rng.uniform(0.0f, static_cast<float>(2.0 * kPi)));
                }
                for (std::int64_t y = 0; y < size; ++y) {
                    for (std::int64_t x = 0; x < size; ++x) {
                        const double dx = static_cast<double>(x) - cx;
                        const double dy = static_cast<double>(y) - cy;
                        const double r = std::hypot(dx, dy);
                        const double theta = std::atan2(dy, dx) - phi;
                        const double ct = std::cos(theta);
                        const double st = std::sin(theta);
                        double re = ra * rb / std::sqrt(rb * rb * ct * ct + ra * ra * st * st);
                        double wobble = 1.0;
                        for (int k = 0; k < 4; ++k) {
                            wobble += amp[k] * std::cos((k + 2) * theta + phase[k]);
                        }
                        re = std::max(re * wobble, 1.0);
                        if (r <= re) {
                            const std::size_t idx = static_cast<std::size_t>(y * size + x);
                            mask[idx] = 1.0f;
                            img[idx] += static_cast<float>(bright);
                        }
                    }
                }
            }
        }
        for (auto& v : img) v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);

        std::vector<float> rgb(img.size() * 3);
        std::copy(img.begin(), img.end(), rgb.begin());
        std::copy(img.begin(), img.end(), rgb.begin() + static_cast<std::ptrdiff_t>(img.size()));
        std::copy(img.begin(), img.end(), rgb.begin() + 2 * static_cast<std::ptrdiff_t>(img.size()));

        SliceSample sample;
        sample.id = pad_index(i, 6);
        sample.patient = "p" + pad_index(i, 6);
        sample.modality = "synthetic";
        sample.source = sample.id;
        sample.image = Tensor::from_data({3, size, size}, std::move(rgb));
        sample.mask = Tensor::from_data({1, size, size}, std::move(mask));
        out.push_back(std::move(sample));
    }
    return out;
}

void save_dataset(const std::string& path, const std::vector<SliceSample>& samples) {
    NtaArchive a;
    nlohmann::json manifest = nlohmann::json::array();
    for (const auto& s : samples) {
        manifest.push_back({{"id", s.id},
                            {"patient", s.patient},
                            {"modality", s.modality},
                            {"source", s.source},
                            {"op", s.op},
                            {"params", s.op_params}});
        a.add("img/" + s.id, NtaEntry::from_tensor(s.image));
        const auto& mv = s.mask.node()->value;
        std::vector<unsigned char> mu(mv.size());
        for (std::size_t i = 0; i < mv.size(); ++i) mu[i] = mv[i] > 0.5f ? 1 : 0;
        a.add("msk/" + s.id, NtaEntry::from_u8(s.mask.shape(), std::move(mu)));
    }
    a.add("manifest", NtaEntry::from_bytes(manifest.dump()));
    a.write_file(path);
}

std::vector<SliceSample> load_dataset(const std::string& path) {
    const NtaArchive a = NtaArchive::read_file(path);
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(a.get("manifest").as_string());
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("dataset manifest in '" + path + "': " + e.what());
    }
    if (!manifest.is_array()) throw ParseError("dataset manifest in '" + path + "' is not an array");

    std::vector<SliceSample> out;
    out.reserve(manifest.size());
    for (const auto& entry : manifest) {
        SliceSample s;
        try {
            entry.at("id").get_to(s.id);
            entry.at("patient").get_to(s.patient);
            entry.at("modality").get_to(s.modality);
            entry.at("source").get_to(s.source);
            entry.at("op").get_to(s.op);
            entry.at("params").get_to(s.op_params);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("dataset manifest in '" + path + "': " + e.what());
        }
        const NtaEntry& img = a.get("img/" + s.id);
        if (img.dims.size() != 3 || img.dims[0] != 3) {
            throw LoadError("dataset image '" + s.id + "' is not [3,H,W]");
        }
        s.image = Tensor::from_data(img.dims, img.as_f32());
        const NtaEntry& msk = a.get("msk/" + s.id);
        if (msk.dims.size() != 3 || msk.dims[0] != 1) {
            throw LoadError("dataset mask '" + s.id + "' is not [1,H,W]");
        }
        const auto mu = msk.as_u8();
        std::vector<float> mv(mu.size());
        for (std::size_t i = 0; i < mu.size(); ++i) mv[i] = mu[i] ? 1.0f : 0.0f;
        s.mask = Tensor::from_data(msk.dims, std::move(mv));
        out.push_back(std::move(s));
    }
    return out;
}

std::pair<std::vector<SliceSample>, std::vector<SliceSample>>
split_train_val(const std::vector<SliceSample>& samples, double val_fraction, std::uint64_t seed) {
    if (samples.empty()) throw UsageError("split_train_val: no samples");
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
        throw ConfigError("split_train_val: fraction must lie in (0, 1)");
    }

    std::vector<std::string> patients;
    for (const auto& s : samples) {
        if (std::find(patients.begin(), patients.end(), s.patient) == patients.end()) {
            patients.push_back(s.patient);
        }
    }
    std::sort(patients.begin(), patients.end());

    Rng rng(derive_seed(seed, 0x50117));
    for (std::size_t i = patients.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.next_below(i));
        std::swap(patients[i - 1], patients[j]);
    }

    std::map<std::string, std::int64_t> counts;
    for (const auto& s : samples) counts[s.patient] += 1;
    const auto target = std::max<std::int64_t>(
        1, std::llround(val_fraction * static_cast<double>(samples.size())));

    std::set<std::string> val_patients;
    std::int64_t val_count = 0;
    for (const auto& p : patients) {
        if (val_count >= target) break;
        val_patients.insert(p);
        val_count += counts[p];
    }

    std::pair<std::vector<SliceSample>, std::vector<SliceSample>> out;
    for (const auto& s : samples) {
        (val_patients.count(s.patient) ? out.second : out.first).push_back(s);
    }
    if (out.first.empty()) {
        throw ConfigError("split_train_val: validation fraction leaves no training samples");
    }
    return out;
}

}  // namespace hseg
