#pragma once

#include <string>
#include <utility>
#include <vector>

#include "hybridseg/dicom.hpp"
#include "hybridseg/rng.hpp"
#include "hybridseg/tensor.hpp"

namespace hseg {

struct Volume {
    std::int64_t depth = 0, height = 0, width = 0;
    std::vector<float> data;  // slice-major

    float at(std::int64_t z, std::int64_t y, std::int64_t x) const {
        return data[static_cast<std::size_t>((z * height + y) * width + x)];
    }
};

Volume volume_from_series(const DicomSeries& series);

/// Clips to the [p1, p99] intensity window and rescales to [0, 1]; a
/// constant volume maps to 0.5 everywhere.
Volume normalize_volume(const Volume& v);

struct SliceSample {
    std::string id;
    std::string patient;
    std::string modality;
    std::string source;      // id of the sample this one was derived from
    std::string op = "none"; // augmentation tag
    std::string op_params;   // drawn parameters, e.g. "angle=-11.2500"
    Tensor image;            // [3,S,S] float in [0,1]
    Tensor mask;             // [1,S,S] float in {0,1}
};

struct SliceMeta {
    std::string id_prefix;  // sample ids become <prefix><z>
    std::string patient;
    std::string modality;
};

/// Pairs image and mask volumes slice by slice: grayscale replicated to
/// three channels, bilinear-resized to out_size; masks nearest-resized and
/// thresholded so they stay strictly binary.
std::vector<SliceSample> slice_and_pair(const Volume& image, const Volume& mask,
                                        const SliceMeta& meta, std::int64_t out_size);

enum class AugmentOp { None, FlipH, FlipV, Rot90, RotFree, Blur, Contrast };

const char* augment_op_name(AugmentOp op);

/// Applies one op, drawing its parameters from the rng: Rot90 picks a
/// quarter-turn count in {1,2,3}, RotFree an angle in ±15 degrees, Blur a
/// sigma in [0.5, 1.5], Contrast a gain in [0.8, 1.2]. Geometric ops
/// transform image and mask together (nearest for the mask); photometric
/// ops leave the mask untouched.
SliceSample augment(const SliceSample& s, AugmentOp op, Rng& rng);

struct AugmentPlan {
    double multiplier = 1.0;  // output count = ceil(multiplier * inputs)
    std::uint64_t seed = 0;
};

/// Originals first (unchanged), then augmented copies cycling over the
/// sources with per-item seeds derived from the plan seed, so the result is
/// a pure function of (samples, plan).
std::vector<SliceSample> build_augmented_dataset(const std::vector<SliceSample>& samples,
                                                 const AugmentPlan& plan);

/// Procedural MRI-like slices: smooth low-frequency background plus 1-2
/// brighter perturbed-ellipse blobs; the mask is the exact blob support.
/// Sample i depends only on (seed, i).
std::vector<SliceSample> generate_synthetic(int count, std::int64_t size, std::uint64_t seed,
                                            double tumor_prob = 1.0);

/// Packs samples into a named-tensor archive (img/<id>, msk/<id>, manifest).
void save_dataset(const std::string& path, const std::vector<SliceSample>& samples);
std::vector<SliceSample> load_dataset(const std::string& path);

/// Deterministic holdout split: groups samples by patient, shuffles the
/// patient list with the seed, and moves whole patients to the validation
/// side until it reaches val_fraction of the samples.
std::pair<std::vector<SliceSample>, std::vector<SliceSample>>
split_train_val(const std::vector<SliceSample>& samples, double val_fraction, std::uint64_t seed);

}  // namespace hseg
