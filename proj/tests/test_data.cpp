#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "hybridseg/data.hpp"
#include "hybridseg/errors.hpp"
#include "hybridseg/image.hpp"
#include "hybridseg/rng.hpp"

using namespace hseg;

namespace {

bool same_values(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    return std::memcmp(a.data().data(), b.data().data(),
                       sizeof(float) * static_cast<std::size_t>(a.numel())) == 0;
}

bool is_binary(const Tensor& t) {
    for (float v : t.data()) {
        if (v != 0.0f && v != 1.0f) return false;
    }
    return true;
}

std::filesystem::path temp_file(const char* name) {
    return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("synthetic samples are deterministic and well-formed") {
    auto a = generate_synthetic(6, 32, 99);
    auto b = generate_synthetic(6, 32, 99);
    REQUIRE(a.size() == 6);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].id == b[i].id);
        CHECK(same_values(a[i].image, b[i].image));
        CHECK(same_values(a[i].mask, b[i].mask));
        CHECK(a[i].image.shape() == Shape{3, 32, 32});
        CHECK(a[i].mask.shape() == Shape{1, 32, 32});
        CHECK(is_binary(a[i].mask));
        for (float v : a[i].image.data()) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }

    // Sample i is a function of (seed, i), not of the requested count.
    auto shorter = generate_synthetic(3, 32, 99);
    CHECK(same_values(a[2].image, shorter[2].image));
    CHECK(same_values(a[2].mask, shorter[2].mask));

    auto other_seed = generate_synthetic(6, 32, 100);
    CHECK(!same_values(a[0].image, other_seed[0].image));
}

TEST_CASE("tumor probability controls mask occupancy") {
    for (const auto& s : generate_synthetic(8, 32, 5, 1.0)) {
        double total = 0.0;
        for (float v : s.mask.data()) total += v;
        CHECK(total > 0.0);
    }
    for (const auto& s : generate_synthetic(8, 32, 5, 0.0)) {
        for (float v : s.mask.data()) CHECK(v == 0.0f);
    }
}

TEST_CASE("geometric augmentations are involutions or cycles") {
    auto base = generate_synthetic(1, 32, 7)[0];

    Rng r1(1);
    auto fh = augment(base, AugmentOp::FlipH, r1);
    CHECK(fh.op == "flip_h");
    CHECK(fh.source == base.id);
    CHECK(!same_values(fh.image, base.image));
    Rng r2(2);
    auto fhh = augment(fh, AugmentOp::FlipH, r2);
    CHECK(same_values(fhh.image, base.image));
    CHECK(same_values(fhh.mask, base.mask));

    Rng r3(3);
    auto fv = augment(base, AugmentOp::FlipV, r3);
    auto fvv = augment(fv, AugmentOp::FlipV, r3);
    CHECK(same_values(fvv.image, base.image));

    // rotate90 cycles with period 4 regardless of the drawn quarter count.
    auto once = rotate90(base.image, 1);
    auto full_turn = rotate90(once, 3);
    CHECK(same_values(full_turn, base.image));
}

TEST_CASE("photometric augmentations leave the mask untouched") {
    auto base = generate_synthetic(1, 32, 8)[0];
    for (auto op : {AugmentOp::Blur, AugmentOp::Contrast}) {
        Rng rng(4);
        auto out = augment(base, op, rng);
        CHECK(same_values(out.mask, base.mask));
        CHECK(!out.op_params.empty());
    }
}

TEST_CASE("free rotation keeps the mask strictly binary") {
    auto base = generate_synthetic(1, 32, 9)[0];
    Rng rng(5);
    auto rotated = augment(base, AugmentOp::RotFree, rng);
    CHECK(is_binary(rotated.mask));
    CHECK(rotated.op == "rot15");
    CHECK(rotated.op_params.find("angle=") == 0);
}

TEST_CASE("augmented datasets are pure functions of (samples, plan)") {
    auto base = generate_synthetic(5, 32, 11);

    auto out = build_augmented_dataset(base, {3.0, 17});
    REQUIRE(out.size() == 15);
    for (int i = 0; i < 5; ++i) {
        CHECK(out[static_cast<std::size_t>(i)].id == base[static_cast<std::size_t>(i)].id);
        CHECK(same_values(out[static_cast<std::size_t>(i)].image,
                          base[static_cast<std::size_t>(i)].image));
    }
    for (std::size_t i = 5; i < out.size(); ++i) {
        CHECK(out[i].op != "none");
        CHECK(!out[i].source.empty());
    }

    auto again = build_augmented_dataset(base, {3.0, 17});
    for (std::size_t i = 0; i < out.size(); ++i) {
        CHECK(out[i].id == again[i].id);
        CHECK(same_values(out[i].image, again[i].image));
    }

    auto reseeded = build_augmented_dataset(base, {3.0, 18});
    bool any_difference = false;
    for (std::size_t i = 5; i < out.size(); ++i) {
        if (!same_values(out[i].image, reseeded[i].image)) any_difference = true;
    }
    CHECK(any_difference);

    // Fractional multipliers round up.
    CHECK(build_augmented_dataset(base, {1.3, 0}).size() == 7);
}

TEST_CASE("dataset archives round-trip bitwise") {
    auto samples = generate_synthetic(4, 32, 13);
    samples[0].patient = "p0";
    samples[0].modality = "MR";
    const auto path = temp_file("hseg_test_dataset.nta");

    save_dataset(path.string(), samples);
    auto loaded = load_dataset(path.string());
    REQUIRE(loaded.size() == samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        CHECK(loaded[i].id == samples[i].id);
        CHECK(loaded[i].patient == samples[i].patient);
        CHECK(loaded[i].modality == samples[i].modality);
        CHECK(loaded[i].op == samples[i].op);
        CHECK(same_values(loaded[i].image, samples[i].image));
        CHECK(same_values(loaded[i].mask, samples[i].mask));
    }
    std::filesystem::remove(path);
}

TEST_CASE("holdout splitting keeps patients whole") {
    std::vector<SliceSample> samples;
    for (int p = 0; p < 6; ++p) {
        for (int s = 0; s < 4; ++s) {
            SliceSample sample = generate_synthetic(1, 32, static_cast<std::uint64_t>(p * 4 + s))[0];
            sample.id = "p" + std::to_string(p) + "_s" + std::to_string(s);
            sample.patient = "patient" + std::to_string(p);
            samples.push_back(std::move(sample));
        }
    }

    auto [train, val] = split_train_val(samples, 0.25, 3);
    CHECK(train.size() + val.size() == samples.size());
    CHECK(val.size() >= 6);  // at least one whole patient of 4 slices

    std::set<std::string> train_patients, val_patients;
    for (const auto& s : train) train_patients.insert(s.patient);
    for (const auto& s : val) val_patients.insert(s.patient);
    for (const auto& p : val_patients) CHECK(train_patients.count(p) == 0);

    auto [train2, val2] = split_train_val(samples, 0.25, 3);
    CHECK(train2.size() == train.size());
    for (std::size_t i = 0; i < val.size(); ++i) CHECK(val2[i].id == val[i].id);
}

TEST_CASE("volume normalization windows to the unit interval") {
    Volume v;
    v.depth = 1;
    v.height = 4;
    v.width = 4;
    v.data = {-50, 0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 200, 300, 400, 5000};
    auto n = normalize_volume(v);
    for (float x : n.data) {
        CHECK(x >= 0.0f);
        CHECK(x <= 1.0f);
    }

    Volume flat;
    flat.depth = 1;
    flat.height = 2;
    flat.width = 2;
    flat.data = {7, 7, 7, 7};
    auto nf = normalize_volume(flat);
    for (float x : nf.data) CHECK(x == 0.5f);
}

TEST_CASE("slice pairing replicates channels and binarizes masks") {
    Volume img;
    img.depth = 2;
    img.height = 6;
    img.width = 6;
    img.data.assign(static_cast<std::size_t>(2 * 6 * 6), 0.0f);
    for (std::size_t i = 0; i < img.data.size(); ++i)
        img.data[i] = static_cast<float>(i) / static_cast<float>(img.data.size());

    Volume mask = img;
    for (auto& v : mask.data) v = v > 0.5f ? 1.0f : 0.0f;

    auto samples = slice_and_pair(img, mask, {"case1_", "pat7", "MR"}, 8);
    REQUIRE(samples.size() == 2);
    CHECK(samples[0].id == "case1_0");
    CHECK(samples[1].id == "case1_1");
    CHECK(samples[0].patient == "pat7");
    CHECK(samples[0].image.shape() == Shape{3, 8, 8});
    CHECK(samples[0].mask.shape() == Shape{1, 8, 8});
    CHECK(is_binary(samples[0].mask));
    // Grayscale replicated: the three channels coincide.
    for (int i = 0; i < 64; ++i) {
        CHECK(samples[0].image.data()[i] == samples[0].image.data()[64 + i]);
        CHECK(samples[0].image.data()[i] == samples[0].image.data()[128 + i]);
    }
}
