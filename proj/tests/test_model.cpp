#include <cstring>

#include "doctest.h"
#include "hybridseg/errors.hpp"
#include "hybridseg/model.hpp"
#include "hybridseg/rng.hpp"

using namespace hseg;

namespace {

Model desk_model(std::uint64_t seed, ModelVariant v = ModelVariant::Hybrid) {
    Rng rng(seed);
    return build_model(ModelConfig::desk(v), rng);
}

Tensor random_input(Shape shape, std::uint64_t seed) {
    Rng rng(seed);
    auto t = Tensor::zeros(shape);
    for (auto& v : t.mutable_data()) v = rng.uniform(0.0f, 1.0f);
    return t;
}

bool same_values(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    return std::memcmp(a.data().data(), b.data().data(),
                       sizeof(float) * static_cast<std::size_t>(a.numel())) == 0;
}

}  // namespace

TEST_CASE("config presets and derived geometry") {
    auto full = ModelConfig::full();
    CHECK(full.input_size == 512);
    CHECK(full.tap_channels == std::array<int, 4>{64, 256, 512, 1024});
    CHECK(full.token_count() == 1024);
    CHECK(full.bottleneck_grid() == 32);
    CHECK_NOTHROW(full.validate());

    auto desk = ModelConfig::desk();
    CHECK(desk.input_size == 64);
    CHECK(desk.d_model == desk.tap_channels[3]);
    CHECK(desk.token_count() == 16);
    CHECK_NOTHROW(desk.validate());
}

TEST_CASE("variants toggle the attention and bottleneck features") {
    auto hybrid = ModelConfig::desk(ModelVariant::Hybrid);
    CHECK(hybrid.use_se);
    CHECK(hybrid.use_cbam);
    CHECK(hybrid.use_gates);
    CHECK(hybrid.use_resnext);
    CHECK(hybrid.use_bottleneck);

    auto baseline = ModelConfig::desk(ModelVariant::Baseline);
    CHECK(!baseline.use_se);
    CHECK(!baseline.use_cbam);
    CHECK(!baseline.use_gates);
    CHECK(!baseline.use_resnext);
    CHECK(!baseline.use_bottleneck);

    auto mid = ModelConfig::desk(ModelVariant::BottleneckOnly);
    CHECK(!mid.use_se);
    CHECK(mid.use_bottleneck);

    CHECK(variant_from_name("baseline") == ModelVariant::Baseline);
    CHECK(variant_from_name(variant_name(ModelVariant::BottleneckOnly)) ==
          ModelVariant::BottleneckOnly);
    CHECK_THROWS_AS(variant_from_name("resnet"), ConfigError);
}

TEST_CASE("config validation names the violated constraint") {
    auto c = ModelConfig::desk();
    c.input_size = 60;
    CHECK_THROWS_AS(c.validate(), ConfigError);

    c = ModelConfig::desk();
    c.d_model = 64;  // must equal the deepest tap
    CHECK_THROWS_AS(c.validate(), ConfigError);

    c = ModelConfig::desk();
    c.heads = 3;  // 128 % 3 != 0
    CHECK_THROWS_AS(c.validate(), ConfigError);

    c = ModelConfig::desk();
    c.decoder_channels[1] = 7;  // aggregation halves internally
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("config json and canonical form round-trip") {
    auto c = ModelConfig::desk(ModelVariant::BottleneckOnly);
    c.dropout = 0.25f;
    auto back = ModelConfig::from_json(c.to_json());
    CHECK(back.canonical_string() == c.canonical_string());
    CHECK_THROWS_AS(ModelConfig::from_json("{not json"), ParseError);
}

TEST_CASE("build_model is a pure function of (config, seed)") {
    auto a = desk_model(42);
    auto b = desk_model(42);
    auto c = desk_model(43);

    CHECK(a.params.parameter_count() == b.params.parameter_count());
    bool all_equal = true;
    bool any_differs_from_c = false;
    for (const auto& [name, entry] : a.params.entries()) {
        if (!same_values(entry.tensor, b.params.get(name))) all_equal = false;
        if (!same_values(entry.tensor, c.params.get(name))) any_differs_from_c = true;
    }
    CHECK(all_equal);
    CHECK(any_differs_from_c);
}

TEST_CASE("parameter store contracts") {
    auto m = desk_model(1);
    CHECK(m.params.contains("encoder.stem.weight"));
    CHECK(m.params.contains("head.weight"));
    CHECK_THROWS_AS(m.params.get("no.such.tensor"), UsageError);

    // Running statistics are buffers, not trainable parameters.
    CHECK(m.params.parameter_count(false) > m.params.parameter_count(true));
    for (const auto& [name, t] : m.params.trainable()) CHECK(t.requires_grad());

    ParameterStore ps;
    ps.add("w", Tensor::zeros({2}, true));
    CHECK_THROWS_AS(ps.add("w", Tensor::zeros({2}, true)), UsageError);
}

TEST_CASE("desk forward produces probabilities at input resolution") {
    auto m = desk_model(9);
    Rng rng(0);
    NoGradGuard ng;

    auto single = model_forward(m, random_input({3, 64, 64}, 5), rng, Mode::Eval);
    CHECK(single.shape() == Shape{1, 64, 64});

    auto batched = model_forward(m, random_input({2, 3, 64, 64}, 6), rng, Mode::Eval);
    CHECK(batched.shape() == Shape{2, 1, 64, 64});
    for (float v : batched.data()) {
        CHECK(v > 0.0f);
        CHECK(v < 1.0f);
    }

    CHECK_THROWS_AS(model_forward(m, random_input({4, 64, 64}, 7), rng, Mode::Eval),
                    DimensionError);
}

TEST_CASE("desk encoder taps follow the configured pyramid") {
    auto m = desk_model(9);
    NoGradGuard ng;
    auto taps = encoder_forward(m, random_input({1, 3, 64, 64}, 8), Mode::Eval);
    CHECK(taps[0].shape() == Shape{1, 8, 32, 32});
    CHECK(taps[1].shape() == Shape{1, 32, 16, 16});
    CHECK(taps[2].shape() == Shape{1, 64, 8, 8});
    CHECK(taps[3].shape() == Shape{1, 128, 4, 4});
}

TEST_CASE("eval forward is deterministic; train dropout consumes the rng") {
    auto m = desk_model(10);
    auto x = random_input({1, 3, 64, 64}, 11);
    NoGradGuard ng;

    Rng r1(3), r2(3);
    auto a = model_forward(m, x, r1, Mode::Eval);
    auto b = model_forward(m, x, r2, Mode::Eval);
    CHECK(same_values(a, b));
    CHECK(r1.state() == Rng(3).state());

    model_forward(m, x, r1, Mode::Train);
    CHECK(!(r1.state() == Rng(3).state()));
}

TEST_CASE("weight export and strict import round-trip bitwise") {
    auto m = desk_model(21);
    auto archive = export_weights(m);
    CHECK(archive.contains("meta/config"));

    auto fresh = desk_model(22);
    auto x = random_input({1, 3, 64, 64}, 23);
    NoGradGuard ng;
    Rng rng(0);
    auto before = model_forward(m, x, rng, Mode::Eval);
    CHECK(!same_values(before, model_forward(fresh, x, rng, Mode::Eval)));

    auto report = import_weights(fresh.params, archive, ImportPolicy::Strict);
    CHECK(report.skipped.empty());
    CHECK(report.mismatched.empty());
    CHECK(same_values(before, model_forward(fresh, x, rng, Mode::Eval)));
}

TEST_CASE("strict import rejects a mutilated archive, subset import reports it") {
    auto m = desk_model(31);
    auto archive = export_weights(m);

    NtaArchive missing;
    for (const auto& [name, entry] : archive.entries()) {
        if (name != "model/head.weight") missing.add(name, entry);
    }
    auto fresh = desk_model(32);
    CHECK_THROWS_AS(import_weights(fresh.params, missing, ImportPolicy::Strict), LoadError);

    NtaArchive skewed;
    for (const auto& [name, entry] : archive.entries()) {
        if (name == "model/head.bias") {
            skewed.add(name, NtaEntry::from_f32({2}, {0.0f, 0.0f}));  // wrong shape
        } else {
            skewed.add(name, entry);
        }
    }
    skewed.add("model/unknown.extra", NtaEntry::from_f32({1}, {1.0f}));
    auto report = import_weights(fresh.params, skewed, ImportPolicy::ByNameSubset);
    CHECK(report.mismatched == std::vector<std::string>{"head.bias"});
    CHECK(report.skipped == std::vector<std::string>{"unknown.extra"});
}

TEST_CASE("variant models drop the corresponding parameters") {
    auto hybrid = desk_model(41, ModelVariant::Hybrid);
    auto baseline = desk_model(41, ModelVariant::Baseline);
    auto mid = desk_model(41, ModelVariant::BottleneckOnly);

    CHECK(hybrid.params.contains("encoder.tap1.se.w1"));
    CHECK(hybrid.params.contains("bottleneck.block1.wo"));
    CHECK(hybrid.params.contains("decoder.stage1.gate.psi.weight"));

    CHECK(!baseline.params.contains("encoder.tap1.se.w1"));
    CHECK(!baseline.params.contains("bottleneck.block1.wo"));
    CHECK(!baseline.params.contains("decoder.stage1.gate.psi.weight"));

    CHECK(!mid.params.contains("encoder.tap1.se.w1"));
    CHECK(mid.params.contains("bottleneck.block1.wo"));

    CHECK(baseline.params.parameter_count() < mid.params.parameter_count());
    CHECK(mid.params.parameter_count() < hybrid.params.parameter_count());

    // All variants share the output contract.
    NoGradGuard ng;
    Rng rng(0);
    auto x = random_input({1, 3, 64, 64}, 42);
    CHECK(model_forward(baseline, x, rng, Mode::Eval).shape() == Shape{1, 1, 64, 64});
    CHECK(model_forward(mid, x, rng, Mode::Eval).shape() == Shape{1, 1, 64, 64});
}

TEST_CASE("fnv1a64 matches the reference constants") {
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(fnv1a64("hello") == 0xa430d84680aabd0bULL);
}
