// Microbenchmarks for the kernels that dominate training time, plus a couple
// of end-to-end model passes.  Run with --benchmark_filter=<regex> to narrow.

#include <benchmark/benchmark.h>

#include <hybridseg/data.hpp>
#include <hybridseg/loss.hpp>
#include <hybridseg/model.hpp>
#include <hybridseg/rng.hpp>
#include <hybridseg/tensor.hpp>

#include <cstdint>
#include <vector>

namespace hs = hseg;

namespace {

hs::Tensor random_tensor(hs::Shape shape, hs::Rng& rng, bool requires_grad = false,
                         float lo = -1.0f, float hi = 1.0f) {
    hs::Tensor t = hs::Tensor::zeros(std::move(shape), requires_grad);
    for (auto& v : t.mutable_data()) v = rng.uniform(lo, hi);
    return t;
}

void bm_matmul(benchmark::State& state) {
    const auto n = state.range(0);
    hs::Rng rng(7);
    hs::NoGradGuard ng;
    const hs::Tensor a = random_tensor({n, n}, rng);
    const hs::Tensor b = random_tensor({n, n}, rng);
    for (auto _ : state) {
        benchmark::DoNotOptimize(hs::matmul(a, b));
    }
    state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}

void bm_conv2d_3x3(benchmark::State& state) {
    const auto ch = state.range(0);
    const auto hw = state.range(1);
    hs::Rng rng(7);
    hs::NoGradGuard ng;
    const hs::Tensor x = random_tensor({1, ch, hw, hw}, rng);
    const hs::Tensor w = random_tensor({ch, ch, 3, 3}, rng, false, -0.1f, 0.1f);
    hs::ConvSpec spec;
    spec.in_channels = ch;
    spec.out_channels = ch;
    spec.kernel_h = 3;
    spec.kernel_w = 3;
    spec.stride = 1;
    spec.padding = 1;
    for (auto _ : state) {
        benchmark::DoNotOptimize(hs::conv2d(x, w, std::nullopt, spec));
    }
    state.SetItemsProcessed(state.iterations() * 2 * ch * ch * 9 * hw * hw);
}

void bm_pool2d_max(benchmark::State& state) {
    hs::Rng rng(7);
    hs::NoGradGuard ng;
    const hs::Tensor x = random_tensor({1, 64, 64, 64}, rng);
    for (auto _ : state) {
        benchmark::DoNotOptimize(hs::pool2d(hs::PoolKind::Max, x, 2, 2));
    }
}

void bm_softmax_rows(benchmark::State& state) {
    hs::Rng rng(7);
    hs::NoGradGuard ng;
    const hs::Tensor x = random_tensor({256, 256}, rng, false, -4.0f, 4.0f);
    for (auto _ : state) {
        benchmark::DoNotOptimize(hs::softmax(x, 1));
    }
}

void bm_model_forward(benchmark::State& state) {
    hs::Rng init(1);
    hs::Model model = hs::build_model(hs::ModelConfig::desk(), init);
    hs::Rng rng(7);
    hs::NoGradGuard ng;
    const hs::Tensor x = random_tensor({1, 3, 32, 32}, rng, false, 0.0f, 1.0f);
    for (auto _ : state) {
        benchmark::DoNotOptimize(hs::model_forward(model, x, rng, hs::Mode::Eval));
    }
}

void bm_model_train_step(benchmark::State& state) {
    hs::Rng init(1);
    hs::Model model = hs::build_model(hs::ModelConfig::desk(), init);
    hs::Rng rng(7);
    const hs::Tensor x = random_tensor({1, 3, 32, 32}, rng, false, 0.0f, 1.0f);
    hs::Tensor target = hs::Tensor::zeros({1, 1, 32, 32});
    for (std::int64_t r = 12; r < 20; ++r)
        for (std::int64_t c = 12; c < 20; ++c) target.mutable_data()[r * 32 + c] = 1.0f;
    for (auto _ : state) {
        const hs::Tensor pred = hs::model_forward(model, x, rng, hs::Mode::Train);
        const hs::HybridLoss loss = hs::hybrid_loss(pred, target);
        loss.total.backward();
        benchmark::DoNotOptimize(loss.total.item());
    }
}

void bm_hybrid_loss(benchmark::State& state) {
    hs::Rng rng(7);
    hs::NoGradGuard ng;
    const hs::Tensor pred = random_tensor({8, 1, 64, 64}, rng, false, 0.01f, 0.99f);
    hs::Tensor target = hs::Tensor::zeros({8, 1, 64, 64});
    auto tv = target.mutable_data();
    for (std::size_t i = 0; i < tv.size(); i += 3) tv[i] = 1.0f;
    for (auto _ : state) {
        benchmark::DoNotOptimize(hs::hybrid_loss(pred, target).total);
    }
}

void bm_augment_dataset(benchmark::State& state) {
    const auto base = hs::generate_synthetic(32, 64, 11, 1.0f);
    for (auto _ : state) {
        benchmark::DoNotOptimize(hs::build_augmented_dataset(base, {3.0, 5}));
    }
    state.SetItemsProcessed(state.iterations() * 96);
}

void bm_generate_synthetic(benchmark::State& state) {
    for (auto _ : state) {
        benchmark::DoNotOptimize(hs::generate_synthetic(16, 64, 11, 1.0f));
    }
    state.SetItemsProcessed(state.iterations() * 16);
}

BENCHMARK(bm_matmul)->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);
BENCHMARK(bm_conv2d_3x3)->Args({32, 32})->Args({64, 16})->Unit(benchmark::kMicrosecond);
BENCHMARK(bm_pool2d_max)->Unit(benchmark::kMicrosecond);
BENCHMARK(bm_softmax_rows)->Unit(benchmark::kMicrosecond);
BENCHMARK(bm_model_forward)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_model_train_step)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_hybrid_loss)->Unit(benchmark::kMicrosecond);
BENCHMARK(bm_augment_dataset)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_generate_synthetic)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
