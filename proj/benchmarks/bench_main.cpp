#include <benchmark/benchmark.h>

#include "biskip/data.hpp"
#include "biskip/image.hpp"
#include "biskip/kernels.hpp"
#include "biskip/metrics.hpp"
#include "biskip/model.hpp"
#include "biskip/random.hpp"

using namespace biskip;

namespace {

Tensor random_tensor(const Shape& shape, std::uint64_t seed) {
    Tensor t(shape);
    Rng rng(seed);
    for (double& v : t.values()) v = rng.uniform(-1.0, 1.0);
    return t;
}

void BM_Conv2d(benchmark::State& state) {
    const int c = static_cast<int>(state.range(0));
    const int size = static_cast<int>(state.range(1));
    const Tensor x = random_tensor({c, size, size}, 1);
    const Tensor w = random_tensor({c, c, 3, 3}, 2);
    const kernels::ConvGeometry g{3, 1, 1};
    for (auto _ : state) benchmark::DoNotOptimize(kernels::conv2d(x, w, nullptr, g));
    state.SetItemsProcessed(state.iterations() * int64_t{c} * c * 9 * size * size);
}
BENCHMARK(BM_Conv2d)->Args({32, 64})->Args({64, 64})->Args({128, 32})->Unit(benchmark::kMillisecond);

void BM_GeneratorForward(benchmark::State& state) {
    GeneratorSpec spec;
    spec.variant = static_cast<ModelVariant>(state.range(0));
    const int size = static_cast<int>(state.range(1));
    const Generator g = build_generator(spec, 0);
    const Tensor x = random_tensor({3, size, size}, 3);
    for (auto _ : state) benchmark::DoNotOptimize(g.forward(x));
    state.SetLabel(std::string(to_string(spec.variant)));
}
BENCHMARK(BM_GeneratorForward)
    ->Args({static_cast<int>(ModelVariant::S), 64})
    ->Args({static_cast<int>(ModelVariant::BS), 64})
    ->Args({static_cast<int>(ModelVariant::BS), 128})
    ->Unit(benchmark::kMillisecond);

void BM_Ssim(benchmark::State& state) {
    const int size = static_cast<int>(state.range(0));
    const ByteImage a = to_bytes(synthetic_scene(1, size, size));
    const ByteImage b = to_bytes(synthetic_scene(2, size, size));
    for (auto _ : state) benchmark::DoNotOptimize(ssim(a, b));
}
BENCHMARK(BM_Ssim)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_MsSsim(benchmark::State& state) {
    const ByteImage a = to_bytes(synthetic_scene(1, 256, 256));
    const ByteImage b = to_bytes(synthetic_scene(2, 256, 256));
    for (auto _ : state) benchmark::DoNotOptimize(msssim(a, b));
}
BENCHMARK(BM_MsSsim)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
