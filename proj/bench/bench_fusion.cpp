// Serial reference vs OpenMP kernels for the fusion block, plus prompt rendering.
// Run with OMP_NUM_THREADS set to compare thread counts.

#include <benchmark/benchmark.h>

#include <random>

#include "groundcount/fusion.hpp"
#include "groundcount/grounding.hpp"

namespace {

using namespace groundcount;
using namespace groundcount::fusion;
using groundcount::grounding::render_prompt;

struct Problem {
    FusionInputs in;
    FusionParams params;
    Matrix upstream;
};

Problem make_problem(Eigen::Index patches) {
    const auto dims = FusionDims::with_default_bottleneck(256, 128, 64);
    std::mt19937_64 rng(42);
    std::normal_distribution<double> nd;
    auto fill = [&](Eigen::Index r, Eigen::Index c) {
        Matrix m(r, c);
        for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = nd(rng);
        return m;
    };
    return {{fill(patches, dims.d_vit), fill(patches, dims.d_cnn), fill(dims.d_cnn, 1)},
            FusionParams::init(dims, 7),
            fill(patches, dims.d_out)};
}

template <FusionOutput (*Forward)(const FusionInputs&, const FusionParams&)>
void BM_Forward(benchmark::State& state) {
    const auto pr = make_problem(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(Forward(pr.in, pr.params));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <FusionOutput (*Forward)(const FusionInputs&, const FusionParams&),
          FusionGrads (*Backward)(const FusionInputs&, const FusionParams&, const FusionOutput&,
                                  const Matrix&)>
void BM_Backward(benchmark::State& state) {
    const auto pr = make_problem(state.range(0));
    const auto fwd = Forward(pr.in, pr.params);
    for (auto _ : state) benchmark::DoNotOptimize(Backward(pr.in, pr.params, fwd, pr.upstream));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

BENCHMARK(BM_Forward<fuse_forward_serial>)->Name("forward/serial")->Arg(64)->Arg(576)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Forward<fuse_forward>)->Name("forward/omp")->Arg(64)->Arg(576)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Backward<fuse_forward_serial, fuse_backward_serial>)
    ->Name("backward/serial")->Arg(64)->Arg(576)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Backward<fuse_forward, fuse_backward>)
    ->Name("backward/omp")->Arg(64)->Arg(576)->Unit(benchmark::kMillisecond);

void BM_RenderPrompt(benchmark::State& state) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    static const char* kCats[] = {"person", "dog", "bowl", "cup", "car"};
    DetectionSet set{"bench.jpg", 640, 480, {}};
    for (int i = 0; i < state.range(0); ++i) {
        const double x = u(rng) * 600, y = u(rng) * 440;
        set.detections.push_back({kCats[i % 5], u(rng), {x, y, x + 40, y + 40}});
    }
    for (auto _ : state) benchmark::DoNotOptimize(render_prompt(set));
    state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_RenderPrompt)->Name("render_prompt")->Arg(10)->Arg(100);

}  // namespace

BENCHMARK_MAIN();
