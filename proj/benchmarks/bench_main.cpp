#include <benchmark/benchmark.h>

#include <random>

#include "meshseg/engine.hpp"
#include "meshseg/model.hpp"
#include "meshseg/postprocess.hpp"
#include "meshseg/tiling.hpp"

using namespace meshseg;

namespace {

// The second block of a two-block stack is a 5->5 channel 3^3 conv of the
// given dilation with padding == dilation.
ModelSpec conv_layer(int dilation) {
  MeshNetConfig cfg;
  cfg.dilations = {1, dilation};
  cfg.batchnorm = false;
  ModelSpec m = build_meshnet(cfg);
  initialize_weights(m, 1);
  return m;
}

FeatureMap random_map(int channels, int edge) {
  FeatureMap fm(channels, {edge, edge, edge});
  std::mt19937 rng(3);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (float& v : fm.data) v = u(rng);
  return fm;
}

const LayerSpec& middle_conv(const ModelSpec& m) {
  for (const auto& l : m.layers)
    if (l.kind == LayerKind::Conv3d && l.in_channels == 5 && l.out_channels == 5) return l;
  return m.layers.front();
}

void BM_ConvRef(benchmark::State& state) {
  const ModelSpec m = conv_layer(static_cast<int>(state.range(1)));
  const FeatureMap in = random_map(5, static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(conv3d_ref(in, middle_conv(m), m.weights));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(in.voxels()));
}

void BM_ConvFast(benchmark::State& state) {
  const ModelSpec m = conv_layer(static_cast<int>(state.range(1)));
  const FeatureMap in = random_map(5, static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(conv3d_fast(in, middle_conv(m), m.weights));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(in.voxels()));
}

void BM_GwmLightFullVolume(benchmark::State& state) {
  ModelSpec m = build_meshnet(gwm_meshnet_config());
  initialize_weights(m, 2);
  const FeatureMap in = random_map(1, static_cast<int>(state.range(0)));
  for (auto _ : state) {
    MemoryBudget budget;
    benchmark::DoNotOptimize(run_model(m, in, budget));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(in.voxels()));
}

void BM_GwmLightTiled(benchmark::State& state) {
  ModelSpec m = build_meshnet(gwm_meshnet_config());
  initialize_weights(m, 2);
  const FeatureMap in = random_map(1, 64);
  const SubvolumeGrid grid = divide(in.extents, 32, static_cast<int>(state.range(0)));
  for (auto _ : state) {
    MemoryBudget budget;
    benchmark::DoNotOptimize(infer_tiled(m, in, grid, budget));
  }
}

void BM_LabelComponents(benchmark::State& state) {
  const int edge = static_cast<int>(state.range(0));
  Volume3D v({edge, edge, edge}, {1, 1, 1}, Affine::identity());
  std::mt19937 rng(4);
  std::bernoulli_distribution fg(0.3);
  for (float& x : v.data()) x = fg(rng) ? 1.0f : 0.0f;
  const Connectivity conn = state.range(1) == 6 ? Connectivity::Six : Connectivity::TwentySix;
  for (auto _ : state) benchmark::DoNotOptimize(label_components(v, conn));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(v.size()));
}

}  // namespace

BENCHMARK(BM_ConvRef)->Args({32, 1})->Args({32, 8})->Args({64, 1})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvFast)->Args({32, 1})->Args({32, 8})->Args({64, 1})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GwmLightFullVolume)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GwmLightTiled)->Arg(0)->Arg(8)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_LabelComponents)->Args({64, 6})->Args({64, 26})->Args({128, 26})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
