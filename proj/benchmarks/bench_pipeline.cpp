#include <benchmark/benchmark.h>

#include <filesystem>

#include "bodycomp/baselines.hpp"
#include "bodycomp/dataset.hpp"
#include "bodycomp/preprocess.hpp"
#include "bodycomp/rng.hpp"

using namespace bodycomp;

namespace {

void BM_generate_subjects(benchmark::State& state) {
  const auto dir = std::filesystem::temp_directory_path() / "bodycomp_bench_gen";
  GeneratorConfig cfg;
  cfg.n_subjects = static_cast<int>(state.range(0));
  cfg.image_side = 128;
  for (auto _ : state) {
    benchmark::DoNotOptimize(generate_synthetic(cfg, dir));
  }
  state.SetItemsProcessed(state.iterations() * cfg.n_subjects);
  std::filesystem::remove_all(dir);
}
BENCHMARK(BM_generate_subjects)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_resize_256_to_128(benchmark::State& state) {
  Rng rng(3);
  Image img = Image::make(256, 256, 1);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  for (auto _ : state) {
    benchmark::DoNotOptimize(resize(img, 128, 128));
  }
}
BENCHMARK(BM_resize_256_to_128)->Unit(benchmark::kMicrosecond);

void BM_fit_tree(benchmark::State& state) {
  Rng rng(4);
  FeatureMatrix m;
  m.cols = 4;
  for (int i = 0; i < 1000; ++i) {
    for (int c = 0; c < 4; ++c) m.x.push_back(rng.normal());
    m.y.push_back(rng.normal(25, 6));
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(fit_tree(m, 8, 5));
  }
}
BENCHMARK(BM_fit_tree)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
