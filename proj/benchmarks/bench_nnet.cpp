#include <benchmark/benchmark.h>

#include "bodycomp/nnet.hpp"
#include "bodycomp/rng.hpp"

using namespace bodycomp;

namespace {

PreprocessedSample random_sample(int side, Rng& rng) {
  PreprocessedSample s;
  s.full_face = Image::make(side, side, 1);
  for (auto& p : s.full_face.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  for (auto& q : s.quarters) {
    q = Image::make(side, side, 1);
    for (auto& p : q.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  }
  s.structured.assign(7, 0.5);
  s.pbf = 25;
  s.smm = 26;
  return s;
}

ArchitectureSpec arch_for_side(int side) {
  ArchitectureSpec a;
  a.image_side = side;
  a.conv_channels = side >= 128 ? std::vector<int>{8, 16, 32}
                                : std::vector<int>{4, 8};
  a.structured_widths = {16, 16};
  a.trunk_widths = {64, 32};
  return a;
}

void BM_forward(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  NetworkModel m = init_model(arch_for_side(side), 7);
  m.target_stats = {25, 8, 26, 6};
  Rng rng(1);
  const auto sample = random_sample(side, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(forward(m, sample));
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_forward)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_backward_batch8(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  NetworkModel m = init_model(arch_for_side(side), 7);
  m.target_stats = {25, 8, 26, 6};
  Rng rng(2);
  std::vector<PreprocessedSample> batch;
  for (int i = 0; i < 8; ++i) batch.push_back(random_sample(side, rng));
  for (auto _ : state) {
    benchmark::DoNotOptimize(backward(m, batch, {1, 1}));
  }
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_backward_batch8)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace
