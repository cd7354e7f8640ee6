#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "editprobe/popularity.hpp"

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::lognormal_distribution<double> d(5.0, 2.0);
  std::vector<double> out(n);
  for (auto& v : out) v = d(rng);
  return out;
}

void BM_Spearman(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto xs = random_values(n, 1);
  const auto ys = random_values(n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(editprobe::spearman(xs, ys));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Spearman)->RangeMultiplier(10)->Range(100, 100000)->Complexity();

void BM_QuantileBuckets(benchmark::State& state) {
  const auto values = random_values(static_cast<std::size_t>(state.range(0)), 3);
  std::vector<editprobe::Scored> items;
  for (std::size_t i = 0; i < values.size(); ++i) items.push_back({std::to_string(i), values[i]});
  for (auto _ : state) {
    benchmark::DoNotOptimize(editprobe::bucketize(items, 5, editprobe::BucketStrategy::Quantile));
  }
}
BENCHMARK(BM_QuantileBuckets)->Arg(2000)->Arg(20000);

}  // namespace
