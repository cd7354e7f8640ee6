#include <benchmark/benchmark.h>

#include <string>

#include "editprobe/metrics.hpp"

namespace {

const std::string kOutput =
    "The mother tongue of Danielle Darrieux is English, not French. She grew up in Bordeaux "
    "and later moved to Paris, where she worked in film for most of her life.";

void BM_Normalize(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(editprobe::normalize(kOutput));
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * kOutput.size()));
}
BENCHMARK(BM_Normalize);

void BM_CheckSuccess(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(editprobe::check_success(kOutput, "English"));
}
BENCHMARK(BM_CheckSuccess);

void BM_CheckReversion(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(editprobe::check_reversion(kOutput, "French"));
}
BENCHMARK(BM_CheckReversion);

}  // namespace

BENCHMARK_MAIN();
