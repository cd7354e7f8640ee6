#include <benchmark/benchmark.h>

#include <filesystem>
#include <string>
#include <unistd.h>

#include "editprobe/cache.hpp"

namespace {

namespace fs = std::filesystem;

void BM_CacheHit(benchmark::State& state) {
  const auto dir = fs::temp_directory_path() / ("editprobe-bench-" + std::to_string(::getpid()));
  {
    editprobe::ResponseCache cache(dir);
    const auto key = editprobe::ResponseCache::make_key("bench", "GET /page");
    const std::string payload(static_cast<std::size_t>(state.range(0)), 'x');
    cache.put(key, payload);
    for (auto _ : state) {
      benchmark::DoNotOptimize(cache.get_or_fetch(key, [&] { return payload; }));
    }
  }
  fs::remove_all(dir);
}
BENCHMARK(BM_CacheHit)->Arg(1 << 10)->Arg(1 << 16);

void BM_CacheKey(benchmark::State& state) {
  const std::string request(2048, 'q');
  for (auto _ : state) benchmark::DoNotOptimize(editprobe::ResponseCache::make_key("sparql", request));
}
BENCHMARK(BM_CacheKey);

}  // namespace
