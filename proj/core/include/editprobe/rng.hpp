#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace editprobe {

/// Child seed for a named stage or item: the first 8 bytes (big-endian) of
/// SHA-256("<parent>:<label>"), with `parent` printed in decimal.
std::uint64_t derive_seed(std::uint64_t parent, std::string_view label);

/// Deterministic random source. The standard distributions are
/// implementation-defined, so draws are computed here from raw mt19937_64
/// output to keep artifacts byte-identical across toolchains.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform integer in [lo, hi] (inclusive), unbiased.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

  /// Uniform double in [0, 1) with 53 bits of precision.
  double uniform01();

  /// Index drawn according to non-negative `weights` (need not sum to 1).
  std::size_t weighted_index(std::span<const double> weights);

 private:
  std::mt19937_64 engine_;
};

}  // namespace editprobe
