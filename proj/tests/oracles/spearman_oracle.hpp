#pragma once

// Textbook Spearman for distinct values: 1 - 6 * sum(d^2) / (n (n^2 - 1)).

#include <algorithm>
#include <numeric>
#include <vector>

namespace oracle {

inline std::vector<long long> ranks_distinct(const std::vector<double>& xs) {
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return xs[a] < xs[b]; });
  std::vector<long long> r(xs.size());
  for (std::size_t i = 0; i < order.size(); ++i) r[order[i]] = static_cast<long long>(i) + 1;
  return r;
}

inline double spearman_d2(const std::vector<double>& xs, const std::vector<double>& ys) {
  const auto rx = ranks_distinct(xs);
  const auto ry = ranks_distinct(ys);
  long long d2 = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) d2 += (rx[i] - ry[i]) * (rx[i] - ry[i]);
  const auto n = static_cast<long long>(xs.size());
  return 1.0 - 6.0 * static_cast<double>(d2) / static_cast<double>(n * (n * n - 1));
}

}  // namespace oracle
