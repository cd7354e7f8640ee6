#pragma once

// Exhaustive two-hop path counting over a triple set: every ordered pair of
// statements (s, p1, m), (m, p2, o) with m distinct from both ends.

#include <array>
#include <set>
#include <string>
#include <vector>

namespace oracle {

using Statement = std::array<std::string, 3>;

inline long long edge_count(const std::vector<Statement>& triples, const std::string& s) {
  const std::set<Statement> unique(triples.begin(), triples.end());
  long long n = 0;
  for (const auto& t : unique) n += t[0] == s;
  return n;
}

inline long long paths_forward(const std::vector<Statement>& triples, const std::string& s,
                               const std::string& o) {
  const std::set<Statement> unique(triples.begin(), triples.end());
  long long n = 0;
  for (const auto& a : unique) {
    for (const auto& b : unique) {
      if (a[0] == s && a[2] == b[0] && b[2] == o && a[2] != s && a[2] != o) ++n;
    }
  }
  return n;
}

inline long long paths_bidirectional(const std::vector<Statement>& triples, const std::string& s,
                                     const std::string& o) {
  return paths_forward(triples, s, o) + paths_forward(triples, o, s);
}

}  // namespace oracle
