#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

namespace evseq::testing {

// U of `a` by pair counting: wins plus half of the ties.
inline double pair_u(const std::vector<double>& a, const std::vector<double>& b) {
  double u = 0.0;
  for (double x : a)
    for (double y : b) u += x > y ? 1.0 : x == y ? 0.5 : 0.0;
  return u;
}

// Two-sided exact p by enumerating every split of the pooled values into
// groups of sizes |a| and |b|.
inline double enumerated_p(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> pool(a);
  pool.insert(pool.end(), b.begin(), b.end());
  const double centre = a.size() * b.size() / 2.0, observed = std::abs(pair_u(a, b) - centre);
  std::size_t extreme = 0, total = 0;
  std::vector<double> ga, gb;
  std::function<void(std::size_t)> rec = [&](std::size_t i) {
    if (i == pool.size()) {
      ++total;
      if (std::abs(pair_u(ga, gb) - centre) >= observed) ++extreme;
      return;
    }
    if (ga.size() < a.size()) {
      ga.push_back(pool[i]);
      rec(i + 1);
      ga.pop_back();
    }
    if (gb.size() < b.size()) {
      gb.push_back(pool[i]);
      rec(i + 1);
      gb.pop_back();
    }
  };
  rec(0);
  return static_cast<double>(extreme) / static_cast<double>(total);
}

}  // namespace evseq::testing
