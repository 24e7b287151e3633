#include "stats/tests.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>

#include "common/error.hpp"
#include "stats/metrics.hpp"

namespace evseq::stats {
namespace {

// 2U for the members of `mask` given doubled midranks of the pool.
long twice_u(const std::vector<long>& twice_ranks, std::uint32_t mask, long n) {
  long s = 0;
  for (std::uint32_t m = mask; m; m &= m - 1) s += twice_ranks[std::countr_zero(m)];
  return s - n * (n + 1);
}

std::vector<double> pooled(std::span<const double> a, std::span<const double> b) {
  std::vector<double> all(a.begin(), a.end());
  all.insert(all.end(), b.begin(), b.end());
  return all;
}

}  // namespace

MannWhitneyResult mann_whitney_u_exact(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw Error("mann_whitney_u: samples must be non-empty");
  if (a.size() > kExactLimit || b.size() > kExactLimit) throw Error("mann_whitney_u: sample too large for enumeration");
  const long n = static_cast<long>(a.size()), m = static_cast<long>(b.size());
  const auto ranks = midranks(pooled(a, b));
  std::vector<long> twice(ranks.size());
  for (std::size_t i = 0; i < ranks.size(); ++i) twice[i] = std::lround(2.0 * ranks[i]);
  const std::uint32_t observed = (1u << n) - 1;  // the first n pooled values belong to a
  const long u_obs = twice_u(twice, observed, n);
  const long dev_obs = std::labs(u_obs - n * m);
  const std::uint32_t limit = 1u << (n + m);
  long extreme = 0, total = 0;
  for (std::uint32_t mask = 0; mask < limit; ++mask) {
    if (std::popcount(mask) != n) continue;
    ++total;
    if (std::labs(twice_u(twice, mask, n) - n * m) >= dev_obs) ++extreme;
  }
  MannWhitneyResult r;
  r.u = static_cast<double>(u_obs) / 2.0;
  r.p = std::min(1.0, static_cast<double>(extreme) / static_cast<double>(total));
  r.exact = true;
  return r;
}

MannWhitneyResult mann_whitney_u_normal(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw Error("mann_whitney_u: samples must be non-empty");
  const double n = static_cast<double>(a.size()), m = static_cast<double>(b.size());
  const auto all = pooled(a, b);
  const auto ranks = midranks(all);
  double rank_a = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) rank_a += ranks[i];
  MannWhitneyResult r;
  r.u = rank_a - n * (n + 1) / 2.0;
  const double N = n + m;
  auto sorted = all;
  std::sort(sorted.begin(), sorted.end());
  double tie_term = 0.0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }
  const double var = n * m / 12.0 * ((N + 1.0) - tie_term / (N * (N - 1.0)));
  if (!(var > 0.0)) {
    r.p = 1.0;
    return r;
  }
  const double dev = std::max(0.0, std::abs(r.u - n * m / 2.0) - 0.5);
  r.p = std::min(1.0, std::erfc(dev / std::sqrt(var) / std::sqrt(2.0)));
  return r;
}

MannWhitneyResult mann_whitney_u(std::span<const double> a, std::span<const double> b) {
  if (a.size() <= kExactLimit && b.size() <= kExactLimit) return mann_whitney_u_exact(a, b);
  return mann_whitney_u_normal(a, b);
}

std::vector<double> holm_bonferroni(std::span<const double> p) {
  const std::size_t m = p.size();
  for (double v : p)
    if (!(v >= 0.0 && v <= 1.0)) throw Error("holm_bonferroni: p-values must lie in [0, 1]");
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto x, auto y) { return p[x] < p[y]; });
  std::vector<double> adj(m);
  double running = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double v = std::min(1.0, static_cast<double>(m - i) * p[order[i]]);
    running = std::max(running, v);
    adj[order[i]] = running;
  }
  return adj;
}

double mean(std::span<const double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double stddev(std::span<const double> v) {
  if (v.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  const double mu = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - mu) * (x - mu);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw Error("pearson: need two equal-length samples");
  const double mx = mean(x), my = mean(y);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sxy / std::sqrt(sxx * syy);
}

double spearman(std::span<const double> x, std::span<const double> y) {
  auto rx = midranks(x), ry = midranks(y);
  return pearson(rx, ry);
}

double sign_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error("sign_test: samples must be paired");
  int pos = 0, neg = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] > b[i]) ++pos;
    else if (a[i] < b[i]) ++neg;
  }
  const int n = pos + neg;
  if (n == 0) return 1.0;
  const int k = std::min(pos, neg);
  // P(X <= k) for X ~ Bin(n, 1/2), doubled.
  double tail = 0.0;
  for (int i = 0; i <= k; ++i) tail += std::exp(std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0) - n * std::log(2.0));
  return std::min(1.0, 2.0 * tail);
}

}  // namespace evseq::stats
