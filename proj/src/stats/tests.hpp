#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace evseq::stats {

struct MannWhitneyResult {
  double u = 0.0;  // U statistic of sample a: pairs a > b plus half the ties
  double p = 1.0;  // two-sided
  bool exact = false;
};

inline constexpr std::size_t kExactLimit = 8;

// Exact permutation p-value (full enumeration of group labelings, tie-aware)
// when both samples have at most kExactLimit values; otherwise the normal
// approximation with tie and continuity corrections.
MannWhitneyResult mann_whitney_u(std::span<const double> a, std::span<const double> b);
MannWhitneyResult mann_whitney_u_normal(std::span<const double> a, std::span<const double> b);
MannWhitneyResult mann_whitney_u_exact(std::span<const double> a, std::span<const double> b);

// Holm step-down adjustment, returned in input order.
std::vector<double> holm_bonferroni(std::span<const double> p_values);

double mean(std::span<const double> v);
// Sample standard deviation (n - 1); NaN when fewer than two values.
double stddev(std::span<const double> v);

double pearson(std::span<const double> x, std::span<const double> y);   // NaN on zero variance
double spearman(std::span<const double> x, std::span<const double> y);  // NaN on zero variance

// Two-sided sign test on paired differences (zeros dropped); 1 when all tie.
double sign_test(std::span<const double> a, std::span<const double> b);

}  // namespace evseq::stats
