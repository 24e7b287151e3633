#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "common/error.hpp"
#include "common/rng.hpp"
#include "stats/compare.hpp"
#include "stats/metrics.hpp"
#include "stats/tests.hpp"
#include "support/stats_oracles.hpp"

using namespace evseq;

namespace {

using testing::enumerated_p;
using testing::pair_u;

std::vector<double> draw(Rng& rng, std::size_t n, bool ties) {
  std::vector<double> v(n);
  for (auto& x : v) x = ties ? std::floor(uniform(rng, 0, 5)) : uniform(rng, -1, 1);
  return v;
}

}  // namespace

TEST_CASE("exact Mann-Whitney p equals full enumeration for every n, m <= 8") {
  Rng rng(1);
  std::size_t checked = 0;
  for (std::size_t n = 1; n <= 8; ++n)
    for (std::size_t m = 1; m <= 8; ++m)
      for (int ties = 0; ties < 2; ++ties) {
        const auto a = draw(rng, n, ties), b = draw(rng, m, ties);
        const auto r = stats::mann_whitney_u(a, b);
        CHECK(r.exact);
        CHECK(r.u == pair_u(a, b));
        CHECK(std::abs(r.p - enumerated_p(a, b)) < 1e-12);
        ++checked;
      }
  CHECK(checked == 128);
}

TEST_CASE("normal approximation stays within 0.02 of the exact p at n = m = 8") {
  Rng rng(2);
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    // Shifted samples so the cases cover small and large p-values.
    auto a = draw(rng, 8, false), b = draw(rng, 8, false);
    const double shift = uniform(rng, 0, 1.5);
    for (auto& x : a) x += shift;
    const double exact = stats::mann_whitney_u_exact(a, b).p;
    const double approx = stats::mann_whitney_u_normal(a, b).p;
    worst = std::max(worst, std::abs(exact - approx));
  }
  INFO("worst gap " << worst);
  CHECK(worst < 0.02);
}

TEST_CASE("Mann-Whitney hand cases") {
  const std::vector<double> a{1, 2, 3}, b{4, 5, 6};
  const auto r = stats::mann_whitney_u(a, b);
  CHECK(r.u == 0.0);
  CHECK(r.p == doctest::Approx(0.1));  // 2 of 20 splits are this extreme
  const std::vector<double> same{1, 1, 1};
  CHECK(stats::mann_whitney_u(same, same).p == 1.0);
  CHECK_THROWS(stats::mann_whitney_u(std::vector<double>{}, a));
  // Large samples switch to the normal approximation.
  std::vector<double> big(20, 0.0);
  CHECK(!stats::mann_whitney_u(big, a).exact);
}

TEST_CASE("Holm adjustment matches hand-computed triples") {
  auto holm = [](std::vector<double> p) { return stats::holm_bonferroni(p); };
  auto near = [](const std::vector<double>& x, const std::vector<double>& y) {
    REQUIRE(x.size() == y.size());
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(x[i] == doctest::Approx(y[i]).epsilon(1e-12));
  };
  near(holm({0.01, 0.04, 0.03}), {0.03, 0.06, 0.06});
  near(holm({0.01, 0.02, 0.03}), {0.03, 0.04, 0.04});
  near(holm({0.5, 0.001, 0.2}), {0.5, 0.003, 0.4});
  near(holm({0.4, 0.9, 0.3}), {0.9, 0.9, 0.9});
  near(holm({0.01, 0.01, 0.01}), {0.03, 0.03, 0.03});
  CHECK(holm({}).empty());
  CHECK_THROWS(holm({1.5}));
}

TEST_CASE("Holm adjustment is monotone in the raw order and never below raw") {
  Rng rng(3);
  for (int k = 0; k < 500; ++k) {
    std::vector<double> p(1 + k % 12);
    for (auto& v : p) v = uniform01(rng);
    const auto adj = stats::holm_bonferroni(p);
    for (std::size_t i = 0; i < p.size(); ++i) {
      CHECK(adj[i] >= p[i]);
      CHECK(adj[i] <= 1.0);
      for (std::size_t j = 0; j < p.size(); ++j)
        if (p[i] < p[j]) CHECK(adj[i] <= adj[j]);
    }
  }
}

TEST_CASE("ROC AUC equals the pair-counting oracle exactly") {
  Rng rng(4);
  for (int k = 0; k < 1000; ++k) {
    const std::size_t n = 2 + k % 40;
    std::vector<double> s(n);
    std::vector<int> l(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = k % 2 ? std::floor(uniform(rng, 0, 4)) : uniform01(rng);
      l[i] = uniform01(rng) < 0.4 ? 1 : 0;
    }
    l[0] = 1;
    l[1] = 0;
    double good = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (l[i] == 1 && l[j] == 0) {
          pairs += 1;
          good += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
        }
    CHECK(stats::roc_auc(s, l) == good / pairs);
  }
  CHECK_THROWS(stats::roc_auc(std::vector<double>{1, 2}, std::vector<int>{1, 1}));
}

TEST_CASE("mean ROC AUC skips single-class labels") {
  // Three labels; the last is all positive.
  const std::vector<double> s{0.9, 0.1, 0.5, 0.2, 0.8, 0.7, 0.6, 0.3, 0.1};
  const std::vector<int> l{1, 0, 1, 0, 1, 1, 0, 0, 1};
  const auto r = stats::mean_roc_auc(s, l, 3);
  CHECK(r.used_labels == 2);
  CHECK(r.skipped_labels == 1);
  const double auc0 = stats::roc_auc(std::vector<double>{0.9, 0.2, 0.6}, std::vector<int>{1, 0, 0});
  const double auc1 = stats::roc_auc(std::vector<double>{0.1, 0.8, 0.3}, std::vector<int>{0, 1, 0});
  CHECK(r.value == doctest::Approx((auc0 + auc1) / 2.0));
}

TEST_CASE("R2 and accuracy against hand values") {
  CHECK(stats::r2(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2, 3}) == 1.0);
  CHECK(stats::r2(std::vector<double>{2, 2, 2}, std::vector<double>{1, 2, 3}) == 0.0);
  CHECK(stats::r2(std::vector<double>{3, 2, 1}, std::vector<double>{1, 2, 3}) == doctest::Approx(-3.0));
  CHECK_THROWS(stats::r2(std::vector<double>{1, 2}, std::vector<double>{4, 4}));
  CHECK(stats::accuracy(std::vector<int>{0, 1, 2, 2}, std::vector<int>{0, 1, 1, 2}) == 0.75);
}

TEST_CASE("midranks average tied positions") {
  const auto r = stats::midranks(std::vector<double>{10, 20, 10, 30, 20, 20});
  CHECK(r == std::vector<double>{1.5, 4, 1.5, 6, 4, 4});
}

TEST_CASE("Pearson, Spearman and the sign test") {
  const std::vector<double> x{1, 2, 3, 4, 5}, y{2, 4, 6, 8, 11};
  CHECK(stats::pearson(x, x) == doctest::Approx(1.0));
  CHECK(stats::spearman(x, y) == doctest::Approx(1.0));
  CHECK(std::isnan(stats::pearson(x, std::vector<double>{1, 1, 1, 1, 1})));
  // 5 of 5 positive: 2 * 0.5^5.
  CHECK(stats::sign_test(y, x) == doctest::Approx(0.0625));
  CHECK(stats::sign_test(x, x) == 1.0);
  CHECK(std::isnan(stats::stddev(std::vector<double>{1})));
  CHECK(stats::stddev(std::vector<double>{1, 3}) == doctest::Approx(std::sqrt(2.0)));
}

TEST_CASE("rank groups: the best method opens rank 1 and ties join it") {
  std::map<std::string, std::vector<double>> m;
  m["a"] = {0.90, 0.91, 0.92, 0.93, 0.94, 0.95, 0.96, 0.97, 0.98, 0.99};
  m["b"] = {0.905, 0.915, 0.925, 0.935, 0.945, 0.955, 0.965, 0.975, 0.985, 0.995};
  m["c"] = {0.1, 0.11, 0.12, 0.13, 0.14, 0.15, 0.16, 0.17, 0.18, 0.19};
  const auto r = stats::rank_groups(m);
  REQUIRE(r.methods.size() == 3);
  CHECK(r.methods[0].name == "b");
  CHECK(r.methods[0].ranks == std::set<int>{1});
  CHECK(r.methods[1].ranks == std::set<int>{1});
  CHECK(r.methods[2].ranks == std::set<int>{2});
  // Adjusted p-values form a symmetric matrix no smaller than the raw ones.
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      if (i != j) {
        CHECK(r.p_adjusted[i][j] == r.p_adjusted[j][i]);
        CHECK(r.p_adjusted[i][j] >= r.p_raw[i][j]);
      }
  const auto lower = stats::rank_groups(m, false);
  CHECK(lower.methods[0].name == "c");
  const auto csv = stats::report_csv(r);
  CHECK(csv.find("method") != std::string::npos);
  CHECK(stats::report_markdown({r}).find("b") != std::string::npos);
}

TEST_CASE("rank group of a middle method spans both neighbours") {
  // a and c differ; b overlaps both.
  std::map<std::string, std::vector<double>> m;
  Rng rng(9);
  for (int i = 0; i < 20; ++i) {
    m["a"].push_back(1.0 + 0.1 * uniform01(rng));
    m["b"].push_back(0.5 + 0.6 * uniform01(rng));
    m["c"].push_back(0.4 + 0.1 * uniform01(rng));
  }
  const auto r = stats::rank_groups(m);
  REQUIRE(r.methods.size() == 3);
  CHECK(r.methods[0].name == "a");
  CHECK(r.methods[0].ranks == std::set<int>{1});
  CHECK(r.methods[2].ranks.count(1) == 0);
}

TEST_CASE("run records round-trip through JSON lines") {
  stats::RunRecord r;
  r.method = "gru";
  r.dataset = "pendulum";
  r.seed = 123456789012345ULL;
  r.split_metrics = {{"train", 0.9}, {"test", 0.123456789012345678}};
  r.tag = "final-eval";
  const auto back = stats::RunRecord::from_json(r.to_json());
  CHECK(back.method == r.method);
  CHECK(back.seed == r.seed);
  CHECK(back.split_metrics == r.split_metrics);
  CHECK(back.tag == r.tag);
  r.failed = true;
  r.error = "nan loss";
  r.split_metrics.clear();
  const auto f = stats::RunRecord::from_json(r.to_json());
  CHECK(f.failed);
  CHECK(f.error == "nan loss");
  CHECK_THROWS(stats::RunRecord::from_json("{"));
}

TEST_CASE("subset correlation pairs splits across records") {
  std::vector<stats::RunRecord> recs;
  for (int i = 0; i < 6; ++i) {
    stats::RunRecord r;
    r.method = "m" + std::to_string(i);
    const double v = 0.1 * i;
    r.split_metrics = {{"train", v}, {"train-val", v * 2}, {"hpo-val", v}, {"test", -v}};
    recs.push_back(r);
  }
  const auto rows = stats::subset_correlation(recs);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].split_a == "train");
  CHECK(rows[0].split_b == "train-val");
  CHECK(rows[0].n == 6);
  CHECK(*rows[0].pearson == doctest::Approx(1.0));
  CHECK(*rows[2].spearman == doctest::Approx(-1.0));
}

TEST_CASE("small worked examples") {
  CHECK(stats::roc_auc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, std::vector<int>{0, 0, 1, 1}) == 0.75);
  CHECK(stats::r2(std::vector<double>{1, 2, 2}, std::vector<double>{1, 2, 3}) == doctest::Approx(0.5));
  const auto mw = stats::mann_whitney_u(std::vector<double>{1, 2}, std::vector<double>{3, 4});
  CHECK(mw.u == 0.0);
  CHECK(mw.exact);
  CHECK(mw.p == doctest::Approx(1.0 / 3.0));  // 2 of 6 splits
  CHECK(stats::holm_bonferroni(std::vector<double>{0.5, 0.5, 0.5}) == std::vector<double>{1, 1, 1});
  // Centred: dx = -2..2, dy = -2, 0, 1, 0, 1; r = 6 / sqrt(10 * 6).
  CHECK(stats::pearson(std::vector<double>{1, 2, 3, 4, 5}, std::vector<double>{2, 4, 5, 4, 5}) ==
        doctest::Approx(6.0 / std::sqrt(60.0)));
}

TEST_CASE("rank groups on well separated and near-identical methods") {
  Rng rng(12);
  std::normal_distribution<double> z(0.0, 1.0);
  std::map<std::string, std::vector<double>> two;
  for (int i = 0; i < 20; ++i) {
    two["low"].push_back(z(rng));
    two["high"].push_back(10.0 + z(rng));
  }
  const auto r2g = stats::rank_groups(two);
  CHECK(r2g.methods[0].name == "high");
  CHECK(r2g.methods[0].ranks == std::set<int>{1});
  CHECK(r2g.methods[1].ranks == std::set<int>{2});

  std::map<std::string, std::vector<double>> three;
  for (int i = 0; i < 20; ++i) {
    const double shared = z(rng);
    three["A"].push_back(10.0 + z(rng));
    three["B"].push_back(shared);
    three["C"].push_back(shared + 1e-3 * z(rng));
  }
  const auto r3 = stats::rank_groups(three);
  CHECK(r3.methods[0].name == "A");
  CHECK(r3.methods[0].ranks == std::set<int>{1});
  CHECK(r3.methods[1].ranks == std::set<int>{2});
  CHECK(r3.methods[2].ranks == std::set<int>{2});
}
