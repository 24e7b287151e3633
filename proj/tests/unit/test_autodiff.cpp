#include <doctest.h>

#include <cmath>
#include <functional>

#include "ad/adam.hpp"
#include "common/error.hpp"
#include "support/op_cases.hpp"

using namespace evseq;
using evseq::testing::random_tensor;

TEST_CASE("every op matches central differences on 100 random instances") {
  for (const auto& c : testing::op_cases()) {
    Rng rng(derive_seed(11, {std::hash<std::string>{}(c.name)}));
    double worst = 0.0;
    for (int k = 0; k < 100; ++k) worst = std::max(worst, c.run(rng));
    INFO(c.name << " worst relative error " << worst);
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("matmul forward against hand values") {
  ad::Tape t;
  auto a = t.leaf(ad::Tensor::from_rows({{1, 2}, {3, 4}}));
  auto b = t.leaf(ad::Tensor::from_rows({{5, 6}, {7, 8}}));
  auto c = ad::matmul(a, b).value();
  CHECK(c(0, 0) == 19);
  CHECK(c(0, 1) == 22);
  CHECK(c(1, 0) == 43);
  CHECK(c(1, 1) == 50);
}

TEST_CASE("shape mismatches name the op") {
  ad::Tape t;
  auto a = t.leaf(ad::Tensor::matrix(2, 3));
  auto b = t.leaf(ad::Tensor::matrix(2, 3));
  CHECK_THROWS_WITH_AS(ad::matmul(a, b), doctest::Contains("matmul"), ShapeError);
  CHECK_THROWS_AS(ad::add(a, t.leaf(ad::Tensor::matrix(3, 2))), ShapeError);
  CHECK_THROWS_AS(ad::gru_sequence(a, a, a, a, a, {1}), ShapeError);
}

TEST_CASE("backward needs a scalar root") {
  ad::Tape t;
  auto a = t.leaf(ad::Tensor::matrix(2, 2, 1.0));
  CHECK_THROWS_AS(t.backward(a), ShapeError);
}

TEST_CASE("softmax rows sum to one and are shift invariant") {
  Rng rng(3);
  ad::Tape t;
  auto x = random_tensor(4, 5, rng, -5, 5);
  auto y = ad::softmax_rows(t.leaf(x)).value();
  for (auto& v : x.vec()) v += 1000.0;
  auto z = ad::softmax_rows(t.leaf(x)).value();
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 5; ++c) {
      s += y(r, c);
      CHECK(std::abs(y(r, c) - z(r, c)) < 1e-12);
    }
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("batchnorm in training mode standardises columns") {
  Rng rng(5);
  ad::Tape t;
  ad::Parameter rm, rv;
  rm.value = ad::Tensor::matrix(1, 3, 0.0);
  rv.value = ad::Tensor::matrix(1, 3, 1.0);
  auto x = random_tensor(50, 3, rng, -4, 9);
  auto y = ad::batchnorm(t.leaf(x), t.leaf(ad::Tensor::matrix(1, 3, 1.0)), t.leaf(ad::Tensor::matrix(1, 3, 0.0)), rm,
                         rv, true)
               .value();
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0.0, v = 0.0;
    for (std::size_t r = 0; r < 50; ++r) m += y(r, c) / 50.0;
    for (std::size_t r = 0; r < 50; ++r) v += (y(r, c) - m) * (y(r, c) - m) / 50.0;
    CHECK(std::abs(m) < 1e-6);
    CHECK(std::abs(v - 1.0) < 1e-6);
  }
  // Running statistics moved toward the batch statistics.
  CHECK(rm.value[0] != 0.0);
}

// Step-by-step GRU written independently of the fused op.
static std::vector<double> naive_gru(const ad::Tensor& x, const ad::Tensor& wi, const ad::Tensor& wh,
                                     const ad::Tensor& bi, const ad::Tensor& bh,
                                     const std::vector<std::size_t>& lengths) {
  const std::size_t B = lengths.size(), T = x.rows() / B, d = x.cols(), H = wh.rows();
  std::vector<double> out(T * B * H);
  std::vector<std::vector<double>> h(B, std::vector<double>(H, 0.0));
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t b = 0; b < B; ++b) {
      if (t < lengths[b]) {
        std::vector<double> next(H);
        for (std::size_t j = 0; j < H; ++j) {
          double gi[3], gh[3];
          for (int g = 0; g < 3; ++g) {
            gi[g] = bi[g * H + j];
            gh[g] = bh[g * H + j];
            for (std::size_t k = 0; k < d; ++k) gi[g] += x(t * B + b, k) * wi(k, g * H + j);
            for (std::size_t k = 0; k < H; ++k) gh[g] += h[b][k] * wh(k, g * H + j);
          }
          const double r = sig(gi[0] + gh[0]), z = sig(gi[1] + gh[1]);
          const double n = std::tanh(gi[2] + r * gh[2]);
          next[j] = (1 - z) * n + z * h[b][j];
        }
        h[b] = next;
      }
      for (std::size_t j = 0; j < H; ++j) out[(t * B + b) * H + j] = h[b][j];
    }
  }
  return out;
}

TEST_CASE("gru_sequence forward matches a step-by-step recurrence") {
  Rng rng(8);
  for (int k = 0; k < 20; ++k) {
    const std::size_t B = testing::dim(rng, 1, 4), T = testing::dim(rng, 1, 5), d = testing::dim(rng, 1, 3),
                      H = testing::dim(rng, 1, 4);
    std::vector<std::size_t> lengths(B);
    for (auto& l : lengths) l = testing::dim(rng, 1, T);
    auto x = random_tensor(T * B, d, rng), wi = random_tensor(d, 3 * H, rng), wh = random_tensor(H, 3 * H, rng),
         bi = random_tensor(1, 3 * H, rng), bh = random_tensor(1, 3 * H, rng);
    ad::Tape t;
    auto y = ad::gru_sequence(t.leaf(x), t.leaf(wi), t.leaf(wh), t.leaf(bi), t.leaf(bh), lengths).value();
    auto ref = naive_gru(x, wi, wh, bi, bh, lengths);
    REQUIRE(y.size() == ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(y[i] - ref[i]) < 1e-12);
  }
}

TEST_CASE("gru_sequence rejects zero or overlong lengths") {
  ad::Tape t;
  auto x = t.leaf(ad::Tensor::matrix(4, 1));
  auto wi = t.leaf(ad::Tensor::matrix(1, 3)), wh = t.leaf(ad::Tensor::matrix(1, 3));
  auto b = t.leaf(ad::Tensor::matrix(1, 3));
  CHECK_THROWS_AS(ad::gru_sequence(x, wi, wh, b, b, {0, 2}), ShapeError);
  CHECK_THROWS_AS(ad::gru_sequence(x, wi, wh, b, b, {3, 2}), ShapeError);
}

TEST_CASE("segment_attention weights each segment separately") {
  // One query, two segments; equal keys give uniform weights.
  ad::Tape t;
  auto q = t.leaf(ad::Tensor::from_rows({{1.0}}));
  auto k = t.leaf(ad::Tensor::from_rows({{0.0}, {0.0}, {0.0}}));
  auto v = t.leaf(ad::Tensor::from_rows({{1.0}, {3.0}, {10.0}}));
  auto y = ad::segment_attention(q, k, v, {0, 2, 3}).value();
  CHECK(y(0, 0) == doctest::Approx(2.0));
  CHECK(y(1, 0) == doctest::Approx(10.0));
  CHECK_THROWS_AS(ad::segment_attention(q, k, v, {0, 0, 3}), ShapeError);
}

TEST_CASE("adam step against the bias-corrected formula") {
  ad::ParameterStore ps;
  auto& p = ps.add("w", ad::Tensor::from_rows({{1.0, -2.0}}));
  p.grad = ad::Tensor::from_rows({{0.5, -0.25}});
  ad::AdamState st;
  ad::AdamConfig cfg;
  cfg.lr = 0.1;
  ad::adam_step(ps, st, cfg);
  // First step: m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps).
  CHECK(p.value[0] == doctest::Approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-12));
  CHECK(p.value[1] == doctest::Approx(-2.0 + 0.1 * 0.25 / (0.25 + 1e-8)).epsilon(1e-12));
}

TEST_CASE("adam refuses non-finite gradients without touching values") {
  ad::ParameterStore ps;
  auto& p = ps.add("w", ad::Tensor::from_rows({{1.0}}));
  p.grad = ad::Tensor::from_rows({{std::nan("")}});
  ad::AdamState st;
  CHECK_THROWS_AS(ad::adam_step(ps, st, {}), TrainingError);
  CHECK(p.value[0] == 1.0);
}

TEST_CASE("gradient clipping bounds the global norm") {
  ad::ParameterStore ps;
  auto& a = ps.add("a", ad::Tensor::from_rows({{0.0}}));
  auto& b = ps.add("b", ad::Tensor::from_rows({{0.0}}));
  a.grad = ad::Tensor::from_rows({{3.0}});
  b.grad = ad::Tensor::from_rows({{4.0}});
  CHECK(ad::clip_grad_norm(ps, 1.0) == doctest::Approx(5.0));
  CHECK(a.grad[0] == doctest::Approx(0.6));
  CHECK(b.grad[0] == doctest::Approx(0.8));
}

TEST_CASE("ops on 3x4 inputs agree with h = 1e-5 differences to 1e-6") {
  using VV = std::vector<ad::Var>;
  using F = std::function<ad::Var(ad::Tape&, const VV&)>;
  const std::vector<std::pair<const char*, F>> ops = {
      {"matmul", [](ad::Tape&, const VV& v) { return ad::matmul(v[0], ad::transpose(v[1])); }},
      {"add", [](ad::Tape&, const VV& v) { return ad::add(v[0], v[1]); }},
      {"sub", [](ad::Tape&, const VV& v) { return ad::sub(v[0], v[1]); }},
      {"mul", [](ad::Tape&, const VV& v) { return ad::mul(v[0], v[1]); }},
      {"sigmoid", [](ad::Tape&, const VV& v) { return ad::sigmoid(v[0]); }},
      {"tanh", [](ad::Tape&, const VV& v) { return ad::tanh(v[0]); }},
      {"sin", [](ad::Tape&, const VV& v) { return ad::sin(v[0]); }},
      {"softmax_rows", [](ad::Tape&, const VV& v) { return ad::softmax_rows(v[0]); }},
      {"sum", [](ad::Tape&, const VV& v) { return ad::sum(v[0], 1); }},
      {"mean", [](ad::Tape&, const VV& v) { return ad::mean(v[0], 0); }},
      {"l2_normalize_rows", [](ad::Tape&, const VV& v) { return ad::l2_normalize_rows(v[0]); }},
      {"concat_cols", [](ad::Tape&, const VV& v) { return ad::concat_cols({v[0], v[1]}); }},
  };
  Rng rng(31);
  for (const auto& [name, f] : ops) {
    const double err = testing::gradcheck(f, {random_tensor(3, 4, rng), random_tensor(3, 4, rng)}, rng(), 1e-5);
    INFO(name << " relative error " << err);
    CHECK(err < 1e-6);
  }
}

TEST_CASE("adam drives a quadratic bowl to its minimum") {
  ad::ParameterStore ps;
  auto& x = ps.add("x", ad::Tensor::from_rows({{0.6, -0.8}}));  // norm 1
  ad::AdamState st;
  ad::AdamConfig cfg;
  cfg.lr = 0.05;
  for (int step = 0; step < 500; ++step) {
    x.grad = x.value;
    for (auto& g : x.grad.vec()) g *= 2.0;  // d/dx |x|^2
    ad::adam_step(ps, st, cfg);
  }
  CHECK(std::hypot(x.value[0], x.value[1]) < 1e-2);
}
