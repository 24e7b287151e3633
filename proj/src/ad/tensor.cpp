#include "ad/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

#include "common/error.hpp"

namespace evseq::ad {

namespace {
std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}
}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill) : shape_(std::move(shape)) {
  data_.assign(product(shape_), fill);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (product(shape_) != data_.size())
    throw ShapeError("tensor: shape " + evseq::ad::shape_str(shape_) + " does not match " +
                     std::to_string(data_.size()) + " values");
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  std::size_t r = rows.size();
  std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("tensor: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::string Tensor::shape_str() const { return evseq::ad::shape_str(shape_); }

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::axpy(double k, const Tensor& other) {
  if (other.size() != size()) throw ShapeError("axpy: " + shape_str() + " vs " + other.shape_str());
  const double* o = other.data();
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += k * o[i];
}

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  if (!trans_a && !trans_b) {
    for (std::size_t i = 0; i < m; ++i) {
      double* ci = c + i * n;
      const double* ai = a + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = ai[p];
        if (av == 0.0) continue;
        const double* bp = b + p * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
      }
    }
  } else if (trans_a && !trans_b) {
    // A stored k x m.
    for (std::size_t p = 0; p < k; ++p) {
      const double* ap = a + p * m;
      const double* bp = b + p * n;
      for (std::size_t i = 0; i < m; ++i) {
        const double av = ap[i];
        if (av == 0.0) continue;
        double* ci = c + i * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
      }
    }
  } else if (!trans_a && trans_b) {
    // B stored n x k.
    for (std::size_t i = 0; i < m; ++i) {
      const double* ai = a + i * k;
      double* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) {
        const double* bj = b + j * k;
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
        ci[j] += s;
      }
    }
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      double* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += a[p * m + i] * b[j * k + p];
        ci[j] += s;
      }
    }
  }
}

}  // namespace evseq::ad
