#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace evseq::ad {

// Dense row-major array of doubles. Everything the models need is 2-D, so
// rows()/cols() treat trailing dimensions as flattened columns.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) { return Tensor({rows, cols}, fill); }
  static Tensor scalar(double v) { return Tensor({1, 1}, std::vector<double>{v}); }
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const { return shape_.empty() ? 0 : (shape_[0] ? data_.size() / shape_[0] : 0); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  std::string shape_str() const;
  void fill(double v);
  // this += k * other (shapes must match).
  void axpy(double k, const Tensor& other);

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::string shape_str(const std::vector<std::size_t>& shape);

// C(m x n) (+)= op(A) * op(B); A is m x k (or k x m when trans_a), B is k x n
// (or n x k when trans_b). Raw row-major kernels shared by the ops.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c, bool accumulate);

}  // namespace evseq::ad
