#include "ad/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "common/error.hpp"

namespace evseq::ad {
namespace {

[[noreturn]] void shape_fail(const char* op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_str() + " and " + b.shape_str());
}

void require_2d(const char* op, const Tensor& a) {
  if (a.shape().size() != 2) throw ShapeError(std::string(op) + ": expected a 2-D operand, got " + a.shape_str());
}

enum class Bcast { kFull, kRow, kCol, kScalar };

Bcast classify(const char* op, const Tensor& a, const Tensor& b) {
  require_2d(op, a);
  require_2d(op, b);
  if (a.shape() == b.shape()) return Bcast::kFull;
  if (b.rows() == 1 && b.cols() == a.cols()) return Bcast::kRow;
  if (b.cols() == 1 && b.rows() == a.rows()) return Bcast::kCol;
  if (b.size() == 1) return Bcast::kScalar;
  shape_fail(op, a, b);
}

inline std::size_t bidx(Bcast k, std::size_t r, std::size_t c, std::size_t cols) {
  switch (k) {
    case Bcast::kFull: return r * cols + c;
    case Bcast::kRow: return c;
    case Bcast::kCol: return r;
    case Bcast::kScalar: return 0;
  }
  return 0;
}

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor &A = a.value(), &B = b.value();
  require_2d("matmul", A);
  require_2d("matmul", B);
  if (A.cols() != B.rows()) shape_fail("matmul", A, B);
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor C = Tensor::matrix(m, n);
  gemm(false, false, m, n, k, A.data(), B.data(), C.data(), false);
  const std::uint32_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(C), {a, b}, [=](Tape& t, const Tensor& g) {
    const Tensor &Av = t.value(ia), &Bv = t.value(ib);
    if (t.requires_grad(Var{&t, ia})) gemm(false, true, m, k, n, g.data(), Bv.data(), t.grad_of(ia).data(), true);
    if (t.requires_grad(Var{&t, ib})) gemm(true, false, k, n, m, Av.data(), g.data(), t.grad_of(ib).data(), true);
  });
}

Var transpose(Var a) {
  const Tensor& A = a.value();
  require_2d("transpose", A);
  const std::size_t r = A.rows(), c = A.cols();
  Tensor T = Tensor::matrix(c, r);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) T(j, i) = A(i, j);
  const std::uint32_t ia = a.id;
  return a.tape->record(std::move(T), {a}, [=](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_of(ia);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga(i, j) += g(j, i);
  });
}

namespace {

// op_kind: 0 add, 1 sub, 2 mul.
Var binary(const char* name, Var a, Var b, int op_kind) {
  const Tensor &A = a.value(), &B = b.value();
  const Bcast k = classify(name, A, B);
  const std::size_t rows = A.rows(), cols = A.cols();
  Tensor C(A.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const double x = A[r * cols + c], y = B[bidx(k, r, c, cols)];
      C[r * cols + c] = op_kind == 0 ? x + y : (op_kind == 1 ? x - y : x * y);
    }
  const std::uint32_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(C), {a, b}, [=](Tape& t, const Tensor& g) {
    const bool need_a = t.requires_grad(Var{&t, ia});
    const bool need_b = t.requires_grad(Var{&t, ib});
    if (need_a) {
      Tensor& ga = t.grad_of(ia);
      if (op_kind == 2) {
        const Tensor& Bv = t.value(ib);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += g[r * cols + c] * Bv[bidx(k, r, c, cols)];
      } else {
        ga.axpy(1.0, g);
      }
    }
    if (need_b) {
      Tensor& gb = t.grad_of(ib);
      const double sign = op_kind == 1 ? -1.0 : 1.0;
      const Tensor& Av = t.value(ia);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
          const double gv = g[r * cols + c];
          gb[bidx(k, r, c, cols)] += op_kind == 2 ? gv * Av[r * cols + c] : sign * gv;
        }
    }
  });
}

}  // namespace

Var add(Var a, Var b) { return binary("add", a, b, 0); }
Var sub(Var a, Var b) { return binary("sub", a, b, 1); }
Var mul(Var a, Var b) { return binary("mul", a, b, 2); }

Var affine(Var a, double k, double c) {
  const Tensor& A = a.value();
  Tensor Y(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) Y[i] = k * A[i] + c;
  const std::uint32_t ia = a.id;
  return a.tape->record(std::move(Y), {a}, [=](Tape& t, const Tensor& g) { t.grad_of(ia).axpy(k, g); });
}

namespace {

// Elementwise op whose derivative is expressed through input x and output y.
template <class Fwd, class Deriv>
Var elementwise(Var a, Fwd fwd, Deriv deriv) {
  const Tensor& A = a.value();
  Tensor Y(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) Y[i] = fwd(A[i]);
  const std::uint32_t ia = a.id;
  Tape& tape = *a.tape;
  const std::uint32_t io = static_cast<std::uint32_t>(tape.size());
  return tape.record(std::move(Y), {a}, [=](Tape& t, const Tensor& g) {
    const Tensor &X = t.value(ia), &Yv = t.value(io);
    Tensor& ga = t.grad_of(ia);
    for (std::size_t i = 0; i < X.size(); ++i) ga[i] += g[i] * deriv(X[i], Yv[i]);
  });
}

}  // namespace

Var sigmoid(Var a) {
  return elementwise(
      a,
      [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
  return elementwise(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var relu(Var a) {
  return elementwise(a, [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var sin(Var a) {
  return elementwise(a, [](double x) { return std::sin(x); }, [](double x, double) { return std::cos(x); });
}

Var softmax_rows(Var a) {
  const Tensor& A = a.value();
  require_2d("softmax_rows", A);
  const std::size_t rows = A.rows(), cols = A.cols();
  Tensor Y(A.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = A.data() + r * cols;
    double* y = Y.data() + r * cols;
    double mx = *std::max_element(x, x + cols);
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += (y[c] = std::exp(x[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) y[c] /= s;
  }
  const std::uint32_t ia = a.id;
  const std::uint32_t io = static_cast<std::uint32_t>(a.tape->size());
  return a.tape->record(std::move(Y), {a}, [=](Tape& t, const Tensor& g) {
    const Tensor& Yv = t.value(io);
    Tensor& ga = t.grad_of(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = Yv.data() + r * cols;
      const double* gr = g.data() + r * cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += y[c] * gr[c];
      for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += y[c] * (gr[c] - dot);
    }
  });
}

Var softmax_cross_entropy(Var logits, const std::vector<int>& labels) {
  const Tensor& Z = logits.value();
  require_2d("softmax_cross_entropy", Z);
  const std::size_t n = Z.rows(), k = Z.cols();
  if (labels.size() != n)
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " + Z.shape_str());
  Tensor P(Z.shape());
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= k)
      throw ShapeError("softmax_cross_entropy: label " + std::to_string(labels[r]) + " outside " + std::to_string(k) +
                       " classes");
    const double* z = Z.data() + r * k;
    double mx = *std::max_element(z, z + k);
    double s = 0.0;
    for (std::size_t c = 0; c < k; ++c) s += (P[r * k + c] = std::exp(z[c] - mx));
    for (std::size_t c = 0; c < k; ++c) P[r * k + c] /= s;
    loss += -(z[labels[r]] - mx - std::log(s));
  }
  loss /= static_cast<double>(n);
  const std::uint32_t ia = logits.id;
  return logits.tape->record(Tensor::scalar(loss), {logits}, [=, P = std::move(P)](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_of(ia);
    const double s = g[0] / static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < k; ++c)
        ga[r * k + c] += s * (P[r * k + c] - (static_cast<int>(c) == labels[r] ? 1.0 : 0.0));
  });
}

Var bce_with_logits(Var logits, const Tensor& targets) {
  const Tensor& Z = logits.value();
  if (!Z.same_shape(targets)) shape_fail("bce_with_logits", Z, targets);
  const std::size_t n = Z.size();
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = Z[i], y = targets[i];
    loss += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
  }
  loss /= static_cast<double>(n);
  const std::uint32_t ia = logits.id;
  return logits.tape->record(Tensor::scalar(loss), {logits}, [=, T = targets](Tape& t, const Tensor& g) {
    const Tensor& Zv = t.value(ia);
    Tensor& ga = t.grad_of(ia);
    const double s = g[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double z = Zv[i];
      const double p = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
      ga[i] += s * (p - T[i]);
    }
  });
}

Var mse(Var pred, const Tensor& target) {
  const Tensor& P = pred.value();
  if (P.size() != target.size()) shape_fail("mse", P, target);
  const std::size_t n = P.size();
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) loss += (P[i] - target[i]) * (P[i] - target[i]);
  loss /= static_cast<double>(n);
  const std::uint32_t ia = pred.id;
  return pred.tape->record(Tensor::scalar(loss), {pred}, [=, T = target](Tape& t, const Tensor& g) {
    const Tensor& Pv = t.value(ia);
    Tensor& ga = t.grad_of(ia);
    const double s = 2.0 * g[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) ga[i] += s * (Pv[i] - T[i]);
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t rows = parts[0].value().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_2d("concat_cols", p.value());
    if (p.value().rows() != rows) shape_fail("concat_cols", parts[0].value(), p.value());
    widths.push_back(p.value().cols());
    total += widths.back();
  }
  Tensor Y = Tensor::matrix(rows, total);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& X = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(X.data() + r * widths[k], widths[k], Y.data() + r * total + off);
    off += widths[k];
  }
  std::vector<std::uint32_t> ids;
  for (const auto& p : parts) ids.push_back(p.id);
  return parts[0].tape->record(std::move(Y), parts, [=](Tape& t, const Tensor& g) {
    std::size_t o = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (t.requires_grad(Var{&t, ids[k]})) {
        Tensor& gk = t.grad_of(ids[k]);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < widths[k]; ++c) gk[r * widths[k] + c] += g[r * total + o + c];
      }
      o += widths[k];
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t cols = parts[0].value().cols();
  std::vector<std::size_t> heights;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_2d("concat_rows", p.value());
    if (p.value().cols() != cols) shape_fail("concat_rows", parts[0].value(), p.value());
    heights.push_back(p.value().rows());
    total += heights.back();
  }
  Tensor Y = Tensor::matrix(total, cols);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy_n(p.value().data(), p.value().size(), Y.data() + off * cols);
    off += p.value().rows();
  }
  std::vector<std::uint32_t> ids;
  for (const auto& p : parts) ids.push_back(p.id);
  return parts[0].tape->record(std::move(Y), parts, [=](Tape& t, const Tensor& g) {
    std::size_t o = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (t.requires_grad(Var{&t, ids[k]})) {
        Tensor& gk = t.grad_of(ids[k]);
        const double* src = g.data() + o * cols;
        for (std::size_t i = 0; i < heights[k] * cols; ++i) gk[i] += src[i];
      }
      o += heights[k];
    }
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Tensor& A = a.value();
  require_2d("slice_cols", A);
  if (begin > end || end > A.cols())
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") outside " +
                     A.shape_str());
  const std::size_t rows = A.rows(), cols = A.cols(), w = end - begin;
  Tensor Y = Tensor::matrix(rows, w);
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(A.data() + r * cols + begin, w, Y.data() + r * w);
  const std::uint32_t ia = a.id;
  return a.tape->record(std::move(Y), {a}, [=](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_of(ia);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < w; ++c) ga[r * cols + begin + c] += g[r * w + c];
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  const Tensor& A = a.value();
  require_2d("slice_rows", A);
  if (begin > end || end > A.rows())
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") outside " +
                     A.shape_str());
  const std::size_t cols = A.cols();
  Tensor Y = Tensor::matrix(end - begin, cols);
  std::copy_n(A.data() + begin * cols, (end - begin) * cols, Y.data());
  const std::uint32_t ia = a.id;
  return a.tape->record(std::move(Y), {a}, [=](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_of(ia);
    double* dst = ga.data() + begin * cols;
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  });
}

Var gather_rows(Var a, const std::vector<std::size_t>& rows) {
  const Tensor& A = a.value();
  require_2d("gather_rows", A);
  const std::size_t cols = A.cols();
  Tensor Y = Tensor::matrix(rows.size(), cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= A.rows())
      throw ShapeError("gather_rows: row " + std::to_string(rows[i]) + " outside " + A.shape_str());
    std::copy_n(A.data() + rows[i] * cols, cols, Y.data() + i * cols);
  }
  const std::uint32_t ia = a.id;
  return a.tape->record(std::move(Y), {a}, [=](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_of(ia);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      double* dst = ga.data() + rows[i] * cols;
      const double* src = g.data() + i * cols;
      for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
    }
  });
}

Var sum(Var a, int axis) {
  const Tensor& A = a.value();
  require_2d("sum", A);
  const std::size_t rows = A.rows(), cols = A.cols();
  if (axis != 0 && axis != 1) throw ShapeError("sum: axis must be 0 or 1");
  Tensor Y = axis == 0 ? Tensor::matrix(1, cols) : Tensor::matrix(rows, 1);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) Y[axis == 0 ? c : r] += A[r * cols + c];
  const std::uint32_t ia = a.id;
  return a.tape->record(std::move(Y), {a}, [=](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_of(ia);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += g[axis == 0 ? c : r];
  });
}

Var mean(Var a, int axis) {
  const Tensor& A = a.value();
  const double n = static_cast<double>(axis == 0 ? A.rows() : A.cols());
  if (n == 0) throw ShapeError("mean: empty axis in " + A.shape_str());
  return affine(sum(a, axis), 1.0 / n);
}

Var sum_all(Var a) { return sum(sum(a, 0), 1); }

Var segment_mean(Var a, const std::vector<std::size_t>& segment, std::size_t n_segments) {
  const Tensor& A = a.value();
  require_2d("segment_mean", A);
  if (segment.size() != A.rows())
    throw ShapeError("segment_mean: " + std::to_string(segment.size()) + " segment ids for " + A.shape_str());
  const std::size_t cols = A.cols();
  std::vector<double> count(n_segments, 0.0);
  for (auto s : segment) {
    if (s >= n_segments) throw ShapeError("segment_mean: segment id outside range");
    count[s] += 1.0;
  }
  for (std::size_t s = 0; s < n_segments; ++s)
    if (count[s] == 0.0) throw ShapeError("segment_mean: segment " + std::to_string(s) + " is empty");
  Tensor Y = Tensor::matrix(n_segments, cols);
  for (std::size_t i = 0; i < segment.size(); ++i)
    for (std::size_t c = 0; c < cols; ++c) Y[segment[i] * cols + c] += A[i * cols + c];
  for (std::size_t s = 0; s < n_segments; ++s)
    for (std::size_t c = 0; c < cols; ++c) Y[s * cols + c] /= count[s];
  const std::uint32_t ia = a.id;
  return a.tape->record(std::move(Y), {a}, [=](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_of(ia);
    for (std::size_t i = 0; i < segment.size(); ++i)
      for (std::size_t c = 0; c < cols; ++c) ga[i * cols + c] += g[segment[i] * cols + c] / count[segment[i]];
  });
}

Var embedding(Var table, const std::vector<int>& codes) {
  const Tensor& T = table.value();
  std::vector<std::size_t> rows(codes.size());
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (codes[i] < 0 || static_cast<std::size_t>(codes[i]) >= T.rows())
      throw ShapeError("embedding: code " + std::to_string(codes[i]) + " outside table " + T.shape_str());
    rows[i] = static_cast<std::size_t>(codes[i]);
  }
  return gather_rows(table, rows);
}

Var batchnorm(Var x, Var gamma, Var beta, Parameter& running_mean, Parameter& running_var, bool training,
              const BatchNormConfig& cfg) {
  const Tensor& X = x.value();
  require_2d("batchnorm", X);
  const std::size_t n = X.rows(), f = X.cols();
  if (gamma.value().size() != f || beta.value().size() != f || running_mean.value.size() != f ||
      running_var.value.size() != f)
    shape_fail("batchnorm", X, gamma.value());
  if (training && n == 0) throw ShapeError("batchnorm: empty batch");
  std::vector<double> mu(f), inv_std(f);
  if (training) {
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < f; ++c) mu[c] += X[r * f + c];
    for (auto& m : mu) m /= static_cast<double>(n);
    std::vector<double> var(f, 0.0);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < f; ++c) {
        const double d = X[r * f + c] - mu[c];
        var[c] += d * d;
      }
    for (std::size_t c = 0; c < f; ++c) {
      var[c] /= static_cast<double>(n);
      inv_std[c] = 1.0 / std::sqrt(var[c] + cfg.eps);
      const double unbiased = n > 1 ? var[c] * static_cast<double>(n) / static_cast<double>(n - 1) : var[c];
      running_mean.value[c] = (1.0 - cfg.momentum) * running_mean.value[c] + cfg.momentum * mu[c];
      running_var.value[c] = (1.0 - cfg.momentum) * running_var.value[c] + cfg.momentum * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < f; ++c) {
      mu[c] = running_mean.value[c];
      inv_std[c] = 1.0 / std::sqrt(running_var.value[c] + cfg.eps);
    }
  }
  Tensor xhat = Tensor::matrix(n, f);
  Tensor Y = Tensor::matrix(n, f);
  const Tensor &G = gamma.value(), &B = beta.value();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < f; ++c) {
      const double h = (X[r * f + c] - mu[c]) * inv_std[c];
      xhat[r * f + c] = h;
      Y[r * f + c] = G[c] * h + B[c];
    }
  const std::uint32_t ix = x.id, ig = gamma.id, ib = beta.id;
  return x.tape->record(std::move(Y), {x, gamma, beta},
                        [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, const Tensor& g) {
                          const Tensor& Gv = t.value(ig);
                          if (t.requires_grad(Var{&t, ig})) {
                            Tensor& gg = t.grad_of(ig);
                            for (std::size_t r = 0; r < n; ++r)
                              for (std::size_t c = 0; c < f; ++c) gg[c] += g[r * f + c] * xhat[r * f + c];
                          }
                          if (t.requires_grad(Var{&t, ib})) {
                            Tensor& gb = t.grad_of(ib);
                            for (std::size_t r = 0; r < n; ++r)
                              for (std::size_t c = 0; c < f; ++c) gb[c] += g[r * f + c];
                          }
                          if (!t.requires_grad(Var{&t, ix})) return;
                          Tensor& gx = t.grad_of(ix);
                          if (!training) {
                            for (std::size_t r = 0; r < n; ++r)
                              for (std::size_t c = 0; c < f; ++c) gx[r * f + c] += g[r * f + c] * Gv[c] * inv_std[c];
                            return;
                          }
                          const double nn = static_cast<double>(n);
                          for (std::size_t c = 0; c < f; ++c) {
                            double s1 = 0.0, s2 = 0.0;
                            for (std::size_t r = 0; r < n; ++r) {
                              const double dh = g[r * f + c] * Gv[c];
                              s1 += dh;
                              s2 += dh * xhat[r * f + c];
                            }
                            for (std::size_t r = 0; r < n; ++r) {
                              const double dh = g[r * f + c] * Gv[c];
                              gx[r * f + c] += inv_std[c] / nn * (nn * dh - s1 - xhat[r * f + c] * s2);
                            }
                          }
                        });
}

Var dropout(Var x, double p, bool training, Rng& rng) {
  if (!training || p <= 0.0) return x;
  if (p >= 1.0) throw ShapeError("dropout: rate must be < 1");
  const Tensor& X = x.value();
  Tensor mask(X.shape());
  const double keep = 1.0 - p;
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = uniform01(rng) < keep ? 1.0 / keep : 0.0;
  Tensor Y(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) Y[i] = X[i] * mask[i];
  const std::uint32_t ix = x.id;
  return x.tape->record(std::move(Y), {x}, [=, mask = std::move(mask)](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_of(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
  });
}

Var segment_attention(Var queries, Var keys, Var values, const std::vector<std::size_t>& offsets,
                      std::vector<std::vector<double>>* weights_out) {
  const Tensor &Q = queries.value(), &K = keys.value(), &V = values.value();
  require_2d("segment_attention", Q);
  require_2d("segment_attention", K);
  require_2d("segment_attention", V);
  const std::size_t R = Q.rows(), d = Q.cols(), N = K.rows(), dv = V.cols();
  if (K.cols() != d) shape_fail("segment_attention", Q, K);
  if (V.rows() != N) shape_fail("segment_attention", K, V);
  if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != N)
    throw ShapeError("segment_attention: offsets must run from 0 to " + std::to_string(N));
  const std::size_t B = offsets.size() - 1;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  // W(r, i): weight of event i for query r within the event's own segment.
  Tensor W = Tensor::matrix(R, N);
  Tensor Y = Tensor::matrix(B * R, dv);
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t lo = offsets[b], hi = offsets[b + 1];
    if (hi <= lo) throw ShapeError("segment_attention: sequence " + std::to_string(b) + " has no valid events");
    for (std::size_t r = 0; r < R; ++r) {
      double* w = W.data() + r * N;
      const double* q = Q.data() + r * d;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = lo; i < hi; ++i) {
        double s = 0.0;
        const double* k = K.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) s += q[j] * k[j];
        w[i] = s * scale;
        mx = std::max(mx, w[i]);
      }
      double z = 0.0;
      for (std::size_t i = lo; i < hi; ++i) z += (w[i] = std::exp(w[i] - mx));
      double* y = Y.data() + (b * R + r) * dv;
      for (std::size_t i = lo; i < hi; ++i) {
        w[i] /= z;
        const double* v = V.data() + i * dv;
        for (std::size_t j = 0; j < dv; ++j) y[j] += w[i] * v[j];
      }
    }
  }
  if (weights_out) {
    weights_out->assign(B * R, {});
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t r = 0; r < R; ++r)
        (*weights_out)[b * R + r].assign(W.data() + r * N + offsets[b], W.data() + r * N + offsets[b + 1]);
  }
  const std::uint32_t iq = queries.id, ik = keys.id, iv = values.id;
  return queries.tape->record(
      std::move(Y), {queries, keys, values}, [=, W = std::move(W)](Tape& t, const Tensor& g) {
        const Tensor &Qv = t.value(iq), &Kv = t.value(ik), &Vv = t.value(iv);
        const bool nq = t.requires_grad(Var{&t, iq}), nk = t.requires_grad(Var{&t, ik}),
                   nv = t.requires_grad(Var{&t, iv});
        Tensor* gq = nq ? &t.grad_of(iq) : nullptr;
        Tensor* gk = nk ? &t.grad_of(ik) : nullptr;
        Tensor* gv = nv ? &t.grad_of(iv) : nullptr;
        std::vector<double> ds;
        for (std::size_t b = 0; b < B; ++b) {
          const std::size_t lo = offsets[b], hi = offsets[b + 1];
          ds.assign(hi - lo, 0.0);
          for (std::size_t r = 0; r < R; ++r) {
            const double* w = W.data() + r * N;
            const double* gy = g.data() + (b * R + r) * dv;
            double dot = 0.0;
            for (std::size_t i = lo; i < hi; ++i) {
              const double* v = Vv.data() + i * dv;
              double dw = 0.0;
              for (std::size_t j = 0; j < dv; ++j) dw += gy[j] * v[j];
              ds[i - lo] = dw;
              dot += w[i] * dw;
              if (gv) {
                double* gvi = gv->data() + i * dv;
                for (std::size_t j = 0; j < dv; ++j) gvi[j] += w[i] * gy[j];
              }
            }
            const double* q = Qv.data() + r * d;
            for (std::size_t i = lo; i < hi; ++i) {
              const double s = w[i] * (ds[i - lo] - dot) * scale;
              if (s == 0.0) continue;
              const double* k = Kv.data() + i * d;
              if (gq) {
                double* gqr = gq->data() + r * d;
                for (std::size_t j = 0; j < d; ++j) gqr[j] += s * k[j];
              }
              if (gk) {
                double* gki = gk->data() + i * d;
                for (std::size_t j = 0; j < d; ++j) gki[j] += s * q[j];
              }
            }
          }
        }
      });
}

Var contrastive_margin_loss(Var embeddings, double margin) {
  const Tensor& E = embeddings.value();
  require_2d("contrastive_margin_loss", E);
  const std::size_t n = E.rows(), d = E.cols();
  if (n % 2 != 0) throw ShapeError("contrastive_margin_loss: rows must come in pairs, got " + E.shape_str());
  if (n < 4) throw ShapeError("contrastive_margin_loss: need at least two sequences for negatives");
  const double n_pos = static_cast<double>(n / 2);
  const double n_neg = static_cast<double>(n * (n - 1) / 2) - n_pos;
  double pos = 0.0, neg = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = E[i * d + c] - E[j * d + c];
        s += diff * diff;
      }
      if (i / 2 == j / 2) {
        pos += s;
      } else {
        const double h = std::max(0.0, margin - std::sqrt(s));
        neg += h * h;
      }
    }
  const double loss = pos / n_pos + neg / n_neg;
  const std::uint32_t ie = embeddings.id;
  return embeddings.tape->record(Tensor::scalar(loss), {embeddings}, [=](Tape& t, const Tensor& g) {
    const Tensor& Ev = t.value(ie);
    Tensor& ge = t.grad_of(ie);
    std::vector<double> diff(d);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
          diff[c] = Ev[i * d + c] - Ev[j * d + c];
          s += diff[c] * diff[c];
        }
        double coef;
        if (i / 2 == j / 2) {
          coef = 2.0 / n_pos;
        } else {
          const double dist = std::sqrt(s);
          if (dist >= margin || dist < 1e-12) continue;
          coef = -2.0 * (margin - dist) / dist / n_neg;
        }
        coef *= g[0];
        for (std::size_t c = 0; c < d; ++c) {
          ge[i * d + c] += coef * diff[c];
          ge[j * d + c] -= coef * diff[c];
        }
      }
  });
}

Var l2_normalize_rows(Var a, double eps) {
  const Tensor& A = a.value();
  require_2d("l2_normalize_rows", A);
  const std::size_t rows = A.rows(), cols = A.cols();
  Tensor Y(A.shape());
  std::vector<double> norm(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += A[r * cols + c] * A[r * cols + c];
    norm[r] = std::sqrt(s + eps);
    for (std::size_t c = 0; c < cols; ++c) Y[r * cols + c] = A[r * cols + c] / norm[r];
  }
  const std::uint32_t ia = a.id;
  const std::uint32_t io = static_cast<std::uint32_t>(a.tape->size());
  return a.tape->record(std::move(Y), {a}, [=, norm = std::move(norm)](Tape& t, const Tensor& g) {
    const Tensor& Yv = t.value(io);
    Tensor& ga = t.grad_of(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += Yv[r * cols + c] * g[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c)
        ga[r * cols + c] += (g[r * cols + c] - Yv[r * cols + c] * dot) / norm[r];
    }
  });
}

Var gru_sequence(Var x, Var w_ih, Var w_hh, Var b_ih, Var b_hh, const std::vector<std::size_t>& lengths) {
  const Tensor &X = x.value(), &Wi = w_ih.value(), &Wh = w_hh.value(), &Bi = b_ih.value(), &Bh = b_hh.value();
  require_2d("gru_sequence", X);
  require_2d("gru_sequence", Wi);
  require_2d("gru_sequence", Wh);
  const std::size_t B = lengths.size();
  if (B == 0) throw ShapeError("gru_sequence: empty batch");
  const std::size_t H = Wh.rows(), G = 3 * H, d = X.cols();
  if (Wh.cols() != G) shape_fail("gru_sequence", Wh, Wh);
  if (Wi.rows() != d || Wi.cols() != G) shape_fail("gru_sequence", X, Wi);
  if (Bi.size() != G || Bh.size() != G) shape_fail("gru_sequence", Wi, Bi);
  if (X.rows() % B != 0) throw ShapeError("gru_sequence: " + X.shape_str() + " rows not a multiple of batch " +
                                          std::to_string(B));
  const std::size_t T = X.rows() / B;
  for (std::size_t b = 0; b < B; ++b)
    if (lengths[b] == 0 || lengths[b] > T)
      throw ShapeError("gru_sequence: sequence " + std::to_string(b) + " has length " + std::to_string(lengths[b]) +
                       " outside [1, " + std::to_string(T) + "]");

  // Input projections for every step at once.
  Tensor gx = Tensor::matrix(T * B, G);
  gemm(false, false, T * B, G, d, X.data(), Wi.data(), gx.data(), false);
  for (std::size_t r = 0; r < T * B; ++r)
    for (std::size_t j = 0; j < G; ++j) gx[r * G + j] += Bi[j];

  Tensor Hs = Tensor::matrix(T * B, H);
  // Saved activations: r, z, n and the recurrent new-gate term per step.
  Tensor gates = Tensor::matrix(T * B, G);
  Tensor hn = Tensor::matrix(T * B, H);
  std::vector<double> gh(B * G);
  std::vector<double> zero(B * H, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    const double* hprev = t ? Hs.data() + (t - 1) * B * H : zero.data();
    gemm(false, false, B, G, H, hprev, Wh.data(), gh.data(), false);
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t row = t * B + b;
      double* h = Hs.data() + row * H;
      const double* hp = hprev + b * H;
      if (t >= lengths[b]) {
        std::copy(hp, hp + H, h);
        continue;
      }
      const double* a = gx.data() + row * G;
      const double* c = gh.data() + b * G;
      double* s = gates.data() + row * G;
      double* q = hn.data() + row * H;
      for (std::size_t j = 0; j < H; ++j) {
        const double r = 1.0 / (1.0 + std::exp(-(a[j] + c[j] + Bh[j])));
        const double z = 1.0 / (1.0 + std::exp(-(a[H + j] + c[H + j] + Bh[H + j])));
        q[j] = c[2 * H + j] + Bh[2 * H + j];
        const double n = std::tanh(a[2 * H + j] + r * q[j]);
        s[j] = r;
        s[H + j] = z;
        s[2 * H + j] = n;
        h[j] = (1.0 - z) * n + z * hp[j];
      }
    }
  }

  const std::uint32_t ix = x.id, iwi = w_ih.id, iwh = w_hh.id, ibi = b_ih.id, ibh = b_hh.id;
  Tensor out = Hs;
  return x.tape->record(
      std::move(out), {x, w_ih, w_hh, b_ih, b_hh},
      [=, Hs = std::move(Hs), gates = std::move(gates), hn = std::move(hn)](Tape& t, const Tensor& g) {
        const Tensor &Xv = t.value(ix), &Wiv = t.value(iwi), &Whv = t.value(iwh);
        Tensor dgx = Tensor::matrix(T * B, G);
        std::vector<double> dh(B * H, 0.0), dgh(B * G), dprev(B * H);
        std::vector<double> dWh(H * G, 0.0), dBh(G, 0.0);
        for (std::size_t step = T; step-- > 0;) {
          for (std::size_t i = 0; i < B * H; ++i) dh[i] += g[step * B * H + i];
          std::fill(dgh.begin(), dgh.end(), 0.0);
          std::fill(dprev.begin(), dprev.end(), 0.0);
          const double* hprev = step ? Hs.data() + (step - 1) * B * H : nullptr;
          for (std::size_t b = 0; b < B; ++b) {
            const std::size_t row = step * B + b;
            const double* dhb = dh.data() + b * H;
            double* dp = dprev.data() + b * H;
            if (step >= lengths[b]) {
              for (std::size_t j = 0; j < H; ++j) dp[j] = dhb[j];
              continue;
            }
            const double* s = gates.data() + row * G;
            const double* q = hn.data() + row * H;
            double* da = dgx.data() + row * G;
            double* dc = dgh.data() + b * G;
            for (std::size_t j = 0; j < H; ++j) {
              const double r = s[j], z = s[H + j], n = s[2 * H + j];
              const double hp = hprev ? hprev[b * H + j] : 0.0;
              const double dn = dhb[j] * (1.0 - z) * (1.0 - n * n);
              const double dz = dhb[j] * (hp - n) * z * (1.0 - z);
              const double dr = dn * q[j] * r * (1.0 - r);
              dp[j] = dhb[j] * z;
              da[j] = dr;
              da[H + j] = dz;
              da[2 * H + j] = dn;
              dc[j] = dr;
              dc[H + j] = dz;
              dc[2 * H + j] = dn * r;
            }
          }
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t j = 0; j < G; ++j) dBh[j] += dgh[b * G + j];
          if (hprev) {
            gemm(true, false, H, G, B, hprev, dgh.data(), dWh.data(), true);
            gemm(false, true, B, H, G, dgh.data(), Whv.data(), dprev.data(), true);
          }
          dh.swap(dprev);
        }
        if (t.requires_grad(Var{&t, iwh})) {
          Tensor& gw = t.grad_of(iwh);
          for (std::size_t i = 0; i < H * G; ++i) gw[i] += dWh[i];
        }
        if (t.requires_grad(Var{&t, ibh})) {
          Tensor& gb = t.grad_of(ibh);
          for (std::size_t j = 0; j < G; ++j) gb[j] += dBh[j];
        }
        if (t.requires_grad(Var{&t, ibi})) {
          Tensor& gb = t.grad_of(ibi);
          for (std::size_t r = 0; r < T * B; ++r)
            for (std::size_t j = 0; j < G; ++j) gb[j] += dgx[r * G + j];
        }
        if (t.requires_grad(Var{&t, iwi})) gemm(true, false, d, G, T * B, Xv.data(), dgx.data(), t.grad_of(iwi).data(), true);
        if (t.requires_grad(Var{&t, ix})) gemm(false, true, T * B, d, G, dgx.data(), Wiv.data(), t.grad_of(ix).data(), true);
      });
}

}  // namespace evseq::ad
