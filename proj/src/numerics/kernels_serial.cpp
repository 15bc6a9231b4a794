#include <cmath>
#include <limits>

#include "treeproj/error.hpp"
#include "treeproj/kernels.hpp"

namespace treeproj::kernels::serial {

void matmul(const Matrix& a, const Matrix& b, Matrix& out) {
  expect(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  const std::size_t n = a.rows(), m = b.cols(), inner = a.cols();
  out = Matrix(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    double* c = out.data() + i * m;
    const double* ar = a.data() + i * inner;
    for (std::size_t k = 0; k < inner; ++k) {
      const double av = ar[k];
      const double* br = b.data() + k * m;
      for (std::size_t j = 0; j < m; ++j) c[j] += av * br[j];
    }
  }
}

void matmul_nt(const Matrix& a, const Matrix& b, Matrix& out) {
  expect(a.cols() == b.cols(), "matmul_nt: inner dimension mismatch");
  const std::size_t n = a.rows(), m = b.rows(), inner = a.cols();
  out = Matrix(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    const double* ar = a.data() + i * inner;
    for (std::size_t j = 0; j < m; ++j) {
      const double* br = b.data() + j * inner;
      double s = 0.0;
      for (std::size_t k = 0; k < inner; ++k) s += ar[k] * br[k];
      out(i, j) = s;
    }
  }
}

void matmul_tn(const Matrix& a, const Matrix& b, Matrix& out) {
  expect(a.rows() == b.rows(), "matmul_tn: inner dimension mismatch");
  const std::size_t n = a.cols(), m = b.cols(), inner = a.rows();
  out = Matrix(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    double* c = out.data() + i * m;
    for (std::size_t r = 0; r < inner; ++r) {
      const double av = a(r, i);
      const double* br = b.data() + r * m;
      for (std::size_t j = 0; j < m; ++j) c[j] += av * br[j];
    }
  }
}

void softmax_rows(const Matrix& x, const BoolMatrix* mask, Matrix& out) {
  if (mask != nullptr)
    expect(mask->rows() == x.rows() && mask->cols() == x.cols(), "softmax_rows: mask shape mismatch");
  out = Matrix(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < x.cols(); ++c)
      if (mask == nullptr || (*mask)(r, c)) mx = std::max(mx, x(r, c));
    expect(mx != -std::numeric_limits<double>::infinity(), "softmax_rows: fully masked row");
    double total = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) {
      const double e = (mask == nullptr || (*mask)(r, c)) ? std::exp(x(r, c) - mx) : 0.0;
      out(r, c) = e;
      total += e;
    }
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) /= total;
  }
}

void layer_norm_rows(const Matrix& x, std::span<const double> gain, std::span<const double> bias,
                     double eps, Matrix& out, Matrix& normalized, std::span<double> inv_std) {
  const std::size_t d = x.cols();
  expect(gain.size() == d && bias.size() == d, "layer_norm: gain/bias width mismatch");
  expect(inv_std.size() == x.rows(), "layer_norm: inv_std length mismatch");
  out = Matrix(x.rows(), d);
  normalized = Matrix(x.rows(), d);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += x(r, c);
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double z = x(r, c) - mean;
      var += z * z;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::size_t c = 0; c < d; ++c) {
      const double xh = (x(r, c) - mean) * inv;
      normalized(r, c) = xh;
      out(r, c) = xh * gain[c] + bias[c];
    }
  }
}

}  // namespace treeproj::kernels::serial
