#include <cmath>
#include <cstdint>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "treeproj/error.hpp"
#include "treeproj/kernels.hpp"

namespace treeproj::kernels {

namespace parallel {

void matmul(const Matrix& a, const Matrix& b, Matrix& out) {
  expect(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  const std::int64_t n = static_cast<std::int64_t>(a.rows());
  const std::size_t m = b.cols(), inner = a.cols();
  out = Matrix(a.rows(), m);
  const bool wide = a.rows() * m * inner >= kParallelWork;
#pragma omp parallel for schedule(static) if (wide)
  for (std::int64_t i = 0; i < n; ++i) {
    double* c = out.data() + i * m;
    const double* ar = a.data() + i * inner;
    for (std::size_t k = 0; k < inner; ++k) {
      const double av = ar[k];
      const double* br = b.data() + k * m;
#pragma omp simd
      for (std::size_t j = 0; j < m; ++j) c[j] += av * br[j];
    }
  }
}

void matmul_nt(const Matrix& a, const Matrix& b, Matrix& out) {
  expect(a.cols() == b.cols(), "matmul_nt: inner dimension mismatch");
  const std::int64_t n = static_cast<std::int64_t>(a.rows());
  const std::size_t m = b.rows(), inner = a.cols();
  out = Matrix(a.rows(), m);
  const bool wide = a.rows() * m * inner >= kParallelWork;
#pragma omp parallel for schedule(static) if (wide)
  for (std::int64_t i = 0; i < n; ++i) {
    const double* ar = a.data() + i * inner;
    double* c = out.data() + i * m;
    for (std::size_t j = 0; j < m; ++j) {
      const double* br = b.data() + j * inner;
      double s = 0.0;
      for (std::size_t k = 0; k < inner; ++k) s += ar[k] * br[k];
      c[j] = s;
    }
  }
}

void matmul_tn(const Matrix& a, const Matrix& b, Matrix& out) {
  expect(a.rows() == b.rows(), "matmul_tn: inner dimension mismatch");
  const std::int64_t n = static_cast<std::int64_t>(a.cols());
  const std::size_t m = b.cols(), inner = a.rows(), acols = a.cols();
  out = Matrix(a.cols(), m);
  const bool wide = a.cols() * m * inner >= kParallelWork;
#pragma omp parallel for schedule(static) if (wide)
  for (std::int64_t i = 0; i < n; ++i) {
    double* c = out.data() + i * m;
    for (std::size_t r = 0; r < inner; ++r) {
      const double av = a.data()[r * acols + i];
      const double* br = b.data() + r * m;
#pragma omp simd
      for (std::size_t j = 0; j < m; ++j) c[j] += av * br[j];
    }
  }
}

void softmax_rows(const Matrix& x, const BoolMatrix* mask, Matrix& out) {
  if (mask != nullptr)
    expect(mask->rows() == x.rows() && mask->cols() == x.cols(), "softmax_rows: mask shape mismatch");
  out = Matrix(x.rows(), x.cols());
  const std::int64_t rows = static_cast<std::int64_t>(x.rows());
  const std::size_t cols = x.cols();
  bool fully_masked = false;
  const bool wide = x.size() * 8 >= kParallelWork;
#pragma omp parallel for schedule(static) if (wide) reduction(|| : fully_masked)
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * cols;
    double* o = out.data() + r * cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c)
      if (mask == nullptr || (*mask)(r, c)) mx = std::max(mx, xr[c]);
    if (mx == -std::numeric_limits<double>::infinity()) {
      fully_masked = true;
      continue;
    }
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double e = (mask == nullptr || (*mask)(r, c)) ? std::exp(xr[c] - mx) : 0.0;
      o[c] = e;
      total += e;
    }
    for (std::size_t c = 0; c < cols; ++c) o[c] /= total;
  }
  expect(!fully_masked, "softmax_rows: fully masked row");
}

void layer_norm_rows(const Matrix& x, std::span<const double> gain, std::span<const double> bias,
                     double eps, Matrix& out, Matrix& normalized, std::span<double> inv_std) {
  const std::size_t d = x.cols();
  expect(gain.size() == d && bias.size() == d, "layer_norm: gain/bias width mismatch");
  expect(inv_std.size() == x.rows(), "layer_norm: inv_std length mismatch");
  out = Matrix(x.rows(), d);
  normalized = Matrix(x.rows(), d);
  const std::int64_t rows = static_cast<std::int64_t>(x.rows());
  const bool wide = x.size() * 8 >= kParallelWork;
#pragma omp parallel for schedule(static) if (wide)
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * d;
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += xr[c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double z = xr[c] - mean;
      var += z * z;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = inv;
    double* nr = normalized.data() + r * d;
    double* o = out.data() + r * d;
    for (std::size_t c = 0; c < d; ++c) {
      const double xh = (xr[c] - mean) * inv;
      nr[c] = xh;
      o[c] = xh * gain[c] + bias[c];
    }
  }
}

}  // namespace parallel

Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix out;
  parallel::matmul(a, b, out);
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  Matrix out;
  parallel::matmul_nt(a, b, out);
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  Matrix out;
  parallel::matmul_tn(a, b, out);
  return out;
}

Matrix softmax_rows(const Matrix& x, const BoolMatrix* mask) {
  Matrix out;
  parallel::softmax_rows(x, mask, out);
  return out;
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace treeproj::kernels
