#pragma once

#include <span>

#include "treeproj/matrix.hpp"

// Dense kernels in two flavours: `serial` is the reference implementation,
// `parallel` splits output rows across OpenMP threads. Both accumulate every
// output element in the same order, so their results are bit-identical; the
// unqualified entry points dispatch to `parallel`.
namespace treeproj::kernels {

// Work (multiply-adds) below which the parallel variants stay single-threaded.
inline constexpr std::size_t kParallelWork = std::size_t{1} << 16;

namespace serial {
// out = a * b
void matmul(const Matrix& a, const Matrix& b, Matrix& out);
// out = a * b^T
void matmul_nt(const Matrix& a, const Matrix& b, Matrix& out);
// out = a^T * b
void matmul_tn(const Matrix& a, const Matrix& b, Matrix& out);
// Row softmax. Disallowed entries (mask false) get probability exactly 0.
void softmax_rows(const Matrix& x, const BoolMatrix* mask, Matrix& out);
// Row layer norm. `normalized` receives x_hat and `inv_std` 1/sigma per row.
void layer_norm_rows(const Matrix& x, std::span<const double> gain,
                     std::span<const double> bias, double eps, Matrix& out,
                     Matrix& normalized, std::span<double> inv_std);
}  // namespace serial

namespace parallel {
void matmul(const Matrix& a, const Matrix& b, Matrix& out);
void matmul_nt(const Matrix& a, const Matrix& b, Matrix& out);
void matmul_tn(const Matrix& a, const Matrix& b, Matrix& out);
void softmax_rows(const Matrix& x, const BoolMatrix* mask, Matrix& out);
void layer_norm_rows(const Matrix& x, std::span<const double> gain,
                     std::span<const double> bias, double eps, Matrix& out,
                     Matrix& normalized, std::span<double> inv_std);
}  // namespace parallel

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix softmax_rows(const Matrix& x, const BoolMatrix* mask = nullptr);

// Number of threads the parallel variants may use (1 without OpenMP).
int max_threads();

}  // namespace treeproj::kernels
