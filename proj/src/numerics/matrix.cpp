#include "treeproj/matrix.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iostream>

#include "treeproj/error.hpp"

namespace treeproj {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  expect(data_.size() == rows_ * cols_, "Matrix: data length must equal rows * cols");
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    expect(r.size() == cols_, "Matrix: ragged initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

void Matrix::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

Matrix Matrix::slice_rows(std::size_t begin, std::size_t end) const {
  expect(begin <= end && end <= rows_, "Matrix::slice_rows: range out of bounds");
  Matrix out(end - begin, cols_);
  std::copy(data_.begin() + static_cast<std::ptrdiff_t>(begin * cols_),
            data_.begin() + static_cast<std::ptrdiff_t>(end * cols_), out.data_.begin());
  return out;
}

bool BoolMatrix::all() const {
  return std::all_of(data_.begin(), data_.end(), [](std::uint8_t v) { return v != 0; });
}

bool BoolMatrix::every_row_nonempty() const {
  for (std::size_t r = 0; r < rows_; ++r) {
    bool any = false;
    for (std::size_t c = 0; c < cols_ && !any; ++c) any = (*this)(r, c);
    if (!any) return false;
  }
  return true;
}

BoolMatrix BoolMatrix::square_slice(std::size_t begin, std::size_t end) const {
  expect(begin <= end && end <= rows_ && end <= cols_, "BoolMatrix::square_slice: out of bounds");
  BoolMatrix out(end - begin, end - begin, false);
  for (std::size_t r = begin; r < end; ++r)
    for (std::size_t c = begin; c < end; ++c) out.set(r - begin, c - begin, (*this)(r, c));
  return out;
}

BoolMatrix BoolMatrix::operator&(const BoolMatrix& other) const {
  expect(rows_ == other.rows_ && cols_ == other.cols_, "BoolMatrix: shape mismatch in &");
  BoolMatrix out(rows_, cols_, false);
  for (std::size_t i = 0; i < data_.size(); ++i) out.data_[i] = data_[i] & other.data_[i];
  return out;
}

double dot(std::span<const double> x, std::span<const double> y) {
  expect(x.size() == y.size(), "dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

double l2_distance(std::span<const double> x, std::span<const double> y) {
  expect(x.size() == y.size(), "l2_distance: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    s += d * d;
  }
  return std::sqrt(s);
}

namespace {
std::atomic<bool> g_degenerate_reported{false};
}

double cosine_distance(std::span<const double> x, std::span<const double> y) {
  expect(x.size() == y.size(), "cosine_distance: length mismatch");
  double xy = 0.0, xx = 0.0, yy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    xy += x[i] * y[i];
    xx += x[i] * x[i];
    yy += y[i] * y[i];
  }
  const double nx = std::sqrt(xx);
  const double ny = std::sqrt(yy);
  if (nx < 1e-12 || ny < 1e-12) {
    if (!g_degenerate_reported.exchange(true))
      std::cerr << "warning: cosine_distance on a near-zero vector; using distance 1.0\n";
    return 1.0;
  }
  // sqrt(xx * yy) rather than nx * ny: for x == y this is exactly xx, so the
  // distance of a vector to itself is exactly 0.
  const double cosine = xy / std::sqrt(xx * yy);
  return std::clamp(1.0 - cosine, 0.0, 2.0);
}

}  // namespace treeproj
