#include "ffmerge/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "ffmerge/errors.hpp"

namespace ffmerge {

const char* to_string(ParseErrorKind kind) {
  switch (kind) {
    case ParseErrorKind::bad_magic: return "bad magic";
    case ParseErrorKind::truncated_header: return "truncated header";
    case ParseErrorKind::bad_header: return "malformed header";
    case ParseErrorKind::truncated_data: return "truncated data region";
    case ParseErrorKind::alias_missing: return "alias target missing";
    case ParseErrorKind::alias_chain: return "alias chain";
    case ParseErrorKind::shape_length_mismatch: return "shape/length mismatch";
  }
  return "unknown";
}

ParseError::ParseError(ParseErrorKind kind, std::uint64_t position, const std::string& what)
    : std::runtime_error(std::string(to_string(kind)) + " at byte " + std::to_string(position) +
                         ": " + what),
      kind_(kind),
      position_(position) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, float fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw DimensionError("matrix data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_string());
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<float>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw DimensionError("ragged matrix literal");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0f;
  return m;
}

Matrix Matrix::row_vector(std::span<const float> values) {
  return Matrix(1, values.size(), std::vector<float>(values.begin(), values.end()));
}

std::string Matrix::shape_string() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul shape mismatch: " + a.shape_string() + " times " +
                         b.shape_string());
  }
  Matrix out(a.rows(), b.cols());
  std::vector<double> acc(b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) acc[j] += aik * brow[j];
    }
    auto orow = out.row(i);
    for (std::size_t j = 0; j < b.cols(); ++j) orow[j] = static_cast<float>(acc[j]);
  }
  return out;
}

Matrix matmul_transposed(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul shape mismatch: " + a.shape_string() + " times transpose of " +
                         b.shape_string());
  }
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto arow = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      auto brow = b.row(j);
      double acc = 0.0;
      for (std::size_t k = 0; k < arow.size(); ++k) acc += double(arow[k]) * brow[k];
      out(i, j) = static_cast<float>(acc);
    }
  }
  return out;
}

Matrix transpose(const Matrix& x) {
  Matrix out(x.cols(), x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out(j, i) = x(i, j);
  return out;
}

std::vector<float> matvec(const Matrix& w, std::span<const float> x) {
  if (w.cols() != x.size()) {
    throw DimensionError("matvec shape mismatch: " + w.shape_string() + " times vector of length " +
                         std::to_string(x.size()));
  }
  std::vector<float> y(w.rows());
  for (std::size_t i = 0; i < w.rows(); ++i) {
    auto wrow = w.row(i);
    double acc = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) acc += double(wrow[k]) * x[k];
    y[i] = static_cast<float>(acc);
  }
  return y;
}

ColumnStats column_stats(const Matrix& x) {
  if (x.rows() == 0 || x.cols() == 0) {
    throw DomainError("column_stats of empty matrix " + x.shape_string());
  }
  const std::size_t n = x.rows();
  ColumnStats stats{std::vector<double>(x.cols(), 0.0), std::vector<double>(x.cols(), 0.0)};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) stats.means[j] += x(i, j);
  for (auto& m : stats.means) m /= double(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) {
      const double d = x(i, j) - stats.means[j];
      stats.stds[j] += d * d;
    }
  for (auto& s : stats.stds) s = std::sqrt(s / double(n));
  return stats;
}

double frobenius_norm(const Matrix& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += double(v) * v;
  return std::sqrt(acc);
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError("max_abs_diff shape mismatch: " + a.shape_string() + " vs " +
                         b.shape_string());
  }
  double worst = 0.0;
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i)
    worst = std::max(worst, std::abs(double(da[i]) - double(db[i])));
  return worst;
}

bool all_finite(const Matrix& x) noexcept {
  for (float v : x.data())
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace ffmerge
