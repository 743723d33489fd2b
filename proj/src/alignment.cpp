#include "ffmerge/alignment.hpp"

#include <cmath>
#include <limits>

#include "ffmerge/errors.hpp"

namespace ffmerge {

Permutation::Permutation(std::vector<std::size_t> map) : map_(std::move(map)) {
  std::vector<bool> seen(map_.size(), false);
  for (std::size_t v : map_) {
    if (v >= map_.size() || seen[v]) throw DomainError("permutation map is not a bijection");
    seen[v] = true;
  }
}

Permutation Permutation::identity(std::size_t n) {
  std::vector<std::size_t> map(n);
  for (std::size_t i = 0; i < n; ++i) map[i] = i;
  return Permutation(std::move(map));
}

Permutation Permutation::inverse() const {
  std::vector<std::size_t> inv(map_.size());
  for (std::size_t j = 0; j < map_.size(); ++j) inv[map_[j]] = j;
  return Permutation(std::move(inv));
}

Matrix Permutation::to_matrix() const {
  Matrix p(map_.size(), map_.size());
  for (std::size_t j = 0; j < map_.size(); ++j) p(j, map_[j]) = 1.0f;
  return p;
}

CorrelationMatrix cross_correlation(const Matrix& xa, const Matrix& xb) {
  if (xa.rows() != xb.rows()) {
    throw DimensionError("cross_correlation row mismatch: " + xa.shape_string() + " vs " +
                         xb.shape_string());
  }
  if (xa.cols() != xb.cols()) {
    throw DimensionError("cross_correlation width mismatch: " + xa.shape_string() + " vs " +
                         xb.shape_string());
  }
  if (xa.rows() < 2) throw DomainError("cross_correlation needs at least 2 rows");

  const std::size_t n = xa.rows();
  const std::size_t d = xa.cols();
  const ColumnStats sa = column_stats(xa);
  const ColumnStats sb = column_stats(xb);

  // Standardized columns, stored column-major for the inner product.
  auto standardize = [&](const Matrix& x, const ColumnStats& s, std::vector<std::size_t>& dead) {
    std::vector<double> z(n * d, 0.0);
    for (std::size_t j = 0; j < d; ++j) {
      if (s.stds[j] == 0.0) {
        dead.push_back(j);
        continue;
      }
      for (std::size_t i = 0; i < n; ++i) z[j * n + i] = (x(i, j) - s.means[j]) / s.stds[j];
    }
    return z;
  };

  CorrelationMatrix out{Matrix(d, d), {}, {}};
  const auto za = standardize(xa, sa, out.zero_variance_cols_a);
  const auto zb = standardize(xb, sb, out.zero_variance_cols_b);
  for (std::size_t j = 0; j < d; ++j) {
    if (sa.stds[j] == 0.0) continue;
    const double* a = za.data() + j * n;
    for (std::size_t k = 0; k < d; ++k) {
      if (sb.stds[k] == 0.0) continue;
      const double* b = zb.data() + k * n;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
      out.c(j, k) = static_cast<float>(acc / double(n));
    }
  }
  return out;
}

Permutation solve_assignment(const Matrix& c) {
  if (c.rows() != c.cols()) {
    throw DimensionError("assignment needs a square matrix, got " + c.shape_string());
  }
  const std::size_t n = c.rows();
  if (n == 0) return Permutation();

  // Minimize cost = -c. Rows and columns are 1-based; index 0 is the virtual
  // start column of each augmenting path.
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
  std::vector<double> min_slack(n + 1);
  std::vector<bool> used(n + 1);

  for (std::size_t row = 1; row <= n; ++row) {
    match[0] = row;
    std::size_t col0 = 0;
    std::fill(min_slack.begin(), min_slack.end(), inf);
    std::fill(used.begin(), used.end(), false);
    do {
      used[col0] = true;
      const std::size_t i0 = match[col0];
      double delta = inf;
      std::size_t col1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = -double(c(i0 - 1, j - 1)) - u[i0] - v[j];
        if (cur < min_slack[j]) {
          min_slack[j] = cur;
          way[j] = col0;
        }
        if (min_slack[j] < delta) {
          delta = min_slack[j];
          col1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          min_slack[j] -= delta;
        }
      }
      col0 = col1;
    } while (match[col0] != 0);
    do {
      const std::size_t col1 = way[col0];
      match[col0] = match[col1];
      col0 = col1;
    } while (col0 != 0);
  }

  std::vector<std::size_t> map(n);
  for (std::size_t j = 1; j <= n; ++j) map[match[j] - 1] = j - 1;
  return Permutation(std::move(map));
}

Permutation solve_assignment(const CorrelationMatrix& c) { return solve_assignment(c.c); }

double assignment_total(const Matrix& c, const Permutation& pi) {
  if (c.rows() != pi.size() || c.cols() != pi.size()) {
    throw DimensionError("assignment_total: permutation of length " + std::to_string(pi.size()) +
                         " against " + c.shape_string());
  }
  double total = 0.0;
  for (std::size_t j = 0; j < pi.size(); ++j) total += c(j, pi[j]);
  return total;
}

Matrix permute_rows(const Matrix& w, const Permutation& pi) {
  if (w.rows() != pi.size()) {
    throw DimensionError("permute_rows: permutation of length " + std::to_string(pi.size()) +
                         " against " + w.shape_string());
  }
  Matrix out(w.rows(), w.cols());
  for (std::size_t j = 0; j < pi.size(); ++j) {
    auto src = w.row(pi[j]);
    std::copy(src.begin(), src.end(), out.row(j).begin());
  }
  return out;
}

Matrix permute_columns(const Matrix& w, const Permutation& pi) {
  if (w.cols() != pi.size()) {
    throw DimensionError("permute_columns: permutation of length " + std::to_string(pi.size()) +
                         " against " + w.shape_string());
  }
  Matrix out(w.rows(), w.cols());
  for (std::size_t r = 0; r < w.rows(); ++r)
    for (std::size_t j = 0; j < pi.size(); ++j) out(r, j) = w(r, pi[j]);
  return out;
}

std::vector<float> permute_vector(const std::vector<float>& v, const Permutation& pi) {
  if (v.size() != pi.size()) {
    throw DimensionError("permute_vector: permutation of length " + std::to_string(pi.size()) +
                         " against vector of length " + std::to_string(v.size()));
  }
  std::vector<float> out(v.size());
  for (std::size_t j = 0; j < pi.size(); ++j) out[j] = v[pi[j]];
  return out;
}

FFParams apply_permutation(const FFParams& ff, const Permutation& pi) {
  ff.check_shapes();
  if (pi.size() != ff.w_in.rows()) {
    throw DimensionError("permutation of length " + std::to_string(pi.size()) +
                         " does not match d_ff " + std::to_string(ff.w_in.rows()));
  }
  return {permute_rows(ff.w_in, pi), permute_vector(ff.b_in, pi), permute_columns(ff.w_out, pi),
          ff.b_out};
}

SwigluFFParams apply_permutation_swiglu(const SwigluFFParams& ff, const Permutation& pi) {
  ff.check_shapes();
  if (pi.size() != ff.w_up.rows()) {
    throw DimensionError("permutation of length " + std::to_string(pi.size()) +
                         " does not match d_ff " + std::to_string(ff.w_up.rows()));
  }
  return {permute_rows(ff.w_up, pi), permute_rows(ff.v_gate, pi), permute_columns(ff.w_down, pi)};
}

}  // namespace ffmerge
