#pragma once

#include <cstddef>
#include <vector>

#include "ffmerge/model.hpp"
#include "ffmerge/tensor.hpp"

namespace ffmerge {

struct CorrelationMatrix {
  Matrix c;  // c(j, k): Pearson correlation of column j of xa with column k of xb
  std::vector<std::size_t> zero_variance_cols_a;
  std::vector<std::size_t> zero_variance_cols_b;
};

// Bijection on {0..d-1}; map[j] = π(j).
//
// Matrix form follows P[j, π(j)] = 1, so P·W picks row π(j) of W into row j
// and W·Pᵀ picks column π(j) of W into column j. Neither is ever built
// outside of tests; permutation is applied by index gather.
class Permutation {
 public:
  Permutation() = default;
  explicit Permutation(std::vector<std::size_t> map);  // throws DomainError unless bijective

  static Permutation identity(std::size_t n);

  std::size_t size() const noexcept { return map_.size(); }
  std::size_t operator[](std::size_t j) const { return map_[j]; }
  const std::vector<std::size_t>& map() const noexcept { return map_; }

  Permutation inverse() const;
  Matrix to_matrix() const;

  bool operator==(const Permutation&) const = default;

 private:
  std::vector<std::size_t> map_;
};

// Columns with zero population std get correlation 0 against everything.
CorrelationMatrix cross_correlation(const Matrix& xa, const Matrix& xb);

// Exact maximum-weight perfect matching: argmax over π of Σ_j c(j, π(j)).
// Shortest augmenting paths with dual potentials, O(d³).
Permutation solve_assignment(const Matrix& c);
Permutation solve_assignment(const CorrelationMatrix& c);

double assignment_total(const Matrix& c, const Permutation& pi);

Matrix permute_rows(const Matrix& w, const Permutation& pi);     // P·W
Matrix permute_columns(const Matrix& w, const Permutation& pi);  // W·Pᵀ
std::vector<float> permute_vector(const std::vector<float>& v, const Permutation& pi);

// (P·W_in, P·b_in, W_out·Pᵀ, b_out)
FFParams apply_permutation(const FFParams& ff, const Permutation& pi);
// (P·W_up, P·V_gate, W_down·Pᵀ)
SwigluFFParams apply_permutation_swiglu(const SwigluFFParams& ff, const Permutation& pi);

}  // namespace ffmerge
