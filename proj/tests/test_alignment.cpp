#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ffmerge/alignment.hpp"
#include "ffmerge/errors.hpp"
#include "ffmerge/fixtures.hpp"
#include "test_support.hpp"

using namespace ffmerge;
using namespace ffmerge::testing;

namespace {

// Column k of the result is column src[k] of x.
Matrix gather_columns(const Matrix& x, const std::vector<std::size_t>& src) {
  Matrix out(x.rows(), src.size());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t k = 0; k < src.size(); ++k) out(i, k) = x(i, src[k]);
  return out;
}

Matrix uniform_matrix(std::mt19937_64& rng, std::size_t d, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Matrix m(d, d);
  for (float& v : m.data()) v = static_cast<float>(dist(rng));
  return m;
}

}  // namespace

TEST_CASE("self-correlation has a unit diagonal") {
  std::mt19937_64 rng(1);
  const Matrix x = random_matrix(rng, 100, 7);
  const auto c = cross_correlation(x, x);
  for (std::size_t j = 0; j < 7; ++j) CHECK(c.c(j, j) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(c.zero_variance_cols_a.empty());
}

TEST_CASE("swapped columns are detected") {
  std::mt19937_64 rng(2);
  const Matrix x = random_matrix(rng, 100, 4);
  const auto c = cross_correlation(x, gather_columns(x, {1, 0, 2, 3}));
  CHECK(c.c(0, 1) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(c.c(1, 0) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(c.c(0, 0) < 0.5f);
}

TEST_CASE("cross_correlation matches a per-pair Pearson oracle") {
  std::mt19937_64 rng(3);
  const Matrix a = random_matrix(rng, 200, 6);
  Matrix b = random_matrix(rng, 200, 6);
  for (std::size_t i = 0; i < 200; ++i) b(i, 2) += 0.7f * a(i, 4);  // some real correlation
  const auto c = cross_correlation(a, b);
  for (std::size_t j = 0; j < 6; ++j)
    for (std::size_t k = 0; k < 6; ++k) CHECK(std::abs(c.c(j, k) - pearson(a, j, b, k)) <= 1e-6);
}

TEST_CASE("cross_correlation transpose symmetry and range") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix a = random_matrix(rng, 50, 9);
    const Matrix b = random_matrix(rng, 50, 9);
    const Matrix ab = cross_correlation(a, b).c;
    const Matrix ba = cross_correlation(b, a).c;
    CHECK(max_abs_diff(transpose(ab), ba) <= 1e-6);
    for (float v : ab.data()) CHECK(std::abs(v) <= 1 + 1e-6);
  }
}

TEST_CASE("zero-variance columns correlate to zero") {
  std::mt19937_64 rng(5);
  Matrix a = random_matrix(rng, 30, 4);
  Matrix b = random_matrix(rng, 30, 4);
  for (std::size_t i = 0; i < 30; ++i) {
    a(i, 1) = 2.5f;
    b(i, 3) = 0.0f;
  }
  const auto c = cross_correlation(a, b);
  CHECK(c.zero_variance_cols_a == std::vector<std::size_t>{1});
  CHECK(c.zero_variance_cols_b == std::vector<std::size_t>{3});
  for (std::size_t k = 0; k < 4; ++k) CHECK(c.c(1, k) == 0.0f);
  for (std::size_t j = 0; j < 4; ++j) CHECK(c.c(j, 3) == 0.0f);
}

TEST_CASE("cross_correlation errors") {
  CHECK_THROWS_AS(cross_correlation(Matrix(10, 3), Matrix(9, 3)), DimensionError);
  CHECK_THROWS_AS(cross_correlation(Matrix(10, 3), Matrix(10, 4)), DimensionError);
  CHECK_THROWS_AS(cross_correlation(Matrix(1, 3), Matrix(1, 3)), DomainError);
}

TEST_CASE("solve_assignment on two-by-two examples") {
  const Matrix keep{{0.9f, 0.1f}, {0.2f, 0.8f}};
  const Permutation a = solve_assignment(keep);
  CHECK(a == Permutation::identity(2));
  CHECK(assignment_total(keep, a) == doctest::Approx(1.7));

  const Matrix swap{{0.1f, 0.9f}, {0.8f, 0.2f}};
  const Permutation b = solve_assignment(swap);
  CHECK(b == Permutation({1, 0}));
  CHECK(assignment_total(swap, b) == doctest::Approx(1.7));
}

TEST_CASE("constant matrices still give a bijection") {
  for (std::size_t d : {1u, 3u, 10u}) {
    const Matrix c(d, d, 0.25f);
    const Permutation pi = solve_assignment(c);  // constructor validates the bijection
    CHECK(pi.size() == d);
    CHECK(assignment_total(c, pi) == doctest::Approx(0.25 * d));
  }
}

TEST_CASE("solver total equals the brute-force optimum") {
  std::mt19937_64 rng(6);
  for (std::size_t d = 1; d <= 8; ++d) {
    const int trials = d <= 6 ? 30 : 4;
    for (int trial = 0; trial < trials; ++trial) {
      const Matrix c = uniform_matrix(rng, d, -1.0, 1.0);
      CHECK(std::abs(assignment_total(c, solve_assignment(c)) - brute_force_assignment(c)) <= 1e-9);
    }
  }
}

TEST_CASE("solver handles heavy ties") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> level(0, 2);
  for (int trial = 0; trial < 30; ++trial) {
    Matrix c(6, 6);
    for (float& v : c.data()) v = 0.5f * float(level(rng));
    CHECK(std::abs(assignment_total(c, solve_assignment(c)) - brute_force_assignment(c)) <= 1e-9);
  }
}

TEST_CASE("planted permutations are recovered") {
  std::mt19937_64 rng(8);
  for (std::size_t d : {2u, 8u, 32u, 64u}) {
    for (int trial = 0; trial < 5; ++trial) {
      const Matrix x = random_matrix(rng, 500, d);
      const Permutation src = random_permutation(d, 1000 * d + trial);
      // Column k of xb is column src[k] of xa, so anchor column j lives at src⁻¹(j).
      const Permutation got = solve_assignment(cross_correlation(x, gather_columns(x, src.map())));
      CHECK(got == src.inverse());
    }
  }
}

TEST_CASE("solve_assignment rejects non-square input") {
  CHECK_THROWS_AS(solve_assignment(Matrix(2, 3)), DimensionError);
  CHECK(solve_assignment(Matrix(0, 0)).size() == 0);
}

TEST_CASE("Permutation") {
  CHECK_THROWS_AS(Permutation({0, 0}), DomainError);
  CHECK_THROWS_AS(Permutation({0, 2}), DomainError);
  const Permutation pi({2, 0, 1});
  CHECK(pi.inverse().map() == std::vector<std::size_t>{1, 2, 0});
  CHECK(pi.to_matrix() == Matrix{{0, 0, 1}, {1, 0, 0}, {0, 1, 0}});
}

TEST_CASE("gathers agree with the matrix convention") {
  std::mt19937_64 rng(9);
  const Permutation pi = random_permutation(5, 3);
  const Matrix p = pi.to_matrix();
  const Matrix w = random_matrix(rng, 5, 4);
  const auto pw = naive_matmul(p, w);
  const Matrix rows = permute_rows(w, pi);
  for (std::size_t i = 0; i < 20; ++i) CHECK(rows.data()[i] == pw[i]);

  const Matrix v = random_matrix(rng, 3, 5);
  const auto vpt = naive_matmul(v, transpose(p));
  const Matrix cols = permute_columns(v, pi);
  for (std::size_t i = 0; i < 15; ++i) CHECK(cols.data()[i] == vpt[i]);
}

TEST_CASE("apply_permutation") {
  std::mt19937_64 rng(10);
  const FFParams ff{random_matrix(rng, 3, 2), random_vector(rng, 3), random_matrix(rng, 2, 3),
                    random_vector(rng, 2)};

  SUBCASE("identity is bitwise unchanged") {
    const FFParams same = apply_permutation(ff, Permutation::identity(3));
    CHECK(same.w_in == ff.w_in);
    CHECK(same.b_in == ff.b_in);
    CHECK(same.w_out == ff.w_out);
    CHECK(same.b_out == ff.b_out);
  }
  SUBCASE("rows move as [r2, r0, r1]") {
    const FFParams p = apply_permutation(ff, Permutation({2, 0, 1}));
    const std::size_t src[3] = {2, 0, 1};
    for (std::size_t r = 0; r < 3; ++r) {
      for (std::size_t c = 0; c < 2; ++c) CHECK(p.w_in(r, c) == ff.w_in(src[r], c));
      CHECK(p.b_in[r] == ff.b_in[src[r]]);
      for (std::size_t o = 0; o < 2; ++o) CHECK(p.w_out(o, r) == ff.w_out(o, src[r]));
    }
    CHECK(p.b_out == ff.b_out);
  }
  SUBCASE("wrong length") {
    CHECK_THROWS_AS(apply_permutation(ff, Permutation::identity(4)), DimensionError);
  }
}

TEST_CASE("π then π⁻¹ restores parameters bitwise") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const FFParams ff{random_matrix(rng, 16, 8), random_vector(rng, 16), random_matrix(rng, 8, 16),
                      random_vector(rng, 8)};
    const Permutation pi = random_permutation(16, trial);
    const FFParams back = apply_permutation(apply_permutation(ff, pi), pi.inverse());
    CHECK(back.w_in == ff.w_in);
    CHECK(back.b_in == ff.b_in);
    CHECK(back.w_out == ff.w_out);

    const SwigluFFParams sw{random_matrix(rng, 16, 8), random_matrix(rng, 16, 8),
                            random_matrix(rng, 8, 16)};
    const SwigluFFParams sback = apply_permutation_swiglu(apply_permutation_swiglu(sw, pi), pi.inverse());
    CHECK(sback.w_up == sw.w_up);
    CHECK(sback.v_gate == sw.v_gate);
    CHECK(sback.w_down == sw.w_down);
  }
}

TEST_CASE("permuted FFs compute the same function") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    const FFParams ff{random_matrix(rng, 32, 8), random_vector(rng, 32), random_matrix(rng, 8, 32),
                      random_vector(rng, 8)};
    const SwigluFFParams sw{random_matrix(rng, 32, 8), random_matrix(rng, 32, 8),
                            random_matrix(rng, 8, 32)};
    const Permutation pi = random_permutation(32, 50 + trial);
    const FFParams pff = apply_permutation(ff, pi);
    const SwigluFFParams psw = apply_permutation_swiglu(sw, pi);
    for (int x_trial = 0; x_trial < 100; ++x_trial) {
      const auto x = random_vector(rng, 8);
      for (auto act : {Activation::relu, Activation::gelu})
        CHECK(max_abs(ff_forward(pff, x, act).y, ff_forward(ff, x, act).y) <= 1e-5);
      CHECK(max_abs(swiglu_forward(psw, x).y, swiglu_forward(sw, x).y) <= 1e-5);
    }
  }
}

TEST_CASE("swiglu π = [1, 0] swaps up and gate rows") {
  const SwigluFFParams sw{Matrix{{1, 2}, {3, 4}}, Matrix{{5, 6}, {7, 8}}, Matrix{{1, 2}, {3, 4}}};
  const SwigluFFParams p = apply_permutation_swiglu(sw, Permutation({1, 0}));
  CHECK(p.w_up == Matrix{{3, 4}, {1, 2}});
  CHECK(p.v_gate == Matrix{{7, 8}, {5, 6}});
  CHECK(p.w_down == Matrix{{2, 1}, {4, 3}});
  CHECK(apply_permutation_swiglu(sw, Permutation::identity(2)).w_up == sw.w_up);
}
