#include <algorithm>
#include <cmath>
#include <complex>

#include "doctest.h"
#include "mfe/error.hpp"
#include "mfe/linalg.hpp"
#include "mfe/rng.hpp"
#include "oracles.hpp"

using namespace mfe;
using namespace mfe::linalg;

namespace {

Matrix random_matrix(std::size_t m, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Matrix a(m, n);
  for (double& v : a.data()) v = rng.uniform(-1.0, 1.0);
  return a;
}

std::vector<std::complex<double>> sorted(std::vector<std::complex<double>> v) {
  std::sort(v.begin(), v.end(), [](auto a, auto b) {
    if (std::fabs(a.real() - b.real()) > 1e-9) return a.real() < b.real();
    return a.imag() < b.imag();
  });
  return v;
}

}  // namespace

TEST_CASE("qr of the identity is trivial") {
  const auto f = qr_householder(Matrix::identity(2));
  CHECK(f.q.max_abs() == doctest::Approx(1.0));
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      CHECK(f.q(i, j) == doctest::Approx(i == j ? 1.0 : 0.0));
      CHECK(f.r(i, j) == doctest::Approx(i == j ? 1.0 : 0.0));
    }
}

TEST_CASE("qr of a single column") {
  const auto f = qr_householder(Matrix{{3.0}, {4.0}});
  CHECK(f.q(0, 0) == doctest::Approx(0.6).epsilon(1e-14));
  CHECK(f.q(1, 0) == doctest::Approx(0.8).epsilon(1e-14));
  CHECK(f.r(0, 0) == doctest::Approx(5.0).epsilon(1e-14));
}

TEST_CASE("qr reconstructs a small Vandermonde matrix") {
  const Matrix a{{1, 0}, {1, 1}, {1, 2}};
  const auto f = qr_householder(a);
  const Matrix qtq = gram(f.q);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) CHECK(std::fabs(qtq(i, j) - (i == j)) < 1e-12);
  CHECK((f.q * f.r - a).max_abs() < 1e-12);
  CHECK(f.r(0, 0) > 0.0);
  CHECK(f.r(1, 1) > 0.0);
}

TEST_CASE("qr reconstruction property on random tall matrices") {
  const std::size_t shapes[][2] = {{5, 3}, {20, 20}, {60, 17}, {200, 70}};
  std::uint64_t seed = 11;
  for (const auto& s : shapes) {
    const Matrix a = random_matrix(s[0], s[1], seed++);
    const auto f = qr_householder(a);
    CHECK((f.q * f.r - a).frobenius_norm() <= 1e-10 * a.frobenius_norm());
    const Matrix qtq = gram(f.q);
    double worst = 0.0;
    for (std::size_t i = 0; i < qtq.rows(); ++i)
      for (std::size_t j = 0; j < qtq.cols(); ++j)
        worst = std::max(worst, std::fabs(qtq(i, j) - (i == j ? 1.0 : 0.0)));
    CHECK(worst < 1e-10);
    for (std::size_t k = 0; k < f.r.rows(); ++k) {
      CHECK(f.r(k, k) > 0.0);
      for (std::size_t j = 0; j < k; ++j) CHECK(f.r(k, j) == 0.0);
    }
  }
}

TEST_CASE("qr rejects rank-deficient input") {
  const Matrix a{{1, 2}, {2, 4}, {3, 6}};
  try {
    qr_householder(a);
    FAIL("expected RankDeficient");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::RankDeficient);
  }
  CHECK_THROWS_AS(lsq_solve(a, Vector{1, 2, 3}), Error);
}

TEST_CASE("lsq_solve exact cases") {
  const Vector line = lsq_solve(Matrix{{1, 0}, {1, 1}, {1, 2}}, Vector{0, 1, 2});
  CHECK(std::fabs(line[0]) < 1e-14);
  CHECK(line[1] == doctest::Approx(1.0).epsilon(1e-14));

  const Vector id = lsq_solve(Matrix::identity(3), Vector{5, -2, 7});
  CHECK(id[0] == doctest::Approx(5.0));
  CHECK(id[1] == doctest::Approx(-2.0));
  CHECK(id[2] == doctest::Approx(7.0));
}

TEST_CASE("lsq_solve matches the normal-equations oracle") {
  const Matrix a = random_matrix(20, 5, 2024);
  Rng rng(7);
  Vector y(20);
  for (double& v : y) v = rng.uniform(-3.0, 3.0);
  const Vector qr_sol = lsq_solve(a, y);
  const Vector ne_sol = oracle::normal_equations_solve(a, y);
  for (std::size_t i = 0; i < 5; ++i) CHECK(std::fabs(qr_sol[i] - ne_sol[i]) < 1e-8);
}

TEST_CASE("lsq_solve residual is orthogonal to the columns") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const Matrix a = random_matrix(40 + seed, 8, seed);
    Rng rng(seed + 100);
    Vector y(a.rows());
    for (double& v : y) v = rng.uniform(-5.0, 5.0);
    const Vector x = lsq_solve(a, y);
    Vector res = a * x;
    for (std::size_t i = 0; i < res.size(); ++i) res[i] -= y[i];
    CHECK(norm_inf(transpose_times(a, res)) <= 1e-8 * norm_inf(transpose_times(a, y)));
  }
}

TEST_CASE("eigenvalues of simple matrices") {
  SUBCASE("diagonal") {
    const auto ev = sorted(eigenvalues(Matrix{{-1, 0, 0}, {0, -2, 0}, {0, 0, -3}}));
    CHECK(ev[0].real() == doctest::Approx(-3.0));
    CHECK(ev[1].real() == doctest::Approx(-2.0));
    CHECK(ev[2].real() == doctest::Approx(-1.0));
    for (auto e : ev) CHECK(e.imag() == 0.0);
  }
  SUBCASE("rotation generator") {
    const auto ev = sorted(eigenvalues(Matrix{{0, 1}, {-1, 0}}));
    CHECK(std::fabs(ev[0].real()) < 1e-14);
    CHECK(ev[0].imag() == doctest::Approx(-1.0));
    CHECK(ev[1].imag() == doctest::Approx(1.0));
  }
  SUBCASE("companion of l^2 - 3l + 2") {
    const auto ev = sorted(eigenvalues(Matrix{{3, -2}, {1, 0}}));
    CHECK(ev[0].real() == doctest::Approx(1.0));
    CHECK(ev[1].real() == doctest::Approx(2.0));
  }
}

TEST_CASE("eigenvalues of symmetric matrices are real") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Matrix a = random_matrix(8, 8, seed);
    a = a + a.transpose();
    for (auto e : eigenvalues(a)) CHECK(std::fabs(e.imag()) < 1e-10);
  }
}

TEST_CASE("eigenvalues shift with the diagonal") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Matrix a = random_matrix(8, 8, seed * 31);
    const double c = 0.75 * static_cast<double>(seed) - 3.0;
    const Matrix shifted = a + c * Matrix::identity(8);
    auto base = sorted(eigenvalues(a));
    for (auto& e : base) e += c;
    base = sorted(base);
    const auto moved = sorted(eigenvalues(shifted));
    for (std::size_t i = 0; i < 8; ++i) CHECK(std::abs(base[i] - moved[i]) < 1e-8);
  }
}

TEST_CASE("eigenvalues match the characteristic polynomial trace and determinant") {
  const Matrix a = random_matrix(6, 6, 99);
  const auto ev = eigenvalues(a);
  std::complex<double> sum = 0.0;
  for (auto e : ev) sum += e;
  double trace = 0.0;
  for (std::size_t i = 0; i < 6; ++i) trace += a(i, i);
  CHECK(sum.real() == doctest::Approx(trace).epsilon(1e-10));
  CHECK(std::fabs(sum.imag()) < 1e-10);
  std::complex<double> prod = 1.0;
  for (auto e : ev) prod *= e;
  CHECK(prod.real() == doctest::Approx(oracle::determinant(a)).epsilon(1e-9));
}

TEST_CASE("rank examples") {
  CHECK(rank(Matrix::identity(8)) == 8);
  CHECK(rank(Matrix(3, 3, 1.0)) == 1);
  // Controllability matrix of A = ((0,1),(0,0)), B = (0,1)ᵀ: columns B and AB.
  CHECK(rank(Matrix{{0, 1}, {1, 0}}) == 2);
  CHECK(rank(Matrix(4, 3, 0.0)) == 0);
}

TEST_CASE("rank is invariant under row permutation and column scaling") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    // 8×6 matrix of rank 4 built as a product of thin factors.
    const Matrix a = random_matrix(8, 4, seed) * random_matrix(4, 6, seed + 50);
    REQUIRE(rank(a) == 4);
    Matrix permuted(8, 6);
    for (std::size_t r = 0; r < 8; ++r)
      for (std::size_t c = 0; c < 6; ++c) permuted(r, c) = a((r * 3 + 1) % 8, c);
    CHECK(rank(permuted) == 4);
    Matrix scaled = a;
    for (std::size_t r = 0; r < 8; ++r)
      for (std::size_t c = 0; c < 6; ++c) scaled(r, c) *= std::pow(10.0, static_cast<double>(c) - 3.0);
    CHECK(rank(scaled) == 4);
  }
}

TEST_CASE("fd_jacobian examples") {
  SUBCASE("square and identity components") {
    const Matrix j = fd_jacobian([](std::span<const double> x) { return Vector{x[0] * x[0], x[1]}; },
                                 Vector{3.0, 5.0}, 1e-5);
    CHECK(std::fabs(j(0, 0) - 6.0) < 1e-6);
    CHECK(std::fabs(j(0, 1)) < 1e-6);
    CHECK(std::fabs(j(1, 0)) < 1e-6);
    CHECK(std::fabs(j(1, 1) - 1.0) < 1e-6);
  }
  SUBCASE("linear map is recovered for any step") {
    const Matrix m{{1.5, -2.0, 0.25}, {0.0, 3.0, -1.0}};
    for (double step : {1e-6, 1e-3, 0.5, 0.0}) {
      const Matrix j = fd_jacobian([&](std::span<const double> x) { return m * x; },
                                   Vector{0.3, -0.7, 2.0}, step);
      CHECK((j - m).max_abs() < 1e-9);
    }
  }
  SUBCASE("sine at zero") {
    const Matrix j =
        fd_jacobian([](std::span<const double> x) { return Vector{std::sin(x[0])}; }, Vector{0.0});
    CHECK(std::fabs(j(0, 0) - 1.0) < 1e-8);
  }
  SUBCASE("non-finite probes are reported") {
    try {
      fd_jacobian([](std::span<const double> x) { return Vector{std::log(x[0])}; }, Vector{0.0}, 1e-3);
      FAIL("expected NonFiniteEvaluation");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::NonFiniteEvaluation);
    }
  }
}

TEST_CASE("matrix construction rejects non-finite entries") {
  CHECK_THROWS_AS(Matrix(1, 2, std::vector<double>{1.0, std::nan("")}), Error);
  CHECK_THROWS_AS(Matrix(2, 2, std::vector<double>{1.0, 2.0, 3.0}), Error);
}
