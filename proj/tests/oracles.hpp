#pragma once

// Independent reference computations used only by the test suites. Nothing
// here calls into the library's QR, LM or Sobol code paths.

#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "mfe/linalg.hpp"

namespace oracle {

using mfe::linalg::Matrix;
using mfe::linalg::Vector;

/// Gauss-Jordan inverse with partial pivoting.
inline Matrix invert(const Matrix& a) {
  const std::size_t n = a.rows();
  std::vector<std::vector<double>> aug(n, std::vector<double>(2 * n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) aug[i][j] = a(i, j);
    aug[i][n + i] = 1.0;
  }
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::fabs(aug[r][c]) > std::fabs(aug[piv][c])) piv = r;
    std::swap(aug[c], aug[piv]);
    const double d = aug[c][c];
    for (double& v : aug[c]) v /= d;
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const double f = aug[r][c];
      if (f == 0.0) continue;
      for (std::size_t k = 0; k < 2 * n; ++k) aug[r][k] -= f * aug[c][k];
    }
  }
  Matrix inv(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) inv(i, j) = aug[i][n + j];
  return inv;
}

/// (AᵀA)⁻¹Aᵀy with every product written out explicitly.
inline Vector normal_equations_solve(const Matrix& a, const Vector& y) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  Matrix ata(n, n);
  Vector aty(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < m; ++r) s += a(r, i) * a(r, j);
      ata(i, j) = s;
    }
    for (std::size_t r = 0; r < m; ++r) aty[i] += a(r, i) * y[r];
  }
  const Matrix inv = invert(ata);
  Vector x(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) x[i] += inv(i, j) * aty[j];
  return x;
}

/// Determinant by Gaussian elimination.
inline double determinant(Matrix a) {
  const std::size_t n = a.rows();
  double det = 1.0;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::fabs(a(r, c)) > std::fabs(a(piv, c))) piv = r;
    if (a(piv, c) == 0.0) return 0.0;
    if (piv != c) {
      for (std::size_t k = 0; k < n; ++k) std::swap(a(c, k), a(piv, k));
      det = -det;
    }
    det *= a(c, c);
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a(r, c) / a(c, c);
      for (std::size_t k = c; k < n; ++k) a(r, k) -= f * a(c, k);
    }
  }
  return det;
}

/// Number of 4-tuples in the exponent box with Σj ≤ d and j_i ≤ caps[i].
inline std::size_t brute_force_term_count(int d, const int caps[4]) {
  std::size_t count = 0;
  for (int a = 0; a <= caps[0]; ++a)
    for (int b = 0; b <= caps[1]; ++b)
      for (int c = 0; c <= caps[2]; ++c)
        for (int e = 0; e <= caps[3]; ++e)
          if (a + b + c + e <= d) ++count;
  return count;
}

}  // namespace oracle
