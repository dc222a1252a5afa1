#pragma once

#include <complex>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

namespace mfe::linalg {

using Vector = std::vector<double>;

/// Dense row-major matrix of finite doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> row_major);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix column(std::span<const double> v);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }
  Vector col(std::size_t c) const;

  const std::vector<double>& data() const noexcept { return data_; }
  std::vector<double>& data() noexcept { return data_; }

  Matrix transpose() const;
  double frobenius_norm() const;
  double max_abs() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator*(const Matrix& a, const Matrix& b);
Vector operator*(const Matrix& a, std::span<const double> x);
Matrix operator+(const Matrix& a, const Matrix& b);
Matrix operator-(const Matrix& a, const Matrix& b);
Matrix operator*(double s, const Matrix& a);

/// aᵀ·a without forming the transpose.
Matrix gram(const Matrix& a);
/// aᵀ·x.
Vector transpose_times(const Matrix& a, std::span<const double> x);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> v);
double norm_inf(std::span<const double> v);

/// Thin QR factors: q is m×n with orthonormal columns, r is n×n upper triangular
/// with a strictly positive diagonal.
struct QrFactors {
  Matrix q;
  Matrix r;
};

/// Householder QR of a tall matrix. Throws RankDeficient when some |r_kk| falls
/// below 1e-12·max|a|.
QrFactors qr_householder(const Matrix& a);

/// Least-squares solution of a·x ≈ y through Householder QR.
Vector lsq_solve(const Matrix& a, std::span<const double> y);

/// Solves r·x = b for upper-triangular r.
Vector back_substitute(const Matrix& r, std::span<const double> b);
/// Solves rᵀ·x = b for upper-triangular r.
Vector forward_substitute_transposed(const Matrix& r, std::span<const double> b);

/// Solves a symmetric positive-definite system via Cholesky. Returns false if a
/// is not numerically positive definite.
bool cholesky_solve(const Matrix& a, std::span<const double> b, Vector& x);

/// Dense LU with partial pivoting; throws RankDeficient on an exactly singular pivot.
Vector lu_solve(Matrix a, Vector b);

/// Eigenvalues of a square matrix (dimension ≤ 32) by Hessenberg reduction and
/// Francis double-shift QR. Throws NonConvergence past the iteration cap.
std::vector<std::complex<double>> eigenvalues(const Matrix& a);

inline constexpr double kDefaultRankTolerance = 1e-10;

/// Numerical rank: column-pivoted QR diagonal magnitudes above tol·max. Columns
/// are normalised to unit length first so the result ignores column scaling.
std::size_t rank(const Matrix& a, double tol = kDefaultRankTolerance);

using VectorFunction = std::function<Vector(std::span<const double>)>;

/// Central-difference Jacobian. A non-positive step selects the default
/// 1e-6·max(1, |x_i|) per coordinate.
Matrix fd_jacobian(const VectorFunction& f, std::span<const double> x, double step = 0.0);

}  // namespace mfe::linalg
