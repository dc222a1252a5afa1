#include "mfe/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mfe/error.hpp"

namespace mfe::linalg {

namespace {

void require_finite(const std::vector<double>& data) {
  for (double v : data) {
    if (!std::isfinite(v)) throw Error(ErrorKind::InvalidArgument, "matrix entries must be finite");
  }
}

double sign_of(double magnitude, double reference) {
  return reference >= 0.0 ? std::fabs(magnitude) : -std::fabs(magnitude);
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {
  if (!std::isfinite(fill)) throw Error(ErrorKind::InvalidArgument, "matrix fill must be finite");
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> row_major)
    : rows_(rows), cols_(cols), data_(std::move(row_major)) {
  if (data_.size() != rows * cols) {
    throw Error(ErrorKind::ShapeMismatch, "matrix data size does not match rows*cols");
  }
  require_finite(data_);
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ ? rows.begin()->size() : 0;
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw Error(ErrorKind::ShapeMismatch, "ragged matrix literal");
    data_.insert(data_.end(), r.begin(), r.end());
  }
  require_finite(data_);
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::column(std::span<const double> v) {
  return Matrix(v.size(), 1, std::vector<double>(v.begin(), v.end()));
}

Vector Matrix::col(std::size_t c) const {
  Vector out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
  return out;
}

Matrix Matrix::transpose() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

double Matrix::frobenius_norm() const { return norm2(data_); }

double Matrix::max_abs() const { return norm_inf(data_); }

Matrix operator*(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw Error(ErrorKind::ShapeMismatch, "matrix product");
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto crow = c.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

Vector operator*(const Matrix& a, std::span<const double> x) {
  if (a.cols() != x.size()) throw Error(ErrorKind::ShapeMismatch, "matrix-vector product");
  Vector y(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) y[i] = dot(a.row(i), x);
  return y;
}

Matrix operator+(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error(ErrorKind::ShapeMismatch, "sum");
  Matrix c = a;
  for (std::size_t i = 0; i < c.data().size(); ++i) c.data()[i] += b.data()[i];
  return c;
}

Matrix operator-(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error(ErrorKind::ShapeMismatch, "difference");
  Matrix c = a;
  for (std::size_t i = 0; i < c.data().size(); ++i) c.data()[i] -= b.data()[i];
  return c;
}

Matrix operator*(double s, const Matrix& a) {
  Matrix c = a;
  for (double& v : c.data()) v *= s;
  return c;
}

Matrix gram(const Matrix& a) {
  const std::size_t n = a.cols();
  Matrix g(n, n);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    auto row = a.row(r);
    for (std::size_t i = 0; i < n; ++i) {
      const double ri = row[i];
      if (ri == 0.0) continue;
      for (std::size_t j = i; j < n; ++j) g(i, j) += ri * row[j];
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j) g(i, j) = g(j, i);
  return g;
}

Vector transpose_times(const Matrix& a, std::span<const double> x) {
  if (a.rows() != x.size()) throw Error(ErrorKind::ShapeMismatch, "transpose product");
  Vector y(a.cols(), 0.0);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const double xr = x[r];
    if (xr == 0.0) continue;
    auto row = a.row(r);
    for (std::size_t c = 0; c < a.cols(); ++c) y[c] += row[c] * xr;
  }
  return y;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> v) {
  // Scaled accumulation avoids overflow for large entries.
  double scale = 0.0;
  double ssq = 1.0;
  for (double x : v) {
    if (x == 0.0) continue;
    const double ax = std::fabs(x);
    if (scale < ax) {
      ssq = 1.0 + ssq * (scale / ax) * (scale / ax);
      scale = ax;
    } else {
      ssq += (ax / scale) * (ax / scale);
    }
  }
  return scale * std::sqrt(ssq);
}

double norm_inf(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::fabs(x));
  return m;
}

QrFactors qr_householder(const Matrix& a) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  if (m == 0 || n == 0) throw Error(ErrorKind::InvalidArgument, "qr of an empty matrix");
  if (m < n) throw Error(ErrorKind::InvalidArgument, "qr requires rows >= cols");

  const double tol = 1e-12 * a.max_abs();
  Matrix work = a;
  std::vector<Vector> reflectors;
  reflectors.reserve(n);
  Vector diag(n);

  for (std::size_t k = 0; k < n; ++k) {
    Vector v(m - k);
    for (std::size_t i = k; i < m; ++i) v[i - k] = work(i, k);
    const double xnorm = norm2(v);
    if (xnorm <= tol) {
      throw Error(ErrorKind::RankDeficient,
                  "column " + std::to_string(k) + " is numerically dependent on earlier columns");
    }
    const double alpha = -sign_of(xnorm, v[0]);
    v[0] -= alpha;
    const double vnorm = norm2(v);
    for (double& x : v) x /= vnorm;
    diag[k] = alpha;

    // work(k:, k+1:) -= 2 v (vᵀ work)
    for (std::size_t j = k + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t i = k; i < m; ++i) s += v[i - k] * work(i, j);
      s *= 2.0;
      for (std::size_t i = k; i < m; ++i) work(i, j) -= s * v[i - k];
    }
    reflectors.push_back(std::move(v));
  }

  QrFactors f{Matrix(m, n), Matrix(n, n)};
  for (std::size_t i = 0; i < n; ++i) {
    f.r(i, i) = diag[i];
    for (std::size_t j = i + 1; j < n; ++j) f.r(i, j) = work(i, j);
  }
  // Thin Q = H_0 ⋯ H_{n-1} · I(:, 0:n)
  for (std::size_t j = 0; j < n; ++j) f.q(j, j) = 1.0;
  for (std::size_t kk = n; kk-- > 0;) {
    const Vector& v = reflectors[kk];
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t i = kk; i < m; ++i) s += v[i - kk] * f.q(i, j);
      if (s == 0.0) continue;
      s *= 2.0;
      for (std::size_t i = kk; i < m; ++i) f.q(i, j) -= s * v[i - kk];
    }
  }
  // Positive diagonal: flip row k of r and column k of q together.
  for (std::size_t k = 0; k < n; ++k) {
    if (f.r(k, k) < 0.0) {
      for (std::size_t j = k; j < n; ++j) f.r(k, j) = -f.r(k, j);
      for (std::size_t i = 0; i < m; ++i) f.q(i, k) = -f.q(i, k);
    }
  }
  return f;
}

Vector back_substitute(const Matrix& r, std::span<const double> b) {
  const std::size_t n = r.cols();
  Vector x(b.begin(), b.end());
  for (std::size_t ii = n; ii-- > 0;) {
    double s = x[ii];
    for (std::size_t j = ii + 1; j < n; ++j) s -= r(ii, j) * x[j];
    x[ii] = s / r(ii, ii);
  }
  return x;
}

Vector forward_substitute_transposed(const Matrix& r, std::span<const double> b) {
  const std::size_t n = r.cols();
  Vector x(b.begin(), b.end());
  for (std::size_t i = 0; i < n; ++i) {
    double s = x[i];
    for (std::size_t j = 0; j < i; ++j) s -= r(j, i) * x[j];
    x[i] = s / r(i, i);
  }
  return x;
}

Vector lsq_solve(const Matrix& a, std::span<const double> y) {
  if (a.rows() != y.size()) throw Error(ErrorKind::ShapeMismatch, "lsq_solve right-hand side");
  const QrFactors f = qr_householder(a);
  return back_substitute(f.r, transpose_times(f.q, y));
}

bool cholesky_solve(const Matrix& a, std::span<const double> b, Vector& x) {
  const std::size_t n = a.rows();
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 0.0) || !std::isfinite(d)) return false;
    const double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / ljj;
    }
  }
  x.assign(b.begin(), b.end());
  for (std::size_t i = 0; i < n; ++i) {
    double s = x[i];
    for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * x[k];
    x[i] = s / l(i, i);
  }
  for (std::size_t ii = n; ii-- > 0;) {
    double s = x[ii];
    for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * x[k];
    x[ii] = s / l(ii, ii);
  }
  return true;
}

Vector lu_solve(Matrix a, Vector b) {
  const std::size_t n = a.rows();
  if (a.cols() != n || b.size() != n) throw Error(ErrorKind::ShapeMismatch, "lu_solve");
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::fabs(a(i, k)) > std::fabs(a(piv, k))) piv = i;
    if (a(piv, k) == 0.0) throw Error(ErrorKind::RankDeficient, "singular matrix in lu_solve");
    if (piv != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a(k, j), a(piv, j));
      std::swap(b[k], b[piv]);
    }
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = a(i, k) / a(k, k);
      if (f == 0.0) continue;
      for (std::size_t j = k; j < n; ++j) a(i, j) -= f * a(k, j);
      b[i] -= f * b[k];
    }
  }
  for (std::size_t ii = n; ii-- > 0;) {
    double s = b[ii];
    for (std::size_t j = ii + 1; j < n; ++j) s -= a(ii, j) * b[j];
    b[ii] = s / a(ii, ii);
  }
  return b;
}

namespace {

// Parlett-Reinsch balancing by powers of two; leaves eigenvalues unchanged.
void balance(Matrix& a) {
  constexpr double radix = 2.0;
  const double sqrdx = radix * radix;
  const std::size_t n = a.rows();
  bool done = false;
  while (!done) {
    done = true;
    for (std::size_t i = 0; i < n; ++i) {
      double r = 0.0;
      double c = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        c += std::fabs(a(j, i));
        r += std::fabs(a(i, j));
      }
      if (c == 0.0 || r == 0.0) continue;
      double g = r / radix;
      double f = 1.0;
      const double s = c + r;
      while (c < g) {
        f *= radix;
        c *= sqrdx;
      }
      g = r * radix;
      while (c > g) {
        f /= radix;
        c /= sqrdx;
      }
      if ((c + r) / f < 0.95 * s) {
        done = false;
        g = 1.0 / f;
        for (std::size_t j = 0; j < n; ++j) a(i, j) *= g;
        for (std::size_t j = 0; j < n; ++j) a(j, i) *= f;
      }
    }
  }
}

// Householder reduction to upper Hessenberg form, in place.
void hessenberg(Matrix& a) {
  const std::size_t n = a.rows();
  if (n < 3) return;
  for (std::size_t k = 0; k + 2 < n; ++k) {
    Vector v(n - k - 1);
    for (std::size_t i = k + 1; i < n; ++i) v[i - k - 1] = a(i, k);
    const double xnorm = norm2(v);
    if (xnorm == 0.0) continue;
    const double alpha = -sign_of(xnorm, v[0]);
    v[0] -= alpha;
    const double vnorm = norm2(v);
    if (vnorm == 0.0) continue;
    for (double& x : v) x /= vnorm;
    // a = H a
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t i = k + 1; i < n; ++i) s += v[i - k - 1] * a(i, j);
      s *= 2.0;
      for (std::size_t i = k + 1; i < n; ++i) a(i, j) -= s * v[i - k - 1];
    }
    // a = a H
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = k + 1; j < n; ++j) s += a(i, j) * v[j - k - 1];
      s *= 2.0;
      for (std::size_t j = k + 1; j < n; ++j) a(i, j) -= s * v[j - k - 1];
    }
    for (std::size_t i = k + 2; i < n; ++i) a(i, k) = 0.0;
  }
}

}  // namespace

std::vector<std::complex<double>> eigenvalues(const Matrix& input) {
  const int n = static_cast<int>(input.rows());
  if (input.rows() != input.cols() || n == 0) {
    throw Error(ErrorKind::InvalidArgument, "eigenvalues requires a non-empty square matrix");
  }
  if (n > 32) throw Error(ErrorKind::InvalidArgument, "eigenvalues supports dimension <= 32");

  Matrix a = input;
  balance(a);
  hessenberg(a);

  std::vector<double> wr(n), wi(n);
  double anorm = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = std::max(i - 1, 0); j < n; ++j) anorm += std::fabs(a(i, j));

  constexpr int kMaxIterations = 60;
  int nn = n - 1;
  double t = 0.0;
  double p = 0, q = 0, r = 0, s = 0, w = 0, x = 0, y = 0, z = 0;
  while (nn >= 0) {
    int its = 0;
    int l = 0;
    do {
      for (l = nn; l >= 1; --l) {
        s = std::fabs(a(l - 1, l - 1)) + std::fabs(a(l, l));
        if (s == 0.0) s = anorm;
        if (std::fabs(a(l, l - 1)) + s == s) {
          a(l, l - 1) = 0.0;
          break;
        }
      }
      x = a(nn, nn);
      if (l == nn) {
        wr[nn] = x + t;
        wi[nn] = 0.0;
        --nn;
      } else {
        y = a(nn - 1, nn - 1);
        w = a(nn, nn - 1) * a(nn - 1, nn);
        if (l == nn - 1) {
          p = 0.5 * (y - x);
          q = p * p + w;
          z = std::sqrt(std::fabs(q));
          x += t;
          if (q >= 0.0) {
            z = p + sign_of(z, p);
            wr[nn - 1] = wr[nn] = x + z;
            if (z != 0.0) wr[nn] = x - w / z;
            wi[nn - 1] = wi[nn] = 0.0;
          } else {
            wr[nn - 1] = wr[nn] = x + p;
            wi[nn - 1] = -z;
            wi[nn] = z;
          }
          nn -= 2;
        } else {
          if (its == kMaxIterations) {
            throw Error(ErrorKind::NonConvergence, "shifted QR iteration cap reached");
          }
          if (its > 0 && its % 10 == 0) {
            // Exceptional shift.
            t += x;
            for (int i = 0; i <= nn; ++i) a(i, i) -= x;
            s = std::fabs(a(nn, nn - 1)) + std::fabs(a(nn - 1, nn - 2));
            y = x = 0.75 * s;
            w = -0.4375 * s * s;
          }
          ++its;
          int m = nn - 2;
          for (; m >= l; --m) {
            z = a(m, m);
            r = x - z;
            s = y - z;
            p = (r * s - w) / a(m + 1, m) + a(m, m + 1);
            q = a(m + 1, m + 1) - z - r - s;
            r = a(m + 2, m + 1);
            s = std::fabs(p) + std::fabs(q) + std::fabs(r);
            p /= s;
            q /= s;
            r /= s;
            if (m == l) break;
            const double u = std::fabs(a(m, m - 1)) * (std::fabs(q) + std::fabs(r));
            const double v =
                std::fabs(p) * (std::fabs(a(m - 1, m - 1)) + std::fabs(z) + std::fabs(a(m + 1, m + 1)));
            if (u + v == v) break;
          }
          for (int i = m + 2; i <= nn; ++i) {
            a(i, i - 2) = 0.0;
            if (i != m + 2) a(i, i - 3) = 0.0;
          }
          for (int k = m; k <= nn - 1; ++k) {
            if (k != m) {
              p = a(k, k - 1);
              q = a(k + 1, k - 1);
              r = 0.0;
              if (k != nn - 1) r = a(k + 2, k - 1);
              if ((x = std::fabs(p) + std::fabs(q) + std::fabs(r)) != 0.0) {
                p /= x;
                q /= x;
                r /= x;
              }
            }
            s = sign_of(std::sqrt(p * p + q * q + r * r), p);
            if (s != 0.0) {
              if (k == m) {
                if (l != m) a(k, k - 1) = -a(k, k - 1);
              } else {
                a(k, k - 1) = -s * x;
              }
              p += s;
              x = p / s;
              y = q / s;
              z = r / s;
              q /= p;
              r /= p;
              for (int j = k; j <= nn; ++j) {
                p = a(k, j) + q * a(k + 1, j);
                if (k != nn - 1) {
                  p += r * a(k + 2, j);
                  a(k + 2, j) -= p * z;
                }
                a(k + 1, j) -= p * y;
                a(k, j) -= p * x;
              }
              const int mmin = nn < k + 3 ? nn : k + 3;
              for (int i = l; i <= mmin; ++i) {
                p = x * a(i, k) + y * a(i, k + 1);
                if (k != nn - 1) {
                  p += z * a(i, k + 2);
                  a(i, k + 2) -= p * r;
                }
                a(i, k + 1) -= p * q;
                a(i, k) -= p;
              }
            }
          }
        }
      }
    } while (l < nn - 1);
  }

  std::vector<std::complex<double>> out(n);
  for (int i = 0; i < n; ++i) out[i] = {wr[i], wi[i]};
  return out;
}

std::size_t rank(const Matrix& input, double tol) {
  if (!(tol > 0.0)) throw Error(ErrorKind::InvalidArgument, "rank tolerance must be positive");
  Matrix a = input;
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  for (std::size_t c = 0; c < n; ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < m; ++r) s += a(r, c) * a(r, c);
    s = std::sqrt(s);
    if (s == 0.0) continue;
    for (std::size_t r = 0; r < m; ++r) a(r, c) /= s;
  }

  Vector colnorm(n);
  for (std::size_t c = 0; c < n; ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < m; ++r) s += a(r, c) * a(r, c);
    colnorm[c] = s;
  }
  const std::size_t steps = std::min(m, n);
  double first = -1.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < steps; ++k) {
    std::size_t piv = k;
    for (std::size_t c = k + 1; c < n; ++c)
      if (colnorm[c] > colnorm[piv]) piv = c;
    if (piv != k) {
      for (std::size_t r = 0; r < m; ++r) std::swap(a(r, k), a(r, piv));
      std::swap(colnorm[k], colnorm[piv]);
    }
    Vector v(m - k);
    for (std::size_t r = k; r < m; ++r) v[r - k] = a(r, k);
    const double xnorm = norm2(v);
    if (first < 0.0) first = xnorm;
    if (first == 0.0 || xnorm <= tol * first) break;
    ++count;
    const double alpha = -sign_of(xnorm, v[0]);
    v[0] -= alpha;
    const double vnorm = norm2(v);
    for (double& e : v) e /= vnorm;
    for (std::size_t j = k + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t r = k; r < m; ++r) s += v[r - k] * a(r, j);
      s *= 2.0;
      for (std::size_t r = k; r < m; ++r) a(r, j) -= s * v[r - k];
      // Downdate from scratch; columns are short so recomputation is cheap and exact.
      double cn = 0.0;
      for (std::size_t r = k + 1; r < m; ++r) cn += a(r, j) * a(r, j);
      colnorm[j] = cn;
    }
  }
  return count;
}

Matrix fd_jacobian(const VectorFunction& f, std::span<const double> x, double step) {
  Vector probe(x.begin(), x.end());
  auto eval = [&](const Vector& at) {
    Vector y = f(at);
    for (double v : y) {
      if (!std::isfinite(v)) throw Error(ErrorKind::NonFiniteEvaluation, "function returned NaN/Inf");
    }
    return y;
  };
  const std::size_t n = x.size();
  Matrix jac;
  for (std::size_t j = 0; j < n; ++j) {
    const double h = step > 0.0 ? step : 1e-6 * std::max(1.0, std::fabs(x[j]));
    probe[j] = x[j] + h;
    const Vector fp = eval(probe);
    probe[j] = x[j] - h;
    const Vector fm = eval(probe);
    probe[j] = x[j];
    if (j == 0) jac = Matrix(fp.size(), n);
    if (fp.size() != jac.rows() || fm.size() != jac.rows()) {
      throw Error(ErrorKind::ShapeMismatch, "function output length changed between probes");
    }
    const double inv = 1.0 / (2.0 * h);
    for (std::size_t i = 0; i < fp.size(); ++i) jac(i, j) = (fp[i] - fm[i]) * inv;
  }
  return jac;
}

}  // namespace mfe::linalg
