#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mfe/data.hpp"
#include "mfe/linalg.hpp"

namespace mfe::poly {

/// Total degree plus a per-variable exponent cap, in variable order
/// (h, γ, LL, UL). "Poly3344" is total degree 4 with caps (3, 3, 4, 4).
struct PolynomialSpec {
  int total_degree = 1;
  std::array<int, 4> per_var_max{1, 1, 1, 1};

  void validate() const;
  std::string name() const;
  /// Parses "PolyABCD"; the total degree is the largest cap.
  static PolynomialSpec parse(const std::string& name);

  friend bool operator==(const PolynomialSpec&, const PolynomialSpec&) = default;
};

using Exponents = std::array<int, 4>;

/// Every exponent tuple with Σj ≤ d and j_i ≤ cap_i, graded lexicographic:
/// by total degree, then lexicographically descending in (h, γ, LL, UL).
/// The constant term is first.
std::vector<Exponents> enumerate_terms(const PolynomialSpec& spec);

/// Row i, column k holds Π_v scaled(z_i)_v ^ exponents[k]_v.
linalg::Matrix design_matrix(std::span<const InputVector> inputs, std::span<const Exponents> terms,
                             const ScalingSpec& scaling);

struct FitStats {
  std::size_t m = 0;
  std::size_t coefficient_count = 0;
  std::size_t dof = 0;
  double r2 = 0.0;
  double r2_adjusted = 0.0;
  double train_mse = 0.0;  // normalized output scale
  double sse = 0.0;        // normalized output scale
};

/// A fitted constrained-degree polynomial. Coefficients act on scaled inputs
/// and produce a normalized output; `r_factor` is the R of the design QR,
/// kept for prediction intervals.
struct LinearFit {
  PolynomialSpec spec;
  Target target = Target::NTrim;
  std::vector<Exponents> exponent_table;
  std::vector<double> coefficients;
  ScalingSpec scaling;
  FitStats stats;
  linalg::Matrix r_factor;
  std::string dataset_fingerprint;

  /// Coefficients mapping scaled inputs straight to the raw output.
  std::vector<double> denormalized_coefficients() const;
};

/// 1 − (1 − r2)(m − 1)/(m − predictors − 1), predictors excluding the intercept.
double adjusted_r2(double r2, std::size_t m, std::size_t predictors);

/// Least-squares fit on non-empty records. Throws InsufficientData when
/// m ≤ 𝒫 and RankDeficient for an over-specified design.
LinearFit fit(std::span<const MfeRecord> records, const PolynomialSpec& spec, Target target);

/// Fit with caller-provided scaling (outputs must already carry one channel).
LinearFit fit_scaled(std::span<const MfeRecord> records, const PolynomialSpec& spec, Target target,
                     const ScalingSpec& scaling);

/// Raw-scale prediction.
double predict(const LinearFit& fit, const InputVector& input);
/// Normalized-scale prediction.
double predict_normalized(const LinearFit& fit, const InputVector& input);
/// Nearest non-negative integer, for n_trim outputs.
long long predict_rounded(const LinearFit& fit, const InputVector& input);

/// Evaluates a polynomial on pre-scaled inputs; the hot path for sampling
/// studies. Thread-safe on an immutable fit.
class FastEvaluator {
 public:
  explicit FastEvaluator(const LinearFit& fit);
  double operator()(const InputVector& input) const;

 private:
  std::vector<Exponents> terms_;
  std::vector<double> coeffs_;
  ScalingSpec scaling_;
  std::array<int, 4> max_power_{};
};

struct Metrics {
  double mse = 0.0;  // normalized scale
  double r2 = 0.0;
  double r2_adjusted = 0.0;
  std::vector<double> residuals;  // normalized target − prediction
};

Metrics metrics(const LinearFit& fit, std::span<const MfeRecord> records);

/// |y − ŷ| / |y| × 100. Throws DivisionByZero for y = 0.
double error_percentage(double y, double yhat);

struct Interval {
  double lower = 0.0;
  double center = 0.0;
  double upper = 0.0;
};

/// Two-sided prediction interval ŷ ± t·s·sqrt(1 + xᵀ(𝒟ᵀ𝒟)⁻¹x) on the raw scale.
Interval prediction_bounds(const LinearFit& fit, const InputVector& input, double confidence);

struct DiagnosticEntry {
  PolynomialSpec spec;
  bool fitted = false;
  double train_mse = 0.0;
  double test_mse = 0.0;
  double probe_mse = 0.0;
  std::vector<double> probe_errors_pct;
  bool over_specified = false;
  std::string reason;
};

/// Fits each candidate, evaluates train/test MSE and mid-range probe errors,
/// flags candidates whose probe MSE exceeds ten times max(test MSE, median
/// probe MSE over candidates) or whose design is rank deficient, and returns
/// the candidates ranked best first.
std::vector<DiagnosticEntry> degree_diagnostic(std::span<const MfeRecord> train,
                                               std::span<const MfeRecord> test,
                                               std::span<const MfeRecord> probes,
                                               std::span<const PolynomialSpec> candidates,
                                               Target target);

}  // namespace mfe::poly
