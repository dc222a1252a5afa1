#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mfe/linalg.hpp"

namespace mfe::gsa {

using linalg::Matrix;
using linalg::Vector;

struct Factor {
  std::string name;
  double lower = 0.0;
  double upper = 1.0;
};

/// Independent uniform factors. `dependent` lists index pairs known to co-vary
/// (such as the two rudder limits, tied by ll ≤ ul); plans refuse them.
struct FactorSpace {
  std::vector<Factor> factors;
  std::vector<std::pair<std::size_t, std::size_t>> dependent;

  std::size_t size() const { return factors.size(); }
  void validate() const;
  std::vector<std::string> names() const;
};

/// One point per stratum per column, strata of width 1/N, columns permuted independently.
Matrix lhs_sample(const FactorSpace& space, std::size_t n, std::uint64_t seed);

/// A, B and the radial blocks AB⁽ʲ⁾ (A with column j from B); BA⁽ʲ⁾ only for
/// second-order plans.
struct SamplePlan {
  Matrix a;
  Matrix b;
  std::vector<Matrix> ab;
  std::vector<Matrix> ba;
  std::size_t n = 0;

  bool second_order() const { return !ba.empty(); }
  std::size_t evaluation_count() const;
  static std::size_t evaluation_count(std::size_t factors, std::size_t n, bool second_order);
};

SamplePlan plan_samples(const FactorSpace& space, std::size_t n, std::uint64_t seed, bool second_order = false);

using ScalarModel = std::function<double(std::span<const double>)>;

/// Model outputs on every block of a plan.
struct PlanOutputs {
  Vector ya;
  Vector yb;
  std::vector<Vector> yab;
  std::vector<Vector> yba;

  std::size_t n() const { return ya.size(); }
  std::size_t factors() const { return yab.size(); }
};

/// Evaluates `model` on every plan row; rows are spread across `workers` threads.
PlanOutputs evaluate(const SamplePlan& plan, const ScalarModel& model, unsigned workers = 0);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double v) const { return v >= lo && v <= hi; }
  double width() const { return hi - lo; }
};

struct SobolResult {
  std::vector<std::string> factors;
  std::size_t n = 0;
  double mean = 0.0;
  double variance = 0.0;
  Vector s_first;
  Vector s_total;
  Matrix s_second;  // upper triangle, empty without a second-order plan
  // Filled by bootstrap_ci.
  std::vector<Interval> ci_first;
  std::vector<Interval> ci_total;
  std::vector<std::vector<Interval>> ci_second;
  double ci_level = 0.0;
  std::size_t resamples = 0;
  std::uint64_t seed = 0;

  static constexpr const char* kFirstOrderEstimator = "saltelli2010";
  static constexpr const char* kTotalOrderEstimator = "jansen1999";
};

/// Point estimates. Throws DegenerateVariance when Var(y) < 1e-14·mean(y)².
SobolResult estimate(const PlanOutputs& y, std::vector<std::string> factor_names = {});

/// Percentile intervals from B resamples of plan rows, drawn jointly across blocks.
void bootstrap_ci(SobolResult& result, const PlanOutputs& y, std::size_t resamples, double level,
                  std::uint64_t seed);

/// LHS plan, evaluation, estimate and bootstrap in one call.
struct AnalysisOptions {
  std::uint64_t seed = 1;
  bool second_order = false;
  std::size_t resamples = 1000;
  double level = 0.95;
  unsigned workers = 0;
};
SobolResult analyze(const FactorSpace& space, const ScalarModel& model, std::size_t n,
                    const AnalysisOptions& options = {});

/// One analysis per N; the schedule must increase strictly.
std::vector<SobolResult> convergence_sweep(const FactorSpace& space, const ScalarModel& model,
                                           const std::vector<std::size_t>& schedule,
                                           const AnalysisOptions& options = {});

/// Log-log slope of first-order CI width against N for one factor; nullopt
/// with fewer than two schedule entries.
std::optional<double> ci_width_slope(const std::vector<SobolResult>& sweep, std::size_t factor);

/// Header: N,factor,S,S_T,ci_lo,ci_hi,st_ci_lo,st_ci_hi. ci_* bound S, st_ci_* bound S_T.
void write_convergence_csv(std::ostream& os, const std::vector<SobolResult>& sweep);

}  // namespace mfe::gsa
