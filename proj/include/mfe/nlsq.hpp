#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mfe/data.hpp"
#include "mfe/linalg.hpp"

namespace mfe::nlsq {

using linalg::Matrix;
using linalg::Vector;

/// Residual vector e(η) of fixed length m over 𝒫 parameters. The objective is
/// F(η) = ‖e(η)‖². When `jacobian` is empty a central-difference Jacobian is used.
/// Both callables must be safe to invoke concurrently.
struct ResidualModel {
  std::size_t parameter_count = 0;
  std::function<Vector(std::span<const double>)> residual;
  std::function<Matrix(std::span<const double>)> jacobian;

  Vector eval(std::span<const double> eta) const;
  Matrix jac(std::span<const double> eta) const;
};

struct LmConfig {
  double xi0 = 0.01;
  double xi_decrease = 10.0;
  double xi_increase = 10.0;
  double xi_max = 1e16;
  int max_iter = 1000;
  double grad_tol = 1e-6;   // on ‖∇F‖∞ / max(1, F)
  double step_tol = 1e-10;  // relative to 1 + ‖η‖
  double objective_tol = 0.0;  // stop once F ≤ objective_tol

  void validate() const;
};

struct TrConfig {
  double delta0 = 1.0;
  double shrink_threshold = 0.25;
  double expand_threshold = 0.75;
  double shrink_factor = 0.25;
  double expand_factor = 2.0;
  int max_iter = 1000;
  double grad_tol = 1e-6;
  double step_tol = 1e-10;
  double objective_tol = 0.0;

  void validate() const;
};

enum class Termination { GradientTolerance, StepTolerance, ObjectiveTolerance, MaxIterations, Stopped };
const char* to_string(Termination t);

struct TraceRow {
  int iteration = 0;
  double objective = 0.0;
  double step = 0.0;
  double optimality = 0.0;  // ‖∇F‖∞ at the start of the iteration
  double xi_or_delta = 0.0;
  bool accepted = true;
};

struct SolveTrace {
  std::vector<TraceRow> rows;
  int iterations = 0;  // accepted steps
  int function_evals = 0;
  int jacobian_evals = 0;
  Termination reason = Termination::MaxIterations;
  double final_optimality = 0.0;

  /// Max iterations reached with the gradient still above tolerance.
  bool stalled() const { return reason == Termination::MaxIterations; }
};

/// CSV with header iteration,objective,step,optimality,xi_or_delta,accepted.
void write_trace_csv(std::ostream& os, const SolveTrace& trace);

struct SolveResult {
  Vector eta;
  double objective = 0.0;
  SolveTrace trace;
};

/// Called after each accepted step; returning false ends the solve with
/// Termination::Stopped.
using IterationObserver = std::function<bool(int iteration, std::span<const double> eta, double objective)>;

/// Marquardt step ρ solving (𝕁ᵀ𝕁 + ξ𝕀)ρ = −𝕁ᵀe.
Vector lm_step(const Matrix& j, std::span<const double> e, double xi);

SolveResult lm_solve(const ResidualModel& model, Vector eta0, const LmConfig& cfg = {},
                     const IterationObserver& observer = {});

/// Minimizer of ‖e + 𝕁ρ‖² over span{𝕘, ρ_GN} with ‖ρ‖ ≤ Δ.
Vector subspace_step(const Matrix& j, std::span<const double> e, double delta);

SolveResult trr_solve(const ResidualModel& model, Vector eta0, const TrConfig& cfg = {},
                      const IterationObserver& observer = {});

/// f̂ = b₁ + Σ_b a_b·tanh(w_b·z + c_b) over B basis functions.
/// Parameter layout: [b₁, (a_b, w_h, w_γ, w_LL, w_UL, c_b) for each b].
struct TanhModelSpec {
  int basis_count = 1;

  std::size_t parameter_count() const { return 1 + 6 * static_cast<std::size_t>(basis_count); }
  std::string name() const;  // "f7", "f13", ...
  void validate() const;
  static TanhModelSpec parse(const std::string& name);
};

double tanh_model_eval(const TanhModelSpec& spec, std::span<const double> eta, const std::array<double, 4>& z);
/// ∂f̂/∂η written into `grad` (length 𝒫).
void tanh_model_gradient(const TanhModelSpec& spec, std::span<const double> eta, const std::array<double, 4>& z,
                         std::span<double> grad);

/// Residual model f̂(z_i) − y_i over pre-scaled inputs and normalized targets.
ResidualModel tanh_residual_model(const TanhModelSpec& spec, std::vector<std::array<double, 4>> z,
                                  std::vector<double> y);

struct TanhFitOptions {
  int restarts = 15;
  std::uint64_t seed = 1;
  /// η₀ is the prefix of a seeded vector of max(prefix_length, 𝒫) draws in
  /// [-1, 1], so models of different size share their leading initial values.
  std::size_t prefix_length = 19;
  LmConfig lm;
  unsigned workers = 0;
};

struct RestartSummary {
  double train_objective = 0.0;
  double selection_mse = 0.0;
  int iterations = 0;
  Termination reason = Termination::MaxIterations;
};

struct TanhFit {
  TanhModelSpec spec;
  Target target = Target::NTrim;
  Vector eta;
  ScalingSpec scaling;
  SolveTrace trace;
  std::size_t best_restart = 0;
  double train_mse = 0.0;      // normalized scale
  double selection_mse = 0.0;  // normalized scale
  bool all_stalled = false;
  std::vector<RestartSummary> restarts;
  std::string dataset_fingerprint;
};

/// Multi-restart LM fit. Inputs are range-scaled to [-1, 1] and the target
/// normalized from the training set; the restart with the lowest MSE on
/// `selection` (the training set if empty) wins.
TanhFit fit_tanh_family(std::span<const MfeRecord> train, std::span<const MfeRecord> selection,
                        const TanhModelSpec& spec, Target target, const TanhFitOptions& options = {});

double predict(const TanhFit& fit, const InputVector& input);

}  // namespace mfe::nlsq
