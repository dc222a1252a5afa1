#include "mfe/nlsq.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <ostream>

#include "mfe/error.hpp"
#include "mfe/parallel.hpp"
#include "mfe/rng.hpp"

namespace mfe::nlsq {

namespace {

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

double sum_squares(std::span<const double> v) { return linalg::dot(v, v); }

Vector gradient(const Matrix& j, std::span<const double> e) {
  Vector g = linalg::transpose_times(j, e);
  for (double& v : g) v *= 2.0;
  return g;
}

Vector add(std::span<const double> a, std::span<const double> b) {
  Vector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

}  // namespace

Vector ResidualModel::eval(std::span<const double> eta) const {
  if (eta.size() != parameter_count) throw Error(ErrorKind::ShapeMismatch, "parameter vector length");
  return residual(eta);
}

Matrix ResidualModel::jac(std::span<const double> eta) const {
  if (jacobian) return jacobian(eta);
  return linalg::fd_jacobian(residual, eta);
}

void LmConfig::validate() const {
  if (!(xi0 > 0.0)) throw Error(ErrorKind::InvalidArgument, "xi0 must be positive");
  if (!(xi_decrease > 1.0) || !(xi_increase > 1.0))
    throw Error(ErrorKind::InvalidArgument, "xi factors must exceed 1");
  if (!(grad_tol > 0.0) || !(step_tol > 0.0)) throw Error(ErrorKind::InvalidArgument, "tolerances must be positive");
  if (max_iter < 0) throw Error(ErrorKind::InvalidArgument, "max_iter must be non-negative");
}

void TrConfig::validate() const {
  if (!(delta0 > 0.0)) throw Error(ErrorKind::InvalidArgument, "delta0 must be positive");
  if (!(shrink_threshold > 0.0 && shrink_threshold < expand_threshold && expand_threshold < 1.0))
    throw Error(ErrorKind::InvalidArgument, "need 0 < shrink threshold < expand threshold < 1");
  if (!(shrink_factor > 0.0 && shrink_factor < 1.0) || !(expand_factor > 1.0))
    throw Error(ErrorKind::InvalidArgument, "trust radius factors");
  if (!(grad_tol > 0.0) || !(step_tol > 0.0)) throw Error(ErrorKind::InvalidArgument, "tolerances must be positive");
  if (max_iter < 0) throw Error(ErrorKind::InvalidArgument, "max_iter must be non-negative");
}

const char* to_string(Termination t) {
  switch (t) {
    case Termination::GradientTolerance: return "gradient_tolerance";
    case Termination::StepTolerance: return "step_tolerance";
    case Termination::ObjectiveTolerance: return "objective_tolerance";
    case Termination::MaxIterations: return "stalled_at_non_stationary";
    case Termination::Stopped: return "stopped";
  }
  return "unknown";
}

void write_trace_csv(std::ostream& os, const SolveTrace& trace) {
  os << "iteration,objective,step,optimality,xi_or_delta,accepted\n";
  const auto old = os.precision(17);
  for (const auto& r : trace.rows)
    os << r.iteration << ',' << r.objective << ',' << r.step << ',' << r.optimality << ',' << r.xi_or_delta << ','
       << (r.accepted ? 1 : 0) << '\n';
  os.precision(old);
}

namespace {

// Solves (𝕁ᵀ𝕁 + ξ𝕀)ρ = −𝕁ᵀe from a cached Gram matrix; false if not positive definite.
bool normal_step(const Matrix& jtj, std::span<const double> jte, double xi, Vector& rho) {
  Matrix a = jtj;
  for (std::size_t k = 0; k < a.rows(); ++k) a(k, k) += xi;
  Vector rhs(jte.begin(), jte.end());
  for (double& v : rhs) v = -v;
  return linalg::cholesky_solve(a, rhs, rho) && all_finite(rho);
}

}  // namespace

Vector lm_step(const Matrix& j, std::span<const double> e, double xi) {
  Vector rho;
  if (normal_step(linalg::gram(j), linalg::transpose_times(j, e), xi, rho)) return rho;
  // Augmented least squares [𝕁; √ξ 𝕀] ρ ≈ [−e; 0] when the Gram matrix is too ill-conditioned.
  const std::size_t m = j.rows();
  const std::size_t p = j.cols();
  Matrix a(m + p, p);
  Vector rhs(m + p, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t k = 0; k < p; ++k) a(i, k) = j(i, k);
    rhs[i] = -e[i];
  }
  const double s = std::sqrt(xi);
  for (std::size_t k = 0; k < p; ++k) a(m + k, k) = s;
  return linalg::lsq_solve(a, rhs);
}

SolveResult lm_solve(const ResidualModel& model, Vector eta0, const LmConfig& cfg, const IterationObserver& observer) {
  cfg.validate();
  SolveResult out;
  SolveTrace& tr = out.trace;
  Vector eta = std::move(eta0);
  Vector e = model.eval(eta);
  tr.function_evals = 1;
  if (!all_finite(e)) throw Error(ErrorKind::NonFiniteEvaluation, "residuals at the initial point");
  double f = sum_squares(e);
  double xi = cfg.xi0;
  double opt = 0.0;
  bool done = false;

  while (!done) {
    if (f <= cfg.objective_tol) {
      tr.reason = Termination::ObjectiveTolerance;
      break;
    }
    const Matrix j = model.jac(eta);
    ++tr.jacobian_evals;
    const Vector jte = linalg::transpose_times(j, e);
    opt = 2.0 * linalg::norm_inf(jte);
    if (tr.rows.empty()) tr.rows.push_back({0, f, 0.0, opt, xi, true});
    if (opt <= cfg.grad_tol * std::max(1.0, f)) {
      tr.reason = Termination::GradientTolerance;
      break;
    }
    if (tr.iterations >= cfg.max_iter) {
      tr.reason = Termination::MaxIterations;
      break;
    }
    const Matrix jtj = linalg::gram(j);
    // Inner loop: raise ξ until the step reduces F, reusing 𝕁.
    for (;;) {
      Vector rho;
      if (normal_step(jtj, jte, xi, rho)) {
        const double step = linalg::norm2(rho);
        if (step <= cfg.step_tol * (1.0 + linalg::norm2(eta))) {
          tr.reason = Termination::StepTolerance;
          done = true;
          break;
        }
        Vector trial = add(eta, rho);
        Vector e_new = model.eval(trial);
        ++tr.function_evals;
        const double f_new = all_finite(e_new) ? sum_squares(e_new) : std::numeric_limits<double>::infinity();
        if (f_new < f) {
          ++tr.iterations;
          tr.rows.push_back({tr.iterations, f_new, step, opt, xi, true});
          eta = std::move(trial);
          e = std::move(e_new);
          f = f_new;
          xi /= cfg.xi_decrease;
          break;
        }
        tr.rows.push_back({tr.iterations, f, step, opt, xi, false});
      }
      xi *= cfg.xi_increase;
      if (xi > cfg.xi_max) {
        tr.reason = Termination::StepTolerance;
        done = true;
        break;
      }
    }
    if (!done && observer && !observer(tr.iterations, eta, f)) {
      tr.reason = Termination::Stopped;
      break;
    }
  }
  tr.final_optimality = opt;
  out.eta = std::move(eta);
  out.objective = f;
  return out;
}

Vector subspace_step(const Matrix& j, std::span<const double> e, double delta) {
  const std::size_t p = j.cols();
  const Vector g = linalg::transpose_times(j, e);  // ½∇F
  const double gn = linalg::norm2(g);
  Vector zero(p, 0.0);
  if (gn == 0.0) return zero;

  std::vector<Vector> basis;
  Vector u1(p);
  for (std::size_t k = 0; k < p; ++k) u1[k] = -g[k] / gn;
  basis.push_back(u1);

  // Gauss-Newton direction 𝕁ρ₂ = −e via QR in place of an iterative solve.
  if (j.rows() >= p) {
    try {
      Vector neg_e(e.begin(), e.end());
      for (double& v : neg_e) v = -v;
      Vector rho2 = linalg::lsq_solve(j, neg_e);
      const double proj = linalg::dot(u1, rho2);
      Vector v(p);
      for (std::size_t k = 0; k < p; ++k) v[k] = rho2[k] - proj * u1[k];
      const double vn = linalg::norm2(v);
      if (vn > 1e-10 * linalg::norm2(rho2)) {
        for (double& x : v) x /= vn;
        basis.push_back(std::move(v));
      }
    } catch (const Error& err) {
      if (err.kind() != ErrorKind::RankDeficient) throw;
    }
  }

  // Reduced quadratic q(s) = 2bᵀs + sᵀHs.
  const std::size_t n = basis.size();
  std::vector<Vector> ju;
  for (const auto& u : basis) ju.push_back(j * u);
  double b[2] = {0.0, 0.0};
  double h[2][2] = {{0.0, 0.0}, {0.0, 0.0}};
  for (std::size_t a = 0; a < n; ++a) {
    b[a] = linalg::dot(g, basis[a]);
    for (std::size_t c = 0; c < n; ++c) h[a][c] = linalg::dot(ju[a], ju[c]);
  }
  auto q = [&](double s0, double s1) {
    return 2.0 * (b[0] * s0 + b[1] * s1) + h[0][0] * s0 * s0 + 2.0 * h[0][1] * s0 * s1 + h[1][1] * s1 * s1;
  };

  double best_s[2] = {0.0, 0.0};
  double best_q = 0.0;
  auto consider = [&](double s0, double s1) {
    const double v = q(s0, s1);
    if (v < best_q) {
      best_q = v;
      best_s[0] = s0;
      best_s[1] = s1;
    }
  };

  if (n == 1) {
    consider(delta, 0.0);
    if (h[0][0] > 0.0) {
      const double s = -b[0] / h[0][0];
      if (std::fabs(s) <= delta) consider(s, 0.0);
    }
  } else {
    const double det = h[0][0] * h[1][1] - h[0][1] * h[0][1];
    if (h[0][0] > 0.0 && det > 1e-14 * h[0][0] * h[1][1]) {
      const double s0 = (-b[0] * h[1][1] + b[1] * h[0][1]) / det;
      const double s1 = (-b[1] * h[0][0] + b[0] * h[0][1]) / det;
      if (std::hypot(s0, s1) <= delta) consider(s0, s1);
    }
    // Boundary: coarse scan of the circle, then golden-section refinement.
    constexpr int kScan = 720;
    constexpr double kTwoPi = 6.283185307179586;
    auto on_circle = [&](double t) { return q(delta * std::cos(t), delta * std::sin(t)); };
    int best_k = 0;
    double best_v = std::numeric_limits<double>::infinity();
    for (int k = 0; k < kScan; ++k) {
      const double v = on_circle(kTwoPi * k / kScan);
      if (v < best_v) {
        best_v = v;
        best_k = k;
      }
    }
    double lo = kTwoPi * (best_k - 1) / kScan;
    double hi = kTwoPi * (best_k + 1) / kScan;
    constexpr double kInvPhi = 0.6180339887498949;
    double x1 = hi - kInvPhi * (hi - lo);
    double x2 = lo + kInvPhi * (hi - lo);
    double f1 = on_circle(x1);
    double f2 = on_circle(x2);
    for (int it = 0; it < 80; ++it) {
      if (f1 < f2) {
        hi = x2;
        x2 = x1;
        f2 = f1;
        x1 = hi - kInvPhi * (hi - lo);
        f1 = on_circle(x1);
      } else {
        lo = x1;
        x1 = x2;
        f1 = f2;
        x2 = lo + kInvPhi * (hi - lo);
        f2 = on_circle(x2);
      }
    }
    const double t = 0.5 * (lo + hi);
    consider(delta * std::cos(t), delta * std::sin(t));
  }

  Vector rho(p, 0.0);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t k = 0; k < p; ++k) rho[k] += best_s[a] * basis[a][k];
  // Guard the ‖ρ‖ ≤ Δ contract against rounding in the basis expansion.
  const double rn = linalg::norm2(rho);
  if (rn > delta) {
    for (double& v : rho) v *= delta / rn;
  }
  return rho;
}

SolveResult trr_solve(const ResidualModel& model, Vector eta0, const TrConfig& cfg, const IterationObserver& observer) {
  cfg.validate();
  SolveResult out;
  SolveTrace& tr = out.trace;
  Vector eta = std::move(eta0);
  Vector e = model.eval(eta);
  tr.function_evals = 1;
  if (!all_finite(e)) throw Error(ErrorKind::NonFiniteEvaluation, "residuals at the initial point");
  double f = sum_squares(e);
  double delta = cfg.delta0;
  double opt = 0.0;
  Matrix j;
  bool need_jacobian = true;

  for (;;) {
    if (f <= cfg.objective_tol) {
      tr.reason = Termination::ObjectiveTolerance;
      break;
    }
    if (need_jacobian) {
      j = model.jac(eta);
      ++tr.jacobian_evals;
      opt = linalg::norm_inf(gradient(j, e));
      need_jacobian = false;
      if (tr.rows.empty()) tr.rows.push_back({0, f, 0.0, opt, delta, true});
      if (opt <= cfg.grad_tol * std::max(1.0, f)) {
        tr.reason = Termination::GradientTolerance;
        break;
      }
      if (tr.iterations >= cfg.max_iter) {
        tr.reason = Termination::MaxIterations;
        break;
      }
    }
    const Vector rho = subspace_step(j, e, delta);
    const double step = linalg::norm2(rho);
    if (step <= cfg.step_tol * (1.0 + linalg::norm2(eta))) {
      tr.reason = Termination::StepTolerance;
      break;
    }
    const Vector model_e = add(e, j * rho);
    const double predicted = f - sum_squares(model_e);
    Vector trial = add(eta, rho);
    Vector e_new = model.eval(trial);
    ++tr.function_evals;
    const double f_new = all_finite(e_new) ? sum_squares(e_new) : std::numeric_limits<double>::infinity();
    const double actual = f - f_new;
    double ratio = -1.0;
    if (std::isfinite(f_new)) ratio = predicted > 0.0 ? actual / predicted : (actual > 0.0 ? 1.0 : -1.0);

    const double used = delta;
    if (ratio < cfg.shrink_threshold)
      delta *= cfg.shrink_factor;
    else if (ratio > cfg.expand_threshold && step >= 0.99 * delta)
      delta *= cfg.expand_factor;

    const bool accepted = actual > 0.0;
    if (accepted) {
      ++tr.iterations;
      eta = std::move(trial);
      e = std::move(e_new);
      f = f_new;
      need_jacobian = true;
    }
    tr.rows.push_back({tr.iterations, f, step, opt, used, accepted});
    if (accepted && observer && !observer(tr.iterations, eta, f)) {
      tr.reason = Termination::Stopped;
      break;
    }
  }
  tr.final_optimality = opt;
  out.eta = std::move(eta);
  out.objective = f;
  return out;
}

std::string TanhModelSpec::name() const { return "f" + std::to_string(parameter_count()); }

void TanhModelSpec::validate() const {
  if (basis_count < 1) throw Error(ErrorKind::InvalidArgument, "tanh model needs at least one basis function");
}

TanhModelSpec TanhModelSpec::parse(const std::string& name) {
  if (name.size() < 2 || (name[0] != 'f' && name[0] != 'F'))
    throw Error(ErrorKind::ParseError, "tanh model name must look like f7, f13, f19: " + name);
  int p = 0;
  try {
    std::size_t used = 0;
    p = std::stoi(name.substr(1), &used);
    if (used != name.size() - 1) p = 0;
  } catch (const std::exception&) {
    p = 0;
  }
  if (p < 7 || (p - 1) % 6 != 0) throw Error(ErrorKind::ParseError, "tanh model size must be 1 + 6B: " + name);
  return TanhModelSpec{(p - 1) / 6};
}

double tanh_model_eval(const TanhModelSpec& spec, std::span<const double> eta, const std::array<double, 4>& z) {
  if (eta.size() != spec.parameter_count()) throw Error(ErrorKind::ShapeMismatch, "tanh parameter vector length");
  double f = eta[0];
  for (int b = 0; b < spec.basis_count; ++b) {
    const double* p = eta.data() + 1 + 6 * b;
    const double u = p[1] * z[0] + p[2] * z[1] + p[3] * z[2] + p[4] * z[3] + p[5];
    f += p[0] * std::tanh(u);
  }
  return f;
}

void tanh_model_gradient(const TanhModelSpec& spec, std::span<const double> eta, const std::array<double, 4>& z,
                         std::span<double> grad) {
  if (eta.size() != spec.parameter_count() || grad.size() != eta.size())
    throw Error(ErrorKind::ShapeMismatch, "tanh parameter vector length");
  grad[0] = 1.0;
  for (int b = 0; b < spec.basis_count; ++b) {
    const std::size_t o = 1 + 6 * static_cast<std::size_t>(b);
    const double* p = eta.data() + o;
    const double u = p[1] * z[0] + p[2] * z[1] + p[3] * z[2] + p[4] * z[3] + p[5];
    const double t = std::tanh(u);
    const double d = p[0] * (1.0 - t * t);
    grad[o] = t;
    for (int k = 0; k < 4; ++k) grad[o + 1 + k] = d * z[k];
    grad[o + 5] = d;
  }
}

ResidualModel tanh_residual_model(const TanhModelSpec& spec, std::vector<std::array<double, 4>> z,
                                  std::vector<double> y) {
  spec.validate();
  if (z.size() != y.size()) throw Error(ErrorKind::ShapeMismatch, "inputs and targets differ in length");
  auto zs = std::make_shared<const std::vector<std::array<double, 4>>>(std::move(z));
  auto ys = std::make_shared<const std::vector<double>>(std::move(y));
  ResidualModel model;
  model.parameter_count = spec.parameter_count();
  model.residual = [spec, zs, ys](std::span<const double> eta) {
    Vector r(zs->size());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = tanh_model_eval(spec, eta, (*zs)[i]) - (*ys)[i];
    return r;
  };
  model.jacobian = [spec, zs](std::span<const double> eta) {
    Matrix j(zs->size(), spec.parameter_count());
    for (std::size_t i = 0; i < zs->size(); ++i) tanh_model_gradient(spec, eta, (*zs)[i], j.row(i));
    return j;
  };
  return model;
}

TanhFit fit_tanh_family(std::span<const MfeRecord> train, std::span<const MfeRecord> selection,
                        const TanhModelSpec& spec, Target target, const TanhFitOptions& options) {
  spec.validate();
  if (train.empty()) throw Error(ErrorKind::InsufficientData, "no training records");
  if (options.restarts < 1) throw Error(ErrorKind::InvalidArgument, "restarts must be at least 1");
  if (selection.empty()) selection = train;

  TanhFit out;
  out.spec = spec;
  out.target = target;
  out.dataset_fingerprint = fingerprint(train);
  ScalingSpec::range_inputs(train, out.scaling.input_offsets, out.scaling.input_weights);
  std::vector<double> raw;
  for (const auto& r : train) raw.push_back(target_value(r, target));
  out.scaling.add_output_channel(raw);

  std::vector<std::array<double, 4>> z;
  std::vector<double> y;
  for (const auto& r : train) {
    z.push_back(out.scaling.scale(r.input));
    y.push_back(out.scaling.normalize(target_value(r, target)));
  }
  const std::size_t m = y.size();
  const ResidualModel model = tanh_residual_model(spec, std::move(z), std::move(y));

  const std::size_t p = spec.parameter_count();
  const std::size_t draws = std::max(options.prefix_length, p);
  const auto n_restarts = static_cast<std::size_t>(options.restarts);
  std::vector<SolveResult> results(n_restarts);
  std::vector<double> sel_mse(n_restarts);
  parallel_for(
      n_restarts,
      [&](std::size_t r) {
        Rng rng(derive_seed(options.seed, r));
        Vector eta0(draws);
        for (double& v : eta0) v = rng.uniform(-1.0, 1.0);
        eta0.resize(p);
        results[r] = lm_solve(model, std::move(eta0), options.lm);
        double s = 0.0;
        for (const auto& rec : selection) {
          const double d = tanh_model_eval(spec, results[r].eta, out.scaling.scale(rec.input)) -
                           out.scaling.normalize(target_value(rec, target));
          s += d * d;
        }
        sel_mse[r] = s / static_cast<double>(selection.size());
      },
      options.workers);

  std::size_t best = 0;
  bool all_stalled = true;
  for (std::size_t r = 0; r < n_restarts; ++r) {
    out.restarts.push_back({results[r].objective, sel_mse[r], results[r].trace.iterations, results[r].trace.reason});
    if (!results[r].trace.stalled()) all_stalled = false;
    if (sel_mse[r] < sel_mse[best]) best = r;
  }
  out.best_restart = best;
  out.eta = results[best].eta;
  out.trace = std::move(results[best].trace);
  out.train_mse = results[best].objective / static_cast<double>(m);
  out.selection_mse = sel_mse[best];
  out.all_stalled = all_stalled;
  return out;
}

double predict(const TanhFit& fit, const InputVector& input) {
  return fit.scaling.denormalize(tanh_model_eval(fit.spec, fit.eta, fit.scaling.scale(input)));
}

}  // namespace mfe::nlsq
