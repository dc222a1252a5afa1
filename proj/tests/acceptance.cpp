// Acceptance run: one PASS/FAIL/SKIP line per criterion.
//
//   acceptance [--only 1,4,9] [--reference-db FILE] [--allow-fail 11] [--workers N]
//
// The reference-database criterion (13) needs --reference-db or MFE_REFERENCE_DB and is
// skipped otherwise. Exit status is 0 when every criterion passed, was
// skipped, or is listed in --allow-fail.

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>

#include "mfe/artifacts.hpp"
#include "mfe/envelope.hpp"
#include "mfe/gsa.hpp"
#include "mfe/linalg.hpp"
#include "mfe/mlp.hpp"
#include "mfe/nlsq.hpp"
#include "mfe/pipeline.hpp"
#include "mfe/poly.hpp"
#include "mfe/rng.hpp"
#include "oracles.hpp"

using namespace mfe;
using linalg::Matrix;
using linalg::Vector;

namespace {

enum class Verdict { Pass, Fail, Skip };

struct Outcome {
  Verdict verdict = Verdict::Fail;
  std::string detail;
};

Outcome pass_if(bool ok, std::string detail) { return {ok ? Verdict::Pass : Verdict::Fail, std::move(detail)}; }

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

unsigned g_workers = 0;

// ---- shared fixtures -------------------------------------------------------

const std::vector<double> kAltitudes{0.0, 10000.0, 20000.0, 30000.0};
const std::vector<double> kGammas{-5, -4, -3, -2, -1, 0, 1, 2, 3, 4, 5};

envelope::GridSpec mini_grid() {
  envelope::GridSpec g;
  g.v_step = 5.0;
  g.psidot_step = 1.0;
  return g;
}

struct Surrogate {
  envelope::SurrogateTransport model;
  envelope::Database db;
};

std::unique_ptr<Surrogate> build(bool linear_density, bool keep) {
  envelope::SurrogateTransport::Params p;
  p.linear_density = linear_density;
  auto s = std::make_unique<Surrogate>(Surrogate{envelope::SurrogateTransport(p), {}});
  envelope::BuildOptions opt;
  opt.workers = g_workers;
  opt.keep_envelopes = keep;
  s->db = envelope::build_database(
      s->model, envelope::enumerate_jobs(envelope::enumerate_failure_cases(), kAltitudes, kGammas), mini_grid(), opt);
  std::cerr << "  [" << (linear_density ? "weak-h" : "standard") << " surrogate database: " << s->db.records.size()
            << " envelopes, " << s->db.metadata.empty_jobs << " empty, " << fmt(s->db.metadata.runtime_s, 3)
            << " s]\n";
  return s;
}

const Surrogate& standard_db() {
  static const auto s = build(false, true);
  return *s;
}

const Surrogate& weak_h_db() {
  static const auto s = build(true, false);
  return *s;
}

InputVector random_input(Rng& rng) {
  return {rng.uniform(0.0, 30000.0), rng.uniform(-5.0, 5.0), rng.uniform(-30.0, 0.0), rng.uniform(0.0, 30.0)};
}

// ---- 1-3: structural counts ---------------------------------------------------

Outcome term_counts() {
  const std::vector<std::pair<std::string, std::size_t>> want{
      {"Poly2222", 15}, {"Poly3333", 35}, {"Poly3344", 68}, {"Poly4444", 70}, {"Poly3666", 195}};
  bool ok = true;
  std::string got;
  for (const auto& [name, n] : want) {
    const auto k = poly::enumerate_terms(poly::PolynomialSpec::parse(name)).size();
    ok = ok && k == n;
    got += (got.empty() ? "" : "/") + std::to_string(k);
  }
  return pass_if(ok, got + " terms (want 15/35/68/70/195)");
}

Outcome dof_identity() {
  Rng rng(991);
  std::vector<MfeRecord> recs(991);
  for (auto& r : recs) {
    r.input = random_input(rng);
    r.n_trim = 100.0 + 50.0 * std::sin(r.input.h / 9000.0) + r.input.gamma * r.input.ul + rng.normal();
  }
  const std::vector<std::pair<std::string, std::size_t>> want{{"Poly2222", 976}, {"Poly3333", 956}, {"Poly3344", 923}};
  bool ok = true;
  std::string got;
  for (const auto& [name, dof] : want) {
    const auto fit = poly::fit(recs, poly::PolynomialSpec::parse(name), Target::NTrim);
    ok = ok && fit.stats.dof == dof && fit.stats.m == 991;
    got += (got.empty() ? "" : "/") + std::to_string(fit.stats.dof);
  }
  return pass_if(ok, "dof " + got + " at m = 991 (want 976/956/923)");
}

Outcome network_counts() {
  const auto a = mlp::param_count(10, 4, 1), b = mlp::param_count(22, 4, 2);
  return pass_if(a == 61 && b == 156, std::to_string(a) + " and " + std::to_string(b) + " parameters (want 61, 156)");
}

// ---- 4: QR vs normal equations ------------------------------------------------

Outcome qr_oracle() {
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    Rng rng(seed);
    const std::size_t n = 2 + rng.below(19);
    const std::size_t m = n + 5 + rng.below(180);
    Matrix a(m, n);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) a(i, j) = rng.uniform(-1.0, 1.0);
    Vector y(m);
    for (double& v : y) v = rng.uniform(-10.0, 10.0);
    const Vector qr = linalg::lsq_solve(a, y);
    const Vector ne = oracle::normal_equations_solve(a, y);
    Vector d(n);
    for (std::size_t j = 0; j < n; ++j) d[j] = qr[j] - ne[j];
    worst = std::max(worst, linalg::norm2(d) / std::max(linalg::norm2(ne), 1e-300));
  }
  return pass_if(worst <= 1e-8, "max relative difference " + fmt(worst) + " over 100 systems (limit 1e-8)");
}

// ---- 5: generate-then-recover ----------------------------------------------------

Outcome recovery() {
  // Polynomial: exact Poly3344 target in autoscaled inputs.
  Rng rng(5);
  const auto spec = poly::PolynomialSpec::parse("Poly3344");
  const auto terms = poly::enumerate_terms(spec);
  std::vector<MfeRecord> recs(400);
  for (auto& r : recs) r.input = random_input(rng);
  ScalingSpec s;
  s.input_weights = ScalingSpec::autoscale_weights(recs);
  std::vector<double> c(terms.size());
  for (double& v : c) v = rng.uniform(-2.0, 2.0);
  for (auto& r : recs) {
    const auto z = s.scale(r.input);
    double y = 0.0;
    for (std::size_t k = 0; k < terms.size(); ++k) {
      double t = c[k];
      for (std::size_t d = 0; d < 4; ++d) t *= std::pow(z[d], terms[k][d]);
      y += t;
    }
    r.n_trim = y;
  }
  const auto fit = poly::fit(recs, spec, Target::NTrim);
  double poly_res = 0.0;
  for (double e : poly::metrics(fit, recs).residuals) poly_res = std::max(poly_res, std::fabs(e));

  // f7: targets from a fixed tanh model on range-scaled inputs.
  const nlsq::TanhModelSpec f7{1};
  const Vector truth{0.3, 1.2, 0.9, -0.6, 0.7, 0.5, -0.1};
  std::vector<MfeRecord> trecs(250);
  Rng trng(7);
  for (auto& r : trecs) {
    r.input = random_input(trng);
    const std::array<double, 4> z{r.input.h / 15000.0 - 1.0, r.input.gamma / 5.0, r.input.ll / 15.0 + 1.0,
                                  r.input.ul / 15.0 - 1.0};
    r.n_trim = nlsq::tanh_model_eval(f7, truth, z);
  }
  nlsq::TanhFitOptions topt;
  topt.restarts = 15;
  topt.seed = 11;
  topt.workers = g_workers;
  const auto tfit = nlsq::fit_tanh_family(trecs, {}, f7, Target::NTrim, topt);
  double tbest = std::numeric_limits<double>::infinity();
  for (const auto& r : tfit.restarts) tbest = std::min(tbest, r.train_objective);

  // MLP: targets from a fixed 4-3-1 network.
  Rng mrng(6);
  Vector flat(mlp::param_count(3, 4, 1));
  for (double& v : flat) v = mrng.uniform(-1.5, 1.5);
  const auto net_truth = mlp::MlpParams::unflatten(3, 4, 1, flat);
  std::vector<MfeRecord> mrecs(240);
  for (auto& r : mrecs) {
    r.input = random_input(mrng);
    const double z[4] = {r.input.h / 15000.0 - 1.0, r.input.gamma / 5.0, r.input.ll / 15.0 + 1.0,
                         r.input.ul / 15.0 - 1.0};
    r.n_trim = mlp::forward(net_truth, z)[0];
  }
  mlp::TrainConfig mcfg;
  mcfg.restarts = 15;
  mcfg.max_epochs = 1000;
  mcfg.max_validation_failures = 50;
  mcfg.seed = 9;
  mcfg.workers = g_workers;
  const auto net = mlp::train(mrecs, {}, {}, 3, {Target::NTrim}, mcfg);

  const bool ok = poly_res < 1e-8 && tbest < 1e-10 && net.train_mse < 1e-10;
  return pass_if(ok, "Poly3344 max residual " + fmt(poly_res) + " (< 1e-8), f7 best-of-15 " + fmt(tbest) +
                         ", MLP best-of-15 " + fmt(net.train_mse) + " (< 1e-10)");
}

// ---- 6: network Jacobian -----------------------------------------------------------

Outcome jacobian() {
  Rng rng(2);
  double worst = 0.0;
  for (int draw = 0; draw < 50; ++draw) {
    const std::size_t s1 = 1 + rng.below(22), s2 = 1 + rng.below(2);
    Vector flat(mlp::param_count(s1, 4, s2));
    for (double& v : flat) v = rng.uniform(-1.0, 1.0);
    const auto p = mlp::MlpParams::unflatten(s1, 4, s2, flat);
    const std::size_t m = 1 + rng.below(6);
    Matrix z(m, 4), t(m, s2);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t k = 0; k < 4; ++k) z(i, k) = rng.uniform(-1.0, 1.0);
      for (std::size_t k = 0; k < s2; ++k) t(i, k) = rng.uniform(-1.0, 1.0);
    }
    const Matrix ja = mlp::marquardt_jacobian(p, z);
    // Central differences on the flattened parameters.
    Matrix jn(ja.rows(), ja.cols());
    for (std::size_t c = 0; c < flat.size(); ++c) {
      Vector up = flat, dn = flat;
      const double h = 1e-6 * std::max(1.0, std::fabs(flat[c]));
      up[c] += h;
      dn[c] -= h;
      const Vector eu = mlp::residuals(mlp::MlpParams::unflatten(s1, 4, s2, up), z, t);
      const Vector ed = mlp::residuals(mlp::MlpParams::unflatten(s1, 4, s2, dn), z, t);
      for (std::size_t r = 0; r < eu.size(); ++r) jn(r, c) = (eu[r] - ed[r]) / (2.0 * h);
    }
    worst = std::max(worst, (ja - jn).max_abs() / std::max(1.0, ja.max_abs()));
  }
  return pass_if(worst <= 1e-5, "max relative error " + fmt(worst) + " over 50 draws, S1 <= 22 (limit 1e-5)");
}

// ---- 7: LM vs TRR --------------------------------------------------------------

Outcome optimizers() {
  const nlsq::TanhModelSpec spec{1};
  Rng rng(2024);
  std::vector<std::array<double, 4>> z(300);
  std::vector<double> y(300);
  const Vector truth{0.2, 0.9, 0.8, -0.5, 1.1, 0.4, -0.2};
  for (std::size_t i = 0; i < z.size(); ++i) {
    for (double& v : z[i]) v = rng.uniform(-1.0, 1.0);
    y[i] = nlsq::tanh_model_eval(spec, truth, z[i]) + 0.05 * rng.normal();
  }
  const auto model = nlsq::tanh_residual_model(spec, z, y);
  Vector eta0(7);
  for (double& v : eta0) v = rng.uniform(-1.0, 1.0);
  const auto lm = nlsq::lm_solve(model, eta0);
  const auto tr = nlsq::trr_solve(model, eta0);
  const double rel = std::fabs(lm.objective - tr.objective) / lm.objective;
  return pass_if(rel <= 1e-3 && lm.trace.iterations < tr.trace.iterations,
                 "objectives differ by " + fmt(rel) + " relative (limit 1e-3); iterations LM " +
                     std::to_string(lm.trace.iterations) + " vs TRR " + std::to_string(tr.trace.iterations));
}

// ---- 8: Sobol oracles -------------------------------------------------------------

Outcome sobol_oracles() {
  gsa::FactorSpace cube;
  for (int j = 0; j < 3; ++j) cube.factors.push_back({"x" + std::to_string(j + 1), 0.0, 1.0});
  gsa::AnalysisOptions opt;
  opt.workers = g_workers;
  opt.resamples = 200;
  const auto add = gsa::analyze(
      cube, [](std::span<const double> x) { return x[0] + 2.0 * x[1] + 3.0 * x[2]; }, 10000, opt);
  const double want[3] = {1.0 / 14.0, 4.0 / 14.0, 9.0 / 14.0};
  double add_err = 0.0;
  for (std::size_t j = 0; j < 3; ++j) add_err = std::max(add_err, std::fabs(add.s_first[j] - want[j]));

  const double pi = std::numbers::pi, a = 7.0, b = 0.1;
  const gsa::FactorSpace ish{{{"x1", -pi, pi}, {"x2", -pi, pi}, {"x3", -pi, pi}}, {}};
  opt.resamples = 1000;
  opt.seed = 4;
  const auto r = gsa::analyze(
      ish,
      [&](std::span<const double> x) {
        return std::sin(x[0]) + a * std::sin(x[1]) * std::sin(x[1]) + b * std::pow(x[2], 4) * std::sin(x[0]);
      },
      100000, opt);
  const double v1 = 0.5 * std::pow(1.0 + b * std::pow(pi, 4) / 5.0, 2), v2 = a * a / 8.0;
  const double v13 = b * b * std::pow(pi, 8) * (1.0 / 18.0 - 1.0 / 50.0), v = v1 + v2 + v13;
  const double s[3] = {v1 / v, v2 / v, 0.0}, st[3] = {(v1 + v13) / v, v2 / v, v13 / v};
  int inside = 0;
  for (std::size_t j = 0; j < 3; ++j) inside += r.ci_first[j].contains(s[j]) + r.ci_total[j].contains(st[j]);
  return pass_if(add_err <= 0.02 && inside == 6, "additive max deviation " + fmt(add_err) +
                                                     " (limit 0.02); Ishigami closed forms inside 95% CI: " +
                                                     std::to_string(inside) + "/6");
}

// ---- 9: evaluation counts --------------------------------------------------------

Outcome plan_counts() {
  const auto a = gsa::SamplePlan::evaluation_count(3, 500000, false);
  const auto b = gsa::SamplePlan::evaluation_count(3, 4000000, false);
  return pass_if(a == 2500000 && b == 20000000,
                 std::to_string(a) + " and " + std::to_string(b) + " evaluations (want 2500000, 20000000)");
}

// ---- 10: throughput ------------------------------------------------------------------

Outcome throughput() {
  Rng rng(10);
  std::vector<MfeRecord> recs(600);
  for (auto& r : recs) {
    r.input = random_input(rng);
    r.n_trim = 200.0 - r.input.h / 300.0 + 3.0 * r.input.gamma + 0.5 * (r.input.ul - r.input.ll) + rng.normal();
  }
  const artifacts::Model model(poly::fit(recs, poly::PolynomialSpec::parse("Poly3344"), Target::NTrim));
  const auto factors = pipeline::InputFactors::make({"h", "gamma", "ul"}, {15000.0, 0.0, -30.0, 30.0});
  const auto plan = gsa::plan_samples(factors.space, 100000, 1, false);
  const auto t0 = std::chrono::steady_clock::now();
  const auto y = gsa::evaluate(
      plan, [&](std::span<const double> x) { return model.predict(factors.map(x))[0]; }, 1);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double per_min = static_cast<double>(plan.evaluation_count()) / secs * 60.0;
  (void)y;
  return pass_if(per_min >= 1e5, fmt(per_min, 3) + " Poly3344 evaluations per minute on one thread (floor 1e5)");
}

// ---- 11: envelope properties ---------------------------------------------------------

Outcome envelope_properties() {
  const auto& s = standard_db();
  std::map<std::tuple<double, double, double, double>, std::size_t> n;
  for (const auto& e : s.db.envelopes) n[{e.h, e.gamma, e.failure.ll, e.failure.ul}] = e.n_trim;
  const auto cases = envelope::enumerate_failure_cases();

  std::size_t alt_series = 0, alt_bad = 0;
  std::string alt_example;
  for (double g : kGammas)
    for (const auto& c : cases) {
      ++alt_series;
      for (std::size_t k = 1; k < kAltitudes.size(); ++k) {
        const auto lo = n.at({kAltitudes[k - 1], g, c.ll, c.ul}), hi = n.at({kAltitudes[k], g, c.ll, c.ul});
        if (hi > lo) {
          if (alt_bad == 0)
            alt_example = "e.g. gamma " + fmt(g) + " [" + fmt(c.ll) + ", " + fmt(c.ul) + "] " + fmt(kAltitudes[k - 1]) +
                          " ft " + std::to_string(lo) + " -> " + fmt(kAltitudes[k]) + " ft " + std::to_string(hi);
          ++alt_bad;
          break;
        }
      }
    }

  std::size_t pairs = 0, incl_bad = 0;
  for (double h : kAltitudes)
    for (double g : kGammas)
      for (const auto& inner : cases)
        for (const auto& outer : cases) {
          if (inner == outer || outer.ll > inner.ll || outer.ul < inner.ul) continue;
          ++pairs;
          if (n.at({h, g, inner.ll, inner.ul}) > n.at({h, g, outer.ll, outer.ul})) ++incl_bad;
        }

  // Residuals re-evaluated from the stored state and controls.
  std::size_t points = 0;
  double worst = 0.0;
  for (const auto& e : s.db.envelopes)
    for (const auto& t : e.accepted) {
      ++points;
      for (double d : s.model.derivatives(t.state, t.control, e.h)) worst = std::max(worst, std::fabs(d));
    }

  const bool ok = alt_bad == 0 && incl_bad == 0 && worst <= 1e-6;
  std::string detail = "altitude: " + std::to_string(alt_bad) + "/" + std::to_string(alt_series) +
                       " series increase" + (alt_bad ? " (" + alt_example + ")" : "") +
                       "; inclusion: " + std::to_string(incl_bad) + "/" + std::to_string(pairs) +
                       " nested pairs out of order; residual: max " + fmt(worst) + " over " +
                       std::to_string(points) + " accepted points (limit 1e-6)";
  return pass_if(ok, detail);
}

// ---- 12: end-to-end trends -----------------------------------------------------------

Outcome trends() {
  const auto& s = standard_db();
  const auto& records = s.db.records;
  const auto folds = pipeline::split(records, {}, 1);
  const auto net_folds = pipeline::carve_validation(folds, 0.1, 1);
  const auto train = pipeline::select(records, folds.train), test = pipeline::select(records, folds.test);
  const auto common = pipeline::common_scaling(train, {Target::NTrim});

  std::vector<double> poly_mse;
  for (const char* name : {"Poly2222", "Poly3333", "Poly3344"}) {
    const artifacts::Model m(poly::fit(train, poly::PolynomialSpec::parse(name), Target::NTrim));
    poly_mse.push_back(pipeline::normalized_mse(m, test, common));
  }
  const bool decreasing = poly_mse[0] > poly_mse[1] && poly_mse[1] > poly_mse[2];
  const double best_poly = *std::min_element(poly_mse.begin(), poly_mse.end());

  mlp::TrainConfig cfg;
  cfg.restarts = 15;
  cfg.seed = 1;
  cfg.workers = g_workers;
  const auto net = mlp::train(pipeline::select(records, net_folds.train),
                              pipeline::select(records, net_folds.validation), test, 10, {Target::NTrim}, cfg);
  const double mlp_mse = pipeline::normalized_mse(artifacts::Model(net), test, common);

  // Over-specification on the weak-h surrogate, probed between altitude levels.
  const auto& w = weak_h_db();
  const auto wf = pipeline::split(w.db.records, {}, 1);
  const auto probes = pipeline::synthetic_probe_records(w.model, mini_grid(), pipeline::synthetic_probe_inputs());
  std::vector<poly::PolynomialSpec> cands;
  for (const char* name : {"Poly3344", "Poly4344", "Poly4444"}) cands.push_back(poly::PolynomialSpec::parse(name));
  const auto diag = poly::degree_diagnostic(pipeline::select(w.db.records, wf.train),
                                            pipeline::select(w.db.records, wf.test), probes, cands, Target::NTrim);
  bool family_flagged = false, control_clean = true;
  std::string flags;
  for (const auto& e : diag) {
    const bool quartic_h = e.spec.name().substr(0, 5) == "Poly4";
    if (quartic_h && e.over_specified) {
      family_flagged = true;
      flags += (flags.empty() ? "" : ", ") + e.spec.name() + " (" + e.reason + ")";
    }
    if (e.spec.name() == "Poly3344" && e.over_specified) control_clean = false;
  }

  const bool ok = decreasing && family_flagged && control_clean && mlp_mse <= 2.0 * best_poly;
  return pass_if(ok, "test MSE Poly2222/3333/3344 " + fmt(poly_mse[0]) + " / " + fmt(poly_mse[1]) + " / " +
                         fmt(poly_mse[2]) + "; mlp10 " + fmt(mlp_mse) + " (limit " + fmt(2.0 * best_poly) +
                         "); weak-h flags: " + (flags.empty() ? "none" : flags) +
                         (control_clean ? "" : "; Poly3344 also flagged"));
}

// ---- 13: reference database ------------------------------------------------------------

std::string g_reference_db;

Outcome reference_database() {
  if (g_reference_db.empty()) return {Verdict::Skip, "no database given (--reference-db or MFE_REFERENCE_DB)"};
  const auto records = non_empty(envelope::ingest_csv(g_reference_db));
  const auto folds = pipeline::split(records, {}, 1);
  const auto train = pipeline::select(records, folds.train), test = pipeline::select(records, folds.test);
  const auto fit = poly::fit(train, poly::PolynomialSpec::parse("Poly3344"), Target::NTrim);
  const double r2a = fit.stats.r2_adjusted;
  const artifacts::Model model(fit);
  const double mse = pipeline::normalized_mse(model, test, pipeline::common_scaling(train, {Target::NTrim}));
  const double ref = 9.5569e-5;

  const auto factors = pipeline::InputFactors::make({"h", "gamma", "ul"}, {15000.0, 0.0, -30.0, 30.0});
  gsa::AnalysisOptions opt;
  opt.workers = g_workers;
  opt.resamples = 200;
  const auto s = gsa::analyze(
      factors.space, [&](std::span<const double> x) { return model.predict(factors.map(x))[0]; }, 10000, opt);
  const bool order = s.s_first[2] > s.s_first[0] && s.s_first[0] > s.s_first[1];
  const bool ok = r2a >= 0.99 && mse <= 3.0 * ref && mse >= ref / 3.0 && order;
  return pass_if(ok, std::to_string(records.size()) + " records; Poly3344 adjusted R2 " + fmt(r2a, 6) +
                         ", test MSE " + fmt(mse) + " (within 3x of 9.5569e-5); S_UL " + fmt(s.s_first[2], 3) +
                         ", S_h " + fmt(s.s_first[0], 3) + ", S_gamma " + fmt(s.s_first[1], 3));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string only, allow;
  app.add_option("--only", only, "comma-separated criterion numbers");
  app.add_option("--allow-fail", allow, "criteria whose failure does not fail the run");
  app.add_option("--reference-db", g_reference_db, "reference database CSV for criterion 13");
  app.add_option("--workers", g_workers, "worker threads");
  CLI11_PARSE(app, argc, argv);
  if (g_reference_db.empty())
    if (const char* env = std::getenv("MFE_REFERENCE_DB")) g_reference_db = env;

  const auto numbers = [](const std::string& text) {
    std::set<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
      if (!item.empty()) out.insert(std::stoi(item));
    return out;
  };
  const auto selected = numbers(only), allowed = numbers(allow);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"term counts", term_counts},
      {"dof identity", dof_identity},
      {"network parameter counts", network_counts},
      {"QR vs normal equations", qr_oracle},
      {"coefficient recovery", recovery},
      {"network Jacobian", jacobian},
      {"LM vs TRR", optimizers},
      {"Sobol oracles", sobol_oracles},
      {"sample-plan arithmetic", plan_counts},
      {"GSA throughput", throughput},
      {"surrogate envelope properties", envelope_properties},
      {"end-to-end trends", trends},
      {"reference database", reference_database},
  };

  int blocking = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!selected.empty() && !selected.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {Verdict::Fail, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const char* tag = o.verdict == Verdict::Pass ? "PASS" : o.verdict == Verdict::Skip ? "SKIP" : "FAIL";
    std::cout << tag << "  " << std::setw(2) << id << "  " << criteria[i].first << ": " << o.detail << "  ["
              << fmt(secs, 3) << " s]";
    if (o.verdict == Verdict::Fail && allowed.count(id)) std::cout << "  (known failure, not blocking)";
    std::cout << std::endl;
    if (o.verdict == Verdict::Fail && !allowed.count(id)) ++blocking;
  }
  return blocking == 0 ? 0 : 1;
}
