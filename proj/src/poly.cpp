#include "mfe/poly.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mfe/error.hpp"
#include "mfe/stats.hpp"

namespace mfe::poly {

using linalg::Matrix;
using linalg::Vector;

void PolynomialSpec::validate() const {
  if (total_degree < 1) throw Error(ErrorKind::InvalidArgument, "total degree must be >= 1");
  for (int cap : per_var_max) {
    if (cap < 0 || cap > total_degree) {
      throw Error(ErrorKind::InvalidArgument, "per-variable cap must lie in [0, total degree]");
    }
  }
}

std::string PolynomialSpec::name() const {
  std::string s = "Poly";
  for (int c : per_var_max) s += std::to_string(c);
  if (total_degree != *std::max_element(per_var_max.begin(), per_var_max.end())) {
    s += "d" + std::to_string(total_degree);
  }
  return s;
}

PolynomialSpec PolynomialSpec::parse(const std::string& name) {
  const std::string prefix = "Poly";
  if (name.size() < prefix.size() + 4 || name.compare(0, prefix.size(), prefix) != 0) {
    throw Error(ErrorKind::InvalidArgument, "polynomial spec must look like Poly3344, got '" + name + "'");
  }
  PolynomialSpec spec;
  for (std::size_t i = 0; i < 4; ++i) {
    const char c = name[prefix.size() + i];
    if (c < '0' || c > '9') throw Error(ErrorKind::InvalidArgument, "bad polynomial spec '" + name + "'");
    spec.per_var_max[i] = c - '0';
  }
  spec.total_degree = *std::max_element(spec.per_var_max.begin(), spec.per_var_max.end());
  const std::string rest = name.substr(prefix.size() + 4);
  if (!rest.empty()) {
    if (rest[0] != 'd' || rest.size() < 2) throw Error(ErrorKind::InvalidArgument, "bad polynomial spec '" + name + "'");
    spec.total_degree = std::stoi(rest.substr(1));
  }
  spec.validate();
  return spec;
}

std::vector<Exponents> enumerate_terms(const PolynomialSpec& spec) {
  spec.validate();
  std::vector<Exponents> terms;
  const auto& cap = spec.per_var_max;
  for (int deg = 0; deg <= spec.total_degree; ++deg) {
    for (int a = std::min(deg, cap[0]); a >= 0; --a)
      for (int b = std::min(deg - a, cap[1]); b >= 0; --b)
        for (int c = std::min(deg - a - b, cap[2]); c >= 0; --c) {
          const int d = deg - a - b - c;
          if (d <= cap[3]) terms.push_back({a, b, c, d});
        }
  }
  return terms;
}

namespace {

// powers[v][p] = z_v^p
using PowerTable = std::array<std::array<double, 10>, 4>;

void fill_powers(const std::array<double, 4>& z, const std::array<int, 4>& max_power, PowerTable& pw) {
  for (std::size_t v = 0; v < 4; ++v) {
    pw[v][0] = 1.0;
    for (int p = 1; p <= max_power[v]; ++p) pw[v][p] = pw[v][p - 1] * z[v];
  }
}

std::array<int, 4> max_powers(std::span<const Exponents> terms) {
  std::array<int, 4> mp{};
  for (const auto& t : terms)
    for (std::size_t v = 0; v < 4; ++v) mp[v] = std::max(mp[v], t[v]);
  for (int p : mp)
    if (p > 9) throw Error(ErrorKind::InvalidArgument, "per-variable exponent above 9 is unsupported");
  return mp;
}

Vector term_row(const std::array<double, 4>& z, std::span<const Exponents> terms) {
  PowerTable pw{};
  fill_powers(z, max_powers(terms), pw);
  Vector row(terms.size());
  for (std::size_t k = 0; k < terms.size(); ++k) {
    const auto& t = terms[k];
    row[k] = pw[0][t[0]] * pw[1][t[1]] * pw[2][t[2]] * pw[3][t[3]];
  }
  return row;
}

}  // namespace

Matrix design_matrix(std::span<const InputVector> inputs, std::span<const Exponents> terms,
                     const ScalingSpec& scaling) {
  if (inputs.empty()) throw Error(ErrorKind::InsufficientData, "design matrix needs records");
  for (double w : scaling.input_weights)
    if (!(w > 0.0)) throw Error(ErrorKind::InvalidArgument, "scaling weights must be positive");
  const auto mp = max_powers(terms);
  Matrix d(inputs.size(), terms.size());
  PowerTable pw{};
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    fill_powers(scaling.scale(inputs[i]), mp, pw);
    auto row = d.row(i);
    for (std::size_t k = 0; k < terms.size(); ++k) {
      const auto& t = terms[k];
      row[k] = pw[0][t[0]] * pw[1][t[1]] * pw[2][t[2]] * pw[3][t[3]];
    }
  }
  return d;
}

std::vector<double> LinearFit::denormalized_coefficients() const {
  std::vector<double> out(coefficients.size());
  const double half = scaling.output_halfrange.at(0);
  for (std::size_t k = 0; k < coefficients.size(); ++k) out[k] = coefficients[k] * half;
  if (!out.empty()) out[0] += scaling.output_offset.at(0);
  return out;
}

double adjusted_r2(double r2, std::size_t m, std::size_t predictors) {
  if (m <= predictors + 1) throw Error(ErrorKind::InsufficientData, "adjusted R2 needs m > predictors + 1");
  return 1.0 - (1.0 - r2) * static_cast<double>(m - 1) / static_cast<double>(m - predictors - 1);
}

LinearFit fit_scaled(std::span<const MfeRecord> records, const PolynomialSpec& spec, Target target,
                     const ScalingSpec& scaling) {
  for (const auto& r : records)
    if (r.empty) throw Error(ErrorKind::InvalidArgument, "empty envelope records cannot be fitted");
  LinearFit f;
  f.spec = spec;
  f.target = target;
  f.exponent_table = enumerate_terms(spec);
  f.scaling = scaling;
  const std::size_t m = records.size();
  const std::size_t p = f.exponent_table.size();
  if (m <= p) {
    throw Error(ErrorKind::InsufficientData, spec.name() + " needs more than " + std::to_string(p) +
                                                 " records, got " + std::to_string(m));
  }
  std::vector<InputVector> inputs;
  Vector y(m);
  inputs.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    inputs.push_back(records[i].input);
    y[i] = scaling.normalize(target_value(records[i], target));
  }
  const Matrix d = design_matrix(inputs, f.exponent_table, scaling);
  const auto qr = linalg::qr_householder(d);
  f.coefficients = linalg::back_substitute(qr.r, linalg::transpose_times(qr.q, y));
  f.r_factor = qr.r;

  const Vector yhat = d * f.coefficients;
  double sse = 0.0;
  for (std::size_t i = 0; i < m; ++i) sse += (y[i] - yhat[i]) * (y[i] - yhat[i]);
  const double ybar = stats::mean(y);
  double sst = 0.0;
  for (double v : y) sst += (v - ybar) * (v - ybar);

  f.stats.m = m;
  f.stats.coefficient_count = p;
  f.stats.dof = m - p;
  f.stats.sse = sse;
  f.stats.train_mse = sse / static_cast<double>(m);
  f.stats.r2 = sst > 0.0 ? 1.0 - sse / sst : 1.0;
  f.stats.r2_adjusted = adjusted_r2(f.stats.r2, m, p - 1);
  f.dataset_fingerprint = fingerprint(records);
  return f;
}

LinearFit fit(std::span<const MfeRecord> records, const PolynomialSpec& spec, Target target) {
  spec.validate();
  if (records.empty()) throw Error(ErrorKind::InsufficientData, "no records to fit");
  ScalingSpec scaling;
  scaling.input_weights = ScalingSpec::autoscale_weights(records);
  std::vector<double> y;
  y.reserve(records.size());
  for (const auto& r : records) y.push_back(target_value(r, target));
  scaling.add_output_channel(y);
  return fit_scaled(records, spec, target, scaling);
}

double predict_normalized(const LinearFit& fit, const InputVector& input) {
  const Vector row = term_row(fit.scaling.scale(input), fit.exponent_table);
  return linalg::dot(row, fit.coefficients);
}

double predict(const LinearFit& fit, const InputVector& input) {
  return fit.scaling.denormalize(predict_normalized(fit, input));
}

long long predict_rounded(const LinearFit& fit, const InputVector& input) {
  const double v = predict(fit, input);
  return v <= 0.0 ? 0 : std::llround(v);
}

FastEvaluator::FastEvaluator(const LinearFit& fit)
    : terms_(fit.exponent_table), coeffs_(fit.coefficients), scaling_(fit.scaling) {
  max_power_ = max_powers(terms_);
}

double FastEvaluator::operator()(const InputVector& input) const {
  PowerTable pw;
  fill_powers(scaling_.scale(input), max_power_, pw);
  double s = 0.0;
  for (std::size_t k = 0; k < terms_.size(); ++k) {
    const auto& t = terms_[k];
    s += coeffs_[k] * pw[0][t[0]] * pw[1][t[1]] * pw[2][t[2]] * pw[3][t[3]];
  }
  return scaling_.denormalize(s);
}

Metrics metrics(const LinearFit& fit, std::span<const MfeRecord> records) {
  if (records.empty()) throw Error(ErrorKind::InsufficientData, "metrics need records");
  Metrics out;
  out.residuals.reserve(records.size());
  std::vector<double> y;
  y.reserve(records.size());
  double sse = 0.0;
  for (const auto& r : records) {
    const double yn = fit.scaling.normalize(target_value(r, fit.target));
    const double e = yn - predict_normalized(fit, r.input);
    y.push_back(yn);
    out.residuals.push_back(e);
    sse += e * e;
  }
  const std::size_t m = records.size();
  out.mse = sse / static_cast<double>(m);
  const double ybar = stats::mean(y);
  double sst = 0.0;
  for (double v : y) sst += (v - ybar) * (v - ybar);
  out.r2 = sst > 0.0 ? 1.0 - sse / sst : (sse == 0.0 ? 1.0 : 0.0);
  const std::size_t predictors = fit.exponent_table.size() - 1;
  out.r2_adjusted = m > predictors + 1 ? adjusted_r2(out.r2, m, predictors) : out.r2;
  return out;
}

double error_percentage(double y, double yhat) {
  if (y == 0.0) throw Error(ErrorKind::DivisionByZero, "error percentage undefined for a zero target");
  return std::fabs(y - yhat) / std::fabs(y) * 100.0;
}

Interval prediction_bounds(const LinearFit& fit, const InputVector& input, double confidence) {
  if (!(confidence > 0.0 && confidence < 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "confidence must lie in (0, 1)");
  }
  if (fit.r_factor.empty()) throw Error(ErrorKind::InvalidArgument, "fit carries no R factor");
  const Vector x = term_row(fit.scaling.scale(input), fit.exponent_table);
  // xᵀ(RᵀR)⁻¹x = ‖R⁻ᵀx‖²
  const Vector w = linalg::forward_substitute_transposed(fit.r_factor, x);
  const double leverage = linalg::dot(w, w);
  const double dof = static_cast<double>(fit.stats.dof);
  const double s = std::sqrt(fit.stats.sse / dof);
  const double t = stats::student_t_quantile(0.5 * (1.0 + confidence), dof);
  const double center = linalg::dot(x, fit.coefficients);
  const double half = t * s * std::sqrt(1.0 + leverage);
  Interval iv;
  iv.center = fit.scaling.denormalize(center);
  const double a = fit.scaling.denormalize(center - half);
  const double b = fit.scaling.denormalize(center + half);
  iv.lower = std::min(a, b);
  iv.upper = std::max(a, b);
  return iv;
}

std::vector<DiagnosticEntry> degree_diagnostic(std::span<const MfeRecord> train,
                                               std::span<const MfeRecord> test,
                                               std::span<const MfeRecord> probes,
                                               std::span<const PolynomialSpec> candidates,
                                               Target target) {
  std::vector<DiagnosticEntry> report;
  report.reserve(candidates.size());
  for (const auto& spec : candidates) {
    DiagnosticEntry e;
    e.spec = spec;
    try {
      const LinearFit f = fit(train, spec, target);
      e.fitted = true;
      e.train_mse = f.stats.train_mse;
      e.test_mse = test.empty() ? 0.0 : metrics(f, test).mse;
      if (!probes.empty()) {
        e.probe_mse = metrics(f, probes).mse;
        for (const auto& p : probes) {
          const double y = target_value(p, target);
          e.probe_errors_pct.push_back(y != 0.0 ? error_percentage(y, predict(f, p.input)) : NAN);
        }
      }
    } catch (const Error& err) {
      if (err.kind() != ErrorKind::RankDeficient && err.kind() != ErrorKind::InsufficientData) throw;
      e.over_specified = true;
      e.reason = err.kind() == ErrorKind::RankDeficient ? "rank-deficient design" : "too few records";
    }
    report.push_back(std::move(e));
  }

  std::vector<double> probe_mses;
  for (const auto& e : report)
    if (e.fitted) probe_mses.push_back(e.probe_mse);
  const double median_probe = probe_mses.empty() ? 0.0 : stats::quantile(probe_mses, 0.5);
  for (auto& e : report) {
    if (!e.fitted || probes.empty()) continue;
    const double threshold = 10.0 * std::max(e.test_mse, median_probe);
    if (e.probe_mse > threshold || !std::isfinite(e.probe_mse)) {
      e.over_specified = true;
      e.reason = "probe error exceeds ten times the reference level";
    }
  }

  auto score = [](const DiagnosticEntry& e) {
    return e.fitted ? std::max(e.test_mse, e.probe_mse) : INFINITY;
  };
  std::stable_sort(report.begin(), report.end(), [&](const DiagnosticEntry& a, const DiagnosticEntry& b) {
    if (a.over_specified != b.over_specified) return !a.over_specified;
    return score(a) < score(b);
  });
  return report;
}

}  // namespace mfe::poly
