#include "mfe/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "mfe/mlp.hpp"
#include "mfe/nlsq.hpp"
#include "mfe/poly.hpp"
#include "mfe/rng.hpp"

namespace mfe::pipeline {

namespace fs = std::filesystem;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument:
    case ErrorKind::CorrelatedFactors:
      return 2;
    case ErrorKind::ParseError:
    case ErrorKind::InvariantViolation:
    case ErrorKind::InsufficientData:
    case ErrorKind::ShapeMismatch:
    case ErrorKind::Io:
      return 3;
    case ErrorKind::RankDeficient:
    case ErrorKind::NonConvergence:
    case ErrorKind::NonFiniteEvaluation:
    case ErrorKind::DivisionByZero:
    case ErrorKind::ThetaSingularity:
    case ErrorKind::Infeasible:
    case ErrorKind::DegenerateVariance:
      return 4;
  }
  return 4;
}

StageError::StageError(std::string stage, const Error& cause)
    : Error(cause.kind(), [&] {
        std::string what = cause.what();
        const std::string prefix = std::string(to_string(cause.kind())) + ": ";
        if (what.rfind(prefix, 0) == 0) what.erase(0, prefix.size());
        return "[" + stage + "] " + what;
      }()),
      stage_(std::move(stage)) {}

namespace {

template <typename F>
auto in_stage(const std::string& stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(stage, e);
  } catch (const nlohmann::json::exception& e) {
    throw StageError(stage, Error(ErrorKind::ParseError, e.what()));
  }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Json input_json(const InputVector& z) { return {{"h", z.h}, {"gamma", z.gamma}, {"ll", z.ll}, {"ul", z.ul}}; }

InputVector input_from(const Json& j) {
  return {j.at("h").get<double>(), j.at("gamma").get<double>(), j.at("ll").get<double>(), j.at("ul").get<double>()};
}

Json nullable(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }
double from_nullable(const Json& j) { return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>(); }

Json targets_json(const std::vector<Target>& ts) {
  Json out = Json::array();
  for (Target t : ts) out.push_back(to_string(t));
  return out;
}

std::vector<Target> targets_from(const Json& j) {
  std::vector<Target> out;
  for (const auto& t : j) out.push_back(parse_target(t.get<std::string>()));
  return out;
}

// Training-set R² over every output channel on the common scale.
double pooled_r2(const artifacts::Model& model, std::span<const MfeRecord> records, const ScalingSpec& common) {
  const auto targets = model.targets();
  double sse = 0.0, sst = 0.0;
  for (std::size_t c = 0; c < targets.size(); ++c) {
    double mean = 0.0;
    for (const auto& r : records) mean += common.normalize(target_value(r, targets[c]), c);
    mean /= static_cast<double>(records.size());
    for (const auto& r : records) {
      const double y = common.normalize(target_value(r, targets[c]), c);
      const double yhat = common.normalize(model.predict(r.input)[c], c);
      sse += (y - yhat) * (y - yhat);
      sst += (y - mean) * (y - mean);
    }
  }
  return sst > 0.0 ? 1.0 - sse / sst : 0.0;
}

double adjusted_for(const artifacts::Model& model, std::span<const MfeRecord> train, const ScalingSpec& common) {
  const std::size_t m = train.size() * model.targets().size();
  const std::size_t p = model.coefficient_count();
  if (m <= p) return std::numeric_limits<double>::quiet_NaN();
  return poly::adjusted_r2(pooled_r2(model, train, common), m, p - 1);
}

}  // namespace

void SplitRatios::validate() const {
  if (train < 0.0 || validation < 0.0 || test < 0.0) throw Error(ErrorKind::InvalidArgument, "negative split ratio");
  if (std::fabs(train + validation + test - 1.0) > 1e-9)
    throw Error(ErrorKind::InvalidArgument, "split ratios must sum to 1");
  if (train <= 0.0) throw Error(ErrorKind::InvalidArgument, "training ratio must be positive");
}

Folds split(std::span<const MfeRecord> records, const SplitRatios& ratios, std::uint64_t seed) {
  ratios.validate();
  const std::size_t n = records.size();
  if (n == 0) throw Error(ErrorKind::InsufficientData, "cannot split an empty database");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order.begin(), order.end());
  const auto count = [&](double r) { return static_cast<std::size_t>(std::floor(static_cast<double>(n) * r + 1e-9)); };
  const std::size_t ntrain = std::min(n, count(ratios.train));
  const std::size_t nval = std::min(n - ntrain, count(ratios.validation));
  Folds f;
  f.seed = seed;
  f.dataset_fingerprint = fingerprint(records);
  f.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(ntrain));
  f.validation.assign(order.begin() + static_cast<std::ptrdiff_t>(ntrain),
                      order.begin() + static_cast<std::ptrdiff_t>(ntrain + nval));
  f.test.assign(order.begin() + static_cast<std::ptrdiff_t>(ntrain + nval), order.end());
  for (auto* v : {&f.train, &f.validation, &f.test}) std::sort(v->begin(), v->end());
  if (f.test.empty()) f.warnings.push_back("test fold is empty");
  return f;
}

Folds carve_validation(const Folds& base, double validation_fraction, std::uint64_t seed) {
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
    throw Error(ErrorKind::InvalidArgument, "validation fraction must be in [0, 1)");
  const std::size_t n = base.size();
  const auto nval = static_cast<std::size_t>(std::floor(static_cast<double>(n) * validation_fraction + 1e-9));
  if (nval >= base.train.size()) throw Error(ErrorKind::InsufficientData, "training fold too small to carve validation");
  std::vector<std::size_t> pool = base.train;
  Rng rng(derive_seed(seed, 0x766c64));
  rng.shuffle(pool.begin(), pool.end());
  Folds f = base;
  f.validation.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(nval));
  f.train.assign(pool.begin() + static_cast<std::ptrdiff_t>(nval), pool.end());
  f.validation.insert(f.validation.end(), base.validation.begin(), base.validation.end());
  std::sort(f.train.begin(), f.train.end());
  std::sort(f.validation.begin(), f.validation.end());
  return f;
}

std::vector<MfeRecord> select(std::span<const MfeRecord> records, std::span<const std::size_t> indices) {
  std::vector<MfeRecord> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= records.size()) throw Error(ErrorKind::ShapeMismatch, "fold index out of range");
    out.push_back(records[i]);
  }
  return out;
}

Json to_json(const Folds& f) {
  return {{"seed", f.seed},
          {"dataset_fingerprint", f.dataset_fingerprint},
          {"train", f.train},
          {"validation", f.validation},
          {"test", f.test},
          {"warnings", f.warnings}};
}

Folds folds_from_json(const Json& j) {
  Folds f;
  f.seed = j.at("seed").get<std::uint64_t>();
  f.dataset_fingerprint = j.at("dataset_fingerprint").get<std::string>();
  f.train = j.at("train").get<std::vector<std::size_t>>();
  f.validation = j.at("validation").get<std::vector<std::size_t>>();
  f.test = j.at("test").get<std::vector<std::size_t>>();
  f.warnings = j.value("warnings", std::vector<std::string>{});
  std::set<std::size_t> seen;
  for (const auto* v : {&f.train, &f.validation, &f.test})
    for (std::size_t i : *v)
      if (!seen.insert(i).second) throw Error(ErrorKind::InvariantViolation, "folds overlap at record " + std::to_string(i));
  return f;
}

double multi_output_mse(const linalg::Matrix& predictions, const linalg::Matrix& targets) {
  if (predictions.rows() != targets.rows() || predictions.cols() != targets.cols())
    throw Error(ErrorKind::ShapeMismatch, "prediction and target shapes differ");
  if (predictions.rows() == 0 || predictions.cols() == 0)
    throw Error(ErrorKind::InsufficientData, "no samples for the MSE");
  double total = 0.0;
  for (std::size_t i = 0; i < predictions.rows(); ++i) {
    double sample = 0.0;
    for (std::size_t c = 0; c < predictions.cols(); ++c) {
      const double e = predictions(i, c) - targets(i, c);
      sample += e * e;
    }
    total += sample / static_cast<double>(predictions.cols());
  }
  return total / static_cast<double>(predictions.rows());
}

ScalingSpec common_scaling(std::span<const MfeRecord> train, const std::vector<Target>& targets) {
  ScalingSpec s;
  for (Target t : targets) {
    std::vector<double> v;
    for (const auto& r : train) v.push_back(target_value(r, t));
    s.add_output_channel(v);
  }
  return s;
}

double normalized_mse(const artifacts::Model& model, std::span<const MfeRecord> records, const ScalingSpec& common) {
  const auto targets = model.targets();
  linalg::Matrix pred(records.size(), targets.size()), obs(records.size(), targets.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto y = model.predict(records[i].input);
    for (std::size_t c = 0; c < targets.size(); ++c) {
      pred(i, c) = common.normalize(y[c], c);
      obs(i, c) = common.normalize(target_value(records[i], targets[c]), c);
    }
  }
  return multi_output_mse(pred, obs);
}

std::vector<ProbeRow> probe_eval(const Predictor& predict, std::span<const Probe> probes,
                                 std::span<const MfeRecord> train) {
  std::array<double, 4> lo{}, hi{};
  lo.fill(std::numeric_limits<double>::infinity());
  hi.fill(-std::numeric_limits<double>::infinity());
  for (const auto& r : train) {
    const auto z = r.input.as_array();
    for (std::size_t k = 0; k < 4; ++k) {
      lo[k] = std::min(lo[k], z[k]);
      hi[k] = std::max(hi[k], z[k]);
    }
  }
  std::vector<ProbeRow> out;
  for (const auto& p : probes) {
    ProbeRow row;
    row.probe = p;
    row.prediction = predict(p.input);
    if (row.prediction.size() != p.target.size()) throw Error(ErrorKind::ShapeMismatch, "probe target count mismatch");
    for (std::size_t c = 0; c < p.target.size(); ++c)
      row.error_pct.push_back(p.target[c] == 0.0 ? std::numeric_limits<double>::quiet_NaN()
                                                 : poly::error_percentage(p.target[c], row.prediction[c]));
    const auto z = p.input.as_array();
    for (std::size_t k = 0; k < 4; ++k)
      if (z[k] < lo[k] || z[k] > hi[k]) row.outside_hull = true;
    out.push_back(std::move(row));
  }
  return out;
}

Probe make_probe(const MfeRecord& record, const std::vector<Target>& targets, std::string origin) {
  Probe p;
  p.input = record.input;
  for (Target t : targets) p.target.push_back(target_value(record, t));
  p.origin = std::move(origin);
  return p;
}

std::vector<MfeRecord> test_probe_records(std::span<const MfeRecord> test, const std::vector<Target>& targets,
                                          std::size_t count) {
  if (test.empty() || count == 0) return {};
  std::array<double, 4> lo{}, hi{};
  lo.fill(std::numeric_limits<double>::infinity());
  hi.fill(-std::numeric_limits<double>::infinity());
  for (const auto& r : test) {
    const auto z = r.input.as_array();
    for (std::size_t k = 0; k < 4; ++k) {
      lo[k] = std::min(lo[k], z[k]);
      hi[k] = std::max(hi[k], z[k]);
    }
  }
  std::vector<std::pair<double, std::size_t>> ranked;
  for (std::size_t i = 0; i < test.size(); ++i) {
    bool usable = true;
    for (Target t : targets) usable = usable && target_value(test[i], t) != 0.0;
    if (!usable) continue;
    const auto z = test[i].input.as_array();
    double d = 0.0;
    for (std::size_t k = 0; k < 4; ++k) {
      const double w = hi[k] > lo[k] ? (z[k] - 0.5 * (lo[k] + hi[k])) / (hi[k] - lo[k]) : 0.0;
      d += w * w;
    }
    ranked.emplace_back(d, i);
  }
  std::sort(ranked.begin(), ranked.end());
  std::vector<MfeRecord> out;
  for (std::size_t k = 0; k < std::min(count, ranked.size()); ++k) out.push_back(test[ranked[k].second]);
  return out;
}

std::vector<InputVector> synthetic_probe_inputs() {
  return {{5000.0, 1.0, -30.0, 30.0}, {15000.0, -2.0, -10.0, 20.0}, {25000.0, 2.0, 0.0, 0.0}};
}

std::vector<MfeRecord> synthetic_probe_records(const envelope::DynamicsModel& model, const envelope::GridSpec& grid,
                                               const std::vector<InputVector>& inputs) {
  std::vector<MfeRecord> out;
  for (const auto& z : inputs) {
    const auto mfe = envelope::sweep_mfe2d(z.h, z.gamma, {z.ll, z.ul}, model, grid);
    if (!mfe.empty()) out.push_back(mfe.record());
  }
  return out;
}

InputFactors InputFactors::make(const std::vector<std::string>& names, const InputVector& fixed) {
  InputFactors f;
  f.fixed = fixed;
  f.names = names;
  std::set<std::string> seen;
  std::optional<std::size_t> ll, ul;
  bool jam = false;
  for (std::size_t i = 0; i < names.size(); ++i) {
    const std::string& n = names[i];
    if (!seen.insert(n).second) throw Error(ErrorKind::InvalidArgument, "factor '" + n + "' listed twice");
    if (n == "h")
      f.space.factors.push_back({n, 0.0, 30000.0});
    else if (n == "gamma")
      f.space.factors.push_back({n, -5.0, 5.0});
    else if (n == "ll" || n == "ul" || n == "jam")
      f.space.factors.push_back({n, -30.0, 30.0});
    else
      throw Error(ErrorKind::InvalidArgument, "unknown factor '" + n + "' (use h, gamma, ll, ul, jam)");
    if (n == "ll") ll = i;
    if (n == "ul") ul = i;
    if (n == "jam") jam = true;
  }
  if (jam && (ll || ul)) throw Error(ErrorKind::InvalidArgument, "jam already sets both rudder limits");
  if (ll && ul) f.space.dependent.emplace_back(*ll, *ul);
  f.space.validate();
  return f;
}

InputVector InputFactors::map(std::span<const double> x) const {
  InputVector z = fixed;
  for (std::size_t i = 0; i < names.size(); ++i) {
    const std::string& n = names[i];
    if (n == "h") z.h = x[i];
    else if (n == "gamma") z.gamma = x[i];
    else if (n == "ll") z.ll = x[i];
    else if (n == "ul") z.ul = x[i];
    else z.ll = z.ul = x[i];
  }
  return z;
}

void ExperimentConfig::validate() const {
  if (output_dir.empty()) throw Error(ErrorKind::InvalidArgument, "output directory is required");
  if (!database.empty() && fs::weakly_canonical(database) == fs::weakly_canonical(output_dir))
    throw Error(ErrorKind::InvalidArgument, "database path and output directory must differ");
  grid.validate();
  split.validate();
  if (split.test <= 0.0) throw Error(ErrorKind::InvalidArgument, "experiments need a test fold");
  if (!(network_validation >= 0.0 && network_validation < split.train))
    throw Error(ErrorKind::InvalidArgument, "network validation fraction must be below the training ratio");
  for (const auto& p : polynomials) poly::PolynomialSpec::parse(p);
  for (const auto& t : tanh_models) nlsq::TanhModelSpec::parse(t);
  for (std::size_t s1 : mlp_hidden)
    if (s1 == 0) throw Error(ErrorKind::InvalidArgument, "hidden layer size must be positive");
  if (!mlp_hidden.empty() && mlp_targets.empty()) throw Error(ErrorKind::InvalidArgument, "network needs targets");
  if (restarts < 1 || max_epochs < 1) throw Error(ErrorKind::InvalidArgument, "restarts and epochs must be positive");
  if (altitudes.empty() || gammas.empty()) throw Error(ErrorKind::InvalidArgument, "empty altitude or gamma list");
  for (const auto& g : gsa) {
    InputFactors::make(g.factors, g.fixed);
    if (g.n < 100) throw Error(ErrorKind::InvalidArgument, "GSA needs N >= 100");
    if (g.resamples == 0) throw Error(ErrorKind::InvalidArgument, "GSA needs at least one bootstrap resample");
  }
}

ExperimentConfig ExperimentConfig::from_json(const Json& j) {
  ExperimentConfig c;
  static const std::set<std::string> known{"seed",       "output_dir", "database",  "grid",        "linear_density",
                                           "altitudes",  "gammas",     "target",    "split",       "network_validation",
                                           "polynomials", "tanh_models", "mlp_hidden", "mlp_targets", "restarts",
                                           "max_epochs", "probe_count", "gsa",      "workers"};
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw Error(ErrorKind::InvalidArgument, "unknown config key '" + k + "'");
  c.seed = j.value("seed", c.seed);
  c.output_dir = j.value("output_dir", c.output_dir);
  c.database = j.value("database", c.database);
  if (j.contains("grid")) c.grid = artifacts::grid_from_json(j.at("grid"));
  c.linear_density = j.value("linear_density", c.linear_density);
  c.altitudes = j.value("altitudes", c.altitudes);
  c.gammas = j.value("gammas", c.gammas);
  if (j.contains("target")) c.target = parse_target(j.at("target").get<std::string>());
  if (j.contains("split")) {
    const auto r = j.at("split").get<std::vector<double>>();
    if (r.size() != 2 && r.size() != 3) throw Error(ErrorKind::InvalidArgument, "split needs 2 or 3 ratios");
    c.split = r.size() == 2 ? SplitRatios{r[0], 0.0, r[1]} : SplitRatios{r[0], r[1], r[2]};
  }
  c.network_validation = j.value("network_validation", c.network_validation);
  c.polynomials = j.value("polynomials", c.polynomials);
  c.tanh_models = j.value("tanh_models", c.tanh_models);
  c.mlp_hidden = j.value("mlp_hidden", c.mlp_hidden);
  if (j.contains("mlp_targets")) c.mlp_targets = targets_from(j.at("mlp_targets"));
  c.restarts = j.value("restarts", c.restarts);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.probe_count = j.value("probe_count", c.probe_count);
  c.workers = j.value("workers", c.workers);
  if (j.contains("gsa")) {
    for (const auto& g : j.at("gsa")) {
      GsaRequest r;
      r.model = g.at("model").get<std::string>();
      r.output = g.value("output", r.output);
      r.factors = g.value("factors", r.factors);
      if (g.contains("fixed")) {
        const Json& f = g.at("fixed");
        r.fixed = {f.value("h", r.fixed.h), f.value("gamma", r.fixed.gamma), f.value("ll", r.fixed.ll),
                   f.value("ul", r.fixed.ul)};
      }
      r.n = g.value("n", r.n);
      r.second_order = g.value("second_order", r.second_order);
      r.resamples = g.value("resamples", r.resamples);
      r.level = g.value("level", r.level);
      r.convergence = g.value("convergence", r.convergence);
      c.gsa.push_back(r);
    }
  }
  return c;
}

Json ExperimentConfig::to_json() const {
  Json g = Json::array();
  for (const auto& r : gsa)
    g.push_back({{"model", r.model},
                 {"output", r.output},
                 {"factors", r.factors},
                 {"fixed", input_json(r.fixed)},
                 {"n", r.n},
                 {"second_order", r.second_order},
                 {"resamples", r.resamples},
                 {"level", r.level},
                 {"convergence", r.convergence}});
  return {{"seed", seed},
          {"output_dir", output_dir},
          {"database", database},
          {"grid", artifacts::to_json(grid)},
          {"linear_density", linear_density},
          {"altitudes", altitudes},
          {"gammas", gammas},
          {"target", to_string(target)},
          {"split", {split.train, split.validation, split.test}},
          {"network_validation", network_validation},
          {"polynomials", polynomials},
          {"tanh_models", tanh_models},
          {"mlp_hidden", mlp_hidden},
          {"mlp_targets", targets_json(mlp_targets)},
          {"restarts", restarts},
          {"max_epochs", max_epochs},
          {"probe_count", probe_count},
          {"gsa", g},
          {"workers", workers}};
}

namespace {

Json probe_rows_json(const std::vector<ProbeRow>& rows) {
  Json out = Json::array();
  for (const auto& r : rows) {
    Json err = Json::array();
    for (double e : r.error_pct) err.push_back(nullable(e));
    out.push_back({{"origin", r.probe.origin},
                   {"input", input_json(r.probe.input)},
                   {"target", r.probe.target},
                   {"prediction", r.prediction},
                   {"error_pct", err},
                   {"outside_hull", r.outside_hull}});
  }
  return out;
}

std::vector<Probe> probes_from_json(const Json& j) {
  std::vector<Probe> out;
  for (const auto& r : j)
    out.push_back({input_from(r.at("input")), r.at("target").get<std::vector<double>>(),
                   r.at("origin").get<std::string>()});
  return out;
}

ModelRow evaluate_row(const artifacts::Model& model, const std::string& artifact, std::span<const MfeRecord> train,
                      std::span<const MfeRecord> test, std::span<const MfeRecord> probe_tests,
                      std::span<const MfeRecord> probe_synth) {
  ModelRow row;
  row.name = model.name();
  row.kind = model.kind();
  row.artifact = artifact;
  row.targets = model.targets();
  row.coefficients = model.coefficient_count();
  const ScalingSpec common = common_scaling(train, row.targets);
  row.train_mse = normalized_mse(model, train, common);
  row.test_mse = normalized_mse(model, test, common);
  row.r2_adjusted = adjusted_for(model, train, common);
  std::vector<Probe> probes;
  for (const auto& r : probe_tests) probes.push_back(make_probe(r, row.targets, "test"));
  for (const auto& r : probe_synth) probes.push_back(make_probe(r, row.targets, "synthetic"));
  row.probes = probe_eval([&](const InputVector& z) { return model.predict(z); }, probes, train);
  return row;
}

std::string fixed_label(const GsaRequest& g) {
  std::ostringstream os;
  os << g.model << "_" << g.output;
  for (const auto& f : g.factors) os << "_" << f;
  return os.str();
}

gsa::SobolResult run_gsa(const artifacts::Model& model, const GsaRequest& g, std::uint64_t seed, unsigned workers) {
  const InputFactors factors = InputFactors::make(g.factors, g.fixed);
  if (g.output >= model.targets().size()) throw Error(ErrorKind::InvalidArgument, "model has no such output");
  gsa::AnalysisOptions opt;
  opt.seed = seed;
  opt.second_order = g.second_order;
  opt.resamples = g.resamples;
  opt.level = g.level;
  opt.workers = workers;
  return gsa::analyze(
      factors.space, [&](std::span<const double> x) { return model.predict(factors.map(x))[g.output]; }, g.n, opt);
}

std::vector<gsa::SobolResult> run_convergence(const artifacts::Model& model, const GsaRequest& g,
                                              std::uint64_t seed, unsigned workers) {
  const InputFactors factors = InputFactors::make(g.factors, g.fixed);
  gsa::AnalysisOptions opt;
  opt.seed = seed;
  opt.resamples = g.resamples;
  opt.level = g.level;
  opt.workers = workers;
  return gsa::convergence_sweep(
      factors.space, [&](std::span<const double> x) { return model.predict(factors.map(x))[g.output]; },
      g.convergence, opt);
}

}  // namespace

void write_predictions_csv(std::ostream& os, const artifacts::Model& model, std::span<const MfeRecord> train,
                           std::span<const MfeRecord> test) {
  const auto targets = model.targets();
  os << "fold,h_ft,gamma_deg,ll_deg,ul_deg";
  for (Target t : targets) os << "," << to_string(t) << "," << to_string(t) << "_pred";
  os << "\n" << std::setprecision(17);
  const auto rows = [&](const char* fold, std::span<const MfeRecord> recs) {
    for (const auto& r : recs) {
      const auto y = model.predict(r.input);
      os << fold << "," << r.input.h << "," << r.input.gamma << "," << r.input.ll << "," << r.input.ul;
      for (std::size_t c = 0; c < targets.size(); ++c) os << "," << target_value(r, targets[c]) << "," << y[c];
      os << "\n";
    }
  };
  rows("train", train);
  rows("test", test);
}

Report run_experiment(const ExperimentConfig& config) {
  in_stage("config", [&] { config.validate(); });
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path dir(config.output_dir);
  in_stage("output", [&] {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
  });
  artifacts::save_json((dir / "config.json").string(), config.to_json());

  Report report;
  envelope::SurrogateTransport::Params params;
  params.linear_density = config.linear_density;
  const envelope::SurrogateTransport surrogate(params);
  const bool generated = config.database.empty();

  const std::vector<MfeRecord> records = in_stage("database", [&] {
    std::vector<MfeRecord> all;
    if (generated) {
      envelope::BuildOptions opt;
      opt.workers = config.workers;
      const auto jobs = envelope::enumerate_jobs(envelope::enumerate_failure_cases(), config.altitudes, config.gammas);
      const auto db = envelope::build_database(surrogate, jobs, config.grid, opt);
      all = db.records;
      report.dataset.jobs = db.metadata.jobs;
      report.dataset.empty_jobs = db.metadata.empty_jobs;
      report.dataset.source = db.metadata.model_fingerprint;
      artifacts::save_json((dir / "database.json").string(), artifacts::to_json(db.metadata, false));
    } else {
      all = envelope::ingest_csv(config.database);
      report.dataset.jobs = all.size();
      report.dataset.source = "ingested";
    }
    std::ofstream out(dir / "database.csv");
    envelope::write_database_csv(out, all);
    auto kept = non_empty(all);
    report.dataset.empty_jobs += all.size() - kept.size();
    if (kept.empty()) throw Error(ErrorKind::InsufficientData, "database has no non-empty records");
    return kept;
  });
  report.dataset.records = records.size();
  report.dataset.fingerprint = fingerprint(records);

  const auto [folds, net_folds] = in_stage("split", [&] {
    Folds f = split(records, config.split, config.seed);
    Folds n = carve_validation(f, config.network_validation, config.seed);
    artifacts::save_json((dir / "folds.json").string(), to_json(f));
    artifacts::save_json((dir / "folds_network.json").string(), to_json(n));
    return std::pair{f, n};
  });
  const auto train = select(records, folds.train);
  const auto test = select(records, folds.test);
  report.dataset.train = train.size();
  report.dataset.test = test.size();

  // Five-probe protocol: test-fold cases plus mid-range synthetic cases when a model is at hand.
  const auto [probe_tests, probe_synth] = in_stage("probes", [&] {
    std::vector<MfeRecord> synth;
    std::size_t from_test = config.probe_count;
    if (generated && config.probe_count >= 3) {
      synth = synthetic_probe_records(surrogate, config.grid, synthetic_probe_inputs());
      from_test = config.probe_count - synth.size();
    }
    return std::pair{test_probe_records(test, {config.target}, from_test), synth};
  });

  const auto record_model = [&](const artifacts::Model& model, const std::string& stage, double runtime) {
    const std::string artifact = "model_" + model.name() + ".json";
    artifacts::save_json((dir / artifact).string(), model.to_json());
    std::ofstream csv(dir / ("predictions_" + model.name() + ".csv"));
    write_predictions_csv(csv, model, train, test);
    ModelRow row = in_stage(stage, [&] { return evaluate_row(model, artifact, train, test, probe_tests, probe_synth); });
    row.runtime_s = runtime;
    report.models.push_back(std::move(row));
  };

  for (const auto& name : config.polynomials) {
    const auto t = std::chrono::steady_clock::now();
    auto fit = in_stage("fit-poly " + name,
                        [&] { return poly::fit(train, poly::PolynomialSpec::parse(name), config.target); });
    record_model(artifacts::Model(std::move(fit)), "evaluate " + name, seconds_since(t));
  }
  for (const auto& name : config.tanh_models) {
    const auto t = std::chrono::steady_clock::now();
    nlsq::TanhFitOptions opt;
    opt.restarts = config.restarts;
    opt.seed = config.seed;
    opt.workers = config.workers;
    auto fit = in_stage("fit-tanh " + name, [&] {
      return nlsq::fit_tanh_family(train, {}, nlsq::TanhModelSpec::parse(name), config.target, opt);
    });
    std::ofstream trace(dir / ("trace_" + name + ".csv"));
    nlsq::write_trace_csv(trace, fit.trace);
    record_model(artifacts::Model(std::move(fit)), "evaluate " + name, seconds_since(t));
  }
  for (std::size_t s1 : config.mlp_hidden) {
    const auto t = std::chrono::steady_clock::now();
    mlp::TrainConfig cfg;
    cfg.restarts = config.restarts;
    cfg.max_epochs = config.max_epochs;
    cfg.seed = config.seed;
    cfg.workers = config.workers;
    const auto net_train = select(records, net_folds.train);
    const auto net_val = select(records, net_folds.validation);
    auto net = in_stage("fit-mlp " + std::to_string(s1),
                        [&] { return mlp::train(net_train, net_val, test, s1, config.mlp_targets, cfg); });
    const std::string stem = "mlp" + std::to_string(s1);
    std::ofstream history(dir / ("history_" + stem + ".csv"));
    mlp::write_history_csv(history, net.history);
    record_model(artifacts::Model(std::move(net)), "evaluate " + stem, seconds_since(t));
  }
  std::stable_sort(report.models.begin(), report.models.end(),
                   [](const ModelRow& a, const ModelRow& b) { return a.test_mse < b.test_mse; });

  for (const auto& g : config.gsa) {
    const std::string stage = "gsa " + g.model;
    GsaSummary summary = in_stage(stage, [&] {
      const auto it = std::find_if(report.models.begin(), report.models.end(),
                                   [&](const ModelRow& r) { return r.name == g.model; });
      if (it == report.models.end()) throw Error(ErrorKind::InvalidArgument, "no fitted model named " + g.model);
      const auto model = artifacts::Model::from_json(artifacts::load_json((dir / it->artifact).string()));
      GsaSummary s;
      s.request = g;
      s.result = run_gsa(model, g, config.seed, config.workers);
      s.artifact = "gsa_" + fixed_label(g) + ".json";
      artifacts::save_json((dir / s.artifact).string(), artifacts::to_json(s.result));
      if (!g.convergence.empty()) {
        s.convergence = run_convergence(model, g, config.seed, config.workers);
        std::ofstream csv(dir / ("convergence_" + fixed_label(g) + ".csv"));
        gsa::write_convergence_csv(csv, s.convergence);
      }
      return s;
    });
    report.gsa.push_back(std::move(summary));
  }

  report.runtime_s = seconds_since(t0);
  artifacts::save_json((dir / "report.json").string(), to_json(report));
  artifacts::save_text((dir / "report.txt").string(), report_text(report));
  return report;
}

Json to_json(const Report& r) {
  Json models = Json::array();
  for (const auto& m : r.models)
    models.push_back({{"name", m.name},
                      {"kind", m.kind},
                      {"artifact", m.artifact},
                      {"targets", targets_json(m.targets)},
                      {"coefficients", m.coefficients},
                      {"r2_adjusted", nullable(m.r2_adjusted)},
                      {"train_mse", m.train_mse},
                      {"test_mse", m.test_mse},
                      {"probes", probe_rows_json(m.probes)}});
  Json gsa = Json::array();
  for (const auto& g : r.gsa)
    gsa.push_back({{"model", g.request.model},
                   {"output", g.request.output},
                   {"factors", g.request.factors},
                   {"fixed", input_json(g.request.fixed)},
                   {"second_order", g.request.second_order},
                   {"convergence", g.request.convergence},
                   {"artifact", g.artifact},
                   {"result", artifacts::to_json(g.result)}});
  return {{"dataset",
           {{"records", r.dataset.records},
            {"train", r.dataset.train},
            {"test", r.dataset.test},
            {"jobs", r.dataset.jobs},
            {"empty_jobs", r.dataset.empty_jobs},
            {"fingerprint", r.dataset.fingerprint},
            {"source", r.dataset.source}}},
          {"models", models},
          {"gsa", gsa}};
}

std::string report_text(const Report& r) {
  std::ostringstream os;
  os << "dataset  " << r.dataset.records << " records (" << r.dataset.train << " train, " << r.dataset.test
     << " test), " << r.dataset.empty_jobs << " empty of " << r.dataset.jobs << " jobs, source " << r.dataset.source
     << "\n\n";
  os << std::left << std::setw(12) << "model" << std::right << std::setw(8) << "coeffs" << std::setw(12) << "adj R2"
     << std::setw(14) << "train MSE" << std::setw(14) << "test MSE" << std::setw(10) << "time s" << "\n";
  for (const auto& m : r.models) {
    os << std::left << std::setw(12) << m.name << std::right << std::setw(8) << m.coefficients << std::setw(12)
       << std::fixed << std::setprecision(5) << m.r2_adjusted << std::setw(14) << std::scientific
       << std::setprecision(4) << m.train_mse << std::setw(14) << m.test_mse << std::setw(10) << std::fixed
       << std::setprecision(1) << m.runtime_s << "\n";
  }
  for (const auto& m : r.models) {
    if (m.probes.empty()) continue;
    os << "\nprobes, " << m.name << "\n";
    for (const auto& p : m.probes) {
      os << "  " << std::left << std::setw(10) << p.probe.origin << std::right << std::defaultfloat
         << "h " << p.probe.input.h << "  gamma " << p.probe.input.gamma << "  [" << p.probe.input.ll << ", "
         << p.probe.input.ul << "]";
      for (std::size_t c = 0; c < p.prediction.size(); ++c)
        os << "  y " << p.probe.target[c] << "  yhat " << std::setprecision(6) << p.prediction[c] << "  err "
           << std::setprecision(3) << p.error_pct[c] << "%";
      if (p.outside_hull) os << "  (outside training box)";
      os << "\n";
    }
  }
  for (const auto& g : r.gsa) {
    os << "\nSobol indices, " << g.request.model << " output " << g.request.output << ", N " << g.result.n << "\n";
    for (std::size_t j = 0; j < g.result.factors.size(); ++j) {
      os << "  " << std::left << std::setw(6) << g.result.factors[j] << std::right << std::fixed
         << std::setprecision(4) << "  S " << g.result.s_first[j] << "  S_T " << g.result.s_total[j];
      if (j < g.result.ci_first.size())
        os << "  CI [" << g.result.ci_first[j].lo << ", " << g.result.ci_first[j].hi << "]";
      os << "\n";
    }
  }
  os << std::defaultfloat << "\ntotal runtime " << std::setprecision(4) << r.runtime_s << " s\n";
  return os.str();
}

AuditResult audit(const std::string& dir_name, double rel_tol) {
  const fs::path dir(dir_name);
  AuditResult res;
  const auto report = artifacts::load_json((dir / "report.json").string());
  const auto config = ExperimentConfig::from_json(artifacts::load_json((dir / "config.json").string()));
  const auto records = non_empty(envelope::ingest_csv((dir / "database.csv").string()));
  const auto folds = folds_from_json(artifacts::load_json((dir / "folds.json").string()));
  const auto train = select(records, folds.train);
  const auto test = select(records, folds.test);

  const auto check = [&](const std::string& what, double stored, double fresh) {
    ++res.checked;
    const bool both_nan = std::isnan(stored) && std::isnan(fresh);
    if (!both_nan && !(std::fabs(stored - fresh) <= rel_tol * std::max(1.0, std::fabs(fresh)))) {
      std::ostringstream os;
      os << std::setprecision(17) << what << ": stored " << stored << ", recomputed " << fresh;
      res.mismatches.push_back(os.str());
    }
  };
  const auto check_text = [&](const std::string& what, const std::string& stored, const std::string& fresh) {
    ++res.checked;
    if (stored != fresh) res.mismatches.push_back(what + ": stored " + stored + ", recomputed " + fresh);
  };

  const Json& ds = report.at("dataset");
  check_text("dataset fingerprint", ds.at("fingerprint").get<std::string>(), fingerprint(records));
  check_text("folds fingerprint", folds.dataset_fingerprint, fingerprint(records));
  check("record count", ds.at("records").get<double>(), static_cast<double>(records.size()));
  check("train count", ds.at("train").get<double>(), static_cast<double>(train.size()));
  check("test count", ds.at("test").get<double>(), static_cast<double>(test.size()));

  for (const auto& m : report.at("models")) {
    const std::string name = m.at("name").get<std::string>();
    const auto model = artifacts::Model::from_json(artifacts::load_json((dir / m.at("artifact").get<std::string>()).string()));
    check_text(name + " fingerprint", model.kind() == "mlp" ? fingerprint(select(records, folds_from_json(artifacts::load_json((dir / "folds_network.json").string())).train)) : fingerprint(train),
               model.dataset_fingerprint());
    const ScalingSpec common = common_scaling(train, model.targets());
    check(name + " coefficients", m.at("coefficients").get<double>(), static_cast<double>(model.coefficient_count()));
    check(name + " train MSE", m.at("train_mse").get<double>(), normalized_mse(model, train, common));
    check(name + " test MSE", m.at("test_mse").get<double>(), normalized_mse(model, test, common));
    check(name + " adjusted R2", from_nullable(m.at("r2_adjusted")), adjusted_for(model, train, common));
    const auto probes = probes_from_json(m.at("probes"));
    const auto rows = probe_eval([&](const InputVector& z) { return model.predict(z); }, probes, train);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const Json& stored = m.at("probes").at(i);
      for (std::size_t c = 0; c < rows[i].prediction.size(); ++c) {
        const std::string tag = name + " probe " + std::to_string(i) + "." + std::to_string(c);
        check(tag + " prediction", stored.at("prediction").at(c).get<double>(), rows[i].prediction[c]);
        check(tag + " error", from_nullable(stored.at("error_pct").at(c)), rows[i].error_pct[c]);
      }
    }
  }

  for (const auto& g : report.at("gsa")) {
    GsaRequest req;
    req.model = g.at("model").get<std::string>();
    req.output = g.at("output").get<std::size_t>();
    req.factors = g.at("factors").get<std::vector<std::string>>();
    req.fixed = input_from(g.at("fixed"));
    req.second_order = g.at("second_order").get<bool>();
    const auto stored = artifacts::sobol_from_json(g.at("result"));
    req.n = stored.n;
    req.resamples = stored.resamples;
    req.level = stored.ci_level;
    std::string artifact;
    for (const auto& m : report.at("models"))
      if (m.at("name") == req.model) artifact = m.at("artifact").get<std::string>();
    const auto model = artifacts::Model::from_json(artifacts::load_json((dir / artifact).string()));
    const auto fresh = run_gsa(model, req, stored.seed, config.workers);
    for (std::size_t j = 0; j < fresh.factors.size(); ++j) {
      const std::string tag = "gsa " + req.model + " " + fresh.factors[j];
      check(tag + " S", stored.s_first[j], fresh.s_first[j]);
      check(tag + " S_T", stored.s_total[j], fresh.s_total[j]);
      check(tag + " CI lo", stored.ci_first[j].lo, fresh.ci_first[j].lo);
      check(tag + " CI hi", stored.ci_first[j].hi, fresh.ci_first[j].hi);
    }
  }
  return res;
}

}  // namespace mfe::pipeline
