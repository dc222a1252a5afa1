#include "mfe/artifacts.hpp"

#include <fstream>

#include "mfe/error.hpp"

namespace mfe::artifacts {

namespace {

Json matrix_json(const linalg::Matrix& m) { return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.data()}}; }

linalg::Matrix matrix_from(const Json& j) {
  return linalg::Matrix(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
                        j.at("data").get<std::vector<double>>());
}

nlsq::Termination termination_from(const std::string& s) {
  using nlsq::Termination;
  for (Termination t : {Termination::GradientTolerance, Termination::StepTolerance, Termination::ObjectiveTolerance,
                        Termination::MaxIterations, Termination::Stopped})
    if (s == nlsq::to_string(t)) return t;
  throw Error(ErrorKind::ParseError, "unknown termination reason '" + s + "'");
}

std::vector<Target> targets_from(const Json& j) {
  std::vector<Target> out;
  for (const auto& t : j) out.push_back(parse_target(t.get<std::string>()));
  return out;
}

Json targets_json(const std::vector<Target>& ts) {
  Json out = Json::array();
  for (Target t : ts) out.push_back(to_string(t));
  return out;
}

Json trace_json(const nlsq::SolveTrace& t) {
  Json rows = Json::array();
  for (const auto& r : t.rows)
    rows.push_back({r.iteration, r.objective, r.step, r.optimality, r.xi_or_delta, r.accepted});
  return {{"iterations", t.iterations},
          {"function_evals", t.function_evals},
          {"jacobian_evals", t.jacobian_evals},
          {"reason", nlsq::to_string(t.reason)},
          {"final_optimality", t.final_optimality},
          {"rows", rows}};
}

nlsq::SolveTrace trace_from(const Json& j) {
  nlsq::SolveTrace t;
  t.iterations = j.at("iterations").get<int>();
  t.function_evals = j.at("function_evals").get<int>();
  t.jacobian_evals = j.at("jacobian_evals").get<int>();
  t.reason = termination_from(j.at("reason").get<std::string>());
  t.final_optimality = j.at("final_optimality").get<double>();
  for (const auto& r : j.at("rows"))
    t.rows.push_back({r[0].get<int>(), r[1].get<double>(), r[2].get<double>(), r[3].get<double>(),
                      r[4].get<double>(), r[5].get<bool>()});
  return t;
}

void check_kind(const Json& j, const char* kind) {
  if (!j.contains("kind") || j.at("kind").get<std::string>() != kind)
    throw Error(ErrorKind::ParseError, std::string("expected a '") + kind + "' artifact");
}

}  // namespace

Json to_json(const ScalingSpec& s) {
  return {{"input_offsets", s.input_offsets},
          {"input_weights", s.input_weights},
          {"output_offset", s.output_offset},
          {"output_halfrange", s.output_halfrange}};
}

ScalingSpec scaling_from_json(const Json& j) {
  ScalingSpec s;
  s.input_offsets = j.at("input_offsets").get<std::array<double, 4>>();
  s.input_weights = j.at("input_weights").get<std::array<double, 4>>();
  s.output_offset = j.at("output_offset").get<std::vector<double>>();
  s.output_halfrange = j.at("output_halfrange").get<std::vector<double>>();
  return s;
}

Json to_json(const poly::LinearFit& fit) {
  Json terms = Json::array();
  for (const auto& e : fit.exponent_table) terms.push_back(e);
  return {{"kind", "polynomial"},
          {"spec", fit.spec.name()},
          {"total_degree", fit.spec.total_degree},
          {"per_var_max", fit.spec.per_var_max},
          {"target", to_string(fit.target)},
          {"exponents", terms},
          {"coefficients", fit.coefficients},
          {"scaling", to_json(fit.scaling)},
          {"stats",
           {{"m", fit.stats.m},
            {"coefficient_count", fit.stats.coefficient_count},
            {"dof", fit.stats.dof},
            {"r2", fit.stats.r2},
            {"r2_adjusted", fit.stats.r2_adjusted},
            {"train_mse", fit.stats.train_mse},
            {"sse", fit.stats.sse}}},
          {"r_factor", matrix_json(fit.r_factor)},
          {"dataset_fingerprint", fit.dataset_fingerprint}};
}

poly::LinearFit linear_fit_from_json(const Json& j) {
  check_kind(j, "polynomial");
  poly::LinearFit f;
  f.spec.total_degree = j.at("total_degree").get<int>();
  f.spec.per_var_max = j.at("per_var_max").get<std::array<int, 4>>();
  f.spec.validate();
  f.target = parse_target(j.at("target").get<std::string>());
  for (const auto& e : j.at("exponents")) f.exponent_table.push_back(e.get<poly::Exponents>());
  f.coefficients = j.at("coefficients").get<std::vector<double>>();
  if (f.coefficients.size() != f.exponent_table.size())
    throw Error(ErrorKind::ShapeMismatch, "coefficient and exponent counts differ");
  f.scaling = scaling_from_json(j.at("scaling"));
  const Json& s = j.at("stats");
  f.stats.m = s.at("m").get<std::size_t>();
  f.stats.coefficient_count = s.at("coefficient_count").get<std::size_t>();
  f.stats.dof = s.at("dof").get<std::size_t>();
  f.stats.r2 = s.at("r2").get<double>();
  f.stats.r2_adjusted = s.at("r2_adjusted").get<double>();
  f.stats.train_mse = s.at("train_mse").get<double>();
  f.stats.sse = s.at("sse").get<double>();
  f.r_factor = matrix_from(j.at("r_factor"));
  f.dataset_fingerprint = j.at("dataset_fingerprint").get<std::string>();
  return f;
}

Json to_json(const nlsq::TanhFit& fit) {
  Json restarts = Json::array();
  for (const auto& r : fit.restarts)
    restarts.push_back({{"train_objective", r.train_objective},
                        {"selection_mse", r.selection_mse},
                        {"iterations", r.iterations},
                        {"reason", nlsq::to_string(r.reason)}});
  return {{"kind", "tanh"},
          {"spec", fit.spec.name()},
          {"basis_count", fit.spec.basis_count},
          {"target", to_string(fit.target)},
          {"eta", fit.eta},
          {"scaling", to_json(fit.scaling)},
          {"best_restart", fit.best_restart},
          {"train_mse", fit.train_mse},
          {"selection_mse", fit.selection_mse},
          {"all_stalled", fit.all_stalled},
          {"restarts", restarts},
          {"trace", trace_json(fit.trace)},
          {"dataset_fingerprint", fit.dataset_fingerprint}};
}

nlsq::TanhFit tanh_fit_from_json(const Json& j) {
  check_kind(j, "tanh");
  nlsq::TanhFit f;
  f.spec.basis_count = j.at("basis_count").get<int>();
  f.spec.validate();
  f.target = parse_target(j.at("target").get<std::string>());
  f.eta = j.at("eta").get<std::vector<double>>();
  if (f.eta.size() != f.spec.parameter_count()) throw Error(ErrorKind::ShapeMismatch, "parameter count mismatch");
  f.scaling = scaling_from_json(j.at("scaling"));
  f.best_restart = j.at("best_restart").get<std::size_t>();
  f.train_mse = j.at("train_mse").get<double>();
  f.selection_mse = j.at("selection_mse").get<double>();
  f.all_stalled = j.at("all_stalled").get<bool>();
  for (const auto& r : j.at("restarts"))
    f.restarts.push_back({r.at("train_objective").get<double>(), r.at("selection_mse").get<double>(),
                          r.at("iterations").get<int>(), termination_from(r.at("reason").get<std::string>())});
  f.trace = trace_from(j.at("trace"));
  f.dataset_fingerprint = j.at("dataset_fingerprint").get<std::string>();
  return f;
}

Json to_json(const mlp::TrainedNetwork& net) {
  Json history = Json::array();
  for (const auto& e : net.history) history.push_back({e.epoch, e.train_mse, e.validation_mse, e.test_mse});
  Json restarts = Json::array();
  for (const auto& r : net.restarts)
    restarts.push_back({{"best_epoch", r.best_epoch},
                        {"epochs", r.epochs},
                        {"validation_mse", r.validation_mse},
                        {"test_mse", r.test_mse},
                        {"reason", nlsq::to_string(r.reason)}});
  // NaN (no test set) is not representable in JSON.
  const auto num = [](double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); };
  for (auto& row : history) row[3] = num(row[3].get<double>());
  for (auto& r : restarts) r["test_mse"] = num(r["test_mse"].get<double>());
  return {{"kind", "mlp"},
          {"hidden", net.params.hidden()},
          {"inputs", net.params.inputs()},
          {"outputs", net.params.outputs()},
          {"parameters", net.params.flatten()},
          {"targets", targets_json(net.targets)},
          {"scaling", to_json(net.scaling)},
          {"best_epoch", net.best_epoch},
          {"best_restart", net.best_restart},
          {"seed", net.seed},
          {"train_mse", net.train_mse},
          {"validation_mse", net.validation_mse},
          {"test_mse", num(net.test_mse)},
          {"all_stalled", net.all_stalled},
          {"restarts", restarts},
          {"history", history},
          {"dataset_fingerprint", net.dataset_fingerprint}};
}

mlp::TrainedNetwork network_from_json(const Json& j) {
  check_kind(j, "mlp");
  const auto num = [](const Json& v) {
    return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
  };
  mlp::TrainedNetwork n;
  const auto flat = j.at("parameters").get<std::vector<double>>();
  n.params = mlp::MlpParams::unflatten(j.at("hidden").get<std::size_t>(), j.at("inputs").get<std::size_t>(),
                                       j.at("outputs").get<std::size_t>(), flat);
  n.targets = targets_from(j.at("targets"));
  n.scaling = scaling_from_json(j.at("scaling"));
  n.best_epoch = j.at("best_epoch").get<int>();
  n.best_restart = j.at("best_restart").get<std::size_t>();
  n.seed = j.at("seed").get<std::uint64_t>();
  n.train_mse = j.at("train_mse").get<double>();
  n.validation_mse = j.at("validation_mse").get<double>();
  n.test_mse = num(j.at("test_mse"));
  n.all_stalled = j.at("all_stalled").get<bool>();
  for (const auto& r : j.at("restarts"))
    n.restarts.push_back({r.at("best_epoch").get<int>(), r.at("epochs").get<int>(),
                          r.at("validation_mse").get<double>(), num(r.at("test_mse")),
                          termination_from(r.at("reason").get<std::string>())});
  for (const auto& e : j.at("history"))
    n.history.push_back({e[0].get<int>(), e[1].get<double>(), e[2].get<double>(), num(e[3])});
  n.dataset_fingerprint = j.at("dataset_fingerprint").get<std::string>();
  if (n.targets.size() != n.params.outputs()) throw Error(ErrorKind::ShapeMismatch, "target count mismatch");
  return n;
}

Json to_json(const gsa::SobolResult& r) {
  const auto iv = [](const gsa::Interval& i) { return Json::array({i.lo, i.hi}); };
  Json indices = Json::array();
  for (std::size_t j = 0; j < r.factors.size(); ++j) {
    Json row = {{"factor", r.factors[j]}, {"S", r.s_first[j]}, {"S_T", r.s_total[j]}};
    if (j < r.ci_first.size()) {
      row["S_ci"] = iv(r.ci_first[j]);
      row["S_T_ci"] = iv(r.ci_total[j]);
    }
    indices.push_back(row);
  }
  Json second = Json::array();
  for (std::size_t j = 0; j < r.s_second.rows(); ++j) {
    for (std::size_t k = j + 1; k < r.s_second.cols(); ++k) {
      Json row = {{"factors", {r.factors[j], r.factors[k]}}, {"S", r.s_second(j, k)}};
      if (j < r.ci_second.size()) row["ci"] = iv(r.ci_second[j][k]);
      second.push_back(row);
    }
  }
  return {{"factors", r.factors},
          {"N", r.n},
          {"estimators", {{"first_order", gsa::SobolResult::kFirstOrderEstimator},
                          {"total_order", gsa::SobolResult::kTotalOrderEstimator}}},
          {"mean", r.mean},
          {"variance", r.variance},
          {"indices", indices},
          {"second_order", second},
          {"ci_level", r.ci_level},
          {"resamples", r.resamples},
          {"seed", r.seed}};
}

gsa::SobolResult sobol_from_json(const Json& j) {
  gsa::SobolResult r;
  r.factors = j.at("factors").get<std::vector<std::string>>();
  r.n = j.at("N").get<std::size_t>();
  r.mean = j.at("mean").get<double>();
  r.variance = j.at("variance").get<double>();
  for (const auto& row : j.at("indices")) {
    r.s_first.push_back(row.at("S").get<double>());
    r.s_total.push_back(row.at("S_T").get<double>());
    if (row.contains("S_ci")) {
      r.ci_first.push_back({row.at("S_ci")[0].get<double>(), row.at("S_ci")[1].get<double>()});
      r.ci_total.push_back({row.at("S_T_ci")[0].get<double>(), row.at("S_T_ci")[1].get<double>()});
    }
  }
  const std::size_t h = r.factors.size();
  if (!j.at("second_order").empty()) {
    r.s_second = linalg::Matrix(h, h);
    r.ci_second.assign(h, std::vector<gsa::Interval>(h));
    std::size_t k = 0;
    for (std::size_t a = 0; a < h; ++a) {
      for (std::size_t b = a + 1; b < h; ++b, ++k) {
        const Json& row = j.at("second_order").at(k);
        r.s_second(a, b) = row.at("S").get<double>();
        if (row.contains("ci")) r.ci_second[a][b] = {row.at("ci")[0].get<double>(), row.at("ci")[1].get<double>()};
      }
    }
  }
  r.ci_level = j.at("ci_level").get<double>();
  r.resamples = j.at("resamples").get<std::size_t>();
  r.seed = j.at("seed").get<std::uint64_t>();
  return r;
}

Json to_json(const envelope::GridSpec& g) {
  return {{"v_min", g.v_min},           {"v_max", g.v_max},           {"v_step", g.v_step},
          {"psidot_min", g.psidot_min}, {"psidot_max", g.psidot_max}, {"psidot_step", g.psidot_step}};
}

envelope::GridSpec grid_from_json(const Json& j) {
  envelope::GridSpec g;
  g.v_min = j.value("v_min", g.v_min);
  g.v_max = j.value("v_max", g.v_max);
  g.v_step = j.value("v_step", g.v_step);
  g.psidot_min = j.value("psidot_min", g.psidot_min);
  g.psidot_max = j.value("psidot_max", g.psidot_max);
  g.psidot_step = j.value("psidot_step", g.psidot_step);
  g.validate();
  return g;
}

Json to_json(const envelope::DatabaseMetadata& m, bool include_runtime) {
  Json j = {{"jobs", m.jobs},
            {"empty_jobs", m.empty_jobs},
            {"grid", to_json(m.grid)},
            {"model_fingerprint", m.model_fingerprint}};
  if (include_runtime) j["runtime_s"] = m.runtime_s;
  return j;
}

Model Model::from_json(const Json& j) {
  const std::string kind = j.value("kind", "");
  if (kind == "polynomial") return Model(linear_fit_from_json(j));
  if (kind == "tanh") return Model(tanh_fit_from_json(j));
  if (kind == "mlp") return Model(network_from_json(j));
  throw Error(ErrorKind::ParseError, "unknown model kind '" + kind + "'");
}

Json Model::to_json() const {
  return std::visit([](const auto& m) { return artifacts::to_json(m); }, m_);
}

std::string Model::kind() const {
  switch (m_.index()) {
    case 0: return "polynomial";
    case 1: return "tanh";
    default: return "mlp";
  }
}

std::string Model::name() const {
  if (const auto* p = std::get_if<poly::LinearFit>(&m_)) return p->spec.name();
  if (const auto* t = std::get_if<nlsq::TanhFit>(&m_)) return t->spec.name();
  const auto& n = std::get<mlp::TrainedNetwork>(m_);
  return "mlp" + std::to_string(n.params.hidden());
}

std::vector<Target> Model::targets() const {
  if (const auto* p = std::get_if<poly::LinearFit>(&m_)) return {p->target};
  if (const auto* t = std::get_if<nlsq::TanhFit>(&m_)) return {t->target};
  return std::get<mlp::TrainedNetwork>(m_).targets;
}

std::size_t Model::coefficient_count() const {
  if (const auto* p = std::get_if<poly::LinearFit>(&m_)) return p->coefficients.size();
  if (const auto* t = std::get_if<nlsq::TanhFit>(&m_)) return t->spec.parameter_count();
  const auto& n = std::get<mlp::TrainedNetwork>(m_);
  return mlp::param_count(n.params.hidden(), n.params.inputs(), n.params.outputs());
}

std::string Model::dataset_fingerprint() const {
  return std::visit([](const auto& m) { return m.dataset_fingerprint; }, m_);
}

std::vector<double> Model::predict(const InputVector& input) const {
  if (const auto* p = std::get_if<poly::LinearFit>(&m_)) return {poly::predict(*p, input)};
  if (const auto* t = std::get_if<nlsq::TanhFit>(&m_)) return {nlsq::predict(*t, input)};
  return mlp::predict(std::get<mlp::TrainedNetwork>(m_), input);
}

Json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ParseError, path + ": " + e.what());
  }
}

void save_json(const std::string& path, const Json& j) { save_text(path, j.dump(2) + "\n"); }

void save_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
  out << text;
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path);
}

}  // namespace mfe::artifacts
