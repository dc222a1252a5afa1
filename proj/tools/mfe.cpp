// mfe: maneuvering-envelope database, surrogate fitting and sensitivity CLI.

#include <CLI11.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "mfe/artifacts.hpp"
#include "mfe/envelope.hpp"
#include "mfe/error.hpp"
#include "mfe/gsa.hpp"
#include "mfe/mlp.hpp"
#include "mfe/nlsq.hpp"
#include "mfe/pipeline.hpp"
#include "mfe/poly.hpp"

using namespace mfe;
namespace fs = std::filesystem;
using artifacts::Json;

namespace {

std::vector<MfeRecord> load_database(const std::string& path) { return non_empty(envelope::ingest_csv(path)); }

pipeline::Folds load_folds(const std::string& path, const std::vector<MfeRecord>& records) {
  auto f = pipeline::folds_from_json(artifacts::load_json(path));
  if (f.size() != records.size())
    throw Error(ErrorKind::InvariantViolation, path + " covers " + std::to_string(f.size()) + " records, database has " +
                                                   std::to_string(records.size()));
  if (f.dataset_fingerprint != fingerprint(records))
    throw Error(ErrorKind::InvariantViolation, path + " was made for a different database");
  return f;
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw Error(ErrorKind::InvalidArgument, "bad number '" + item + "'");
    out.push_back(v);
  }
  return out;
}

std::vector<std::string> split_names(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  return out;
}

// "h=15000,gamma=0,ll=-30,ul=30"; unnamed inputs keep their defaults.
InputVector parse_fixed(const std::string& text, InputVector z) {
  for (const auto& kv : split_names(text)) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error(ErrorKind::InvalidArgument, "expected name=value, got '" + kv + "'");
    const std::string k = kv.substr(0, eq);
    const double v = parse_list(kv.substr(eq + 1)).at(0);
    if (k == "h") z.h = v;
    else if (k == "gamma") z.gamma = v;
    else if (k == "ll") z.ll = v;
    else if (k == "ul") z.ul = v;
    else if (k == "jam") z.ll = z.ul = v;
    else throw Error(ErrorKind::InvalidArgument, "unknown input '" + k + "'");
  }
  return z;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
  return out;
}

void add_grid_options(CLI::App* cmd, envelope::GridSpec& g) {
  cmd->add_option("--v-min", g.v_min, "lowest airspeed, kt")->capture_default_str();
  cmd->add_option("--v-max", g.v_max, "highest airspeed, kt")->capture_default_str();
  cmd->add_option("--v-step", g.v_step, "airspeed step, kt")->capture_default_str();
  cmd->add_option("--psidot-min", g.psidot_min, "lowest turn rate, deg/s")->capture_default_str();
  cmd->add_option("--psidot-max", g.psidot_max, "highest turn rate, deg/s")->capture_default_str();
  cmd->add_option("--psidot-step", g.psidot_step, "turn-rate step, deg/s")->capture_default_str();
}

void print_probe_rows(const std::vector<pipeline::ProbeRow>& rows) {
  for (const auto& r : rows) {
    std::cout << "  " << std::left << std::setw(10) << r.probe.origin << std::right << "h " << r.probe.input.h
              << "  gamma " << r.probe.input.gamma << "  [" << r.probe.input.ll << ", " << r.probe.input.ul << "]";
    for (std::size_t c = 0; c < r.prediction.size(); ++c)
      std::cout << "  y " << r.probe.target[c] << "  yhat " << r.prediction[c] << "  err " << r.error_pct[c] << "%";
    if (r.outside_hull) std::cout << "  (outside training box)";
    std::cout << "\n";
  }
}

// The subcommand currently running, for diagnostics.
std::string g_stage = "mfe";

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Maneuvering flight envelope database, surrogate models and Sobol analysis"};
  app.require_subcommand(1);
  unsigned workers = 0;
  std::uint64_t seed = 1;
  app.add_option("--workers", workers, "worker threads (0: hardware concurrency)");
  app.add_option("--seed", seed, "random seed")->capture_default_str();

  // generate
  auto* gen = app.add_subcommand("generate", "sweep the surrogate transport over failure cases into a database CSV");
  std::string gen_out, gen_meta, gen_alt = "0,10000,20000,30000", gen_gamma = "-5,-4,-3,-2,-1,0,1,2,3,4,5";
  std::string gen_env_dir;
  bool gen_linear = false;
  envelope::GridSpec gen_grid;
  gen->add_option("-o,--out", gen_out, "database CSV")->required();
  gen->add_option("--meta", gen_meta, "metadata JSON");
  gen->add_option("--altitudes", gen_alt, "comma-separated altitudes, ft")->capture_default_str();
  gen->add_option("--gammas", gen_gamma, "comma-separated flight-path angles, deg")->capture_default_str();
  gen->add_option("--envelopes", gen_env_dir, "directory for per-job envelope CSVs");
  gen->add_flag("--linear-density", gen_linear, "density linear in altitude (weak h-dependence variant)");
  add_grid_options(gen, gen_grid);

  // ingest
  auto* ing = app.add_subcommand("ingest", "validate an external database CSV and rewrite it canonically");
  std::string ing_in, ing_out;
  ing->add_option("-i,--in", ing_in, "input CSV")->required();
  ing->add_option("-o,--out", ing_out, "canonical CSV");

  // split
  auto* spl = app.add_subcommand("split", "seeded train/test folds plus the network validation carve-out");
  std::string spl_db, spl_out, spl_net;
  std::vector<double> spl_ratios{0.9, 0.1};
  double spl_netval = 0.1;
  spl->add_option("--db", spl_db, "database CSV")->required();
  spl->add_option("-o,--out", spl_out, "folds JSON")->required();
  spl->add_option("--ratios", spl_ratios, "train test, or train validation test")->expected(2, 3)->capture_default_str();
  spl->add_option("--network-out", spl_net, "folds JSON with a validation fold carved from train");
  spl->add_option("--network-validation", spl_netval, "carved fraction of all records")->capture_default_str();

  // fit-poly
  auto* fp = app.add_subcommand("fit-poly", "least-squares polynomial fit on the training fold");
  std::string fp_db, fp_folds, fp_spec = "Poly3344", fp_target = "n_trim", fp_out;
  fp->add_option("--db", fp_db, "database CSV")->required();
  fp->add_option("--folds", fp_folds, "folds JSON")->required();
  fp->add_option("--spec", fp_spec, "PolyABCD degrees")->capture_default_str();
  fp->add_option("--target", fp_target, "n_trim, centroid_v or centroid_psidot")->capture_default_str();
  fp->add_option("-o,--out", fp_out, "model JSON")->required();

  // fit-tanh
  auto* ft = app.add_subcommand("fit-tanh", "multi-restart nonlinear least-squares tanh fit");
  std::string ft_db, ft_folds, ft_spec = "f7", ft_target = "n_trim", ft_out, ft_trace;
  int ft_restarts = 15;
  ft->add_option("--db", ft_db, "database CSV")->required();
  ft->add_option("--folds", ft_folds, "folds JSON")->required();
  ft->add_option("--spec", ft_spec, "f7, f13, ...")->capture_default_str();
  ft->add_option("--target", ft_target, "output to fit")->capture_default_str();
  ft->add_option("--restarts", ft_restarts, "random restarts")->capture_default_str();
  ft->add_option("-o,--out", ft_out, "model JSON")->required();
  ft->add_option("--trace", ft_trace, "iteration trace CSV of the winning restart");

  // fit-mlp
  auto* fm = app.add_subcommand("fit-mlp", "one-hidden-layer network trained by Levenberg-Marquardt");
  std::string fm_db, fm_folds, fm_targets = "n_trim", fm_out, fm_history;
  std::size_t fm_hidden = 10;
  int fm_restarts = 15, fm_epochs = 1000;
  fm->add_option("--db", fm_db, "database CSV")->required();
  fm->add_option("--folds", fm_folds, "folds JSON with a validation fold")->required();
  fm->add_option("--hidden", fm_hidden, "hidden neurons")->capture_default_str();
  fm->add_option("--targets", fm_targets, "comma-separated outputs")->capture_default_str();
  fm->add_option("--restarts", fm_restarts, "random restarts")->capture_default_str();
  fm->add_option("--epochs", fm_epochs, "epoch cap")->capture_default_str();
  fm->add_option("-o,--out", fm_out, "model JSON")->required();
  fm->add_option("--history", fm_history, "epoch history CSV of the winning restart");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "MSE, adjusted R2 and probe errors of a stored model");
  std::string ev_db, ev_folds, ev_model, ev_out, ev_pred;
  std::size_t ev_probes = 5;
  ev->add_option("--db", ev_db, "database CSV")->required();
  ev->add_option("--folds", ev_folds, "folds JSON (the polynomial folds)")->required();
  ev->add_option("--model", ev_model, "model JSON")->required();
  ev->add_option("--probes", ev_probes, "test-fold probe count")->capture_default_str();
  ev->add_option("-o,--out", ev_out, "evaluation JSON");
  ev->add_option("--predictions", ev_pred, "predicted-vs-observed CSV");

  // gsa
  auto* gs = app.add_subcommand("gsa", "Sobol indices of a stored model with bootstrap intervals");
  std::string gs_model, gs_factors = "h,gamma,ul", gs_fixed, gs_out;
  std::size_t gs_n = 10000, gs_output = 0, gs_resamples = 1000;
  double gs_level = 0.95;
  bool gs_second = false;
  gs->add_option("--model", gs_model, "model JSON")->required();
  gs->add_option("--factors", gs_factors, "h, gamma, ll, ul, jam")->capture_default_str();
  gs->add_option("--fixed", gs_fixed, "values for the other inputs, e.g. h=15000,ll=-30");
  gs->add_option("-n,--samples", gs_n, "base sample size N")->capture_default_str();
  gs->add_option("--output", gs_output, "model output index")->capture_default_str();
  gs->add_option("--resamples", gs_resamples, "bootstrap resamples")->capture_default_str();
  gs->add_option("--level", gs_level, "interval level")->capture_default_str();
  gs->add_flag("--second-order", gs_second, "estimate pairwise indices too");
  gs->add_option("-o,--out", gs_out, "result JSON");

  // convergence
  auto* cv = app.add_subcommand("convergence", "indices and interval widths over a sample-size schedule");
  std::string cv_model, cv_factors = "h,gamma,ul", cv_fixed, cv_schedule = "1000,2000,4000,8000,16000", cv_out;
  std::size_t cv_output = 0, cv_resamples = 1000;
  cv->add_option("--model", cv_model, "model JSON")->required();
  cv->add_option("--factors", cv_factors, "h, gamma, ll, ul, jam")->capture_default_str();
  cv->add_option("--fixed", cv_fixed, "values for the other inputs");
  cv->add_option("--schedule", cv_schedule, "increasing N values")->capture_default_str();
  cv->add_option("--output", cv_output, "model output index")->capture_default_str();
  cv->add_option("--resamples", cv_resamples, "bootstrap resamples")->capture_default_str();
  cv->add_option("-o,--out", cv_out, "convergence CSV")->required();

  // report
  auto* rep = app.add_subcommand("report", "run a whole experiment from a config file");
  std::string rep_config, rep_dir, rep_db;
  rep->add_option("-c,--config", rep_config, "experiment JSON; flags below override it");
  rep->add_option("-o,--out-dir", rep_dir, "output directory");
  rep->add_option("--db", rep_db, "ingest this database instead of generating");
  rep->add_flag("--print-config", "print the effective config and exit");

  // audit
  auto* aud = app.add_subcommand("audit", "recompute every report number from stored artifacts");
  std::string aud_dir;
  double aud_tol = 1e-9;
  aud->add_option("dir", aud_dir, "experiment output directory")->required();
  aud->add_option("--tol", aud_tol, "relative tolerance")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) {
      g_stage = "generate";
      envelope::SurrogateTransport::Params p;
      p.linear_density = gen_linear;
      const envelope::SurrogateTransport model(p);
      const auto jobs = envelope::enumerate_jobs(envelope::enumerate_failure_cases(), parse_list(gen_alt),
                                                 parse_list(gen_gamma));
      envelope::BuildOptions opt;
      opt.workers = workers;
      opt.keep_envelopes = !gen_env_dir.empty();
      const auto db = envelope::build_database(model, jobs, gen_grid, opt);
      auto out = open_out(gen_out);
      envelope::write_database_csv(out, db.records);
      if (!gen_meta.empty()) artifacts::save_json(gen_meta, artifacts::to_json(db.metadata, true));
      if (opt.keep_envelopes) {
        fs::create_directories(gen_env_dir);
        for (std::size_t i = 0; i < db.envelopes.size(); ++i) {
          auto env = open_out((fs::path(gen_env_dir) / ("envelope_" + std::to_string(i) + ".csv")).string());
          envelope::write_envelope_csv(env, db.envelopes[i]);
        }
      }
      std::cerr << db.records.size() << " envelopes, " << db.metadata.empty_jobs << " empty of "
                << db.metadata.jobs << " jobs, " << db.metadata.runtime_s << " s\n";
    } else if (*ing) {
      g_stage = "ingest";
      const auto all = envelope::ingest_csv(ing_in);
      const auto kept = non_empty(all);
      if (!ing_out.empty()) {
        auto out = open_out(ing_out);
        envelope::write_database_csv(out, all);
      }
      std::cout << all.size() << " records, " << all.size() - kept.size() << " empty, fingerprint "
                << fingerprint(kept) << "\n";
    } else if (*spl) {
      g_stage = "split";
      const auto records = load_database(spl_db);
      pipeline::SplitRatios r = spl_ratios.size() == 2 ? pipeline::SplitRatios{spl_ratios[0], 0.0, spl_ratios[1]}
                                                       : pipeline::SplitRatios{spl_ratios[0], spl_ratios[1], spl_ratios[2]};
      const auto f = pipeline::split(records, r, seed);
      for (const auto& w : f.warnings) std::cerr << "warning: " << w << "\n";
      artifacts::save_json(spl_out, pipeline::to_json(f));
      std::cout << "train " << f.train.size() << ", validation " << f.validation.size() << ", test " << f.test.size()
                << "\n";
      if (!spl_net.empty()) {
        const auto n = pipeline::carve_validation(f, spl_netval, seed);
        artifacts::save_json(spl_net, pipeline::to_json(n));
        std::cout << "network: train " << n.train.size() << ", validation " << n.validation.size() << ", test "
                  << n.test.size() << "\n";
      }
    } else if (*fp) {
      g_stage = "fit-poly";
      const auto records = load_database(fp_db);
      const auto f = load_folds(fp_folds, records);
      auto fit = poly::fit(pipeline::select(records, f.train), poly::PolynomialSpec::parse(fp_spec),
                           parse_target(fp_target));
      const artifacts::Model model(std::move(fit));
      artifacts::save_json(fp_out, model.to_json());
      std::cout << model.name() << ": " << model.coefficient_count() << " coefficients\n";
    } else if (*ft) {
      g_stage = "fit-tanh";
      const auto records = load_database(ft_db);
      const auto f = load_folds(ft_folds, records);
      nlsq::TanhFitOptions opt;
      opt.restarts = ft_restarts;
      opt.seed = seed;
      opt.workers = workers;
      auto fit = nlsq::fit_tanh_family(pipeline::select(records, f.train), pipeline::select(records, f.validation),
                                       nlsq::TanhModelSpec::parse(ft_spec), parse_target(ft_target), opt);
      if (!ft_trace.empty()) {
        auto out = open_out(ft_trace);
        nlsq::write_trace_csv(out, fit.trace);
      }
      const artifacts::Model model(std::move(fit));
      artifacts::save_json(ft_out, model.to_json());
      std::cout << model.name() << ": " << model.coefficient_count() << " parameters\n";
    } else if (*fm) {
      g_stage = "fit-mlp";
      const auto records = load_database(fm_db);
      const auto f = load_folds(fm_folds, records);
      std::vector<Target> targets;
      for (const auto& t : split_names(fm_targets)) targets.push_back(parse_target(t));
      mlp::TrainConfig cfg;
      cfg.restarts = fm_restarts;
      cfg.max_epochs = fm_epochs;
      cfg.seed = seed;
      cfg.workers = workers;
      auto net = mlp::train(pipeline::select(records, f.train), pipeline::select(records, f.validation),
                            pipeline::select(records, f.test), fm_hidden, targets, cfg);
      if (!fm_history.empty()) {
        auto out = open_out(fm_history);
        mlp::write_history_csv(out, net.history);
      }
      const artifacts::Model model(std::move(net));
      artifacts::save_json(fm_out, model.to_json());
      std::cout << model.name() << ": " << model.coefficient_count() << " parameters\n";
    } else if (*ev) {
      g_stage = "evaluate";
      const auto records = load_database(ev_db);
      const auto f = load_folds(ev_folds, records);
      const auto model = artifacts::Model::from_json(artifacts::load_json(ev_model));
      const auto train = pipeline::select(records, f.train), test = pipeline::select(records, f.test);
      const auto common = pipeline::common_scaling(train, model.targets());
      const double train_mse = pipeline::normalized_mse(model, train, common);
      const double test_mse = test.empty() ? std::nan("") : pipeline::normalized_mse(model, test, common);
      std::vector<pipeline::Probe> probes;
      for (const auto& r : pipeline::test_probe_records(test, model.targets(), ev_probes))
        probes.push_back(pipeline::make_probe(r, model.targets(), "test"));
      const auto rows =
          pipeline::probe_eval([&](const InputVector& z) { return model.predict(z); }, probes, train);
      std::cout << model.name() << "  coefficients " << model.coefficient_count() << "  train MSE " << train_mse
                << "  test MSE " << test_mse << "\n";
      print_probe_rows(rows);
      if (!ev_pred.empty()) {
        auto out = open_out(ev_pred);
        pipeline::write_predictions_csv(out, model, train, test);
      }
      if (!ev_out.empty()) {
        Json probes_json = Json::array();
        for (const auto& r : rows) {
          Json err = Json::array();
          for (double e : r.error_pct) err.push_back(std::isfinite(e) ? Json(e) : Json(nullptr));
          probes_json.push_back({{"h", r.probe.input.h},
                                 {"gamma", r.probe.input.gamma},
                                 {"ll", r.probe.input.ll},
                                 {"ul", r.probe.input.ul},
                                 {"target", r.probe.target},
                                 {"prediction", r.prediction},
                                 {"error_pct", err},
                                 {"outside_hull", r.outside_hull}});
        }
        artifacts::save_json(ev_out, {{"model", model.name()},
                                      {"train_mse", train_mse},
                                      {"test_mse", std::isfinite(test_mse) ? Json(test_mse) : Json(nullptr)},
                                      {"probes", probes_json}});
      }
    } else if (*gs || *cv) {
      g_stage = *gs ? "gsa" : "convergence";
      const auto model = artifacts::Model::from_json(artifacts::load_json(*gs ? gs_model : cv_model));
      const std::size_t output = *gs ? gs_output : cv_output;
      if (output >= model.targets().size()) throw Error(ErrorKind::InvalidArgument, "model has no such output");
      const auto factors = pipeline::InputFactors::make(split_names(*gs ? gs_factors : cv_factors),
                                                        parse_fixed(*gs ? gs_fixed : cv_fixed, {15000.0, 0.0, -30.0, 30.0}));
      const gsa::ScalarModel f = [&](std::span<const double> x) { return model.predict(factors.map(x))[output]; };
      gsa::AnalysisOptions opt;
      opt.seed = seed;
      opt.workers = workers;
      if (*gs) {
        opt.second_order = gs_second;
        opt.resamples = gs_resamples;
        opt.level = gs_level;
        const auto r = gsa::analyze(factors.space, f, gs_n, opt);
        for (std::size_t j = 0; j < r.factors.size(); ++j)
          std::cout << std::left << std::setw(6) << r.factors[j] << std::right << std::fixed << std::setprecision(4)
                    << "  S " << r.s_first[j] << " [" << r.ci_first[j].lo << ", " << r.ci_first[j].hi << "]"
                    << "  S_T " << r.s_total[j] << " [" << r.ci_total[j].lo << ", " << r.ci_total[j].hi << "]\n";
        if (!gs_out.empty()) artifacts::save_json(gs_out, artifacts::to_json(r));
      } else {
        opt.resamples = cv_resamples;
        std::vector<std::size_t> schedule;
        for (double v : parse_list(cv_schedule)) schedule.push_back(static_cast<std::size_t>(v));
        const auto rs = gsa::convergence_sweep(factors.space, f, schedule, opt);
        auto out = open_out(cv_out);
        gsa::write_convergence_csv(out, rs);
        for (std::size_t j = 0; j < factors.names.size(); ++j)
          if (const auto slope = gsa::ci_width_slope(rs, j))
            std::cout << factors.names[j] << ": first-order interval width slope " << *slope << " in log N\n";
      }
    } else if (*rep) {
      g_stage = "report";
      pipeline::ExperimentConfig cfg;
      if (!rep_config.empty()) cfg = pipeline::ExperimentConfig::from_json(artifacts::load_json(rep_config));
      if (!rep_dir.empty()) cfg.output_dir = rep_dir;
      if (!rep_db.empty()) cfg.database = rep_db;
      if (app.get_option("--seed")->count()) cfg.seed = seed;
      if (app.get_option("--workers")->count()) cfg.workers = workers;
      if (rep->get_option("--print-config")->count()) {
        std::cout << cfg.to_json().dump(2) << "\n";
        return 0;
      }
      const auto report = pipeline::run_experiment(cfg);
      std::cout << pipeline::report_text(report);
    } else if (*aud) {
      g_stage = "audit";
      const auto r = pipeline::audit(aud_dir, aud_tol);
      for (const auto& m : r.mismatches) std::cout << "mismatch  " << m << "\n";
      std::cout << r.checked << " numbers checked, " << r.mismatches.size() << " mismatches\n";
      return r.ok() ? 0 : 4;
    }
  } catch (const pipeline::StageError& e) {
    std::cerr << "mfe " << g_stage << ": stage " << e.stage() << ": " << e.what() << "\n";
    return pipeline::exit_code(e.kind());
  } catch (const Error& e) {
    std::cerr << "mfe " << g_stage << ": " << e.what() << "\n";
    return pipeline::exit_code(e.kind());
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "mfe " << g_stage << ": malformed JSON: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "mfe " << g_stage << ": " << e.what() << "\n";
    return 4;
  }
  return 0;
}
