#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "mfe/artifacts.hpp"
#include "mfe/error.hpp"
#include "mfe/pipeline.hpp"
#include "mfe/rng.hpp"

using namespace mfe;
using namespace mfe::pipeline;
namespace fs = std::filesystem;

namespace {

// Smooth synthetic database; n_trim is a cubic-ish surface in the inputs.
std::vector<MfeRecord> synthetic_db(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<MfeRecord> out(n);
  for (auto& r : out) {
    r.input.h = std::round(rng.uniform(0.0, 30000.0));
    r.input.gamma = std::round(rng.uniform(-5.0, 5.0));
    r.input.ll = std::round(rng.uniform(-30.0, 0.0));
    r.input.ul = std::round(rng.uniform(0.0, 30.0));
    const double h = r.input.h / 30000.0, g = r.input.gamma / 5.0;
    const double w = (r.input.ul - r.input.ll) / 60.0;
    r.n_trim = std::round(200.0 - 60.0 * h - 25.0 * g * g - 10.0 * g + 40.0 * w - 15.0 * w * w * w);
    r.centroid_v = 90.0 + 30.0 * h + 5.0 * g;
    r.centroid_psidot = 0.5 * (r.input.ll + r.input.ul) / 30.0;
  }
  return out;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mfe_test_pipeline_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ExperimentConfig small_config(const fs::path& root, const std::string& db) {
  ExperimentConfig c;
  c.database = db;
  c.output_dir = (root / "out").string();
  c.polynomials = {"Poly2222", "Poly3333"};
  c.tanh_models = {"f7"};
  c.mlp_hidden = {3};
  c.restarts = 2;
  c.max_epochs = 30;
  c.probe_count = 3;
  GsaRequest g;
  g.model = "Poly2222";
  g.n = 200;
  g.resamples = 40;
  g.convergence = {128, 256};
  c.gsa = {g};
  c.workers = 1;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("split sizes follow floor of the training ratio") {
  const auto db = synthetic_db(1102, 3);
  const auto f = split(db, {}, 7);
  CHECK(f.train.size() == 991);
  CHECK(f.test.size() == 111);
  CHECK(f.validation.empty());
  CHECK(f.size() == 1102);
  CHECK(f.warnings.empty());

  std::vector<int> seen(db.size(), 0);
  for (const auto* v : {&f.train, &f.test})
    for (std::size_t i : *v) ++seen[i];
  for (int s : seen) CHECK(s == 1);
}

TEST_CASE("split is a function of the seed") {
  const auto db = synthetic_db(300, 4);
  const auto a = split(db, {}, 11), b = split(db, {}, 11), c = split(db, {}, 12);
  CHECK(a.train == b.train);
  CHECK(a.test == b.test);
  CHECK(a.test != c.test);
  CHECK(to_json(a) == to_json(b));
  const auto back = folds_from_json(to_json(a));
  CHECK(back.train == a.train);
  CHECK(back.dataset_fingerprint == fingerprint(db));
}

TEST_CASE("a split with no test ratio warns") {
  const auto db = synthetic_db(50, 5);
  const auto f = split(db, {1.0, 0.0, 0.0}, 1);
  CHECK(f.test.empty());
  CHECK(f.train.size() == 50);
  REQUIRE(f.warnings.size() == 1);
  CHECK_THROWS_AS(split(db, {0.5, 0.1, 0.1}, 1), Error);
  CHECK_THROWS_AS(split({}, {}, 1), Error);
}

TEST_CASE("carved validation fold keeps the test fold") {
  const auto db = synthetic_db(1000, 6);
  const auto base = split(db, {}, 2);
  const auto net = carve_validation(base, 0.1, 2);
  CHECK(net.test == base.test);
  CHECK(net.validation.size() == 100);
  CHECK(net.train.size() == 800);
  std::vector<int> seen(db.size(), 0);
  for (const auto* v : {&net.train, &net.validation, &net.test})
    for (std::size_t i : *v) ++seen[i];
  for (int s : seen) CHECK(s == 1);
}

TEST_CASE("overlapping folds are rejected on load") {
  Folds f;
  f.train = {0, 1, 2};
  f.test = {2};
  CHECK_THROWS_AS(folds_from_json(to_json(f)), Error);
}

TEST_CASE("multi-output MSE") {
  linalg::Matrix pred(1, 2), obs(1, 2);
  pred(0, 0) = 3.0;
  pred(0, 1) = 4.0;
  // (9 + 16) / 2
  CHECK(multi_output_mse(pred, obs) == doctest::Approx(12.5));
  CHECK(multi_output_mse(obs, obs) == 0.0);

  Rng rng(8);
  linalg::Matrix p(40, 1), t(40, 1);
  double plain = 0.0;
  for (std::size_t i = 0; i < 40; ++i) {
    p(i, 0) = rng.normal();
    t(i, 0) = rng.normal();
    plain += (p(i, 0) - t(i, 0)) * (p(i, 0) - t(i, 0));
  }
  CHECK(multi_output_mse(p, t) == doctest::Approx(plain / 40.0));
  CHECK_THROWS_AS(multi_output_mse(p, obs), Error);
}

TEST_CASE("probe on a training record has zero error") {
  const auto db = synthetic_db(400, 9);
  const auto fit = poly::fit(db, poly::PolynomialSpec::parse("Poly3333"), Target::NTrim);
  const artifacts::Model model(fit);
  const std::vector<Probe> probes{make_probe(db[0], {Target::NTrim}, "test"),
                                  make_probe(db[1], {Target::NTrim}, "test")};
  const auto exact = [&](const InputVector& z) {
    for (const auto& r : db)
      if (r.input == z) return std::vector<double>{r.n_trim};
    return std::vector<double>{0.0};
  };
  const auto rows = probe_eval(exact, probes, db);
  REQUIRE(rows.size() == probes.size());
  for (const auto& r : rows) {
    CHECK(r.error_pct[0] == 0.0);
    CHECK_FALSE(r.outside_hull);
  }

  std::vector<Probe> far{make_probe(db[2], {Target::NTrim}, "synthetic")};
  far[0].input.h = 40000.0;
  const auto out = probe_eval([&](const InputVector& z) { return model.predict(z); }, far, db);
  CHECK(out[0].outside_hull);

  Probe zero = make_probe(db[3], {Target::NTrim}, "test");
  zero.target[0] = 0.0;
  const auto z = probe_eval(exact, std::vector<Probe>{zero}, db);
  CHECK(std::isnan(z[0].error_pct[0]));
}

TEST_CASE("test probes skip zero targets and respect the count") {
  auto db = synthetic_db(60, 10);
  db[0].n_trim = 0.0;
  const auto picks = test_probe_records(db, {Target::NTrim}, 5);
  CHECK(picks.size() == 5);
  for (const auto& r : picks) CHECK(r.n_trim != 0.0);
  CHECK(test_probe_records(db, {Target::NTrim}, 0).empty());
}

TEST_CASE("model artifacts survive a JSON round trip") {
  const auto db = synthetic_db(500, 12);
  const auto folds = split(db, {}, 3);
  const auto train = select(db, folds.train);
  const auto val = select(db, folds.test);

  nlsq::TanhFitOptions topt;
  topt.restarts = 2;
  topt.workers = 1;
  mlp::TrainConfig mcfg;
  mcfg.restarts = 1;
  mcfg.max_epochs = 10;
  mcfg.workers = 1;
  const std::vector<artifacts::Model> models{
      artifacts::Model(poly::fit(train, poly::PolynomialSpec::parse("Poly3344"), Target::NTrim)),
      artifacts::Model(nlsq::fit_tanh_family(train, {}, nlsq::TanhModelSpec::parse("f13"), Target::CentroidV, topt)),
      artifacts::Model(mlp::train(train, val, {}, 4, {Target::NTrim, Target::CentroidPsidot}, mcfg))};
  for (const auto& m : models) {
    CAPTURE(m.name());
    const auto text = m.to_json().dump();
    const auto back = artifacts::Model::from_json(artifacts::Json::parse(text));
    CHECK(back.name() == m.name());
    CHECK(back.kind() == m.kind());
    CHECK(back.coefficient_count() == m.coefficient_count());
    CHECK(back.targets() == m.targets());
    CHECK(back.dataset_fingerprint() == m.dataset_fingerprint());
    CHECK(back.to_json().dump() == text);
    for (std::size_t i = 0; i < 20; ++i) {
      const auto a = m.predict(val[i].input), b = back.predict(val[i].input);
      for (std::size_t c = 0; c < a.size(); ++c) CHECK(a[c] == b[c]);
    }
  }
  CHECK(models[0].name() == "Poly3344");
  CHECK(models[1].name() == "f13");
  CHECK(models[2].name() == "mlp4");

  artifacts::Json bad = models[0].to_json();
  bad["kind"] = "spline";
  CHECK_THROWS_AS(artifacts::Model::from_json(bad), Error);
}

TEST_CASE("factor mapping and dependence") {
  const auto f = InputFactors::make({"h", "gamma", "ul"}, {15000.0, 0.0, -30.0, 30.0});
  const std::vector<double> x{1000.0, 2.0, 10.0};
  const auto z = f.map(x);
  CHECK(z.h == 1000.0);
  CHECK(z.gamma == 2.0);
  CHECK(z.ll == -30.0);
  CHECK(z.ul == 10.0);

  const auto jam = InputFactors::make({"jam"}, {});
  const auto zj = jam.map(std::vector<double>{7.0});
  CHECK(zj.ll == 7.0);
  CHECK(zj.ul == 7.0);

  const auto both = InputFactors::make({"h", "ll", "ul"}, {});
  try {
    gsa::plan_samples(both.space, 100, 1, false);
    FAIL("dependent rudder limits were accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::CorrelatedFactors);
  }
  CHECK_THROWS_AS(InputFactors::make({"h", "mach"}, {}), Error);
  CHECK_THROWS_AS(InputFactors::make({"jam", "ul"}, {}), Error);
}

TEST_CASE("config JSON round trip and validation") {
  ExperimentConfig c;
  c.tanh_models = {"f7"};
  GsaRequest g;
  g.model = "Poly3344";
  c.gsa = {g};
  const auto back = ExperimentConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK_NOTHROW(back.validate());

  auto j = c.to_json();
  j["polynomals"] = {"Poly2222"};
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), Error);

  ExperimentConfig bad = c;
  bad.polynomials = {"Poly22"};
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = c;
  bad.split = {1.0, 0.0, 0.0};
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("exit codes by error class") {
  CHECK(exit_code(ErrorKind::InvalidArgument) == 2);
  CHECK(exit_code(ErrorKind::CorrelatedFactors) == 2);
  CHECK(exit_code(ErrorKind::ParseError) == 3);
  CHECK(exit_code(ErrorKind::Io) == 3);
  CHECK(exit_code(ErrorKind::RankDeficient) == 4);
  CHECK(exit_code(ErrorKind::DegenerateVariance) == 4);
  const StageError e("fit-poly", Error(ErrorKind::RankDeficient, "column 3"));
  CHECK(e.stage() == "fit-poly");
  CHECK(e.kind() == ErrorKind::RankDeficient);
  CHECK(std::string(e.what()).find("[fit-poly]") != std::string::npos);
}

TEST_CASE("experiment is reproducible and auditable") {
  const fs::path root = scratch("run");
  const auto db = synthetic_db(400, 13);
  {
    std::ofstream out(root / "db.csv");
    envelope::write_database_csv(out, db);
  }
  auto cfg = small_config(root, (root / "db.csv").string());
  const auto report = run_experiment(cfg);
  CHECK(report.dataset.records == 400);
  CHECK(report.dataset.train == 360);
  CHECK(report.dataset.test == 40);
  REQUIRE(report.models.size() == 4);
  for (std::size_t i = 1; i < report.models.size(); ++i)
    CHECK(report.models[i - 1].test_mse <= report.models[i].test_mse);
  for (const auto& m : report.models) CHECK(m.probes.size() == 3);
  REQUIRE(report.gsa.size() == 1);
  CHECK(report.gsa[0].convergence.size() == 2);

  const auto first = slurp(root / "out" / "report.json");
  const auto text = slurp(root / "out" / "report.txt");
  CHECK(text.find("Poly3333") != std::string::npos);

  const auto verdict = audit(cfg.output_dir);
  CHECK(verdict.checked > 20);
  for (const auto& m : verdict.mismatches) MESSAGE(m);
  CHECK(verdict.ok());

  cfg.output_dir = (root / "again").string();
  run_experiment(cfg);
  CHECK(slurp(root / "again" / "report.json") == first);

  // A tampered number is caught.
  auto j = artifacts::load_json((root / "out" / "report.json").string());
  j["models"][0]["test_mse"] = j["models"][0]["test_mse"].get<double>() * 1.01;
  artifacts::save_json((root / "out" / "report.json").string(), j);
  const auto tampered = audit((root / "out").string());
  CHECK_FALSE(tampered.ok());
  fs::remove_all(root);
}

TEST_CASE("failing stage is named") {
  const fs::path root = scratch("fail");
  {
    std::ofstream out(root / "db.csv");
    out << "h_ft,gamma_deg,ll_deg,ul_deg,n_trim,centroid_v_kt,centroid_psidot_dps\n0,0,-30,30,abc,1,1\n";
  }
  auto cfg = small_config(root, (root / "db.csv").string());
  try {
    run_experiment(cfg);
    FAIL("bad database accepted");
  } catch (const StageError& e) {
    CHECK(e.stage() == "database");
    CHECK(exit_code(e.kind()) == 3);
  }
  fs::remove_all(root);
}
