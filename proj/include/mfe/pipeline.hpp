#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "mfe/artifacts.hpp"
#include "mfe/data.hpp"
#include "mfe/envelope.hpp"
#include "mfe/error.hpp"
#include "mfe/gsa.hpp"

namespace mfe::pipeline {

using artifacts::Json;

/// Process exit status for an error: 2 configuration, 3 data, 4 numerical.
int exit_code(ErrorKind kind);

/// An Error raised inside a named pipeline stage.
class StageError : public Error {
 public:
  StageError(std::string stage, const Error& cause);
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct SplitRatios {
  double train = 0.9;
  double validation = 0.0;
  double test = 0.1;

  void validate() const;
};

/// Record indices per fold, sorted ascending.
struct Folds {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
  std::uint64_t seed = 0;
  std::string dataset_fingerprint;
  std::vector<std::string> warnings;

  std::size_t size() const { return train.size() + validation.size() + test.size(); }
};

/// Seeded shuffle, then floor(n·train) train and floor(n·validation)
/// validation records; the remainder is the test fold (1102 at 90/10 gives 991/111).
Folds split(std::span<const MfeRecord> records, const SplitRatios& ratios, std::uint64_t seed);

/// Network protocol: keeps `base.test`, carves floor(n·validation_fraction)
/// validation records out of `base.train`.
Folds carve_validation(const Folds& base, double validation_fraction, std::uint64_t seed);

std::vector<MfeRecord> select(std::span<const MfeRecord> records, std::span<const std::size_t> indices);

Json to_json(const Folds& f);
Folds folds_from_json(const Json& j);

/// Mean over samples of (1/S²)·Σ squared channel errors; rows are samples.
double multi_output_mse(const linalg::Matrix& predictions, const linalg::Matrix& targets);

/// Test MSE of a model on a common normalized scale: each target's training
/// range mapped onto [-1, 1] (the same map for every model in a report).
double normalized_mse(const artifacts::Model& model, std::span<const MfeRecord> records,
                      const ScalingSpec& common);
ScalingSpec common_scaling(std::span<const MfeRecord> train, const std::vector<Target>& targets);

struct Probe {
  InputVector input;
  std::vector<double> target;  // raw scale, one per model output
  std::string origin;          // "test" or "synthetic"
};

struct ProbeRow {
  Probe probe;
  std::vector<double> prediction;
  std::vector<double> error_pct;  // NaN where the target is zero
  bool outside_hull = false;      // outside the training inputs' bounding box
};

using Predictor = std::function<std::vector<double>(const InputVector&)>;

std::vector<ProbeRow> probe_eval(const Predictor& predict, std::span<const Probe> probes,
                                 std::span<const MfeRecord> train);

Probe make_probe(const MfeRecord& record, const std::vector<Target>& targets, std::string origin);

/// `count` test-fold records nearest the middle of their input box, skipping
/// records with a zero target.
std::vector<MfeRecord> test_probe_records(std::span<const MfeRecord> test, const std::vector<Target>& targets,
                                          std::size_t count);

/// Mid-range inputs between the database altitude levels.
std::vector<InputVector> synthetic_probe_inputs();
/// Records for `inputs` from fresh sweeps; empty envelopes are dropped.
std::vector<MfeRecord> synthetic_probe_records(const envelope::DynamicsModel& model, const envelope::GridSpec& grid,
                                               const std::vector<InputVector>& inputs);

/// Maps GSA factors to database inputs. Factor names: h, gamma, ll, ul, jam
/// (jam sets ll = ul). Unlisted inputs stay at `fixed`.
struct InputFactors {
  gsa::FactorSpace space;
  InputVector fixed;
  std::vector<std::string> names;

  static InputFactors make(const std::vector<std::string>& names, const InputVector& fixed);
  InputVector map(std::span<const double> x) const;
};

struct GsaRequest {
  std::string model;  // model name in the report, e.g. "Poly3344"
  std::size_t output = 0;
  std::vector<std::string> factors{"h", "gamma", "ul"};
  InputVector fixed{15000.0, 0.0, -30.0, 30.0};
  std::size_t n = 10000;
  bool second_order = false;
  std::size_t resamples = 1000;
  double level = 0.95;
  std::vector<std::size_t> convergence;  // optional N schedule
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string output_dir = "mfe-out";
  // Database source: ingest `database` when set, otherwise generate.
  std::string database;
  envelope::GridSpec grid;
  bool linear_density = false;
  std::vector<double> altitudes{0.0, 10000.0, 20000.0, 30000.0};
  std::vector<double> gammas{-5, -4, -3, -2, -1, 0, 1, 2, 3, 4, 5};
  Target target = Target::NTrim;
  SplitRatios split;
  double network_validation = 0.1;
  std::vector<std::string> polynomials{"Poly2222", "Poly3333", "Poly3344"};
  std::vector<std::string> tanh_models;
  std::vector<std::size_t> mlp_hidden;
  std::vector<Target> mlp_targets{Target::NTrim};
  int restarts = 15;
  int max_epochs = 1000;
  std::size_t probe_count = 5;
  std::vector<GsaRequest> gsa;
  unsigned workers = 0;

  void validate() const;
  static ExperimentConfig from_json(const Json& j);
  Json to_json() const;
};

struct ModelRow {
  std::string name;
  std::string kind;
  std::string artifact;  // file name inside the output directory
  std::vector<Target> targets;
  std::size_t coefficients = 0;
  double r2_adjusted = 0.0;
  double train_mse = 0.0;
  double test_mse = 0.0;
  std::vector<ProbeRow> probes;
  double runtime_s = 0.0;  // text report only
};

struct DatasetSummary {
  std::size_t records = 0;
  std::size_t train = 0;
  std::size_t test = 0;
  std::size_t jobs = 0;
  std::size_t empty_jobs = 0;
  std::string fingerprint;
  std::string source;
};

struct GsaSummary {
  GsaRequest request;
  gsa::SobolResult result;
  std::vector<gsa::SobolResult> convergence;
  std::string artifact;
};

struct Report {
  DatasetSummary dataset;
  std::vector<ModelRow> models;  // ascending test MSE
  std::vector<GsaSummary> gsa;
  double runtime_s = 0.0;
};

/// Plot series: inputs, observed and predicted outputs per record, train then test.
void write_predictions_csv(std::ostream& os, const artifacts::Model& model, std::span<const MfeRecord> train,
                           std::span<const MfeRecord> test);

/// Runs generate/ingest, split, fits, evaluation, GSA and writes every
/// artifact plus report.json and report.txt under `config.output_dir`.
Report run_experiment(const ExperimentConfig& config);

/// Report JSON; runtimes are left out so identical runs give identical bytes.
Json to_json(const Report& r);
std::string report_text(const Report& r);

struct AuditResult {
  std::size_t checked = 0;
  std::vector<std::string> mismatches;
  bool ok() const { return mismatches.empty(); }
};

/// Recomputes every report number from the stored database, folds and model
/// artifacts in `dir` and compares within `rel_tol`.
AuditResult audit(const std::string& dir, double rel_tol = 1e-9);

}  // namespace mfe::pipeline
