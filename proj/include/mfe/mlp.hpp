#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mfe/data.hpp"
#include "mfe/linalg.hpp"
#include "mfe/nlsq.hpp"

namespace mfe::mlp {

using linalg::Matrix;
using linalg::Vector;

/// Two-layer network a² = w2·tanh(w1·z + b1) + b2.
struct MlpParams {
  Matrix w1;  // S¹ × R
  Vector b1;  // S¹
  Matrix w2;  // S² × S¹
  Vector b2;  // S²

  std::size_t hidden() const { return w1.rows(); }
  std::size_t inputs() const { return w1.cols(); }
  std::size_t outputs() const { return w2.rows(); }
  void validate() const;

  /// w1 row-major, b1, w2 row-major, b2. Jacobian columns use the same order.
  Vector flatten() const;
  static MlpParams unflatten(std::size_t s1, std::size_t r, std::size_t s2, std::span<const double> flat);
};

std::size_t param_count(std::size_t s1, std::size_t r, std::size_t s2);

Vector forward(const MlpParams& p, std::span<const double> z);

/// Hidden rows get norm 0.7·S¹^(1/R) in uniformly random directions, biases
/// spread evenly over [-mag, mag] (0 for a single neuron). The output rows
/// share one small uniform draw so the network does not depend on output order.
MlpParams nguyen_widrow_init(std::size_t s1, std::size_t r, std::size_t s2, std::uint64_t seed);

/// ∂e/∂η for e = target − output over a batch (rows of `z`). Row i·S² + ε is
/// output ε of sample i; columns follow MlpParams::flatten.
Matrix marquardt_jacobian(const MlpParams& p, const Matrix& z);

/// Residuals target − output in the same row order as marquardt_jacobian.
Vector residuals(const MlpParams& p, const Matrix& z, const Matrix& targets);

/// One standard backpropagation update on a single sample with learning rate σ.
MlpParams sgd_backprop_step(const MlpParams& p, std::span<const double> z, std::span<const double> target,
                            double sigma);

enum class Selection { Validation, Test };

struct TrainConfig {
  int restarts = 15;
  int max_epochs = 1000;
  double validation_fraction = 0.1;  // used only when no validation set is supplied
  int max_validation_failures = 6;
  nlsq::LmConfig lm;
  double learning_rate = 0.01;
  std::uint64_t seed = 1;
  Selection selection = Selection::Validation;
  unsigned workers = 0;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double train_mse = 0.0;
  double validation_mse = 0.0;
  double test_mse = 0.0;  // NaN when no test set was given
};

struct RestartSummary {
  int best_epoch = 0;
  int epochs = 0;
  double validation_mse = 0.0;
  double test_mse = 0.0;
  nlsq::Termination reason = nlsq::Termination::MaxIterations;
};

struct TrainedNetwork {
  MlpParams params;  // at the best validation epoch
  ScalingSpec scaling;
  std::vector<Target> targets;
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  std::size_t best_restart = 0;
  std::uint64_t seed = 0;
  double train_mse = 0.0;
  double validation_mse = 0.0;
  double test_mse = 0.0;
  bool all_stalled = false;
  std::vector<RestartSummary> restarts;
  std::string dataset_fingerprint;
};

/// Normalized-scale MSE averaged over samples and outputs.
double mse(const MlpParams& p, const Matrix& z, const Matrix& targets);

/// Trains `restarts` networks with LM and validation early stopping and keeps
/// the one with the lowest validation (or test) MSE. Inputs are range-scaled to
/// [-1, 1] and each target normalized from the training set. An empty
/// validation set is carved from `train` with `validation_fraction`.
TrainedNetwork train(std::span<const MfeRecord> train, std::span<const MfeRecord> validation,
                     std::span<const MfeRecord> test, std::size_t s1, const std::vector<Target>& targets,
                     const TrainConfig& cfg);

/// Raw-scale outputs, one per target.
Vector predict(const TrainedNetwork& net, const InputVector& input);

/// CSV with header epoch,train_mse,validation_mse,test_mse.
void write_history_csv(std::ostream& os, const std::vector<EpochRecord>& history);

}  // namespace mfe::mlp
