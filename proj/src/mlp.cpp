#include "mfe/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include "mfe/error.hpp"
#include "mfe/parallel.hpp"
#include "mfe/rng.hpp"

namespace mfe::mlp {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Hidden activations tanh(w1·z + b1).
Vector hidden_layer(const MlpParams& p, std::span<const double> z) {
  Vector a(p.hidden());
  for (std::size_t l = 0; l < a.size(); ++l) {
    double n = p.b1[l];
    auto w = p.w1.row(l);
    for (std::size_t r = 0; r < w.size(); ++r) n += w[r] * z[r];
    a[l] = std::tanh(n);
  }
  return a;
}

Vector output_layer(const MlpParams& p, std::span<const double> a1) {
  Vector a2(p.outputs());
  for (std::size_t e = 0; e < a2.size(); ++e) a2[e] = p.b2[e] + linalg::dot(p.w2.row(e), a1);
  return a2;
}

struct Batch {
  Matrix z;
  Matrix t;
  bool empty() const { return z.rows() == 0; }
};

Batch make_batch(std::span<const MfeRecord> recs, const ScalingSpec& s, const std::vector<Target>& targets) {
  Batch b{Matrix(recs.size(), 4), Matrix(recs.size(), targets.size())};
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const auto z = s.scale(recs[i].input);
    for (std::size_t r = 0; r < 4; ++r) b.z(i, r) = z[r];
    for (std::size_t k = 0; k < targets.size(); ++k) b.t(i, k) = s.normalize(target_value(recs[i], targets[k]), k);
  }
  return b;
}

}  // namespace

void MlpParams::validate() const {
  const std::size_t s1 = hidden();
  if (s1 == 0 || inputs() == 0 || outputs() == 0) throw Error(ErrorKind::ShapeMismatch, "empty network layer");
  if (b1.size() != s1 || w2.cols() != s1 || b2.size() != outputs())
    throw Error(ErrorKind::ShapeMismatch, "inconsistent network dimensions");
}

Vector MlpParams::flatten() const {
  Vector out;
  out.reserve(param_count(hidden(), inputs(), outputs()));
  out.insert(out.end(), w1.data().begin(), w1.data().end());
  out.insert(out.end(), b1.begin(), b1.end());
  out.insert(out.end(), w2.data().begin(), w2.data().end());
  out.insert(out.end(), b2.begin(), b2.end());
  return out;
}

MlpParams MlpParams::unflatten(std::size_t s1, std::size_t r, std::size_t s2, std::span<const double> flat) {
  if (flat.size() != param_count(s1, r, s2)) throw Error(ErrorKind::ShapeMismatch, "flattened parameter length");
  MlpParams p;
  auto it = flat.begin();
  p.w1 = Matrix(s1, r, Vector(it, it + static_cast<std::ptrdiff_t>(s1 * r)));
  it += static_cast<std::ptrdiff_t>(s1 * r);
  p.b1.assign(it, it + static_cast<std::ptrdiff_t>(s1));
  it += static_cast<std::ptrdiff_t>(s1);
  p.w2 = Matrix(s2, s1, Vector(it, it + static_cast<std::ptrdiff_t>(s2 * s1)));
  it += static_cast<std::ptrdiff_t>(s2 * s1);
  p.b2.assign(it, it + static_cast<std::ptrdiff_t>(s2));
  return p;
}

std::size_t param_count(std::size_t s1, std::size_t r, std::size_t s2) { return s1 * (r + 1) + s2 * (s1 + 1); }

Vector forward(const MlpParams& p, std::span<const double> z) {
  if (z.size() != p.inputs()) throw Error(ErrorKind::ShapeMismatch, "network input length");
  return output_layer(p, hidden_layer(p, z));
}

MlpParams nguyen_widrow_init(std::size_t s1, std::size_t r, std::size_t s2, std::uint64_t seed) {
  if (s1 == 0 || r == 0 || s2 == 0) throw Error(ErrorKind::InvalidArgument, "network dimensions must be positive");
  Rng rng(seed);
  const double mag = 0.7 * std::pow(static_cast<double>(s1), 1.0 / static_cast<double>(r));
  MlpParams p;
  p.w1 = Matrix(s1, r);
  p.b1.assign(s1, 0.0);
  for (std::size_t l = 0; l < s1; ++l) {
    Vector w(r);
    double n = 0.0;
    do {
      for (double& v : w) v = rng.uniform(-1.0, 1.0);
      n = linalg::norm2(w);
    } while (n < 1e-8);
    for (std::size_t k = 0; k < r; ++k) p.w1(l, k) = mag * w[k] / n;
    if (s1 > 1) {
      const double spread = -1.0 + 2.0 * static_cast<double>(l) / static_cast<double>(s1 - 1);
      p.b1[l] = mag * spread * (p.w1(l, 0) < 0.0 ? -1.0 : 1.0);
    }
  }
  Vector row(s1);
  for (double& v : row) v = rng.uniform(-0.5, 0.5);
  const double bias = rng.uniform(-0.5, 0.5);
  p.w2 = Matrix(s2, s1);
  for (std::size_t e = 0; e < s2; ++e)
    for (std::size_t l = 0; l < s1; ++l) p.w2(e, l) = row[l];
  p.b2.assign(s2, bias);
  return p;
}

Matrix marquardt_jacobian(const MlpParams& p, const Matrix& z) {
  p.validate();
  if (z.rows() == 0) throw Error(ErrorKind::InsufficientData, "empty batch");
  if (z.cols() != p.inputs()) throw Error(ErrorKind::ShapeMismatch, "batch width");
  const std::size_t s1 = p.hidden();
  const std::size_t r = p.inputs();
  const std::size_t s2 = p.outputs();
  const std::size_t off_b1 = s1 * r;
  const std::size_t off_w2 = off_b1 + s1;
  const std::size_t off_b2 = off_w2 + s2 * s1;
  Matrix j(z.rows() * s2, param_count(s1, r, s2));
  Vector lam1(s1);
  for (std::size_t i = 0; i < z.rows(); ++i) {
    const auto zi = z.row(i);
    const Vector a1 = hidden_layer(p, zi);
    for (std::size_t e = 0; e < s2; ++e) {
      // Output seed λ̃² = −𝕄² = −𝕀 column e, propagated through w2 and 𝕄¹.
      for (std::size_t l = 0; l < s1; ++l) lam1[l] = -(1.0 - a1[l] * a1[l]) * p.w2(e, l);
      auto row = j.row(i * s2 + e);
      for (std::size_t l = 0; l < s1; ++l) {
        for (std::size_t k = 0; k < r; ++k) row[l * r + k] = lam1[l] * zi[k];
        row[off_b1 + l] = lam1[l];
        row[off_w2 + e * s1 + l] = -a1[l];
      }
      row[off_b2 + e] = -1.0;
    }
  }
  return j;
}

Vector residuals(const MlpParams& p, const Matrix& z, const Matrix& targets) {
  const std::size_t s2 = p.outputs();
  if (targets.rows() != z.rows() || targets.cols() != s2) throw Error(ErrorKind::ShapeMismatch, "target shape");
  Vector e(z.rows() * s2);
  for (std::size_t i = 0; i < z.rows(); ++i) {
    const Vector a2 = forward(p, z.row(i));
    for (std::size_t k = 0; k < s2; ++k) e[i * s2 + k] = targets(i, k) - a2[k];
  }
  return e;
}

double mse(const MlpParams& p, const Matrix& z, const Matrix& targets) {
  if (z.rows() == 0) return kNaN;
  const Vector e = residuals(p, z, targets);
  return linalg::dot(e, e) / static_cast<double>(e.size());
}

MlpParams sgd_backprop_step(const MlpParams& p, std::span<const double> z, std::span<const double> target,
                            double sigma) {
  if (!(sigma > 0.0)) throw Error(ErrorKind::InvalidArgument, "learning rate must be positive");
  if (target.size() != p.outputs()) throw Error(ErrorKind::ShapeMismatch, "target length");
  const Vector a1 = hidden_layer(p, z);
  const Vector a2 = output_layer(p, a1);
  const std::size_t s1 = p.hidden();
  const std::size_t s2 = p.outputs();
  Vector lam2(s2);
  for (std::size_t e = 0; e < s2; ++e) lam2[e] = -2.0 * (target[e] - a2[e]);
  Vector lam1(s1, 0.0);
  for (std::size_t l = 0; l < s1; ++l) {
    double s = 0.0;
    for (std::size_t e = 0; e < s2; ++e) s += p.w2(e, l) * lam2[e];
    lam1[l] = (1.0 - a1[l] * a1[l]) * s;
  }
  MlpParams q = p;
  for (std::size_t e = 0; e < s2; ++e) {
    for (std::size_t l = 0; l < s1; ++l) q.w2(e, l) -= sigma * lam2[e] * a1[l];
    q.b2[e] -= sigma * lam2[e];
  }
  for (std::size_t l = 0; l < s1; ++l) {
    for (std::size_t k = 0; k < p.inputs(); ++k) q.w1(l, k) -= sigma * lam1[l] * z[k];
    q.b1[l] -= sigma * lam1[l];
  }
  return q;
}

void TrainConfig::validate() const {
  if (restarts < 1) throw Error(ErrorKind::InvalidArgument, "restarts must be at least 1");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
    throw Error(ErrorKind::InvalidArgument, "validation fraction must be in (0, 1)");
  if (max_epochs < 0) throw Error(ErrorKind::InvalidArgument, "max_epochs must be non-negative");
  if (max_validation_failures < 1) throw Error(ErrorKind::InvalidArgument, "max_validation_failures must be positive");
  if (!(learning_rate > 0.0)) throw Error(ErrorKind::InvalidArgument, "learning rate must be positive");
  lm.validate();
}

TrainedNetwork train(std::span<const MfeRecord> train_in, std::span<const MfeRecord> validation_in,
                     std::span<const MfeRecord> test, std::size_t s1, const std::vector<Target>& targets,
                     const TrainConfig& cfg) {
  cfg.validate();
  if (s1 == 0) throw Error(ErrorKind::InvalidArgument, "hidden layer must have at least one neuron");
  if (targets.empty()) throw Error(ErrorKind::InvalidArgument, "no output targets");
  std::vector<MfeRecord> train_set(train_in.begin(), train_in.end());
  std::vector<MfeRecord> validation_set(validation_in.begin(), validation_in.end());
  if (validation_set.empty()) {
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(cfg.seed, 0x76616C));
    rng.shuffle(order.begin(), order.end());
    const auto n_val = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(cfg.validation_fraction * static_cast<double>(train_set.size()))));
    std::vector<MfeRecord> kept;
    for (std::size_t k = 0; k < order.size(); ++k)
      (k < n_val ? validation_set : kept).push_back(train_set[order[k]]);
    train_set = std::move(kept);
  }
  const std::size_t s2 = targets.size();
  if (train_set.empty()) throw Error(ErrorKind::InsufficientData, "no training records");

  TrainedNetwork out;
  out.targets = targets;
  out.seed = cfg.seed;
  out.dataset_fingerprint = fingerprint(train_set);
  ScalingSpec::range_inputs(train_set, out.scaling.input_offsets, out.scaling.input_weights);
  for (Target t : targets) {
    std::vector<double> v;
    for (const auto& r : train_set) v.push_back(target_value(r, t));
    out.scaling.add_output_channel(v);
  }
  const Batch tr = make_batch(train_set, out.scaling, targets);
  const Batch va = make_batch(validation_set, out.scaling, targets);
  const Batch te = make_batch(test, out.scaling, targets);
  const std::size_t r_in = 4;
  const double count = static_cast<double>(tr.z.rows() * s2);

  nlsq::ResidualModel model;
  model.parameter_count = param_count(s1, r_in, s2);
  model.residual = [&](std::span<const double> eta) {
    return residuals(MlpParams::unflatten(s1, r_in, s2, eta), tr.z, tr.t);
  };
  model.jacobian = [&](std::span<const double> eta) {
    return marquardt_jacobian(MlpParams::unflatten(s1, r_in, s2, eta), tr.z);
  };

  struct RunResult {
    MlpParams best;
    std::vector<EpochRecord> history;
    RestartSummary summary;
    double train_mse = 0.0;
  };
  const auto n_restarts = static_cast<std::size_t>(cfg.restarts);
  std::vector<RunResult> runs(n_restarts);
  nlsq::LmConfig lm = cfg.lm;
  lm.max_iter = cfg.max_epochs;

  parallel_for(
      n_restarts,
      [&](std::size_t k) {
        RunResult& run = runs[k];
        const MlpParams init = nguyen_widrow_init(s1, r_in, s2, derive_seed(cfg.seed, k));
        double best_val = mse(init, va.z, va.t);
        run.best = init;
        run.train_mse = mse(init, tr.z, tr.t);
        run.history.push_back({0, run.train_mse, best_val, te.empty() ? kNaN : mse(init, te.z, te.t)});
        int failures = 0;
        auto observer = [&](int epoch, std::span<const double> eta, double objective) {
          const MlpParams p = MlpParams::unflatten(s1, r_in, s2, eta);
          const double v = mse(p, va.z, va.t);
          run.history.push_back({epoch, objective / count, v, te.empty() ? kNaN : mse(p, te.z, te.t)});
          if (v < best_val) {
            best_val = v;
            run.best = p;
            run.summary.best_epoch = epoch;
            run.train_mse = objective / count;
            failures = 0;
          } else {
            ++failures;
          }
          return failures < cfg.max_validation_failures;
        };
        const auto res = nlsq::lm_solve(model, init.flatten(), lm, observer);
        run.summary.epochs = static_cast<int>(run.history.size()) - 1;
        run.summary.validation_mse = best_val;
        run.summary.test_mse = run.history[static_cast<std::size_t>(run.summary.best_epoch)].test_mse;
        run.summary.reason = res.trace.reason;
      },
      cfg.workers);

  const bool by_test = cfg.selection == Selection::Test && !te.empty();
  std::size_t best = 0;
  bool all_stalled = true;
  for (std::size_t k = 0; k < n_restarts; ++k) {
    const auto& s = runs[k].summary;
    out.restarts.push_back(s);
    if (s.reason != nlsq::Termination::MaxIterations) all_stalled = false;
    const double score = by_test ? s.test_mse : s.validation_mse;
    const double best_score = by_test ? runs[best].summary.test_mse : runs[best].summary.validation_mse;
    if (score < best_score) best = k;
  }
  RunResult& chosen = runs[best];
  out.params = std::move(chosen.best);
  out.history = std::move(chosen.history);
  out.best_epoch = chosen.summary.best_epoch;
  out.best_restart = best;
  out.train_mse = chosen.train_mse;
  out.validation_mse = chosen.summary.validation_mse;
  out.test_mse = chosen.summary.test_mse;
  out.all_stalled = all_stalled;
  return out;
}

Vector predict(const TrainedNetwork& net, const InputVector& input) {
  const auto z = net.scaling.scale(input);
  Vector y = forward(net.params, z);
  for (std::size_t k = 0; k < y.size(); ++k) y[k] = net.scaling.denormalize(y[k], k);
  return y;
}

void write_history_csv(std::ostream& os, const std::vector<EpochRecord>& history) {
  os << "epoch,train_mse,validation_mse,test_mse\n";
  const auto old = os.precision(17);
  for (const auto& h : history)
    os << h.epoch << ',' << h.train_mse << ',' << h.validation_mse << ',' << h.test_mse << '\n';
  os.precision(old);
}

}  // namespace mfe::mlp
