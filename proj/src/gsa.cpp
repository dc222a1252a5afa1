#include "mfe/gsa.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <ostream>

#include "mfe/error.hpp"
#include "mfe/parallel.hpp"
#include "mfe/rng.hpp"
#include "mfe/stats.hpp"

namespace mfe::gsa {

void FactorSpace::validate() const {
  if (factors.empty()) throw Error(ErrorKind::InvalidArgument, "factor space is empty");
  for (const auto& f : factors) {
    if (!(f.lower < f.upper) || !std::isfinite(f.lower) || !std::isfinite(f.upper))
      throw Error(ErrorKind::InvalidArgument, "factor '" + f.name + "' needs finite lower < upper");
  }
  for (const auto& [i, j] : dependent) {
    if (i >= factors.size() || j >= factors.size())
      throw Error(ErrorKind::InvalidArgument, "dependent pair refers to a missing factor");
  }
}

std::vector<std::string> FactorSpace::names() const {
  std::vector<std::string> out;
  for (const auto& f : factors) out.push_back(f.name);
  return out;
}

Matrix lhs_sample(const FactorSpace& space, std::size_t n, std::uint64_t seed) {
  space.validate();
  if (n < 2) throw Error(ErrorKind::InvalidArgument, "latin hypercube needs N >= 2");
  const std::size_t h = space.size();
  Matrix out(n, h);
  Rng rng(seed);
  std::vector<std::size_t> strata(n);
  for (std::size_t j = 0; j < h; ++j) {
    std::iota(strata.begin(), strata.end(), std::size_t{0});
    rng.shuffle(strata.begin(), strata.end());
    const double lo = space.factors[j].lower;
    const double width = space.factors[j].upper - lo;
    for (std::size_t i = 0; i < n; ++i) {
      const double u = (static_cast<double>(strata[i]) + rng.uniform()) / static_cast<double>(n);
      out(i, j) = lo + width * u;
    }
  }
  return out;
}

std::size_t SamplePlan::evaluation_count(std::size_t factors, std::size_t n, bool second_order) {
  return (2 + (second_order ? 2 : 1) * factors) * n;
}

std::size_t SamplePlan::evaluation_count() const { return evaluation_count(a.cols(), n, second_order()); }

SamplePlan plan_samples(const FactorSpace& space, std::size_t n, std::uint64_t seed, bool second_order) {
  space.validate();
  if (!space.dependent.empty()) {
    const auto& [i, j] = space.dependent.front();
    throw Error(ErrorKind::CorrelatedFactors,
                "factors '" + space.factors[i].name + "' and '" + space.factors[j].name +
                    "' are not independent; fix one of them or tie them together (jam: ll = ul)");
  }
  SamplePlan plan;
  plan.n = n;
  plan.a = lhs_sample(space, n, derive_seed(seed, 0));
  plan.b = lhs_sample(space, n, derive_seed(seed, 1));
  const std::size_t h = space.size();
  for (std::size_t j = 0; j < h; ++j) {
    Matrix ab = plan.a;
    for (std::size_t i = 0; i < n; ++i) ab(i, j) = plan.b(i, j);
    plan.ab.push_back(std::move(ab));
    if (second_order) {
      Matrix ba = plan.b;
      for (std::size_t i = 0; i < n; ++i) ba(i, j) = plan.a(i, j);
      plan.ba.push_back(std::move(ba));
    }
  }
  return plan;
}

PlanOutputs evaluate(const SamplePlan& plan, const ScalarModel& model, unsigned workers) {
  std::vector<const Matrix*> blocks{&plan.a, &plan.b};
  for (const auto& m : plan.ab) blocks.push_back(&m);
  for (const auto& m : plan.ba) blocks.push_back(&m);
  const std::size_t n = plan.n;
  const std::size_t h = plan.a.cols();
  std::vector<Vector> out(blocks.size(), Vector(n));

  constexpr std::size_t kChunk = 1024;
  const std::size_t chunks_per_block = (n + kChunk - 1) / kChunk;
  parallel_for(
      blocks.size() * chunks_per_block,
      [&](std::size_t task) {
        const std::size_t blk = task / chunks_per_block;
        const std::size_t begin = (task % chunks_per_block) * kChunk;
        const std::size_t end = std::min(n, begin + kChunk);
        const Matrix& m = *blocks[blk];
        for (std::size_t i = begin; i < end; ++i) {
          const double y = model(m.row(i));
          if (!std::isfinite(y)) throw Error(ErrorKind::NonFiniteEvaluation, "model returned a non-finite value");
          out[blk][i] = y;
        }
      },
      workers);

  PlanOutputs y;
  y.ya = std::move(out[0]);
  y.yb = std::move(out[1]);
  for (std::size_t j = 0; j < h; ++j) y.yab.push_back(std::move(out[2 + j]));
  if (plan.second_order())
    for (std::size_t j = 0; j < h; ++j) y.yba.push_back(std::move(out[2 + h + j]));
  return y;
}

namespace {

struct Estimates {
  double mean = 0.0;
  double variance = 0.0;
  Vector first;
  Vector total;
  Matrix second;
};

// Estimators over the plan rows listed in `rows` (repeats allowed).
Estimates compute(const PlanOutputs& y, const std::vector<std::size_t>& rows) {
  const std::size_t h = y.factors();
  const double n = static_cast<double>(rows.size());
  Estimates e;
  double s = 0.0;
  for (std::size_t i : rows) s += y.ya[i] + y.yb[i];
  e.mean = s / (2.0 * n);
  double ss = 0.0;
  for (std::size_t i : rows) {
    const double da = y.ya[i] - e.mean, db = y.yb[i] - e.mean;
    ss += da * da + db * db;
  }
  e.variance = ss / (2.0 * n);
  e.first.assign(h, 0.0);
  e.total.assign(h, 0.0);
  if (!(e.variance > 0.0)) return e;
  for (std::size_t j = 0; j < h; ++j) {
    double vj = 0.0, tj = 0.0;
    for (std::size_t i : rows) {
      const double d = y.yab[j][i] - y.ya[i];
      vj += y.yb[i] * d;
      tj += d * d;
    }
    e.first[j] = vj / n / e.variance;
    e.total[j] = tj / (2.0 * n) / e.variance;
  }
  if (!y.yba.empty()) {
    e.second = Matrix(h, h);
    for (std::size_t j = 0; j < h; ++j) {
      for (std::size_t k = j + 1; k < h; ++k) {
        // BA(j) and AB(k) share exactly columns j and k, so their mean squared
        // difference gives the closed (j, k) effect; subtract both first-order parts.
        double d2 = 0.0;
        for (std::size_t i : rows) {
          const double d = y.yba[j][i] - y.yab[k][i];
          d2 += d * d;
        }
        e.second(j, k) = 1.0 - d2 / (2.0 * n) / e.variance - e.first[j] - e.first[k];
      }
    }
  }
  return e;
}

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return rows;
}

Interval percentile(std::vector<double> v, double level) {
  const double tail = 0.5 * (1.0 - level);
  return {stats::quantile(v, tail), stats::quantile(std::move(v), 1.0 - tail)};
}

}  // namespace

SobolResult estimate(const PlanOutputs& y, std::vector<std::string> factor_names) {
  const std::size_t h = y.factors();
  if (h == 0) throw Error(ErrorKind::InvalidArgument, "plan has no factors");
  if (y.n() < 100) throw Error(ErrorKind::InsufficientData, "Sobol estimates need N >= 100");
  if (factor_names.empty())
    for (std::size_t j = 0; j < h; ++j) factor_names.push_back("x" + std::to_string(j + 1));
  if (factor_names.size() != h) throw Error(ErrorKind::ShapeMismatch, "factor name count differs from plan");

  const Estimates e = compute(y, all_rows(y.n()));
  if (!(e.variance >= 1e-14 * e.mean * e.mean) || e.variance == 0.0)
    throw Error(ErrorKind::DegenerateVariance, "output variance is negligible; the model looks constant");
  SobolResult r;
  r.factors = std::move(factor_names);
  r.n = y.n();
  r.mean = e.mean;
  r.variance = e.variance;
  r.s_first = e.first;
  r.s_total = e.total;
  r.s_second = e.second;
  return r;
}

void bootstrap_ci(SobolResult& result, const PlanOutputs& y, std::size_t resamples, double level,
                  std::uint64_t seed) {
  if (resamples == 0) throw Error(ErrorKind::InvalidArgument, "bootstrap needs at least one resample");
  if (!(level > 0.0 && level < 1.0)) throw Error(ErrorKind::InvalidArgument, "confidence level must be in (0, 1)");
  const std::size_t h = y.factors();
  const std::size_t n = y.n();
  const bool second = !y.yba.empty();
  std::vector<std::vector<double>> first(h), total(h);
  std::vector<std::vector<std::vector<double>>> pair(h, std::vector<std::vector<double>>(h));

  // Each resample draws from its own stream, so results do not depend on thread count.
  std::vector<Estimates> draws(resamples);
  parallel_for(resamples, [&](std::size_t b) {
    Rng rng(derive_seed(seed, b));
    std::vector<std::size_t> rows(n);
    for (auto& r : rows) r = static_cast<std::size_t>(rng.below(n));
    draws[b] = compute(y, rows);
  });
  for (const auto& d : draws) {
    for (std::size_t j = 0; j < h; ++j) {
      first[j].push_back(d.first[j]);
      total[j].push_back(d.total[j]);
      if (second)
        for (std::size_t k = j + 1; k < h; ++k) pair[j][k].push_back(d.second(j, k));
    }
  }
  result.ci_first.clear();
  result.ci_total.clear();
  result.ci_second.assign(second ? h : 0, std::vector<Interval>(h));
  for (std::size_t j = 0; j < h; ++j) {
    result.ci_first.push_back(percentile(first[j], level));
    result.ci_total.push_back(percentile(total[j], level));
    if (second)
      for (std::size_t k = j + 1; k < h; ++k) result.ci_second[j][k] = percentile(pair[j][k], level);
  }
  result.ci_level = level;
  result.resamples = resamples;
  result.seed = seed;
}

SobolResult analyze(const FactorSpace& space, const ScalarModel& model, std::size_t n,
                    const AnalysisOptions& options) {
  const SamplePlan plan = plan_samples(space, n, options.seed, options.second_order);
  const PlanOutputs y = evaluate(plan, model, options.workers);
  SobolResult r = estimate(y, space.names());
  bootstrap_ci(r, y, options.resamples, options.level, derive_seed(options.seed, 2));
  r.seed = options.seed;
  return r;
}

std::vector<SobolResult> convergence_sweep(const FactorSpace& space, const ScalarModel& model,
                                           const std::vector<std::size_t>& schedule,
                                           const AnalysisOptions& options) {
  if (schedule.empty()) throw Error(ErrorKind::InvalidArgument, "empty N schedule");
  for (std::size_t k = 1; k < schedule.size(); ++k)
    if (schedule[k] <= schedule[k - 1]) throw Error(ErrorKind::InvalidArgument, "N schedule must increase");
  std::vector<SobolResult> out;
  for (std::size_t n : schedule) out.push_back(analyze(space, model, n, options));
  return out;
}

std::optional<double> ci_width_slope(const std::vector<SobolResult>& sweep, std::size_t factor) {
  if (sweep.size() < 2) return std::nullopt;
  std::vector<double> x, y;
  for (const auto& r : sweep) {
    if (factor >= r.ci_first.size()) throw Error(ErrorKind::InvalidArgument, "no interval for factor");
    x.push_back(std::log(static_cast<double>(r.n)));
    y.push_back(std::log(r.ci_first[factor].width()));
  }
  const double mx = stats::mean(x), my = stats::mean(y);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxy / sxx;
}

void write_convergence_csv(std::ostream& os, const std::vector<SobolResult>& sweep) {
  const auto num = [](double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
  };
  os << "N,factor,S,S_T,ci_lo,ci_hi,st_ci_lo,st_ci_hi\n";
  for (const auto& r : sweep) {
    for (std::size_t j = 0; j < r.factors.size(); ++j) {
      const Interval ci = j < r.ci_first.size() ? r.ci_first[j] : Interval{r.s_first[j], r.s_first[j]};
      const Interval ct = j < r.ci_total.size() ? r.ci_total[j] : Interval{r.s_total[j], r.s_total[j]};
      os << r.n << ',' << r.factors[j] << ',' << num(r.s_first[j]) << ',' << num(r.s_total[j]) << ','
         << num(ci.lo) << ',' << num(ci.hi) << ',' << num(ct.lo) << ',' << num(ct.hi) << '\n';
    }
  }
}

}  // namespace mfe::gsa
