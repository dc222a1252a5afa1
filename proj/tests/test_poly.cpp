#include <boost/math/distributions/students_t.hpp>
#include <cmath>

#include "doctest.h"
#include "mfe/error.hpp"
#include "mfe/poly.hpp"
#include "mfe/rng.hpp"
#include "mfe/stats.hpp"
#include "oracles.hpp"

using namespace mfe;
using namespace mfe::poly;

namespace {

InputVector random_input(Rng& rng) {
  InputVector z;
  z.h = rng.uniform(0.0, 30000.0);
  z.gamma = rng.uniform(-5.0, 5.0);
  z.ll = rng.uniform(-30.0, 30.0);
  z.ul = rng.uniform(z.ll, 30.0);
  return z;
}

// Records whose target is an exact polynomial in the autoscaled inputs.
std::vector<MfeRecord> synthetic(std::size_t m, const PolynomialSpec& spec, std::uint64_t seed,
                                 std::vector<double>* true_coeffs = nullptr) {
  Rng rng(seed);
  std::vector<MfeRecord> recs(m);
  for (auto& r : recs) r.input = random_input(rng);
  const auto terms = enumerate_terms(spec);
  std::vector<double> c(terms.size());
  for (double& v : c) v = rng.uniform(-2.0, 2.0);
  ScalingSpec s;
  s.input_weights = ScalingSpec::autoscale_weights(recs);
  for (auto& r : recs) {
    const auto z = s.scale(r.input);
    double y = 0.0;
    for (std::size_t k = 0; k < terms.size(); ++k) {
      double t = c[k];
      for (int v = 0; v < 4; ++v) t *= std::pow(z[v], terms[k][v]);
      y += t;
    }
    r.n_trim = y;
  }
  if (true_coeffs) *true_coeffs = c;
  return recs;
}

}  // namespace

TEST_CASE("term counts of the standard model sizes") {
  CHECK(enumerate_terms(PolynomialSpec::parse("Poly2222")).size() == 15);
  CHECK(enumerate_terms(PolynomialSpec::parse("Poly3333")).size() == 35);
  CHECK(enumerate_terms(PolynomialSpec::parse("Poly3344")).size() == 68);
  CHECK(enumerate_terms(PolynomialSpec::parse("Poly4444")).size() == 70);
  CHECK(enumerate_terms(PolynomialSpec::parse("Poly3666")).size() == 195);
}

TEST_CASE("term enumeration agrees with brute force over the exponent box") {
  for (int d = 1; d <= 6; ++d) {
    for (int a = 0; a <= d; ++a)
      for (int b = 0; b <= d; ++b)
        for (int c = 0; c <= d; c += 2)
          for (int e = 0; e <= d; e += 3) {
            const int caps[4] = {a, b, c, e};
            PolynomialSpec spec{d, {a, b, c, e}};
            const auto terms = enumerate_terms(spec);
            CHECK(terms.size() == oracle::brute_force_term_count(d, caps));
            CHECK(terms.front() == Exponents{0, 0, 0, 0});
          }
  }
}

TEST_CASE("term order is graded lexicographic") {
  const auto t = enumerate_terms(PolynomialSpec::parse("Poly1111"));
  REQUIRE(t.size() == 5);
  CHECK(t[1] == Exponents{1, 0, 0, 0});
  CHECK(t[2] == Exponents{0, 1, 0, 0});
  CHECK(t[3] == Exponents{0, 0, 1, 0});
  CHECK(t[4] == Exponents{0, 0, 0, 1});
  const auto t2 = enumerate_terms(PolynomialSpec::parse("Poly2222"));
  CHECK(t2[5] == Exponents{2, 0, 0, 0});
  CHECK(t2[6] == Exponents{1, 1, 0, 0});
  CHECK(t2.back() == Exponents{0, 0, 0, 2});
}

TEST_CASE("spec parsing and validation") {
  const auto s = PolynomialSpec::parse("Poly3344");
  CHECK(s.total_degree == 4);
  CHECK(s.per_var_max == std::array<int, 4>{3, 3, 4, 4});
  CHECK(s.name() == "Poly3344");
  CHECK_THROWS_AS(PolynomialSpec::parse("Quad3344"), Error);
  CHECK_THROWS_AS((PolynomialSpec{2, {3, 0, 0, 0}}.validate()), Error);
}

TEST_CASE("design matrix rows") {
  ScalingSpec unit;
  const std::vector<InputVector> ones{{1, 1, 1, 1}};
  const auto d = design_matrix(ones, enumerate_terms(PolynomialSpec::parse("Poly1111")), unit);
  REQUIRE(d.cols() == 5);
  for (std::size_t k = 0; k < 5; ++k) CHECK(d(0, k) == 1.0);

  const std::vector<InputVector> two{{2, 0, 0, 0}};
  const auto terms = enumerate_terms(PolynomialSpec::parse("Poly2222"));
  const auto d2 = design_matrix(two, terms, unit);
  for (std::size_t k = 0; k < terms.size(); ++k) {
    if (terms[k] == Exponents{2, 0, 0, 0}) CHECK(d2(0, k) == 4.0);
  }
  CHECK(d2(0, 0) == 1.0);
}

TEST_CASE("design matrix shape and dof at a 991-record training set") {
  const auto recs = synthetic(991, PolynomialSpec::parse("Poly2222"), 5);
  const auto spec = PolynomialSpec::parse("Poly3344");
  std::vector<InputVector> in;
  for (const auto& r : recs) in.push_back(r.input);
  ScalingSpec s;
  s.input_weights = ScalingSpec::autoscale_weights(recs);
  const auto d = design_matrix(in, enumerate_terms(spec), s);
  CHECK(d.rows() == 991);
  CHECK(d.cols() == 68);
  CHECK(fit(recs, spec, Target::NTrim).stats.dof == 923);
  CHECK(fit(recs, PolynomialSpec::parse("Poly2222"), Target::NTrim).stats.dof == 976);
  CHECK(fit(recs, PolynomialSpec::parse("Poly3333"), Target::NTrim).stats.dof == 956);
}

TEST_CASE("generate-then-recover polynomial coefficients") {
  const auto spec = PolynomialSpec::parse("Poly2222");
  std::vector<double> truth;
  const auto recs = synthetic(200, spec, 42, &truth);
  const LinearFit f = fit(recs, spec, Target::NTrim);
  const auto c = f.denormalized_coefficients();
  REQUIRE(c.size() == truth.size());
  for (std::size_t k = 0; k < c.size(); ++k) CHECK(std::fabs(c[k] - truth[k]) < 1e-8);
  for (const auto& r : recs) CHECK(std::fabs(predict(f, r.input) - r.n_trim) < 1e-6);
  const auto m = metrics(f, recs);
  CHECK(m.mse < 1e-20);
  CHECK(m.r2 == doctest::Approx(1.0));
  for (double e : m.residuals) CHECK(std::fabs(e) < 1e-8);
}

TEST_CASE("constant target fits a constant") {
  auto recs = synthetic(60, PolynomialSpec::parse("Poly1111"), 3);
  for (auto& r : recs) r.n_trim = 1234.0;
  const LinearFit f = fit(recs, PolynomialSpec::parse("Poly2222"), Target::NTrim);
  const auto c = f.denormalized_coefficients();
  CHECK(c[0] == doctest::Approx(1234.0));
  for (std::size_t k = 1; k < c.size(); ++k) CHECK(std::fabs(c[k]) < 1e-9);
  CHECK(predict(f, InputVector{5000, 1, -10, 10}) == doctest::Approx(1234.0));
}

TEST_CASE("fit error paths") {
  const auto recs = synthetic(10, PolynomialSpec::parse("Poly1111"), 9);
  try {
    fit(recs, PolynomialSpec::parse("Poly2222"), Target::NTrim);
    FAIL("expected InsufficientData");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InsufficientData);
  }
  // Four altitude levels cannot support an h⁴ column.
  Rng rng(1);
  std::vector<MfeRecord> levels(300);
  for (auto& r : levels) {
    r.input = random_input(rng);
    r.input.h = 10000.0 * static_cast<double>(rng.below(4));
    r.n_trim = r.input.h * 0.01 + r.input.ul;
  }
  try {
    fit(levels, PolynomialSpec::parse("Poly4444"), Target::NTrim);
    FAIL("expected RankDeficient");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::RankDeficient);
  }
  CHECK_NOTHROW(fit(levels, PolynomialSpec::parse("Poly3344"), Target::NTrim));
}

TEST_CASE("predict rounding and the constant-only model") {
  auto recs = synthetic(40, PolynomialSpec::parse("Poly1111"), 77);
  LinearFit f = fit(recs, PolynomialSpec::parse("Poly1111"), Target::NTrim);
  std::fill(f.coefficients.begin(), f.coefficients.end(), 0.0);
  f.coefficients[0] = 0.25;
  const double c = f.scaling.denormalize(0.25);
  Rng rng(8);
  for (int i = 0; i < 10; ++i) CHECK(predict(f, random_input(rng)) == doctest::Approx(c));
  f.coefficients[0] = f.scaling.normalize(4851.6);
  CHECK(predict_rounded(f, {}) == 4852);
  f.coefficients[0] = f.scaling.normalize(-3.0);
  CHECK(predict_rounded(f, {}) == 0);
}

TEST_CASE("adjusted R2 and error percentage arithmetic") {
  CHECK(adjusted_r2(0.99, 101, 1) == doctest::Approx(1.0 - 0.01 * 100.0 / 99.0).epsilon(1e-14));
  CHECK(adjusted_r2(0.99, 101, 1) == doctest::Approx(0.98990).epsilon(1e-5));
  CHECK(error_percentage(100, 90) == doctest::Approx(10.0));
  CHECK(error_percentage(4898, 4852) == doctest::Approx(0.939158840343).epsilon(1e-10));
  CHECK(error_percentage(3.5, 3.5) == 0.0);
  try {
    error_percentage(0.0, 1.0);
    FAIL("expected DivisionByZero");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DivisionByZero);
  }
}

TEST_CASE("adjusted R2 never exceeds R2") {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    auto recs = synthetic(150, PolynomialSpec::parse("Poly2222"), 100 + trial);
    for (auto& r : recs) r.n_trim += rng.normal() * 0.5;
    const auto f = fit(recs, PolynomialSpec::parse("Poly2222"), Target::NTrim);
    CHECK(f.stats.r2_adjusted <= f.stats.r2);
  }
  auto recs = synthetic(150, PolynomialSpec::parse("Poly1111"), 5);
  for (auto& r : recs) r.n_trim = rng.normal();
  const auto f0 = fit(recs, PolynomialSpec{1, {0, 0, 0, 0}}, Target::NTrim);
  CHECK(f0.stats.coefficient_count == 1);
  CHECK(f0.stats.r2_adjusted == doctest::Approx(f0.stats.r2));
}

TEST_CASE("refitting on predictions is idempotent") {
  auto recs = synthetic(300, PolynomialSpec::parse("Poly3333"), 12);
  Rng rng(4);
  for (auto& r : recs) r.n_trim += rng.normal();
  const auto spec = PolynomialSpec::parse("Poly2222");
  const auto f1 = fit(recs, spec, Target::NTrim);
  auto refit_recs = recs;
  for (auto& r : refit_recs) r.n_trim = predict(f1, r.input);
  const auto f2 = fit(refit_recs, spec, Target::NTrim);
  const auto c1 = f1.denormalized_coefficients();
  const auto c2 = f2.denormalized_coefficients();
  for (std::size_t k = 0; k < c1.size(); ++k) CHECK(std::fabs(c1[k] - c2[k]) < 1e-10 * (1.0 + std::fabs(c1[k])));
}

TEST_CASE("autoscaling absorbs input unit changes") {
  auto recs = synthetic(250, PolynomialSpec::parse("Poly3333"), 21);
  const auto spec = PolynomialSpec::parse("Poly3333");
  const auto f1 = fit(recs, spec, Target::NTrim);
  auto scaled = recs;
  for (auto& r : scaled) r.input.h *= 0.3048;  // feet to metres
  const auto f2 = fit(scaled, spec, Target::NTrim);
  Rng rng(2);
  for (int i = 0; i < 25; ++i) {
    InputVector z = random_input(rng);
    InputVector zs = z;
    zs.h *= 0.3048;
    CHECK(predict(f2, zs) == doctest::Approx(predict(f1, z)).epsilon(1e-9));
  }
}

TEST_CASE("student-t quantile agrees with boost") {
  for (double dof : {1.0, 3.0, 10.0, 30.0, 120.0, 923.0}) {
    boost::math::students_t dist(dof);
    for (double p : {0.6, 0.9, 0.95, 0.975, 0.995, 0.025}) {
      const double expected = boost::math::quantile(dist, p);
      CHECK(stats::student_t_quantile(p, dof) == doctest::Approx(expected).epsilon(1e-9));
    }
  }
}

TEST_CASE("prediction bounds") {
  SUBCASE("zero-residual fit has a vanishing interval") {
    const auto spec = PolynomialSpec::parse("Poly2222");
    const auto recs = synthetic(120, spec, 55);
    const auto f = fit(recs, spec, Target::NTrim);
    const auto iv = prediction_bounds(f, recs[3].input, 0.95);
    CHECK(iv.upper - iv.lower < 1e-6);
  }
  SUBCASE("width grows away from the data along h and with confidence") {
    auto recs = synthetic(200, PolynomialSpec::parse("Poly2222"), 56);
    Rng rng(10);
    for (auto& r : recs) r.n_trim += rng.normal();
    const auto f = fit(recs, PolynomialSpec::parse("Poly2222"), Target::NTrim);
    double previous = 0.0;
    for (double h : {30000.0, 40000.0, 55000.0, 80000.0, 120000.0}) {
      const auto iv = prediction_bounds(f, InputVector{h, 0.0, -10.0, 10.0}, 0.95);
      CHECK(iv.upper - iv.lower > previous);
      previous = iv.upper - iv.lower;
    }
    const InputVector z{15000, 1, -20, 20};
    const auto i95 = prediction_bounds(f, z, 0.95);
    const auto i99 = prediction_bounds(f, z, 0.99);
    CHECK(i99.lower < i95.lower);
    CHECK(i99.upper > i95.upper);
    CHECK(i95.center == doctest::Approx(predict(f, z)));
  }
}

TEST_CASE("degree diagnostic ranks the low-order altitude model first") {
  // Cubic in LL, linear in h, sampled at four altitude levels like the database.
  Rng rng(2718);
  auto make = [&](std::size_t n, bool mid_range) {
    std::vector<MfeRecord> out(n);
    for (auto& r : out) {
      r.input = random_input(rng);
      r.input.h = mid_range ? rng.uniform(2000.0, 28000.0) : 10000.0 * static_cast<double>(rng.below(4));
      const double ll = r.input.ll / 30.0;
      r.n_trim = 5000.0 - 0.05 * r.input.h + 800.0 * ll * ll * ll - 300.0 * ll + 20.0 * r.input.ul +
                 (mid_range ? 0.0 : rng.normal() * 5.0);
    }
    return out;
  };
  const auto train = make(600, false);
  const auto test = make(60, false);
  const auto probes = make(5, true);
  const std::vector<PolynomialSpec> candidates{PolynomialSpec::parse("Poly4444"),
                                               PolynomialSpec{4, {1, 3, 4, 4}},
                                               PolynomialSpec::parse("Poly3344")};
  const auto report = degree_diagnostic(train, test, probes, candidates, Target::NTrim);
  REQUIRE(report.size() == 3);
  CHECK(report.front().spec.per_var_max[0] <= 1);
  CHECK(report.back().spec.per_var_max[0] == 4);
  CHECK(report.back().over_specified);
  CHECK_FALSE(report.front().over_specified);

  const std::vector<PolynomialSpec> single{PolynomialSpec{4, {1, 3, 4, 4}}};
  const auto one = degree_diagnostic(train, test, probes, single, Target::NTrim);
  REQUIRE(one.size() == 1);
  CHECK_FALSE(one[0].over_specified);
}
