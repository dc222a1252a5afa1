#include "mfe/envelope.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "mfe/error.hpp"
#include "mfe/nlsq.hpp"
#include "mfe/parallel.hpp"

namespace mfe::envelope {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kDeg = kPi / 180.0;
constexpr double kKnot = 0.514444;  // m/s
constexpr double kFoot = 0.3048;    // m
constexpr double kG = 9.80665;

std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

// Drops the "kind: " prefix Error adds, for re-wrapping with context.
std::string bare_message(const Error& e) {
  std::string s = e.what();
  const std::string prefix = std::string(to_string(e.kind())) + ": ";
  if (s.rfind(prefix, 0) == 0) s.erase(0, prefix.size());
  return s;
}

}  // namespace

const char* to_string(FailureKind k) {
  switch (k) {
    case FailureKind::Unimpaired: return "unimpaired";
    case FailureKind::Jam: return "jam";
    case FailureKind::Restriction: return "restriction";
  }
  return "unknown";
}

FailureKind FailureCase::kind() const {
  if (ll == ul) return FailureKind::Jam;
  if (ll == -30.0 && ul == 30.0) return FailureKind::Unimpaired;
  return FailureKind::Restriction;
}

void FailureCase::validate() const {
  if (!(ll <= ul)) throw Error(ErrorKind::InvariantViolation, "rudder lower limit exceeds upper limit");
  if (ll < -30.0 || ul > 30.0) throw Error(ErrorKind::InvariantViolation, "rudder limits outside [-30, 30] deg");
}

std::string FailureCase::label() const {
  switch (kind()) {
    case FailureKind::Unimpaired: return "unimpaired";
    case FailureKind::Jam: return "jam " + format_number(ll);
    case FailureKind::Restriction: return "restriction [" + format_number(ll) + ", " + format_number(ul) + "]";
  }
  return "";
}

std::vector<FailureCase> enumerate_failure_cases() {
  std::vector<FailureCase> out{{-30.0, 30.0}};
  for (int d = -30; d <= 30; d += 10) out.push_back({double(d), double(d)});
  const int restrictions[20][2] = {{-30, -20}, {-30, -10}, {-30, 0},  {-30, 10}, {-30, 20}, {20, 30},  {10, 30},
                                   {0, 30},    {-10, 30},  {-20, 30}, {-20, 20}, {-20, -10}, {-20, 0}, {-20, 10},
                                   {-10, 0},   {-10, 10},  {10, 20},  {0, 20},   {-10, 20}, {0, 10}};
  for (const auto& r : restrictions) out.push_back({double(r[0]), double(r[1])});
  return out;
}

ControlBox ControlBox::for_failure(const FailureCase& f) {
  f.validate();
  ControlBox box;
  box.lower[3] = f.ll;
  box.upper[3] = f.ul;
  return box;
}

bool ControlBox::contains(const ControlVector& u, double tol) const {
  const auto a = u.as_array();
  for (std::size_t k = 0; k < 4; ++k)
    if (a[k] < lower[k] - tol || a[k] > upper[k] + tol) return false;
  return true;
}

double isa_density(double h_ft) {
  const double h = h_ft * kFoot;
  const double t = 288.15 - 0.0065 * h;
  return 1.225 * std::pow(t / 288.15, 4.25588);
}

double SurrogateTransport::density(double h_ft) const {
  if (!p_.linear_density) return isa_density(h_ft);
  const double rho0 = isa_density(0.0);
  return rho0 + (isa_density(30000.0) - rho0) * h_ft / 30000.0;
}

Derivative SurrogateTransport::derivatives(const StateVector& x, const ControlVector& u, double h_ft) const {
  const Params& k = p_;
  const double v = x.v * kKnot;
  const double al = x.alpha * kDeg, be = x.beta * kDeg;
  const double p = x.p * kDeg, q = x.q * kDeg, r = x.r * kDeg;
  const double phi = x.phi * kDeg, th = x.theta * kDeg;
  const double de = u.elevator * kDeg, da = u.aileron * kDeg, dr = u.rudder * kDeg;

  const double rho = density(h_ft);
  const double qbar = 0.5 * rho * v * v;
  const double ca = std::cos(al), sa = std::sin(al), cb = std::cos(be), sb = std::sin(be);
  const double ub = v * ca * cb, vb = v * sb, wb = v * sa * cb;
  const double ph = p * k.b / (2.0 * v), qh = q * k.cbar / (2.0 * v), rh = r * k.b / (2.0 * v);

  const double cl = k.cl0 + k.cl_alpha * al + k.cl_q * qh + k.cl_de * de;
  const double cd = k.cd0 + k.cd_k * cl * cl + k.cd_beta * be * be;
  const double cy = k.cy_beta * be + k.cy_dr * dr + k.cy_p * ph + k.cy_r * rh;
  const double c_roll = k.cl_beta * be + k.cl_p * ph + k.cl_r * rh + k.cl_da * da + k.cl_dr * dr;
  const double c_pitch = k.cm0 + k.cm_alpha * al + k.cm_q * qh + k.cm_de * de;
  const double c_yaw = k.cn_beta * be + k.cn_p * ph + k.cn_r * rh + k.cn_da * da + k.cn_dr * dr;

  const double qs = qbar * k.s;
  const double lift = qs * cl, drag = qs * cd, side = qs * cy;
  const double thrust = u.throttle * k.t_max * std::pow(rho / 1.225, k.thrust_lapse);

  // Wind-axis aerodynamic force resolved in body axes, plus thrust and weight.
  const double fx = -drag * ca * cb - side * ca * sb + lift * sa + thrust;
  const double fy = -drag * sb + side * cb;
  const double fz = -drag * sa * cb - side * sa * sb - lift * ca;
  const double m = k.mass;
  const double sth = std::sin(th), cth = std::cos(th), sph = std::sin(phi), cph = std::cos(phi);
  const double udot = r * vb - q * wb - kG * sth + fx / m;
  const double vdot = p * wb - r * ub + kG * cth * sph + fy / m;
  const double wdot = q * ub - p * vb + kG * cth * cph + fz / m;

  const double vdot_w = (ub * udot + vb * vdot + wb * wdot) / v;
  const double adot = (ub * wdot - wb * udot) / (ub * ub + wb * wb);
  const double bdot = (v * vdot - vb * vdot_w) / (v * v * cb);

  const double l_mom = qs * k.b * c_roll, m_mom = qs * k.cbar * c_pitch, n_mom = qs * k.b * c_yaw;
  const double gam = k.ixx * k.izz - k.ixz * k.ixz;
  const double c1 = ((k.iyy - k.izz) * k.izz - k.ixz * k.ixz) / gam;
  const double c2 = (k.ixx - k.iyy + k.izz) * k.ixz / gam;
  const double c3 = k.izz / gam, c4 = k.ixz / gam;
  const double c5 = (k.izz - k.ixx) / k.iyy, c6 = k.ixz / k.iyy, c7 = 1.0 / k.iyy;
  const double c8 = (k.ixx * (k.ixx - k.iyy) + k.ixz * k.ixz) / gam, c9 = k.ixx / gam;
  const double pdot = (c1 * r + c2 * p) * q + c3 * l_mom + c4 * n_mom;
  const double qdot = c5 * p * r - c6 * (p * p - r * r) + c7 * m_mom;
  const double rdot = (c8 * p - c2 * r) * q + c4 * l_mom + c9 * n_mom;

  const double phidot = p + std::tan(th) * (q * sph + r * cph);
  const double thdot = q * cph - r * sph;

  return {vdot_w / kKnot, adot / kDeg, bdot / kDeg, pdot / kDeg, qdot / kDeg, rdot / kDeg, phidot / kDeg,
          thdot / kDeg};
}

std::string SurrogateTransport::fingerprint() const {
  const Params& k = p_;
  const double fields[] = {k.mass,    k.s,        k.b,        k.cbar,     k.ixx,      k.iyy,   k.izz,
                           k.ixz,     k.t_max,    k.thrust_lapse, k.cl0,  k.cl_alpha, k.cl_q,  k.cl_de,
                           k.cd0,     k.cd_k,     k.cd_beta,  k.cy_beta,  k.cy_dr,    k.cy_p,  k.cy_r,
                           k.cl_beta, k.cl_p,     k.cl_r,     k.cl_da,    k.cl_dr,    k.cm0,   k.cm_alpha,
                           k.cm_q,    k.cm_de,    k.cn_beta,  k.cn_p,     k.cn_r,     k.cn_da, k.cn_dr,
                           k.ranges.v_min, k.ranges.v_max, k.ranges.alpha_min, k.ranges.alpha_max,
                           k.ranges.beta_max, k.linear_density ? 1.0 : 0.0};
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (double f : fields) {
    for (char c : format_number(f) + ";") {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "surrogate-%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void TrimProblem::validate() const {
  failure.validate();
  if (!(gamma >= -5.0 && gamma <= 5.0)) throw Error(ErrorKind::InvariantViolation, "flight path angle outside [-5, 5]");
  if (!(v > 0.0)) throw Error(ErrorKind::InvariantViolation, "airspeed must be positive");
  if (!(h >= 0.0)) throw Error(ErrorKind::InvariantViolation, "altitude must be non-negative");
  for (double w : weights)
    if (!(w > 0.0)) throw Error(ErrorKind::InvariantViolation, "cost weights must be positive");
}

double theta_from_climb(double alpha_deg, double beta_deg, double phi_deg, double gamma_deg) {
  const double al = alpha_deg * kDeg, be = beta_deg * kDeg, ph = phi_deg * kDeg;
  const double a = std::cos(al) * std::cos(be);
  const double b = std::sin(ph) * std::sin(be) + std::cos(ph) * std::sin(al) * std::cos(be);
  const double sg = std::sin(gamma_deg * kDeg);
  const double den = a * a - sg * sg;
  if (std::fabs(den) < 1e-9) throw Error(ErrorKind::ThetaSingularity, "rate-of-climb relation is singular");
  const double num = a * b + sg * std::sqrt(a * a - sg * sg + b * b);
  return std::atan(num / den) / kDeg;
}

double flight_path_angle(const StateVector& x) {
  const double al = x.alpha * kDeg, be = x.beta * kDeg, ph = x.phi * kDeg, th = x.theta * kDeg;
  const double a = std::cos(al) * std::cos(be);
  const double b = std::sin(ph) * std::sin(be) + std::cos(ph) * std::sin(al) * std::cos(be);
  return std::asin(std::clamp(a * std::sin(th) - b * std::cos(th), -1.0, 1.0)) / kDeg;
}

double turn_rate(const StateVector& x) {
  const double ph = x.phi * kDeg, th = x.theta * kDeg;
  return (x.q * std::sin(ph) + x.r * std::cos(ph)) / std::cos(th);
}

StateVector complete_state(const TrimProblem& problem, double alpha, double beta, double phi) {
  StateVector x;
  x.v = problem.v;
  x.alpha = alpha;
  x.beta = beta;
  x.phi = phi;
  x.theta = theta_from_climb(alpha, beta, phi, problem.gamma);
  const double th = x.theta * kDeg, ph = phi * kDeg;
  x.p = -problem.psidot * std::sin(th);
  x.q = problem.psidot * std::cos(th) * std::sin(ph);
  x.r = problem.psidot * std::cos(th) * std::cos(ph);
  return x;
}

std::array<double, 7> maneuver_constraints(const TrimProblem& problem, const StateVector& x) {
  const double al = x.alpha * kDeg, be = x.beta * kDeg, ph = x.phi * kDeg, th = x.theta * kDeg;
  const double a = std::cos(al) * std::cos(be);
  const double b = std::sin(ph) * std::sin(be) + std::cos(ph) * std::sin(al) * std::cos(be);
  const double sg = std::sin(problem.gamma * kDeg);
  const double den = a * a - sg * sg;
  if (std::fabs(den) < 1e-9) throw Error(ErrorKind::ThetaSingularity, "rate-of-climb relation is singular");
  const double rhs = (a * b + sg * std::sqrt(a * a - sg * sg + b * b)) / den;
  const double w = problem.psidot;
  return {x.v - problem.v,
          flight_path_angle(x) - problem.gamma,
          turn_rate(x) - w,
          std::tan(th) - rhs,
          x.p + w * std::sin(th),
          x.q - w * std::cos(th) * std::sin(ph),
          x.r - w * std::cos(th) * std::cos(ph)};
}

const char* to_string(Classification c) {
  switch (c) {
    case Classification::Unclassified: return "unclassified";
    case Classification::Stable: return "stable";
    case Classification::UnstableControllable: return "unstable_controllable";
    case Classification::Rejected: return "rejected";
  }
  return "unknown";
}

namespace {

// Decision variables z = [α, β, φ, δth, δe, δa, δr] with box bounds.
struct TrimBox {
  std::array<double, 7> lo{};
  std::array<double, 7> hi{};
  std::vector<std::size_t> free;  // the others sit at lo
};

TrimBox trim_box(const TrimProblem& problem, const ValidityRanges& vr) {
  const ControlBox cb = ControlBox::for_failure(problem.failure);
  TrimBox box;
  box.lo = {vr.alpha_min, -vr.beta_max, -30.0, cb.lower[0], cb.lower[1], cb.lower[2], cb.lower[3]};
  box.hi = {std::min(vr.alpha_max, 10.5), vr.beta_max, 30.0, cb.upper[0], cb.upper[1], cb.upper[2], cb.upper[3]};
  for (std::size_t k = 0; k < 7; ++k)
    if (box.hi[k] > box.lo[k]) box.free.push_back(k);
  return box;
}

// Free variables within `margin` (fraction of range) of a bound.
std::vector<std::size_t> near_bounds(const TrimBox& box, const std::array<double, 7>& z, double margin) {
  std::vector<std::size_t> out;
  for (std::size_t k : box.free) {
    const double w = box.hi[k] - box.lo[k];
    if (z[k] - box.lo[k] <= margin * w || box.hi[k] - z[k] <= margin * w) out.push_back(k);
  }
  return out;
}

// Copy of `box` with each variable in `pins` fixed at its nearer bound.
TrimBox pinned(const TrimBox& box, const std::array<double, 7>& z, std::span<const std::size_t> pins) {
  TrimBox b = box;
  for (std::size_t k : pins) {
    if (z[k] - b.lo[k] <= b.hi[k] - z[k])
      b.hi[k] = b.lo[k];
    else
      b.lo[k] = b.hi[k];
  }
  b.free.clear();
  for (std::size_t k : box.free)
    if (b.hi[k] > b.lo[k]) b.free.push_back(k);
  return b;
}

std::array<double, 7> to_z(const TrimBox& box, std::span<const double> t) {
  std::array<double, 7> z{};
  for (std::size_t k = 0; k < 7; ++k) z[k] = box.lo[k];
  for (std::size_t i = 0; i < box.free.size(); ++i) {
    const std::size_t k = box.free[i];
    const double c = 0.5 * (box.lo[k] + box.hi[k]);
    const double h = 0.5 * (box.hi[k] - box.lo[k]);
    z[k] = c + h * std::sin(t[i]);
  }
  return z;
}

std::vector<double> to_t(const TrimBox& box, const std::array<double, 7>& z) {
  std::vector<double> t(box.free.size());
  for (std::size_t i = 0; i < box.free.size(); ++i) {
    const std::size_t k = box.free[i];
    const double c = 0.5 * (box.lo[k] + box.hi[k]);
    const double h = 0.5 * (box.hi[k] - box.lo[k]);
    // Keep the start off the bounds, where the transform has zero slope.
    t[i] = std::asin(std::clamp((z[k] - c) / h, -0.98, 0.98));
  }
  return t;
}

ControlVector control_of(const std::array<double, 7>& z) { return {z[3], z[4], z[5], z[6]}; }

double weighted_cost(const Derivative& d, const std::array<double, 8>& w) {
  double j = 0.0;
  for (std::size_t i = 0; i < 8; ++i) j += w[i] * d[i] * d[i];
  return 0.5 * j;
}

}  // namespace

std::pair<StateVector, ControlVector> default_start(const TrimProblem& problem, const DynamicsModel&) {
  const double v = problem.v * kKnot;
  const double phi = std::clamp(std::atan(v * problem.psidot * kDeg / kG) / kDeg, -29.0, 29.0);
  StateVector x;
  x.v = problem.v;
  x.alpha = 4.0;
  x.phi = phi;
  ControlVector u;
  u.throttle = 0.5;
  // Rudder inside the inner half of its range: the box transform is flat at the bounds.
  const double quarter = 0.25 * (problem.failure.ul - problem.failure.ll);
  u.rudder = std::clamp(0.0, problem.failure.ll + quarter, problem.failure.ul - quarter);
  return {x, u};
}

TrimOutcome solve_trim(const TrimProblem& problem, const DynamicsModel& model, const StateVector& start_x,
                       const ControlVector& start_u, const TrimOptions& options) {
  problem.validate();
  const ValidityRanges vr = model.ranges();
  TrimOutcome out;
  if (problem.v < vr.v_min || problem.v > vr.v_max) return out;
  std::array<double, 8> sqrt_w{};
  for (std::size_t i = 0; i < 8; ++i) sqrt_w[i] = std::sqrt(problem.weights[i]);

  nlsq::LmConfig cfg;
  cfg.max_iter = options.max_iter;
  cfg.grad_tol = 1e-12;
  cfg.step_tol = 1e-12;
  cfg.objective_tol = 1e-16;

  // LM over the free variables of `box`; returns the full variable vector.
  const auto run = [&](const TrimBox& box, const std::array<double, 7>& z0) -> std::optional<std::array<double, 7>> {
    if (box.free.empty()) return z0;
    nlsq::ResidualModel rm;
    rm.parameter_count = box.free.size();
    rm.residual = [&](std::span<const double> t) {
      const auto z = to_z(box, t);
      linalg::Vector res(8);
      try {
        const StateVector x = complete_state(problem, z[0], z[1], z[2]);
        const Derivative d = model.derivatives(x, control_of(z), problem.h);
        for (std::size_t i = 0; i < 8; ++i) res[i] = sqrt_w[i] * d[i];
      } catch (const Error&) {
        std::fill(res.begin(), res.end(), std::numeric_limits<double>::quiet_NaN());
      }
      return res;
    };
    try {
      const auto res = nlsq::lm_solve(rm, to_t(box, z0), cfg);
      out.iterations += res.trace.iterations;
      return to_z(box, res.eta);
    } catch (const Error&) {
      return std::nullopt;
    }
  };

  // Scores a candidate; false when the state cannot be completed.
  const auto assess = [&](const std::array<double, 7>& z, TrimOutcome& o) {
    StateVector x;
    try {
      x = complete_state(problem, z[0], z[1], z[2]);
    } catch (const Error&) {
      return false;
    }
    const ControlVector u = control_of(z);
    const Derivative d = model.derivatives(x, u, problem.h);
    o.point.psidot = problem.psidot;
    o.point.state = x;
    o.point.control = u;
    o.point.cost = weighted_cost(d, problem.weights);
    double dmax = 0.0;
    for (double v : d) dmax = std::max(dmax, std::isfinite(v) ? std::fabs(v) : std::numeric_limits<double>::infinity());
    double cmax = 0.0;
    for (double c : maneuver_constraints(problem, x)) cmax = std::max(cmax, std::fabs(c));
    o.feasible = o.point.cost <= options.accept_cost && dmax <= options.derivative_tol &&
                 cmax <= options.constraint_tol && x.alpha <= 10.5 + 1e-9 && std::fabs(x.phi) <= 30.0 + 1e-9;
    return true;
  };

  const TrimBox box = trim_box(problem, vr);
  const std::array<double, 7> z0{start_x.alpha,    start_x.beta,     start_x.phi,    start_u.throttle,
                                 start_u.elevator, start_u.aileron, start_u.rudder};
  const auto z = run(box, z0);
  if (!z || !assess(*z, out)) return out;
  if (out.feasible || !std::isfinite(out.point.cost)) return out;

  // Nearly converged against bounds: guess the active set, pinning each
  // near-bound variable alone and then all of them, and re-solve the rest.
  // The rudder faces are tried too; LM tends to stall a few degrees short of them.
  if (out.point.cost < 1e-2) {
    const auto near = near_bounds(box, *z, 1e-2);
    std::vector<TrimBox> guesses;
    for (std::size_t k : near) guesses.push_back(pinned(box, *z, std::span(&k, 1)));
    if (near.size() > 1) guesses.push_back(pinned(box, *z, near));
    constexpr std::size_t kRudder = 6;
    if (std::ranges::find(box.free, kRudder) != box.free.end()) {
      std::vector<std::size_t> rest;
      for (std::size_t k : near)
        if (k != kRudder) rest.push_back(k);
      for (const double face : {box.lo[kRudder], box.hi[kRudder]}) {
        std::array<double, 7> zf = *z;
        zf[kRudder] = face;
        guesses.push_back(pinned(box, zf, std::span(&kRudder, 1)));
        if (!rest.empty()) {
          rest.push_back(kRudder);
          guesses.push_back(pinned(box, zf, rest));
          rest.pop_back();
        }
      }
    }
    for (const auto& b : guesses) {
      TrimOutcome polished;
      std::array<double, 7> zs = *z;
      for (std::size_t k = 0; k < 7; ++k)
        if (b.lo[k] == b.hi[k]) zs[k] = b.lo[k];
      const auto zp = run(b, zs);
      if (zp && assess(*zp, polished) && polished.feasible) {
        polished.iterations = out.iterations;
        return polished;
      }
    }
  }
  return out;
}

Linearization linearize(const DynamicsModel& model, const TrimPoint& trim, const FailureCase& failure, double h_ft) {
  const bool jam = failure.kind() == FailureKind::Jam;
  const std::size_t nu = jam ? 3 : 4;
  const auto x0 = trim.state.as_array();
  const auto u0 = trim.control.as_array();
  linalg::Vector xu(8 + nu);
  for (std::size_t i = 0; i < 8; ++i) xu[i] = x0[i];
  for (std::size_t i = 0; i < nu; ++i) xu[8 + i] = u0[i];
  auto f = [&](std::span<const double> v) {
    std::array<double, 8> xs{};
    std::array<double, 4> us = u0;
    for (std::size_t i = 0; i < 8; ++i) xs[i] = v[i];
    for (std::size_t i = 0; i < nu; ++i) us[i] = v[8 + i];
    const Derivative d = model.derivatives(StateVector::from_array(xs), ControlVector::from_array(us), h_ft);
    return linalg::Vector(d.begin(), d.end());
  };
  const linalg::Matrix j = linalg::fd_jacobian(f, xu);
  Linearization lin{linalg::Matrix(8, 8), linalg::Matrix(8, nu)};
  for (std::size_t r = 0; r < 8; ++r) {
    for (std::size_t c = 0; c < 8; ++c) lin.a(r, c) = j(r, c);
    for (std::size_t c = 0; c < nu; ++c) lin.b(r, c) = j(r, 8 + c);
  }
  return lin;
}

Classification classify_linear(const linalg::Matrix& a, const linalg::Matrix& b,
                               std::vector<std::complex<double>>* eigenvalues, bool* eigen_failure) {
  const std::size_t n = a.rows();
  if (eigen_failure) *eigen_failure = false;
  std::vector<std::complex<double>> ev;
  try {
    ev = linalg::eigenvalues(a);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::NonConvergence) throw;
    if (eigen_failure) *eigen_failure = true;
    return Classification::Rejected;
  }
  if (eigenvalues) *eigenvalues = ev;
  const bool stable = std::all_of(ev.begin(), ev.end(), [](const auto& l) { return l.real() < 1e-9; });
  if (stable) return Classification::Stable;
  if (b.cols() == 0) return Classification::Rejected;
  // Controllability matrix [B, AB, …, Aⁿ⁻¹B].
  linalg::Matrix ctrb(n, n * b.cols());
  linalg::Matrix block = b;
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < b.cols(); ++c) ctrb(r, k * b.cols() + c) = block(r, c);
    if (k + 1 < n) block = a * block;
  }
  return linalg::rank(ctrb) == n ? Classification::UnstableControllable : Classification::Rejected;
}

Classification classify(TrimPoint& trim, const DynamicsModel& model, const FailureCase& failure, double h_ft) {
  const Linearization lin = linearize(model, trim, failure, h_ft);
  trim.classification = classify_linear(lin.a, lin.b, &trim.eigenvalues, &trim.eigen_failure);
  return trim.classification;
}

void GridSpec::validate() const {
  if (!(v_step > 0.0) || !(psidot_step > 0.0)) throw Error(ErrorKind::InvalidArgument, "grid steps must be positive");
  if (!(v_max >= v_min) || !(psidot_max >= psidot_min)) throw Error(ErrorKind::InvalidArgument, "empty grid range");
  if (!(v_min > 0.0)) throw Error(ErrorKind::InvalidArgument, "grid airspeeds must be positive");
}

std::size_t GridSpec::v_count() const {
  return static_cast<std::size_t>(std::floor((v_max - v_min) / v_step + 1e-9)) + 1;
}

std::size_t GridSpec::psidot_count() const {
  return static_cast<std::size_t>(std::floor((psidot_max - psidot_min) / psidot_step + 1e-9)) + 1;
}

MfeRecord Mfe2d::record() const {
  MfeRecord r;
  r.input = {h, gamma, failure.ll, failure.ul};
  r.n_trim = static_cast<double>(n_trim);
  r.centroid_v = centroid_v;
  r.centroid_psidot = centroid_psidot;
  r.empty = empty();
  return r;
}

Mfe2d sweep_mfe2d(double h, double gamma, const FailureCase& failure, const DynamicsModel& model,
                  const GridSpec& grid, const TrimOptions& options) {
  grid.validate();
  failure.validate();
  Mfe2d out;
  out.h = h;
  out.gamma = gamma;
  out.failure = failure;
  const std::size_t nv = grid.v_count();
  const std::size_t np = grid.psidot_count();
  out.nodes = nv * np;

  // Start near one third of the speed range in level, straight flight and
  // spread outward: ψ̇ rows by distance from zero, V by distance from the start.
  const auto iv0 = static_cast<std::ptrdiff_t>(nv / 3);
  const auto ip0 = static_cast<std::ptrdiff_t>(std::clamp(std::lround(-grid.psidot_min / grid.psidot_step), 0L,
                                                          static_cast<long>(np) - 1));
  std::vector<std::pair<std::ptrdiff_t, std::ptrdiff_t>> order;
  order.reserve(out.nodes);
  for (std::ptrdiff_t j = 0; j < static_cast<std::ptrdiff_t>(np); ++j)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(nv); ++i) order.emplace_back(i, j);
  std::stable_sort(order.begin(), order.end(), [&](const auto& a, const auto& b) {
    const auto da = std::abs(a.second - ip0), db = std::abs(b.second - ip0);
    if (da != db) return da < db;
    if (a.second != b.second) return a.second > b.second;
    const auto va = std::abs(a.first - iv0), vb = std::abs(b.first - iv0);
    if (va != vb) return va < vb;
    return a.first > b.first;
  });

  // Feasible solutions by node, for warm starts.
  std::vector<std::optional<TrimPoint>> solved(out.nodes);
  auto at = [&](std::ptrdiff_t i, std::ptrdiff_t j) -> std::optional<TrimPoint>& {
    return solved[static_cast<std::size_t>(j) * nv + static_cast<std::size_t>(i)];
  };
  constexpr std::ptrdiff_t kReach = 3;

  for (const auto& [i, j] : order) {
    TrimProblem problem;
    problem.h = h;
    problem.v = grid.v_at(static_cast<std::size_t>(i));
    problem.gamma = gamma;
    problem.psidot = grid.psidot_at(static_cast<std::size_t>(j));
    problem.failure = failure;

    const TrimPoint* seed = nullptr;
    std::ptrdiff_t best = std::numeric_limits<std::ptrdiff_t>::max();
    for (std::ptrdiff_t dj = -kReach; dj <= kReach; ++dj) {
      for (std::ptrdiff_t di = -kReach; di <= kReach; ++di) {
        const auto ii = i + di, jj = j + dj;
        if (ii < 0 || jj < 0 || ii >= static_cast<std::ptrdiff_t>(nv) || jj >= static_cast<std::ptrdiff_t>(np)) continue;
        const auto& s = at(ii, jj);
        const auto d2 = di * di + dj * dj;
        if (s && d2 < best) {
          best = d2;
          seed = &*s;
        }
      }
    }
    TrimOutcome res;
    if (seed) res = solve_trim(problem, model, seed->state, seed->control, options);
    if (!res.feasible) {
      const auto [x0, u0] = default_start(problem, model);
      res = solve_trim(problem, model, x0, u0, options);
      // Other rudder starts reach sideslip branches the default misses.
      const double quarter = 0.25 * (failure.ul - failure.ll);
      for (double rudder : {failure.ll + quarter, failure.ul - quarter}) {
        if (res.feasible || quarter == 0.0 || rudder == u0.rudder) continue;
        ControlVector u1 = u0;
        u1.rudder = rudder;
        res = solve_trim(problem, model, x0, u1, options);
      }
    }
    if (!res.feasible) {
      ++out.infeasible;
      continue;
    }
    at(i, j) = res.point;
    if (classify(res.point, model, failure, h) == Classification::Rejected) {
      ++out.rejected;
      continue;
    }
    out.accepted.push_back(res.point);
  }

  // Accepted points in grid order so results do not depend on sweep order.
  std::sort(out.accepted.begin(), out.accepted.end(), [](const TrimPoint& a, const TrimPoint& b) {
    if (a.psidot != b.psidot) return a.psidot < b.psidot;
    return a.state.v < b.state.v;
  });
  out.n_trim = out.accepted.size();
  if (out.n_trim > 0) {
    double sv = 0.0, sp = 0.0;
    for (const auto& t : out.accepted) {
      sv += t.state.v;
      sp += t.psidot;
    }
    out.centroid_v = sv / static_cast<double>(out.n_trim);
    out.centroid_psidot = sp / static_cast<double>(out.n_trim);
  }
  return out;
}

std::vector<Job> enumerate_jobs(const std::vector<FailureCase>& failures, const std::vector<double>& altitudes,
                                const std::vector<double>& gammas) {
  std::vector<Job> jobs;
  for (const auto& f : failures)
    for (double h : altitudes)
      for (double g : gammas) jobs.push_back({h, g, f});
  return jobs;
}

Database build_database(const DynamicsModel& model, const std::vector<Job>& jobs, const GridSpec& grid,
                        const BuildOptions& options) {
  grid.validate();
  const auto start = std::chrono::steady_clock::now();
  std::vector<Mfe2d> results(jobs.size());
  parallel_for(
      jobs.size(),
      [&](std::size_t k) {
        results[k] = sweep_mfe2d(jobs[k].h, jobs[k].gamma, jobs[k].failure, model, grid, options.trim);
        if (!options.keep_envelopes) results[k].accepted.clear();
      },
      options.workers);
  Database db;
  db.metadata.jobs = jobs.size();
  db.metadata.grid = grid;
  db.metadata.model_fingerprint = model.fingerprint();
  for (const auto& r : results) {
    if (r.empty())
      ++db.metadata.empty_jobs;
    else
      db.records.push_back(r.record());
  }
  if (options.keep_envelopes) db.envelopes = std::move(results);
  db.metadata.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return db;
}

namespace {

constexpr const char* kCsvHeader = "h_ft,gamma_deg,ll_deg,ul_deg,n_trim,centroid_v_kt,centroid_psidot_dps";

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r' && c != ' ' && c != '\t') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_number(const std::string& s, std::size_t line) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (!s.empty() && *first == '+') ++first;
  const auto res = std::from_chars(first, last, v);
  if (s.empty() || res.ec != std::errc() || res.ptr != last)
    throw Error(ErrorKind::ParseError, "line " + std::to_string(line) + ": not a number: '" + s + "'");
  return v;
}

}  // namespace

void write_database_csv(std::ostream& os, const std::vector<MfeRecord>& records) {
  os << kCsvHeader << '\n';
  for (const auto& r : records) {
    os << format_number(r.input.h) << ',' << format_number(r.input.gamma) << ',' << format_number(r.input.ll) << ','
       << format_number(r.input.ul) << ',' << format_number(r.n_trim) << ',' << format_number(r.centroid_v) << ','
       << format_number(r.centroid_psidot) << '\n';
  }
}

std::vector<MfeRecord> read_database_csv(std::istream& is) {
  std::string line;
  std::size_t lineno = 0;
  const auto header_fields = split_fields(kCsvHeader);
  bool header_seen = false;
  std::vector<MfeRecord> out;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fields = split_fields(line);
    if (!header_seen) {
      if (fields != header_fields)
        throw Error(ErrorKind::ParseError, "line " + std::to_string(lineno) + ": expected header " + kCsvHeader);
      header_seen = true;
      continue;
    }
    if (fields.size() != 7)
      throw Error(ErrorKind::ParseError,
                  "line " + std::to_string(lineno) + ": expected 7 fields, found " + std::to_string(fields.size()));
    MfeRecord r;
    r.input = {parse_number(fields[0], lineno), parse_number(fields[1], lineno), parse_number(fields[2], lineno),
               parse_number(fields[3], lineno)};
    r.n_trim = parse_number(fields[4], lineno);
    r.centroid_v = parse_number(fields[5], lineno);
    r.centroid_psidot = parse_number(fields[6], lineno);
    try {
      r.input.validate();
    } catch (const Error& e) {
      throw Error(e.kind(), "line " + std::to_string(lineno) + ": " + bare_message(e));
    }
    if (r.n_trim < 0.0) throw Error(ErrorKind::InvariantViolation, "line " + std::to_string(lineno) + ": negative n_trim");
    r.empty = r.n_trim == 0.0;
    out.push_back(r);
  }
  if (!header_seen) throw Error(ErrorKind::ParseError, "missing header line");
  return out;
}

std::vector<MfeRecord> ingest_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  return read_database_csv(in);
}

void write_envelope_csv(std::ostream& os, const Mfe2d& mfe) {
  os << "v_kt,psidot_dps,alpha_deg,beta_deg,p_dps,q_dps,r_dps,phi_deg,theta_deg,throttle,elevator_deg,aileron_deg,"
        "rudder_deg,cost,classification\n";
  for (const auto& t : mfe.accepted) {
    const auto& x = t.state;
    const auto& u = t.control;
    for (double v : {x.v, t.psidot, x.alpha, x.beta, x.p, x.q, x.r, x.phi, x.theta, u.throttle, u.elevator, u.aileron,
                     u.rudder, t.cost})
      os << format_number(v) << ',';
    os << to_string(t.classification) << '\n';
  }
}

}  // namespace mfe::envelope
