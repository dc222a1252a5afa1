#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mfe/data.hpp"
#include "mfe/linalg.hpp"

namespace mfe::envelope {

/// Trim state [V, α, β, p, q, r, φ, θ] in knot, deg and deg/s.
struct StateVector {
  double v = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
  double p = 0.0;
  double q = 0.0;
  double r = 0.0;
  double phi = 0.0;
  double theta = 0.0;

  std::array<double, 8> as_array() const { return {v, alpha, beta, p, q, r, phi, theta}; }
  static StateVector from_array(const std::array<double, 8>& x) {
    return {x[0], x[1], x[2], x[3], x[4], x[5], x[6], x[7]};
  }
};

/// Throttle fraction and surface deflections in deg.
struct ControlVector {
  double throttle = 0.5;
  double elevator = 0.0;
  double aileron = 0.0;
  double rudder = 0.0;

  std::array<double, 4> as_array() const { return {throttle, elevator, aileron, rudder}; }
  static ControlVector from_array(const std::array<double, 4>& u) { return {u[0], u[1], u[2], u[3]}; }
};

enum class FailureKind { Unimpaired, Jam, Restriction };
const char* to_string(FailureKind k);

/// Rudder deflection limits [ll, ul] in deg.
struct FailureCase {
  double ll = -30.0;
  double ul = 30.0;

  FailureKind kind() const;
  void validate() const;
  std::string label() const;

  friend bool operator==(const FailureCase&, const FailureCase&) = default;
};

/// 7 jams, 20 restrictions and the unimpaired case.
std::vector<FailureCase> enumerate_failure_cases();

struct ControlBox {
  std::array<double, 4> lower{0.0, -30.0, -20.0, -30.0};
  std::array<double, 4> upper{1.0, 30.0, 20.0, 30.0};

  static ControlBox for_failure(const FailureCase& f);
  bool contains(const ControlVector& u, double tol = 1e-9) const;
};

/// State-derivative vector in kt/s, deg/s and deg/s², ordered like StateVector.
using Derivative = std::array<double, 8>;

struct ValidityRanges {
  double v_min = 30.0;   // knot
  double v_max = 180.0;  // knot
  double alpha_min = -5.0;
  double alpha_max = 10.5;
  double beta_max = 15.0;
};

/// A 6-DOF model ẋ = f(x, u; h). Implementations must be pure and thread-safe.
class DynamicsModel {
 public:
  virtual ~DynamicsModel() = default;
  virtual Derivative derivatives(const StateVector& x, const ControlVector& u, double h_ft) const = 0;
  virtual ValidityRanges ranges() const = 0;
  virtual std::string fingerprint() const = 0;
};

/// ISA density (kg/m³) in the troposphere.
double isa_density(double h_ft);

/// Generic-transport-class rigid body with linear stability-derivative aero
/// and thrust δ_th·T_max·(ρ/ρ₀)^0.7. Derivative coefficients are per radian.
class SurrogateTransport final : public DynamicsModel {
 public:
  struct Params {
    double mass = 22.5;  // kg
    double s = 0.5483;   // m²
    double b = 2.0939;   // m
    double cbar = 0.279; // m
    double ixx = 1.229, iyy = 1.746, izz = 2.8, ixz = 0.065;
    double t_max = 60.0;  // N at sea level
    double thrust_lapse = 0.7;
    // Density linear in h between the ISA values at 0 and 30000 ft, giving
    // the database a low-order altitude dependence.
    bool linear_density = false;

    double cl0 = 0.25, cl_alpha = 5.0, cl_q = 7.0, cl_de = 0.4;
    double cd0 = 0.03, cd_k = 0.06, cd_beta = 0.3;
    double cy_beta = -0.6, cy_dr = 0.15, cy_p = 0.0, cy_r = 0.3;
    double cl_beta = -0.08, cl_p = -0.45, cl_r = 0.1, cl_da = 0.12, cl_dr = 0.01;
    double cm0 = 0.05, cm_alpha = -1.0, cm_q = -25.0, cm_de = -1.4;
    double cn_beta = 0.1, cn_p = -0.03, cn_r = -0.2, cn_da = -0.005, cn_dr = -0.04;

    ValidityRanges ranges;
  };

  SurrogateTransport() = default;
  explicit SurrogateTransport(const Params& p) : p_(p) {}

  Derivative derivatives(const StateVector& x, const ControlVector& u, double h_ft) const override;
  ValidityRanges ranges() const override { return p_.ranges; }
  std::string fingerprint() const override;
  const Params& params() const { return p_; }
  double density(double h_ft) const;

 private:
  Params p_;
};

struct TrimProblem {
  double h = 0.0;       // ft
  double v = 0.0;       // knot
  double gamma = 0.0;   // deg
  double psidot = 0.0;  // deg/s
  FailureCase failure;
  std::array<double, 8> weights{1, 1, 1, 1, 1, 1, 1, 1};

  void validate() const;
};

/// θ from the rate-of-climb relation (principal branch). Throws ThetaSingularity
/// when the denominator a² − sin²γ* is within 1e-9 of zero.
double theta_from_climb(double alpha_deg, double beta_deg, double phi_deg, double gamma_deg);

/// Flight path angle and turn rate implied by a state.
double flight_path_angle(const StateVector& x);
double turn_rate(const StateVector& x);

/// Completes (α, β, φ) to a full state satisfying the maneuver equalities.
StateVector complete_state(const TrimProblem& problem, double alpha, double beta, double phi);

/// Residuals of the maneuver equalities for `x`:
/// [V − V*, γ − γ*, ψ̇ − ψ̇*, tanθ − rhs, p + ψ̇* sinθ, q − ψ̇* cosθ sinφ, r − ψ̇* cosθ cosφ].
std::array<double, 7> maneuver_constraints(const TrimProblem& problem, const StateVector& x);

enum class Classification { Unclassified, Stable, UnstableControllable, Rejected };
const char* to_string(Classification c);

struct TrimPoint {
  double psidot = 0.0;  // commanded turn rate, deg/s
  StateVector state;
  ControlVector control;
  double cost = 0.0;  // ½ ẋᵀ𝒢ẋ
  Classification classification = Classification::Unclassified;
  std::vector<std::complex<double>> eigenvalues;
  bool eigen_failure = false;
};

struct TrimOptions {
  double accept_cost = 1e-8;
  double constraint_tol = 1e-6;
  double derivative_tol = 1e-6;  // on ‖ẋ‖∞
  int max_iter = 100;
};

struct TrimOutcome {
  bool feasible = false;
  TrimPoint point;
  int iterations = 0;
};

/// Minimizes ½ẋᵀ𝒢ẋ over (α, β, φ, free controls) inside the constraint box with
/// the maneuver equalities eliminated by substitution. `start` seeds the search.
TrimOutcome solve_trim(const TrimProblem& problem, const DynamicsModel& model, const StateVector& start_x,
                       const ControlVector& start_u, const TrimOptions& options = {});

/// Heuristic start for a cold solve.
std::pair<StateVector, ControlVector> default_start(const TrimProblem& problem, const DynamicsModel& model);

/// Linearization about a trim: A is 8×8, B is 8×(free controls).
struct Linearization {
  linalg::Matrix a;
  linalg::Matrix b;
};
Linearization linearize(const DynamicsModel& model, const TrimPoint& trim, const FailureCase& failure, double h_ft);

/// Stable if every eigenvalue of A has real part below 1e-9; otherwise accepted
/// when rank [B, AB, …, A⁷B] = 8.
Classification classify_linear(const linalg::Matrix& a, const linalg::Matrix& b,
                               std::vector<std::complex<double>>* eigenvalues = nullptr, bool* eigen_failure = nullptr);
Classification classify(TrimPoint& trim, const DynamicsModel& model, const FailureCase& failure, double h_ft);

struct GridSpec {
  double v_min = 30.0;
  double v_max = 180.0;
  double v_step = 1.0;
  double psidot_min = -6.0;
  double psidot_max = 6.0;
  double psidot_step = 0.2;

  void validate() const;
  std::size_t v_count() const;
  std::size_t psidot_count() const;
  double v_at(std::size_t i) const { return v_min + v_step * static_cast<double>(i); }
  double psidot_at(std::size_t j) const { return psidot_min + psidot_step * static_cast<double>(j); }
};

struct Mfe2d {
  double h = 0.0;
  double gamma = 0.0;
  FailureCase failure;
  std::vector<TrimPoint> accepted;
  std::size_t nodes = 0;
  std::size_t infeasible = 0;
  std::size_t rejected = 0;
  std::size_t n_trim = 0;
  double centroid_v = 0.0;
  double centroid_psidot = 0.0;

  bool empty() const { return n_trim == 0; }
  MfeRecord record() const;
};

/// Solves every grid node, warm-starting from the nearest accepted node.
Mfe2d sweep_mfe2d(double h, double gamma, const FailureCase& failure, const DynamicsModel& model,
                  const GridSpec& grid, const TrimOptions& options = {});

struct Job {
  double h = 0.0;
  double gamma = 0.0;
  FailureCase failure;
};

inline constexpr std::array<double, 4> kAltitudes{0.0, 10000.0, 20000.0, 30000.0};

/// Failure cases × altitudes × γ ∈ {−5, …, 5}.
std::vector<Job> enumerate_jobs(const std::vector<FailureCase>& failures,
                                const std::vector<double>& altitudes = {kAltitudes.begin(), kAltitudes.end()},
                                const std::vector<double>& gammas = {-5, -4, -3, -2, -1, 0, 1, 2, 3, 4, 5});

struct DatabaseMetadata {
  std::size_t jobs = 0;
  std::size_t empty_jobs = 0;
  GridSpec grid;
  std::string model_fingerprint;
  double runtime_s = 0.0;
};

struct Database {
  std::vector<MfeRecord> records;  // non-empty envelopes, job order
  DatabaseMetadata metadata;
  std::vector<Mfe2d> envelopes;  // kept only when requested
};

struct BuildOptions {
  TrimOptions trim;
  unsigned workers = 0;
  bool keep_envelopes = false;
};

Database build_database(const DynamicsModel& model, const std::vector<Job>& jobs, const GridSpec& grid,
                        const BuildOptions& options = {});

/// Header: h_ft,gamma_deg,ll_deg,ul_deg,n_trim,centroid_v_kt,centroid_psidot_dps
void write_database_csv(std::ostream& os, const std::vector<MfeRecord>& records);
std::vector<MfeRecord> read_database_csv(std::istream& is);
std::vector<MfeRecord> ingest_csv(const std::string& path);

/// One row per accepted node: state, control, cost, classification.
void write_envelope_csv(std::ostream& os, const Mfe2d& mfe);

}  // namespace mfe::envelope
