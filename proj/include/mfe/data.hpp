#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace mfe {

/// Model predictors: altitude (ft), flight path angle (deg), rudder lower and
/// upper deflection limits (deg).
struct InputVector {
  double h = 0.0;
  double gamma = 0.0;
  double ll = -30.0;
  double ul = 30.0;

  std::array<double, 4> as_array() const { return {h, gamma, ll, ul}; }
  static InputVector from_array(const std::array<double, 4>& z) { return {z[0], z[1], z[2], z[3]}; }

  /// Throws InvariantViolation unless ll ≤ ul, both in [-30, 30], gamma in
  /// [-5, 5] and h ≥ 0.
  void validate() const;

  friend bool operator==(const InputVector&, const InputVector&) = default;
};

inline constexpr std::array<const char*, 4> kInputNames = {"h", "gamma", "ll", "ul"};

/// Characteristics of one constant-(h, γ) envelope in the (V, ψ̇) plane.
struct MfeRecord {
  InputVector input;
  double n_trim = 0.0;
  double centroid_v = 0.0;        // knot
  double centroid_psidot = 0.0;   // deg/s
  bool empty = false;

  friend bool operator==(const MfeRecord&, const MfeRecord&) = default;
};

enum class Target { NTrim, CentroidV, CentroidPsidot };

const char* to_string(Target t);
Target parse_target(const std::string& name);
double target_value(const MfeRecord& r, Target t);

/// Affine maps applied to raw inputs and outputs before fitting.
/// scaled_input = (raw - input_offset) * input_weight
/// normalized_output = (raw - output_offset) / output_halfrange
struct ScalingSpec {
  std::array<double, 4> input_offsets{0.0, 0.0, 0.0, 0.0};
  std::array<double, 4> input_weights{1.0, 1.0, 1.0, 1.0};
  std::vector<double> output_offset;
  std::vector<double> output_halfrange;

  std::array<double, 4> scale(const InputVector& z) const;
  double normalize(double raw, std::size_t channel = 0) const;
  double denormalize(double normalized, std::size_t channel = 0) const;

  /// Unit-variance autoscaling (population standard deviation, no centering).
  static std::array<double, 4> autoscale_weights(std::span<const MfeRecord> records);
  /// Offsets/weights that map each input's training range onto [-1, 1].
  static void range_inputs(std::span<const MfeRecord> records, std::array<double, 4>& offsets,
                           std::array<double, 4>& weights);
  /// Appends an output channel mapping [min, max] of `values` onto [-1, 1].
  void add_output_channel(std::span<const double> values);

  friend bool operator==(const ScalingSpec&, const ScalingSpec&) = default;
};

/// Non-empty records only.
std::vector<MfeRecord> non_empty(std::span<const MfeRecord> records);

/// Stable 64-bit FNV-1a fingerprint of a record list, rendered as hex.
std::string fingerprint(std::span<const MfeRecord> records);

}  // namespace mfe
