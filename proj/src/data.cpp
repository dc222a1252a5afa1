#include "mfe/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "mfe/error.hpp"

namespace mfe {

void InputVector::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::InvariantViolation, what); };
  if (!std::isfinite(h) || !std::isfinite(gamma) || !std::isfinite(ll) || !std::isfinite(ul))
    fail("inputs must be finite");
  if (h < 0.0) fail("altitude must be non-negative");
  if (gamma < -5.0 || gamma > 5.0) fail("flight path angle outside [-5, 5] deg");
  if (ll < -30.0 || ll > 30.0 || ul < -30.0 || ul > 30.0) fail("rudder limits outside [-30, 30] deg");
  if (ll > ul) fail("rudder lower limit exceeds upper limit");
}

const char* to_string(Target t) {
  switch (t) {
    case Target::NTrim: return "n_trim";
    case Target::CentroidV: return "centroid_v";
    case Target::CentroidPsidot: return "centroid_psidot";
  }
  return "?";
}

Target parse_target(const std::string& name) {
  if (name == "n_trim") return Target::NTrim;
  if (name == "centroid_v") return Target::CentroidV;
  if (name == "centroid_psidot") return Target::CentroidPsidot;
  throw Error(ErrorKind::InvalidArgument, "unknown target '" + name + "'");
}

double target_value(const MfeRecord& r, Target t) {
  switch (t) {
    case Target::NTrim: return r.n_trim;
    case Target::CentroidV: return r.centroid_v;
    case Target::CentroidPsidot: return r.centroid_psidot;
  }
  return 0.0;
}

std::array<double, 4> ScalingSpec::scale(const InputVector& z) const {
  const auto raw = z.as_array();
  std::array<double, 4> out{};
  for (std::size_t i = 0; i < 4; ++i) out[i] = (raw[i] - input_offsets[i]) * input_weights[i];
  return out;
}

double ScalingSpec::normalize(double raw, std::size_t channel) const {
  return (raw - output_offset.at(channel)) / output_halfrange.at(channel);
}

double ScalingSpec::denormalize(double normalized, std::size_t channel) const {
  return normalized * output_halfrange.at(channel) + output_offset.at(channel);
}

std::array<double, 4> ScalingSpec::autoscale_weights(std::span<const MfeRecord> records) {
  if (records.empty()) throw Error(ErrorKind::InsufficientData, "autoscaling needs records");
  std::array<double, 4> mean{}, var{};
  for (const auto& r : records) {
    const auto z = r.input.as_array();
    for (std::size_t i = 0; i < 4; ++i) mean[i] += z[i];
  }
  const double n = static_cast<double>(records.size());
  for (double& m : mean) m /= n;
  for (const auto& r : records) {
    const auto z = r.input.as_array();
    for (std::size_t i = 0; i < 4; ++i) var[i] += (z[i] - mean[i]) * (z[i] - mean[i]);
  }
  std::array<double, 4> w{};
  for (std::size_t i = 0; i < 4; ++i) {
    const double sd = std::sqrt(var[i] / n);
    w[i] = sd > 0.0 ? 1.0 / sd : 1.0;
  }
  return w;
}

void ScalingSpec::range_inputs(std::span<const MfeRecord> records, std::array<double, 4>& offsets,
                               std::array<double, 4>& weights) {
  if (records.empty()) throw Error(ErrorKind::InsufficientData, "range scaling needs records");
  std::array<double, 4> lo, hi;
  lo.fill(INFINITY);
  hi.fill(-INFINITY);
  for (const auto& r : records) {
    const auto z = r.input.as_array();
    for (std::size_t i = 0; i < 4; ++i) {
      lo[i] = std::min(lo[i], z[i]);
      hi[i] = std::max(hi[i], z[i]);
    }
  }
  for (std::size_t i = 0; i < 4; ++i) {
    offsets[i] = 0.5 * (lo[i] + hi[i]);
    const double half = 0.5 * (hi[i] - lo[i]);
    weights[i] = half > 0.0 ? 1.0 / half : 1.0;
  }
}

void ScalingSpec::add_output_channel(std::span<const double> values) {
  if (values.empty()) throw Error(ErrorKind::InsufficientData, "output normalization needs values");
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double half = 0.5 * (*hi - *lo);
  output_offset.push_back(0.5 * (*hi + *lo));
  // A constant channel keeps a unit half-range so the map stays invertible.
  output_halfrange.push_back(half > 0.0 ? half : 1.0);
}

std::vector<MfeRecord> non_empty(std::span<const MfeRecord> records) {
  std::vector<MfeRecord> out;
  out.reserve(records.size());
  for (const auto& r : records)
    if (!r.empty) out.push_back(r);
  return out;
}

std::string fingerprint(std::span<const MfeRecord> records) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  auto mix = [&](double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (int i = 0; i < 8; ++i) {
      hash ^= (bits >> (8 * i)) & 0xFFu;
      hash *= 0x100000001b3ULL;
    }
  };
  for (const auto& r : records) {
    for (double v : r.input.as_array()) mix(v);
    mix(r.n_trim);
    mix(r.centroid_v);
    mix(r.centroid_psidot);
    mix(r.empty ? 1.0 : 0.0);
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << hash;
  return os.str();
}

}  // namespace mfe
