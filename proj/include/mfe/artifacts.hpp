#pragma once

#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "mfe/data.hpp"
#include "mfe/envelope.hpp"
#include "mfe/gsa.hpp"
#include "mfe/mlp.hpp"
#include "mfe/nlsq.hpp"
#include "mfe/poly.hpp"

namespace mfe::artifacts {

using Json = nlohmann::ordered_json;

Json to_json(const ScalingSpec& s);
ScalingSpec scaling_from_json(const Json& j);

Json to_json(const poly::LinearFit& fit);
poly::LinearFit linear_fit_from_json(const Json& j);

Json to_json(const nlsq::TanhFit& fit);
nlsq::TanhFit tanh_fit_from_json(const Json& j);

Json to_json(const mlp::TrainedNetwork& net);
mlp::TrainedNetwork network_from_json(const Json& j);

Json to_json(const gsa::SobolResult& r);
gsa::SobolResult sobol_from_json(const Json& j);

Json to_json(const envelope::GridSpec& g);
envelope::GridSpec grid_from_json(const Json& j);
Json to_json(const envelope::DatabaseMetadata& m, bool include_runtime);

/// Any fitted model, loaded from its "kind" field.
class Model {
 public:
  explicit Model(poly::LinearFit f) : m_(std::move(f)) {}
  explicit Model(nlsq::TanhFit f) : m_(std::move(f)) {}
  explicit Model(mlp::TrainedNetwork n) : m_(std::move(n)) {}

  static Model from_json(const Json& j);
  Json to_json() const;

  std::string kind() const;  // "polynomial", "tanh" or "mlp"
  std::string name() const;  // "Poly3344", "f7", "mlp10"
  std::vector<Target> targets() const;
  std::size_t coefficient_count() const;
  std::string dataset_fingerprint() const;
  /// Raw-scale outputs, one per target.
  std::vector<double> predict(const InputVector& input) const;

  const poly::LinearFit* polynomial() const { return std::get_if<poly::LinearFit>(&m_); }

 private:
  std::variant<poly::LinearFit, nlsq::TanhFit, mlp::TrainedNetwork> m_;
};

Json load_json(const std::string& path);
void save_json(const std::string& path, const Json& j);
void save_text(const std::string& path, const std::string& text);

}  // namespace mfe::artifacts
