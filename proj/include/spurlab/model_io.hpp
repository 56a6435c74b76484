#pragma once

// JSON persistence of trained linear models: weights, optional block view,
// the random-feature map the model was trained on, and free-form config.

#include <fstream>
#include <optional>
#include <sstream>
#include <string>

#include "spurlab/features.hpp"
#include "spurlab/linear_model.hpp"
#include "spurlab/spec_io.hpp"

namespace spurlab {

inline constexpr const char* kModelFormat = "spurlab-model";
inline constexpr int kModelFormatVersion = 1;

/// ReLU random features ReLU(W x) with W = sample_projection(input_dim, m, seed).
struct FeatureMap {
  Index input_dim = 0;
  Index m = 0;
  std::uint64_t seed = 0;
  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;
};

struct SavedModel {
  LinearModel model;
  std::optional<FeatureMap> features;
  Json config = Json::object();
};

inline Json to_json(const SavedModel& s) {
  Json j;
  j["format"] = kModelFormat;
  j["version"] = kModelFormatVersion;
  j["weights"] = std::vector<double>(s.model.weights().data(),
                                     s.model.weights().data() + s.model.dim());
  if (const auto& l = s.model.layout())
    j["block_view"] = {{"core", l->core}, {"spu", l->spu}, {"noise", l->noise}};
  else
    j["block_view"] = nullptr;
  if (s.features)
    j["features"] = {{"kind", "relu_random"},
                     {"input_dim", s.features->input_dim},
                     {"m", s.features->m},
                     {"seed", s.features->seed}};
  else
    j["features"] = nullptr;
  j["config"] = s.config;
  return j;
}

inline SavedModel saved_model_from_json(const Json& j) {
  detail::FieldReader r(j, "model");
  std::string format;
  int version = 0;
  r.get("format", format);
  r.get("version", version);
  if (format != kModelFormat) throw ConfigError("model.format: expected '" + std::string(kModelFormat) + "'");
  if (version != kModelFormatVersion) throw ConfigError("model.version: unsupported version");
  std::vector<double> w;
  r.get_list("weights", w);
  if (w.empty()) throw ConfigError("model.weights: must be a non-empty list");
  Eigen::VectorXd weights = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Index>(w.size()));

  std::optional<BlockLayout> layout;
  if (r.has("block_view") && !j.at("block_view").is_null()) {
    auto t = r.child("block_view");
    BlockLayout l;
    t.get("core", l.core);
    t.get("spu", l.spu);
    t.get("noise", l.noise);
    t.finish();
    layout = l;
  } else if (r.has("block_view")) {
    r.mark("block_view");
  }

  SavedModel s;
  if (r.has("features") && !j.at("features").is_null()) {
    auto t = r.child("features");
    std::string kind;
    FeatureMap f;
    t.get("kind", kind);
    t.get("input_dim", f.input_dim);
    t.get("m", f.m);
    t.get("seed", f.seed);
    t.finish();
    if (kind != "relu_random") throw ConfigError("model.features.kind: expected relu_random");
    if (f.m != static_cast<Index>(w.size()))
      throw DimensionError("model.features.m: does not match the number of weights");
    s.features = f;
  } else if (r.has("features")) {
    r.mark("features");
  }
  if (r.has("config")) {
    r.mark("config");
    s.config = j.at("config");
  }
  r.finish();
  s.model = LinearModel(std::move(weights), layout);
  return s;
}

inline void save_model(const std::string& path, const SavedModel& s) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << to_json(s).dump(2) << '\n';
}

inline SavedModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  Json j;
  try {
    j = Json::parse(ss.str());
  } catch (const Json::parse_error& e) {
    throw ConfigError(path + ": invalid JSON: " + e.what());
  }
  return saved_model_from_json(j);
}

/// Maps raw inputs through the model's feature map (identity when none).
inline GroupedDataset model_inputs(const SavedModel& s, const GroupedDataset& raw) {
  if (!s.features) {
    if (raw.dim() != s.model.dim())
      throw DimensionError("model has " + std::to_string(s.model.dim()) + " weights, data has " +
                           std::to_string(raw.dim()) + " features");
    return raw;
  }
  if (raw.dim() != s.features->input_dim)
    throw DimensionError("feature map expects " + std::to_string(s.features->input_dim) +
                         " inputs, data has " + std::to_string(raw.dim()) + " features");
  return apply_features(sample_projection(s.features->input_dim, s.features->m, s.features->seed),
                        raw);
}

}  // namespace spurlab
