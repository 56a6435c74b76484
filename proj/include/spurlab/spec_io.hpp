#pragma once

// Sweep and theory specifications as JSON or TOML documents. TOML is converted
// to the JSON object model first, so both formats share one strict parser:
// unknown keys and ill-typed values are rejected with the offending field path.

#include <json.hpp>
#include <toml.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "spurlab/error.hpp"
#include "spurlab/sweeps.hpp"
#include "spurlab/theory.hpp"

namespace spurlab {

using Json = nlohmann::json;

inline Json toml_to_json(const toml::node& node) {
  if (const auto* t = node.as_table()) {
    Json out = Json::object();
    for (const auto& [k, v] : *t) out[std::string(k.str())] = toml_to_json(v);
    return out;
  }
  if (const auto* a = node.as_array()) {
    Json out = Json::array();
    for (const auto& v : *a) out.push_back(toml_to_json(v));
    return out;
  }
  if (const auto* s = node.as_string()) return s->get();
  if (const auto* i = node.as_integer()) return i->get();
  if (const auto* f = node.as_floating_point()) return f->get();
  if (const auto* b = node.as_boolean()) return b->get();
  throw ConfigError("unsupported TOML value (dates and times are not accepted)");
}

/// Parses `text` as JSON when it starts with '{', otherwise as TOML.
inline Json parse_document(const std::string& text, const std::string& origin = "<input>") {
  std::size_t p = text.find_first_not_of(" \t\r\n");
  if (p != std::string::npos && text[p] == '{') {
    try {
      return Json::parse(text);
    } catch (const Json::parse_error& e) {
      throw ConfigError(origin + ": invalid JSON: " + e.what());
    }
  }
  try {
    return toml_to_json(toml::parse(text, origin));
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << origin << ": invalid TOML at line " << e.source().begin.line << ": " << e.description();
    throw ConfigError(os.str());
  }
}

inline Json load_document(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_document(ss.str(), path);
}

namespace detail {

/// Typed access to the members of one JSON object; remembers which keys were
/// consumed so leftovers can be reported as unknown fields.
class FieldReader {
 public:
  FieldReader(const Json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(where() + "must be a table/object");
  }

  bool has(const std::string& key) const { return obj_.contains(key); }

  /// Accepts `key` without reading it.
  void mark(const std::string& key) { used_.insert(key); }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!obj_.contains(key)) return;
    used_.insert(key);
    out = convert<T>(obj_.at(key), field(key));
  }

  template <typename T>
  void get_list(const std::string& key, std::vector<T>& out) {
    if (!obj_.contains(key)) return;
    used_.insert(key);
    const Json& v = obj_.at(key);
    if (!v.is_array()) throw ConfigError(field(key) + ": expected a list");
    out.clear();
    for (std::size_t i = 0; i < v.size(); ++i)
      out.push_back(convert<T>(v[i], field(key) + "[" + std::to_string(i) + "]"));
  }

  FieldReader child(const std::string& key) {
    used_.insert(key);
    return FieldReader(obj_.at(key), field(key));
  }

  std::string field(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  void finish() const {
    for (const auto& [k, v] : obj_.items())
      if (!used_.count(k)) throw ConfigError(field(k) + ": unknown field");
  }

 private:
  std::string where() const { return path_.empty() ? "document " : path_ + ": "; }

  template <typename T>
  static T convert(const Json& v, const std::string& name) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(name + ": expected true or false");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(name + ": expected a string");
      return v.get<std::string>();
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      if (v.is_number_unsigned()) return v.get<std::uint64_t>();
      if (v.is_number_integer() && v.get<std::int64_t>() >= 0)
        return static_cast<std::uint64_t>(v.get<std::int64_t>());
      throw ConfigError(name + ": expected a non-negative integer");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(name + ": expected an integer");
      return static_cast<T>(v.get<std::int64_t>());
    } else {
      if (!v.is_number()) throw ConfigError(name + ": expected a number");
      return v.get<double>();
    }
  }

  const Json& obj_;
  std::string path_;
  std::set<std::string> used_;
};

inline Objective objective_field(const std::string& s, const std::string& name) {
  try {
    return parse_objective(s);
  } catch (const ConfigError&) {
    throw ConfigError(name + ": unknown objective '" + s + "' (expected erm, reweight or subsample)");
  }
}

}  // namespace detail

/// Which sweep operation a spec drives.
enum class SweepKind { model_size, knob, objective, reg, explicit_vs_implicit };

inline const char* to_string(SweepKind k) {
  switch (k) {
    case SweepKind::model_size: return "model_size";
    case SweepKind::knob: return "knob";
    case SweepKind::objective: return "objective";
    case SweepKind::reg: return "reg";
    case SweepKind::explicit_vs_implicit: return "explicit_vs_implicit";
  }
  return "?";
}

struct SweepDocument {
  SweepKind kind = SweepKind::model_size;
  SweepSpec spec;
  /// Used when kind is explicit_vs_implicit.
  ExplicitVsImplicitSpec matched;
};

inline SweepDocument sweep_from_json(const Json& doc) {
  SweepDocument out;
  SweepSpec& s = out.spec;
  detail::FieldReader r(doc, "");
  std::string kind = "model_size";
  r.get("kind", kind);
  if (kind == "model_size") out.kind = SweepKind::model_size;
  else if (kind == "knob") out.kind = SweepKind::knob;
  else if (kind == "objective") out.kind = SweepKind::objective;
  else if (kind == "reg") out.kind = SweepKind::reg;
  else if (kind == "explicit_vs_implicit") out.kind = SweepKind::explicit_vs_implicit;
  else throw ConfigError("kind: unknown sweep kind '" + kind + "'");

  r.get("name", s.name);
  std::string setting = "implicit";
  r.get("setting", setting);
  try {
    s.setting = parse_setting(setting);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("setting: ") + e.what());
  }
  r.get("seed", s.seed);
  r.get("trials", s.trials);
  r.get("test_size_per_group", s.test_size_per_group);
  r.get("test_chunk_rows", s.test_chunk_rows);
  r.get("remove_spurious", s.remove_spurious);
  r.get("grad_tol", s.grad_tol);
  r.get("max_iters", s.max_iters);
  std::string solver = "lbfgs";
  r.get("solver", solver);
  if (solver == "lbfgs") s.solver = Solver::lbfgs;
  else if (solver == "gd") s.solver = Solver::gradient_descent;
  else throw ConfigError("solver: expected lbfgs or gd");

  std::vector<long long> sizes;
  r.get_list("model_sizes", sizes);
  s.model_sizes.assign(sizes.begin(), sizes.end());
  std::vector<std::string> objectives;
  r.get_list("objectives", objectives);
  if (r.has("objectives")) {
    s.objectives.clear();
    for (std::size_t i = 0; i < objectives.size(); ++i)
      s.objectives.push_back(
          detail::objective_field(objectives[i], "objectives[" + std::to_string(i) + "]"));
  }
  r.get_list("lambdas", s.lambdas);

  if (r.has("implicit")) {
    auto t = r.child("implicit");
    t.get("n", s.implicit.n);
    t.get("d", s.implicit.d);
    t.get("p_maj", s.implicit.p_maj);
    t.get("sigma_core_sq", s.implicit.sigma_core_sq);
    t.get("sigma_spu_sq", s.implicit.sigma_spu_sq);
    t.finish();
  }
  if (r.has("explicit")) {
    auto t = r.child("explicit");
    t.get("n_maj", s.explicit_cfg.n_maj);
    t.get("n_min", s.explicit_cfg.n_min);
    t.get("sigma_core_sq", s.explicit_cfg.sigma_core_sq);
    t.get("sigma_spu_sq", s.explicit_cfg.sigma_spu_sq);
    t.get("sigma_noise_sq", s.explicit_cfg.sigma_noise_sq);
    t.finish();
  }
  if (r.has("csv")) {
    auto t = r.child("csv");
    t.get("train_path", s.train_path);
    t.get("test_path", s.test_path);
    t.get("label_column", s.schema.label_column);
    t.get("attribute_column", s.schema.attribute_column);
    t.get_list("feature_columns", s.schema.feature_columns);
    t.finish();
  }
  if (r.has("knob_grid")) {
    auto t = r.child("knob_grid");
    KnobGrid g;
    t.get_list("p_maj", g.p_maj);
    t.get_list("ratio_spu_core", g.ratio_spu_core);
    t.finish();
    s.knob_grid = g;
  }
  if (r.has("matched")) {
    auto t = r.child("matched");
    t.get("n", out.matched.n);
    t.get("p_maj", out.matched.p_maj);
    t.get("d", out.matched.implicit.d);
    t.get("sigma_core_sq", out.matched.implicit.sigma_core_sq);
    t.get("sigma_spu_sq", out.matched.implicit.sigma_spu_sq);
    t.get("sigma_noise_sq", out.matched.sigma_noise_sq);
    t.finish();
  }
  r.finish();

  if (out.kind == SweepKind::explicit_vs_implicit) {
    auto& m = out.matched;
    if (!s.model_sizes.empty()) m.model_sizes = s.model_sizes;
    if (s.objectives.size() != 1) throw ConfigError("objectives: explicit_vs_implicit takes one objective");
    if (s.lambdas.size() != 1) throw ConfigError("lambdas: explicit_vs_implicit takes one lambda");
    m.objective = s.objectives.front();
    m.lambda = s.lambdas.front();
    m.trials = s.trials;
    m.test_size_per_group = s.test_size_per_group;
    m.seed = s.seed;
    m.grad_tol = s.grad_tol;
    m.max_iters = s.max_iters;
    m.explicit_spec().validate();
    m.implicit_spec().validate();
  } else {
    s.validate();
    if (out.kind == SweepKind::knob) require_knob_grid(s);
    if (out.kind == SweepKind::objective) require_subsample(s);
    if (out.kind == SweepKind::reg) require_lambda_grid(s);
  }
  return out;
}

inline Json to_json(const SweepDocument& d) {
  const SweepSpec& s = d.spec;
  Json j;
  j["kind"] = to_string(d.kind);
  j["name"] = s.name;
  j["setting"] = to_string(s.setting);
  j["seed"] = s.seed;
  j["trials"] = s.trials;
  j["test_size_per_group"] = s.test_size_per_group;
  j["test_chunk_rows"] = s.test_chunk_rows;
  j["remove_spurious"] = s.remove_spurious;
  j["grad_tol"] = s.grad_tol;
  j["max_iters"] = s.max_iters;
  j["solver"] = s.solver == Solver::lbfgs ? "lbfgs" : "gd";
  j["model_sizes"] = d.kind == SweepKind::explicit_vs_implicit ? d.matched.model_sizes
                                                               : s.resolved_model_sizes();
  j["objectives"] = Json::array();
  for (Objective o : s.objectives) j["objectives"].push_back(to_string(o));
  j["lambdas"] = s.lambdas;
  j["implicit"] = {{"n", s.implicit.n},
                   {"d", s.implicit.d},
                   {"p_maj", s.implicit.p_maj},
                   {"sigma_core_sq", s.implicit.sigma_core_sq},
                   {"sigma_spu_sq", s.implicit.sigma_spu_sq}};
  j["explicit"] = {{"n_maj", s.explicit_cfg.n_maj},
                   {"n_min", s.explicit_cfg.n_min},
                   {"sigma_core_sq", s.explicit_cfg.sigma_core_sq},
                   {"sigma_spu_sq", s.explicit_cfg.sigma_spu_sq},
                   {"sigma_noise_sq", s.explicit_cfg.sigma_noise_sq}};
  if (s.setting == Setting::csv)
    j["csv"] = {{"train_path", s.train_path},
                {"test_path", s.test_path},
                {"label_column", s.schema.label_column},
                {"attribute_column", s.schema.attribute_column},
                {"feature_columns", s.schema.feature_columns}};
  if (s.knob_grid)
    j["knob_grid"] = {{"p_maj", s.knob_grid->p_maj},
                      {"ratio_spu_core", s.knob_grid->ratio_spu_core}};
  if (d.kind == SweepKind::explicit_vs_implicit)
    j["matched"] = {{"n", d.matched.n},
                    {"p_maj", d.matched.p_maj},
                    {"d", d.matched.implicit.d},
                    {"sigma_core_sq", d.matched.implicit.sigma_core_sq},
                    {"sigma_spu_sq", d.matched.implicit.sigma_spu_sq},
                    {"sigma_noise_sq", d.matched.sigma_noise_sq}};
  return j;
}

/// Runs the operation selected by the document's kind.
inline std::vector<SweepRow> run_document(const SweepDocument& d, const SweepOptions& opt = {}) {
  switch (d.kind) {
    case SweepKind::model_size: return run_model_size_sweep(d.spec, opt);
    case SweepKind::knob: return run_knob_sweep(d.spec, opt);
    case SweepKind::objective: return run_objective_comparison(d.spec, opt);
    case SweepKind::reg: return run_reg_sweep(d.spec, opt);
    case SweepKind::explicit_vs_implicit: return run_explicit_vs_implicit(d.matched, opt);
  }
  return {};
}

/// Theory parameters from an optional [params] table; missing keys keep defaults.
inline TheoryParams theory_params_from_json(const Json& doc, TheoryParams p = {}) {
  detail::FieldReader r(doc, "params");
  r.get("p_maj", p.p_maj);
  r.get("sigma_core_sq", p.sigma_core_sq);
  r.get("sigma_spu_sq", p.sigma_spu_sq);
  r.get("sigma_noise_sq", p.sigma_noise_sq);
  r.get("n_maj", p.n_maj);
  r.get("n_min", p.n_min);
  r.get("N", p.N);
  r.finish();
  return p;
}

inline Json to_json(const TheoryParams& p) {
  return {{"p_maj", p.p_maj},       {"sigma_core_sq", p.sigma_core_sq},
          {"sigma_spu_sq", p.sigma_spu_sq}, {"sigma_noise_sq", p.sigma_noise_sq},
          {"n_maj", p.n_maj},       {"n_min", p.n_min},
          {"N", p.N}};
}

inline Json to_json(const GroupMetrics& m) {
  return {{"per_group_error", m.per_group_error},
          {"average_error", m.average_error},
          {"worst_group_error", m.worst_group_error},
          {"worst_group_id", m.worst_group_id},
          {"counts", m.counts}};
}

/// One results row keyed like the results CSV columns.
inline Json to_json(const SweepRow& r, bool with_wall_time = false) {
  Json j = {{"setting", r.setting},
            {"objective", r.objective},
            {"lambda", r.lambda},
            {"model_size", r.model_size},
            {"p_maj", r.p_maj},
            {"ratio_spu_core", r.ratio_spu_core},
            {"seed", r.seed},
            {"train", to_json(r.train)},
            {"test", to_json(r.test)},
            {"converged", r.converged},
            {"iterations", r.iterations},
            {"grad_norm", r.grad_norm},
            {"train_size", r.train_size}};
  if (with_wall_time) j["wall_time_s"] = r.wall_time;
  return j;
}

}  // namespace spurlab
