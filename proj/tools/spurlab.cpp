// spurlab: data generation, training, evaluation, sweeps and theory checks.

#include <CLI11.hpp>

#include <Eigen/Core>

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "spurlab/csv.hpp"
#include "spurlab/data_gen.hpp"
#include "spurlab/features.hpp"
#include "spurlab/logistic.hpp"
#include "spurlab/metrics.hpp"
#include "spurlab/model_io.hpp"
#include "spurlab/rng.hpp"
#include "spurlab/spec_io.hpp"
#include "spurlab/sweeps.hpp"
#include "spurlab/theory_checks.hpp"
#include "spurlab/version.hpp"

namespace fs = std::filesystem;
using namespace spurlab;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;

constexpr const char* kOutDirEnv = "SPURLAB_OUT_DIR";

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::uint64_t seed = 0;
  std::string out_dir;
  std::string format = "csv";
  bool verbose = false;
  std::vector<std::string> argv;
};

std::string default_out_dir() {
  if (const char* env = std::getenv(kOutDirEnv); env && *env) return env;
  return "spurlab_out";
}

fs::path ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create output directory '" + dir + "'");
  return fs::path(dir);
}

fs::path manifest_path_for(const fs::path& primary) {
  fs::path p = primary;
  p.replace_extension(".manifest.json");
  return p;
}

Json build_info() {
  return {{"compiler", __VERSION__},
          {"cxx_standard", static_cast<long>(__cplusplus)},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                        "." + std::to_string(EIGEN_MINOR_VERSION)}};
}

void write_manifest(const fs::path& path, const Common& c, const std::string& command, Json body) {
  Json m = {{"tool", "spurlab"},
            {"version", kVersion},
            {"command", command},
            {"argv", c.argv},
            {"seed", c.seed},
            {"build", build_info()}};
  for (auto& [k, v] : body.items()) m[k] = v;
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write '" + path.string() + "'");
  f << m.dump(2) << '\n';
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write '" + path.string() + "'");
  f << text;
}

// ---------------------------------------------------------------------------
// Data options shared by gen, train and eval

struct DataOptions {
  std::string config_path;
  std::string setting = "implicit";
  ImplicitConfig implicit;
  ExplicitConfig explicit_cfg;
  std::string csv_path;
  Index test_per_group = 0;
  bool remove_spurious = false;

  CLI::Option* setting_opt = nullptr;
  CLI::Option* test_per_group_opt = nullptr;
  CLI::Option* remove_spurious_opt = nullptr;
  std::vector<std::pair<CLI::Option*, std::function<void(DataOptions&)>>> overrides;
};

template <typename T>
void add_override(CLI::App* app, DataOptions& d, const std::string& flag, const std::string& help,
                  std::function<T&(DataOptions&)> field) {
  auto value = std::make_shared<T>();
  CLI::Option* opt = app->add_option(flag, *value, help);
  d.overrides.emplace_back(opt, [value, field](DataOptions& o) { field(o) = *value; });
}

void add_data_options(CLI::App* app, DataOptions& d, bool allow_csv) {
  app->add_option("--config", d.config_path,
                  "TOML/JSON file with setting, implicit, explicit" +
                      std::string(allow_csv ? ", csv" : "") + " tables");
  d.setting_opt = app->add_option("--setting", d.setting,
                                  allow_csv ? "implicit | explicit | csv" : "implicit | explicit");
  add_override<Index>(app, d, "--n", "implicit: number of examples",
                      [](DataOptions& o) -> Index& { return o.implicit.n; });
  add_override<Index>(app, d, "--d", "implicit: dimension of each block",
                      [](DataOptions& o) -> Index& { return o.implicit.d; });
  add_override<double>(app, d, "--p-maj", "implicit: majority fraction",
                       [](DataOptions& o) -> double& { return o.implicit.p_maj; });
  add_override<Index>(app, d, "--n-maj", "explicit: majority examples",
                      [](DataOptions& o) -> Index& { return o.explicit_cfg.n_maj; });
  add_override<Index>(app, d, "--n-min", "explicit: minority examples",
                      [](DataOptions& o) -> Index& { return o.explicit_cfg.n_min; });
  add_override<Index>(app, d, "--noise-dim", "explicit: noise dimension N",
                      [](DataOptions& o) -> Index& { return o.explicit_cfg.N; });
  add_override<double>(app, d, "--sigma-noise-sq", "explicit: noise variance",
                       [](DataOptions& o) -> double& { return o.explicit_cfg.sigma_noise_sq; });
  // The two shared variances apply to whichever generated setting is selected.
  add_override<double>(app, d, "--sigma-core-sq", "core variance", [](DataOptions& o) -> double& {
    return o.setting == "explicit" ? o.explicit_cfg.sigma_core_sq : o.implicit.sigma_core_sq;
  });
  add_override<double>(app, d, "--sigma-spu-sq", "spurious variance", [](DataOptions& o) -> double& {
    return o.setting == "explicit" ? o.explicit_cfg.sigma_spu_sq : o.implicit.sigma_spu_sq;
  });
  if (allow_csv) app->add_option("--data", d.csv_path, "CSV file (selects the csv setting)");
  d.test_per_group_opt = app->add_option("--test-per-group", d.test_per_group,
                  "draw a group-balanced test set with this many rows per group");
  d.remove_spurious_opt = app->add_flag("--remove-spurious", d.remove_spurious,
                "resample the spurious block as noise (test sets: zero spurious mean)");
}

Json data_to_json(const DataOptions& d) {
  Json j = {{"setting", d.setting}, {"remove_spurious", d.remove_spurious}};
  if (d.test_per_group > 0) j["test_size_per_group"] = d.test_per_group;
  if (d.setting == "implicit")
    j["implicit"] = {{"n", d.implicit.n},
                     {"d", d.implicit.d},
                     {"p_maj", d.implicit.p_maj},
                     {"sigma_core_sq", d.implicit.sigma_core_sq},
                     {"sigma_spu_sq", d.implicit.sigma_spu_sq}};
  else if (d.setting == "explicit")
    j["explicit"] = {{"n_maj", d.explicit_cfg.n_maj},
                     {"n_min", d.explicit_cfg.n_min},
                     {"N", d.explicit_cfg.N},
                     {"sigma_core_sq", d.explicit_cfg.sigma_core_sq},
                     {"sigma_spu_sq", d.explicit_cfg.sigma_spu_sq},
                     {"sigma_noise_sq", d.explicit_cfg.sigma_noise_sq}};
  else
    j["csv"] = {{"path", d.csv_path}};
  return j;
}

/// Applies the config file, then command-line flags, then validates.
void resolve_data(DataOptions& d, bool allow_csv) {
  if (!d.config_path.empty()) {
    const Json doc = load_document(d.config_path);
    detail::FieldReader r(doc, "");
    std::string setting = d.setting;
    r.get("setting", setting);
    if (!d.setting_opt->count()) d.setting = setting;
    bool remove = d.remove_spurious;
    Index per_group = d.test_per_group;
    r.get("remove_spurious", remove);
    r.get("test_size_per_group", per_group);
    if (!d.remove_spurious_opt->count()) d.remove_spurious = remove;
    if (!d.test_per_group_opt->count()) d.test_per_group = per_group;
    if (r.has("implicit")) {
      auto t = r.child("implicit");
      t.get("n", d.implicit.n);
      t.get("d", d.implicit.d);
      t.get("p_maj", d.implicit.p_maj);
      t.get("sigma_core_sq", d.implicit.sigma_core_sq);
      t.get("sigma_spu_sq", d.implicit.sigma_spu_sq);
      t.finish();
    }
    if (r.has("explicit")) {
      auto t = r.child("explicit");
      t.get("n_maj", d.explicit_cfg.n_maj);
      t.get("n_min", d.explicit_cfg.n_min);
      t.get("N", d.explicit_cfg.N);
      t.get("sigma_core_sq", d.explicit_cfg.sigma_core_sq);
      t.get("sigma_spu_sq", d.explicit_cfg.sigma_spu_sq);
      t.get("sigma_noise_sq", d.explicit_cfg.sigma_noise_sq);
      t.finish();
    }
    if (allow_csv && r.has("csv")) {
      auto t = r.child("csv");
      t.get("path", d.csv_path);
      t.finish();
    }
    r.finish();
  }
  if (!d.csv_path.empty() && !d.setting_opt->count()) d.setting = "csv";
  for (auto& [opt, apply] : d.overrides)
    if (opt->count()) apply(d);

  if (d.setting != "implicit" && d.setting != "explicit" && !(allow_csv && d.setting == "csv"))
    throw ConfigError("setting: unknown setting '" + d.setting + "'");
  if (d.setting == "csv") {
    if (d.csv_path.empty()) throw ConfigError("csv: a --data path is required");
    if (d.remove_spurious || d.test_per_group > 0)
      throw ConfigError("csv: --remove-spurious and --test-per-group need generated data");
  }
  if (d.test_per_group < 0) throw ConfigError("test_size_per_group: must be positive");
  if (d.setting == "implicit") {
    validate(d.implicit);
    if (d.test_per_group == 0) group_sizes(d.implicit);
  } else if (d.setting == "explicit") {
    validate(d.explicit_cfg);
  }
}

GroupedDataset make_data(const DataOptions& d, std::uint64_t seed) {
  if (d.setting == "csv") return load_features_csv(d.csv_path);
  const std::uint64_t rs_seed = derive_seed(seed, "remove_spurious", 0);
  if (d.setting == "implicit") {
    ImplicitConfig cfg = d.implicit;
    cfg.seed = seed;
    if (d.test_per_group > 0) return gen_test(cfg, d.test_per_group, d.remove_spurious);
    auto ds = gen_implicit(cfg);
    return d.remove_spurious ? remove_spurious(ds, cfg.sigma_spu_sq, rs_seed) : ds;
  }
  ExplicitConfig cfg = d.explicit_cfg;
  cfg.seed = seed;
  if (d.test_per_group > 0) return gen_test(cfg, d.test_per_group, d.remove_spurious);
  auto ds = gen_explicit(cfg);
  return d.remove_spurious ? remove_spurious(ds, cfg.sigma_spu_sq, rs_seed) : ds;
}

// ---------------------------------------------------------------------------
// Metrics tables

void print_metrics(std::ostream& os, const GroupMetrics& m, const std::string& format) {
  if (format == "json") {
    os << to_json(m).dump(2) << '\n';
    return;
  }
  os << "err_g0,err_g1,err_g2,err_g3,count_g0,count_g1,count_g2,count_g3,average_error,"
        "worst_group_error,worst_group_id\n";
  for (double e : m.per_group_error) {
    detail::write_double(os, e);
    os << ',';
  }
  for (Index c : m.counts) os << c << ',';
  detail::write_double(os, m.average_error);
  os << ',';
  detail::write_double(os, m.worst_group_error);
  os << ',' << m.worst_group_id << '\n';
}

std::string metrics_text(const GroupMetrics& m, const std::string& format) {
  std::ostringstream os;
  print_metrics(os, m, format);
  return os.str();
}

// ---------------------------------------------------------------------------
// gen

struct GenArgs {
  DataOptions data;
  std::string output;
};

int cmd_gen(const Common& c, GenArgs& a) {
  resolve_data(a.data, false);
  const auto ds = make_data(a.data, c.seed);
  const fs::path out = a.output.empty() ? ensure_dir(c.out_dir) / "data.csv" : fs::path(a.output);
  if (out.has_parent_path()) ensure_dir(out.parent_path().string());
  save_features_csv(out.string(), ds);
  write_manifest(manifest_path_for(out), c, "gen",
                 {{"data", data_to_json(a.data)}, {"rows", ds.size()}, {"outputs", {out.string()}}});
  if (c.verbose) std::cerr << "wrote " << ds.size() << " rows to " << out.string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train / eval

struct TrainArgs {
  DataOptions data;
  std::string output;
  std::string objective = "reweight";
  double lambda = 1e-9;
  double grad_tol = 1e-8;
  int max_iters = 20000;
  std::string solver = "lbfgs";
  Index model_size = 0;
};

int cmd_train(const Common& c, TrainArgs& a) {
  resolve_data(a.data, true);
  if (a.model_size < 0) throw ConfigError("model_size: must be >= 0");
  TrainConfig cfg;
  cfg.objective = parse_objective(a.objective);
  cfg.lambda = a.lambda;
  cfg.grad_tol = a.grad_tol;
  cfg.max_iters = a.max_iters;
  cfg.seed = c.seed;
  if (a.solver == "lbfgs") cfg.solver = Solver::lbfgs;
  else if (a.solver == "gd") cfg.solver = Solver::gradient_descent;
  else throw ConfigError("solver: expected lbfgs or gd");
  cfg.validate();

  const auto raw = make_data(a.data, c.seed);
  SavedModel saved;
  if (a.model_size > 0)
    saved.features = FeatureMap{raw.dim(), a.model_size, derive_seed(c.seed, "projection", 0)};
  const auto ds = saved.features ? model_inputs(SavedModel{LinearModel(Eigen::VectorXd::Zero(a.model_size)),
                                                           saved.features, {}},
                                                raw)
                                  : raw;
  const auto fit = train_logistic(ds, cfg);
  saved.model = fit.model;
  const auto metrics = group_errors(fit.model, ds);
  saved.config = {{"seed", c.seed},
                  {"data", data_to_json(a.data)},
                  {"objective", a.objective},
                  {"lambda", a.lambda},
                  {"grad_tol", a.grad_tol},
                  {"max_iters", a.max_iters},
                  {"solver", a.solver},
                  {"model_size", a.model_size},
                  {"converged", fit.converged},
                  {"iterations", fit.iterations},
                  {"grad_norm", fit.grad_norm},
                  {"train_size", fit.train_size},
                  {"train_metrics", to_json(metrics)}};

  const fs::path out = a.output.empty() ? ensure_dir(c.out_dir) / "model.json" : fs::path(a.output);
  if (out.has_parent_path()) ensure_dir(out.parent_path().string());
  save_model(out.string(), saved);
  write_manifest(manifest_path_for(out), c, "train",
                 {{"config", saved.config}, {"outputs", {out.string()}}});
  if (!fit.converged)
    std::cerr << "warning: solver stopped after " << fit.iterations
              << " iterations with gradient norm " << fit.grad_norm << '\n';
  print_metrics(std::cout, metrics, c.format);
  return kExitOk;
}

struct EvalArgs {
  DataOptions data;
  std::string model_path;
  std::string output;
};

int cmd_eval(const Common& c, EvalArgs& a) {
  resolve_data(a.data, true);
  const auto saved = load_model(a.model_path);
  const auto ds = model_inputs(saved, make_data(a.data, c.seed));
  const auto metrics = group_errors(saved.model, ds);
  const std::string ext = c.format == "json" ? "json" : "csv";
  const fs::path out =
      a.output.empty() ? ensure_dir(c.out_dir) / ("metrics." + ext) : fs::path(a.output);
  if (out.has_parent_path()) ensure_dir(out.parent_path().string());
  const std::string text = metrics_text(metrics, c.format);
  write_text(out, text);
  write_manifest(manifest_path_for(out), c, "eval",
                 {{"model", a.model_path}, {"data", data_to_json(a.data)}, {"outputs", {out.string()}}});
  std::cout << text;
  return kExitOk;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepArgs {
  std::string spec_path;
  bool dry_run = false;
  unsigned jobs = 0;
  CLI::Option* seed_opt = nullptr;
  int trials = 0;
  CLI::Option* trials_opt = nullptr;
};

int cmd_sweep(const Common& c, SweepArgs& a) {
  Json doc = load_document(a.spec_path);
  // A manifest written by a previous run carries its resolved spec.
  if (doc.is_object() && doc.contains("tool") && doc.contains("spec")) doc = doc.at("spec");
  if (a.seed_opt->count()) doc["seed"] = c.seed;
  if (a.trials_opt->count()) doc["trials"] = a.trials;
  const SweepDocument d = sweep_from_json(doc);

  std::size_t cells = 0;
  std::size_t blocks = 0;
  int trials = d.spec.trials;
  std::uint64_t seed = d.spec.seed;
  if (d.kind == SweepKind::explicit_vs_implicit) {
    const auto e = d.matched.explicit_spec();
    const auto i = d.matched.implicit_spec();
    cells = e.cell_count() + i.cell_count();
    blocks = e.block_count() + i.block_count();
    trials = d.matched.trials;
    seed = d.matched.seed;
  } else {
    cells = d.spec.cell_count();
    blocks = d.spec.block_count();
  }
  if (a.dry_run) {
    if (c.format == "json")
      std::cout << Json{{"kind", to_string(d.kind)}, {"cells", cells}, {"blocks", blocks}}.dump(2)
                << '\n';
    else
      std::cout << "kind,cells,blocks\n" << to_string(d.kind) << ',' << cells << ',' << blocks << '\n';
    return kExitOk;
  }

  const fs::path dir = ensure_dir(c.out_dir);
  SweepOptions opt;
  opt.jobs = a.jobs == 0 ? std::max(1u, std::thread::hardware_concurrency()) : a.jobs;
  if (c.verbose)
    opt.on_progress = [](std::size_t done, std::size_t total) {
      std::cerr << "block " << done << "/" << total << '\n';
    };
  const auto start = std::chrono::steady_clock::now();
  const auto rows = run_document(d, opt);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  std::vector<std::string> outputs;
  if (c.format == "json") {
    Json arr = Json::array();
    for (const auto& r : rows) arr.push_back(to_json(r));
    write_text(dir / "results.json", arr.dump(2) + "\n");
    outputs.push_back((dir / "results.json").string());
  } else {
    write_results((dir / "results.csv").string(), rows);
    outputs.push_back((dir / "results.csv").string());
  }
  write_results((dir / "timing.csv").string(), rows, true);
  outputs.push_back((dir / "timing.csv").string());
  const std::string title = d.spec.name.empty() ? std::string(to_string(d.kind)) : d.spec.name;
  write_text(dir / "plot.svg", render_svg(rows, title));
  outputs.push_back((dir / "plot.svg").string());

  std::vector<std::uint64_t> trial_seeds;
  for (int t = 0; t < trials; ++t)
    trial_seeds.push_back(derive_seed(seed, "trial", static_cast<std::uint64_t>(t)));
  Common mc = c;
  mc.seed = seed;
  write_manifest(dir / "manifest.json", mc, "sweep",
                 {{"spec_path", a.spec_path},
                  {"spec", to_json(d)},
                  {"trial_seeds", trial_seeds},
                  {"cells", cells},
                  {"rows", rows.size()},
                  {"jobs", opt.jobs},
                  {"wall_time_s", seconds},
                  {"outputs", outputs}});
  if (c.verbose)
    std::cerr << "wrote " << rows.size() << " rows to " << dir.string() << " in " << seconds << " s\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// theory

struct TheoryArgs {
  std::vector<std::string> checks;
  bool list = false;
  std::string params_path;
  std::string output;
};

int cmd_theory(const Common& c, TheoryArgs& a) {
  if (a.list) {
    if (c.format == "json") {
      Json arr = Json::array();
      for (const auto& info : theory_checks())
        arr.push_back({{"name", info.name}, {"description", info.description}});
      std::cout << arr.dump(2) << '\n';
    } else {
      std::cout << "name,description\n";
      for (const auto& info : theory_checks()) std::cout << info.name << ",\"" << info.description << "\"\n";
    }
    return kExitOk;
  }
  std::vector<const CheckInfo*> selected;
  if (a.checks.empty()) {
    for (const auto& info : theory_checks()) selected.push_back(&info);
  } else {
    for (const auto& name : a.checks) {
      const auto* info = find_check(name);
      if (!info) throw UsageError("unknown check '" + name + "' (see --list)");
      selected.push_back(info);
    }
  }
  Json overrides = Json::object();
  if (!a.params_path.empty()) {
    overrides = load_document(a.params_path);
    if (!overrides.is_object()) throw ConfigError(a.params_path + ": expected a table");
    for (const auto& [k, v] : overrides.items()) {
      if (!find_check(k)) throw ConfigError(k + ": unknown check");
      if (!v.is_object()) throw ConfigError(k + ": expected a table");
    }
  }

  Json report = Json::object();
  bool all = true;
  std::vector<std::pair<std::string, bool>> summary;
  for (const auto* info : selected) {
    CheckContext ctx;
    ctx.seed = c.seed;
    if (overrides.contains(info->name)) {
      Json settings = overrides.at(info->name);
      if (settings.contains("params")) {
        ctx.params = settings.at("params");
        settings.erase("params");
      }
      ctx.settings = settings;
    }
    if (c.verbose) std::cerr << "running " << info->name << '\n';
    const auto start = std::chrono::steady_clock::now();
    const auto r = info->run(ctx);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    report[info->name] = {{"passed", r.passed}, {"wall_time_s", seconds}, {"report", r.report}};
    summary.emplace_back(info->name, r.passed);
    all = all && r.passed;
  }

  const fs::path out =
      a.output.empty() ? ensure_dir(c.out_dir) / "theory_report.json" : fs::path(a.output);
  if (out.has_parent_path()) ensure_dir(out.parent_path().string());
  write_text(out, report.dump(2) + "\n");
  write_manifest(manifest_path_for(out), c, "theory",
                 {{"checks", a.checks}, {"params", overrides}, {"passed", all}, {"outputs", {out.string()}}});

  if (c.format == "json") {
    Json arr = Json::array();
    for (const auto& [name, ok] : summary) arr.push_back({{"check", name}, {"passed", ok}});
    std::cout << arr.dump(2) << '\n';
  } else {
    std::cout << "check,result\n";
    for (const auto& [name, ok] : summary) std::cout << name << ',' << (ok ? "PASS" : "FAIL") << '\n';
  }
  return all ? kExitOk : kExitCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  Common common;
  common.argv.assign(argv, argv + argc);
  common.out_dir = default_out_dir();

  CLI::App app{"Spurious features and memorization in overparameterized linear models"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.fallthrough();
  auto* seed_opt = app.add_option("--seed", common.seed, "master seed (unsigned 64-bit)");
  app.add_option("--out", common.out_dir,
                 std::string("output directory (default: $") + kOutDirEnv + " or ./spurlab_out)");
  app.add_option("--format", common.format, "table format")->check(CLI::IsMember({"csv", "json"}));
  app.add_flag("-v,--verbose", common.verbose, "progress messages on stderr");

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "generate a dataset and write it as CSV");
  add_data_options(gen_cmd, gen.data, false);
  gen_cmd->add_option("-o,--output", gen.output, "CSV path (default: <out>/data.csv)");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "fit logistic regression and save the model as JSON");
  add_data_options(train_cmd, train.data, true);
  train_cmd->add_option("-o,--output", train.output, "model path (default: <out>/model.json)");
  train_cmd->add_option("--objective", train.objective, "erm | reweight | subsample")
      ->check(CLI::IsMember({"erm", "reweight", "subsample"}));
  train_cmd->add_option("--lambda", train.lambda, "L2 regularization strength");
  train_cmd->add_option("--grad-tol", train.grad_tol, "gradient norm tolerance");
  train_cmd->add_option("--max-iters", train.max_iters, "iteration cap");
  train_cmd->add_option("--solver", train.solver, "lbfgs | gd")->check(CLI::IsMember({"lbfgs", "gd"}));
  train_cmd->add_option("--model-size", train.model_size,
                        "number of ReLU random features (0 trains on the raw features)");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a saved model and print group metrics");
  add_data_options(eval_cmd, eval.data, true);
  eval_cmd->add_option("--model", eval.model_path, "model JSON")->required();
  eval_cmd->add_option("-o,--output", eval.output, "metrics path (default: <out>/metrics.<format>)");

  SweepArgs sweep;
  auto* sweep_cmd = app.add_subcommand("sweep", "run a sweep described by a TOML or JSON spec");
  sweep_cmd->add_option("spec", sweep.spec_path, "spec file (or a previous run's manifest.json)")
      ->required();
  sweep_cmd->add_flag("--dry-run", sweep.dry_run, "print the cell count and exit");
  sweep_cmd->add_option("--jobs", sweep.jobs, "worker threads (0: all cores)");
  sweep.trials_opt = sweep_cmd->add_option("--trials", sweep.trials, "override the spec's trial count");
  sweep.seed_opt = seed_opt;

  TheoryArgs theory;
  auto* theory_cmd = app.add_subcommand("theory", "run numerical checks of the theory");
  theory_cmd->add_option("--check", theory.checks, "check to run (repeatable; default: all)");
  theory_cmd->add_flag("--list", theory.list, "list the available checks");
  theory_cmd->add_option("--params", theory.params_path,
                         "TOML/JSON file with one table of overrides per check");
  theory_cmd->add_option("-o,--output", theory.output,
                         "report path (default: <out>/theory_report.json)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen_cmd) return cmd_gen(common, gen);
    if (*train_cmd) return cmd_train(common, train);
    if (*eval_cmd) return cmd_eval(common, eval);
    if (*sweep_cmd) return cmd_sweep(common, sweep);
    if (*theory_cmd) return cmd_theory(common, theory);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
