#pragma once

// Experiment harness: grids over model size, data knobs, objectives and
// regularization strength, evaluated on fresh group-balanced test sets.
//
// Work is organized in "blocks": one block is a (p_maj, r_s:c, trial) triple.
// Every cell of a block shares the training draw, the random projection and the
// test draw, so objectives and lambdas are compared on identical data. Blocks
// run in parallel; rows are assembled in a fixed order regardless of timing.

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "spurlab/csv.hpp"
#include "spurlab/data_gen.hpp"
#include "spurlab/dataset.hpp"
#include "spurlab/error.hpp"
#include "spurlab/features.hpp"
#include "spurlab/logistic.hpp"
#include "spurlab/metrics.hpp"
#include "spurlab/rng.hpp"

namespace spurlab {

enum class Setting { implicit, explicit_features, csv };

inline const char* to_string(Setting s) {
  switch (s) {
    case Setting::implicit: return "implicit";
    case Setting::explicit_features: return "explicit";
    case Setting::csv: return "csv";
  }
  return "?";
}

inline Setting parse_setting(std::string_view s) {
  if (s == "implicit") return Setting::implicit;
  if (s == "explicit") return Setting::explicit_features;
  if (s == "csv") return Setting::csv;
  throw ConfigError("unknown setting '" + std::string(s) + "' (expected implicit, explicit or csv)");
}

/// Data knobs crossed with the model-size grid. r_s:c = sigma_core^2 / sigma_spu^2
/// is varied through sigma_spu^2 at the configured sigma_core^2.
struct KnobGrid {
  std::vector<double> p_maj;
  std::vector<double> ratio_spu_core;
};

inline std::vector<Index> default_implicit_sizes() {
  return {1, 2, 5, 10, 20, 50, 90, 150, 300, 600, 1000, 2000, 5000, 10000};
}

/// 0 followed by `points` log-spaced integers from 1 to `max_size`, duplicates removed.
inline std::vector<Index> log_spaced_sizes(Index max_size, int points = 14) {
  if (max_size < 1 || points < 2) throw ConfigError("log grid needs max_size >= 1, points >= 2");
  std::vector<Index> out{0};
  const double top = std::log10(static_cast<double>(max_size));
  for (int k = 0; k < points; ++k) {
    const auto v = static_cast<Index>(std::llround(std::pow(10.0, top * k / (points - 1))));
    if (v > out.back()) out.push_back(v);
  }
  if (out.back() != max_size) out.push_back(max_size);
  return out;
}

inline std::vector<Index> default_explicit_sizes(Index n) { return log_spaced_sizes(20 * n); }

struct SweepSpec {
  std::string name = "sweep";
  Setting setting = Setting::implicit;
  ImplicitConfig implicit{};
  ExplicitConfig explicit_cfg{};
  /// Training and test CSV files for the csv setting.
  std::string train_path;
  std::string test_path;
  CsvSchema schema{};

  /// m (implicit, csv) or N (explicit). Empty selects the default grid.
  std::vector<Index> model_sizes;
  std::vector<Objective> objectives{Objective::reweight};
  std::vector<double> lambdas{1e-9};
  std::optional<KnobGrid> knob_grid;
  int trials = 1;
  Index test_size_per_group = 2500;
  /// Replace the spurious feature by zero-mean noise in training and test data.
  bool remove_spurious = false;
  std::uint64_t seed = 0;

  Solver solver = Solver::lbfgs;
  double grad_tol = 1e-8;
  int max_iters = 20000;
  /// Test rows generated and featurized at a time.
  Index test_chunk_rows = 1000;

  std::vector<Index> resolved_model_sizes() const {
    if (!model_sizes.empty()) {
      std::vector<Index> s = model_sizes;
      std::sort(s.begin(), s.end());
      s.erase(std::unique(s.begin(), s.end()), s.end());
      return s;
    }
    if (setting == Setting::explicit_features) return default_explicit_sizes(explicit_cfg.n());
    return default_implicit_sizes();
  }

  std::vector<double> resolved_p_maj() const {
    if (knob_grid && !knob_grid->p_maj.empty()) return knob_grid->p_maj;
    return {setting == Setting::explicit_features ? explicit_cfg.p_maj() : implicit.p_maj};
  }
  std::vector<double> resolved_ratios() const {
    if (knob_grid && !knob_grid->ratio_spu_core.empty()) return knob_grid->ratio_spu_core;
    if (setting == Setting::explicit_features)
      return {explicit_cfg.sigma_core_sq / explicit_cfg.sigma_spu_sq};
    return {implicit.ratio_spu_core()};
  }

  std::size_t block_count() const {
    if (setting == Setting::csv) return static_cast<std::size_t>(trials);
    return resolved_p_maj().size() * resolved_ratios().size() * static_cast<std::size_t>(trials);
  }
  std::size_t cell_count() const {
    return block_count() * resolved_model_sizes().size() * objectives.size() * lambdas.size();
  }

  void validate() const;
};

/// Configuration of one block's data.
struct BlockParams {
  double p_maj = 0.0;
  double ratio_spu_core = 0.0;
  int trial = 0;
  std::uint64_t seed = 0;
};

inline ImplicitConfig implicit_for(const SweepSpec& spec, const BlockParams& b) {
  ImplicitConfig c = spec.implicit;
  c.p_maj = b.p_maj;
  c.sigma_spu_sq = c.sigma_core_sq / b.ratio_spu_core;
  c.seed = b.seed;
  return c;
}

inline ExplicitConfig explicit_for(const SweepSpec& spec, const BlockParams& b, Index N) {
  ExplicitConfig c = explicit_from_fraction(spec.explicit_cfg.n(), b.p_maj, spec.explicit_cfg);
  c.sigma_spu_sq = c.sigma_core_sq / b.ratio_spu_core;
  c.N = N;
  c.seed = b.seed;
  return c;
}

inline void SweepSpec::validate() const {
  if (objectives.empty()) throw ConfigError("objectives: must be nonempty");
  if (lambdas.empty()) throw ConfigError("lambdas: must be nonempty");
  for (double l : lambdas)
    if (!(l >= 0.0) || !std::isfinite(l)) throw ConfigError("lambdas: values must be >= 0");
  if (trials < 1) throw ConfigError("trials: must be >= 1");
  if (test_size_per_group < 1) throw ConfigError("test_size_per_group: must be >= 1");
  if (test_chunk_rows < 1) throw ConfigError("test_chunk_rows: must be >= 1");
  if (!(grad_tol > 0.0)) throw ConfigError("grad_tol: must be > 0");
  if (max_iters < 1) throw ConfigError("max_iters: must be >= 1");
  const auto sizes = resolved_model_sizes();
  if (sizes.empty()) throw ConfigError("model_sizes: must be nonempty");
  const Index min_size = setting == Setting::explicit_features ? 0 : 1;
  if (sizes.front() < min_size)
    throw ConfigError("model_sizes: must be >= " + std::to_string(min_size));
  if (knob_grid) {
    if (setting == Setting::csv) throw ConfigError("knob_grid: not available for csv data");
    for (double r : knob_grid->ratio_spu_core)
      if (!(r > 0.0) || !std::isfinite(r)) throw ConfigError("knob_grid.ratio_spu_core: must be > 0");
  }
  switch (setting) {
    case Setting::implicit:
      for (double p : resolved_p_maj())
        for (double r : resolved_ratios()) group_sizes(implicit_for(*this, {p, r, 0, 0}));
      break;
    case Setting::explicit_features:
      for (double p : resolved_p_maj())
        for (double r : resolved_ratios()) spurlab::validate(explicit_for(*this, {p, r, 0, 0}, 0));
      break;
    case Setting::csv:
      if (train_path.empty()) throw ConfigError("train_path: required for the csv setting");
      if (test_path.empty()) throw ConfigError("test_path: required for the csv setting");
      if (remove_spurious) throw ConfigError("remove_spurious: not available for csv data");
      break;
  }
}

struct SweepRow {
  std::string setting;
  std::string objective;
  double lambda = 0.0;
  Index model_size = 0;
  double p_maj = 0.0;
  double ratio_spu_core = 0.0;
  std::uint64_t seed = 0;
  GroupMetrics train;
  GroupMetrics test;
  bool converged = false;
  int iterations = 0;
  double grad_norm = 0.0;
  /// Examples the objective was fit on (4 x smallest group for subsample).
  Index train_size = 0;
  /// Training wall time in seconds. Not written to the results CSV by default,
  /// since results must be identical across reruns.
  double wall_time = 0.0;
};

/// Called once per trained model, from the worker that trained it.
using ModelCallback = std::function<void(const SweepRow& row, const Eigen::VectorXd& weights)>;

struct SweepOptions {
  /// Worker threads; 0 means hardware concurrency.
  unsigned jobs = 1;
  ModelCallback on_model;
  /// Progress callback (blocks done, blocks total).
  std::function<void(std::size_t, std::size_t)> on_progress;
};

namespace detail {

inline std::vector<BlockParams> sweep_blocks(const SweepSpec& spec) {
  std::vector<BlockParams> out;
  const auto trial_seed = [&](int t) {
    return derive_seed(spec.seed, "trial", static_cast<std::uint64_t>(t));
  };
  if (spec.setting == Setting::csv) {
    for (int t = 0; t < spec.trials; ++t)
      out.push_back({std::numeric_limits<double>::quiet_NaN(),
                     std::numeric_limits<double>::quiet_NaN(), t, trial_seed(t)});
    return out;
  }
  for (double p : spec.resolved_p_maj())
    for (double r : spec.resolved_ratios())
      for (int t = 0; t < spec.trials; ++t) out.push_back({p, r, t, trial_seed(t)});
  return out;
}

/// One trained model awaiting test evaluation.
struct PendingModel {
  SweepRow row;
  Eigen::VectorXd weights;
  GroupErrorAccumulator test;
};

inline SweepRow row_template(const SweepSpec& spec, const BlockParams& b) {
  SweepRow r;
  r.setting = to_string(spec.setting);
  r.p_maj = b.p_maj;
  r.ratio_spu_core = b.ratio_spu_core;
  r.seed = b.seed;
  return r;
}

inline TrainConfig train_config(const SweepSpec& spec, Objective obj, double lambda,
                                std::uint64_t seed) {
  TrainConfig cfg;
  cfg.objective = obj;
  cfg.lambda = lambda;
  cfg.grad_tol = spec.grad_tol;
  cfg.max_iters = spec.max_iters;
  cfg.solver = spec.solver;
  cfg.seed = seed;
  return cfg;
}

/// Fits every (objective, lambda) on features `phi` of the training set. Uses
/// the Gram matrix `k` (phi phi^T) when given, otherwise the primal problem.
inline void fit_all(const SweepSpec& spec, const BlockParams& b, Index model_size,
                    const GroupedDataset& train, const Eigen::Ref<const Eigen::MatrixXd>& phi,
                    const Eigen::MatrixXd* k, std::vector<PendingModel>& out) {
  std::optional<GroupedDataset> primal;
  if (!k) primal = train.with_features(phi);
  for (Objective obj : spec.objectives) {
    for (double lambda : spec.lambdas) {
      SweepRow row = row_template(spec, b);
      row.objective = to_string(obj);
      row.lambda = lambda;
      row.model_size = model_size;
      const TrainConfig cfg = train_config(spec, obj, lambda, b.seed);
      const auto t0 = std::chrono::steady_clock::now();
      Eigen::VectorXd w;
      Eigen::VectorXd train_scores;
      if (k) {
        const auto r = train_logistic_kernel(*k, train.labels(), train.group_ids(), cfg);
        w = phi.transpose() * r.beta;
        train_scores = *k * r.beta;
        row.converged = r.converged;
        row.iterations = r.iterations;
        row.grad_norm = r.grad_norm;
        row.train_size = r.train_size;
      } else {
        TrainConfig pc = cfg;
        pc.backend = Backend::primal;
        const auto r = train_logistic(*primal, pc);
        w = r.model.weights();
        train_scores = phi * w;
        row.converged = r.converged;
        row.iterations = r.iterations;
        row.grad_norm = r.grad_norm;
        row.train_size = r.train_size;
      }
      row.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      GroupErrorAccumulator acc;
      acc.add(train_scores, train.labels(), train.group_ids());
      row.train = acc.finish();
      out.push_back({std::move(row), std::move(w), {}});
    }
  }
}

/// Test sets are group-balanced; the average test error reweights groups to
/// their training proportions, i.e. the error on the training distribution.
inline void finish_models(std::vector<PendingModel>& models, const GroupedDataset& train,
                          const ModelCallback& cb, std::vector<SweepRow>& rows) {
  std::array<double, kNumGroups> shares{};
  for (int g = 0; g < kNumGroups; ++g)
    shares[static_cast<std::size_t>(g)] =
        static_cast<double>(train.group_counts()[static_cast<std::size_t>(g)]);
  for (auto& pm : models) {
    pm.row.test = pm.test.finish(shares);
    if (cb) cb(pm.row, pm.weights);
    rows.push_back(std::move(pm.row));
  }
}

/// Random-feature block: one projection with the largest m; every model size
/// uses its leading rows. Gram matrices for m > n grow incrementally.
inline std::vector<SweepRow> run_projected_block(const SweepSpec& spec, const BlockParams& b,
                                                 const GroupedDataset& train,
                                                 const std::function<GroupedDataset(Index, Index)>& test_chunk,
                                                 Index test_rows, const ModelCallback& cb) {
  const auto sizes = spec.resolved_model_sizes();
  const Index m_max = sizes.back();
  const auto proj = sample_projection(train.dim(), m_max, derive_seed(b.seed, "projection", 0));
  const Eigen::MatrixXd phi = apply_features(proj, train.features());
  const Index n = train.size();

  std::vector<PendingModel> models;
  Eigen::MatrixXd k_lower;
  Index k_cols = 0;
  for (Index m : sizes) {
    if (m <= n) {
      fit_all(spec, b, m, train, phi.leftCols(m), nullptr, models);
      continue;
    }
    if (k_cols == 0) k_lower = Eigen::MatrixXd::Zero(n, n);
    k_lower.selfadjointView<Eigen::Lower>().rankUpdate(phi.middleCols(k_cols, m - k_cols));
    k_cols = m;
    const Eigen::MatrixXd k = k_lower.selfadjointView<Eigen::Lower>();
    fit_all(spec, b, m, train, phi.leftCols(m), &k, models);
  }

  for (Index first = 0; first < test_rows; first += spec.test_chunk_rows) {
    const Index count = std::min(spec.test_chunk_rows, test_rows - first);
    const GroupedDataset chunk = test_chunk(first, count);
    const Eigen::MatrixXd tphi = apply_features(proj, chunk.features());
    for (auto& pm : models)
      pm.test.add(Eigen::VectorXd(tphi.leftCols(pm.row.model_size) * pm.weights), chunk.labels(),
                  chunk.group_ids());
  }
  std::vector<SweepRow> rows;
  finish_models(models, train, cb, rows);
  return rows;
}

/// Explicit block: the feature dimension N changes the data itself, so each N
/// gets its own draw.
inline std::vector<SweepRow> run_explicit_block(const SweepSpec& spec, const BlockParams& b,
                                                const ModelCallback& cb) {
  std::vector<SweepRow> rows;
  for (Index N : spec.resolved_model_sizes()) {
    const ExplicitConfig cfg = explicit_for(spec, b, N);
    GroupedDataset train = gen_explicit(cfg);
    if (spec.remove_spurious)
      train = remove_spurious(train, cfg.sigma_spu_sq, derive_seed(b.seed, "remove_spurious", 0));
    std::vector<PendingModel> models;
    if (train.dim() > train.size()) {
      const Eigen::MatrixXd k = gram_matrix(train.features());
      fit_all(spec, b, N, train, train.features(), &k, models);
    } else {
      fit_all(spec, b, N, train, train.features(), nullptr, models);
    }
    const Index test_rows = kNumGroups * spec.test_size_per_group;
    for (Index first = 0; first < test_rows; first += spec.test_chunk_rows) {
      const Index count = std::min(spec.test_chunk_rows, test_rows - first);
      const auto chunk =
          gen_test_chunk(cfg, spec.test_size_per_group, first, count, spec.remove_spurious);
      for (auto& pm : models)
        pm.test.add(Eigen::VectorXd(chunk.features() * pm.weights), chunk.labels(),
                    chunk.group_ids());
    }
    finish_models(models, train, cb, rows);
  }
  return rows;
}

inline std::vector<SweepRow> run_block(const SweepSpec& spec, const BlockParams& b,
                                       const ModelCallback& cb,
                                       const std::optional<std::pair<GroupedDataset, GroupedDataset>>& csv_data) {
  switch (spec.setting) {
    case Setting::implicit: {
      const ImplicitConfig cfg = implicit_for(spec, b);
      GroupedDataset train = gen_implicit(cfg);
      if (spec.remove_spurious)
        train = remove_spurious(train, cfg.sigma_spu_sq, derive_seed(b.seed, "remove_spurious", 0));
      auto chunk = [&](Index first, Index count) {
        return gen_test_chunk(cfg, spec.test_size_per_group, first, count, spec.remove_spurious);
      };
      return run_projected_block(spec, b, train, chunk, kNumGroups * spec.test_size_per_group, cb);
    }
    case Setting::explicit_features:
      return run_explicit_block(spec, b, cb);
    case Setting::csv: {
      const auto& [train, test] = *csv_data;
      auto chunk = [&](Index first, Index count) {
        std::vector<Index> idx(static_cast<std::size_t>(count));
        for (Index i = 0; i < count; ++i) idx[static_cast<std::size_t>(i)] = first + i;
        return test.subset(idx);
      };
      return run_projected_block(spec, b, train, chunk, test.size(), cb);
    }
  }
  return {};
}

/// Runs task(i) for i in [0, count) on up to `jobs` threads; rethrows the first error.
inline void parallel_for(std::size_t count, unsigned jobs,
                         const std::function<void(std::size_t)>& task) {
  if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
  jobs = static_cast<unsigned>(std::min<std::size_t>(jobs, std::max<std::size_t>(count, 1)));
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      {
        std::lock_guard lock(error_mutex);
        if (error) return;
      }
      try {
        task(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < jobs; ++t) pool.emplace_back(worker);
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace detail

/// Runs every cell of the spec. Rows are ordered by (p_maj, r_s:c, trial,
/// model size, objective, lambda) following the spec's list order.
inline std::vector<SweepRow> run_sweep(const SweepSpec& spec, const SweepOptions& opt = {}) {
  spec.validate();
  std::optional<std::pair<GroupedDataset, GroupedDataset>> csv_data;
  if (spec.setting == Setting::csv) {
    csv_data.emplace(load_features_csv(spec.train_path, spec.schema),
                     load_features_csv(spec.test_path, spec.schema));
    if (csv_data->first.dim() != csv_data->second.dim())
      throw DimensionError("train and test CSV files have different feature counts");
  }
  const auto blocks = detail::sweep_blocks(spec);
  std::vector<std::vector<SweepRow>> results(blocks.size());
  std::mutex callback_mutex;
  std::size_t done = 0;
  ModelCallback cb;
  if (opt.on_model)
    cb = [&](const SweepRow& r, const Eigen::VectorXd& w) {
      std::lock_guard lock(callback_mutex);
      opt.on_model(r, w);
    };
  detail::parallel_for(blocks.size(), opt.jobs, [&](std::size_t i) {
    results[i] = detail::run_block(spec, blocks[i], cb, csv_data);
    std::lock_guard lock(callback_mutex);
    ++done;
    if (opt.on_progress) opt.on_progress(done, blocks.size());
  });
  std::vector<SweepRow> rows;
  for (auto& r : results)
    for (auto& row : r) rows.push_back(std::move(row));
  return rows;
}

inline std::vector<SweepRow> run_model_size_sweep(const SweepSpec& spec,
                                                  const SweepOptions& opt = {}) {
  return run_sweep(spec, opt);
}

inline void require_knob_grid(const SweepSpec& spec) {
  if (!spec.knob_grid || spec.knob_grid->p_maj.empty() || spec.knob_grid->ratio_spu_core.empty())
    throw ConfigError("knob_grid: p_maj and ratio_spu_core lists are required");
}

inline void require_subsample(const SweepSpec& spec) {
  if (std::find(spec.objectives.begin(), spec.objectives.end(), Objective::subsample) ==
      spec.objectives.end())
    throw ConfigError("objectives: the comparison must include subsample");
}

inline void require_lambda_grid(const SweepSpec& spec) {
  if (spec.lambdas.size() < 2) throw ConfigError("lambdas: a regularization sweep needs >= 2 values");
}

inline std::vector<SweepRow> run_knob_sweep(const SweepSpec& spec, const SweepOptions& opt = {}) {
  require_knob_grid(spec);
  return run_sweep(spec, opt);
}

inline std::vector<SweepRow> run_objective_comparison(const SweepSpec& spec,
                                                      const SweepOptions& opt = {}) {
  require_subsample(spec);
  return run_sweep(spec, opt);
}

inline std::vector<SweepRow> run_reg_sweep(const SweepSpec& spec, const SweepOptions& opt = {}) {
  require_lambda_grid(spec);
  return run_sweep(spec, opt);
}

/// Matched implicit and explicit settings: the explicit setting is the implicit
/// one with variances divided by d (sigma_core^2 = 100 / d, sigma_spu^2 = 1 / d
/// at the defaults) and sigma_noise^2 = 1.
struct ExplicitVsImplicitSpec {
  Index n = 3000;
  double p_maj = 0.9;
  ImplicitConfig implicit{};
  double sigma_noise_sq = 1.0;
  std::vector<Index> model_sizes{0, 1, 2, 5, 10, 20, 50, 100, 200, 500, 1000, 2000, 5000, 10000};
  Objective objective = Objective::reweight;
  double lambda = 1e-9;
  int trials = 1;
  Index test_size_per_group = 2500;
  std::uint64_t seed = 0;
  double grad_tol = 1e-8;
  int max_iters = 20000;

  SweepSpec implicit_spec() const {
    SweepSpec s;
    s.name = "explicit_vs_implicit.implicit";
    s.setting = Setting::implicit;
    s.implicit = implicit;
    s.implicit.n = n;
    s.implicit.p_maj = p_maj;
    for (Index m : model_sizes)
      if (m > 0) s.model_sizes.push_back(m);
    common(s);
    return s;
  }
  SweepSpec explicit_spec() const {
    SweepSpec s;
    s.name = "explicit_vs_implicit.explicit";
    s.setting = Setting::explicit_features;
    const auto d = static_cast<double>(implicit.d);
    s.explicit_cfg = explicit_from_fraction(
        n, p_maj, {0, 0, 0, implicit.sigma_core_sq / d, implicit.sigma_spu_sq / d, sigma_noise_sq, 0});
    s.model_sizes = model_sizes;
    common(s);
    return s;
  }

 private:
  void common(SweepSpec& s) const {
    s.objectives = {objective};
    s.lambdas = {lambda};
    s.trials = trials;
    s.test_size_per_group = test_size_per_group;
    s.seed = seed;
    s.grad_tol = grad_tol;
    s.max_iters = max_iters;
  }
};

/// Rows of both settings, explicit first.
inline std::vector<SweepRow> run_explicit_vs_implicit(const ExplicitVsImplicitSpec& spec,
                                                      const SweepOptions& opt = {}) {
  if (spec.model_sizes.empty()) throw ConfigError("model_sizes: must be nonempty");
  auto rows = run_sweep(spec.explicit_spec(), opt);
  auto imp = run_sweep(spec.implicit_spec(), opt);
  rows.insert(rows.end(), std::make_move_iterator(imp.begin()), std::make_move_iterator(imp.end()));
  return rows;
}

// ---------------------------------------------------------------------------
// Results files

inline const std::vector<std::string>& results_header() {
  static const std::vector<std::string> h = {
      "setting",          "objective",        "lambda",           "model_size",
      "p_maj",            "ratio_spu_core",   "seed",             "train_err_g0",
      "train_err_g1",     "train_err_g2",     "train_err_g3",     "train_avg_err",
      "train_worst_err",  "test_err_g0",      "test_err_g1",      "test_err_g2",
      "test_err_g3",      "test_avg_err",     "test_worst_err",   "converged",
      "iterations",       "grad_norm",        "train_size",       "wall_time_s"};
  return h;
}

inline void write_results(std::ostream& os, const std::vector<SweepRow>& rows,
                          bool with_wall_time = false) {
  const auto& header = results_header();
  const std::size_t cols = with_wall_time ? header.size() : header.size() - 1;
  for (std::size_t c = 0; c < cols; ++c) os << (c ? "," : "") << header[c];
  os << '\n';
  auto num = [&](double v) {
    os << ',';
    detail::write_double(os, v);
  };
  for (const auto& r : rows) {
    os << r.setting << ',' << r.objective;
    num(r.lambda);
    os << ',' << r.model_size;
    num(r.p_maj);
    num(r.ratio_spu_core);
    os << ',' << r.seed;
    for (const GroupMetrics* m : {&r.train, &r.test}) {
      for (double e : m->per_group_error) num(e);
      num(m->average_error);
      num(m->worst_group_error);
    }
    os << ',' << (r.converged ? 1 : 0) << ',' << r.iterations;
    num(r.grad_norm);
    os << ',' << r.train_size;
    if (with_wall_time) num(r.wall_time);
    os << '\n';
  }
}

inline void write_results(const std::string& path, const std::vector<SweepRow>& rows,
                          bool with_wall_time = false) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_results(f, rows, with_wall_time);
  if (!f) throw std::runtime_error("error writing '" + path + "'");
}

inline std::vector<SweepRow> read_results(std::istream& in) {
  const auto& header = results_header();
  std::string line;
  if (!std::getline(in, line)) throw ParseError("missing header", 1);
  const auto head = detail::split_csv_line(detail::trim(line));
  const bool with_wall = head.size() == header.size();
  if (!with_wall && head.size() != header.size() - 1) throw ParseError("unexpected header", 1);
  for (std::size_t c = 0; c < head.size(); ++c)
    if (detail::trim(head[c]) != header[c])
      throw ParseError("unexpected column '" + std::string(head[c]) + "'", 1);

  std::vector<SweepRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv_line(detail::trim(line));
    if (cells.size() != head.size()) throw ParseError("wrong number of columns", line_no);
    std::size_t c = 0;
    auto dbl = [&]() {
      const auto v = detail::parse_double(cells[c]);
      if (!v) throw ParseError("bad number in column '" + header[c] + "'", line_no);
      ++c;
      return *v;
    };
    auto integer = [&]() -> long long {
      long long v = 0;
      const auto s = detail::trim(cells[c]);
      const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc{} || p != s.data() + s.size())
        throw ParseError("bad integer in column '" + header[c] + "'", line_no);
      ++c;
      return v;
    };
    SweepRow r;
    r.setting = std::string(detail::trim(cells[c++]));
    r.objective = std::string(detail::trim(cells[c++]));
    r.lambda = dbl();
    r.model_size = integer();
    r.p_maj = dbl();
    r.ratio_spu_core = dbl();
    {
      const auto s = detail::trim(cells[c]);
      const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), r.seed);
      if (ec != std::errc{} || p != s.data() + s.size())
        throw ParseError("bad integer in column 'seed'", line_no);
      ++c;
    }
    for (GroupMetrics* m : {&r.train, &r.test}) {
      std::array<double, kNumGroups> e{};
      for (auto& v : e) v = dbl();
      const double avg = dbl();
      const double worst = dbl();
      *m = make_group_metrics(e, {1, 1, 1, 1});
      m->average_error = avg;
      m->worst_group_error = worst;
    }
    r.converged = integer() != 0;
    r.iterations = static_cast<int>(integer());
    r.grad_norm = dbl();
    r.train_size = integer();
    if (with_wall) r.wall_time = dbl();
    rows.push_back(std::move(r));
  }
  return rows;
}

inline std::vector<SweepRow> read_results(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "'");
  return read_results(f);
}

// ---------------------------------------------------------------------------
// Aggregation over seeds

/// Identifies one curve: every cell coordinate except model size and seed.
struct SeriesKey {
  std::string setting;
  std::string objective;
  double lambda = 0.0;
  double p_maj = 0.0;
  double ratio_spu_core = 0.0;

  bool operator<(const SeriesKey& o) const {
    // NaN knobs (csv data) compare equal to each other.
    auto key = [](const SeriesKey& k) {
      return std::make_tuple(k.setting, k.objective, k.lambda,
                             std::isnan(k.p_maj) ? -1.0 : k.p_maj,
                             std::isnan(k.ratio_spu_core) ? -1.0 : k.ratio_spu_core);
    };
    return key(*this) < key(o);
  }
  std::string label() const {
    std::ostringstream s;
    s << objective << " lambda=" << lambda;
    if (!std::isnan(p_maj)) s << " p_maj=" << p_maj << " r=" << ratio_spu_core;
    return s.str();
  }
};

/// Seed-averaged metrics at one model size.
struct CurvePoint {
  Index model_size = 0;
  int seeds = 0;
  bool all_converged = true;
  std::array<double, kNumGroups> test_group_error{};
  double test_worst = 0.0;
  double test_avg = 0.0;
  double train_worst = 0.0;
  double train_avg = 0.0;
  double train_size = 0.0;
};

inline SeriesKey series_of(const SweepRow& r) {
  return {r.setting, r.objective, r.lambda, r.p_maj, r.ratio_spu_core};
}

/// Mean over seeds of each metric, per series, points sorted by model size.
inline std::map<SeriesKey, std::vector<CurvePoint>> aggregate(const std::vector<SweepRow>& rows) {
  std::map<SeriesKey, std::map<Index, CurvePoint>> acc;
  for (const auto& r : rows) {
    CurvePoint& p = acc[series_of(r)][r.model_size];
    p.model_size = r.model_size;
    ++p.seeds;
    p.all_converged = p.all_converged && r.converged;
    for (int g = 0; g < kNumGroups; ++g) p.test_group_error[g] += r.test.per_group_error[g];
    p.test_worst += r.test.worst_group_error;
    p.test_avg += r.test.average_error;
    p.train_worst += r.train.worst_group_error;
    p.train_avg += r.train.average_error;
    p.train_size += static_cast<double>(r.train_size);
  }
  std::map<SeriesKey, std::vector<CurvePoint>> out;
  for (auto& [key, points] : acc) {
    auto& curve = out[key];
    for (auto& [m, p] : points) {
      const double s = p.seeds;
      for (auto& e : p.test_group_error) e /= s;
      p.test_worst /= s;
      p.test_avg /= s;
      p.train_worst /= s;
      p.train_avg /= s;
      p.train_size /= s;
      curve.push_back(p);
    }
  }
  return out;
}

/// Model sizes are called underparameterized below `threshold` (the training
/// set size for random features, n for explicit noise dimensions).
inline const CurvePoint& best_point(const std::vector<CurvePoint>& curve, Index below,
                                    double CurvePoint::*metric = &CurvePoint::test_worst) {
  const CurvePoint* best = nullptr;
  for (const auto& p : curve)
    if (p.model_size < below && (!best || p.*metric < best->*metric)) best = &p;
  if (!best) throw ConfigError("curve has no point below the threshold");
  return *best;
}

// ---------------------------------------------------------------------------
// SVG plots

/// Line plot of seed-averaged test error against model size (log x axis):
/// worst-group solid, average dashed, one color per series.
inline std::string render_svg(const std::vector<SweepRow>& rows, const std::string& title) {
  const auto curves = aggregate(rows);
  const double width = 760, height = 460, left = 70, right = 250, top = 40, bottom = 60;
  const double pw = width - left - right;
  const double ph = height - top - bottom;
  Index max_size = 1;
  for (const auto& [k, c] : curves)
    for (const auto& p : c) max_size = std::max(max_size, p.model_size);
  const double xmin = std::log10(0.5);
  const double xmax = std::log10(static_cast<double>(max_size)) + 0.05;
  auto xpos = [&](Index m) {
    const double v = m > 0 ? std::log10(static_cast<double>(m)) : xmin;
    return left + (v - xmin) / (xmax - xmin) * pw;
  };
  auto ypos = [&](double e) { return top + (1.0 - e) * ph; };
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                  "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << left << "\" y=\"24\" font-size=\"15\">" << title << "</text>\n";
  s << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 5; ++k) {
    const double e = k * 0.2;
    s << "<line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << ypos(e) << "\" y2=\""
      << ypos(e) << "\" stroke=\"#ddd\"/>\n";
    s << "<text x=\"" << left - 8 << "\" y=\"" << ypos(e) + 4 << "\" text-anchor=\"end\">" << e
      << "</text>\n";
  }
  for (Index dec = 1; dec <= max_size; dec *= 10) {
    s << "<text x=\"" << xpos(dec) << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">"
      << dec << "</text>\n";
  }
  s << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 18
    << "\" text-anchor=\"middle\">model size (log scale)</text>\n";
  s << "<text transform=\"translate(18," << top + ph / 2
    << ") rotate(-90)\" text-anchor=\"middle\">test error</text>\n";
  int idx = 0;
  for (const auto& [key, curve] : curves) {
    const char* color = palette[idx % 8];
    for (int dashed = 0; dashed < 2; ++dashed) {
      s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\""
        << (dashed ? " stroke-dasharray=\"6,4\"" : "") << " points=\"";
      for (const auto& p : curve)
        s << xpos(p.model_size) << ',' << ypos(dashed ? p.test_avg : p.test_worst) << ' ';
      s << "\"/>\n";
    }
    const double ly = top + 14 + 18 * idx;
    s << "<line x1=\"" << left + pw + 12 << "\" x2=\"" << left + pw + 36 << "\" y1=\"" << ly
      << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    s << "<text x=\"" << left + pw + 42 << "\" y=\"" << ly + 4 << "\">" << key.label()
      << "</text>\n";
    ++idx;
  }
  s << "<text x=\"" << left + pw + 12 << "\" y=\"" << top + 14 + 18 * idx + 8
    << "\" fill=\"#555\">solid: worst-group, dashed: average</text>\n";
  s << "</svg>\n";
  return s.str();
}

}  // namespace spurlab
