#pragma once

// L2-regularized logistic regression under the ERM, reweighted and subsampled
// objectives:
//
//   f(w) = (1/n) sum_i c_i log(1 + exp(-y_i w.x_i)) + (lambda/2) ||w||^2
//
// with c_i = 1 (erm) or c_i = n / n_{g(i)} (reweight). The subsample objective
// trains ERM on a group-balanced subsample.
//
// Two backends share one optimizer. The primal backend works on w directly;
// the kernel backend works on w = X^T beta through K = X X^T and is used when
// D > n (every minimizer lies in the row span of X).

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "spurlab/data_gen.hpp"
#include "spurlab/dataset.hpp"
#include "spurlab/error.hpp"
#include "spurlab/lbfgs.hpp"
#include "spurlab/linear_model.hpp"

namespace spurlab {

enum class Objective { erm, reweight, subsample };
enum class Backend { automatic, primal, kernel };

inline std::string_view to_string(Objective o) {
  switch (o) {
    case Objective::erm: return "erm";
    case Objective::reweight: return "reweight";
    case Objective::subsample: return "subsample";
  }
  return "?";
}

inline Objective parse_objective(std::string_view s) {
  if (s == "erm") return Objective::erm;
  if (s == "reweight") return Objective::reweight;
  if (s == "subsample") return Objective::subsample;
  throw ConfigError("unknown objective '" + std::string(s) + "'");
}

struct TrainConfig {
  Objective objective = Objective::reweight;
  double lambda = 1e-9;
  double grad_tol = 1e-8;
  int max_iters = 20000;
  std::uint64_t seed = 0;
  Solver solver = Solver::lbfgs;
  Backend backend = Backend::automatic;

  void validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be >= 0");
    if (!(grad_tol > 0.0)) throw ConfigError("grad_tol must be > 0");
    if (max_iters < 1) throw ConfigError("max_iters must be >= 1");
  }
};

struct TrainResult {
  LinearModel model;
  bool converged = false;
  double grad_norm = 0.0;
  int iterations = 0;
  double objective_value = 0.0;
  /// Number of examples the objective was fit on (4 * smallest group for subsample).
  Index train_size = 0;
};

/// Result of a kernel-backend fit: w = X^T beta, with beta indexed by the rows of
/// the full Gram matrix (zeros for rows excluded by subsampling).
struct KernelTrainResult {
  Eigen::VectorXd beta;
  bool converged = false;
  double grad_norm = 0.0;
  int iterations = 0;
  double objective_value = 0.0;
  Index train_size = 0;
};

/// Per-example loss multipliers c_i for erm/reweight.
inline Eigen::VectorXd example_weights(std::span<const int> group_ids, Objective objective) {
  const auto n = static_cast<Index>(group_ids.size());
  Eigen::VectorXd c = Eigen::VectorXd::Ones(n);
  if (objective != Objective::reweight) return c;
  std::array<Index, kNumGroups> counts{};
  for (int g : group_ids) ++counts[static_cast<std::size_t>(g)];
  for (Index i = 0; i < n; ++i) {
    const Index ng = counts[static_cast<std::size_t>(group_ids[static_cast<std::size_t>(i)])];
    c[i] = static_cast<double>(n) / static_cast<double>(ng);
  }
  return c;
}

inline void require_all_groups(const GroupCounts& counts, Objective objective) {
  if (objective == Objective::erm) return;
  for (Index c : counts)
    if (c == 0)
      throw ConfigError(std::string(to_string(objective)) + " objective requires every group");
}

/// Objective value and gradient in weight space; used for diagnostics and
/// finite-difference checks.
class LogisticObjective {
 public:
  LogisticObjective(const GroupedDataset& ds, Objective objective, double lambda)
      : x_(ds.features()),
        loss_(ds.label_vector(), example_weights(ds.group_ids(), objective) /
                                     static_cast<double>(ds.size())),
        lambda_(lambda) {
    if (objective == Objective::subsample)
      throw ConfigError("the subsample objective is ERM on a subsample");
    require_all_groups(ds.group_counts(), objective);
  }

  double value(const Eigen::VectorXd& w) const {
    return loss_.value(x_ * w) + 0.5 * lambda_ * w.squaredNorm();
  }
  Eigen::VectorXd gradient(const Eigen::VectorXd& w) const {
    return PrimalSpace{x_}.gradient(loss_.score_gradient(x_ * w), w, lambda_);
  }

 private:
  const Eigen::MatrixXd& x_;
  WeightedLogisticLoss loss_;
  double lambda_;
};

namespace detail {

inline MinimizeOptions minimize_options(const TrainConfig& cfg) {
  return {cfg.solver, cfg.grad_tol, cfg.max_iters, 20};
}

inline std::vector<int> pick(std::span<const int> v, std::span<const Index> idx) {
  std::vector<int> out(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) out[k] = v[static_cast<std::size_t>(idx[k])];
  return out;
}

}  // namespace detail

/// Kernel-backend fit on a precomputed Gram matrix K = X X^T.
inline KernelTrainResult train_logistic_kernel(const Eigen::MatrixXd& k,
                                               std::span<const int> labels,
                                               std::span<const int> group_ids,
                                               const TrainConfig& cfg) {
  cfg.validate();
  const auto n = static_cast<Index>(labels.size());
  if (k.rows() != n || k.cols() != n || static_cast<Index>(group_ids.size()) != n)
    throw DimensionError("Gram matrix and label sizes differ");

  KernelTrainResult out;
  out.beta = Eigen::VectorXd::Zero(n);

  auto fit = [&](const Eigen::MatrixXd& kk, std::span<const int> y, std::span<const int> g,
                 Objective obj) {
    GroupCounts counts{};
    for (int gi : g) ++counts[static_cast<std::size_t>(gi)];
    require_all_groups(counts, obj);
    Eigen::VectorXd yv(static_cast<Index>(y.size()));
    for (std::size_t i = 0; i < y.size(); ++i) yv[static_cast<Index>(i)] = y[i];
    const WeightedLogisticLoss loss(yv, example_weights(g, obj) / static_cast<double>(y.size()));
    const GramSpace space{kk};
    return minimize_logistic(space, loss, cfg.lambda, space.zero(),
                             detail::minimize_options(cfg));
  };

  if (cfg.objective == Objective::subsample) {
    const auto idx = subsample_indices(group_ids, cfg.seed);
    const Eigen::MatrixXd sub = k(idx, idx);
    const auto ys = detail::pick(labels, idx);
    const auto gs = detail::pick(group_ids, idx);
    const auto r = fit(sub, ys, gs, Objective::erm);
    for (std::size_t j = 0; j < idx.size(); ++j) out.beta[idx[j]] = r.x.c[static_cast<Index>(j)];
    out.converged = r.converged;
    out.grad_norm = r.grad_norm;
    out.iterations = r.iterations;
    out.objective_value = r.value;
    out.train_size = static_cast<Index>(idx.size());
  } else {
    const auto r = fit(k, labels, group_ids, cfg.objective);
    out.beta = r.x.c;
    out.converged = r.converged;
    out.grad_norm = r.grad_norm;
    out.iterations = r.iterations;
    out.objective_value = r.value;
    out.train_size = n;
  }
  return out;
}

/// Gram matrix X X^T (full symmetric storage).
template <typename Derived>
Eigen::MatrixXd gram_matrix(const Eigen::MatrixBase<Derived>& x) {
  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(x.rows(), x.rows());
  k.selfadjointView<Eigen::Lower>().rankUpdate(x);
  k.triangularView<Eigen::StrictlyUpper>() = k.transpose();
  return k;
}

inline TrainResult train_logistic(const GroupedDataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  const bool subsample = cfg.objective == Objective::subsample;
  std::optional<GroupedDataset> sub;
  if (subsample) sub = subsample_balanced(ds, cfg.seed);
  const GroupedDataset& data = subsample ? *sub : ds;
  const Objective obj = subsample ? Objective::erm : cfg.objective;
  require_all_groups(data.group_counts(), obj);

  Backend backend = cfg.backend;
  if (backend == Backend::automatic)
    backend = data.dim() > data.size() ? Backend::kernel : Backend::primal;

  TrainResult out;
  out.train_size = data.size();
  if (backend == Backend::kernel) {
    TrainConfig inner = cfg;
    inner.objective = obj;
    const Eigen::MatrixXd k = gram_matrix(data.features());
    const auto r = train_logistic_kernel(k, data.labels(), data.group_ids(), inner);
    out.model = LinearModel(data.features().transpose() * r.beta, ds.layout());
    out.converged = r.converged;
    out.grad_norm = r.grad_norm;
    out.iterations = r.iterations;
    out.objective_value = r.objective_value;
  } else {
    const WeightedLogisticLoss loss(data.label_vector(), example_weights(data.group_ids(), obj) /
                                                             static_cast<double>(data.size()));
    const PrimalSpace space{data.features()};
    const auto r = minimize_logistic(space, loss, cfg.lambda, space.zero(),
                                     detail::minimize_options(cfg));
    out.model = LinearModel(r.x, ds.layout());
    out.converged = r.converged;
    out.grad_norm = r.grad_norm;
    out.iterations = r.iterations;
    out.objective_value = r.value;
  }
  return out;
}

}  // namespace spurlab
