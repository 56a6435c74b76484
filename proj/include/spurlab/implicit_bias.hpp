#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <optional>

#include "spurlab/dataset.hpp"
#include "spurlab/error.hpp"
#include "spurlab/lbfgs.hpp"
#include "spurlab/linear_model.hpp"
#include "spurlab/logistic.hpp"
#include "spurlab/rng.hpp"
#include "spurlab/separator.hpp"

namespace spurlab {

struct StepSchedule {
  enum class Kind {
    constant,        ///< eta_t = eta
    loss_normalized  ///< eta_t = eta / L(w_t)
  };
  Kind kind = Kind::loss_normalized;
  /// Base step; 0 selects 1 / (smoothness bound of the weighted mean loss).
  double eta = 0.0;
};

struct ImplicitBiasResult {
  LinearModel direction;
  double cosine_to_mm = 0.0;
  LinearModel max_margin;
  double final_loss = 0.0;
  int iterations = 0;
};

/// Largest eigenvalue of a symmetric PSD matrix by power iteration (slight overestimate).
inline double largest_eigenvalue(const Eigen::MatrixXd& k, int iters = 100) {
  Stream rng(0, "power-iteration");
  Eigen::VectorXd v(k.rows());
  for (Index i = 0; i < v.size(); ++i) v[i] = rng.normal();
  v.normalize();
  double lambda = 0.0;
  for (int t = 0; t < iters; ++t) {
    const Eigen::VectorXd kv = k * v;
    const double norm = kv.norm();
    if (norm == 0.0) return k.trace();
    lambda = v.dot(kv);
    v = kv / norm;
  }
  return 1.05 * std::max(lambda, (k * v).norm());
}

/// Full-batch gradient descent on the unregularized (weighted) logistic loss of
/// separable data, reporting the normalized final iterate and its cosine to the
/// max-margin direction.
inline ImplicitBiasResult implicit_bias_path(const GroupedDataset& ds, int iters,
                                             StepSchedule schedule = {},
                                             Objective objective = Objective::erm) {
  if (iters < 1) throw ConfigError("iters must be >= 1");
  if (objective == Objective::subsample) throw ConfigError("use erm on a subsample instead");
  const auto sep = min_norm_separator(ds);
  if (!sep.separable)
    throw ConfigError("implicit_bias_path: data are not linearly separable");

  const Eigen::MatrixXd k = gram_matrix(ds.features());
  const Eigen::VectorXd c =
      example_weights(ds.group_ids(), objective) / static_cast<double>(ds.size());
  const WeightedLogisticLoss loss(ds.label_vector(), c);
  double eta = schedule.eta;
  if (eta <= 0.0) eta = 1.0 / (0.25 * c.maxCoeff() * largest_eigenvalue(k));

  const GramSpace space{k};
  auto w = space.zero();
  double f = loss.value(w.kc);
  int t = 0;
  for (; t < iters; ++t) {
    const auto g = space.gradient(loss.score_gradient(w.kc), w, 0.0);
    const double step =
        schedule.kind == StepSchedule::Kind::constant ? eta : eta / std::max(f, 1e-300);
    GramSpace::axpy(-step, g, w);
    const double f_new = loss.value(w.kc);
    if (!std::isfinite(f_new)) throw NumericalError("implicit_bias_path: loss diverged");
    f = f_new;
    // Beyond this the per-example gradients underflow.
    if (f < 1e-250) break;
  }
  const Eigen::VectorXd weights = ds.features().transpose() * w.c;
  ImplicitBiasResult out{direction_of(LinearModel(weights, ds.layout())), 0.0, *sep.model, f,
                         t};
  out.cosine_to_mm = cosine(weights, sep.model->weights());
  return out;
}

}  // namespace spurlab
