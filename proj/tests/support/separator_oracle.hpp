#pragma once

// Exhaustive min-norm separator oracle for tiny problems, shared by the unit
// and acceptance tests.

#include <Eigen/Dense>

#include <limits>
#include <optional>
#include <vector>

#include "spurlab/dataset.hpp"
#include "spurlab/rng.hpp"

namespace spurlab::oracle {

// The min-norm separator is the min-norm solution of y_i w.x_i = 1 on its
// support set, so the smallest feasible such solution over all subsets is the
// optimum.
inline std::optional<Eigen::VectorXd> brute_force_min_norm(const GroupedDataset& ds) {
  const Index n = ds.size();
  std::optional<Eigen::VectorXd> best;
  double best_sq = std::numeric_limits<double>::infinity();
  for (unsigned mask = 1; mask < (1u << n); ++mask) {
    std::vector<Index> rows;
    for (Index i = 0; i < n; ++i)
      if (mask & (1u << i)) rows.push_back(i);
    const Eigen::MatrixXd xs = ds.features()(rows, Eigen::all);
    const Eigen::VectorXd ys = ds.label_vector()(rows);
    const Eigen::VectorXd w = xs.completeOrthogonalDecomposition().solve(ys);
    if ((xs * w - ys).norm() > 1e-9) continue;
    const Eigen::VectorXd m = ds.label_vector().cwiseProduct(ds.features() * w);
    if (m.minCoeff() < 1.0 - 1e-9) continue;
    if (w.squaredNorm() < best_sq) {
      best_sq = w.squaredNorm();
      best = w;
    }
  }
  return best;
}

/// Gaussian points labelled by a random hyperplane through the origin.
inline GroupedDataset random_separable(Stream& rng, Index n, Index d) {
  Eigen::VectorXd w0(d);
  for (Index j = 0; j < d; ++j) w0[j] = rng.normal();
  Eigen::MatrixXd x(n, d);
  std::vector<int> y(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < d; ++j) x(i, j) = rng.normal();
    y[static_cast<std::size_t>(i)] = x.row(i).dot(w0) > 0.0 ? 1 : -1;
  }
  return GroupedDataset(x, y, y);
}

}  // namespace spurlab::oracle
