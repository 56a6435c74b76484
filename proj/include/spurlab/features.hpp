#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <string>

#include "spurlab/dataset.hpp"
#include "spurlab/error.hpp"
#include "spurlab/rng.hpp"

namespace spurlab {

/// m random directions uniform on the unit sphere in R^D, one per row.
///
/// Row j is drawn from substream (seed, "projection", j), so the first k rows of
/// a projection with m > k rows equal a projection sampled with m = k.
class ProjectionMatrix {
 public:
  ProjectionMatrix(Eigen::MatrixXd rows, std::uint64_t seed) : rows_(std::move(rows)), seed_(seed) {}

  const Eigen::MatrixXd& rows() const noexcept { return rows_; }
  std::uint64_t seed() const noexcept { return seed_; }
  Index m() const noexcept { return rows_.rows(); }
  Index input_dim() const noexcept { return rows_.cols(); }

  /// The first k rows.
  ProjectionMatrix prefix(Index k) const {
    if (k < 1 || k > m()) throw ConfigError("projection prefix size out of range");
    return ProjectionMatrix(rows_.topRows(k), seed_);
  }

 private:
  Eigen::MatrixXd rows_;
  std::uint64_t seed_;
};

inline ProjectionMatrix sample_projection(Index D, Index m, std::uint64_t seed) {
  if (D < 1 || m < 1) throw ConfigError("projection needs D >= 1 and m >= 1");
  Eigen::MatrixXd w(m, D);
  Eigen::VectorXd v(D);
  for (Index j = 0; j < m; ++j) {
    Stream rng(seed, "projection", static_cast<std::uint64_t>(j));
    double norm = 0.0;
    do {
      for (Index k = 0; k < D; ++k) v[k] = rng.normal();
      norm = v.norm();
    } while (norm == 0.0);
    w.row(j) = v.transpose() / norm;
  }
  return ProjectionMatrix(std::move(w), seed);
}

/// ReLU(W x) for every row x of X: an n x m matrix.
template <typename Derived>
Eigen::MatrixXd apply_features(const ProjectionMatrix& w, const Eigen::MatrixBase<Derived>& x) {
  if (x.cols() != w.input_dim())
    throw DimensionError("apply_features: X has " + std::to_string(x.cols()) +
                         " columns, projection expects " + std::to_string(w.input_dim()));
  Eigen::MatrixXd out = x * w.rows().transpose();
  out = out.cwiseMax(0.0);
  return out;
}

inline GroupedDataset apply_features(const ProjectionMatrix& w, const GroupedDataset& ds) {
  return ds.with_features(apply_features(w, ds.features()));
}

}  // namespace spurlab
