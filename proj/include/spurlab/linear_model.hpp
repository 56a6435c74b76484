#pragma once

#include <Eigen/Dense>

#include <optional>

#include "spurlab/dataset.hpp"
#include "spurlab/error.hpp"

namespace spurlab {

/// Linear classifier sign(w . x) without intercept, optionally partitioned into
/// (core, spu, noise) blocks.
class LinearModel {
 public:
  LinearModel() = default;
  explicit LinearModel(Eigen::VectorXd weights, std::optional<BlockLayout> layout = std::nullopt)
      : weights_(std::move(weights)), layout_(layout) {
    if (!weights_.allFinite()) throw ConfigError("model weights must be finite");
    if (layout_ && layout_->total() != weights_.size())
      throw DimensionError("block layout does not partition the weight vector");
  }

  const Eigen::VectorXd& weights() const noexcept { return weights_; }
  Index dim() const noexcept { return weights_.size(); }
  const std::optional<BlockLayout>& layout() const noexcept { return layout_; }

  auto core() const { return weights_.segment(require_layout().core_begin(), layout_->core); }
  auto spu() const { return weights_.segment(require_layout().spu_begin(), layout_->spu); }
  auto noise() const { return weights_.segment(require_layout().noise_begin(), layout_->noise); }

  /// Scalar core / spurious weights of an explicit-setting model.
  double w_core() const { return scalar_block(core()); }
  double w_spu() const { return scalar_block(spu()); }

  template <typename Derived>
  Eigen::VectorXd scores(const Eigen::MatrixBase<Derived>& x) const {
    if (x.cols() != dim()) throw DimensionError("model and data dimensions differ");
    return x * weights_;
  }

 private:
  const BlockLayout& require_layout() const {
    if (!layout_) throw ConfigError("model has no block view");
    return *layout_;
  }
  template <typename Seg>
  static double scalar_block(const Seg& s) {
    if (s.size() != 1) throw ConfigError("block is not one-dimensional");
    return s[0];
  }

  Eigen::VectorXd weights_;
  std::optional<BlockLayout> layout_;
};

inline LinearModel direction_of(const LinearModel& m) {
  const double norm = m.weights().norm();
  if (!(norm > 0.0)) throw ConfigError("direction_of: zero weight vector");
  return LinearModel(m.weights() / norm, m.layout());
}

/// Cosine similarity of two weight vectors.
inline double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw DimensionError("cosine: size mismatch");
  const double denom = a.norm() * b.norm();
  if (!(denom > 0.0)) throw ConfigError("cosine: zero vector");
  return a.dot(b) / denom;
}

}  // namespace spurlab
