#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "spurlab/error.hpp"

namespace spurlab {

using Index = Eigen::Index;

inline constexpr int kNumGroups = 4;

/// Group id for label y and attribute a (both in {-1, 1}).
///
///   0: (y= 1, a= 1)  majority
///   1: (y= 1, a=-1)  minority
///   2: (y=-1, a=-1)  majority
///   3: (y=-1, a= 1)  minority
constexpr int group_id(int y, int a) noexcept { return (y == 1 ? 0 : 2) + (a == y ? 0 : 1); }
constexpr int group_label(int g) noexcept { return g < 2 ? 1 : -1; }
constexpr int group_attribute(int g) noexcept {
  return (g % 2 == 0) ? group_label(g) : -group_label(g);
}
constexpr bool is_majority_group(int g) noexcept { return g % 2 == 0; }

using GroupCounts = std::array<Index, kNumGroups>;

/// Column partition [core | spu | noise] of an explicitly structured feature matrix.
struct BlockLayout {
  Index core = 0;
  Index spu = 0;
  Index noise = 0;

  Index total() const noexcept { return core + spu + noise; }
  Index core_begin() const noexcept { return 0; }
  Index spu_begin() const noexcept { return core; }
  Index noise_begin() const noexcept { return core + spu; }
  friend bool operator==(const BlockLayout&, const BlockLayout&) = default;
};

/// Features plus per-example label, spurious attribute and group id.
/// Immutable after construction.
class GroupedDataset {
 public:
  GroupedDataset() = default;

  GroupedDataset(Eigen::MatrixXd features, std::vector<int> labels, std::vector<int> attributes,
                 std::optional<BlockLayout> layout = std::nullopt)
      : features_(std::move(features)),
        labels_(std::move(labels)),
        attributes_(std::move(attributes)),
        layout_(layout) {
    const auto n = static_cast<std::size_t>(features_.rows());
    if (n == 0) throw ConfigError("dataset must contain at least one example");
    if (labels_.size() != n || attributes_.size() != n)
      throw DimensionError("labels/attributes length must equal the number of feature rows");
    if (layout_ && layout_->total() != features_.cols())
      throw DimensionError("block layout does not partition the feature columns");
    if (!features_.allFinite()) throw ConfigError("feature matrix contains non-finite entries");
    groups_.resize(n);
    label_vector_.resize(static_cast<Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      const int y = labels_[i];
      const int a = attributes_[i];
      if ((y != 1 && y != -1) || (a != 1 && a != -1))
        throw ConfigError("labels and attributes must be in {-1, 1}");
      groups_[i] = group_id(y, a);
      label_vector_[static_cast<Index>(i)] = y;
      ++counts_[static_cast<std::size_t>(groups_[i])];
    }
  }

  Index size() const noexcept { return features_.rows(); }
  Index dim() const noexcept { return features_.cols(); }

  const Eigen::MatrixXd& features() const noexcept { return features_; }
  const std::vector<int>& labels() const noexcept { return labels_; }
  const std::vector<int>& attributes() const noexcept { return attributes_; }
  const std::vector<int>& group_ids() const noexcept { return groups_; }
  /// Labels as a dense +-1 vector.
  const Eigen::VectorXd& label_vector() const noexcept { return label_vector_; }
  const std::optional<BlockLayout>& layout() const noexcept { return layout_; }

  const GroupCounts& group_counts() const noexcept { return counts_; }
  Index majority_count() const noexcept { return counts_[0] + counts_[2]; }
  Index minority_count() const noexcept { return counts_[1] + counts_[3]; }

  /// Rows with the given indices, in that order.
  GroupedDataset subset(std::span<const Index> rows) const {
    Eigen::MatrixXd sub(static_cast<Index>(rows.size()), dim());
    std::vector<int> y(rows.size());
    std::vector<int> a(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      sub.row(static_cast<Index>(k)) = features_.row(rows[k]);
      y[k] = labels_[static_cast<std::size_t>(rows[k])];
      a[k] = attributes_[static_cast<std::size_t>(rows[k])];
    }
    return GroupedDataset(std::move(sub), std::move(y), std::move(a), layout_);
  }

  /// Same labels and groups with a replacement feature matrix.
  GroupedDataset with_features(Eigen::MatrixXd features,
                               std::optional<BlockLayout> layout = std::nullopt) const {
    if (features.rows() != size()) throw DimensionError("replacement features have wrong row count");
    return GroupedDataset(std::move(features), labels_, attributes_, layout);
  }

 private:
  Eigen::MatrixXd features_;
  std::vector<int> labels_;
  std::vector<int> attributes_;
  std::vector<int> groups_;
  Eigen::VectorXd label_vector_;
  GroupCounts counts_{};
  std::optional<BlockLayout> layout_;
};

}  // namespace spurlab
