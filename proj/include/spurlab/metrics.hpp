#pragma once

#include <Eigen/Dense>

#include <array>
#include <optional>
#include <span>
#include <string>

#include "spurlab/dataset.hpp"
#include "spurlab/error.hpp"
#include "spurlab/linear_model.hpp"

namespace spurlab {

struct GroupMetrics {
  std::array<double, kNumGroups> per_group_error{};
  double average_error = 0.0;
  double worst_group_error = 0.0;
  int worst_group_id = 0;
  GroupCounts counts{};
};

/// Builds metrics from per-group errors; the average uses `weights`
/// (normalized internally).
inline GroupMetrics make_group_metrics(const std::array<double, kNumGroups>& errors,
                                       const std::array<double, kNumGroups>& weights,
                                       const GroupCounts& counts = {}) {
  GroupMetrics m;
  m.per_group_error = errors;
  m.counts = counts;
  double total = 0.0;
  for (int g = 0; g < kNumGroups; ++g) {
    if (weights[static_cast<std::size_t>(g)] < 0.0) throw ConfigError("negative group weight");
    total += weights[static_cast<std::size_t>(g)];
  }
  if (!(total > 0.0)) throw ConfigError("group weights must not all be zero");
  m.worst_group_error = errors[0];
  for (int g = 0; g < kNumGroups; ++g) {
    const double e = errors[static_cast<std::size_t>(g)];
    m.average_error += weights[static_cast<std::size_t>(g)] / total * e;
    if (e > m.worst_group_error) {
      m.worst_group_error = e;
      m.worst_group_id = g;
    }
  }
  return m;
}

/// Streaming 0-1 error counts per group; predictions with score exactly 0 are errors.
class GroupErrorAccumulator {
 public:
  void add(const Eigen::VectorXd& scores, std::span<const int> labels, std::span<const int> groups) {
    if (static_cast<std::size_t>(scores.size()) != labels.size() || labels.size() != groups.size())
      throw DimensionError("scores, labels and groups differ in length");
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const auto g = static_cast<std::size_t>(groups[i]);
      ++counts_[g];
      if (!(labels[i] * scores[static_cast<Index>(i)] > 0.0)) ++mistakes_[g];
    }
  }

  template <typename Derived>
  void add(const Eigen::MatrixBase<Derived>& scores, const GroupedDataset& ds) {
    add(Eigen::VectorXd(scores), ds.labels(), ds.group_ids());
  }

  /// Metrics with average weights from `weights`, or empirical group
  /// proportions when absent. Throws if any group is empty.
  GroupMetrics finish(const std::optional<std::array<double, kNumGroups>>& weights = std::nullopt) const {
    std::array<double, kNumGroups> errors{};
    std::array<double, kNumGroups> w{};
    for (int g = 0; g < kNumGroups; ++g) {
      const auto k = static_cast<std::size_t>(g);
      if (counts_[k] == 0)
        throw ConfigError("group " + std::to_string(g) + " is empty; its error is undefined");
      errors[k] = static_cast<double>(mistakes_[k]) / static_cast<double>(counts_[k]);
      w[k] = weights ? (*weights)[k] : static_cast<double>(counts_[k]);
    }
    return make_group_metrics(errors, w, counts_);
  }

 private:
  GroupCounts counts_{};
  GroupCounts mistakes_{};
};

inline GroupMetrics group_errors(const LinearModel& m, const GroupedDataset& ds,
                                 const std::optional<std::array<double, kNumGroups>>& weights =
                                     std::nullopt) {
  GroupErrorAccumulator acc;
  acc.add(m.scores(ds.features()), ds.labels(), ds.group_ids());
  return acc.finish(weights);
}

}  // namespace spurlab
