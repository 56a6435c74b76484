#pragma once

// Synthetic generators for the two memorization settings, dataset transforms,
// and group-balanced subsampling.
//
// Every generated row owns a substream keyed by (seed, tag, group, row index),
// so any row range of any group can be regenerated independently. Large test
// sets are therefore produced in chunks without storing the whole matrix.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "spurlab/dataset.hpp"
#include "spurlab/error.hpp"
#include "spurlab/rng.hpp"

namespace spurlab {

struct ImplicitConfig {
  Index n = 3000;
  Index d = 100;
  double p_maj = 0.9;
  double sigma_core_sq = 100.0;
  double sigma_spu_sq = 1.0;
  std::uint64_t seed = 0;

  /// Spurious-core information ratio sigma_core^2 / sigma_spu^2.
  double ratio_spu_core() const { return sigma_core_sq / sigma_spu_sq; }
};

struct ExplicitConfig {
  Index n_maj = 2000;
  Index n_min = 100;
  Index N = 0;
  double sigma_core_sq = 1.0;
  double sigma_spu_sq = 0.01;
  double sigma_noise_sq = 1.0;
  std::uint64_t seed = 0;

  Index n() const noexcept { return n_maj + n_min; }
  double p_maj() const noexcept {
    return static_cast<double>(n_maj) / static_cast<double>(n_maj + n_min);
  }
};

namespace detail {

inline void check_variance(double v, const char* name) {
  if (!std::isfinite(v) || v < 0.0)
    throw ConfigError(std::string(name) + " must be finite and non-negative");
}

/// n * frac, required to be an even integer up to floating-point noise.
inline Index even_part(Index n, double frac, const char* what) {
  const double exact = static_cast<double>(n) * frac;
  const double rounded = std::round(exact);
  if (std::abs(exact - rounded) > 1e-9 * std::max(1.0, static_cast<double>(n)))
    throw ConfigError(std::string(what) + " = n * fraction is not an integer");
  const auto count = static_cast<Index>(rounded);
  if (count % 2 != 0) throw ConfigError(std::string(what) + " must be even");
  return count;
}

inline std::uint64_t row_index(int g, Index i) {
  return (static_cast<std::uint64_t>(g) << 40) | static_cast<std::uint64_t>(i);
}

}  // namespace detail

/// Group sizes (n_maj/2, n_min/2, n_maj/2, n_min/2) in group-id order.
inline GroupCounts split_groups(Index n_maj, Index n_min) {
  if (n_maj < 0 || n_min < 0 || n_maj % 2 != 0 || n_min % 2 != 0)
    throw ConfigError("n_maj and n_min must be non-negative even counts");
  if (n_maj + n_min == 0) throw ConfigError("dataset must contain at least one example");
  return {n_maj / 2, n_min / 2, n_maj / 2, n_min / 2};
}

inline void validate(const ImplicitConfig& cfg) {
  if (cfg.n < 1) throw ConfigError("n must be positive");
  if (cfg.d < 1) throw ConfigError("d must be positive");
  if (!(cfg.p_maj >= 0.0 && cfg.p_maj <= 1.0)) throw ConfigError("p_maj must lie in [0, 1]");
  detail::check_variance(cfg.sigma_core_sq, "sigma_core_sq");
  detail::check_variance(cfg.sigma_spu_sq, "sigma_spu_sq");
}

inline void validate(const ExplicitConfig& cfg) {
  if (cfg.N < 0) throw ConfigError("N must be non-negative");
  split_groups(cfg.n_maj, cfg.n_min);
  detail::check_variance(cfg.sigma_core_sq, "sigma_core_sq");
  detail::check_variance(cfg.sigma_spu_sq, "sigma_spu_sq");
  detail::check_variance(cfg.sigma_noise_sq, "sigma_noise_sq");
}

inline GroupCounts group_sizes(const ImplicitConfig& cfg) {
  validate(cfg);
  const Index n_maj = detail::even_part(cfg.n, cfg.p_maj, "n_maj");
  const Index n_min = detail::even_part(cfg.n, 1.0 - cfg.p_maj, "n_min");
  if (n_maj + n_min != cfg.n) throw ConfigError("n_maj + n_min must equal n");
  return split_groups(n_maj, n_min);
}

inline GroupCounts group_sizes(const ExplicitConfig& cfg) {
  validate(cfg);
  return split_groups(cfg.n_maj, cfg.n_min);
}

/// Explicit configuration with n_maj = p_maj * n, under the same even-size rule.
inline ExplicitConfig explicit_from_fraction(Index n, double p_maj, ExplicitConfig base = {}) {
  if (n < 1) throw ConfigError("n must be positive");
  if (!(p_maj >= 0.0 && p_maj <= 1.0)) throw ConfigError("p_maj must lie in [0, 1]");
  base.n_maj = detail::even_part(n, p_maj, "n_maj");
  base.n_min = detail::even_part(n, 1.0 - p_maj, "n_min");
  if (base.n_maj + base.n_min != n) throw ConfigError("n_maj + n_min must equal n");
  return base;
}

/// Row sampler for the implicit setting:
/// x_core ~ N(y 1_d, sigma_core^2 I_d), x_spu ~ N(spu_mean * a 1_d, sigma_spu^2 I_d).
class ImplicitSampler {
 public:
  ImplicitSampler(const ImplicitConfig& cfg, std::string_view tag, double spu_mean = 1.0)
      : cfg_(cfg), tag_(tag), spu_mean_(spu_mean) {
    validate(cfg_);
  }

  Index dim() const noexcept { return 2 * cfg_.d; }
  BlockLayout layout() const noexcept { return {cfg_.d, cfg_.d, 0}; }

  template <typename Row>
  void fill(int g, Index i, Row&& row) const {
    Stream rng(cfg_.seed, tag_, detail::row_index(g, i));
    const double y = group_label(g);
    const double a = group_attribute(g) * spu_mean_;
    const double sc = std::sqrt(cfg_.sigma_core_sq);
    const double ss = std::sqrt(cfg_.sigma_spu_sq);
    for (Index j = 0; j < cfg_.d; ++j) row(j) = y + sc * rng.normal();
    for (Index j = 0; j < cfg_.d; ++j) row(cfg_.d + j) = a + ss * rng.normal();
  }

 private:
  ImplicitConfig cfg_;
  std::string tag_;
  double spu_mean_;
};

/// Row sampler for the explicit setting: [x_core, x_spu, x_noise] with scalar
/// core and spurious coordinates and x_noise ~ N(0, sigma_noise^2 / N I_N).
class ExplicitSampler {
 public:
  ExplicitSampler(const ExplicitConfig& cfg, std::string_view tag, double spu_mean = 1.0)
      : cfg_(cfg), tag_(tag), spu_mean_(spu_mean) {
    validate(cfg_);
  }

  Index dim() const noexcept { return 2 + cfg_.N; }
  BlockLayout layout() const noexcept { return {1, 1, cfg_.N}; }

  template <typename Row>
  void fill(int g, Index i, Row&& row) const {
    Stream rng(cfg_.seed, tag_, detail::row_index(g, i));
    row(0) = group_label(g) + std::sqrt(cfg_.sigma_core_sq) * rng.normal();
    row(1) = group_attribute(g) * spu_mean_ + std::sqrt(cfg_.sigma_spu_sq) * rng.normal();
    if (cfg_.N > 0) {
      const double sn = std::sqrt(cfg_.sigma_noise_sq / static_cast<double>(cfg_.N));
      for (Index j = 0; j < cfg_.N; ++j) row(2 + j) = sn * rng.normal();
    }
  }

 private:
  ExplicitConfig cfg_;
  std::string tag_;
  double spu_mean_;
};

/// Materializes `counts[g]` rows of every group, group by group, starting at
/// within-group row `first[g]`.
template <typename Sampler>
GroupedDataset sample_groups(const Sampler& sampler, const GroupCounts& counts,
                             const GroupCounts& first = {}) {
  const Index n = std::accumulate(counts.begin(), counts.end(), Index{0});
  Eigen::MatrixXd x(n, sampler.dim());
  std::vector<int> y(static_cast<std::size_t>(n));
  std::vector<int> a(static_cast<std::size_t>(n));
  Index r = 0;
  for (int g = 0; g < kNumGroups; ++g) {
    for (Index i = 0; i < counts[static_cast<std::size_t>(g)]; ++i, ++r) {
      sampler.fill(g, first[static_cast<std::size_t>(g)] + i, x.row(r));
      y[static_cast<std::size_t>(r)] = group_label(g);
      a[static_cast<std::size_t>(r)] = group_attribute(g);
    }
  }
  return GroupedDataset(std::move(x), std::move(y), std::move(a), sampler.layout());
}

inline GroupedDataset gen_implicit(const ImplicitConfig& cfg) {
  return sample_groups(ImplicitSampler(cfg, "implicit.train"), group_sizes(cfg));
}

inline GroupedDataset gen_explicit(const ExplicitConfig& cfg) {
  return sample_groups(ExplicitSampler(cfg, "explicit.train"), group_sizes(cfg));
}

/// Group-balanced test data drawn from the training distribution of `cfg`
/// (independent of the training draw). Rows [first, first + count) of the
/// balanced sequence in which group g occupies [g * per_group, (g+1) * per_group).
/// `spurious_removed` sets the spurious mean to zero, matching remove_spurious.
template <typename Config>
GroupedDataset gen_test_chunk(const Config& cfg, Index per_group, Index first, Index count,
                              bool spurious_removed = false) {
  if (per_group < 1) throw ConfigError("test size per group must be positive");
  if (first < 0 || count < 1 || first + count > kNumGroups * per_group)
    throw ConfigError("test chunk out of range");
  GroupCounts counts{};
  GroupCounts starts{};
  for (int g = 0; g < kNumGroups; ++g) {
    const Index lo = std::max(first, g * per_group);
    const Index hi = std::min(first + count, (g + 1) * per_group);
    if (hi > lo) {
      counts[static_cast<std::size_t>(g)] = hi - lo;
      starts[static_cast<std::size_t>(g)] = lo - g * per_group;
    }
  }
  const double spu_mean = spurious_removed ? 0.0 : 1.0;
  if constexpr (std::is_same_v<Config, ImplicitConfig>) {
    return sample_groups(ImplicitSampler(cfg, "implicit.test", spu_mean), counts, starts);
  } else {
    return sample_groups(ExplicitSampler(cfg, "explicit.test", spu_mean), counts, starts);
  }
}

template <typename Config>
GroupedDataset gen_test(const Config& cfg, Index per_group, bool spurious_removed = false) {
  return gen_test_chunk(cfg, per_group, 0, kNumGroups * per_group, spurious_removed);
}

/// Replaces every spurious column by fresh N(0, sigma_spu_sq) draws, keeping
/// all other columns bitwise. Row i uses substream (seed, "remove_spurious", i).
inline GroupedDataset remove_spurious(const GroupedDataset& ds, double sigma_spu_sq,
                                      std::uint64_t seed) {
  if (!ds.layout()) throw ConfigError("remove_spurious requires a block layout");
  const BlockLayout layout = *ds.layout();
  if (layout.spu == 0) throw ConfigError("remove_spurious requires a spurious block");
  detail::check_variance(sigma_spu_sq, "sigma_spu_sq");
  Eigen::MatrixXd x = ds.features();
  const double s = std::sqrt(sigma_spu_sq);
  for (Index i = 0; i < ds.size(); ++i) {
    Stream rng(seed, "remove_spurious", static_cast<std::uint64_t>(i));
    for (Index j = 0; j < layout.spu; ++j) x(i, layout.spu_begin() + j) = s * rng.normal();
  }
  return ds.with_features(std::move(x), layout);
}

/// Row indices of a group-balanced subsample: every group is reduced, uniformly
/// without replacement, to the size of the smallest group. Indices are returned
/// in ascending order.
inline std::vector<Index> subsample_indices(std::span<const int> group_ids, std::uint64_t seed) {
  std::array<std::vector<Index>, kNumGroups> members;
  for (std::size_t i = 0; i < group_ids.size(); ++i)
    members[static_cast<std::size_t>(group_ids[i])].push_back(static_cast<Index>(i));
  std::size_t smallest = group_ids.size();
  for (const auto& m : members) smallest = std::min(smallest, m.size());
  if (smallest == 0) throw ConfigError("subsampling requires every group to be nonempty");

  std::vector<Index> out;
  out.reserve(smallest * kNumGroups);
  for (int g = 0; g < kNumGroups; ++g) {
    auto& m = members[static_cast<std::size_t>(g)];
    Stream rng(seed, "subsample", static_cast<std::uint64_t>(g));
    for (std::size_t k = 0; k < smallest; ++k) {
      const auto pick = k + static_cast<std::size_t>(rng.below(m.size() - k));
      std::swap(m[k], m[pick]);
    }
    out.insert(out.end(), m.begin(), m.begin() + static_cast<std::ptrdiff_t>(smallest));
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline GroupedDataset subsample_balanced(const GroupedDataset& ds, std::uint64_t seed) {
  const auto idx = subsample_indices(ds.group_ids(), seed);
  return ds.subset(idx);
}

}  // namespace spurlab
