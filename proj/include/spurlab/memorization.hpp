#pragma once

// Representer decomposition of the noise block, w_noise = sum_i s_i x_noise^(i),
// and gamma-memorization fractions: point i is memorized when
// |s_i| > gamma^2 / sigma_noise^2.

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <vector>

#include "spurlab/dataset.hpp"
#include "spurlab/error.hpp"
#include "spurlab/linear_model.hpp"

namespace spurlab {

struct MemorizationReport {
  Eigen::VectorXd coeffs;
  double gamma_sq = 0.0;
  double sigma_noise_sq = 0.0;
  double delta_maj = 0.0;
  double delta_all = 0.0;
  double residual = 0.0;
  std::vector<int> group_ids;
};

enum class MemorizationSubset { majority, all };

/// Solves (K_noise + eps I) s = X_noise w_noise with eps = 1e-10 trace(K_noise) / n.
/// `sigma_noise_sq` defaults to the mean squared noise norm of the training rows.
/// `noise_gram`, when given, must equal X_noise X_noise^T and saves its computation.
inline MemorizationReport representer_coeffs(const LinearModel& m, const GroupedDataset& ds,
                                             std::optional<double> sigma_noise_sq = std::nullopt,
                                             const Eigen::MatrixXd* noise_gram = nullptr) {
  if (!ds.layout() || ds.layout()->noise == 0)
    throw ConfigError("representer_coeffs requires a noise block (N >= 1)");
  if (!m.layout() || !(*m.layout() == *ds.layout()))
    throw ConfigError("model block view must match the dataset layout");
  const BlockLayout layout = *ds.layout();
  const auto xn = ds.features().middleCols(layout.noise_begin(), layout.noise);
  const Eigen::VectorXd wn = m.noise();

  Eigen::MatrixXd k;
  if (noise_gram) {
    if (noise_gram->rows() != ds.size() || noise_gram->cols() != ds.size())
      throw DimensionError("noise Gram matrix has the wrong size");
    k = *noise_gram;
  } else {
    k = Eigen::MatrixXd::Zero(ds.size(), ds.size());
    k.selfadjointView<Eigen::Lower>().rankUpdate(xn);
  }
  const double trace = k.trace();
  const double eps = 1e-10 * trace / static_cast<double>(ds.size());
  k.diagonal().array() += eps;
  const Eigen::VectorXd rhs = xn * wn;

  MemorizationReport r;
  r.coeffs = k.selfadjointView<Eigen::Lower>().ldlt().solve(rhs);
  r.residual = (xn.transpose() * r.coeffs - wn).norm();
  r.sigma_noise_sq = sigma_noise_sq ? *sigma_noise_sq : trace / static_cast<double>(ds.size());
  r.group_ids = ds.group_ids();
  return r;
}

inline double memorization_fraction(const MemorizationReport& report, double gamma_sq,
                                    MemorizationSubset subset) {
  if (report.coeffs.size() == 0) throw ConfigError("report has no coefficients");
  if (static_cast<Index>(report.group_ids.size()) != report.coeffs.size())
    throw DimensionError("report group ids do not match coefficients");
  if (!(report.sigma_noise_sq > 0.0)) throw ConfigError("sigma_noise_sq must be positive");
  const double threshold = gamma_sq / report.sigma_noise_sq;
  Index members = 0;
  Index memorized = 0;
  for (Index i = 0; i < report.coeffs.size(); ++i) {
    if (subset == MemorizationSubset::majority &&
        !is_majority_group(report.group_ids[static_cast<std::size_t>(i)]))
      continue;
    ++members;
    if (std::abs(report.coeffs[i]) > threshold) ++memorized;
  }
  if (members == 0) throw ConfigError("memorization subset is empty");
  return static_cast<double>(memorized) / static_cast<double>(members);
}

/// representer_coeffs plus both memorization fractions at `gamma_sq`.
inline MemorizationReport memorization_report(const LinearModel& m, const GroupedDataset& ds,
                                              double gamma_sq,
                                              std::optional<double> sigma_noise_sq = std::nullopt,
                                              const Eigen::MatrixXd* noise_gram = nullptr) {
  auto r = representer_coeffs(m, ds, sigma_noise_sq, noise_gram);
  r.gamma_sq = gamma_sq;
  r.delta_maj = memorization_fraction(r, gamma_sq, MemorizationSubset::majority);
  r.delta_all = memorization_fraction(r, gamma_sq, MemorizationSubset::all);
  return r;
}

}  // namespace spurlab
