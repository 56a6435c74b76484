#pragma once

// Minimum-norm separator: argmin ||w||^2 subject to y_i w.x_i >= 1.
//
// Everything runs on the Gram matrix K = X X^T, so the cost depends on n and
// not on the feature dimension.
//
//  1. Feasibility probe. Finite-Newton minimization of the squared hinge loss
//     0.5 sum_i max(0, 1 - y_i w.x_i)^2 + (eps/2) ||w||^2 with a tiny ridge eps.
//     The data are separable iff this minimizer classifies every point with a
//     strictly positive margin (then a rescaling reaches margin 1).
//  2. Dual coordinate ascent on max sum(alpha) - 0.5 alpha^T Q alpha, alpha >= 0,
//     Q = diag(y) K diag(y), until the KKT violation is below tolerance,
//     followed by an active-set polish that solves Q_SS alpha_S = 1 exactly.
//  3. On badly conditioned Gram matrices coordinate ascent stalls; after
//     `pivot_after` sweeps the solver switches to block principal pivoting on
//     the complementarity problem Q alpha - 1 >= 0, alpha >= 0, warm-started
//     from the coordinate-ascent support.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "spurlab/dataset.hpp"
#include "spurlab/error.hpp"
#include "spurlab/linear_model.hpp"
#include "spurlab/logistic.hpp"

namespace spurlab {

struct SeparatorOptions {
  double kkt_tol = 1e-10;
  /// Failure threshold: a result with larger KKT residual raises NumericalError.
  double kkt_fail = 1e-6;
  int max_sweeps = 200000;
  /// Coordinate-ascent sweeps before switching to block principal pivoting.
  int pivot_after = 2000;
  /// Ridge of the feasibility probe, relative to trace(K) / n.
  double probe_ridge = 1e-10;
};

/// Dual solution on a Gram matrix. The separator is w = X^T coef with coef = alpha .* y.
struct KernelSeparator {
  bool separable = false;
  Eigen::VectorXd alpha;
  Eigen::VectorXd coef;
  Eigen::VectorXd margins;
  double margin = 0.0;
  double sq_norm = 0.0;
  double dual_objective = 0.0;
  double kkt_residual = 0.0;
  int sweeps = 0;
};

struct SeparatorResult {
  bool separable = false;
  std::optional<LinearModel> model;
  /// min_i y_i w.x_i (about 1 for the min-norm solution).
  double margin = 0.0;
  double sq_norm = 0.0;
  Eigen::VectorXd alpha;
  double dual_objective = 0.0;
  double kkt_residual = 0.0;
  int sweeps = 0;
};

namespace detail {

/// Squared-hinge feasibility probe; returns the coefficients of w = X^T beta.
inline Eigen::VectorXd squared_hinge_probe(const Eigen::MatrixXd& k, const Eigen::VectorXd& y,
                                           double eps) {
  const Index n = k.rows();
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd kb = Eigen::VectorXd::Zero(n);
  std::vector<char> prev_active;
  bool full_step = false;
  for (int iter = 0; iter < 200; ++iter) {
    std::vector<Index> active;
    std::vector<char> flag(static_cast<std::size_t>(n), 0);
    for (Index i = 0; i < n; ++i)
      if (y[i] * kb[i] < 1.0) {
        active.push_back(i);
        flag[static_cast<std::size_t>(i)] = 1;
      }
    // A full Newton step that leaves the active set unchanged is optimal.
    if (active.empty() || (full_step && flag == prev_active)) break;
    prev_active = flag;

    Eigen::MatrixXd kaa = k(active, active);
    kaa.diagonal().array() += eps;
    const Eigen::VectorXd ya = y(active);
    const Eigen::VectorXd ba = kaa.llt().solve(ya);
    Eigen::VectorXd target = Eigen::VectorXd::Zero(n);
    target(active) = ba;

    // Exact line search on the convex piecewise-quadratic restriction.
    const Eigen::VectorXd d = target - beta;
    const Eigen::VectorXd kd = k * d;
    const double bkd = beta.dot(kd);
    const double dkd = d.dot(kd);
    auto slope = [&](double t) {
      double s = eps * (bkd + t * dkd);
      for (Index i = 0; i < n; ++i) {
        const double r = 1.0 - y[i] * (kb[i] + t * kd[i]);
        if (r > 0.0) s -= r * y[i] * kd[i];
      }
      return s;
    };
    if (slope(0.0) >= 0.0) break;
    double lo = 0.0;
    double hi = 1.0;
    while (slope(hi) < 0.0 && hi < 1e6) {
      lo = hi;
      hi *= 2.0;
    }
    for (int k2 = 0; k2 < 100 && hi - lo > 1e-15 * hi; ++k2) {
      const double mid = 0.5 * (lo + hi);
      (slope(mid) < 0.0 ? lo : hi) = mid;
    }
    const double t = 0.5 * (lo + hi);
    full_step = std::abs(t - 1.0) < 1e-9;
    if (full_step) {
      beta = target;
      kb += kd;
      continue;
    }
    beta += t * d;
    kb += t * kd;
  }
  return beta;
}

inline double kkt_violation(double alpha, double grad) {
  // grad = 1 - margin; optimality: alpha > 0 => grad = 0, alpha = 0 => grad <= 0.
  return alpha > 0.0 ? std::abs(grad) : std::max(0.0, grad);
}

/// Block principal pivoting (Judice and Pires) for the linear complementarity
/// problem w = Q alpha - 1, alpha >= 0, w >= 0, alpha.w = 0 with Q positive
/// definite. Returns an empty optional if it does not settle.
inline std::optional<Eigen::VectorXd> block_pivoting(const Eigen::MatrixXd& q,
                                                     const Eigen::VectorXd& start, double tol,
                                                     int max_iters = 500) {
  const Index n = q.rows();
  std::vector<char> in_f(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) in_f[static_cast<std::size_t>(i)] = start[i] > 0.0;
  constexpr int kBackup = 3;
  int backup = kBackup;
  std::size_t best_infeasible = static_cast<std::size_t>(n) + 1;
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(n);
  for (int iter = 0; iter < max_iters; ++iter) {
    std::vector<Index> f;
    for (Index i = 0; i < n; ++i)
      if (in_f[static_cast<std::size_t>(i)]) f.push_back(i);
    alpha.setZero();
    if (!f.empty()) {
      const Eigen::LLT<Eigen::MatrixXd> llt(q(f, f));
      if (llt.info() != Eigen::Success) return std::nullopt;
      const Eigen::VectorXd af = llt.solve(Eigen::VectorXd::Ones(static_cast<Index>(f.size())));
      alpha(f) = af;
    }
    const Eigen::VectorXd w = q * alpha - Eigen::VectorXd::Ones(n);
    std::vector<Index> bad;
    for (Index i = 0; i < n; ++i) {
      const bool free = in_f[static_cast<std::size_t>(i)];
      if ((free && alpha[i] < -tol) || (!free && w[i] < -tol)) bad.push_back(i);
    }
    if (bad.empty()) {
      alpha = alpha.cwiseMax(0.0);
      return alpha;
    }
    if (bad.size() < best_infeasible) {
      best_infeasible = bad.size();
      backup = kBackup;
      for (Index i : bad) in_f[static_cast<std::size_t>(i)] ^= 1;
    } else if (backup > 0) {
      --backup;
      for (Index i : bad) in_f[static_cast<std::size_t>(i)] ^= 1;
    } else {
      in_f[static_cast<std::size_t>(bad.back())] ^= 1;
    }
  }
  return std::nullopt;
}

}  // namespace detail

/// Min-norm separator on a precomputed Gram matrix.
inline KernelSeparator min_norm_separator_kernel(const Eigen::MatrixXd& k, std::span<const int> labels,
                                                 const SeparatorOptions& opt = {}) {
  const auto n = static_cast<Index>(labels.size());
  if (n < 1) throw ConfigError("min_norm_separator needs at least one point");
  if (k.rows() != n || k.cols() != n) throw DimensionError("Gram matrix and labels differ");
  Eigen::VectorXd y(n);
  for (Index i = 0; i < n; ++i) y[i] = labels[static_cast<std::size_t>(i)];

  KernelSeparator out;
  const double scale = std::max(k.diagonal().mean(), std::numeric_limits<double>::min());
  const Eigen::VectorXd probe = detail::squared_hinge_probe(k, y, opt.probe_ridge * scale);
  const Eigen::VectorXd probe_margin = y.cwiseProduct(k * probe);
  const double probe_norm = std::sqrt(std::max(0.0, probe.dot(k * probe)));
  const double probe_min = probe_margin.minCoeff();
  if (!(probe_min > 1e-9 * probe_norm * std::sqrt(k.diagonal().maxCoeff())) ||
      k.diagonal().minCoeff() <= 0.0) {
    out.separable = false;
    return out;
  }
  out.separable = true;

  // Q = diag(y) K diag(y); v = Q alpha.
  const Eigen::MatrixXd q = y.asDiagonal() * k * y.asDiagonal();
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(n);

  auto max_violation = [&]() {
    double worst = 0.0;
    for (Index i = 0; i < n; ++i) worst = std::max(worst, detail::kkt_violation(alpha[i], 1.0 - v[i]));
    return worst;
  };

  // Solves Q_SS alpha_S = 1 on the current support; accepts it if it is
  // dual-feasible and no longer violates the KKT conditions.
  auto polish = [&]() {
    std::vector<Index> support;
    for (Index i = 0; i < n; ++i)
      if (alpha[i] > 0.0) support.push_back(i);
    if (support.empty()) return false;
    const Eigen::MatrixXd qss = q(support, support);
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(qss);
    if (ldlt.info() != Eigen::Success) return false;
    const Eigen::VectorXd as = ldlt.solve(Eigen::VectorXd::Ones(static_cast<Index>(support.size())));
    if (!as.allFinite() || as.minCoeff() < 0.0) return false;
    Eigen::VectorXd cand = Eigen::VectorXd::Zero(n);
    cand(support) = as;
    const Eigen::VectorXd cv = q * cand;
    double worst = 0.0;
    for (Index i = 0; i < n; ++i) worst = std::max(worst, detail::kkt_violation(cand[i], 1.0 - cv[i]));
    if (worst > std::max(opt.kkt_tol, 0.5 * max_violation())) return false;
    alpha = cand;
    v = cv;
    return true;
  };

  int sweep = 0;
  double violation = std::numeric_limits<double>::infinity();
  int next_polish = 8;
  int pivot_at = opt.pivot_after;
  for (; sweep < opt.max_sweeps; ++sweep) {
    violation = 0.0;
    for (Index i = 0; i < n; ++i) {
      const double grad = 1.0 - v[i];
      violation = std::max(violation, detail::kkt_violation(alpha[i], grad));
      const double updated = std::max(0.0, alpha[i] + grad / q(i, i));
      const double delta = updated - alpha[i];
      if (delta != 0.0) {
        alpha[i] = updated;
        v.noalias() += delta * q.col(i);
      }
    }
    if (violation <= opt.kkt_tol) break;
    if (sweep + 1 >= next_polish) {
      next_polish = 2 * next_polish;
      if (polish() && max_violation() <= opt.kkt_tol) break;
    }
    if (sweep + 1 == pivot_at) {
      const auto pivoted = detail::block_pivoting(q, alpha, opt.kkt_tol);
      if (pivoted) {
        alpha = *pivoted;
        v.noalias() = q * alpha;
        if (max_violation() <= opt.kkt_fail) break;
      }
      // Pivoting did not settle; keep sweeping without retrying.
      pivot_at = opt.max_sweeps;
    }
  }
  // Refresh v against accumulated rounding and polish once more.
  v.noalias() = q * alpha;
  polish();

  out.alpha = alpha;
  out.coef = alpha.cwiseProduct(y);
  out.margins = v;
  out.margin = v.minCoeff();
  out.sq_norm = alpha.dot(v);
  out.dual_objective = alpha.sum() - 0.5 * out.sq_norm;
  out.kkt_residual = max_violation();
  out.sweeps = sweep;
  if (!(out.kkt_residual <= opt.kkt_fail))
    throw NumericalError("min_norm_separator: KKT residual " + std::to_string(out.kkt_residual) +
                         " after " + std::to_string(sweep) + " sweeps");
  return out;
}

/// Gram matrix with the contribution of the given feature columns removed,
/// i.e. the Gram matrix of X with those columns zeroed.
inline Eigen::MatrixXd gram_without_columns(const Eigen::MatrixXd& k, const Eigen::MatrixXd& x,
                                            std::span<const Index> columns) {
  Eigen::MatrixXd out = k;
  for (Index c : columns) out.noalias() -= x.col(c) * x.col(c).transpose();
  return out;
}

/// Min-norm separator of `ds`, optionally with some coordinates forced to zero.
inline SeparatorResult min_norm_separator(const GroupedDataset& ds,
                                          std::span<const Index> zero_columns = {},
                                          const SeparatorOptions& opt = {}) {
  for (Index c : zero_columns)
    if (c < 0 || c >= ds.dim()) throw DimensionError("zeroed column out of range");
  Eigen::MatrixXd k = gram_matrix(ds.features());
  if (!zero_columns.empty()) k = gram_without_columns(k, ds.features(), zero_columns);
  const auto ks = min_norm_separator_kernel(k, ds.labels(), opt);
  SeparatorResult out;
  out.separable = ks.separable;
  if (!ks.separable) return out;
  Eigen::VectorXd w = ds.features().transpose() * ks.coef;
  for (Index c : zero_columns) w[c] = 0.0;
  out.model = LinearModel(std::move(w), ds.layout());
  out.margin = ks.margin;
  out.sq_norm = ks.sq_norm;
  out.alpha = ks.alpha;
  out.dual_objective = ks.dual_objective;
  out.kkt_residual = ks.kkt_residual;
  out.sweeps = ks.sweeps;
  return out;
}

}  // namespace spurlab
