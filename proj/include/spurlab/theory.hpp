#pragma once

// Numerical counterparts of the explicit-memorization theory: the hand-built
// separators, the norm bounds on spurious-feature and core-feature separators,
// the worst-group / memorization trade-off, closed-form group errors, the
// population minimizer of the reweighted loss and the asymptotic variance of
// the reweighted estimator.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "spurlab/data_gen.hpp"
#include "spurlab/dataset.hpp"
#include "spurlab/error.hpp"
#include "spurlab/linear_model.hpp"
#include "spurlab/logistic.hpp"
#include "spurlab/memorization.hpp"
#include "spurlab/metrics.hpp"
#include "spurlab/normal.hpp"
#include "spurlab/rng.hpp"
#include "spurlab/separator.hpp"

namespace spurlab {

struct TheoryParams {
  double p_maj = 0.9;
  double sigma_core_sq = 1.0;
  double sigma_spu_sq = 0.01;
  double sigma_noise_sq = 1.0;
  Index n_maj = 2000;
  Index n_min = 100;
  Index N = 0;

  static TheoryParams from_config(const ExplicitConfig& cfg) {
    return {cfg.p_maj(), cfg.sigma_core_sq, cfg.sigma_spu_sq, cfg.sigma_noise_sq,
            cfg.n_maj,   cfg.n_min,         cfg.N};
  }
  ExplicitConfig to_config(std::uint64_t seed) const {
    return {n_maj, n_min, N, sigma_core_sq, sigma_spu_sq, sigma_noise_sq, seed};
  }
  Index n() const noexcept { return n_maj + n_min; }

  void validate() const {
    if (!(p_maj >= 0.0 && p_maj <= 1.0)) throw ConfigError("p_maj must lie in [0, 1]");
    spurlab::validate(to_config(0));
  }
};

/// Constants of the appendix bounds, at their stated ceilings by default.
struct TheoryConstants {
  double c1 = 1.0 / 2000.0;
  double c3 = 1e-3;
  double c4 = 1e-3;
  double c5 = 1e-3;
  double c6 = 1e-3;
  double c7 = 1e-3;
  /// w_spu of the spurious-feature separator.
  double u = 1.3125;
  /// s * sigma_noise^2 of the spurious-feature separator.
  double s_sigma_noise_sq = 2.61;
  double gamma_sq = 0.9;
};

namespace detail {

inline BlockLayout require_explicit_layout(const GroupedDataset& ds, bool need_noise) {
  if (!ds.layout() || ds.layout()->core != 1 || ds.layout()->spu != 1)
    throw ConfigError("expected an explicit-setting dataset with layout (1, 1, N)");
  if (need_noise && ds.layout()->noise < 1) throw ConfigError("expected a noise block (N >= 1)");
  return *ds.layout();
}

/// Sum over rows in `rows` of coef_i * x_noise^(i).
inline Eigen::VectorXd noise_combination(const GroupedDataset& ds, const Eigen::VectorXd& coef) {
  const BlockLayout layout = *ds.layout();
  return ds.features().middleCols(layout.noise_begin(), layout.noise).transpose() * coef;
}

}  // namespace detail

/// w_core = 0, w_spu = u, w_noise = sum over minority points of y_i * s_coef * x_noise^(i).
inline LinearModel construct_w_use_spu(const GroupedDataset& ds, double u, double s_coef) {
  const BlockLayout layout = detail::require_explicit_layout(ds, true);
  Eigen::VectorXd coef = Eigen::VectorXd::Zero(ds.size());
  for (Index i = 0; i < ds.size(); ++i)
    if (!is_majority_group(ds.group_ids()[static_cast<std::size_t>(i)]))
      coef[i] = ds.label_vector()[i] * s_coef;
  Eigen::VectorXd w(layout.total());
  w[0] = 0.0;
  w[1] = u;
  w.tail(layout.noise) = detail::noise_combination(ds, coef);
  return LinearModel(std::move(w), layout);
}

/// w_core = w_spu = 0, w_noise = sum_i y_i * alpha * x_noise^(i).
inline LinearModel construct_w_use_core_memall(const GroupedDataset& ds, double alpha) {
  const BlockLayout layout = detail::require_explicit_layout(ds, true);
  Eigen::VectorXd w(layout.total());
  w.head(2).setZero();
  w.tail(layout.noise) = detail::noise_combination(ds, alpha * ds.label_vector());
  return LinearModel(std::move(w), layout);
}

/// min_i y_i w.x_i.
inline double min_margin(const LinearModel& m, const GroupedDataset& ds) {
  return ds.label_vector().cwiseProduct(m.scores(ds.features())).minCoeff();
}

/// Upper bound on ||w^use-spu||^2: u^2 + (s sigma_noise^2)^2 (2 + c1) n_min / sigma_noise^2.
inline double spurious_norm_bound(const TheoryParams& p, const TheoryConstants& c = {}) {
  return c.u * c.u + c.s_sigma_noise_sq * c.s_sigma_noise_sq * (2.0 + c.c1) *
                         static_cast<double>(p.n_min) / p.sigma_noise_sq;
}

/// gamma_3 = (Phi(-1 / sigma_core) - c6) gamma^4 (1 - c1) - c7.
inline double core_norm_constant(const TheoryParams& p, const TheoryConstants& c = {}) {
  return (normal_cdf(-1.0 / std::sqrt(p.sigma_core_sq)) - c.c6) * c.gamma_sq * c.gamma_sq *
             (1.0 - c.c1) -
         c.c7;
}

/// Lower bound on the squared norm of any core-feature separator: gamma_3 n / sigma_noise^2.
inline double core_norm_bound(const TheoryParams& p, const TheoryConstants& c = {}) {
  return core_norm_constant(p, c) * static_cast<double>(p.n()) / p.sigma_noise_sq;
}

struct NormBoundReport {
  double use_spu_sq_norm = 0.0;
  double use_spu_margin = 0.0;
  bool use_spu_separates = false;
  double spurious_bound = 0.0;
  bool spurious_bound_holds = false;

  double minnorm_sq_norm = 0.0;
  double core_sq_norm = 0.0;
  double core_bound = 0.0;
  bool core_bound_holds = false;

  bool minnorm_le_use_spu = false;
  bool core_gt_use_spu = false;
  bool core_ge_minnorm = false;

  LinearModel use_spu;
  LinearModel minnorm;
  LinearModel core;
};

/// Gram matrix of an explicit-setting dataset split into its noise part and the
/// full matrix (noise plus the two rank-one core / spurious terms).
struct ExplicitGram {
  Eigen::MatrixXd noise;
  Eigen::MatrixXd full;
};

inline ExplicitGram explicit_gram(const GroupedDataset& ds) {
  const BlockLayout layout = detail::require_explicit_layout(ds, false);
  ExplicitGram g;
  if (layout.noise > 0) {
    g.noise = gram_matrix(ds.features().middleCols(layout.noise_begin(), layout.noise));
  } else {
    g.noise = Eigen::MatrixXd::Zero(ds.size(), ds.size());
  }
  g.full = g.noise;
  g.full.noalias() += ds.features().col(0) * ds.features().col(0).transpose();
  g.full.noalias() += ds.features().col(1) * ds.features().col(1).transpose();
  return g;
}

/// Builds w^use-spu, the unconstrained min-norm separator and the min-norm
/// separator with w_spu = 0, and compares their norms with the bounds.
inline NormBoundReport verify_norm_bounds(const GroupedDataset& ds, const TheoryParams& params,
                                          const TheoryConstants& c = {},
                                          const ExplicitGram* gram = nullptr) {
  const BlockLayout layout = detail::require_explicit_layout(ds, true);
  std::optional<ExplicitGram> local;
  if (!gram) {
    local = explicit_gram(ds);
    gram = &*local;
  }
  NormBoundReport r;
  r.use_spu = construct_w_use_spu(ds, c.u, c.s_sigma_noise_sq / params.sigma_noise_sq);
  r.use_spu_sq_norm = r.use_spu.weights().squaredNorm();
  r.use_spu_margin = min_margin(r.use_spu, ds);
  r.use_spu_separates = r.use_spu_margin >= 1.0;
  r.spurious_bound = spurious_norm_bound(params, c);
  r.spurious_bound_holds = r.use_spu_sq_norm <= r.spurious_bound;

  const auto free = min_norm_separator_kernel(gram->full, ds.labels());
  if (!free.separable) throw ConfigError("verify_norm_bounds: training data are not separable");
  r.minnorm = LinearModel(ds.features().transpose() * free.coef, layout);
  r.minnorm_sq_norm = free.sq_norm;

  const Eigen::MatrixXd k_core =
      gram->full - ds.features().col(1) * ds.features().col(1).transpose();
  const auto core = min_norm_separator_kernel(k_core, ds.labels());
  if (!core.separable)
    throw ConfigError("verify_norm_bounds: no separator with w_spu = 0 exists");
  Eigen::VectorXd wc = ds.features().transpose() * core.coef;
  wc[1] = 0.0;
  r.core = LinearModel(std::move(wc), layout);
  r.core_sq_norm = core.sq_norm;
  r.core_bound = core_norm_bound(params, c);
  r.core_bound_holds = r.core_sq_norm >= r.core_bound;

  r.minnorm_le_use_spu = r.minnorm_sq_norm <= r.use_spu_sq_norm * (1.0 + 1e-9);
  r.core_gt_use_spu = r.core_sq_norm > r.use_spu_sq_norm;
  r.core_ge_minnorm = r.core_sq_norm >= r.minnorm_sq_norm * (1.0 - 1e-9);
  return r;
}

struct TradeoffQuantities {
  double phi_arg_err = 0.0;
  double phi_arg_mem = 0.0;
  /// Lower bound on the worst-group error: Phi(phi_arg_err) - c4.
  double err_bound = 0.0;
  /// Lower bound on the majority memorization fraction: Phi(phi_arg_mem) - c6.
  double mem_bound = 0.0;
};

inline TradeoffQuantities tradeoff_quantities(const LinearModel& m, const TheoryParams& params,
                                              const TheoryConstants& c = {}) {
  const double wc = m.w_core();
  const double ws = m.w_spu();
  const double denom =
      std::sqrt(wc * wc * params.sigma_core_sq + ws * ws * params.sigma_spu_sq);
  if (!(denom > 0.0)) throw ConfigError("tradeoff_quantities: zero denominator");
  TradeoffQuantities q;
  q.phi_arg_err = (-c.c3 + ws - wc) / denom;
  q.phi_arg_mem = (1.0 - (1.0 + c.c1) * c.gamma_sq - c.c5 - ws - wc) / denom;
  q.err_bound = normal_cdf(q.phi_arg_err) - c.c4;
  q.mem_bound = normal_cdf(q.phi_arg_mem) - c.c6;
  return q;
}

/// Population group errors of a model on the explicit distribution. The score
/// w.x is Gaussian with mean w_core y + w_spu a and variance
/// w_core^2 sigma_core^2 + w_spu^2 sigma_spu^2 + ||w_noise||^2 sigma_noise^2 / N,
/// so a point of group g is misclassified with probability Phi(-(w_core +/- w_spu) / sd)
/// (+ for majority groups, - for minority groups). The average weights groups by
/// their population shares.
inline GroupMetrics analytic_group_errors(const LinearModel& m, const TheoryParams& params) {
  const BlockLayout layout = m.layout() ? *m.layout() : BlockLayout{1, 1, m.dim() - 2};
  if (layout.core != 1 || layout.spu != 1 || layout.total() != m.dim())
    throw ConfigError("analytic group errors need an explicit-setting model");
  if (!(m.weights().squaredNorm() > 0.0)) throw ConfigError("zero weight vector");
  const double wc = m.weights()[0];
  const double ws = m.weights()[1];
  double var = wc * wc * params.sigma_core_sq + ws * ws * params.sigma_spu_sq;
  if (layout.noise > 0) {
    if (params.N != layout.noise) throw DimensionError("model noise block differs from N");
    var += m.weights().tail(layout.noise).squaredNorm() * params.sigma_noise_sq /
           static_cast<double>(params.N);
  }
  const double sd = std::sqrt(var);
  std::array<double, kNumGroups> errors{};
  for (int g = 0; g < kNumGroups; ++g) {
    const double mean_margin = wc + (is_majority_group(g) ? ws : -ws);
    if (sd > 0.0) {
      errors[static_cast<std::size_t>(g)] = normal_cdf(-mean_margin / sd);
    } else {
      errors[static_cast<std::size_t>(g)] = mean_margin > 0.0 ? 0.0 : 1.0;
    }
  }
  const double pm = params.p_maj;
  return make_group_metrics(errors, {pm / 2, (1 - pm) / 2, pm / 2, (1 - pm) / 2});
}

/// analytic_group_errors restricted to models without a (nonzero) noise block.
inline GroupMetrics analytic_group_error_2d(const LinearModel& m, const TheoryParams& params) {
  if (m.dim() < 2) throw ConfigError("expected (w_core, w_spu)");
  if (m.dim() > 2 && m.weights().tail(m.dim() - 2).squaredNorm() > 0.0)
    throw ConfigError("analytic_group_error_2d requires a zero noise block");
  return analytic_group_errors(LinearModel(m.weights().head(2), BlockLayout{1, 1, 0}), params);
}

struct PopulationGradient {
  Eigen::Vector2d gradient = Eigen::Vector2d::Zero();
  int order = 0;
  /// Max-norm change from the previous quadrature order.
  double change = 0.0;
};

namespace detail {

inline Eigen::Vector2d population_gradient_at_order(const Eigen::Vector2d& w,
                                                    const TheoryParams& p,
                                                    const GaussHermiteRule& rule) {
  const double sc = std::sqrt(p.sigma_core_sq);
  const double ss = std::sqrt(p.sigma_spu_sq);
  const Index k1 = rule.nodes.size();
  // A degenerate spurious coordinate collapses the inner rule to one node.
  const Index k2 = ss > 0.0 ? k1 : 1;
  Eigen::Vector2d total = Eigen::Vector2d::Zero();
  for (int y : {1, -1}) {
    for (int a : {y, -y}) {
      const double group_share = (a == y ? p.p_maj : 1.0 - p.p_maj) / 2.0;
      const double loss_weight = 1.0 / (a == y ? p.p_maj : 1.0 - p.p_maj);
      Eigen::Vector2d acc = Eigen::Vector2d::Zero();
      for (Index i = 0; i < k1; ++i) {
        const double xc = y + sc * rule.nodes[i];
        for (Index j = 0; j < k2; ++j) {
          const double xs = a + (k2 > 1 ? ss * rule.nodes[j] : 0.0);
          const double weight = rule.weights[i] * (k2 > 1 ? rule.weights[j] : 1.0);
          const double z = y * (w[0] * xc + w[1] * xs);
          const double coef = -y * WeightedLogisticLoss::sigmoid_neg(z);
          acc[0] += weight * coef * xc;
          acc[1] += weight * coef * xs;
        }
      }
      total += group_share * loss_weight * acc;
    }
  }
  return total;
}

}  // namespace detail

/// Gradient of the population reweighted logistic loss at w = (w_core, w_spu) for
/// N = 0, by tensor Gauss-Hermite quadrature. The order starts at `order` and is
/// doubled until successive results differ by less than `tol` (max norm).
inline PopulationGradient population_gradient_rw(const Eigen::Vector2d& w, const TheoryParams& p,
                                                 int order = 64, double tol = 1e-9,
                                                 int max_order = 1024) {
  if (!(p.p_maj > 0.0 && p.p_maj < 1.0))
    throw ConfigError("reweighting is undefined for p_maj in {0, 1}");
  if (order < 2) throw ConfigError("quadrature order must be at least 2");
  PopulationGradient out;
  Eigen::Vector2d prev = detail::population_gradient_at_order(w, p, gauss_hermite(order));
  out.change = INFINITY;
  while (order < max_order) {
    const int next = 2 * order;
    const Eigen::Vector2d cur = detail::population_gradient_at_order(w, p, gauss_hermite(next));
    out.change = (cur - prev).lpNorm<Eigen::Infinity>();
    prev = cur;
    order = next;
    if (out.change < tol) break;
  }
  out.gradient = prev;
  out.order = order;
  return out;
}

/// Population minimizer of the reweighted loss: (2 / sigma_core^2, 0).
inline Eigen::Vector2d population_minimizer(const TheoryParams& p) {
  return {2.0 / p.sigma_core_sq, 0.0};
}

/// Diagonal upper bound on the asymptotic covariance of sqrt(n)(w_rw - w*).
inline Eigen::Vector2d asymptotic_variance_bound(const TheoryParams& p) {
  const double s2 = p.sigma_core_sq;
  const double pq = p.p_maj * (1.0 - p.p_maj);
  const double e = 16.0 * std::exp(8.0 / ((s2 + 8.0) * s2));
  const double core = e * (s2 + 1.0) * std::pow(1.0 + 8.0 / s2, 3) / (pq * (s2 + 9.0) * (s2 + 9.0));
  const double spu = e * (1.0 + 8.0 / s2) / (pq * (p.sigma_spu_sq + 1.0));
  return {core, spu};
}

struct AsymptoticVarianceReport {
  Index n = 0;
  int trials = 0;
  int used_trials = 0;
  int excluded_trials = 0;
  Eigen::Vector2d w_star = Eigen::Vector2d::Zero();
  Eigen::Vector2d mean_w = Eigen::Vector2d::Zero();
  Eigen::Vector2d mean_se = Eigen::Vector2d::Zero();
  bool mean_within_3se = false;
  /// Empirical covariance of sqrt(n)(w - w*).
  Eigen::Matrix2d covariance = Eigen::Matrix2d::Zero();
  Eigen::Vector2d bound = Eigen::Vector2d::Zero();
  int bootstrap_resamples = 0;
  /// Fraction of bootstrap resamples whose covariance diagonal is below the bound.
  double bootstrap_pass_fraction = 0.0;
  double offdiag_se = 0.0;
  bool offdiag_within_3se = false;
};

/// Fits the reweighted estimator (lambda = 0) on `trials` independent datasets of
/// size n and compares the spread of sqrt(n)(w - w*) with the diagonal bound.
inline AsymptoticVarianceReport asymptotic_variance_check(const TheoryParams& params, Index n,
                                                          int trials, std::uint64_t seed,
                                                          int bootstrap = 1000) {
  if (params.N != 0) throw ConfigError("asymptotic variance check requires N = 0");
  if (params.sigma_core_sq < 1.0) throw ConfigError("the bound is stated for sigma_core^2 >= 1");
  if (trials < 2) throw ConfigError("need at least two trials");
  const ExplicitConfig base = explicit_from_fraction(
      n, params.p_maj,
      {0, 0, 0, params.sigma_core_sq, params.sigma_spu_sq, params.sigma_noise_sq, 0});

  AsymptoticVarianceReport r;
  r.n = n;
  r.trials = trials;
  r.w_star = population_minimizer(params);
  r.bound = asymptotic_variance_bound(params);
  std::vector<Eigen::Vector2d> z;
  Eigen::Vector2d sum_w = Eigen::Vector2d::Zero();
  std::vector<Eigen::Vector2d> ws;
  for (int t = 0; t < trials; ++t) {
    ExplicitConfig cfg = base;
    cfg.seed = derive_seed(seed, "asymptotic-trial", static_cast<std::uint64_t>(t));
    const auto ds = gen_explicit(cfg);
    const auto fit =
        train_logistic(ds, {.objective = Objective::reweight, .lambda = 0.0, .grad_tol = 1e-10});
    if (!fit.converged) {
      ++r.excluded_trials;
      continue;
    }
    const Eigen::Vector2d w = fit.model.weights();
    ws.push_back(w);
    sum_w += w;
    z.push_back(std::sqrt(static_cast<double>(n)) * (w - r.w_star));
  }
  r.used_trials = static_cast<int>(z.size());
  if (r.used_trials < 2) throw NumericalError("too few converged trials");
  const double m = r.used_trials;
  r.mean_w = sum_w / m;

  auto covariance_of = [](const std::vector<Eigen::Vector2d>& pts,
                          const std::vector<std::size_t>* idx) {
    const std::size_t count = idx ? idx->size() : pts.size();
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    for (std::size_t k = 0; k < count; ++k) mean += pts[idx ? (*idx)[k] : k];
    mean /= static_cast<double>(count);
    Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
    for (std::size_t k = 0; k < count; ++k) {
      const Eigen::Vector2d d = pts[idx ? (*idx)[k] : k] - mean;
      cov += d * d.transpose();
    }
    return Eigen::Matrix2d(cov / static_cast<double>(count - 1));
  };

  r.covariance = covariance_of(z, nullptr);
  const Eigen::Matrix2d cov_w = covariance_of(ws, nullptr);
  r.mean_se = (cov_w.diagonal() / m).cwiseSqrt();
  r.mean_within_3se = ((r.mean_w - r.w_star).cwiseAbs().array() <= 3.0 * r.mean_se.array()).all();

  // Standard error of the off-diagonal covariance entry from the spread of products.
  Eigen::Vector2d zbar = Eigen::Vector2d::Zero();
  for (const auto& v : z) zbar += v;
  zbar /= m;
  double prod_mean = 0.0;
  std::vector<double> prods;
  for (const auto& v : z) prods.push_back((v[0] - zbar[0]) * (v[1] - zbar[1]));
  for (double pr : prods) prod_mean += pr;
  prod_mean /= m;
  double prod_var = 0.0;
  for (double pr : prods) prod_var += (pr - prod_mean) * (pr - prod_mean);
  prod_var /= (m - 1.0);
  r.offdiag_se = std::sqrt(prod_var / m);
  r.offdiag_within_3se = std::abs(r.covariance(0, 1)) <= 3.0 * r.offdiag_se;

  r.bootstrap_resamples = bootstrap;
  int passes = 0;
  std::vector<std::size_t> idx(z.size());
  for (int b = 0; b < bootstrap; ++b) {
    Stream rng(seed, "asymptotic-bootstrap", static_cast<std::uint64_t>(b));
    for (auto& i : idx) i = static_cast<std::size_t>(rng.below(z.size()));
    const Eigen::Matrix2d c = covariance_of(z, &idx);
    if (c(0, 0) <= r.bound[0] && c(1, 1) <= r.bound[1]) ++passes;
  }
  r.bootstrap_pass_fraction = bootstrap > 0 ? static_cast<double>(passes) / bootstrap : 0.0;
  return r;
}

/// The separator-norm mechanism on one explicit-setting draw: hand-built
/// spurious separator, min-norm and core-only min-norm separators, the
/// population worst-group error of the max-margin model and its memorization.
struct MechanismReport {
  std::uint64_t seed = 0;
  NormBoundReport norms;
  GroupMetrics minnorm_test;
  double delta_maj = 0.0;
  double delta_all = 0.0;
  double representer_residual = 0.0;
  double representer_relative_residual = 0.0;
};

inline MechanismReport mechanism_check(const TheoryParams& params, std::uint64_t seed,
                                       const TheoryConstants& c = {}) {
  const auto ds = gen_explicit(params.to_config(seed));
  const auto gram = explicit_gram(ds);
  MechanismReport r;
  r.seed = seed;
  r.norms = verify_norm_bounds(ds, params, c, &gram);
  r.minnorm_test = analytic_group_errors(r.norms.minnorm, params);
  const auto mem = memorization_report(r.norms.minnorm, ds, c.gamma_sq, params.sigma_noise_sq,
                                       &gram.noise);
  r.delta_maj = mem.delta_maj;
  r.delta_all = mem.delta_all;
  r.representer_residual = mem.residual;
  const double wn = r.norms.minnorm.noise().norm();
  r.representer_relative_residual = wn > 0.0 ? mem.residual / wn : 0.0;
  return r;
}

}  // namespace spurlab
