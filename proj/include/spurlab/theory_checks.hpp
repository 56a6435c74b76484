#pragma once

// Named numerical checks of the explicit-memorization theory. Each check
// returns a JSON report (inputs, computed quantities, bounds, pass flags) and
// an overall verdict. Parameters can be overridden by a JSON/TOML document.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "spurlab/logistic.hpp"
#include "spurlab/spec_io.hpp"
#include "spurlab/theory.hpp"

namespace spurlab {

struct CheckResult {
  std::string name;
  bool passed = false;
  Json report;
};

struct CheckContext {
  std::uint64_t seed = 0;
  /// Optional "params" table overriding the check's default parameters.
  Json params = Json::object();
  /// Optional per-check settings (seeds, trials, ...).
  Json settings = Json::object();
};

struct CheckInfo {
  std::string name;
  std::string description;
  std::function<CheckResult(const CheckContext&)> run;
};

/// Desk-scale parameters of the separator-norm mechanism: n_min = 100,
/// n_maj = 2000, sigma_core^2 = 1, sigma_spu^2 = 1 / (16 log(100 n_maj)),
/// sigma_noise^2 = n_maj / 600^2, N = 20 n.
inline TheoryParams mechanism_params() {
  TheoryParams p;
  p.n_maj = 2000;
  p.n_min = 100;
  p.p_maj = 2000.0 / 2100.0;
  p.sigma_core_sq = 1.0;
  p.sigma_spu_sq = 1.0 / (16.0 * std::log(100.0 * 2000.0));
  p.sigma_noise_sq = 2000.0 / (600.0 * 600.0);
  p.N = 20 * p.n();
  return p;
}

/// Underparameterized regime: N = 0, sigma_core^2 = 1, sigma_spu^2 = 0 and
/// p_maj = 2000/2001 with n_min = 200, the largest size that fits in memory
/// comfortably while keeping the stated majority fraction exactly.
inline TheoryParams underparam_params() {
  TheoryParams p;
  p.n_maj = 400000;
  p.n_min = 200;
  p.p_maj = 2000.0 / 2001.0;
  p.sigma_core_sq = 1.0;
  p.sigma_spu_sq = 0.0;
  p.sigma_noise_sq = 1.0;
  p.N = 0;
  return p;
}

namespace detail {

inline TheoryParams params_for(const CheckContext& ctx, TheoryParams defaults) {
  if (ctx.params.is_object() && !ctx.params.empty())
    defaults = theory_params_from_json(ctx.params, defaults);
  if (ctx.params.is_object() && ctx.params.contains("n_maj") && !ctx.params.contains("p_maj"))
    defaults.p_maj = static_cast<double>(defaults.n_maj) / static_cast<double>(defaults.n());
  return defaults;
}

template <typename T>
T setting(const CheckContext& ctx, const char* key, T fallback) {
  if (ctx.settings.is_object() && ctx.settings.contains(key)) return ctx.settings.at(key).get<T>();
  return fallback;
}

inline Json to_json_vec(const Eigen::Vector2d& v) { return Json::array({v[0], v[1]}); }

}  // namespace detail

/// The population gradient vanishes at w* = (2 / sigma_core^2, 0) across
/// sigma_core^2 in {1, 4}, sigma_spu^2 in {0.01, 1}, p_maj in {0.9, 2000/2001}.
inline CheckResult check_popmin(const CheckContext& ctx) {
  const double tol = detail::setting(ctx, "tolerance", 1e-6);
  CheckResult r{"popmin", true, Json::object()};
  r.report["tolerance"] = tol;
  Json cases = Json::array();
  for (double sc : {1.0, 4.0})
    for (double ss : {0.01, 1.0})
      for (double pm : {0.9, 2000.0 / 2001.0}) {
        TheoryParams p;
        p.sigma_core_sq = sc;
        p.sigma_spu_sq = ss;
        p.p_maj = pm;
        const auto w = population_minimizer(p);
        const auto g = population_gradient_rw(w, p);
        const bool ok = g.gradient.norm() <= tol;
        r.passed = r.passed && ok;
        cases.push_back({{"sigma_core_sq", sc},
                         {"sigma_spu_sq", ss},
                         {"p_maj", pm},
                         {"w_star", detail::to_json_vec(w)},
                         {"gradient", detail::to_json_vec(g.gradient)},
                         {"gradient_norm", g.gradient.norm()},
                         {"quadrature_order", g.order},
                         {"passed", ok}});
      }
  r.report["cases"] = cases;
  return r;
}

/// Norm comparison of the spurious separator, the min-norm separator and the
/// core-only min-norm separator across seeds, with the memorization and
/// worst-group consequences for the min-norm model.
inline CheckResult check_mechanism(const CheckContext& ctx) {
  const TheoryParams p = detail::params_for(ctx, mechanism_params());
  const int seeds = detail::setting(ctx, "seeds", 10);
  const int need = detail::setting(ctx, "required_seeds", (9 * seeds + 9) / 10);
  const double mem_max = detail::setting(ctx, "max_majority_memorization", 0.05);
  const TheoryConstants c{};
  CheckResult r{"mechanism", false, Json::object()};
  r.report["params"] = to_json(p);
  r.report["u"] = c.u;
  r.report["s"] = c.s_sigma_noise_sq / p.sigma_noise_sq;
  r.report["spurious_bound"] = spurious_norm_bound(p, c);
  r.report["core_bound"] = core_norm_bound(p, c);
  int a = 0, b = 0, cc = 0, d = 0, e = 0;
  Json per_seed = Json::array();
  for (int k = 0; k < seeds; ++k) {
    const auto seed = derive_seed(ctx.seed, "mechanism", static_cast<std::uint64_t>(k));
    const auto m = mechanism_check(p, seed, c);
    const bool ok_a = m.norms.use_spu_separates;
    const bool ok_b = m.norms.minnorm_le_use_spu;
    const bool ok_c = m.norms.core_gt_use_spu;
    const bool ok_d = m.minnorm_test.worst_group_error > 0.5;
    const bool ok_e = m.delta_maj <= mem_max;
    a += ok_a;
    b += ok_b;
    cc += ok_c;
    d += ok_d;
    e += ok_e;
    per_seed.push_back({{"seed", seed},
                        {"use_spu_sq_norm", m.norms.use_spu_sq_norm},
                        {"use_spu_min_margin", m.norms.use_spu_margin},
                        {"minnorm_sq_norm", m.norms.minnorm_sq_norm},
                        {"core_sq_norm", m.norms.core_sq_norm},
                        {"minnorm_w_core", m.norms.minnorm.w_core()},
                        {"minnorm_w_spu", m.norms.minnorm.w_spu()},
                        {"minnorm_test", to_json(m.minnorm_test)},
                        {"delta_maj", m.delta_maj},
                        {"delta_all", m.delta_all},
                        {"representer_relative_residual", m.representer_relative_residual},
                        {"a_use_spu_separates", ok_a},
                        {"b_minnorm_le_use_spu", ok_b},
                        {"c_core_gt_use_spu", ok_c},
                        {"d_worst_group_above_half", ok_d},
                        {"e_low_majority_memorization", ok_e}});
  }
  r.report["seeds"] = per_seed;
  r.report["counts"] = {{"a", a}, {"b", b}, {"c", cc}, {"d", d}, {"e", e}, {"of", seeds}};
  r.report["required"] = need;
  r.passed = a >= need && b == seeds && cc >= need && d >= need && e == seeds;
  return r;
}

/// Worst-group / memorization trade-off bounds evaluated for the min-norm
/// separator of one draw at the mechanism parameters.
inline CheckResult check_tradeoff(const CheckContext& ctx) {
  const TheoryParams p = detail::params_for(ctx, mechanism_params());
  const TheoryConstants c{};
  const auto seed = derive_seed(ctx.seed, "tradeoff", 0);
  const auto ds = gen_explicit(p.to_config(seed));
  const auto gram = explicit_gram(ds);
  const auto norms = verify_norm_bounds(ds, p, c, &gram);
  const auto& w = norms.minnorm;
  const auto q = tradeoff_quantities(w, p, c);
  const auto test = analytic_group_errors(w, p);
  const auto mem = memorization_report(w, ds, c.gamma_sq, p.sigma_noise_sq, &gram.noise);
  const double max_s_sq = mem.coeffs.cwiseAbs2().maxCoeff();
  const double s_limit = 10.0 * static_cast<double>(p.n()) / (p.sigma_noise_sq * p.sigma_noise_sq);
  const bool spans = mem.residual <= 1e-6 * std::max(1.0, w.noise().norm());
  const bool mem_applies = spans && max_s_sq <= s_limit;
  const bool err_ok = test.worst_group_error >= q.err_bound;
  const bool mem_ok = !mem_applies || mem.delta_maj >= q.mem_bound;
  CheckResult r{"tradeoff", err_ok && mem_ok, Json::object()};
  r.report = {{"params", to_json(p)},
              {"seed", seed},
              {"w_core", w.w_core()},
              {"w_spu", w.w_spu()},
              {"phi_arg_err", q.phi_arg_err},
              {"err_bound", q.err_bound},
              {"worst_group_error", test.worst_group_error},
              {"err_bound_holds", err_ok},
              {"phi_arg_mem", q.phi_arg_mem},
              {"mem_bound", q.mem_bound},
              {"delta_maj", mem.delta_maj},
              {"max_coeff_sq", max_s_sq},
              {"coeff_sq_limit", s_limit},
              {"mem_bound_applies", mem_applies},
              {"mem_bound_holds", mem_ok}};
  return r;
}

/// Reweighted logistic regression without noise features reaches low
/// worst-group error, evaluated in closed form.
inline CheckResult check_underparam(const CheckContext& ctx) {
  const TheoryParams p = detail::params_for(ctx, underparam_params());
  const double threshold = detail::setting(ctx, "threshold", 0.25);
  if (p.N != 0) throw ConfigError("params.N: the underparameterized check requires N = 0");
  const auto seed = derive_seed(ctx.seed, "underparam", 0);
  const auto ds = gen_explicit(p.to_config(seed));
  TrainConfig cfg;
  cfg.objective = Objective::reweight;
  const auto fit = train_logistic(ds, cfg);
  const auto test = analytic_group_error_2d(fit.model, p);
  CheckResult r{"underparam", fit.converged && test.worst_group_error < threshold, Json::object()};
  r.report = {{"params", to_json(p)},
              {"seed", seed},
              {"lambda", cfg.lambda},
              {"w", detail::to_json_vec(fit.model.weights())},
              {"converged", fit.converged},
              {"test", to_json(test)},
              {"threshold", threshold},
              {"population_minimizer_worst_group",
               analytic_group_error_2d(LinearModel(population_minimizer(p)), p).worst_group_error}};
  return r;
}

/// Spread of the reweighted estimator around w* against the diagonal bound.
inline CheckResult check_asymvar(const CheckContext& ctx) {
  TheoryParams defaults;
  defaults.p_maj = 0.9;
  defaults.sigma_core_sq = 1.0;
  defaults.sigma_spu_sq = 1.0;
  defaults.N = 0;
  const TheoryParams p = detail::params_for(ctx, defaults);
  const auto n = detail::setting<Index>(ctx, "n", 20000);
  const int trials = detail::setting(ctx, "trials", 200);
  const int bootstrap = detail::setting(ctx, "bootstrap", 1000);
  const double need = detail::setting(ctx, "bootstrap_pass_fraction", 0.95);
  const auto v = asymptotic_variance_check(p, n, trials, derive_seed(ctx.seed, "asymvar", 0), bootstrap);
  CheckResult r{"asymvar", false, Json::object()};
  r.passed = v.bootstrap_pass_fraction >= need && v.offdiag_within_3se && v.mean_within_3se;
  r.report = {{"params", to_json(p)},
              {"n", n},
              {"trials", trials},
              {"used_trials", v.used_trials},
              {"excluded_trials", v.excluded_trials},
              {"w_star", detail::to_json_vec(v.w_star)},
              {"mean_w", detail::to_json_vec(v.mean_w)},
              {"mean_se", detail::to_json_vec(v.mean_se)},
              {"mean_within_3se", v.mean_within_3se},
              {"covariance", {{v.covariance(0, 0), v.covariance(0, 1)},
                              {v.covariance(1, 0), v.covariance(1, 1)}}},
              {"bound_diagonal", detail::to_json_vec(v.bound)},
              {"bootstrap_resamples", v.bootstrap_resamples},
              {"bootstrap_pass_fraction", v.bootstrap_pass_fraction},
              {"required_pass_fraction", need},
              {"offdiag_se", v.offdiag_se},
              {"offdiag_within_3se", v.offdiag_within_3se}};
  return r;
}

inline const std::vector<CheckInfo>& theory_checks() {
  static const std::vector<CheckInfo> checks = {
      {"popmin", "population gradient of the reweighted loss vanishes at (2/sigma_core^2, 0)",
       check_popmin},
      {"asymvar", "covariance of sqrt(n)(w - w*) lies below the asymptotic variance bound",
       check_asymvar},
      {"underparam", "reweighted logistic regression with N = 0 has worst-group error < 25%",
       check_underparam},
      {"mechanism", "separator norms, worst-group error and memorization of the min-norm model",
       check_mechanism},
      {"tradeoff", "worst-group error and majority memorization bounds for the min-norm model",
       check_tradeoff},
  };
  return checks;
}

inline const CheckInfo* find_check(const std::string& name) {
  for (const auto& c : theory_checks())
    if (c.name == name) return &c;
  return nullptr;
}

}  // namespace spurlab
