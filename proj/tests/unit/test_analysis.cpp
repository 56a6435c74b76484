#include <gtest/gtest.h>

#include <cmath>

#include "spurlab/data_gen.hpp"
#include "spurlab/memorization.hpp"
#include "spurlab/metrics.hpp"
#include "spurlab/normal.hpp"
#include "spurlab/rng.hpp"
#include "spurlab/theory.hpp"

using namespace spurlab;

namespace {

double double_factorial(int k) {
  double r = 1.0;
  for (int i = k; i > 1; i -= 2) r *= i;
  return r;
}

// Monte-Carlo estimate of the population reweighted gradient. The reweighted
// loss is the majority mean plus the minority mean, which is twice the mean
// over draws where majority and minority are equally likely.
Eigen::Vector2d mc_gradient(const Eigen::Vector2d& w, double sc2, double ss2, int draws,
                            Eigen::Vector2d* se) {
  Stream rng(99, "mc-gradient", 0);
  Eigen::Vector2d sum = Eigen::Vector2d::Zero();
  Eigen::Vector2d sum_sq = Eigen::Vector2d::Zero();
  for (int k = 0; k < draws; ++k) {
    const int y = rng.below(2) ? 1 : -1;
    const int a = rng.below(2) ? y : -y;
    const double xc = y + std::sqrt(sc2) * rng.normal();
    const double xs = a + std::sqrt(ss2) * rng.normal();
    const double z = y * (w[0] * xc + w[1] * xs);
    const double s = 1.0 / (1.0 + std::exp(z));
    const Eigen::Vector2d g(-y * s * xc, -y * s * xs);
    sum += g;
    sum_sq += g.cwiseProduct(g);
  }
  const Eigen::Vector2d mean = sum / draws;
  *se = 2.0 * ((sum_sq / draws - mean.cwiseProduct(mean)) / draws).cwiseSqrt();
  return 2.0 * mean;
}

}  // namespace

TEST(Normal, CdfKnownValues) {
  EXPECT_DOUBLE_EQ(normal_cdf(0.0), 0.5);
  EXPECT_NEAR(normal_cdf(-1.0), 0.15865525393145707, 1e-15);
  EXPECT_NEAR(normal_cdf(1.96), 0.9750021048517795, 1e-15);
  EXPECT_NEAR(normal_cdf(-8.0) / 6.22096057427178e-16, 1.0, 1e-12);
}

TEST(Normal, QuantileInvertsCdf) {
  for (double p : {1e-12, 1e-6, 0.01, 0.3, 0.5, 0.77, 0.975, 1 - 1e-9}) {
    EXPECT_NEAR(normal_cdf(normal_quantile(p)) / p, 1.0, 1e-12) << p;
  }
  EXPECT_NEAR(normal_quantile(0.975), 1.959963984540054, 1e-12);
  EXPECT_THROW(normal_quantile(1.5), ConfigError);
}

TEST(GaussHermite, ReproducesNormalMoments) {
  const auto rule = gauss_hermite(20);
  EXPECT_NEAR(rule.weights.sum(), 1.0, 1e-13);
  for (int k = 0; k <= 38; ++k) {
    const double m = (rule.weights.array() * rule.nodes.array().pow(k)).sum();
    const double expected = (k % 2) ? 0.0 : double_factorial(k - 1);
    // Odd moments cancel large terms of size about E|Z|^k, which sets the rounding scale.
    const double scale = double_factorial(k % 2 ? k : k - 1);
    EXPECT_NEAR(m, expected, 1e-10 * std::max(1.0, scale)) << k;
  }
}

TEST(Metrics, HandComputedGroupErrors) {
  // Scores and labels arranged so group errors are 0, 1/2, 1/3, 1.
  const Eigen::VectorXd scores = (Eigen::VectorXd(8) << 1, 2, -1, 1, 0, -1, 2, 1).finished();
  const std::vector<int> labels = {1, 1, 1, 1, -1, -1, -1, -1};
  const std::vector<int> groups = {0, 0, 1, 1, 2, 2, 2, 3};
  GroupErrorAccumulator acc;
  acc.add(scores, labels, groups);
  const auto m = acc.finish();
  EXPECT_DOUBLE_EQ(m.per_group_error[0], 0.0);
  EXPECT_DOUBLE_EQ(m.per_group_error[1], 0.5);
  EXPECT_DOUBLE_EQ(m.per_group_error[2], 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(m.per_group_error[3], 1.0);
  EXPECT_EQ(m.worst_group_id, 3);
  EXPECT_DOUBLE_EQ(m.average_error, 4.0 / 8.0);
  const auto balanced = acc.finish(std::array<double, 4>{1, 1, 1, 1});
  EXPECT_DOUBLE_EQ(balanced.average_error, (0.0 + 0.5 + 2.0 / 3.0 + 1.0) / 4.0);
}

TEST(Metrics, EmptyGroupIsAnError) {
  GroupErrorAccumulator acc;
  acc.add(Eigen::VectorXd::Ones(2), std::vector<int>{1, -1}, std::vector<int>{0, 2});
  EXPECT_THROW(acc.finish(), ConfigError);
}

TEST(Memorization, RecoversPlantedCoefficients) {
  const auto ds = gen_explicit({40, 10, 500, 1.0, 0.01, 1.0, 3});
  Stream rng(5, "planted", 0);
  Eigen::VectorXd s(ds.size());
  for (Index i = 0; i < s.size(); ++i) s[i] = rng.normal();
  Eigen::VectorXd w = Eigen::VectorXd::Zero(ds.dim());
  w[0] = 0.7;
  w[1] = -0.2;
  w.tail(500) = ds.features().rightCols(500).transpose() * s;
  const auto r = representer_coeffs(LinearModel(w, ds.layout()), ds);
  EXPECT_LT((r.coeffs - s).lpNorm<Eigen::Infinity>(), 1e-6);
  EXPECT_LT(r.residual, 1e-6 * w.norm());
  EXPECT_NEAR(r.sigma_noise_sq, 1.0, 0.05);
}

TEST(Memorization, CountsStrictlyAboveThreshold) {
  MemorizationReport r;
  r.coeffs = (Eigen::VectorXd(5) << 0.5, -0.9, 0.9, 2.0, -3.0).finished();
  r.group_ids = {0, 2, 0, 1, 3};
  r.sigma_noise_sq = 1.0;
  EXPECT_DOUBLE_EQ(memorization_fraction(r, 0.9, MemorizationSubset::all), 2.0 / 5.0);
  EXPECT_DOUBLE_EQ(memorization_fraction(r, 0.9, MemorizationSubset::majority), 0.0);
  EXPECT_DOUBLE_EQ(memorization_fraction(r, 0.4, MemorizationSubset::majority), 1.0);
  double prev = 1.0;
  for (double g : {0.1, 0.5, 0.95, 1.5, 2.5, 4.0}) {
    const double f = memorization_fraction(r, g, MemorizationSubset::all);
    EXPECT_LE(f, prev);
    prev = f;
  }
  r.group_ids = {1, 1, 3, 3, 1};
  EXPECT_THROW(memorization_fraction(r, 0.9, MemorizationSubset::majority), ConfigError);
}

TEST(Theory, BoundsAtDefaultConstants) {
  const TheoryParams p{};
  EXPECT_NEAR(spurious_norm_bound(p), 1364.48326125, 1e-8);
  EXPECT_NEAR(core_norm_constant(p), 0.12663690530663801, 1e-12);
  EXPECT_NEAR(core_norm_bound(p), 0.12663690530663801 * 2100, 1e-9);
  EXPECT_NEAR(spurious_norm_bound(p) - 1.3125 * 1.3125, 2.61 * 2.61 * 2.0005 * 100, 1e-9);
}

TEST(Theory, TradeoffQuantitiesHandCase) {
  TheoryParams p{};
  p.sigma_core_sq = 1.0;
  const auto q = tradeoff_quantities(LinearModel(Eigen::Vector2d(1.0, 0.0), BlockLayout{1, 1, 0}), p);
  EXPECT_NEAR(q.phi_arg_err, -1.001, 1e-15);
  EXPECT_NEAR(q.err_bound, 0.15741340419228006, 1e-12);
  EXPECT_NEAR(q.phi_arg_mem, 1.0 - 1.0005 * 0.9 - 1e-3 - 1.0, 1e-15);
  EXPECT_THROW(tradeoff_quantities(LinearModel(Eigen::Vector3d(0, 0, 1), BlockLayout{1, 1, 1}), p),
               ConfigError);
}

TEST(Theory, AnalyticErrorMatchesSampledTestSet) {
  // Balanced test set of 250k per group; sampling SE of each group error <= 1e-3.
  const ExplicitConfig cfg{2000, 100, 3, 1.0, 0.25, 1.0, 17};
  const auto test = gen_test(cfg, 250000);
  const TheoryParams p = TheoryParams::from_config(cfg);
  const LinearModel m((Eigen::VectorXd(5) << 0.8, 0.9, 0.3, -0.5, 0.2).finished(), BlockLayout{1, 1, 3});
  const auto analytic = analytic_group_errors(m, p);
  const auto empirical = group_errors(m, test);
  for (int g = 0; g < 4; ++g)
    EXPECT_NEAR(analytic.per_group_error[g], empirical.per_group_error[g], 3e-3) << g;
  EXPECT_NEAR(analytic.average_error,
              p.p_maj / 2 * (analytic.per_group_error[0] + analytic.per_group_error[2]) +
                  (1 - p.p_maj) / 2 * (analytic.per_group_error[1] + analytic.per_group_error[3]),
              1e-15);
}

TEST(Theory, AnalyticError2dEdgeCases) {
  TheoryParams p{};
  p.sigma_core_sq = 4.0;
  p.sigma_spu_sq = 1.0;
  const auto m = analytic_group_error_2d(LinearModel(Eigen::Vector2d(1.0, 0.0)), p);
  for (int g = 0; g < 4; ++g) EXPECT_NEAR(m.per_group_error[g], normal_cdf(-0.5), 1e-15);
  // Deterministic scores: a zero score counts as an error.
  p.sigma_core_sq = 0.0;
  p.sigma_spu_sq = 0.0;
  const auto d = analytic_group_error_2d(LinearModel(Eigen::Vector2d(1.0, 1.0)), p);
  EXPECT_DOUBLE_EQ(d.per_group_error[0], 0.0);
  EXPECT_DOUBLE_EQ(d.per_group_error[1], 1.0);
  EXPECT_THROW(analytic_group_error_2d(LinearModel(Eigen::Vector3d(1, 0, 1)), p), ConfigError);
}

TEST(Theory, PopulationGradientVanishesAtMinimizer) {
  for (double sc2 : {1.0, 4.0, 16.0}) {
    TheoryParams p{};
    p.sigma_core_sq = sc2;
    p.sigma_spu_sq = 0.5;
    const auto g = population_gradient_rw(population_minimizer(p), p);
    EXPECT_LT(g.gradient.lpNorm<Eigen::Infinity>(), 1e-9) << sc2;
    EXPECT_LT(g.change, 1e-9);
  }
}

TEST(Theory, PopulationGradientMatchesMonteCarlo) {
  TheoryParams p{};
  p.sigma_core_sq = 2.0;
  p.sigma_spu_sq = 0.3;
  const Eigen::Vector2d w(0.4, 0.9);
  Eigen::Vector2d se;
  const Eigen::Vector2d mc = mc_gradient(w, 2.0, 0.3, 2000000, &se);
  const auto g = population_gradient_rw(w, p);
  for (int k = 0; k < 2; ++k) EXPECT_NEAR(g.gradient[k], mc[k], 4.0 * se[k]) << k;
}

TEST(Theory, PopulationGradientIndependentOfMajorityFraction) {
  TheoryParams a{};
  a.sigma_core_sq = 3.0;
  TheoryParams b = a;
  b.p_maj = 0.55;
  const Eigen::Vector2d w(-0.2, 1.1);
  EXPECT_LT((population_gradient_rw(w, a).gradient - population_gradient_rw(w, b).gradient)
                .lpNorm<Eigen::Infinity>(),
            1e-12);
  b.p_maj = 1.0;
  EXPECT_THROW(population_gradient_rw(w, b), ConfigError);
}

TEST(Theory, AsymptoticVarianceBoundHandValue) {
  TheoryParams p{};
  p.sigma_core_sq = 8.0;
  p.sigma_spu_sq = 0.5;
  const auto v = asymptotic_variance_bound(p);
  EXPECT_NEAR(v[0], 47.147159426119735, 1e-10);
  EXPECT_NEAR(v[1], 252.32461248423337, 1e-10);
}

TEST(Theory, AsymptoticVarianceCheckRuns) {
  TheoryParams p{};
  p.sigma_core_sq = 1.0;
  p.sigma_spu_sq = 0.5;
  const auto r = asymptotic_variance_check(p, 1000, 30, 11, 200);
  EXPECT_EQ(r.used_trials + r.excluded_trials, 30);
  EXPECT_GT(r.used_trials, 25);
  EXPECT_NEAR(r.mean_w[0], 2.0, 0.2);
  EXPECT_NEAR(r.mean_w[1], 0.0, 0.2);
  EXPECT_GE(r.bootstrap_pass_fraction, 0.0);
  EXPECT_LE(r.bootstrap_pass_fraction, 1.0);
  p.N = 3;
  EXPECT_THROW(asymptotic_variance_check(p, 1000, 5, 1), ConfigError);
}

TEST(Theory, HandBuiltSeparatorsOnHighDimensionalDraw) {
  // N much larger than n keeps the noise cross-terms, of size 2 sqrt(n / N), small.
  const ExplicitConfig cfg{40, 4, 40000, 1.0, 0.01, 1.0, 21};
  const auto ds = gen_explicit(cfg);
  const TheoryParams p = TheoryParams::from_config(cfg);
  const auto memall = construct_w_use_core_memall(ds, 2.0 / p.sigma_noise_sq);
  EXPECT_GE(min_margin(memall, ds), 1.0);
  const auto r = verify_norm_bounds(ds, p);
  EXPECT_TRUE(r.use_spu_separates);
  EXPECT_TRUE(r.spurious_bound_holds);
  EXPECT_TRUE(r.minnorm_le_use_spu);
  EXPECT_TRUE(r.core_ge_minnorm);
  EXPECT_DOUBLE_EQ(r.use_spu.w_core(), 0.0);
  EXPECT_DOUBLE_EQ(r.core.w_spu(), 0.0);
  EXPECT_GE(min_margin(r.core, ds), 1.0 - 1e-6);
  EXPECT_GE(min_margin(r.minnorm, ds), 1.0 - 1e-6);
  EXPECT_NEAR(r.minnorm.weights().squaredNorm(), r.minnorm_sq_norm, 1e-6 * r.minnorm_sq_norm);
}

TEST(Theory, ConstructionsRejectWrongLayout) {
  const auto ds = gen_explicit({40, 10, 0, 1.0, 0.01, 1.0, 3});
  EXPECT_THROW(construct_w_use_spu(ds, 1.0, 1.0), ConfigError);
  const auto imp = gen_implicit({.n = 100, .d = 4, .p_maj = 0.9, .seed = 1});
  EXPECT_THROW(construct_w_use_core_memall(imp, 2.0), ConfigError);
}

TEST(Metrics, OracleNegatedAndMinorityOnlyModels) {
  // Four points, one per group, with x = (y, a).
  const Eigen::MatrixXd x = (Eigen::MatrixXd(4, 2) << 1, 1, 1, -1, -1, -1, -1, 1).finished();
  const GroupedDataset ds(x, {1, 1, -1, -1}, {1, -1, -1, 1});
  const auto oracle = group_errors(LinearModel(Eigen::Vector2d(1, 0)), ds);
  EXPECT_DOUBLE_EQ(oracle.worst_group_error, 0.0);
  const auto negated = group_errors(LinearModel(Eigen::Vector2d(-1, 0)), ds);
  EXPECT_DOUBLE_EQ(negated.worst_group_error, 1.0);
  for (double e : negated.per_group_error) EXPECT_DOUBLE_EQ(e, 1.0);
  const auto spurious = group_errors(LinearModel(Eigen::Vector2d(0, 1)), ds);
  EXPECT_EQ(spurious.per_group_error, (std::array<double, 4>{0, 1, 0, 1}));
  EXPECT_DOUBLE_EQ(spurious.worst_group_error, 1.0);
}

TEST(Metrics, RowPermutationInvariance) {
  const auto ds = gen_explicit({60, 20, 0, 1.0, 0.5, 1.0, 8});
  const LinearModel m(Eigen::Vector2d(0.7, 0.4));
  std::vector<Index> perm(static_cast<std::size_t>(ds.size()));
  for (Index i = 0; i < ds.size(); ++i) perm[static_cast<std::size_t>(i)] = ds.size() - 1 - i;
  const auto a = group_errors(m, ds);
  const auto b = group_errors(m, ds.subset(perm));
  EXPECT_EQ(a.per_group_error, b.per_group_error);
  EXPECT_EQ(a.average_error, b.average_error);
}

TEST(Memorization, EdgeCases) {
  const auto ds = gen_explicit({40, 10, 300, 1.0, 0.01, 1.0, 2});
  Eigen::VectorXd w = Eigen::VectorXd::Zero(ds.dim());
  w[0] = 1.0;
  const auto zero = representer_coeffs(LinearModel(w, ds.layout()), ds);
  EXPECT_EQ(zero.coeffs.lpNorm<Eigen::Infinity>(), 0.0);
  EXPECT_EQ(zero.residual, 0.0);

  MemorizationReport r;
  r.coeffs = (Eigen::VectorXd(3) << 1e-12, -2.0, 0.5).finished();
  r.group_ids = {0, 1, 2};
  r.sigma_noise_sq = 3.0;
  EXPECT_DOUBLE_EQ(memorization_fraction(r, 0.0, MemorizationSubset::all), 1.0);

  const auto no_noise = gen_explicit({40, 10, 0, 1.0, 0.01, 1.0, 2});
  EXPECT_THROW(representer_coeffs(LinearModel(Eigen::Vector2d(1, 0), no_noise.layout()), no_noise),
               ConfigError);
}

TEST(Memorization, CountingOracle) {
  // Exactly k of the majority coefficients exceed gamma^2 / sigma^2 = 0.45.
  const int n_maj = 40;
  const int k = 13;
  MemorizationReport r;
  r.coeffs = Eigen::VectorXd::Constant(n_maj + 10, 0.2);
  r.group_ids.assign(n_maj + 10, 0);
  for (int i = n_maj; i < n_maj + 10; ++i) {
    r.group_ids[static_cast<std::size_t>(i)] = 3;
    r.coeffs[i] = 5.0;
  }
  for (int i = 0; i < k; ++i) r.coeffs[3 * i] = (i % 2 ? -1.0 : 1.0);
  r.sigma_noise_sq = 2.0;
  EXPECT_DOUBLE_EQ(memorization_fraction(r, 0.9, MemorizationSubset::majority),
                   static_cast<double>(k) / n_maj);
  EXPECT_DOUBLE_EQ(memorization_fraction(r, 0.9, MemorizationSubset::all),
                   static_cast<double>(k + 10) / (n_maj + 10));
}

TEST(Memorization, MinNormSolutionsLieInTrainingSpan) {
  const auto ds = gen_explicit({40, 4, 2000, 1.0, 0.01, 1.0, 6});
  const auto sep = min_norm_separator(ds);
  ASSERT_TRUE(sep.separable);
  const auto r = representer_coeffs(*sep.model, ds);
  EXPECT_LE(r.residual, 1e-6 * sep.model->noise().norm());
}

TEST(Theory, TradeoffExamples) {
  TheoryParams p{};
  p.sigma_core_sq = 1.0;
  TheoryConstants c;
  c.c3 = 0.0;
  const auto q = tradeoff_quantities(LinearModel(Eigen::Vector2d(2.0, 0.0), BlockLayout{1, 1, 0}), p, c);
  EXPECT_NEAR(q.phi_arg_err, -1.0, 1e-15);
  EXPECT_NEAR(q.err_bound + c.c4, 0.15865525393145707, 1e-14);
  double prev = -1.0;
  for (double ws : {0.0, 0.5, 1.0, 2.0, 4.0}) {
    const auto t = tradeoff_quantities(LinearModel(Eigen::Vector2d(1.0, ws), BlockLayout{1, 1, 0}), p);
    EXPECT_GT(t.err_bound, prev);
    prev = t.err_bound;
  }
}

TEST(Theory, AnalyticError2dExamples) {
  TheoryParams p{};
  p.sigma_core_sq = 1.0;
  p.sigma_spu_sq = 0.0;
  const auto core = analytic_group_error_2d(LinearModel(Eigen::Vector2d(1, 0)), p);
  for (double e : core.per_group_error) EXPECT_NEAR(e, 0.15865525393145707, 1e-15);
  const auto spu = analytic_group_error_2d(LinearModel(Eigen::Vector2d(0, 1)), p);
  EXPECT_EQ(spu.per_group_error, (std::array<double, 4>{0, 1, 0, 1}));
  EXPECT_THROW(analytic_group_error_2d(LinearModel(Eigen::Vector2d(0, 0)), p), ConfigError);
}

TEST(Theory, SpuriousGradientAntisymmetricInMajorityFraction) {
  for (double pm : {0.6, 0.9, 0.99}) {
    TheoryParams a{};
    a.sigma_core_sq = 2.0;
    a.sigma_spu_sq = 0.3;
    a.p_maj = pm;
    TheoryParams b = a;
    b.p_maj = 1.0 - pm;
    const Eigen::Vector2d w(0.7, 0.0);
    EXPECT_NEAR(population_gradient_rw(w, a).gradient[1], -population_gradient_rw(w, b).gradient[1],
                1e-12);
  }
}

TEST(Theory, ConstructionEdgeCases) {
  const auto ds = gen_explicit({40, 0, 100, 1.0, 0.01, 1.0, 4});
  const auto spu = construct_w_use_spu(ds, 1.3125, 2.61);
  EXPECT_EQ(spu.noise().lpNorm<Eigen::Infinity>(), 0.0);
  EXPECT_DOUBLE_EQ(spu.w_spu(), 1.3125);
  const auto mem = construct_w_use_core_memall(ds, 0.0);
  EXPECT_EQ(mem.weights().lpNorm<Eigen::Infinity>(), 0.0);
}

TEST(Theory, CoreCostGrowsWithMajorityFraction) {
  // Ratio of the core-only min-norm to the unconstrained min-norm, averaged over
  // three seeds, increases with p_maj at fixed n.
  double prev = 0.0;
  for (auto [n_maj, n_min] : {std::pair<Index, Index>{100, 100}, {180, 20}, {198, 2}}) {
    double ratio = 0.0;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const ExplicitConfig cfg{n_maj, n_min, 2000, 1.0, 0.01, 0.05, seed};
      const auto ds = gen_explicit(cfg);
      const auto r = verify_norm_bounds(ds, TheoryParams::from_config(cfg));
      EXPECT_GE(r.core_sq_norm, r.minnorm_sq_norm * (1 - 1e-9));
      ratio += r.core_sq_norm / r.minnorm_sq_norm / 3.0;
    }
    EXPECT_GT(ratio, prev) << n_maj;
    prev = ratio;
  }
}
