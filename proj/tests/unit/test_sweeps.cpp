#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <sstream>

#include "spurlab/csv.hpp"
#include "spurlab/sweeps.hpp"

using namespace spurlab;

namespace {

SweepSpec small_implicit() {
  SweepSpec s;
  s.implicit.n = 200;
  s.implicit.d = 10;
  s.model_sizes = {1, 20, 400};
  s.objectives = {Objective::erm, Objective::reweight, Objective::subsample};
  s.test_size_per_group = 100;
  s.test_chunk_rows = 150;
  s.seed = 4;
  return s;
}

std::string to_csv(const std::vector<SweepRow>& rows, bool wall = false) {
  std::ostringstream os;
  write_results(os, rows, wall);
  return os.str();
}

SweepRow sample_row(Stream& rng) {
  SweepRow r;
  r.setting = "implicit";
  r.objective = "reweight";
  r.lambda = rng.uniform() * 1e-3;
  r.model_size = static_cast<Index>(rng.below(10000));
  r.p_maj = rng.uniform();
  r.ratio_spu_core = 1.0 / 3.0;
  r.seed = rng();
  std::array<double, 4> e{};
  for (auto& v : e) v = rng.uniform();
  r.train = make_group_metrics(e, {1, 2, 3, 4});
  for (auto& v : e) v = rng.uniform();
  r.test = make_group_metrics(e, {1, 1, 1, 1});
  r.converged = rng.below(2) == 1;
  r.iterations = static_cast<int>(rng.below(20000));
  r.grad_norm = rng.uniform() * 1e-7;
  r.train_size = 600;
  r.wall_time = rng.uniform();
  return r;
}

}  // namespace

TEST(SweepGrid, LogSpacedSizes) {
  EXPECT_EQ(log_spaced_sizes(100, 3), (std::vector<Index>{0, 1, 10, 100}));
  const auto g = default_explicit_sizes(2100);
  EXPECT_EQ(g.front(), 0);
  EXPECT_EQ(g.back(), 42000);
  EXPECT_TRUE(std::is_sorted(g.begin(), g.end()));
  EXPECT_EQ(std::adjacent_find(g.begin(), g.end()), g.end());
  EXPECT_EQ(default_implicit_sizes().back(), 10000);
}

TEST(SweepSpecTest, CellCountAndValidation) {
  SweepSpec s = small_implicit();
  EXPECT_EQ(s.cell_count(), 9u);
  s.knob_grid = KnobGrid{{0.5, 0.9}, {1.0, 100.0, 0.25}};
  s.trials = 2;
  EXPECT_EQ(s.block_count(), 12u);
  EXPECT_EQ(s.cell_count(), 108u);

  auto expect_field = [](SweepSpec bad, const std::string& field) {
    try {
      bad.validate();
      FAIL() << "accepted invalid " << field;
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find(field), std::string::npos) << e.what();
    }
  };
  SweepSpec bad = small_implicit();
  bad.objectives.clear();
  expect_field(bad, "objectives");
  bad = small_implicit();
  bad.trials = 0;
  expect_field(bad, "trials");
  bad = small_implicit();
  bad.model_sizes = {0, 5};
  expect_field(bad, "model_sizes");
  bad = small_implicit();
  bad.setting = Setting::csv;
  expect_field(bad, "train_path");
  bad = small_implicit();
  bad.knob_grid = KnobGrid{{0.9}, {-1.0}};
  expect_field(bad, "ratio_spu_core");
  // n * p_maj = 191 is not an even group total.
  bad = small_implicit();
  bad.implicit.p_maj = 0.955;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(SweepRun, SmallestModelAndRowShape) {
  SweepSpec s = small_implicit();
  s.objectives = {Objective::reweight};
  s.model_sizes = {1};
  const auto rows = run_sweep(s);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].model_size, 1);
  EXPECT_EQ(rows[0].setting, "implicit");
  for (double e : rows[0].test.per_group_error) {
    EXPECT_GE(e, 0.0);
    EXPECT_LE(e, 1.0);
  }
}

TEST(SweepRun, DeterministicAndOrdered) {
  SweepSpec s = small_implicit();
  s.trials = 2;
  const auto a = run_sweep(s);
  SweepOptions two;
  two.jobs = 2;
  const auto b = run_sweep(s, two);
  ASSERT_EQ(a.size(), 18u);
  EXPECT_EQ(to_csv(a), to_csv(b));
  // Order: trial, model size, objective.
  EXPECT_EQ(a[0].model_size, 1);
  EXPECT_EQ(a[0].objective, "erm");
  EXPECT_EQ(a[1].objective, "reweight");
  EXPECT_EQ(a[3].model_size, 20);
  EXPECT_NE(a[0].seed, a[9].seed);
  for (const auto& r : a) {
    for (const GroupMetrics* m : {&r.train, &r.test}) {
      for (double e : m->per_group_error) {
        EXPECT_GE(e, 0.0);
        EXPECT_LE(e, 1.0);
      }
    }
  }
}

TEST(SweepRun, SubsampleSizeAndSharedData) {
  SweepSpec s = small_implicit();
  s.implicit.p_maj = 0.8;
  const auto rows = run_sweep(s);
  // Groups of 80, 20, 80, 20: subsample keeps 4 x 20 points.
  for (const auto& r : rows) {
    EXPECT_EQ(r.train_size, r.objective == "subsample" ? 80 : 200);
    EXPECT_EQ(r.seed, rows[0].seed);
  }
}

TEST(SweepRun, ModelCallbackSeesEveryModel) {
  SweepSpec s = small_implicit();
  int calls = 0;
  SweepOptions o;
  o.on_model = [&](const SweepRow& r, const Eigen::VectorXd& w) {
    ++calls;
    EXPECT_EQ(w.size(), r.model_size);
  };
  run_sweep(s, o);
  EXPECT_EQ(calls, 9);
}

TEST(SweepRun, TrainMetricsMatchRefit) {
  // The kernel path of the sweep (m > n) must agree with a direct primal fit.
  SweepSpec s = small_implicit();
  s.objectives = {Objective::reweight};
  s.lambdas = {1e-2};
  s.model_sizes = {400};
  Eigen::VectorXd w_sweep;
  SweepOptions o;
  o.on_model = [&](const SweepRow&, const Eigen::VectorXd& w) { w_sweep = w; };
  run_sweep(s, o);

  const auto blocks_seed = derive_seed(s.seed, "trial", 0);
  ImplicitConfig cfg = s.implicit;
  cfg.seed = blocks_seed;
  const auto train = gen_implicit(cfg);
  const auto proj = sample_projection(train.dim(), 400, derive_seed(blocks_seed, "projection", 0));
  TrainConfig tc;
  tc.lambda = 1e-2;
  tc.backend = Backend::primal;
  const auto direct = train_logistic(apply_features(proj, train), tc);
  EXPECT_LT((direct.model.weights() - w_sweep).norm(), 1e-5 * direct.model.weights().norm());
}

TEST(SweepRun, ExplicitZeroNoiseEqualsTwoDimensionalFit) {
  SweepSpec s;
  s.setting = Setting::explicit_features;
  s.explicit_cfg = {200, 20, 0, 1.0, 0.01, 1.0, 0};
  s.model_sizes = {0, 30};
  s.objectives = {Objective::reweight};
  s.test_size_per_group = 200;
  s.seed = 12;
  std::vector<Eigen::VectorXd> weights;
  SweepOptions o;
  o.on_model = [&](const SweepRow&, const Eigen::VectorXd& w) { weights.push_back(w); };
  const auto rows = run_sweep(s, o);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].model_size, 0);
  EXPECT_EQ(rows[0].setting, "explicit");
  ExplicitConfig cfg = s.explicit_cfg;
  cfg.seed = derive_seed(s.seed, "trial", 0);
  const auto direct = train_logistic(gen_explicit(cfg), TrainConfig{});
  ASSERT_EQ(weights[0].size(), 2);
  EXPECT_LT((direct.model.weights() - weights[0]).norm(), 1e-6 * direct.model.weights().norm());
  EXPECT_EQ(weights[1].size(), 32);
}

TEST(SweepRun, RemoveSpuriousChangesOnlyWhatItShould) {
  SweepSpec s = small_implicit();
  s.objectives = {Objective::reweight};
  s.model_sizes = {20};
  const auto plain = run_sweep(s);
  s.remove_spurious = true;
  const auto removed = run_sweep(s);
  ASSERT_EQ(removed.size(), 1u);
  EXPECT_NE(to_csv(plain), to_csv(removed));
}

TEST(SweepRun, CsvSetting) {
  const auto dir = std::filesystem::temp_directory_path() / "spurlab_sweep_csv";
  std::filesystem::create_directories(dir);
  const auto train = gen_explicit({160, 40, 3, 1.0, 0.01, 1.0, 1});
  const auto test = gen_test(ExplicitConfig{160, 40, 3, 1.0, 0.01, 1.0, 1}, 25);
  save_features_csv((dir / "train.csv").string(), train);
  save_features_csv((dir / "test.csv").string(), test);
  SweepSpec s;
  s.setting = Setting::csv;
  s.train_path = (dir / "train.csv").string();
  s.test_path = (dir / "test.csv").string();
  s.model_sizes = {5, 300};
  s.test_chunk_rows = 30;
  const auto rows = run_sweep(s);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1].setting, "csv");
  EXPECT_TRUE(std::isnan(rows[1].p_maj));
  EXPECT_DOUBLE_EQ(rows[1].train.worst_group_error, 0.0);
  std::filesystem::remove_all(dir);
}

TEST(SweepRun, OperationPreconditions) {
  SweepSpec s = small_implicit();
  EXPECT_THROW(run_knob_sweep(s), ConfigError);
  EXPECT_THROW(run_reg_sweep(s), ConfigError);
  s.objectives = {Objective::erm};
  EXPECT_THROW(run_objective_comparison(s), ConfigError);
}

TEST(ExplicitVsImplicit, MatchedParameters) {
  ExplicitVsImplicitSpec e;
  const auto ex = e.explicit_spec();
  EXPECT_DOUBLE_EQ(ex.explicit_cfg.sigma_core_sq, 1.0);
  EXPECT_DOUBLE_EQ(ex.explicit_cfg.sigma_spu_sq, 0.01);
  EXPECT_EQ(ex.explicit_cfg.n(), 3000);
  EXPECT_EQ(ex.explicit_cfg.n_maj, 2700);
  const auto im = e.implicit_spec();
  EXPECT_EQ(im.model_sizes.front(), 1);
  EXPECT_EQ(im.implicit.n, 3000);
}

TEST(Results, RoundTripIsBitExact) {
  Stream rng(3, "rows", 0);
  std::vector<SweepRow> rows;
  for (int k = 0; k < 50; ++k) rows.push_back(sample_row(rng));
  rows[7].converged = false;
  rows[9].p_maj = std::numeric_limits<double>::quiet_NaN();
  for (bool wall : {false, true}) {
    std::istringstream in(to_csv(rows, wall));
    const auto back = read_results(in);
    ASSERT_EQ(back.size(), rows.size());
    EXPECT_EQ(to_csv(back, wall), to_csv(rows, wall));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      EXPECT_EQ(back[i].test.average_error, rows[i].test.average_error);
      EXPECT_EQ(back[i].lambda, rows[i].lambda);
      EXPECT_EQ(back[i].seed, rows[i].seed);
      EXPECT_EQ(back[i].converged, rows[i].converged);
      if (wall) {
        EXPECT_EQ(back[i].wall_time, rows[i].wall_time);
      }
    }
  }
  EXPECT_FALSE(read_results(*std::make_unique<std::istringstream>(to_csv(rows)))[7].converged);
}

TEST(Results, HeaderIsStable) {
  const std::string header = to_csv({}).substr(0, to_csv({}).find('\n'));
  EXPECT_EQ(header,
            "setting,objective,lambda,model_size,p_maj,ratio_spu_core,seed,train_err_g0,"
            "train_err_g1,train_err_g2,train_err_g3,train_avg_err,train_worst_err,test_err_g0,"
            "test_err_g1,test_err_g2,test_err_g3,test_avg_err,test_worst_err,converged,"
            "iterations,grad_norm,train_size");
}

TEST(Results, MalformedInputReportsLine) {
  std::istringstream in(to_csv({}) + "implicit,erm,x\n");
  try {
    read_results(in);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.row(), 2u);
  }
  std::istringstream bad_header("a,b\n");
  EXPECT_THROW(read_results(bad_header), ParseError);
}

TEST(Aggregate, AveragesOverSeeds) {
  std::vector<SweepRow> rows(3);
  for (int k = 0; k < 3; ++k) {
    rows[k].setting = "implicit";
    rows[k].objective = "erm";
    rows[k].model_size = k < 2 ? 10 : 20;
    rows[k].converged = k != 1;
    rows[k].test = make_group_metrics({0.1 * k, 0.0, 0.0, 0.0}, {1, 1, 1, 1});
  }
  const auto curves = aggregate(rows);
  ASSERT_EQ(curves.size(), 1u);
  const auto& c = curves.begin()->second;
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c[0].seeds, 2);
  EXPECT_FALSE(c[0].all_converged);
  EXPECT_DOUBLE_EQ(c[0].test_worst, 0.05);
  EXPECT_DOUBLE_EQ(c[1].test_worst, 0.2);
  EXPECT_EQ(best_point(c, 15).model_size, 10);
  EXPECT_THROW(best_point(c, 5), ConfigError);
}

TEST(Svg, ContainsOneCurvePairPerSeries) {
  SweepSpec s = small_implicit();
  const auto svg = render_svg(run_sweep(s), "test");
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
  std::size_t count = 0;
  for (auto p = svg.find("<polyline"); p != std::string::npos; p = svg.find("<polyline", p + 1))
    ++count;
  EXPECT_EQ(count, 6u);
}
