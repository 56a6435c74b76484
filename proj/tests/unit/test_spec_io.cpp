#include <gtest/gtest.h>

#include <string>

#include "spurlab/spec_io.hpp"
#include "spurlab/theory_checks.hpp"

using namespace spurlab;

namespace {

std::string error_of(const std::string& text) {
  try {
    sweep_from_json(parse_document(text));
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

const char* kToml = R"(
kind = "model_size"
name = "small"
seed = 7
trials = 2
model_sizes = [10, 400]
objectives = ["reweight", "erm"]
lambdas = [1e-9]

[implicit]
n = 200
d = 3
p_maj = 0.9
sigma_core_sq = 1.0
sigma_spu_sq = 0.5
)";

const char* kJson = R"({
  "kind": "model_size", "name": "small", "seed": 7, "trials": 2,
  "model_sizes": [10, 400], "objectives": ["reweight", "erm"], "lambdas": [1e-9],
  "implicit": {"n": 200, "d": 3, "p_maj": 0.9, "sigma_core_sq": 1.0, "sigma_spu_sq": 0.5}
})";

}  // namespace

TEST(SpecIo, TomlAndJsonDescribeTheSameSweep) {
  const auto a = sweep_from_json(parse_document(kToml));
  const auto b = sweep_from_json(parse_document(kJson));
  EXPECT_EQ(to_json(a), to_json(b));
  EXPECT_EQ(a.spec.seed, 7u);
  EXPECT_EQ(a.spec.trials, 2);
  ASSERT_EQ(a.spec.model_sizes.size(), 2u);
  EXPECT_EQ(a.spec.model_sizes[1], 400);
  ASSERT_EQ(a.spec.objectives.size(), 2u);
  EXPECT_EQ(a.spec.objectives[1], Objective::erm);
  EXPECT_DOUBLE_EQ(a.spec.implicit.sigma_spu_sq, 0.5);
  EXPECT_EQ(a.spec.implicit.d, 3);
}

TEST(SpecIo, SerializedDocumentParsesBackIdentically) {
  const auto a = sweep_from_json(parse_document(kToml));
  const Json j = to_json(a);
  const auto b = sweep_from_json(j);
  EXPECT_EQ(j, to_json(b));
}

TEST(SpecIo, DefaultsWhenKeysAreOmitted) {
  const auto d = sweep_from_json(parse_document("{}"));
  EXPECT_EQ(d.kind, SweepKind::model_size);
  EXPECT_EQ(d.spec.setting, Setting::implicit);
  EXPECT_EQ(d.spec.test_size_per_group, 2500);
  ASSERT_EQ(d.spec.lambdas.size(), 1u);
  EXPECT_DOUBLE_EQ(d.spec.lambdas[0], 1e-9);
}

TEST(SpecIo, ErrorsNameTheOffendingField) {
  EXPECT_NE(error_of(R"({"trails": 3})").find("trails: unknown field"), std::string::npos);
  EXPECT_NE(error_of(R"({"implicit": {"n": 200, "sigma": 1}})").find("implicit.sigma"),
            std::string::npos);
  EXPECT_NE(error_of(R"({"trials": "three"})").find("trials: expected an integer"),
            std::string::npos);
  EXPECT_NE(error_of(R"({"seed": -1})").find("seed"), std::string::npos);
  EXPECT_NE(error_of(R"({"objectives": ["erm", "dro"]})").find("objectives[1]"),
            std::string::npos);
  EXPECT_NE(error_of(R"({"kind": "grid"})").find("kind"), std::string::npos);
  EXPECT_NE(error_of(R"({"solver": "newton"})").find("solver"), std::string::npos);
  EXPECT_NE(error_of(R"({"trials": 0})").find("trials"), std::string::npos);
  EXPECT_NE(error_of("trials = [1, 2"), "");
  EXPECT_NE(error_of("{\"trials\": "), "");
}

TEST(SpecIo, ValidatesOperationPreconditions) {
  EXPECT_NE(error_of(R"({"kind": "knob"})"), "");
  EXPECT_NE(error_of(R"({"kind": "reg"})"), "");
  EXPECT_NE(error_of(R"({"kind": "objective", "objectives": ["erm"]})"), "");
  EXPECT_EQ(error_of(R"({"kind": "objective", "objectives": ["erm", "subsample"]})"), "");
  EXPECT_NE(error_of(R"({"kind": "explicit_vs_implicit", "objectives": ["erm", "reweight"]})"),
            "");
  EXPECT_EQ(error_of(R"({"kind": "reg", "lambdas": [1e-9, 1e-3]})"), "");
  EXPECT_EQ(error_of(R"({"kind": "knob", "knob_grid": {"p_maj": [0.9], "ratio_spu_core": [1]}})"),
            "");
}

TEST(SpecIo, MatchedComparisonTakesItsTable) {
  const auto d = sweep_from_json(parse_document(R"(
kind = "explicit_vs_implicit"
objectives = ["erm"]
model_sizes = [0, 10]
[matched]
n = 300
p_maj = 0.9
sigma_noise_sq = 2.0
)"));
  EXPECT_EQ(d.kind, SweepKind::explicit_vs_implicit);
  EXPECT_EQ(d.matched.n, 300);
  EXPECT_DOUBLE_EQ(d.matched.sigma_noise_sq, 2.0);
  EXPECT_EQ(d.matched.objective, Objective::erm);
  ASSERT_EQ(d.matched.model_sizes.size(), 2u);
  EXPECT_EQ(to_json(d)["matched"]["n"], 300);
}

TEST(SpecIo, TheoryParamsOverrideOnlyGivenKeys) {
  const auto p = theory_params_from_json(parse_document("sigma_spu_sq = 0.25\nN = 10\n"));
  EXPECT_DOUBLE_EQ(p.sigma_spu_sq, 0.25);
  EXPECT_EQ(p.N, 10);
  EXPECT_DOUBLE_EQ(p.p_maj, TheoryParams{}.p_maj);
  EXPECT_THROW(theory_params_from_json(parse_document("sigma = 1\n")), ConfigError);
  const Json j = to_json(p);
  EXPECT_EQ(j["N"], 10);
  EXPECT_DOUBLE_EQ(theory_params_from_json(j).sigma_spu_sq, 0.25);
}

TEST(SpecIo, TomlDatesAreRejected) {
  EXPECT_THROW(parse_document("when = 1979-05-27\n"), ConfigError);
}

TEST(TheoryChecks, RegistryIsComplete) {
  for (const char* name : {"popmin", "asymvar", "underparam", "mechanism", "tradeoff"}) {
    const auto* c = find_check(name);
    ASSERT_NE(c, nullptr) << name;
    EXPECT_FALSE(c->description.empty());
  }
  EXPECT_EQ(find_check("nope"), nullptr);
}

TEST(TheoryChecks, PopulationMinimizerCheckPasses) {
  const auto r = check_popmin({});
  EXPECT_TRUE(r.passed);
  ASSERT_EQ(r.report["cases"].size(), 8u);
  for (const auto& c : r.report["cases"]) EXPECT_LE(c["gradient_norm"].get<double>(), 1e-6);
}

TEST(TheoryChecks, UnderparameterizedCheckOnASmallDraw) {
  CheckContext ctx;
  ctx.seed = 3;
  ctx.params = {{"n_maj", 20000}, {"n_min", 200}};
  const auto r = check_underparam(ctx);
  EXPECT_NEAR(r.report["params"]["p_maj"].get<double>(), 20000.0 / 20200.0, 1e-15);
  EXPECT_TRUE(r.report["converged"].get<bool>());
  EXPECT_EQ(r.passed, r.report["test"]["worst_group_error"].get<double>() < 0.25);
  EXPECT_NEAR(r.report["population_minimizer_worst_group"].get<double>(), 0.15865525393145707,
              1e-12);
  ctx.params = {{"N", 5}};
  EXPECT_THROW(check_underparam(ctx), ConfigError);
}

TEST(TheoryChecks, TradeoffReportIsConsistent) {
  CheckContext ctx;
  ctx.seed = 5;
  ctx.params = {{"n_maj", 200}, {"n_min", 10}, {"N", 4200}, {"sigma_noise_sq", 200.0 / 3600.0}};
  const auto r = check_tradeoff(ctx);
  const auto& j = r.report;
  EXPECT_EQ(j["err_bound_holds"].get<bool>(),
            j["worst_group_error"].get<double>() >= j["err_bound"].get<double>());
  EXPECT_EQ(r.passed, j["err_bound_holds"].get<bool>() && j["mem_bound_holds"].get<bool>());
  EXPECT_GE(j["delta_maj"].get<double>(), 0.0);
  EXPECT_LE(j["delta_maj"].get<double>(), 1.0);
}

TEST(TheoryChecks, SettingsOverrideDefaults) {
  CheckContext ctx;
  ctx.settings = {{"tolerance", 0.0}};
  const auto r = check_popmin(ctx);
  EXPECT_DOUBLE_EQ(r.report["tolerance"].get<double>(), 0.0);
}
