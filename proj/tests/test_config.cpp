#include <string>

#include <gtest/gtest.h>

#include "mmrssa/commands.hpp"
#include "mmrssa/config.hpp"

using namespace mmrssa;

namespace {

const std::string kMinimal = R"({
  "schema_version": 1,
  "model": {
    "kind": "segway_additive",
    "modes": [
      {"weight": 1.0, "mu_d": [0, 0, 0, 0], "sigma_d": [[0,0,0,0],[0,0,0,0],[0,0,0,0],[0,0,0,0]]}
    ]
  }
})";

// Parses `text` and returns the error, or fails the test if it parsed.
ConfigError expect_error(const std::string& text) {
  try {
    (void)parse_run_config(ConfigDocument::from_text(text));
  } catch (const ConfigError& e) {
    return e;
  }
  ADD_FAILURE() << "config was accepted";
  return ConfigError("", "");
}

std::string with(const std::string& base, const std::string& from, const std::string& to) {
  std::string s = base;
  const auto p = s.find(from);
  EXPECT_NE(p, std::string::npos) << from;
  s.replace(p, from.size(), to);
  return s;
}

}  // namespace

TEST(ConfigShipped, AllParse) {
  for (const char* name : {"segway_additive", "segway_multiplicative", "toy_uncontrollable"}) {
    const auto rc = parse_run_config(ConfigDocument::from_file(std::string(MMRSSA_CONFIG_DIR) + "/" + name + ".json"));
    EXPECT_TRUE(rc.model) << name;
    EXPECT_TRUE(rc.solve) << name;
  }
}

TEST(ConfigShipped, AdditiveConfigCarriesReferenceModes) {
  const auto rc = parse_run_config(ConfigDocument::from_file(std::string(MMRSSA_CONFIG_DIR) + "/segway_additive.json"));
  EXPECT_EQ(rc.solver, SolverKind::additive);
  EXPECT_EQ(rc.eps_f, 0.01);
  const ModeList modes = rc.model->eval(Vector{0, 0.02, 0.1, 0.3});
  const ModeList ref = segway::segway_additive_model(segway::SegwayParams{}, segway::reference_additive_modes())
                           .eval(Vector{0, 0.02, 0.1, 0.3});
  ASSERT_EQ(modes.size(), ref.size());
  for (std::size_t i = 0; i < modes.size(); ++i) {
    EXPECT_EQ(modes[i].weight, ref[i].weight);
    EXPECT_EQ(modes[i].mu_f, ref[i].mu_f);
    EXPECT_EQ(modes[i].sigma_f, ref[i].sigma_f);
  }
}

TEST(ConfigParse, MinimalUsesDefaults) {
  const auto rc = parse_run_config(ConfigDocument::from_text(kMinimal));
  EXPECT_EQ(rc.solver, SolverKind::multiplicative);
  EXPECT_EQ(rc.eps_f, 0.01);
  EXPECT_EQ(rc.gamma.slope, 1.0);
  EXPECT_EQ(rc.index.kind(), ConfiguredIndex::Kind::tilt);
  EXPECT_FALSE(rc.solve);
}

TEST(ConfigErrors, UnknownTopLevelKeyIsLocated) {
  const auto e = expect_error(with(kMinimal, "\"schema_version\": 1,", "\"schema_version\": 1,\n  \"epsf\": 0.1,"));
  EXPECT_EQ(e.path(), "epsf");
  EXPECT_EQ(e.line(), 3);
  EXPECT_EQ(e.column(), 11);
  EXPECT_NE(std::string(e.what()).find("unknown field"), std::string::npos);
}

TEST(ConfigErrors, UnknownNestedKeyIsLocated) {
  const auto e = expect_error(with(kMinimal, "\"weight\": 1.0,", "\"weight\": 1.0, \"mu\": 3,"));
  EXPECT_EQ(e.path(), "model.modes[0].mu");
  EXPECT_EQ(e.line(), 6);
}

TEST(ConfigErrors, MalformedJsonReportsLineAndColumn) {
  const auto e = expect_error("{\n  \"schema_version\": 1,\n  \"model\": {\n    \"kind\": \"segway_additive\",,\n  }\n}");
  EXPECT_EQ(e.line(), 4);
  EXPECT_GT(e.column(), 0);
  EXPECT_NE(std::string(e.what()).find("malformed JSON"), std::string::npos);
}

TEST(ConfigErrors, SchemaVersion) {
  EXPECT_EQ(expect_error(with(kMinimal, "\"schema_version\": 1", "\"schema_version\": 2")).path(), "schema_version");
  EXPECT_EQ(expect_error(with(kMinimal, "\"schema_version\": 1,", "")).path(), "");
}

TEST(ConfigErrors, ValueProblems) {
  EXPECT_EQ(expect_error(with(kMinimal, "\"weight\": 1.0", "\"weight\": 0.5")).path(), "model.modes");
  EXPECT_EQ(expect_error(with(kMinimal, "\"mu_d\": [0, 0, 0, 0]", "\"mu_d\": [0, 0, 0]")).path(), "model.modes[0].mu_d");
  EXPECT_EQ(expect_error(with(kMinimal, "[[0,0,0,0],[0,0,0,0]", "[[-1,0,0,0],[0,0,0,0]")).path(),
            "model.modes[0].sigma_d");
  EXPECT_EQ(expect_error(with(kMinimal, "\"segway_additive\"", "\"segway\"")).path(), "model.kind");
  EXPECT_EQ(expect_error(with(kMinimal, "\"schema_version\": 1,", "\"schema_version\": 1, \"eps_f\": 1.0,")).path(),
            "eps_f");
  EXPECT_EQ(expect_error(with(kMinimal, "\"schema_version\": 1,", "\"schema_version\": 1, \"seed\": -3,")).path(),
            "seed");
  EXPECT_EQ(expect_error(with(kMinimal, "\"schema_version\": 1,", "\"schema_version\": 1, \"eps_f\": \"x\",")).path(),
            "eps_f");
}

TEST(ConfigErrors, SolverMustMatchModel) {
  const std::string mult = R"({"schema_version": 1,
    "model": {"kind": "segway_multiplicative", "km_modes": [{"weight": 1, "mu_k": 2.4, "sigma_k": 0.05}]},
    "solver": {"kind": "additive"}})";
  EXPECT_EQ(expect_error(mult).path(), "solver");
}

TEST(ConfigErrors, GenericModelNeedsAffineIndex) {
  const std::string generic = R"({"schema_version": 1,
    "model": {"kind": "generic", "state_dim": 1, "control_dim": 1,
              "modes": [{"weight": 1, "mu_f": [1], "sigma_f": [[0]], "mu_g": [[1]]}],
              "control_bounds": {"lower": [-1], "upper": [1]}}})";
  EXPECT_NE(std::string(expect_error(generic).what()).find("missing required field 'safety_index'"), std::string::npos);
  const std::string tilt = with(generic, "\"schema_version\": 1,", "\"schema_version\": 1, \"safety_index\": {\"kind\": \"tilt\"},");
  EXPECT_EQ(expect_error(tilt).path(), "safety_index");
}

TEST(ConfigErrors, SectionRequirements) {
  EXPECT_EQ(expect_error(with(kMinimal, "\"schema_version\": 1,", "\"schema_version\": 1, \"simulate\": {},")).path(),
            "simulate");
  EXPECT_EQ(
      expect_error(with(kMinimal, "\"schema_version\": 1,", "\"schema_version\": 1, \"compare\": {\"points\": 5},"))
          .path(),
      "compare");
  EXPECT_EQ(expect_error(with(kMinimal, "\"schema_version\": 1,",
                              "\"schema_version\": 1, \"certify\": {\"sampler\": \"grid\"},"))
                .path(),
            "certify.sampler");
}

TEST(ConfigDocument, MissingFile) {
  EXPECT_THROW(ConfigDocument::from_file("/nonexistent/config.json"), ConfigError);
}

TEST(Overrides, FlagsTakePrecedence) {
  RunConfig rc = parse_run_config(ConfigDocument::from_text(kMinimal));
  apply_overrides(rc, {7, std::string("additive"), 0.05, 0});
  EXPECT_EQ(rc.seed, 7u);
  EXPECT_EQ(rc.solver, SolverKind::additive);
  EXPECT_EQ(rc.eps_f, 0.05);
  EXPECT_THROW(apply_overrides(rc, {std::nullopt, std::nullopt, 1.5, 0}), ConfigError);
  EXPECT_THROW(apply_overrides(rc, {std::nullopt, std::string("quadratic"), std::nullopt, 0}), ConfigError);
}
