#include "gaitsf/gaitsf.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace gaitsf;

TEST(Config, DefaultsAreValid) {
  const RunConfig c = default_run_config();
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.baseline.s_up, 0.7);
  EXPECT_EQ(c.sf.support_a, 2);
  EXPECT_EQ(c.sf.c_low, 0.8);
  EXPECT_EQ(c.sf.s_o, 0.7);
  EXPECT_EQ(c.sf.lambda_base, 0.005);
  EXPECT_EQ(c.baseline.weight_decay, 5e-4);
  EXPECT_EQ(c.baseline.frames, 30);
}

TEST(Config, ParsesKeyValueLinesWithComments) {
  RunConfig c = default_run_config();
  apply_config_text(c,
                    "# a comment\n"
                    "\n"
                    "seed = 9\n"
                    "  baseline.s_up=0.55   # trailing\n"
                    "sf.support_a = 3\n"
                    "data.views = 0,90,180\n"
                    "data.conditions = NM, CL\n"
                    "eval.exclude_same_view = false\n"
                    "sf.momentum_cosine = true\n");
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.baseline.s_up, 0.55);
  EXPECT_EQ(c.sf.support_a, 3);
  EXPECT_EQ(c.views, (std::vector<int>{0, 90, 180}));
  EXPECT_FALSE(c.protocol.exclude_same_view);
  EXPECT_EQ(c.sf.momentum.mode, MomentumSchedule::Mode::Cosine);
}

TEST(Config, MalformedLineNamesItsNumber) {
  RunConfig c = default_run_config();
  try {
    apply_config_text(c, "seed = 1\n# ok\nthis line is broken\n", "run.cfg");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("run.cfg:3:"), std::string::npos) << e.what();
  }
}

TEST(Config, UnknownKeysAndBadValuesAreRejected) {
  RunConfig c = default_run_config();
  EXPECT_THROW(apply_config_text(c, "no.such_key = 3\n"), ConfigError);
  EXPECT_THROW(apply_override(c, "seed"), ConfigError);
  EXPECT_THROW(apply_override(c, "baseline.epochs=abc"), ConfigError);
  EXPECT_THROW(apply_override(c, "eval.exclude_same_view=maybe"), ConfigError);
  EXPECT_THROW(apply_override(c, "data.conditions=XX"), ConfigError);
  EXPECT_THROW(apply_override(c, "sf.s_up=0.3x"), ConfigError);
}

TEST(Config, OverrideTrimsSpaces) {
  RunConfig c = default_run_config();
  apply_override(c, " sf.c_low = 0.9 ");
  EXPECT_EQ(c.sf.c_low, 0.9);
}

TEST(Config, MissingFileIsIoError) {
  RunConfig c = default_run_config();
  EXPECT_THROW(apply_config_file(c, "/nonexistent/gaitsf.cfg"), IoError);
}

TEST(Config, HelpListsEveryKeyWithItsDefault) {
  const std::string help = describe_keys();
  const RunConfig d = default_run_config();
  for (const auto& k : config_keys()) {
    const std::string expect = k.name + " = " + k.get(d);
    EXPECT_NE(help.find(expect), std::string::npos) << k.name;
  }
  EXPECT_GT(config_keys().size(), 40u);
}

TEST(Config, EveryKeyRoundTripsThroughItsPrintedValue) {
  const RunConfig d = default_run_config();
  for (const auto& k : config_keys()) {
    RunConfig c = default_run_config();
    k.set(c, k.get(d));
    EXPECT_EQ(k.get(c), k.get(d)) << k.name;
  }
}

TEST(Config, SplitsAreDisjointBySubject) {
  RunConfig c = default_run_config();
  EXPECT_EQ(c.train_spec().subject_id_offset, c.pretrain_subjects);
  EXPECT_EQ(c.test_spec().subject_id_offset, c.pretrain_subjects + c.train_subjects);
  EXPECT_EQ(c.pretrain_spec().conditions, std::vector<Condition>{Condition::NM});
  EXPECT_EQ(c.test_spec().nm_seqs_per_cell, 6);
}
