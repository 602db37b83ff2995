#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "dcem/config.hpp"
#include "dcem/errors.hpp"

namespace fs = std::filesystem;
using namespace dcem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& tag) {
  auto p = fs::temp_directory_path() / ("dcem_config_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ExperimentConfig non_default() {
  ExperimentConfig c;
  c.seed = 99;
  c.schedule.gamma = 2.0;
  c.model.base_channels = 16;
  c.model.channel_mult = {1, 2};
  c.model.speaker_encoder = "lookup";
  c.model.num_speakers = 20;
  c.train.stage2_epochs = 7;
  c.train.stage1_lr = 3e-4;
  c.sampler.steps = 6;
  c.sampler.ensemble_norm = "mean";
  c.data.num_speakers = 8;
  c.data.eval_scenarios = {"MULTI_CLEAN"};
  c.paths.run_dir = "/abs/run";
  c.paths.corpus_dir = "/abs/corpus";
  return c;
}

}  // namespace

TEST(Config, DefaultsValidate) { EXPECT_NO_THROW(ExperimentConfig{}.validate()); }

TEST(Config, JsonRoundTrip) {
  const auto c = non_default();
  EXPECT_EQ(config_from_json(config_to_json(c)), c);
  EXPECT_EQ(config_from_json(config_to_json(ExperimentConfig{})), ExperimentConfig{});
}

TEST(Config, FileRoundTripWithAbsolutePaths) {
  auto dir = scratch("file");
  const auto c = non_default();
  save_config(dir / "c.json", c);
  EXPECT_EQ(load_config(dir / "c.json"), c);
}

TEST(Config, PartialDocumentKeepsDefaults) {
  auto c = config_from_json(json::parse(R"({"sampler": {"steps": 4}})"));
  ExperimentConfig want;
  want.sampler.steps = 4;
  EXPECT_EQ(c, want);
}

TEST(Config, UnknownKeysRejected) {
  EXPECT_THROW(config_from_json(json::parse(R"({"sampler": {"stpes": 4}})")), ConfigError);
  EXPECT_THROW(config_from_json(json::parse(R"({"samplr": {}})")), ConfigError);
}

TEST(Config, WrongTypesAndInvalidValuesRejected) {
  EXPECT_THROW(config_from_json(json::parse(R"({"sampler": {"steps": "ten"}})")), ConfigError);
  EXPECT_THROW(config_from_json(json::parse(R"({"sampler": {"steps": 1}})")), ConfigError);
  EXPECT_THROW(config_from_json(json::parse(R"({"schedule": {"sigma_min": 0.9}})")), ConfigError);
  // The network's frequency axis must match the transform.
  EXPECT_THROW(config_from_json(json::parse(R"({"model": {"freq_bins": 128}})")), ConfigError);
}

TEST(Config, RelativePathsResolveAgainstFile) {
  auto dir = scratch("rel");
  std::ofstream(dir / "c.json") << R"({"paths": {"run_dir": "out/run", "corpus_dir": "../corpus"}})";
  auto c = load_config(dir / "c.json");
  EXPECT_EQ(fs::path(c.paths.run_dir), (dir / "out/run").lexically_normal());
  EXPECT_EQ(fs::path(c.paths.corpus_dir), (dir / "../corpus").lexically_normal());
}

TEST(Config, MissingOrMalformedFile) {
  auto dir = scratch("bad");
  EXPECT_THROW(load_config(dir / "nope.json"), ConfigError);
  std::ofstream(dir / "broken.json") << "{ not json";
  EXPECT_THROW(load_config(dir / "broken.json"), ConfigError);
}

TEST(Config, Overrides) {
  json j = config_to_json(ExperimentConfig{});
  apply_override(j, "sampler.steps=4");
  apply_override(j, "model.channel_mult=[1,2]");
  apply_override(j, "model.speaker_encoder=lookup");
  apply_override(j, "model.num_speakers=20");
  apply_override(j, "seed=7");
  auto c = config_from_json(j);
  EXPECT_EQ(c.sampler.steps, 4);
  EXPECT_EQ(c.model.channel_mult, (std::vector<int>{1, 2}));
  EXPECT_EQ(c.model.speaker_encoder, "lookup");
  EXPECT_EQ(c.seed, 7u);
  EXPECT_THROW(apply_override(j, "no_equals_sign"), ConfigError);
  EXPECT_THROW(apply_override(j, "=3"), ConfigError);
  apply_override(j, "sampler.bogus=1");
  EXPECT_THROW(config_from_json(j), ConfigError);
}
