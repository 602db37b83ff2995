// Drives the command-line front end in-process on a very small experiment.

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "dcem/audio_io.hpp"
#include "dcem/cli.hpp"
#include "dcem/metrics.hpp"

namespace fs = std::filesystem;
using namespace dcem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

class CliTest : public ::testing::Test {
 protected:
  static fs::path root() { return fs::temp_directory_path() / "dcem_cli_test"; }
  static std::string config() { return (root() / "cfg.json").string(); }
  static std::string run_dir() { return (root() / "run").string(); }
  static std::string stage_ckpt(int s) {
    return (root() / "run" / ("stage" + std::to_string(s)) / "ckpt" / "best.bin").string();
  }

  static Result run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
  }
  static Result run_cfg(std::vector<std::string> args) {
    args.insert(args.begin(), {"-c", config()});
    return run(std::move(args));
  }

  static void SetUpTestSuite() {
    fs::remove_all(root());
    fs::create_directories(root());
    std::ofstream(root() / "cfg.json") << R"({
      "seed": 5,
      "paths": {"run_dir": "run", "corpus_dir": "corpus"},
      "data": {"num_speakers": 4, "utterances_per_speaker": 20,
               "min_duration": 1.0, "max_duration": 1.2},
      "model": {"base_channels": 8, "channel_mult": [1, 2], "embedding_dim": 8,
                "encoder_channels": 8, "time_features": 4},
      "train": {"stage1_epochs": 1, "stage2_epochs": 1, "steps_per_epoch": 2,
                "batch_size": 2, "select_samples": 2, "encoder_pretrain_steps": 5},
      "baseline": {"channels": 8, "layers": 2, "embedding_dim": 8, "encoder_channels": 8,
                   "epochs": 1},
      "sampler": {"steps": 4, "ensemble_size": 2}
    })";
    auto d = run_cfg({"data"});
    ASSERT_EQ(d.code, 0) << d.err;
    auto t = run_cfg({"train", "--stage", "all"});
    ASSERT_EQ(t.code, 0) << t.err;
  }

  static std::string mixture_of(const std::string& split) {
    std::ifstream in(root() / "corpus" / "manifest.jsonl");
    std::string line;
    while (std::getline(in, line)) {
      auto j = nlohmann::json::parse(line);
      if (j["split"] == split) return (root() / "corpus" / j["mixture"].get<std::string>()).string();
    }
    return {};
  }
  static std::string enrollment() {
    return (root() / "corpus" / "utts" / "spk00_utt19.wav").string();
  }
  static std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }
};

}  // namespace

TEST_F(CliTest, TrainAllWritesBothStagesAndFrozenConfig) {
  EXPECT_TRUE(fs::exists(stage_ckpt(1)));
  EXPECT_TRUE(fs::exists(stage_ckpt(2)));
  EXPECT_TRUE(fs::exists(root() / "run" / "stage1" / "ckpt" / "epoch_1.bin"));
  EXPECT_TRUE(fs::exists(root() / "run" / "config.json"));
}

TEST_F(CliTest, Stage2LogHasBranchCounts) {
  std::ifstream in(root() / "run" / "stage2" / "train_log.jsonl");
  ASSERT_TRUE(in) << "missing stage-2 log";
  std::string line;
  int steps = 0;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    if (!j.contains("step")) continue;
    ++steps;
    ASSERT_TRUE(j.contains("branch_counts"));
    int total = 0;
    for (const char* b : {"STANDARD", "FIRST_STEP_MIMIC", "TWO_STEP_MIMIC"})
      total += j["branch_counts"].value(b, 0);
    EXPECT_EQ(total, 2);  // batch size
    EXPECT_EQ(j["stage"], 2);
  }
  EXPECT_EQ(steps, 2);
}

TEST_F(CliTest, Stage2WithoutStage1IsDataError) {
  auto r = run_cfg({"train", "--stage", "2", "--set", "paths.run_dir=" + (root() / "empty").string()});
  EXPECT_EQ(r.code, kExitData) << r.err;
}

TEST_F(CliTest, ConfigErrorsExitWithTwo) {
  EXPECT_EQ(run({}).code, kExitConfig);
  EXPECT_EQ(run({"frobnicate"}).code, kExitConfig);
  EXPECT_EQ(run_cfg({"train", "--stage", "3"}).code, kExitConfig);
  EXPECT_EQ(run_cfg({"data", "--set", "sampler.stpes=3"}).code, kExitConfig);
  EXPECT_EQ(run({"-c", (root() / "missing.json").string(), "data"}).code, kExitConfig);
  // No enrollment cue.
  auto r = run_cfg({"infer", "--ckpt", stage_ckpt(1), "-i", mixture_of("test"), "-o",
                    (root() / "x.wav").string()});
  EXPECT_EQ(r.code, kExitConfig);
  EXPECT_NE(r.err.find("enrollment"), std::string::npos);
}

TEST_F(CliTest, MissingCorpusIsDataError) {
  auto r = run_cfg({"train", "--set", "paths.corpus_dir=" + (root() / "nowhere").string()});
  EXPECT_EQ(r.code, kExitData);
}

TEST_F(CliTest, InferIsDeterministic) {
  auto a = (root() / "det_a.wav").string(), b = (root() / "det_b.wav").string();
  auto common = std::vector<std::string>{"infer", "--ckpt", stage_ckpt(2), "-i", mixture_of("test"),
                                         "--enroll", enrollment(), "--seed", "3", "-o"};
  auto ra = common, rb = common;
  ra.push_back(a);
  rb.push_back(b);
  ASSERT_EQ(run_cfg(ra).code, 0);
  ASSERT_EQ(run_cfg(rb).code, 0);
  EXPECT_EQ(slurp(a), slurp(b));
  EXPECT_EQ(read_wav(a).size(), read_wav(mixture_of("test")).size());
}

TEST_F(CliTest, EnsembleOfOneEqualsSingleRun) {
  auto a = (root() / "k1.wav").string(), b = (root() / "single.wav").string();
  auto base = std::vector<std::string>{"infer", "--ckpt", stage_ckpt(1), "-i", mixture_of("dev"),
                                       "--self-enroll", "--seed", "8", "-o"};
  auto ra = base, rb = base;
  ra.insert(ra.end(), {a, "--ensemble", "1"});
  rb.push_back(b);
  ASSERT_EQ(run_cfg(ra).code, 0);
  ASSERT_EQ(run_cfg(rb).code, 0);
  EXPECT_EQ(slurp(a), slurp(b));
}

TEST_F(CliTest, EvalCountFollowsSteps) {
  auto r = run_cfg({"infer", "--ckpt", stage_ckpt(1), "-i", mixture_of("test"), "--enroll",
                    enrollment(), "--steps", "2", "-o", (root() / "s2.wav").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("eval_count=2 "), std::string::npos) << r.out;
  auto k = run_cfg({"infer", "--ckpt", stage_ckpt(1), "-i", mixture_of("test"), "--enroll",
                    enrollment(), "--ensemble", "3", "-o", (root() / "k3.wav").string()});
  ASSERT_EQ(k.code, 0) << k.err;
  EXPECT_NE(k.out.find("eval_count=12 "), std::string::npos) << k.out;
}

TEST_F(CliTest, DumpStepsWritesOneArrayPerEvaluation) {
  auto dump = root() / "dump";
  auto r = run_cfg({"infer", "--ckpt", stage_ckpt(1), "-i", mixture_of("test"), "--enroll",
                    enrollment(), "-o", (root() / "dumped.wav").string(), "--dump-steps",
                    dump.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(dump)) files += e.path().extension() == ".npy";
  EXPECT_EQ(files, 4u);
}

TEST_F(CliTest, RegenValidatesStepsAndLengths) {
  const auto mix = mixture_of("test");
  auto args = [&](const std::string& n, const std::string& pre) {
    return std::vector<std::string>{"regen", "--ckpt", stage_ckpt(1), "--pre", pre, "--mixture", mix,
                                    "--enroll", enrollment(), "--N", n, "-o",
                                    (root() / ("regen" + n + ".wav")).string()};
  };
  EXPECT_EQ(run_cfg(args("1", mix)).code, kExitConfig);
  auto ok = run_cfg(args("10", mix));
  ASSERT_EQ(ok.code, 0) << ok.err;
  EXPECT_NE(ok.out.find("eval_count=10 "), std::string::npos);
  auto two = run_cfg(args("2", mix));
  EXPECT_NE(two.out.find("eval_count=2 "), std::string::npos);

  auto w = read_wav(mix);
  w.samples.resize(w.samples.size() - 100);
  write_wav(root() / "short.wav", w);
  EXPECT_EQ(run_cfg(args("2", (root() / "short.wav").string())).code, kExitData);
}

TEST_F(CliTest, EvalReportIsCompleteAndReproducible) {
  auto out1 = root() / "eval1", out2 = root() / "eval2";
  auto args = [&](const fs::path& o) {
    return std::vector<std::string>{"eval", "--split", "test", "--methods", "mixture,dcem,ensemble",
                                    "--limit", "3", "-o", o.string()};
  };
  auto r1 = run_cfg(args(out1));
  ASSERT_EQ(r1.code, 0) << r1.err;
  ASSERT_EQ(run_cfg(args(out2)).code, 0);
  auto a = MetricReport::read_jsonl(out1 / "report.jsonl");
  auto b = MetricReport::read_jsonl(out2 / "report.jsonl");
  EXPECT_EQ(a.records().size(), 9u);
  ASSERT_EQ(a.records().size(), b.records().size());
  for (std::size_t i = 0; i < a.records().size(); ++i) {
    EXPECT_EQ(a.records()[i].sample_id, b.records()[i].sample_id);
    EXPECT_EQ(a.records()[i].si_sdr_db, b.records()[i].si_sdr_db);
  }
  EXPECT_TRUE(fs::exists(out1 / "histogram.csv"));
  EXPECT_TRUE(fs::exists(out1 / "summary.txt"));

  // The mixture row is the plain SI-SDR of the stored mixture.
  std::ifstream in(root() / "corpus" / "manifest.jsonl");
  std::map<std::string, nlohmann::json> by_id;
  std::string line;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    by_id[j["sample_id"]] = j;
  }
  for (const auto& r : a.records()) {
    if (r.method == "mixture") {
      const auto& j = by_id.at(r.sample_id);
      auto y = read_wav(root() / "corpus" / j["mixture"].get<std::string>());
      auto x = read_wav(root() / "corpus" / j["target"].get<std::string>());
      EXPECT_DOUBLE_EQ(r.si_sdr_db, si_sdr(y, x));
      EXPECT_EQ(r.eval_count, 0);
    } else if (r.method == "dcem") {
      EXPECT_EQ(r.eval_count, 4);
    } else {
      EXPECT_EQ(r.eval_count, 8);
    }
  }
}

TEST_F(CliTest, BaselineThenRdcemEval) {
  auto b = run_cfg({"baseline"});
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_TRUE(fs::exists(root() / "run" / "baseline" / "baseline.bin"));
  auto e = run_cfg({"eval", "--split", "test", "--scenario", "MULTI_NOISY", "--methods",
                    "baseline,rdcem", "--limit", "2", "-o", (root() / "eval_r").string()});
  ASSERT_EQ(e.code, 0) << e.err;
  auto rep = MetricReport::read_jsonl(root() / "eval_r" / "report.jsonl");
  ASSERT_EQ(rep.records().size(), 4u);
  for (const auto& r : rep.records()) EXPECT_EQ(r.eval_count, r.method == "rdcem" ? 2 : 0);
}

TEST_F(CliTest, BenchNeedsTenSamples) {
  // 4 speakers x 2 test utterances = 8 MULTI_NOISY test samples.
  auto r = run_cfg({"bench", "--split", "test"});
  EXPECT_EQ(r.code, kExitData) << r.err;
  auto ok = run_cfg({"bench", "--split", "train", "--limit", "10"});
  ASSERT_EQ(ok.code, 0) << ok.err;
  EXPECT_NE(ok.out.find("dcem    steps=4 eval_count=4"), std::string::npos) << ok.out;
  EXPECT_NE(ok.out.find("regen   N=2 eval_count=2"), std::string::npos) << ok.out;
}
