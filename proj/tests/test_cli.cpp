// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "opal/error.hpp"
#include "support.hpp"

namespace opal {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Invocation {
  int code = 0;
  std::string out;
  std::string err;

  json last_json() const {
    std::istringstream in(out);
    std::string line, last;
    while (std::getline(in, line)) {
      if (!line.empty()) last = line;
    }
    return json::parse(last);
  }
};

Invocation invoke(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Invocation r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

/// Synthesizes a small corpus and trains one epoch of both stages, once.
class CliWorkflow : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = test::scratch_dir("cli_workflow");
    const auto synth = invoke({"synth", "--out", (root_ / "corpus").string(), "--instances", "4", "--seed", "3"});
    ASSERT_EQ(synth.code, 0) << synth.err;
    for (const char* stage : {"boxvae", "labelmapvae"}) {
      const auto r = invoke({"train", stage, "--corpus", (root_ / "corpus").string(), "--out",
                             (root_ / "models").string(), "--epochs", "1", "--seed", "1"});
      ASSERT_EQ(r.code, 0) << r.err;
    }
  }

  static fs::path root_;
};

fs::path CliWorkflow::root_;

TEST_F(CliWorkflow, SynthWritesACorpus) {
  EXPECT_TRUE(fs::exists(root_ / "corpus" / "manifest.json"));
  EXPECT_TRUE(fs::exists(root_ / "corpus" / "schema.json"));
  EXPECT_TRUE(fs::is_directory(root_ / "corpus" / "masks"));
}

TEST_F(CliWorkflow, TrainWritesCheckpointsAndMetrics) {
  for (const char* kind : {"boxvae", "labelmapvae"}) {
    EXPECT_TRUE(fs::exists(root_ / "models" / (std::string(kind) + "_best.bin")));
    EXPECT_TRUE(fs::exists(root_ / "models" / (std::string(kind) + "_last.bin.json")));
    std::ifstream log(root_ / "models" / (std::string(kind) + ".metrics.jsonl"));
    std::string line;
    int lines = 0;
    while (std::getline(log, line)) ++lines;
    EXPECT_EQ(lines, 1);
  }
}

TEST_F(CliWorkflow, GenerateEmitsPngAndSidecarDeterministically) {
  const auto stem = root_ / "out" / "glider";
  const std::vector<std::string> args = {"generate", "--models", (root_ / "models").string(), "--category", "glider",
                                         "--parts", "fuselage,wing_l,wing_r", "--seed", "7", "--out", stem.string()};
  const auto a = invoke(args);
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_TRUE(fs::exists(stem.string() + ".png"));
  EXPECT_TRUE(fs::exists(stem.string() + ".json"));
  const json summary = a.last_json();
  EXPECT_EQ(summary["parts"], json({"fuselage", "wing_l", "wing_r"}));
  const auto b = invoke(args);
  EXPECT_EQ(b.last_json()["hash"], summary["hash"]);
}

TEST_F(CliWorkflow, EditMovesABoxAndRejectsAnOutsideBox) {
  const auto stem = root_ / "out" / "biped";
  ASSERT_EQ(invoke({"generate", "--models", (root_ / "models").string(), "--category", "biped", "--parts",
                    "torso,head", "--seed", "2", "--out", stem.string()})
                .code,
            0);
  const auto moved = invoke({"edit", "--models", (root_ / "models").string(), "--layout", stem.string() + ".json",
                             "--move", "head=-0.2,-1,0.2,-0.5", "--out", (root_ / "out" / "moved").string()});
  ASSERT_EQ(moved.code, 0) << moved.err;
  EXPECT_EQ(moved.last_json()["boxes"]["head"], json({-0.2, -1.0, 0.2, -0.5}));

  const auto rejected = invoke({"edit", "--models", (root_ / "models").string(), "--layout",
                                stem.string() + ".json", "--move", "head=1.5,1.5,1.8,1.8"});
  EXPECT_EQ(rejected.code, 1);
  EXPECT_NE(rejected.err.find("outside"), std::string::npos);
}

TEST_F(CliWorkflow, AddPartKeepsTheOriginalBoxes) {
  const auto stem = root_ / "out" / "base";
  const auto gen = invoke({"generate", "--models", (root_ / "models").string(), "--category", "biped", "--parts",
                           "torso,head,legs", "--seed", "4", "--out", stem.string()});
  ASSERT_EQ(gen.code, 0) << gen.err;
  const auto added = invoke({"addpart", "--models", (root_ / "models").string(), "--layout",
                             stem.string() + ".json", "--part", "tail", "--seed", "4", "--out",
                             (root_ / "out" / "tailed").string()});
  ASSERT_EQ(added.code, 0) << added.err;
  const json before = gen.last_json(), after = added.last_json();
  for (const char* part : {"torso", "head", "legs"}) EXPECT_EQ(after["boxes"][part], before["boxes"][part]);
  EXPECT_TRUE(after["boxes"].contains("tail"));
}

TEST_F(CliWorkflow, EvalReportsMetrics) {
  const auto r = invoke({"eval", "--models", (root_ / "models").string(), "--corpus", (root_ / "corpus").string(),
                         "--split", "all", "--generations", "4"});
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = r.last_json();
  EXPECT_FALSE(j.empty());
}

TEST(Cli, UnknownFlagIsAUsageError) {
  const auto r = invoke({"synth", "--out", "x", "--bogus"});
  EXPECT_EQ(r.code, 1);
  EXPECT_FALSE(r.err.empty() && r.out.empty());
}

TEST(Cli, MissingSubcommandIsAUsageError) { EXPECT_EQ(invoke({}).code, 1); }

TEST(Cli, MissingCorpusIsAValidationError) {
  const auto dir = test::scratch_dir("cli_missing");
  const auto r = invoke({"train", "boxvae", "--corpus", (dir / "nowhere").string(), "--epochs", "1"});
  EXPECT_EQ(r.code, 1);
}

TEST(Cli, BadTrainConfigKeyIsAValidationError) {
  const auto dir = test::scratch_dir("cli_badconfig");
  ASSERT_EQ(invoke({"synth", "--out", (dir / "c").string(), "--instances", "2"}).code, 0);
  std::ofstream(dir / "train.yaml") << "learning_rat: 0.1\n";
  const auto r = invoke({"train", "boxvae", "--corpus", (dir / "c").string(), "--config",
                         (dir / "train.yaml").string()});
  EXPECT_EQ(r.code, 1);
}

TEST(Cli, HelpExitsCleanly) { EXPECT_EQ(invoke({"--help"}).code, 0); }

TEST(YamlToJson, ScalarsAndNesting) {
  const json j = cli::yaml_to_json("a: 1\nb: 2.5\nc: true\nd: text\ne:\n  - x\n  - 3\nf: {g: null}\n");
  EXPECT_EQ(j["a"], 1);
  EXPECT_EQ(j["b"], 2.5);
  EXPECT_EQ(j["c"], true);
  EXPECT_EQ(j["d"], "text");
  EXPECT_EQ(j["e"], json({"x", 3}));
  EXPECT_TRUE(j["f"]["g"].is_null());
}

TEST(LoadDocument, MissingOrMalformedFilesAreConfigErrors) {
  const auto dir = test::scratch_dir("cli_docs");
  EXPECT_THROW(cli::load_document(dir / "absent.json"), ConfigError);
  std::ofstream(dir / "bad.json") << "{not json";
  EXPECT_THROW(cli::load_document(dir / "bad.json"), ConfigError);
  std::ofstream(dir / "good.yml") << "seed: 4\n";
  EXPECT_EQ(cli::load_document(dir / "good.yml")["seed"], 4);
}

}  // namespace
}  // namespace opal
