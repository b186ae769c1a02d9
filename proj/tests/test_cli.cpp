// Copyright (c) 2026 The sshnet Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "sshnet/cli.hpp"
#include "sshnet/featureio.hpp"
#include "test_util.hpp"

namespace sshnet {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct CliRun {
  int code = -1;
  std::string out, err;
};

CliRun run(std::vector<std::string> args) {
  args.insert(args.begin(), "sshnet");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  CliRun r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = testing::scratch_dir("cli_pipeline");
    const CliRun s = run({"synth", "--images", "10", "--captions", "5", "--seed", "4", "--out", (dir_ / "data").string()});
    ASSERT_EQ(s.code, kExitOk) << s.err;
  }
  static fs::path dir_;
};
fs::path CliPipeline::dir_;

TEST_F(CliPipeline, SynthSummary) {
  const json j = json::parse(slurp(dir_ / "data" / "manifest.json"));
  EXPECT_EQ(j["image_count"], 10);
  EXPECT_EQ(j["sentence_count"], 50);
}

TEST_F(CliPipeline, TrainEvalIsByteIdenticalOnRerun) {
  const std::string data = (dir_ / "data").string();
  std::string evals[2];
  for (int rep = 0; rep < 2; ++rep) {
    const std::string ck = (dir_ / ("ck" + std::to_string(rep))).string();
    const CliRun t = run({"train", "--data", data, "--out", ck, "--epochs", "3", "--batch-size", "5", "--seed", "2"});
    ASSERT_EQ(t.code, kExitOk) << t.err;
    EXPECT_NE(t.err.find("region epoch 3 loss"), std::string::npos);
    const json summary = json::parse(t.out);
    EXPECT_EQ(summary["loss_history"]["region"].size(), 3u);
    const CliRun e = run({"eval", "--data", data, "--ckpt", ck});
    ASSERT_EQ(e.code, kExitOk) << e.err;
    evals[rep] = e.out;
    const json r = json::parse(e.out);
    EXPECT_EQ(r["mode"], "region");
    EXPECT_GE(r["rsum"].get<double>(), 0.0);
    EXPECT_LE(r["rsum"].get<double>(), 600.0);
  }
  EXPECT_EQ(evals[0], evals[1]);
  for (const auto& entry : fs::directory_iterator(dir_ / "ck0")) {
    EXPECT_EQ(slurp(entry.path()), slurp(dir_ / "ck1" / entry.path().filename())) << entry.path();
  }
}

TEST_F(CliPipeline, QuietTrainAndPrettyEval) {
  const std::string data = (dir_ / "data").string(), ck = (dir_ / "quiet").string();
  const CliRun t = run({"train", "--data", data, "--out", ck, "--epochs", "1", "--quiet"});
  ASSERT_EQ(t.code, kExitOk) << t.err;
  EXPECT_TRUE(t.err.empty());
  const CliRun e = run({"eval", "--data", data, "--ckpt", ck, "--pretty"});
  ASSERT_EQ(e.code, kExitOk);
  EXPECT_NE(e.out.find("region"), std::string::npos);
  EXPECT_NE(e.out.find("rSum"), std::string::npos);
}

TEST_F(CliPipeline, HybridTrainAndEnsemble) {
  const std::string data = (dir_ / "data").string(), ck = (dir_ / "hybrid").string();
  const CliRun t = run({"train", "--data", data, "--mode", "hybrid", "--out", ck, "--epochs", "1", "--quiet"});
  ASSERT_EQ(t.code, kExitOk) << t.err;
  const CliRun e = run({"eval", "--data", data, "--ckpt", ck, "--pretty"});
  ASSERT_EQ(e.code, kExitOk) << e.err;
  for (const char* mode : {"region", "grid", "hybrid"}) EXPECT_NE(e.out.find(mode), std::string::npos) << e.out;
  const CliRun en = run({"ensemble-eval", "--data", data, "--ckpt-a", ck + "/region", "--ckpt-b", ck + "/grid"});
  ASSERT_EQ(en.code, kExitOk) << en.err;
  EXPECT_EQ(json::parse(en.out)["mode"], "ensemble");
}

TEST_F(CliPipeline, EvalFoldsEmbeddingsAndThreads) {
  const std::string data = (dir_ / "data").string();
  const CliRun a = run({"eval", "--data", data, "--seed", "1", "--folds", "2", "--embeddings-out",
                     (dir_ / "emb").string()});
  ASSERT_EQ(a.code, kExitOk) << a.err;
  EXPECT_TRUE(fs::exists(dir_ / "emb" / "embeddings.json"));
  const CliRun b = run({"eval", "--data", data, "--seed", "1", "--folds", "2", "--threads", "3"});
  EXPECT_EQ(a.out, b.out);
  ::setenv("SSHNET_THREADS", "2", 1);
  const CliRun c = run({"eval", "--data", data, "--seed", "1", "--folds", "2"});
  ::unsetenv("SSHNET_THREADS");
  EXPECT_EQ(a.out, c.out);
  EXPECT_EQ(run({"eval", "--data", data, "--folds", "3"}).code, kExitValidation);
}

TEST_F(CliPipeline, BenchSmall) {
  const CliRun b = run({"bench", "--dims", "small", "--gallery-images", "50", "--queries", "200", "--recompute-queries",
                     "20", "--trials", "3", "--mode", "both"});
  ASSERT_EQ(b.code, kExitOk) << b.err;
  const json j = json::parse(b.out);
  EXPECT_GT(j["precomputed"]["kpps"].get<double>(), 0.0);
  EXPECT_GT(j["speedup"].get<double>(), 1.0);
  EXPECT_NE(b.err.find("warning: recompute"), std::string::npos);
}

TEST(Cli, GradcheckAndSelfcheck) {
  const CliRun g = run({"gradcheck", "--seed", "2", "--images", "2"});
  EXPECT_EQ(g.code, kExitOk) << g.out;
  EXPECT_TRUE(json::parse(g.out)["passed"].get<bool>());
  const CliRun s = run({"selfcheck"});
  EXPECT_EQ(s.code, kExitOk) << s.out;
  EXPECT_EQ(s.out.find("FAIL"), std::string::npos) << s.out;
  EXPECT_NE(s.out.find("PASS gpo-weights"), std::string::npos);
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(run({"--help"}).code, kExitOk);
  EXPECT_EQ(run({}).code, kExitValidation);
  EXPECT_EQ(run({"train", "--bogus"}).code, kExitValidation);
  EXPECT_EQ(run({"frobnicate"}).code, kExitValidation);
  const CliRun missing = run({"eval", "--data", "/nonexistent/sshnet/data"});
  EXPECT_EQ(missing.code, kExitValidation);
  EXPECT_NE(missing.err.find("error:"), std::string::npos);
  const auto dir = testing::scratch_dir("cli_codes");
  EXPECT_EQ(run({"synth", "--images", "0", "--out", dir.string()}).code, kExitValidation);
  EXPECT_EQ(run({"synth", "--images", "1", "--out", dir.string()}).code, kExitValidation);
  ASSERT_EQ(run({"synth", "--images", "3", "--out", (dir / "d").string()}).code, kExitOk);
  EXPECT_EQ(run({"train", "--data", (dir / "d").string(), "--out", (dir / "c").string(), "--batch-size", "1"}).code,
            kExitValidation);
  EXPECT_EQ(run({"train", "--data", (dir / "d").string(), "--out", (dir / "c").string(), "--lr", "nan"}).code,
            kExitValidation);
  // Corrupt a tensor: format errors are validation failures too.
  write_tensor(dir / "d" / "images" / "000000_segmap.3sht", Tensor({16, 16}, 99.0), DType::u16);
  EXPECT_EQ(run({"eval", "--data", (dir / "d").string()}).code, kExitValidation);
}

}  // namespace
}  // namespace sshnet
