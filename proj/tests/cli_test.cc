#include "socsum/cli.h"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "json.hpp"
#include "socsum/corpus.h"

namespace socsum::cli {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result call(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("socsum_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  std::string data(const std::string& name) const {
    return (fs::path(SOCSUM_DATA_DIR) / name).string();
  }
  fs::path dir_;
};

TEST_F(CliTest, PreprocessIsDeterministic) {
  for (const auto* out : {"a.jsonl", "b.jsonl"}) {
    const auto r = call({"preprocess", "--in", data("synthetic_20.jsonl"), "--out", path(out)});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  const std::string a = corpus::read_text_file(path("a.jsonl"));
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, corpus::read_text_file(path("b.jsonl")));
  const auto r = call({"preprocess", "--in", data("synthetic_20.jsonl"), "--out",
                       path("c.jsonl"), "--seed", "2"});
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(a, corpus::read_text_file(path("c.jsonl")));
}

TEST_F(CliTest, UsageErrorsExitTwo) {
  auto r = call({"evaluate", "--corpus", data("toy_5.jsonl"), "--vocab", data("toy_5.jsonl"),
                 "--reports", path("r.jsonl")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--checkpoint"), std::string::npos);
  EXPECT_EQ(call({"frobnicate"}).code, 2);
  EXPECT_EQ(call({"preprocess", "--in", data("toy_5.jsonl"), "--out", path("x"), "--bogus"}).code,
            2);
  EXPECT_EQ(call({}).code, 2);
  EXPECT_EQ(call({"train", "--variant", "9"}).code, 2);
}

TEST_F(CliTest, RuntimeErrorsExitOne) {
  corpus::write_text_file(path("bad.jsonl"), "{not json\n");
  const auto r = call({"preprocess", "--in", path("bad.jsonl"), "--out", path("o.jsonl")});
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("error: ", 0), 0u);
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
}

TEST_F(CliTest, HelpListsDefaults) {
  const auto r = call({"train", "--help"});
  EXPECT_EQ(r.code, 0);
  for (const char* flag : {"--steps", "--beam-size", "--lr", "--variant", "--seed"}) {
    EXPECT_NE(r.out.find(flag), std::string::npos) << flag;
  }
  EXPECT_NE(r.out.find("20000"), std::string::npos);
  EXPECT_NE(r.out.find("0.6"), std::string::npos);
}

TEST_F(CliTest, ConfigFileWithCommandLineOverride) {
  corpus::write_text_file(path("cfg.txt"), "# split\ntrain-ratio = 0.6\nval-ratio=0.2\n"
                                           "test-ratio=0.2\nseed=4\n");
  auto r = call({"preprocess", "--config", path("cfg.txt"), "--in", data("synthetic_20.jsonl"),
                 "--out", path("a.jsonl")});
  ASSERT_EQ(r.code, 0) << r.err;
  r = call({"preprocess", "--in", data("synthetic_20.jsonl"), "--out", path("b.jsonl"),
            "--train-ratio", "0.6", "--val-ratio", "0.2", "--test-ratio", "0.2", "--seed", "4"});
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(corpus::read_text_file(path("a.jsonl")), corpus::read_text_file(path("b.jsonl")));
  r = call({"preprocess", "--config", path("cfg.txt"), "--in", data("synthetic_20.jsonl"),
            "--out", path("c.jsonl"), "--seed", "9"});
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(corpus::read_text_file(path("a.jsonl")), corpus::read_text_file(path("c.jsonl")));
  corpus::write_text_file(path("bad.txt"), "no-such-key=1\n");
  EXPECT_EQ(call({"preprocess", "--config", path("bad.txt"), "--in", data("toy_5.jsonl"),
                  "--out", path("d.jsonl")})
                .code,
            2);
}

TEST_F(CliTest, EndToEndPipeline) {
  ASSERT_EQ(call({"preprocess", "--in", data("synthetic_20.jsonl"), "--out", path("clean.jsonl")})
                .code,
            0);
  ASSERT_EQ(call({"build-vocab", "--corpus", path("clean.jsonl"), "--out", path("vocab.txt"),
                  "--vocab-size", "400"})
                .code,
            0);
  auto r = call({"train", "--corpus", path("clean.jsonl"), "--vocab", path("vocab.txt"),
                 "--out-dir", path("run"), "--variant", "7", "--steps", "300", "--eval-every",
                 "150", "--d-model", "32", "--d-ff", "64", "--heads", "2", "--enc-blocks", "1",
                 "--dec-blocks", "1", "--lr", "2e-3", "--warmup", "50", "--max-out-len", "24"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(path("run/step_150.ckpt")));
  EXPECT_TRUE(fs::exists(path("run/step_300.ckpt")));
  EXPECT_TRUE(fs::exists(path("run/final.ckpt")));
  const auto metrics = corpus::read_text_file(path("run/metrics.jsonl"));
  EXPECT_EQ(std::count(metrics.begin(), metrics.end(), '\n'), 2);

  r = call({"evaluate", "--corpus", path("clean.jsonl"), "--vocab", path("vocab.txt"),
            "--checkpoint", path("run/final.ckpt"), "--reports", path("reports.jsonl"),
            "--aggregate", path("agg.csv"), "--max-out-len", "24"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream line(r.out);
  std::string key;
  double xent = NAN, recall_w = NAN;
  line >> key >> xent >> key >> recall_w;
  EXPECT_TRUE(std::isfinite(xent));
  EXPECT_GE(recall_w, 0.0);
  EXPECT_LE(recall_w, 1.0);
  EXPECT_EQ(corpus::read_text_file(path("agg.csv")).rfind("variant,xent,recall_w,title_rouge\n", 0),
            0u);

  r = call({"summarize", "--corpus", path("clean.jsonl"), "--vocab", path("vocab.txt"),
            "--checkpoint", path("run/final.ckpt"), "--out", path("sum.jsonl"), "--max-out-len",
            "24"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto summaries = corpus::read_text_file(path("sum.jsonl"));
  const auto first = nlohmann::json::parse(summaries.substr(0, summaries.find('\n')));
  EXPECT_TRUE(first.contains("title_part"));
  EXPECT_TRUE(first["comment_parts"].is_array());

  r = call({"evaluate", "--corpus", path("clean.jsonl"), "--vocab", path("vocab.txt"),
            "--checkpoint", path("run/final.ckpt"), "--reports", path("centroid.jsonl"),
            "--baseline", "centroid"});
  ASSERT_EQ(r.code, 0) << r.err;

  // Folds are tiny here, so characterize over all threads.
  r = call({"evaluate", "--corpus", path("clean.jsonl"), "--vocab", path("vocab.txt"),
            "--checkpoint", path("run/final.ckpt"), "--reports", path("all.jsonl"), "--fold",
            "all", "--baseline", "centroid"});
  ASSERT_EQ(r.code, 0) << r.err;
  r = call({"characterize", "--reports", path("all.jsonl"), "--out", path("q.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto q = corpus::read_text_file(path("q.csv"));
  EXPECT_EQ(std::count(q.begin(), q.end(), '\n'), 5);

  // Resuming to a later step continues from the checkpoint.
  r = call({"train", "--corpus", path("clean.jsonl"), "--vocab", path("vocab.txt"), "--out-dir",
            path("run"), "--variant", "7", "--steps", "310", "--eval-every", "150", "--d-model",
            "32", "--d-ff", "64", "--heads", "2", "--enc-blocks", "1", "--dec-blocks", "1",
            "--lr", "2e-3", "--warmup", "50", "--max-out-len", "24", "--resume",
            path("run/final.ckpt")});
  EXPECT_EQ(r.code, 0) << r.err;
}

}  // namespace
}  // namespace socsum::cli
