#include <json.hpp>

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(SOFTATTR_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("softattr_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

TEST_F(Cli, UsageErrorsExitWithOne) {
  EXPECT_EQ(run(""), 1);
  EXPECT_EQ(run("frobnicate"), 1);
  EXPECT_EQ(run("gen-data --bogus 3 --out " + path("x")), 1);
  EXPECT_EQ(run("gen-data"), 1);
  EXPECT_EQ(run("attribute --model " + path("missing.bin") + " --sample 0"), 1);
}

TEST_F(Cli, GenDataWritesImagesAndManifest) {
  ASSERT_EQ(run("gen-data --seed 5 --count 8 --out " + path("data")), 0);
  EXPECT_TRUE(fs::exists(dir_ / "data" / "sample_00000.pgm"));
  EXPECT_TRUE(fs::exists(dir_ / "data" / "sample_00007.pgm"));
  const json manifest = json::parse(slurp(dir_ / "data" / "manifest.json"));
  EXPECT_EQ(manifest["count"], 8);
  ASSERT_EQ(manifest["samples"].size(), 8u);
  for (int i = 0; i < 8; ++i) EXPECT_EQ(manifest["samples"][i]["label"], i % 4);
}

TEST_F(Cli, VerifyWithoutModelSucceedsAndIsDeterministic) {
  ASSERT_EQ(run("verify --seed 3 --out " + path("a.json")), 0);
  ASSERT_EQ(run("verify --seed 3 --out " + path("b.json")), 0);
  const std::string a = slurp(path("a.json"));
  EXPECT_EQ(a, slurp(path("b.json")));
  const json report = json::parse(a);
  ASSERT_TRUE(report.is_array());
  for (const json& r : report) {
    EXPECT_TRUE(r.contains("id"));
    EXPECT_TRUE(r["equation"].is_array());
    EXPECT_NE(r["status"], "failed") << r["id"];
  }
}

TEST_F(Cli, TrainAttributeCompare) {
  ASSERT_EQ(run("train --seed 1 --epochs 1 --train-count 40 --val-count 8 --out " + path("m.bin")), 0);
  const std::string common = "attribute --model " + path("m.bin") + " --method gradcam --sample 2 --class 2 --format pgm --out-dir " +
                             path("maps");
  fs::create_directories(dir_ / "maps");
  ASSERT_EQ(run(common + " --score post"), 0);
  ASSERT_EQ(run(common + " --score log"), 0);
  const fs::path post = dir_ / "maps" / "gradcam-post-class2.json";
  const fs::path log = dir_ / "maps" / "gradcam-log-class2.json";
  ASSERT_TRUE(fs::exists(post));
  EXPECT_TRUE(fs::exists(dir_ / "maps" / "gradcam-post-class2-overlay.pgm"));
  const json map = json::parse(slurp(post));
  EXPECT_EQ(map["method"], "gradcam");
  EXPECT_EQ(map["target_class"], 2);

  ASSERT_EQ(run("compare --a " + post.string() + " --b " + log.string() + " --out " + path("cmp.json")), 0);
  const json cmp = json::parse(slurp(path("cmp.json")));
  EXPECT_LE(cmp["max_abs_diff"].get<double>(), 1e-9);
}

}  // namespace
