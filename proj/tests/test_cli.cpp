#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <string>
#include <sys/wait.h>

#include "test_util.hpp"
#include "xcorner/synthgen.hpp"
#include "xcorner/xnet.hpp"

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(XCORNER_LAB_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("gen --count 2"), 2);
  EXPECT_EQ(run("gen --count 2 --out /tmp/x --kind sphere"), 2);
  EXPECT_EQ(run("bench-refine --out /tmp/x.csv --factor noise --methods magic"), 2);
  EXPECT_EQ(run("--help"), 0);
}

TEST(Cli, RuntimeFailuresExitOne) {
  const auto dir = testutil::temp_dir("cli_fail");
  EXPECT_EQ(run("detect --model " + (dir / "none.model").string() + " --image " +
                (dir / "none.pgm").string() + " --out " + (dir / "c.csv").string()),
            1);
  EXPECT_EQ(run("eval --pred " + (dir / "p.csv").string() + " --truth " + (dir / "t.csv").string() +
                " --out " + (dir / "r.csv").string()),
            1);
}

TEST(Cli, GenDetectRecoverEval) {
  const auto dir = testutil::temp_dir("cli_flow");
  ASSERT_EQ(run("gen --kind board --count 1 --size 96 --rows 4 --cols 5 --square 11 --rot 12 --out " +
                (dir / "boards").string()),
            0);
  EXPECT_TRUE(std::filesystem::exists(dir / "boards" / "img_00000.pgm"));
  EXPECT_TRUE(std::filesystem::exists(dir / "boards" / "img_00000.truth.csv"));
  const auto manifest = xcorner::read_manifest(dir / "boards" / xcorner::kManifestName);
  ASSERT_EQ(manifest.size(), 1u);
  EXPECT_EQ(manifest[0].rows, 4);
  EXPECT_EQ(manifest[0].cols, 5);

  ASSERT_EQ(run("gen --kind corner --count 2 --out " + (dir / "corners").string()), 0);
  EXPECT_EQ(xcorner::load_gray(dir / "corners" / "img_00001.pgm").width(), 41);

  xcorner::save_model(dir / "a.model", xcorner::build_network(xcorner::ConfigId::kA, 1));
  const std::string img = (dir / "boards" / "img_00000.pgm").string();
  EXPECT_EQ(run("detect --model " + (dir / "a.model").string() + " --image " + img + " --out " +
                (dir / "c.csv").string()),
            0);
  EXPECT_EQ(testutil::slurp(dir / "c.csv").rfind("x,y,score\n", 0), 0u);

  const std::string truth = (dir / "boards" / "img_00000.truth.csv").string();
  EXPECT_EQ(run("recover --model " + (dir / "a.model").string() + " --image " + img + " --out " +
                (dir / "g.csv").string()),
            0);
  EXPECT_EQ(testutil::slurp(dir / "g.csv").rfind("row,col,x,y,present\n", 0), 0u);

  EXPECT_EQ(run("eval --pred " + truth + " --truth " + truth + " --out " + (dir / "r.csv").string()), 0);
  const std::string report = testutil::slurp(dir / "r.csv");
  EXPECT_NE(report.find("\n20,0,0,1.000000,1.000000,"), std::string::npos);
}
