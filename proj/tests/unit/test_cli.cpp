#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#ifdef LMFT_CLI_PATH

namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
};

Run lmft(const std::string& args) {
  const std::string cmd = std::string(LMFT_CLI_PATH) + " " + args + " 2>&1";
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) throw std::runtime_error("popen failed");
  std::string out;
  char buf[4096];
  while (const auto n = std::fread(buf, 1, sizeof buf, p)) out.append(buf, n);
  const int status = pclose(p);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

class CliPipeline : public ::testing::Test {
 protected:
  static fs::path dir;

  static void SetUpTestSuite() {
    dir = fs::temp_directory_path() / ("lmft_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ofstream(dir / "spec.cfg") << "n_classes = 4\nframes = 8\nheight = 32\nwidth = 32\nsprite_size = 8\n"
                                       "n_source_train = 24\nn_target_train = 16\nn_target_val = 12\n";
    std::ofstream(dir / "run.cfg") << "source_manifest = d/source_train.tsv\n"
                                      "target_manifest = d/target_train.tsv\n"
                                      "pseudo_labels = d/pl.jsonl\n"
                                      "patch = 8\nembed_dim = 16\nn_heads = 2\nn_layers = 1\n"
                                      "batch_size = 8\nepochs = 2\nlr = 1e-3\n";
    const auto d = dir.string();
    ASSERT_EQ(lmft("synth --spec " + d + "/spec.cfg --out " + d + "/d --seed 5").code, 0);
    ASSERT_EQ(lmft("label-oracle --truth " + d + "/d/target_train_truth.tsv --classes 4 --out " + d + "/d/pl.jsonl")
                  .code,
              0);
  }
  static void TearDownTestSuite() { fs::remove_all(dir); }
};
fs::path CliPipeline::dir;

}  // namespace

TEST(Cli, NoSubcommandIsUserError) {
  const auto r = lmft("");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("Usage"), std::string::npos);
}

TEST(Cli, UnknownFlagPrintsUsage) {
  const auto r = lmft("train --no-such-flag");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("no-such-flag"), std::string::npos);
  EXPECT_NE(r.out.find("Usage"), std::string::npos);
}

TEST(Cli, MissingFileIsUserError) {
  const auto r = lmft("eval --ckpt /nonexistent/model.lmck --manifest /nonexistent.tsv");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("does not exist"), std::string::npos);
}

TEST(Cli, HelpExitsZero) { EXPECT_EQ(lmft("--help").code, 0); }

TEST_F(CliPipeline, UnknownConfigKeyIsRejected) {
  std::ofstream(dir / "bad.cfg") << "learning_rate = 0.1\n";
  const auto r = lmft("train --config " + (dir / "bad.cfg").string() + " --out " + (dir / "bad").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("learning_rate"), std::string::npos);
}

TEST_F(CliPipeline, TrainEvalBenchViz) {
  const auto d = dir.string();
  const auto t = lmft("train --config " + d + "/run.cfg --out " + d + "/r1 --seed 1");
  ASSERT_EQ(t.code, 0) << t.out;
  for (const char* f : {"model.lmck", "metrics.csv", "run.cfg", "summary.json"}) EXPECT_TRUE(fs::exists(dir / "r1" / f));

  const auto e = lmft("eval --ckpt " + d + "/r1 --manifest " + d + "/d/target_val.tsv --json");
  ASSERT_EQ(e.code, 0) << e.out;
  EXPECT_NE(e.out.find("\"accuracy\""), std::string::npos);
  EXPECT_NE(e.out.find("\"tau_hat\""), std::string::npos);

  const auto bad = lmft("eval --ckpt " + d + "/r1 --manifest " + d + "/d/target_val.tsv --tau-override 1.5");
  EXPECT_EQ(bad.code, 1);

  const auto b = lmft("bench --ckpt " + d + "/r1 --manifest " + d + "/d/target_val.tsv --repeats 2 --csv");
  ASSERT_EQ(b.code, 0) << b.out;
  EXPECT_EQ(b.out.rfind("method,", 0), 0u);
  for (const char* m : {"\nfull,", "\nlmft,", "\nrandom,"}) EXPECT_NE(b.out.find(m), std::string::npos);

  fs::path video;
  for (const auto& entry : fs::directory_iterator(dir / "d" / "videos"))
    if (entry.path().extension() == ".vten") {
      video = entry.path();
      break;
    }
  ASSERT_FALSE(video.empty());
  const auto v = lmft("viz --video " + video.string() + " --ckpt " + d + "/r1 --out " + d + "/viz");
  ASSERT_EQ(v.code, 0) << v.out;
  const auto ppm = slurp(dir / "viz" / "frame_000.ppm");
  EXPECT_EQ(ppm.rfind("P6\n32 96\n255\n", 0), 0u);
  EXPECT_EQ(ppm.size(), std::string("P6\n32 96\n255\n").size() + 32 * 96 * 3);
  EXPECT_TRUE(fs::exists(dir / "viz" / "mask.txt"));
}

TEST_F(CliPipeline, TrainingIsReproducible) {
  const auto d = dir.string();
  ASSERT_EQ(lmft("train --config " + d + "/run.cfg --out " + d + "/ra --seed 3").code, 0);
  ASSERT_EQ(lmft("train --config " + d + "/run.cfg --out " + d + "/rb --seed 3").code, 0);
  EXPECT_EQ(slurp(dir / "ra" / "metrics.csv"), slurp(dir / "rb" / "metrics.csv"));
  EXPECT_EQ(slurp(dir / "ra" / "model.lmck"), slurp(dir / "rb" / "model.lmck"));
}

#endif
