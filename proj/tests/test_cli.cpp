#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include <nlohmann/json.hpp>

#ifndef SPOTKIT_CLI_PATH
#error "SPOTKIT_CLI_PATH must name the CLI binary"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  int code = -1;
  std::string out;
};

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("spotkit_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  Outcome run(const std::string& args) const {
    const std::string log = path("stdout.txt");
    const std::string cmd = std::string(SPOTKIT_CLI_PATH) + " " + args + " > " + log + " 2> " + path("stderr.txt");
    const int status = std::system(cmd.c_str());
    Outcome o;
    o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    o.out = read(log);
    return o;
  }

  static std::string read(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  void write(const std::string& name, const json& j) const { std::ofstream(path(name)) << j.dump(); }

  // Tiny geometry so every training subcommand finishes in well under a second.
  static json geometry() {
    return {{"fps", 2.0}, {"small_frames", 2}, {"global_frames", 8}, {"height", 4},
            {"width", 4}, {"channels", 2},     {"patch", 2},         {"temporal_patch", 2}};
  }
  static json model() {
    return {{"dim", 8},      {"temporal_dim", 8},     {"spatial_depth", 1},  {"temporal_depth", 1},
            {"heads", 2},    {"mlp_ratio", 2},        {"projector_hidden", 8}, {"projector_out", 8},
            {"kd_hidden", 8}};
  }

  void make_data(const std::string& name, std::size_t matches = 2) {
    write("spec.json", {{"n_classes", 3},
                        {"duration_s", 40},
                        {"events_per_class", 1},
                        {"min_gap_s", 6},
                        {"geometry", geometry()}});
    ASSERT_EQ(run("gen-data --spec " + path("spec.json") + " --out " + path(name) + " --matches " +
                  std::to_string(matches) + " --seed 3")
                  .code,
              0);
  }

  void write_configs() {
    const json common = {{"geometry", geometry()}, {"model", model()}, {"epochs", 1},
                         {"warmup_epochs", 0},     {"batch_size", 8},  {"base_lr", 0.01}};
    json c1 = common, c2 = common, c3 = common;
    c1["queue_size"] = 32;
    c2["windows_per_match"] = 4;
    c3["windows_per_match"] = 4;
    c3["classifier_epochs"] = 1;
    write("step1.json", c1);
    write("step2.json", c2);
    write("step3.json", c3);
  }

  json gt_as_predictions(const std::string& data) const {
    json arr = json::array();
    for (const auto& e : fs::directory_iterator(path(data))) {
      if (e.path().extension() == ".json" && e.path().filename() != "classes.json" &&
          e.path().filename() != "manifest.json") {
        arr.push_back(json::parse(read(e.path().string())));
      }
    }
    return arr;
  }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, HelpAndUsageErrors) {
  EXPECT_EQ(run("--help").code, 0);
  EXPECT_EQ(run("infer --help").code, 0);
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("no-such-command").code, 1);
  EXPECT_EQ(run("eval --pred x.json --gt d --bogus").code, 1);
  EXPECT_EQ(run("gen-data").code, 1);  // --out is required
}

TEST_F(CliTest, GenDataIsDeterministic) {
  make_data("a");
  make_data("b");
  for (const char* f : {"classes.json", "match_000.vid", "match_000.json", "match_001.vid", "match_001.json"}) {
    EXPECT_EQ(read(path(std::string("a/") + f)), read(path(std::string("b/") + f))) << f;
  }
  EXPECT_TRUE(fs::exists(path("a/manifest.json")));
  const auto manifest = json::parse(read(path("a/manifest.json")));
  EXPECT_EQ(manifest.at("subcommand"), "gen-data");
  EXPECT_EQ(manifest.at("seed"), 3);
}

TEST_F(CliTest, EvalOfGroundTruthIsPerfect) {
  make_data("d");
  write("gt_preds.json", gt_as_predictions("d"));
  const auto o = run("eval --pred " + path("gt_preds.json") + " --gt " + path("d") + " --tolerances 1,2,3,4,5");
  ASSERT_EQ(o.code, 0) << o.out;
  EXPECT_EQ(json::parse(o.out).at("t_amap_percent").get<double>(), 100.0);
}

TEST_F(CliTest, BadConfigKeyIsUsageError) {
  make_data("d");
  write("bad.json", {{"epochz", 1}});
  EXPECT_EQ(run("pretrain-spatial --config " + path("bad.json") + " --data " + path("d") + " --out " + path("c")).code,
            1);
  write("wrong_step.json", {{"step", 3}});
  EXPECT_EQ(
      run("pretrain-spatial --config " + path("wrong_step.json") + " --data " + path("d") + " --out " + path("c")).code,
      1);
}

TEST_F(CliTest, DataAndFormatErrorsExitTwo) {
  make_data("d");
  write_configs();
  // Missing paths are rejected by argument validation.
  EXPECT_EQ(run("pretrain-spatial --config " + path("step1.json") + " --data " + path("nope") + " --out " + path("c"))
                .code,
            1);
  // Truncated frame stream.
  const std::string vid = path("d/match_001.vid");
  const auto bytes = read(vid);
  std::ofstream(vid, std::ios::binary | std::ios::trunc) << bytes.substr(0, bytes.size() - 5);
  EXPECT_EQ(
      run("pretrain-spatial --config " + path("step1.json") + " --data " + path("d") + " --out " + path("c")).code, 2);
  // Not a bank file.
  std::ofstream(path("junk.bank")) << "definitely not a bank";
  EXPECT_EQ(run("pca-bank --in " + path("junk.bank") + " --dim 2 --out " + path("out.bank")).code, 2);
  // Malformed predictions JSON.
  std::ofstream(path("broken.json")) << "[{\"video_id\": ";
  EXPECT_EQ(run("eval --pred " + path("broken.json") + " --gt " + path("d")).code, 2);
}

TEST_F(CliTest, FullPipelineRunsAndInferenceIsDeterministic) {
  make_data("train");
  write_configs();
  const std::string d = " --data " + path("train");
  ASSERT_EQ(run("pretrain-spatial --quiet --config " + path("step1.json") + d + " --out " + path("s1.ckpt")).code, 0);
  EXPECT_TRUE(fs::exists(path("s1.ckpt.loss.csv")));
  EXPECT_TRUE(fs::exists(path("s1.ckpt.manifest.json")));
  ASSERT_EQ(run("extract-bank --ckpt " + path("s1.ckpt") + d + " --stride-s 1 --out " + path("raw.bank")).code, 0);
  ASSERT_EQ(run("pca-bank --in " + path("raw.bank") + " --dim 4 --out " + path("pca.bank")).code, 0);
  ASSERT_EQ(run("pretrain-temporal --quiet --config " + path("step2.json") + d + " --bank " + path("pca.bank") +
                " --init " + path("s1.ckpt") + " --out " + path("s2.ckpt"))
                .code,
            0);
  ASSERT_EQ(run("finetune --quiet --config " + path("step3.json") + d + " --init " + path("s2.ckpt") + " --out " +
                path("s3.ckpt"))
                .code,
            0);
  const std::string infer = "infer --ckpt " + path("s3.ckpt") + d + " --nms soft --nms-window 3 --ignore 1 --merge max";
  ASSERT_EQ(run(infer + " --out " + path("p1.json")).code, 0);
  ASSERT_EQ(run(infer + " --out " + path("p2.json")).code, 0);
  EXPECT_EQ(read(path("p1.json")), read(path("p2.json")));
  ASSERT_EQ(run("ensemble --in " + path("p1.json") + " " + path("p2.json") + " --out " + path("ens.json")).code, 0);
  const auto e = run("eval --pred " + path("ens.json") + " --gt " + path("train"));
  ASSERT_EQ(e.code, 0);
  const double score = json::parse(e.out).at("t_amap_percent").get<double>();
  EXPECT_GE(score, 0.0);
  EXPECT_LE(score, 100.0);
  // Ignore beyond half a window is rejected before any work.
  EXPECT_EQ(run("infer --ckpt " + path("s3.ckpt") + d + " --ignore 2 --out " + path("p3.json")).code, 1);
  // A backbone-only checkpoint cannot run inference.
  EXPECT_EQ(run("infer --ckpt " + path("s2.ckpt") + d + " --ignore 1 --out " + path("p4.json")).code, 1);
  // A truncated checkpoint is a format error.
  const auto ck = read(path("s3.ckpt"));
  std::ofstream(path("cut.ckpt"), std::ios::binary) << ck.substr(0, ck.size() / 2);
  EXPECT_EQ(run("infer --ckpt " + path("cut.ckpt") + d + " --ignore 1 --out " + path("p5.json")).code, 2);
}

TEST_F(CliTest, TrainingIsByteReproducible) {
  make_data("train");
  write_configs();
  for (const char* out : {"a.ckpt", "b.ckpt"}) {
    ASSERT_EQ(run("finetune --quiet --config " + path("step3.json") + " --data " + path("train") + " --out " +
                  path(out) + " --seed 9")
                  .code,
              0);
  }
  EXPECT_EQ(read(path("a.ckpt")), read(path("b.ckpt")));
  EXPECT_EQ(read(path("a.ckpt.loss.csv")), read(path("b.ckpt.loss.csv")));
}

TEST_F(CliTest, GradcheckPasses) {
  const auto o = run("gradcheck --instances 3");
  EXPECT_EQ(o.code, 0) << o.out;
  EXPECT_NE(o.out.find("temporal_encoder"), std::string::npos);
}
