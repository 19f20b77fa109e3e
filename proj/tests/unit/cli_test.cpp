#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "resmtl/checkpoint.hpp"
#include "resmtl/commands.hpp"
#include "resmtl/data.hpp"
#include "resmtl/error.hpp"
#include "resmtl/run_config.hpp"

using namespace resmtl;
using namespace resmtl::cli;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("resmtl_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  std::string write_config(const std::string& name, const nlohmann::json& doc) const {
    std::ofstream(path(name)) << doc.dump(2);
    return path(name);
  }

  // Small synthetic set plus a short training run.
  std::string trained(const std::string& out, nlohmann::json train = {{"epochs", 5}}) {
    nlohmann::json cfg = {{"version", 1},
                          {"seed", 3},
                          {"synth", {{"samples", 24}, {"feature_dim", 20}}},
                          {"network", {{"hidden", 16}}},
                          {"train", train}};
    auto c = write_config(out + ".json", cfg);
    EXPECT_EQ(run({"synth", "--config", c, "--out", path(out)}).code, 0);
    auto r = run({"train", "--config", c, "--out", path(out), "--input", path(out) + "/synth.csv"});
    EXPECT_EQ(r.code, 0) << r.err;
    return c;
  }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, SynthIsByteIdenticalForOneSeed) {
  ASSERT_EQ(run({"synth", "--seed", "9", "--out", path("a")}).code, 0);
  ASSERT_EQ(run({"synth", "--seed", "9", "--out", path("b")}).code, 0);
  ASSERT_EQ(run({"synth", "--seed", "10", "--out", path("c")}).code, 0);
  const auto a = slurp(path("a/synth.csv"));
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, slurp(path("b/synth.csv")));
  EXPECT_NE(a, slurp(path("c/synth.csv")));
}

TEST_F(CliTest, SynthDefaultsLoadBack) {
  ASSERT_EQ(run({"synth", "--out", path("s")}).code, 0);
  auto ds = normalize_targets(load_csv(path("s/synth.csv")));
  EXPECT_EQ(ds.size(), 64u);
  EXPECT_EQ(ds.feature_dim, 32u);
  EXPECT_TRUE(ds.warnings.empty());
  EXPECT_TRUE(fs::exists(path("s/config.json")));
}

TEST_F(CliTest, TrainWritesCheckpointAndTrace) {
  trained("t");
  EXPECT_TRUE(fs::exists(path("t/checkpoint.bin")));
  std::ifstream trace(path("t/trace.jsonl"));
  std::size_t lines = 0;
  for (std::string l; std::getline(trace, l);) ++lines;
  EXPECT_EQ(lines, 5u);
}

TEST_F(CliTest, MissingDataFileIsValidationError) {
  auto r = run({"train", "--input", path("nope.csv"), "--out", path("o")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find(path("nope.csv")), std::string::npos);
}

TEST_F(CliTest, ZeroWeightsWarnAndKeepInitialization) {
  nlohmann::json weights = nlohmann::json::object();
  for (Task t : kAllTasks) weights[std::string(task_name(t))] = 0.0;
  auto c = trained("one", {{"epochs", 1}, {"task_weights", weights}});
  auto r = run({"train", "--config", c, "--epochs", "4", "--out", path("four"), "--input",
                path("one/synth.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("warning"), std::string::npos);
  auto a = load_checkpoint(path("one/checkpoint.bin"));
  auto b = load_checkpoint(path("four/checkpoint.bin"));
  EXPECT_TRUE(a.net == b.net);
}

TEST_F(CliTest, EvalRejectsWrongFeatureWidth) {
  auto c = trained("m");
  ASSERT_EQ(run({"synth", "--config", c, "--out", path("w")}).code, 0);
  nlohmann::json other = {{"version", 1}, {"synth", {{"samples", 10}, {"feature_dim", 24}}}};
  auto oc = write_config("other.json", other);
  ASSERT_EQ(run({"synth", "--config", oc, "--out", path("wide")}).code, 0);
  auto r = run({"eval", "--checkpoint", path("m/checkpoint.bin"), "--input",
                path("wide/synth.csv"), "--out", path("e")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("feature"), std::string::npos);
}

TEST_F(CliTest, EvalWritesBothReportFormats) {
  auto c = trained("m");
  auto r = run({"eval", "--config", c, "--out", path("m"), "--input", path("m/synth.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  auto doc = nlohmann::json::parse(slurp(path("m/report.json")));
  EXPECT_EQ(doc.at("schema_version"), 1);
  EXPECT_EQ(doc.at("reports").size(), 1u);
  EXPECT_NE(slurp(path("m/report.txt")).find("Impact of nodule size"), std::string::npos);
}

TEST_F(CliTest, MissingCheckpointIsValidationError) {
  ASSERT_EQ(run({"synth", "--out", path("s")}).code, 0);
  auto r = run({"eval", "--input", path("s/synth.csv"), "--checkpoint", path("none.bin"),
                "--out", path("s")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find(path("none.bin")), std::string::npos);
}

TEST_F(CliTest, GradcheckPassesAndPrintsPerLayerTable) {
  auto r = run({"gradcheck"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("trunk.weight"), std::string::npos);
  EXPECT_NE(r.out.find("head.size.bias"), std::string::npos);
  EXPECT_NE(r.out.find("PASS"), std::string::npos);
}

TEST_F(CliTest, CorruptedBackwardFailsGradcheck) {
  auto r = run({"gradcheck", "--corrupt-backward"});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.out.find("FAIL"), std::string::npos);
}

TEST_F(CliTest, PredictProbabilitiesSumToOneAndRepeat) {
  auto c = trained("p");
  auto args = std::vector<std::string>{"predict", "--config", c, "--out", path("p"), "--input",
                                       path("p/synth.csv")};
  ASSERT_EQ(run(args).code, 0);
  const auto first = slurp(path("p/predictions.csv"));
  ASSERT_EQ(run(args).code, 0);
  EXPECT_EQ(first, slurp(path("p/predictions.csv")));

  std::istringstream in(first);
  std::string header;
  std::getline(in, header);
  std::vector<std::string> cols;
  for (std::stringstream hs(header); hs.good();) {
    std::string c2;
    std::getline(hs, c2, ',');
    cols.push_back(c2);
  }
  std::size_t rows = 0;
  for (std::string line; std::getline(in, line);) {
    ++rows;
    std::vector<std::string> cells;
    for (std::stringstream ls(line); ls.good();) {
      std::string c2;
      std::getline(ls, c2, ',');
      cells.push_back(c2);
    }
    ASSERT_EQ(cells.size(), cols.size());
    for (Task t : kClassificationTasks) {
      const std::string prefix = std::string(task_name(t)) + "_p";
      double s = 0.0;
      for (std::size_t k = 0; k < cols.size(); ++k)
        if (cols[k].rfind(prefix, 0) == 0) s += std::stod(cells[k]);
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
  EXPECT_EQ(rows, 24u);
}

TEST_F(CliTest, PredictAcceptsUnlabeledRows) {
  auto c = trained("u");
  std::ofstream(path("unlabeled.csv")) << [] {
    std::string s = "id";
    for (int i = 0; i < 20; ++i) s += ",f" + std::to_string(i);
    s += ",subtlety,state,z,diagnosis,x_px,y_px,size_mm\nq";
    for (int i = 0; i < 20; ++i) s += ",0.1";
    return s + ",,,,,,,\n";
  }();
  auto r = run({"predict", "--config", c, "--out", path("u"), "--input", path("unlabeled.csv")});
  EXPECT_EQ(r.code, 0) << r.err;
}

TEST_F(CliTest, UnknownConfigKeysRejected) {
  auto c = write_config("bad.json", {{"version", 1}, {"trian", {{"epochs", 3}}}});
  auto r = run({"synth", "--config", c, "--out", path("x")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("trian"), std::string::npos);
  auto c2 = write_config("bad2.json", {{"version", 1}, {"train", {{"epochz", 3}}}});
  EXPECT_EQ(run({"synth", "--config", c2, "--out", path("x")}).code, 1);
}

TEST_F(CliTest, UnknownSubcommandOrFlagFails) {
  EXPECT_NE(run({"fly"}).code, 0);
  EXPECT_NE(run({"train", "--bogus"}).code, 0);
  EXPECT_NE(run({}).code, 0);
}

TEST_F(CliTest, RerunFromEffectiveConfigIsByteIdentical) {
  trained("first");
  const auto eff = path("first/config.json");
  EXPECT_EQ(nlohmann::json::parse(slurp(eff)).at("data").at("csv"), path("first/synth.csv"));
  ASSERT_EQ(run({"eval", "--config", eff, "--out", path("first")}).code, 0);
  auto r = run({"train", "--config", eff, "--out", path("second")});
  ASSERT_EQ(r.code, 0) << r.err;
  ASSERT_EQ(run({"eval", "--config", eff, "--out", path("second")}).code, 0);
  for (const char* f : {"checkpoint.bin", "trace.jsonl", "report.json", "report.txt"})
    EXPECT_EQ(slurp(path(std::string("first/") + f)), slurp(path(std::string("second/") + f))) << f;
}

TEST_F(CliTest, PredictRecoversTrainingLabelsAfterOverfit) {
  nlohmann::json cfg = {{"version", 1},
                        {"seed", 42},
                        {"synth", {{"samples", 64}, {"feature_dim", 32}}},
                        {"network", {{"hidden", 64}, {"dropout_rate", 0.0}}},
                        {"train", {{"epochs", 300}, {"batch_size", 16}, {"learning_rate", 1e-3}}}};
  auto c = write_config("overfit.json", cfg);
  ASSERT_EQ(run({"synth", "--config", c, "--out", path("o")}).code, 0);
  auto args = [&](const char* cmd) {
    return std::vector<std::string>{cmd, "--config", c, "--out", path("o"), "--input",
                                    path("o/synth.csv")};
  };
  ASSERT_EQ(run(args("train")).code, 0);
  ASSERT_EQ(run(args("predict")).code, 0);

  auto truth = load_csv(path("o/synth.csv"));
  std::istringstream in(slurp(path("o/predictions.csv")));
  std::string header;
  std::getline(in, header);
  std::vector<std::string> cols;
  for (std::stringstream hs(header); hs.good();) {
    std::string c2;
    std::getline(hs, c2, ',');
    cols.push_back(c2);
  }
  std::size_t rows = 0, matched = 0;
  for (std::string line; std::getline(in, line); ++rows) {
    std::vector<std::string> cells;
    for (std::stringstream ls(line); ls.good();) {
      std::string c2;
      std::getline(ls, c2, ',');
      cells.push_back(c2);
    }
    ASSERT_LT(rows, truth.size());
    const auto& rec = truth.records[rows];
    bool all = cells[0] == rec.id;
    for (Task t : kClassificationTasks) {
      const auto col = std::find(cols.begin(), cols.end(), std::string(task_name(t)) + "_label");
      ASSERT_NE(col, cols.end());
      all = all && cells[static_cast<std::size_t>(col - cols.begin())] ==
                       truth.vocab.name(t, rec.label(t).value());
    }
    if (all) ++matched;
  }
  EXPECT_EQ(rows, 64u);
  EXPECT_GE(static_cast<double>(matched) / static_cast<double>(rows), 0.95);
}

TEST(RunConfig, DefaultsRoundTripThroughJson) {
  RunConfig cfg;
  auto doc = to_json(cfg);
  auto back = parse_run_config(doc);
  EXPECT_EQ(to_json(back), doc);
  EXPECT_EQ(back.train.epochs, 200u);
  EXPECT_EQ(back.train.learning_rate, 1e-4);
}

TEST(RunConfig, FieldValidation) {
  EXPECT_THROW(parse_run_config({{"version", 2}}), ValidationError);
  EXPECT_THROW(parse_run_config({{"version", 1}, {"train", {{"epochs", 0}}}}), ValidationError);
  EXPECT_THROW(parse_run_config({{"version", 1}, {"train", {{"learning_rate", -1.0}}}}),
               ValidationError);
  EXPECT_THROW(parse_run_config({{"version", 1}, {"network", {{"dropout_rate", 1.5}}}}),
               ValidationError);
  EXPECT_THROW(parse_run_config({{"version", 1}, {"train", {{"task_weights", {{"x", 1.0}}}}}}),
               ValidationError);
  EXPECT_THROW(parse_run_config({{"version", 1}, {"train", {{"epochs", "ten"}}}}),
               ValidationError);
}
