#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "rccr/commands.hpp"

using namespace rccr;
using namespace rccr::cli;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("rccr_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// A tiny but complete run: 32x32 scenes, a handful of steps.
std::vector<std::string> tiny_overrides() {
  return {"data.scene.height=32", "data.scene.width=32", "data.scene.radius_min=4", "data.scene.radius_max=8",
          "data.train_size=20",   "data.val_size=3",      "train.iterations=4",       "train.eval_every=2",
          "train.checkpoint_every=2"};
}

nlohmann::json read(const fs::path& p) { return nlohmann::json::parse(std::ifstream(p)); }

}  // namespace

TEST(CliTrain, UnknownKeyFailsNamingIt) {
  TempDir tmp;
  std::ofstream(tmp.path / "bad.json") << R"({"train": {"iterations": 2}, "foo": 1})";
  TrainOptions o;
  o.common.config_path = (tmp.path / "bad.json").string();
  std::ostringstream out, err;
  EXPECT_EQ(cmd_train(o, out, err), kConfigError);
  EXPECT_NE(err.str().find("foo"), std::string::npos) << err.str();

  TrainOptions o2;
  o2.common.overrides = {"train.foo=3"};
  std::ostringstream err2;
  EXPECT_EQ(cmd_train(o2, out, err2), kConfigError);
  EXPECT_NE(err2.str().find("train.foo"), std::string::npos);
}

TEST(CliTrain, InvalidValuesAreConfigErrors) {
  TrainOptions o;
  o.common.overrides = {"ema.decay=1.5"};
  std::ostringstream out, err;
  EXPECT_EQ(cmd_train(o, out, err), kConfigError);
  o.common.overrides = {"device=\"gpu\""};
  EXPECT_EQ(cmd_train(o, out, err), kConfigError);
  o.common.overrides = {"ablation.RWC=false", "ablation.MB=true"};
  EXPECT_EQ(cmd_train(o, out, err), kConfigError);
}

TEST(CliTrain, WritesRunDirectoryAndResumes) {
  TempDir tmp;
  TrainOptions o;
  o.common.overrides = tiny_overrides();
  o.common.overrides.push_back("ablation.RWC=true");
  o.common.overrides.push_back("ablation.MB=false");
  o.common.out_dir = (tmp.path / "run").string();
  std::ostringstream out, err;
  ASSERT_EQ(cmd_train(o, out, err), kOk) << err.str();
  const fs::path run = tmp.path / "run";
  for (auto f : {"config.json", "metadata.json", "metrics.jsonl", "report.json"}) EXPECT_TRUE(fs::exists(run / f)) << f;
  EXPECT_EQ(read(run / "metadata.json")["ablation"]["MB"], false);
  EXPECT_EQ(read(run / "metadata.json")["ablation"]["RWC"], true);
  EXPECT_EQ(read(run / "config.json")["train"]["iterations"], 4);
  for (long s : {0, 2, 4}) EXPECT_TRUE(fs::exists(checkpoint_path(run, s))) << s;
  EXPECT_EQ(read(run / "report.json")["per_class"].size(), 5u);

  std::vector<nlohmann::json> steps;
  std::ifstream metrics(run / "metrics.jsonl");
  for (std::string line; std::getline(metrics, line);) {
    auto j = nlohmann::json::parse(line);
    if (j["type"] == "step") steps.push_back(j);
  }
  ASSERT_EQ(steps.size(), 4u);

  // Resume from step 2 into a fresh directory; steps 2 and 3 must match.
  TrainOptions r;
  r.resume = checkpoint_path(run, 2).string();
  r.common.out_dir = (tmp.path / "resumed").string();
  ASSERT_EQ(cmd_train(r, out, err), kOk) << err.str();
  std::vector<nlohmann::json> resumed;
  std::ifstream m2(tmp.path / "resumed" / "metrics.jsonl");
  for (std::string line; std::getline(m2, line);) {
    auto j = nlohmann::json::parse(line);
    if (j["type"] == "step") resumed.push_back(j);
  }
  ASSERT_EQ(resumed.size(), 2u);
  for (int i = 0; i < 2; ++i)
    for (auto key : {"step", "l_ce", "l_cons", "l_cont", "total", "anchors", "negatives"})
      EXPECT_EQ(resumed[i][key], steps[2 + i][key]) << key;

  // eval: teacher only by default, two reports with --compare-student,
  // identical output across invocations.
  EvalOptions e;
  e.checkpoint = checkpoint_path(run, 4).string();
  e.common.out_dir = (tmp.path / "eval1").string();
  ASSERT_EQ(cmd_eval(e, out, err), kOk) << err.str();
  e.common.out_dir = (tmp.path / "eval2").string();
  ASSERT_EQ(cmd_eval(e, out, err), kOk);
  auto first = read(tmp.path / "eval1" / "eval.json");
  EXPECT_EQ(first, read(tmp.path / "eval2" / "eval.json"));
  ASSERT_EQ(first.size(), 1u);
  EXPECT_EQ(first[0]["model"], "teacher");
  EXPECT_EQ(first[0]["per_class"].size(), 5u);
  e.compare_student = true;
  e.common.out_dir = (tmp.path / "eval3").string();
  ASSERT_EQ(cmd_eval(e, out, err), kOk);
  auto both = read(tmp.path / "eval3" / "eval.json");
  ASSERT_EQ(both.size(), 2u);
  EXPECT_EQ(both[1]["model"], "student");

  // export
  ExportOptions x{run.string(), (tmp.path / "csv").string()};
  ASSERT_EQ(cmd_export(x, out, err), kOk) << err.str();
  std::ifstream csv(tmp.path / "csv" / "steps.csv");
  int lines = 0;
  for (std::string line; std::getline(csv, line);) ++lines;
  EXPECT_EQ(lines, 5);
}

TEST(CliEval, CorruptCheckpointIsRuntimeFailure) {
  TempDir tmp;
  std::ofstream(tmp.path / "bad.ckpt") << "not a checkpoint";
  EvalOptions e;
  e.checkpoint = (tmp.path / "bad.ckpt").string();
  std::ostringstream out, err;
  EXPECT_EQ(cmd_eval(e, out, err), kRuntimeFailure);
  EXPECT_NE(err.str().find("checkpoint"), std::string::npos) << err.str();
  e.checkpoint = (tmp.path / "missing.ckpt").string();
  EXPECT_EQ(cmd_eval(e, out, err), kRuntimeFailure);
}

TEST(CliEval, SubsetReportsSixteenAndThirteen) {
  TrainConfig cfg;
  cfg.data.scene.num_classes = 16;
  cfg.data.scene.height = cfg.data.scene.width = 16;
  cfg.data.val_size = 2;
  cfg.validate();
  auto st = init_state(cfg);
  auto data = make_datasets(cfg);
  EvalOptions o;
  o.subset = "synthia13";
  auto j = evaluate_checkpoint(st, data.target_val, o);
  ASSERT_EQ(j.size(), 1u);
  EXPECT_TRUE(j[0].contains("miou_16"));
  EXPECT_TRUE(j[0].contains("miou_13"));
  EXPECT_EQ(j[0]["miou"], j[0]["miou_13"]);
  EXPECT_EQ(j[0]["per_class"][0]["name"], "road");
}

TEST(CliAblate, SweepSpecValidation) {
  EXPECT_THROW(sweep_from_json({{"rows", {"baseline"}}, {"bogus", 1}}), ConfigError);
  EXPECT_THROW(sweep_from_json({{"rows", {"VI"}}}), ConfigError);
  EXPECT_THROW(sweep_from_json({{"seeds", nlohmann::json::array()}}), ConfigError);
  auto d = sweep_from_json(nlohmann::json::object());
  EXPECT_EQ(d.rows, (std::vector<std::string>{"baseline", "I", "II", "III", "IV", "V"}));
  EXPECT_EQ(d.seeds, std::vector<std::uint64_t>{0});
}

TEST(CliAblate, AggregationIsMeanAndSampleStd) {
  RowStats r{"I", {0.50, 0.56, 0.59}, {}};
  EXPECT_NEAR(r.mean(), 0.55, 1e-15);
  // Deviations -0.05, 0.01, 0.04: squares sum to 0.0042, over n - 1 = 2.
  EXPECT_NEAR(r.spread(), std::sqrt(0.0021), 1e-15);
  EXPECT_EQ((RowStats{"I", {0.4}, {}}).spread(), 0.0);
  auto table = format_table({r, RowStats{"V", {}, {"seed 0: boom"}}});
  EXPECT_NE(table.find("55.00 +- 4.58  (n=3)"), std::string::npos) << table;
  EXPECT_NE(table.find("failed"), std::string::npos);
  auto j = table_to_json({r});
  EXPECT_EQ(j[0]["flags"]["RWC"], true);
  EXPECT_EQ(j[0]["flags"]["NS_R"], false);
}

TEST(CliAblate, TwoRowSweepProducesTwoRowTable) {
  TempDir tmp;
  std::ofstream(tmp.path / "sweep.json") << R"({"rows": ["baseline", "I"], "seeds": [0]})";
  AblateOptions o;
  o.common.overrides = tiny_overrides();
  o.common.overrides.push_back("train.iterations=2");
  o.common.out_dir = (tmp.path / "out").string();
  o.sweep_path = (tmp.path / "sweep.json").string();
  std::ostringstream out, err;
  ASSERT_EQ(cmd_ablate(o, out, err), kOk) << err.str();
  auto table = read(tmp.path / "out" / "table.json");
  ASSERT_EQ(table.size(), 2u);
  EXPECT_EQ(table[0]["row"], "baseline");
  EXPECT_EQ(table[1]["row"], "I");
  EXPECT_EQ(table[1]["miou"].size(), 1u);
  EXPECT_TRUE(fs::exists(tmp.path / "out" / "I" / "seed0" / "report.json"));
  EXPECT_TRUE(fs::exists(tmp.path / "out" / "table.txt"));
}

TEST(CliSelftest, PassesByDefault) {
  std::ostringstream out;
  selftest::Options opt;
  opt.mixing_cases = 100;
  EXPECT_EQ(cmd_selftest(opt, out), kOk) << out.str();
  for (auto suite : {"contrastive", "ema", "mixing", "bank", "miou"})
    EXPECT_NE(out.str().find(std::string("PASS ") + suite), std::string::npos) << suite;
  auto results = selftest::run_all(opt);
  EXPECT_GE(results.front().cases, 100);
}

TEST(CliSelftest, ZeroTemperatureFailsWithPrecondition) {
  std::ostringstream out;
  selftest::Options opt;
  opt.temperature = 0.0;
  opt.mixing_cases = 10;
  EXPECT_EQ(cmd_selftest(opt, out), kSelftestFailure);
  EXPECT_NE(out.str().find("FAIL contrastive"), std::string::npos) << out.str();
  EXPECT_NE(out.str().find("precondition"), std::string::npos) << out.str();
}

TEST(CliGenData, WritesLoadableManifests) {
  TempDir tmp;
  GenDataOptions g;
  g.count = 3;
  g.common.overrides = {"data.scene.height=16", "data.scene.width=20"};
  g.common.out_dir = tmp.path.string();
  std::ostringstream out, err;
  ASSERT_EQ(cmd_gen_data(g, out, err), kOk) << err.str();
  auto src = adapter_load(tmp.path / "source" / "manifest.json");
  auto tgt = adapter_load(tmp.path / "target" / "manifest.json");
  ASSERT_EQ(src->size(), 3u);
  EXPECT_EQ(src->get(0).image.width(), 20);
  EXPECT_EQ(tgt->get(2).label.h, 16);
  g.domain = "neither";
  EXPECT_EQ(cmd_gen_data(g, out, err), kConfigError);
}
