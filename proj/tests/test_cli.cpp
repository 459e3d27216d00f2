#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "fixseg/cli.hpp"
#include "fixseg/marida_data.hpp"
#include "json.hpp"
#include "reference_tables.hpp"
#include "test_support.hpp"

using namespace fixseg;
using fixseg::testing::TempDir;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

// Per-class share of labeled training pixels held by `ids`, counted from the label files.
std::vector<double> recount(const DatasetLayout& layout, const std::vector<std::string>& ids,
                            const std::vector<std::string>& all) {
  const auto& scheme = ClassScheme::marida();
  std::vector<double> part(5, 0.0), total(5, 0.0);
  for (const auto& s : load_samples(layout, all, scheme))
    for (auto v : s.labels.labels())
      if (v >= 0) {
        total[v] += 1;
        if (std::find(ids.begin(), ids.end(), s.patch.patch_id) != ids.end()) part[v] += 1;
      }
  std::vector<double> pct;
  for (int c = 0; c < 5; ++c) pct.push_back(total[c] > 0 ? 100.0 * part[c] / total[c] : -1.0);
  return pct;
}

}  // namespace

TEST_CASE("synth then split at 20 percent") {
  TempDir tmp("cli_split");
  const auto root = (tmp.path() / "data").string();
  auto synth = run({"synth", "--out", root, "--seed", "3", "--patches", "48", "--size", "32"});
  REQUIRE(synth.code == kExitOk);

  auto split = run({"split", "--data", root, "--percent", "20", "--seed", "7"});
  REQUIRE(split.code == kExitOk);
  DatasetLayout layout(root);
  const auto manifest = layout.manifest_file(20, 7);
  REQUIRE(fs::exists(manifest));
  auto j = nlohmann::json::parse(slurp(manifest));
  auto labeled = j.at("labeled_ids").get<std::vector<std::string>>();
  auto unlabeled = j.at("unlabeled_ids").get<std::vector<std::string>>();
  CHECK(labeled.size() + unlabeled.size() == 48);
  for (double f : recount(layout, labeled, layout.read_ids("train"))) {
    CHECK(f >= 15.0);
    CHECK(f <= 25.0);
  }

  const std::string first = slurp(manifest);
  auto again = run({"split", "--data", root, "--percent", "20", "--seed", "7",
                    "--out", (tmp.path() / "again.json").string()});
  REQUIRE(again.code == kExitOk);
  CHECK(slurp(tmp.path() / "again.json") == first);

  // the data root may come from the environment
  ::setenv("FIXSEG_DATA_ROOT", root.c_str(), 1);
  auto env = run({"split", "--percent", "20", "--seed", "7", "--out", (tmp.path() / "env.json").string()});
  ::unsetenv("FIXSEG_DATA_ROOT");
  CHECK(env.code == kExitOk);
  CHECK(slurp(tmp.path() / "env.json") == first);
}

TEST_CASE("analyze variance prints two-decimal variances") {
  TempDir tmp("cli_var");
  const auto table = tmp.path() / "diff.txt";
  write_file(table, fixseg::testing::difference_table_text());
  auto r = run({"analyze", "variance", "--table", table.string()});
  REQUIRE(r.code == kExitOk);
  std::istringstream lines(r.out);
  std::map<std::string, std::string> printed;
  for (std::string line; std::getline(lines, line);) {
    auto cut = line.find_last_of(' ');
    std::string name = line.substr(0, line.find_last_not_of(' ', cut) + 1);
    printed[name] = line.substr(cut + 1);
  }
  CHECK(printed["Cloud"] == "213.50");
  CHECK(printed["Marine Debris"] == "60.50");
  CHECK(printed["Ship"] == "19.63");
  CHECK(printed["Algae/Organic Material"] == "15.13");
  CHECK(printed["Water"] == "12.88");

  write_file(tmp.path() / "one.txt", "Cloud 24\n");
  CHECK(run({"analyze", "variance", "--table", (tmp.path() / "one.txt").string()}).code == kExitFailure);
}

TEST_CASE("analyze confusion reports IoUs of a matrix file") {
  TempDir tmp("cli_conf");
  std::string text;
  for (const auto& row : fixseg::testing::kFull40.rows) {
    for (auto v : row) text += std::to_string(v) + " ";
    text += "\n";
  }
  write_file(tmp.path() / "m.txt", text);
  auto r = run({"analyze", "confusion", "--matrix", (tmp.path() / "m.txt").string()});
  REQUIRE(r.code == kExitOk);
  CHECK(r.out.find("IoU") != std::string::npos);
  CHECK(r.out.find("0.72") != std::string::npos);
  CHECK(r.out.find("Sum(gt)") != std::string::npos);
}

TEST_CASE("budget prints the golden count") {
  auto r = run({"budget", "--config", "ref"});
  REQUIRE(r.code == kExitOk);
  CHECK(r.out.find("839013") != std::string::npos);
  CHECK(r.out.find("GFLOPs") != std::string::npos);
}

TEST_CASE("exit codes") {
  TempDir tmp("cli_codes");
  CHECK(run({}).code == kExitUsage);
  CHECK(run({"frobnicate"}).code == kExitUsage);
  CHECK(run({"split", "--percent", "abc", "--data", "x"}).code == kExitUsage);
  CHECK(run({"split", "--data", (tmp.path() / "missing").string()}).code == kExitData);
  CHECK(run({"analyze", "variance", "--table", (tmp.path() / "missing.txt").string()}).code == kExitData);

  const auto root = (tmp.path() / "small").string();
  REQUIRE(run({"synth", "--out", root, "--patches", "3", "--size", "16", "--val", "1", "--test", "1"}).code == kExitOk);
  auto infeasible = run({"split", "--data", root, "--percent", "10", "--seed", "1"});
  CHECK(infeasible.code == kExitInfeasibleSplit);
  CHECK_FALSE(infeasible.err.empty());

  CHECK(run({"train", "--data", root, "--device", "cuda"}).code == kExitUsage);
  CHECK(run({"train", "--data", root, "--preset", "bogus"}).code == kExitUsage);
  write_file(tmp.path() / "bad.json", "{\"epochz\": 3}");
  CHECK(run({"train", "--data", root, "--config", (tmp.path() / "bad.json").string()}).code == kExitUsage);
  CHECK(run({"eval", "--data", root, "--run", (tmp.path() / "norun").string()}).code == kExitData);
}

TEST_CASE("train, eval and plot a short semi-supervised run") {
  TempDir tmp("cli_train");
  const auto root = (tmp.path() / "data").string();
  REQUIRE(run({"synth", "--out", root, "--seed", "2", "--patches", "6", "--size", "32", "--val", "2", "--test", "2"})
              .code == kExitOk);
  // hand-made split: two labeled patches
  DatasetLayout layout(root);
  auto ids = layout.read_ids("train");
  nlohmann::json manifest{{"m", 33.3},
                          {"seed", 0},
                          {"labeled_ids", std::vector<std::string>(ids.begin(), ids.begin() + 2)},
                          {"unlabeled_ids", std::vector<std::string>(ids.begin() + 2, ids.end())},
                          {"per_class_fraction", nlohmann::json::object()}};
  write_file(tmp.path() / "split.json", manifest.dump());
  write_file(tmp.path() / "cfg.json", "{\"epochs\": 5, \"lr\": 0.001, \"mu\": 1}");

  const auto run_dir = tmp.path() / "run";
  auto r = run({"train", "--data", root, "--mode", "ssl", "--preset", "main", "--config",
                (tmp.path() / "cfg.json").string(), "--split", (tmp.path() / "split.json").string(), "--epochs", "2",
                "--batch-size", "2", "--out", run_dir.string()});
  INFO(r.err);
  REQUIRE(r.code == kExitOk);
  for (const char* f : {"config.json", "split.json", "band_stats.json", "metrics_steps.csv", "metrics_epochs.csv",
                        "checkpoints/best.ckpt", "confusion_test.txt", "report.json"})
    CHECK(fs::exists(run_dir / f));

  auto cfg = nlohmann::json::parse(slurp(run_dir / "config.json"));
  CHECK(cfg.at("epochs") == 2);       // flag beats file
  CHECK(cfg.at("lr") == 0.001);       // file beats preset
  CHECK(cfg.at("mu") == 1);
  CHECK(cfg.at("batch_size") == 2);
  CHECK(cfg.at("threshold") == 0.9);  // preset at the default 10 percent
  CHECK(cfg.at("mode") == "semi_supervised");

  auto report = nlohmann::json::parse(slurp(run_dir / "report.json"));
  CHECK(report.at("best_epoch").get<int>() >= 1);
  CHECK(report.at("epochs").size() == 2);
  CHECK(report.contains("test"));

  auto ev = run({"eval", "--data", root, "--run", run_dir.string(), "--split", "test"});
  CHECK(ev.code == kExitOk);
  CHECK(ev.out.find("mIoU") != std::string::npos);

  auto pl = run({"plot", "--run", run_dir.string()});
  CHECK(pl.code == kExitOk);
  CHECK(fs::exists(run_dir / "loss.svg"));
  CHECK(slurp(run_dir / "miou.svg").find("<svg") != std::string::npos);
}
