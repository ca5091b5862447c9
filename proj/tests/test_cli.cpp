#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::current_path() / "cli_work";

int run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + REED_CLI_PATH + "\" " + args + " > \"" +
                          (kWork / "last_stdout.txt").string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path write_config(const std::string& name, const std::string& body) {
  fs::create_directories(kWork);
  const fs::path p = kWork / name;
  std::ofstream(p) << body;
  return p;
}

std::string small_config() {
  return write_config("small.json", R"({
  "seed": 5,
  "data": {"classes": 4, "per_class": 60, "dim": 8},
  "noise": {"kind": "symmetric", "ratio": 0.5},
  "ssrl": {"epochs": 4, "hidden": [16, 16], "projection_dim": 8},
  "stage2": {"epochs": 8},
  "stage3": {"epochs": 3, "batch_size": 32},
  "supervised": {"epochs": 4}
})")
      .string();
}

}  // namespace

TEST_CASE("pipeline output is reproducible byte for byte") {
  const auto cfg = small_config();
  REQUIRE(run_cli("pipeline --config " + cfg + " --out-dir " + (kWork / "p1").string()) == 0);
  REQUIRE(run_cli("pipeline --config " + cfg + " --out-dir " + (kWork / "p2").string()) == 0);
  for (const char* f : {"metrics.csv", "model.json", "transfer.json", "encoder.json", "config.json"})
    CHECK_MESSAGE(read_file(kWork / "p1" / f) == read_file(kWork / "p2" / f), f);
  CHECK(read_file(kWork / "p1" / "metrics.csv").rfind("run_id,epoch,split,metric,value\n", 0) == 0);
}

TEST_CASE("stagewise commands agree with the pipeline") {
  const auto cfg = small_config();
  const auto dir = kWork / "stages";
  fs::create_directories(dir);
  auto p = [&](const char* f) { return (dir / f).string(); };
  REQUIRE(run_cli("gen-data --config " + cfg + " --out-train " + p("train.csv") + " --out-test " + p("test.csv")) == 0);
  REQUIRE(run_cli("stage1 --config " + cfg + " --data " + p("train.csv") + " --out " + p("encoder.json") +
                  " --loss-curve " + p("loss.csv")) == 0);
  REQUIRE(run_cli("stage2 --config " + cfg + " --encoder " + p("encoder.json") + " --data " + p("train.csv") +
                  " --test " + p("test.csv") + " --out " + p("transfer.json") + " --classifier-out " +
                  p("classifier.json") + " --histograms " + p("hist.csv") + " --class-counts " + p("counts.csv")) ==
          0);
  REQUIRE(run_cli("stage3 --config " + cfg + " --transfer " + p("transfer.json") + " --encoder " + p("encoder.json") +
                  " --classifier " + p("classifier.json") + " --data " + p("train.csv") + " --test " + p("test.csv") +
                  " --out " + p("model.json") + " --metrics " + p("stage3.csv")) == 0);
  REQUIRE(run_cli("pipeline --config " + cfg + " --out-dir " + p("pipe")) == 0);
  CHECK(read_file(dir / "encoder.json") == read_file(dir / "pipe" / "encoder.json"));
  CHECK(read_file(dir / "transfer.json") == read_file(dir / "pipe" / "transfer.json"));
  CHECK(read_file(dir / "model.json") == read_file(dir / "pipe" / "model.json"));
  CHECK(read_file(dir / "stage3.csv").rfind("epoch,test_acc,test_acc_ema,l_sup,l_unsup,r_graph\n", 0) == 0);
  CHECK(read_file(dir / "hist.csv").rfind("series,bin_left,bin_right,count\n", 0) == 0);

  REQUIRE(run_cli("histograms --classifier " + p("classifier.json") + " --data " + p("train.csv") + " --transfer " +
                  p("transfer.json") + " --out " + p("hist2.csv") + " --class-counts " + p("counts2.csv")) == 0);
  CHECK(read_file(dir / "hist.csv") == read_file(dir / "hist2.csv"));
  CHECK(read_file(dir / "counts.csv") == read_file(dir / "counts2.csv"));

  REQUIRE(run_cli("eval --model " + p("model.json") + " --data " + p("test.csv") + " --out " + p("eval.csv")) == 0);
  CHECK(read_file(kWork / "last_stdout.txt").rfind("top1 ", 0) == 0);
}

TEST_CASE("fig1 and ablation outputs are reproducible") {
  const auto cfg = small_config();
  REQUIRE(run_cli("fig1 --config " + cfg + " --out " + (kWork / "f1.csv").string()) == 0);
  REQUIRE(run_cli("fig1 --config " + cfg + " --out " + (kWork / "f2.csv").string()) == 0);
  CHECK(read_file(kWork / "f1.csv") == read_file(kWork / "f2.csv"));

  REQUIRE(run_cli("ablate --config " + cfg + " --seeds 2 --out " + (kWork / "a1.csv").string()) == 0);
  REQUIRE(run_cli("ablate --config " + cfg + " --seeds 2 --out " + (kWork / "a2.csv").string()) == 0);
  const auto csv = read_file(kWork / "a1.csv");
  CHECK(csv == read_file(kWork / "a2.csv"));
  CHECK(csv.find("seed5/cbs_on_gsr_on") != std::string::npos);
  CHECK(csv.find("seed6/cbs_off_gsr_off") != std::string::npos);
}

TEST_CASE("exit codes") {
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("") == 2);
  CHECK(run_cli("pipeline --out-dir " + (kWork / "noseed").string()) == 2);
  CHECK(read_file(kWork / "last_stdout.txt").find("seed") != std::string::npos);
  const auto bad = write_config("bad.json", R"({"seed": 1, "bogus": 2})");
  CHECK(run_cli("fig1 --config " + bad.string()) == 2);
  CHECK(read_file(kWork / "last_stdout.txt").find("bogus") != std::string::npos);
  CHECK(run_cli("stage1 --seed 1 --data " + (kWork / "missing.csv").string()) == 2);
  CHECK(run_cli("gen-data --seed 1 --noise-ratio 1.5") == 2);
  CHECK(run_cli("pipeline --seed notanumber") == 2);
}
