// Drives the sqens binary end to end on a small blobs experiment.

#include "doctest.h"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "sqens/config.hpp"
#include "sqens/quant.hpp"
#include "sqens/report.hpp"

using namespace sqens;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(SQENS_CLI) + " " + args + " 2>&1";
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  std::string out;
  char buf[512];
  while (std::fgets(buf, sizeof buf, p)) out += buf;
  const int status = pclose(p);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

const fs::path& workdir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "sqens_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    std::ofstream(d / "exp.json") << R"({
  "dataset": {"kind": "blobs", "n_per_class": 100, "test_per_class": 30, "classes": 3, "dim": 6, "separation": 4},
  "arch": {"extractor": [24, 12]},
  "train": {"epochs": 8, "n_members": 4, "batch_size": 30, "learning_rate": 0.03, "mu": 0.1},
  "attacks": [{"kind": "pgd", "epsilon": 0.0, "steps": 5},
              {"kind": "pgd", "epsilon": 0.05, "steps": 5},
              {"kind": "pgd", "epsilon": 0.15, "steps": 5}],
  "seed": 5
})";
    std::ofstream(d / "empty.json") << R"({
  "dataset": {"kind": "blobs", "n_per_class": 100, "test_per_class": 30, "classes": 3, "dim": 6, "separation": 4},
  "arch": {"extractor": [24, 12]},
  "output": "out",
  "seed": 5
})";
    std::ofstream(d / "typo.json") << R"({"dataset": {"kind": "blobs"}, "train": {"betta": 1}})";
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("quantize-demo prints the SQ table") {
  const Run r = run("quantize-demo --value 0.6 --bins 5 --alpha 2");
  REQUIRE(r.code == 0);
  const auto d = sq_pmf(0.6, make_bin_grid(0, 1, 5), 2.0);
  std::stringstream expected;
  expected << "bin,center,probability\n";
  for (int i = 0; i < 5; ++i) expected << i << ',' << format_double(d.bin(i)) << ',' << format_double(d.probs[i]) << '\n';
  CHECK(r.out.find(expected.str()) != std::string::npos);
  CHECK(r.out.find("0,0,0\n") != std::string::npos);
}

TEST_CASE("train, attack, aip and detect on blobs") {
  const fs::path dir = workdir();
  const std::string cfg = "--config " + (dir / "exp.json").string() + " -q";
  const std::string out1 = " --out " + (dir / "a").string(), out2 = " --out " + (dir / "b").string();

  const auto t0 = std::chrono::steady_clock::now();
  const Run tr = run("train " + cfg + out1);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  REQUIRE_MESSAGE(tr.code == 0, tr.out);
  CHECK(secs < 60);
  CHECK(fs::exists(dir / "a" / "model.sqar"));
  CHECK(fs::exists(dir / "a" / "train.log"));
  const Json summary = Json::parse(slurp(dir / "a" / "train_summary.json"));
  CHECK(summary["history"].size() == 8);
  CHECK(summary["test_accuracy"].get<double>() > 0.8);
  CHECK(slurp(dir / "a" / "history.csv").rfind("epoch,total,ce,mi,spacing,accuracy\n", 0) == 0);

  const Run aip = run("aip " + cfg + out1);
  REQUIRE_MESSAGE(aip.code == 0, aip.out);
  std::ifstream csv(dir / "a" / "aip.csv");
  const auto rows = read_aip_csv(csv);
  REQUIRE(rows.size() == 3);
  for (int i = 0; i < 3; ++i) CHECK(rows[static_cast<std::size_t>(i)].strength_index == i + 1);
  CHECK(rows[0].mean_mi == rows[0].clean_mi);
  const Json as = Json::parse(slurp(dir / "a" / "aip_summary.json"));
  CHECK(rows[0].accuracy == as["clean_accuracy"].get<double>());
  CHECK(slurp(dir / "a" / "aip.svg").find("</svg>") != std::string::npos);

  // Same config and seed in a fresh directory gives identical CSV output.
  REQUIRE(run("train " + cfg + out2).code == 0);
  REQUIRE(run("aip " + cfg + out2).code == 0);
  CHECK(slurp(dir / "a" / "aip.csv") == slurp(dir / "b" / "aip.csv"));
  CHECK(slurp(dir / "a" / "history.csv") == slurp(dir / "b" / "history.csv"));

  const Run det = run("detect " + cfg + out1);
  REQUIRE_MESSAGE(det.code == 0, det.out);
  const Json ds = Json::parse(slurp(dir / "a" / "detect_summary.json"));
  CHECK(ds["rows"].size() == 3);
  CHECK(ds["rows"][0]["auc"].get<double>() == doctest::Approx(0.5));
  CHECK(fs::exists(dir / "a" / "roc_3_pgd.csv"));

  // An --alpha override changes the loaded model's quantizers.
  const Run at = run("attack " + cfg + out1 + " --alpha 1");
  REQUIRE_MESSAGE(at.code == 0, at.out);
  CHECK(slurp(dir / "a" / "attack.csv").rfind("attack,epsilon,steps,step_size,eot_samples,accuracy", 0) == 0);
}

TEST_CASE("empty attack list gives a clean-only report") {
  const fs::path dir = workdir();
  const std::string cfg = "--config " + (dir / "empty.json").string() + " -q";
  REQUIRE(run("train " + cfg).code == 0);
  const Run r = run("attack " + cfg);
  REQUIRE_MESSAGE(r.code == 0, r.out);
  const Json s = Json::parse(slurp(dir / "out" / "attack_summary.json"));
  CHECK(s["rows"].empty());
  CHECK(s["clean_accuracy"].get<double>() > 0.5);
}

TEST_CASE("failures map to exit codes") {
  const fs::path dir = workdir();
  const Run typo = run("train --config " + (dir / "typo.json").string());
  CHECK(typo.code == 2);
  CHECK(typo.out.find("betta") != std::string::npos);
  CHECK(run("train --config " + (dir / "exp.json").string() + " --beta -1").code == 2);
  CHECK(run("attack -q --config " + (dir / "exp.json").string() + " --model " + (dir / "missing.sqar").string()).code == 3);
  CHECK(run("frobnicate").code == 2);
  CHECK(run("train").code == 2);
  CHECK(run("--help").code == 0);
}
