#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "fedaml/config.hpp"
#include "fedaml/error.hpp"
#include "fedaml/pipeline.hpp"
#include "fedaml/policy.hpp"
#include "fedaml/records.hpp"

namespace fs = std::filesystem;
using namespace fedaml;

namespace {

fs::path scratch_root() {
  return fs::temp_directory_path() / ("fedaml_cli_" + std::to_string(::getpid()));
}

struct Cleanup {
  ~Cleanup() {
    std::error_code ec;
    fs::remove_all(scratch_root(), ec);
  }
} cleanup;

fs::path scratch(const std::string& name) {
  const fs::path p = scratch_root() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Runs the binary with stdout and stderr captured next to `dir`.
int run_cli(const std::string& args, const fs::path& dir) {
  const std::string cmd = std::string(FEDAML_BIN) + " " + args + " > " + (dir / "stdout.txt").string() +
                          " 2> " + (dir / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const char* kSmallConfig = R"({
  "seed": 5,
  "data": {"generator": {
    "countries": [{"code": "US", "accounts": 60, "transactions": 300},
                  {"code": "DE", "accounts": 60, "transactions": 300}],
    "patterns": 4}},
  "federation": {"rounds": 6},
  "decide": {"episodes": 3}
})";

fs::path write_config(const fs::path& dir, const std::string& text) {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << text;
  return p;
}

}  // namespace

TEST_CASE("config rejects unknown keys with their path") {
  try {
    parse_config(nlohmann::json::parse(R"({"federation": {"lrr": 0.1}})"));
    FAIL("expected a UsageError");
  } catch (const UsageError& e) {
    CHECK(std::string(e.what()).find("federation.lrr") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config(nlohmann::json::parse(R"({"colour": 1})")), UsageError);
  CHECK_THROWS_AS(parse_config(nlohmann::json::parse(R"({"split": {"train_fraction": 1.5}})")),
                  UsageError);
  CHECK_THROWS_AS(parse_config(nlohmann::json::parse(R"({"federation": {"rounds": "many"}})")),
                  UsageError);
}

TEST_CASE("config survives a round trip through JSON") {
  const RunConfig a = parse_config(nlohmann::json::parse(kSmallConfig));
  const nlohmann::json j = to_json(a);
  CHECK(to_json(parse_config(j)) == j);
  CHECK(a.federation.rounds == 6);
  CHECK(a.federation.seed == 5);
}

TEST_CASE("exit codes") {
  const fs::path dir = scratch("codes");
  CHECK(run_cli("--out " + dir.string() + " generate --pattern loop --size 3", dir) == 0);
  CHECK(run_cli("--out " + dir.string() + " frobnicate", dir) == 1);
  CHECK(run_cli("--out " + dir.string() + " generate --pattern spiral --size 3", dir) == 1);
  CHECK(run_cli("--out " + dir.string() + " generate --sbm \"n=10 s=20\"", dir) == 1);

  const fs::path empty = scratch("codes_empty");
  CHECK(run_cli("--out " + empty.string() + " detect", empty) == 2);

  const fs::path bad = scratch("codes_bad_csv");
  std::ofstream(bad / "transactions.csv") << "timestamp,from_bank\n1,US\n";
  CHECK(run_cli("--out " + bad.string() + " train", bad) == 2);

  const fs::path nan = scratch("codes_nan");
  const fs::path cfg = write_config(nan, R"({
    "data": {"generator": {"countries": [{"code": "US", "accounts": 30, "transactions": 100}],
                           "patterns": 2}},
    "federation": {"rounds": 3, "lr": 1e300, "optimizer": "sgd"}})");
  REQUIRE(run_cli("--config " + cfg.string() + " --out " + nan.string() + " generate", nan) == 0);
  CHECK(run_cli("--config " + cfg.string() + " --out " + nan.string() + " train", nan) == 3);
}

TEST_CASE("single patterns") {
  const fs::path dir = scratch("patterns");
  REQUIRE(run_cli("--out " + dir.string() + " generate --pattern loop --size 3", dir) == 0);
  auto records = ingest_csv(dir / "transactions.csv");
  CHECK(records.size() == 3);
  for (const auto& r : records) CHECK(r.is_laundering == 1);

  REQUIRE(run_cli("--out " + dir.string() + " generate --pattern fan-out --size 4", dir) == 0);
  records = ingest_csv(dir / "transactions.csv");
  CHECK(records.size() == 3);
  for (const auto& r : records) CHECK(r.is_laundering == 1);
}

TEST_CASE("SBM files are reproducible") {
  const fs::path a = scratch("sbm_a"), b = scratch("sbm_b"), c = scratch("sbm_c");
  const std::string sbm = " generate --sbm \"n=60 s=10 pin=0.5 pout=0.05\"";
  REQUIRE(run_cli("--seed 3 --out " + a.string() + sbm, a) == 0);
  REQUIRE(run_cli("--seed 3 --out " + b.string() + sbm, b) == 0);
  REQUIRE(run_cli("--seed 4 --out " + c.string() + sbm, c) == 0);
  CHECK(slurp(a / "transactions.csv") == slurp(b / "transactions.csv"));
  CHECK(slurp(a / "ground_truth.csv") == slurp(b / "ground_truth.csv"));
  CHECK(slurp(a / "transactions.csv") != slurp(c / "transactions.csv"));
}

TEST_CASE("staged run") {
  const fs::path dir = scratch("stages");
  const std::string base = "--config " + write_config(dir, kSmallConfig).string() + " --out " + dir.string();

  SUBCASE("a stage without its input names the missing file") {
    REQUIRE(run_cli(base + " generate", dir) == 0);
    CHECK(run_cli(base + " ppr", dir) == 2);
    CHECK(slurp(dir / "stderr.txt").find("scores.csv") != std::string::npos);
  }

  SUBCASE("every stage in order") {
    REQUIRE(run_cli(base + " generate", dir) == 0);
    REQUIRE(run_cli(base + " train", dir) == 0);
    REQUIRE(run_cli(base + " detect", dir) == 0);
    const std::string first = slurp(dir / "scores.csv");
    REQUIRE(run_cli(base + " detect", dir) == 0);
    CHECK(slurp(dir / "scores.csv") == first);
    CHECK_FALSE(first.empty());

    REQUIRE(run_cli(base + " ppr", dir) == 0);
    REQUIRE(run_cli(base + " propagate", dir) == 0);
    REQUIRE(run_cli(base + " decide --fixed-threshold 0.3974", dir) == 0);
    std::ifstream log(dir / "decisions.csv");
    const auto decisions = read_decision_log(log);
    REQUIRE_FALSE(decisions.empty());
    for (const auto& d : decisions) CHECK((d.action == Action::kFreeze) == (d.score >= 0.3974));
    CHECK(slurp(dir / "economic_report.csv").find("0.397400") != std::string::npos);

    REQUIRE(run_cli(base + " report", dir) == 0);
    for (const fs::path& p : {dir / "report.txt", dir / "detection_report.csv", dir / "clusters.tsv",
                              dir / "refined_scores.csv", dir / "train_metrics.csv", dir / "model.ckpt"})
      CHECK(fs::exists(p));
    CHECK(slurp(dir / "report.txt").find("Overall") != std::string::npos);
  }
}

TEST_CASE("full run matches the staged run") {
  const fs::path a = scratch("run_all"), b = scratch("run_stages");
  const std::string ca = "--config " + write_config(a, kSmallConfig).string() + " --out " + a.string();
  const std::string cb = "--config " + write_config(b, kSmallConfig).string() + " --out " + b.string();
  REQUIRE(run_cli(ca + " run", a) == 0);
  for (const char* stage : {"generate", "train", "detect", "ppr", "propagate", "decide", "report"})
    REQUIRE(run_cli(cb + " " + stage, b) == 0);
  for (const char* f : {"scores.csv", "clusters.tsv", "refined_scores.csv", "decisions.csv",
                        "economic_report.csv"})
    CHECK_MESSAGE(slurp(a / f) == slurp(b / f), f);
}
