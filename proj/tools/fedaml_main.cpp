// fedaml: command line entry point for the detection / clustering /
// decision pipeline. Every stage reads and writes files in --out.

#include <malloc.h>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/cfg/env.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "fedaml/config.hpp"
#include "fedaml/error.hpp"
#include "fedaml/pipeline.hpp"

namespace {

using namespace fedaml;

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("fedaml");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  spdlog::set_level(spdlog::level::info);
  if (const char* v = std::getenv("FEDAML_LOG")) {
    const auto level = spdlog::level::from_str(v);
    // from_str maps unknown names to "off"; only accept a real match.
    if (level != spdlog::level::off || std::string(v) == "off") {
      spdlog::set_level(level);
    } else {
      spdlog::warn("FEDAML_LOG={} is not a log level; using info", v);
    }
  }
}

// "n=200 s=40 pin=0.5 pout=0.05" (spaces or commas between fields).
SbmSpec parse_sbm(const std::string& text, std::uint64_t seed) {
  SbmSpec spec;
  spec.seed = seed;
  std::string norm = text;
  for (char& c : norm)
    if (c == ',') c = ' ';
  std::istringstream in(norm);
  std::string field;
  while (in >> field) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw UsageError("--sbm field '" + field + "' is not key=value");
    const std::string key = field.substr(0, eq);
    const std::string value = field.substr(eq + 1);
    try {
      if (key == "n") spec.n = std::stoul(value);
      else if (key == "s") spec.s = std::stoul(value);
      else if (key == "pin") spec.p_in = std::stod(value);
      else if (key == "pout") spec.p_out = std::stod(value);
      else throw UsageError("--sbm: unknown key '" + key + "' (n, s, pin, pout)");
    } catch (const std::invalid_argument&) {
      throw UsageError("--sbm: bad value for " + key);
    } catch (const std::out_of_range&) {
      throw UsageError("--sbm: bad value for " + key);
    }
  }
  validate(spec);
  return spec;
}

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "run";
  // generate
  std::string pattern;
  int size = 0;
  std::string sbm;
  // train
  std::optional<std::size_t> rounds;
  bool isolated = false;
  // decide
  std::optional<double> fixed_threshold;
  std::optional<double> budget;
  bool raw_scores = false;
  // report
  std::string overall;
  // detectability
  std::size_t n = 400;
  std::size_t s = 40;
  double p_out = 0.05;
  std::vector<double> kappas;
  std::size_t trials = 50;
  double alpha = 0.15;
  bool calibrate = false;
  std::string constant_path;
};

RunConfig resolve(const Options& o) {
  RunConfig c = o.config_path.empty() ? parse_config(nlohmann::json::object()) : load_config(o.config_path);
  if (o.seed) c.apply_seed(*o.seed);
  if (o.rounds) {
    c.federation.rounds = *o.rounds;
    c.federation.comm_frequency = std::min(c.federation.comm_frequency, *o.rounds);
  }
  if (o.isolated) c.federation.aggregate = false;
  if (o.fixed_threshold) c.decide.fixed_threshold = *o.fixed_threshold;
  if (o.budget) c.decide.budget_fraction = *o.budget;
  if (o.raw_scores) c.decide.use_refined = false;
  if (o.overall == "macro") c.report.overall = OverallMode::kMacro;
  else if (o.overall == "pooled") c.report.overall = OverallMode::kPooled;
  else if (!o.overall.empty()) throw UsageError("--overall must be pooled or macro");
  c.validate();
  return c;
}

int run_detectability(const Options& o) {
  DetectabilityConfig cfg;
  cfg.alpha = o.alpha;
  cfg.trials = o.trials;
  const std::uint64_t seed = o.seed.value_or(1);
  const RunPaths paths{o.out};
  std::filesystem::create_directories(paths.dir);
  if (o.calibrate) {
    const Calibration cal = calibrate_detectability(o.n, o.s, o.p_out, seed, cfg);
    nlohmann::json curve = nlohmann::json::array();
    for (const auto& p : cal.curve) {
      curve.push_back({{"kappa", p.kappa}, {"p_in", p.p_in}, {"mean_recovery", p.mean_recovery}});
    }
    nlohmann::json j = {{"n", o.n},         {"s", o.s},          {"p_out", o.p_out},
                        {"alpha", o.alpha}, {"trials", o.trials}, {"seed", seed},
                        {"grid_step", 0.05}, {"target_mean_recovery", cal.target},
                        {"curve", curve}};
    j["constant"] = cal.constant ? nlohmann::json(*cal.constant) : nlohmann::json(nullptr);
    const std::string path =
        o.constant_path.empty() ? (paths.dir / "detectability_constant.json").string() : o.constant_path;
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << j.dump(2) << '\n';
    for (const auto& p : cal.curve)
      fmt::print("kappa {:.2f}  p_in {:.4f}  mean recovery {:.4f}\n", p.kappa, p.p_in, p.mean_recovery);
    if (!cal.constant) {
      throw NumericalError("calibration: no feasible kappa reaches mean recovery " +
                           fmt::format("{:.3f}", cal.target));
    }
    fmt::print("calibrated constant {:.2f} -> {}\n", *cal.constant, path);
    return 0;
  }
  const std::vector<double> kappas = o.kappas.empty() ? std::vector<double>{0.0} : o.kappas;
  fmt::print("kappa,p_in,mean_recovery,separation_rate,frac_recovery_ge_0.6,frac_recovery_le_2s/n\n");
  for (double kappa : kappas) {
    const auto p_in = p_in_for_ratio(o.n, o.s, o.p_out, kappa);
    if (!p_in) throw UsageError(fmt::format("kappa {} needs p_in > 1", kappa));
    const DetectabilityReport r = detectability_trial({o.n, o.s, *p_in, o.p_out, seed}, cfg);
    fmt::print("{:.4f},{:.6f},{:.4f},{:.4f},{:.4f},{:.4f}\n", kappa, *p_in, r.mean_recovery,
               r.separation_rate, r.fraction_at_least(0.6),
               r.fraction_at_most(2.0 * static_cast<double>(o.s) / static_cast<double>(o.n)));
    std::ofstream out(paths.dir / fmt::format("detectability_k{:.3f}.csv", kappa));
    write_detectability_csv(out, r);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  // Large tensors are allocated every epoch; mmap per allocation dominated
  // training time.
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  setup_logging();
  CLI::App app{"Federated graph AML pipeline: detection, clustering, refinement and decisions"};
  app.require_subcommand(1);
  Options o;
  app.add_option("--config", o.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "Seed for every random draw");
  app.add_option("--out", o.out, "Run directory for all artifacts");

  auto* gen = app.add_subcommand("generate", "Write transactions.csv and ground_truth.csv");
  gen->add_option("--pattern", o.pattern, "Single pattern: fan-out, loop, gather-scatter, hybrid");
  gen->add_option("--size", o.size, "Accounts in the single pattern");
  gen->add_option("--sbm", o.sbm, "Two-block SBM, e.g. \"n=200 s=40 pin=0.5 pout=0.05\"");

  auto* train = app.add_subcommand("train", "Federated training: checkpoint and metrics CSV");
  train->add_option("--rounds", o.rounds, "Training epochs");
  train->add_flag("--isolated", o.isolated, "Train each partition alone (no aggregation)");
  auto* detect = app.add_subcommand("detect", "Score every transaction: scores.csv");
  detect->add_flag("--isolated", o.isolated, "Use per-partition checkpoints");
  app.add_subcommand("ppr", "Cross-bank PPR clusters: clusters.tsv");
  app.add_subcommand("propagate", "Label propagation: refined_scores.csv");
  auto* dec = app.add_subcommand("decide", "Threshold policy: decisions.csv and economic_report.csv");
  dec->add_option("--fixed-threshold", o.fixed_threshold, "Uniform threshold instead of the learned policy");
  dec->add_option("--budget", o.budget, "Freeze only this fraction of each market's transactions");
  dec->add_flag("--raw-scores", o.raw_scores, "Decide on detection scores, not refined scores");
  auto* rep = app.add_subcommand("report", "Merged tables: report.txt and detection_report.csv");
  rep->add_option("--overall", o.overall, "Overall row: pooled or macro");
  auto* all = app.add_subcommand("run", "Every stage in order");
  all->add_option("--rounds", o.rounds, "Training epochs");

  auto* det = app.add_subcommand("detectability", "SBM planted-group recovery harness");
  det->add_option("--n", o.n, "Nodes");
  det->add_option("--s", o.s, "Planted group size");
  det->add_option("--pout", o.p_out, "Background edge probability");
  det->add_option("--kappa", o.kappas, "Signal ratios s(p_in - p_out) / sqrt(n p_in log n)");
  det->add_option("--trials", o.trials, "Trials per setting");
  det->add_option("--alpha", o.alpha, "PPR teleport probability");
  det->add_flag("--calibrate", o.calibrate, "Find the smallest ratio with mean recovery >= 2 s / n");
  det->add_option("--constant-out", o.constant_path, "Where to write the calibrated constant");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ExitCode::kUsage);
  }

  try {
    const RunPaths paths{o.out};
    if (det->parsed()) return run_detectability(o);
    if (gen->parsed() && !o.sbm.empty()) {
      stage_generate_sbm(parse_sbm(o.sbm, o.seed.value_or(1)), paths);
      return 0;
    }
    if (gen->parsed() && !o.pattern.empty()) {
      if (o.size <= 0) throw UsageError("--pattern needs --size");
      stage_generate_pattern(parse_pattern(o.pattern), o.size, o.seed.value_or(1), paths);
      return 0;
    }
    const RunConfig config = resolve(o);
    if (gen->parsed()) stage_generate(config, paths);
    else if (train->parsed()) stage_train(config, paths);
    else if (detect->parsed()) stage_detect(config, paths);
    else if (app.got_subcommand("ppr")) stage_ppr(config, paths);
    else if (app.got_subcommand("propagate")) stage_propagate(config, paths);
    else if (dec->parsed()) stage_decide(config, paths);
    else if (rep->parsed()) stage_report(config, paths);
    else if (all->parsed()) run_pipeline(config, paths);
    return 0;
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return static_cast<int>(ExitCode::kData);
  }
}
