#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "fedaml/config.hpp"
#include "fedaml/graph.hpp"
#include "fedaml/synthetic.hpp"

namespace fedaml {

// Stage artifacts, all inside the run directory.
struct RunPaths {
  std::filesystem::path dir;

  std::filesystem::path transactions() const { return dir / "transactions.csv"; }
  std::filesystem::path ground_truth() const { return dir / "ground_truth.csv"; }
  std::filesystem::path checkpoint() const { return dir / "model.ckpt"; }
  std::filesystem::path train_metrics() const { return dir / "train_metrics.csv"; }
  std::filesystem::path scores() const { return dir / "scores.csv"; }
  std::filesystem::path clusters() const { return dir / "clusters.tsv"; }
  std::filesystem::path refined_scores() const { return dir / "refined_scores.csv"; }
  std::filesystem::path decisions() const { return dir / "decisions.csv"; }
  std::filesystem::path economic() const { return dir / "economic_report.csv"; }
  std::filesystem::path detection_report() const { return dir / "detection_report.csv"; }
  std::filesystem::path report() const { return dir / "report.txt"; }
  std::filesystem::path resolved_config() const { return dir / "config.resolved.json"; }
};

// One row per transaction record: edge_id is the record index.
struct ScoreRow {
  std::size_t edge_id = 0;
  double score = 0.0;
  int label = 0;
};

void write_scores(std::ostream& out, const std::vector<ScoreRow>& rows);
std::vector<ScoreRow> read_scores(std::istream& in);
void save_scores(const std::filesystem::path& path, const std::vector<ScoreRow>& rows);
std::vector<ScoreRow> load_scores(const std::filesystem::path& path);

// Record-level scores from the canonical (origin partition) copy of each
// record, and the reverse: every copy of a record gets the record's score.
std::vector<ScoreRow> record_scores(const GraphCollection& collection, const PartitionScores& scores);
PartitionScores partition_scores(const GraphCollection& collection, const std::vector<ScoreRow>& rows);

// Ground truth: group_id,pattern,account.
// `known_patterns` false writes "unknown" in the pattern column (ingested data).
void write_ground_truth(std::ostream& out, const std::vector<InjectedGroup>& groups,
                        bool known_patterns = true);

// Throws DataError naming the missing file.
void require_artifact(const std::filesystem::path& path, const std::string& stage);

// generate: transactions.csv and ground_truth.csv from the configured generator
// (or a copy of data.input).
void stage_generate(const RunConfig& config, const RunPaths& paths);
// A single pattern of `size` accounts in one country, nothing else.
void stage_generate_pattern(PatternKind kind, int size, std::uint64_t seed, const RunPaths& paths);
// SBM graph as a transaction file (one record per undirected edge, planted
// edges labelled) plus the planted node list as ground truth.
void stage_generate_sbm(const SbmSpec& spec, const RunPaths& paths);

GraphCollection load_collection(const RunConfig& config, const RunPaths& paths);

void stage_train(const RunConfig& config, const RunPaths& paths);
void stage_detect(const RunConfig& config, const RunPaths& paths);
void stage_ppr(const RunConfig& config, const RunPaths& paths);
void stage_propagate(const RunConfig& config, const RunPaths& paths);
void stage_decide(const RunConfig& config, const RunPaths& paths);
void stage_report(const RunConfig& config, const RunPaths& paths);

// generate -> train -> detect -> ppr -> propagate -> decide -> report
void run_pipeline(const RunConfig& config, const RunPaths& paths);

// Learned (or fixed / budget) decisions for the evaluation split, one
// economic row per market plus a pooled Overall row.
struct DecisionOutcome {
  std::vector<Decision> decisions;
  std::vector<EconomicRow> rows;
  std::map<std::string, double> thresholds;
};

// Markets come from each record's origin partition. `train`/`eval` are
// record-level split flags (1 = training record).
DecisionOutcome decide_markets(const GraphCollection& collection, const std::vector<ScoreRow>& scores,
                               std::span<const std::uint8_t> record_split, const DecideConfig& config);

}  // namespace fedaml
