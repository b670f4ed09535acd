#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include <json.hpp>

#include "fedaml/federated.hpp"
#include "fedaml/label_prop.hpp"
#include "fedaml/metrics.hpp"
#include "fedaml/normalize.hpp"
#include "fedaml/policy.hpp"
#include "fedaml/ppr.hpp"
#include "fedaml/synthetic.hpp"

namespace fedaml {

struct DataConfig {
  std::optional<std::filesystem::path> input;  // transaction CSV; generated when absent
  DatasetSpec generator;
  NormalizationStrategy normalization = NormalizationStrategy::kGlobalLevel;
  std::optional<CountryCode> fixed_source;
  bool log_amounts = false;
  std::map<CountryCode, std::string> partition_map;
};

struct DecideConfig {
  RewardConfig reward;
  std::size_t grid_points = 25;
  double grid_lo = 0.05;
  double grid_hi = 0.95;
  PolicyTrainConfig train;
  double eta_g = 0.2;
  double xi = 0.1;
  double lambda_c = 0.0;
  std::size_t coordination_rounds = 1;
  std::size_t episodes = 10;  // chronological chunks of each market's training edges
  bool volume_weights = true;
  std::optional<double> fixed_threshold;  // uniform baseline instead of the learned policy
  std::optional<double> budget_fraction;  // freeze the top fraction per market
  bool use_refined = true;                // decide on refined scores when available
};

struct ReportConfig {
  double threshold = 0.5;
  OverallMode overall = OverallMode::kPooled;
};

struct RunConfig {
  std::uint64_t seed = 1;
  DataConfig data;
  SplitConfig split{SplitMode::kChronological, 0.8, 0};
  FederationConfig federation;
  ClusterRunConfig ppr;
  PropagationConfig propagation;
  DecideConfig decide;
  ReportConfig report;

  // Copies `seed` into every module that draws random numbers.
  void apply_seed(std::uint64_t s);
  void validate() const;
};

// Every key is optional; unknown keys anywhere are a UsageError naming the
// dotted path.
RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& config);

FeatureOptions feature_options(const RunConfig& config);

}  // namespace fedaml
