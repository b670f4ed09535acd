#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fedaml {

enum class Action { kFreeze, kMonitor, kNoIntervention };

std::string to_string(Action action);
// Accepts "Freeze", "Monitor", "NoIntervention" (case-insensitive, "none"
// and "no-intervention" too). Throws UsageError otherwise.
Action parse_action(const std::string& s);

// Illicit edge: Freeze a1 log1p(C), Monitor a2 log1p(C), none -a3 log1p(C).
// Legitimate edge: Freeze -a4, Monitor -a5, none +a6.
struct RewardConfig {
  double a1 = 1.0;
  double a2 = 0.5;
  double a3 = 0.25;
  double a4 = 1.0;
  double a5 = 0.1;
  double a6 = 0.2;
  double gamma = 0.0;  // discount; episodes are single-shot so it has no effect

  // Positivity, a1 > a2 > a3 and a4 >= a6 > a5.
  void validate() const;
};

double reward(int label, Action action, double amount, const RewardConfig& config);

// score >= tau: Freeze; tau - band <= score < tau: Monitor; else none.
Action decide(double score, double tau, double monitor_band);

// n points spaced uniformly in logit between lo and hi (both included).
std::vector<double> threshold_grid(std::size_t n = 25, double lo = 0.05, double hi = 0.95);

struct Episode {
  std::vector<double> scores;
  std::vector<int> labels;
  std::vector<double> amounts;

  std::size_t size() const { return scores.size(); }
};

using InstitutionEpisodes = std::map<std::string, std::vector<Episode>>;

double episode_reward(const Episode& episode, double tau, double monitor_band,
                      const RewardConfig& config);

struct Coordinator {
  std::map<std::string, double> weights;  // must sum to 1
  double eta_g = 0.5;
  double xi = 0.1;
  double lambda_c = 0.0;  // > 0 adds the coupling penalty to the selection objective
};

struct ThresholdPolicy {
  std::vector<double> grid;
  std::map<std::string, std::vector<double>> action_values;  // mean episode reward per grid point
  std::map<std::string, std::vector<std::size_t>> visits;
  std::map<std::string, double> tau;
  Coordinator coordinator;
  double monitor_band = 0.1;
};

struct PolicyTrainConfig {
  double epsilon = 0.1;
  std::size_t passes = 1;     // sweeps over the episode list
  bool full_information = true;  // every grid point is scored on every episode
  double monitor_band = 0.1;
  std::uint64_t seed = 0;
};

// Epsilon-greedy value estimation over the grid, one bandit per institution.
// The selected threshold is the arm with the highest mean episode reward
// (ties to the lower threshold). Empty episodes are skipped with a warning.
// With coordinator.lambda_c > 0 the final selection maximizes
// value - lambda_c (tau - tau_bar)^2, iterated to a fixed point.
ThresholdPolicy train_policy(const InstitutionEpisodes& episodes, const RewardConfig& reward,
                             std::vector<double> grid, const PolicyTrainConfig& config,
                             Coordinator coordinator = {});

// Weights proportional to edge counts.
std::map<std::string, double> volume_weights(const std::map<std::string, std::size_t>& volumes);

struct CoordinationReport {
  double tau_bar = 0.0;
  std::map<std::string, double> unsnapped;  // after the update, before snapping
  double threshold_term = 0.0;              // sum ||tau_b - tau_bar||^2, before the update
  double kl_term = 0.0;                     // sum KL(softmax local || softmax global)
  double penalty = 0.0;                     // threshold_term + xi * kl_term
};

// tau_b <- tau_b + eta_g (tau_bar - tau_b), then snapped to the nearest grid
// point (ties to the lower). Throws UsageError when the weights do not cover
// every institution or do not sum to 1.
CoordinationReport coordinate(ThresholdPolicy& policy);

struct EconomicRow {
  std::string market;
  std::optional<double> threshold;
  double total_loss = 0.0;
  double prevented_loss = 0.0;
  std::optional<double> ratio;  // absent when there is no illicit amount
  std::optional<double> type1;  // Freeze on legitimate / legitimate
  std::optional<double> type2;  // NoIntervention on illicit / illicit
  std::optional<double> legit_monitored;
  std::size_t illicit = 0;
  std::size_t legitimate = 0;
};

EconomicRow economic_eval(std::span<const Action> actions, std::span<const int> labels,
                          std::span<const double> amounts);

// Edge ids of the floor(fraction * N) highest-scoring edges with score > 0;
// ties by larger amount, then lower id.
std::vector<std::size_t> budget_select(std::span<const double> scores,
                                       std::span<const double> amounts, double budget_fraction);

struct Decision {
  std::size_t edge_id = 0;
  double score = 0.0;
  Action action = Action::kNoIntervention;
  double amount = 0.0;
  int label = 0;
};

void write_decision_log(std::ostream& out, std::span<const Decision> decisions);
std::vector<Decision> read_decision_log(std::istream& in);

// market,threshold,total_loss,prevented_loss,ratio,type1,type2,legit_monitored
void write_economic_csv(std::ostream& out, std::span<const EconomicRow> rows);
std::string format_economic_table(std::span<const EconomicRow> rows);

}  // namespace fedaml
