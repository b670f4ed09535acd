#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "fedaml/graph.hpp"
#include "fedaml/metrics.hpp"
#include "fedaml/synthetic.hpp"
#include "fedaml/tensor.hpp"

namespace fedaml {

struct PprConfig {
  double alpha = 0.15;  // teleport probability
  double tol = 1e-12;
  std::size_t max_iters = 100000;
  double score_threshold = 0.5;  // cut on max-normalized scores
  void validate() const;
};

struct PprResult {
  std::vector<double> scores;
  std::vector<double> normalized;  // scores / max(scores)
  std::size_t iterations = 0;
  double residual = 0.0;
};

// Power iteration on r = (1 - a)(P^T r + m(r) v) + a v, where m(r) is the
// mass sitting on rows of P with no outgoing weight (teleported to v).
// Starts from r = v; stops when the L1 change drops below tol. Throws
// NumericalError with the last residual after max_iters.
PprResult ppr_solve(const CsrMatrix& transition, std::span<const double> v,
                    const PprConfig& config);

struct Personalization {
  std::vector<double> local;
  std::vector<double> cross;

  std::vector<double> combined() const;
};

// v_local puts each seed's score on its node; v_cross puts each flagged
// weight on its node. Both are divided by the joint total so the combined
// vector sums to 1. Throws UsageError when all seed scores are zero.
Personalization build_personalization(std::size_t node_count,
                                      std::span<const std::size_t> seeds,
                                      std::span<const double> seed_scores,
                                      std::span<const std::pair<std::size_t, double>> cross = {});

// P = D^-1 (A + A_hat): parallel edges summed, each edge weighted 1 + y_hat.
// With `symmetrize` the account weights are W_ij = max(W_ij, W_ji). Rows
// without weight stay empty and are treated as dangling by ppr_solve.
CsrMatrix cross_bank_transition(const TransactionGraph& graph,
                                std::span<const double> edge_predictions, bool symmetrize = true);
// Same path with A_hat = 0.
CsrMatrix transition_matrix(const TransactionGraph& graph, bool symmetrize = true);
// Row-normalizes a weighted adjacency; zero rows stay empty.
CsrMatrix row_stochastic(const CsrMatrix& weights);

// {v : normalized(v) >= threshold}, always including the argmax.
std::vector<std::size_t> extract_cluster(const PprResult& result, double threshold);

struct Cluster {
  std::size_t id = 0;
  std::set<std::string> accounts;  // account keys
  std::string seed;
  std::set<std::string> countries;
  std::size_t hits = 0;
};

struct ClusterSet {
  std::vector<Cluster> clusters;
  std::size_t account_count() const;
};

using ClusterDictionary = std::vector<Cluster>;

// Starts from the dictionary covering the most accounts and folds in every
// other cluster, uniting all clusters that share an account, until no two
// clusters overlap. Ids are reassigned in output order; countries are taken
// from the account keys.
ClusterSet merge_clusters(const std::map<std::string, ClusterDictionary>& dictionaries);

// Sets hits to the number of members in `malicious`.
void count_hits(ClusterSet& clusters, const std::set<std::string>& malicious);

struct SweepResult {
  std::vector<std::size_t> set;
  double conductance = 1.0;
  std::vector<std::size_t> skipped;  // zero-degree nodes left out of the order
};

// Orders nodes by r/d (descending, ties by index) and returns the prefix of
// size 1..n-1 with the least conductance cut / min(vol, vol of complement).
// `max_size` (0 = unbounded) caps the prefix length.
SweepResult sweep_cut(std::span<const double> scores, const CsrMatrix& adjacency,
                      std::size_t max_size = 0);
double conductance(const CsrMatrix& adjacency, std::span<const std::size_t> set);

// s (p_in - p_out) / sqrt(n p_in log n)
double signal_ratio(std::size_t n, std::size_t s, double p_in, double p_out);
// Inverse of signal_ratio in p_in; nullopt when no p_in <= 1 reaches kappa.
std::optional<double> p_in_for_ratio(std::size_t n, std::size_t s, double p_out, double kappa);

struct DetectabilityConfig {
  double alpha = 0.15;
  std::size_t trials = 50;
  std::size_t max_size = 0;  // sweep prefix cap; 0 means the planted size s
  std::size_t max_resamples = 100;
};

struct TrialOutcome {
  std::size_t trial = 0;
  std::uint64_t graph_seed = 0;
  std::size_t seed_node = 0;
  double recovery = 0.0;  // |S_hat & S*| / s
  double mean_in = 0.0;   // mean r over S*
  double mean_out = 0.0;  // mean r over the rest
  double conductance = 1.0;
  std::size_t found = 0;
  std::size_t resamples = 0;

  bool separated() const { return mean_in > mean_out; }
};

struct DetectabilityReport {
  std::vector<TrialOutcome> trials;
  double mean_recovery = 0.0;
  double separation_rate = 0.0;
  std::size_t resampled = 0;

  // Fraction of trials with recovery >= r (or <= r).
  double fraction_at_least(double r) const;
  double fraction_at_most(double r) const;
};

// Per trial: samples the SBM (resampling disconnected draws), seeds PPR on a
// random planted node, and sweep-cuts on r/d.
DetectabilityReport detectability_trial(const SbmSpec& spec, const DetectabilityConfig& config);

void write_detectability_csv(std::ostream& out, const DetectabilityReport& report);

struct CalibrationPoint {
  double kappa = 0.0;
  double p_in = 0.0;
  double mean_recovery = 0.0;
};

struct Calibration {
  std::optional<double> constant;  // smallest kappa reaching the target
  double target = 0.0;             // mean recovery required, 2 s / n
  std::vector<CalibrationPoint> curve;
};

// Walks kappa = 0, step, 2 step, ... while p_in stays <= 1 and returns the
// first kappa whose mean sweep recovery reaches 2 s / n.
Calibration calibrate_detectability(std::size_t n, std::size_t s, double p_out, std::uint64_t seed,
                                    const DetectabilityConfig& config, double step = 0.05);

// Cluster file: cluster_id, seed, comma-joined accounts, comma-joined
// countries, hit count; tab separated, one cluster per line.
void write_clusters(std::ostream& out, const ClusterSet& clusters);
ClusterSet read_clusters(std::istream& in);

struct ClusterRunConfig {
  PprConfig ppr;
  double seed_threshold = 0.5;  // edges at or above this seed the walk
  bool cross_bank = true;       // A_hat transitions and v_cross
  bool directed = false;
};

// One PPR per partition from the suspicious edges in `scores`; the extracted
// node set is split into connected components, giving that partition's
// cluster dictionary.
std::map<std::string, ClusterDictionary> partition_clusters(const GraphCollection& collection,
                                                           const PartitionScores& scores,
                                                           const ClusterRunConfig& config);

struct ClusterQuality {
  std::size_t clusters = 0;
  std::size_t accounts = 0;
  std::size_t hits = 0;
  std::size_t zero_hit_clusters = 0;
  double precision() const {
    return accounts == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(accounts);
  }
};
ClusterQuality cluster_quality(const ClusterSet& clusters);

}  // namespace fedaml
