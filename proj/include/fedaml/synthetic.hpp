#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "fedaml/graph.hpp"
#include "fedaml/records.hpp"
#include "fedaml/tensor.hpp"

namespace fedaml {

enum class PatternKind { kFanOut, kLoop, kGatherScatter, kHybrid };

std::string to_string(PatternKind p);
PatternKind parse_pattern(const std::string& s);

struct SyntheticPatternSpec {
  PatternKind pattern = PatternKind::kFanOut;
  int group_size = 3;
  std::vector<CountryCode> countries;  // members are assigned round-robin
  std::pair<double, double> amount_range{1000.0, 5000.0};
  std::int64_t start_time = 0;
  std::string payment_type = "ACH";
  // Probability that a member is an existing account of its country rather
  // than a fresh one.
  double reuse_fraction = 0.0;
};

struct InjectedGroup {
  PatternKind pattern = PatternKind::kFanOut;
  std::vector<std::string> accounts;  // account keys
  std::vector<std::size_t> records;   // indices of the injected records
};

// Appends the records realizing `spec` and returns the injected group:
//   fan-out        1 -> k-1
//   loop           a -> b -> ... -> a
//   gather-scatter g -> hub -> m, g + 1 + m = k
//   hybrid         g -> hub1 -> hub2 -> m, g + 2 + m = k
// All injected records are labelled is_laundering = 1.
InjectedGroup inject_pattern_records(std::vector<TransactionRecord>& records,
                                     const SyntheticPatternSpec& spec, std::mt19937_64& rng);

// Collection-level form: injects into a copy of the collection's records
// and rebuilds with the same feature options.
std::pair<GraphCollection, InjectedGroup> inject_pattern(const GraphCollection& collection,
                                                         const SyntheticPatternSpec& spec,
                                                         std::mt19937_64& rng);

// Background-plus-patterns transaction generator.
struct CountryProfile {
  CountryCode code;
  std::size_t accounts = 200;
  std::size_t transactions = 1000;
  double amount_log_mean = 6.0;  // log of a typical legitimate amount
  double amount_log_sd = 1.2;
};

struct DatasetSpec {
  std::vector<CountryProfile> countries;
  double cross_border_fraction = 0.1;
  std::size_t patterns = 10;
  std::vector<PatternKind> pattern_mix{PatternKind::kFanOut, PatternKind::kLoop,
                                       PatternKind::kGatherScatter, PatternKind::kHybrid};
  std::pair<int, int> group_size_range{4, 8};
  double cross_border_pattern_fraction = 0.5;
  double reuse_fraction = 0.5;
  // Illicit amounts are drawn log-normally around this absolute level; the
  // country profile does not shift them.
  double laundering_log_mean = 8.5;
  double laundering_log_sd = 0.4;
  // Probability an illicit transfer uses the ACH rail (legitimate traffic
  // uses it with probability legit_ach_rate).
  double laundering_ach_rate = 0.6;
  double legit_ach_rate = 0.15;
  std::int64_t start_time = 1'661'990'400;  // 2022-09-01
  std::int64_t duration = 10 * 24 * 3600;
  std::uint64_t seed = 1;
};

struct GeneratedDataset {
  std::vector<TransactionRecord> records;  // sorted by timestamp
  std::vector<InjectedGroup> groups;       // record indices refer to `records`
};

GeneratedDataset generate_dataset(const DatasetSpec& spec);

// Accounts incident to at least one laundering record.
std::vector<std::string> malicious_accounts(const std::vector<TransactionRecord>& records);

// Two-block stochastic block model.
struct SbmSpec {
  std::size_t n = 200;
  std::size_t s = 40;
  double p_in = 0.5;
  double p_out = 0.05;
  std::uint64_t seed = 0;
};

struct SbmGraph {
  CsrMatrix adjacency;               // symmetric 0/1, no self loops
  std::vector<std::size_t> planted;  // sorted node ids of the planted block
  std::vector<std::uint8_t> in_planted;
};

void validate(const SbmSpec& spec);
SbmGraph sbm_generate(const SbmSpec& spec);

}  // namespace fedaml
