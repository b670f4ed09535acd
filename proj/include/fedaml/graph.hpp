#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "fedaml/normalize.hpp"
#include "fedaml/records.hpp"
#include "fedaml/tensor.hpp"

namespace fedaml {

struct AccountId {
  CountryCode country;
  std::size_t local_index = 0;

  friend auto operator<=>(const AccountId&, const AccountId&) = default;
};

struct Edge {
  std::size_t src = 0;
  std::size_t dst = 0;
};

// Payment categories with a dedicated one-hot slot; anything else maps to
// the trailing "other" slot.
inline constexpr const char* kPaymentTypes[] = {"ACH",         "Bitcoin",      "Cash", "Cheque",
                                                "Credit Card", "Reinvestment", "Wire"};
inline constexpr std::size_t kPaymentSlots = 8;

// Node features: log1p out/in degree (scaled by 1/4), mean scaled outgoing
// and incoming amount, fraction of incident edges that cross a border.
inline constexpr std::size_t kNodeFeatureDim = 5;
// Edge features: scaled amount, cross-border flag, payment one-hot.
inline constexpr std::size_t kEdgeFeatureDim = 2 + kPaymentSlots;

// One institution's view: every account that appears in a transaction it
// books, including foreign counterparties of cross-border transfers.
struct TransactionGraph {
  std::string country;
  std::vector<std::string> accounts;  // account_key per local index
  std::vector<Edge> edges;
  Tensor node_features;  // [n x kNodeFeatureDim]
  Tensor edge_features;  // [|E| x kEdgeFeatureDim]
  std::vector<int> edge_labels;
  std::vector<double> edge_amounts;
  std::vector<std::size_t> edge_record;  // index into the source record list
  std::vector<std::uint8_t> edge_cross_border;

  std::size_t node_count() const { return accounts.size(); }
  std::size_t edge_count() const { return edges.size(); }
  std::optional<std::size_t> find(const std::string& account) const;
  // Throws DataError if any structural invariant is broken.
  void validate() const;

  std::unordered_map<std::string, std::size_t> index;
};

// Boundary connector between an account in `home_country` and its foreign
// counterparty. Entries come in mirrored pairs, one per side.
struct SuperNodeEntry {
  std::string home_country;
  std::string foreign_country;
  std::string home_account;
  std::string foreign_account;
  std::size_t home_local = 0;
  std::vector<std::size_t> cross_border_edges;  // edge ids in the home graph
  std::vector<std::size_t> home_neighbors;      // N: neighbours of home_local in the home graph
};

struct SuperNodeRegistry {
  std::vector<SuperNodeEntry> entries;

  // Indices of entries whose home side is `country`, in registry order.
  std::vector<std::size_t> entries_for(const std::string& country) const;
  // The mirror entry, or nullptr when the registry is not symmetric.
  const SuperNodeEntry* find_mirror(const SuperNodeEntry& entry) const;
  // mirror_indices()[i] is the index of the mirror of entry i, or npos.
  std::vector<std::size_t> mirror_indices() const;

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
};

struct FeatureOptions {
  NormalizationStrategy strategy = NormalizationStrategy::kGlobalLevel;
  // Explicit shared constants for the fixed-value strategy; when absent the
  // constants are fitted on `fixed_source` (or a seeded random partition).
  std::optional<NormalizationSpec> fixed_spec;
  std::optional<CountryCode> fixed_source;
  std::uint64_t seed = 0;
  bool log_amounts = false;
  // Country code -> partition name. Unmapped countries are their own
  // partition.
  std::map<CountryCode, std::string> partition_map;
  // Per-record pre-scaled amounts; bypasses normalization when set.
  std::optional<std::vector<double>> scaled_amounts;
};

struct GraphCollection {
  std::map<std::string, TransactionGraph> graphs;
  SuperNodeRegistry supernodes;
  std::vector<TransactionRecord> records;
  std::map<std::string, NormalizationSpec> normalization;
  FeatureOptions options;

  const TransactionGraph& graph(const std::string& partition) const;
  std::string partition_of(const CountryCode& country) const;
  // Canonical copy of a record: the edge in the origin partition's graph.
  std::pair<std::string, std::size_t> home_edge(std::size_t record) const;
  std::vector<std::string> partitions() const;

  std::vector<std::pair<std::string, std::size_t>> record_home;
};

GraphCollection build_collection(std::vector<TransactionRecord> records, FeatureOptions options = {});

// Out-degree per node: sum of outgoing edge weights (1 each when absent).
std::vector<double> degree_vector(const TransactionGraph& graph,
                                  std::optional<std::span<const double>> weights = std::nullopt);

// Account-level adjacency with parallel edges collapsed by summing their
// weights (1 each when absent). With `symmetrize`, W_ij = max(W_ij, W_ji).
CsrMatrix account_adjacency(const TransactionGraph& graph,
                            std::optional<std::span<const double>> weights = std::nullopt,
                            bool symmetrize = false);

// Undirected 0/1 adjacency; optionally with the identity added.
CsrMatrix binary_adjacency(const TransactionGraph& graph, bool self_loops);

enum class SupernodeAggregation { kMean, kMeanVariance };

// Rows: entries of `country` in registry order; each row averages the
// embeddings of the entry's neighbour set.
CsrMatrix supernode_averaging(const SuperNodeRegistry& registry, const std::string& country,
                              std::size_t node_count);

// Neighbour-mean embedding per supernode entry of `country`. Mean+variance
// appends the per-dimension population variance.
Tensor neighbor_mean_embedding(const SuperNodeRegistry& registry, const std::string& country,
                               const Tensor& embeddings,
                               SupernodeAggregation mode = SupernodeAggregation::kMean);

}  // namespace fedaml
