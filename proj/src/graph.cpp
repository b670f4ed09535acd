#include "fedaml/graph.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string_view>
#include <tuple>

#include "fedaml/error.hpp"

namespace fedaml {

std::optional<std::size_t> TransactionGraph::find(const std::string& account) const {
  const auto it = index.find(account);
  if (it == index.end()) return std::nullopt;
  return it->second;
}

void TransactionGraph::validate() const {
  const std::size_t n = node_count();
  const std::size_t m = edge_count();
  for (std::size_t e = 0; e < m; ++e) {
    if (edges[e].src >= n || edges[e].dst >= n) {
      throw DataError(country + ": edge " + std::to_string(e) + " has an invalid endpoint");
    }
  }
  if (edge_labels.size() != m || edge_amounts.size() != m || edge_record.size() != m ||
      edge_cross_border.size() != m) {
    throw DataError(country + ": per-edge vectors disagree with edge count");
  }
  if (!edge_features.empty() && edge_features.rows() != m) {
    throw DataError(country + ": edge feature rows disagree with edge count");
  }
  if (!node_features.empty() && node_features.rows() != n) {
    throw DataError(country + ": node feature rows disagree with node count");
  }
  for (int y : edge_labels)
    if (y != 0 && y != 1) throw DataError(country + ": edge label outside {0,1}");
}

std::vector<std::size_t> SuperNodeRegistry::entries_for(const std::string& country) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (entries[i].home_country == country) out.push_back(i);
  return out;
}

const SuperNodeEntry* SuperNodeRegistry::find_mirror(const SuperNodeEntry& e) const {
  for (const auto& other : entries) {
    if (other.home_country == e.foreign_country && other.foreign_country == e.home_country &&
        other.home_account == e.foreign_account && other.foreign_account == e.home_account) {
      return &other;
    }
  }
  return nullptr;
}

std::vector<std::size_t> SuperNodeRegistry::mirror_indices() const {
  using Key = std::tuple<std::string_view, std::string_view, std::string_view, std::string_view>;
  std::map<Key, std::size_t> index;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    index.emplace(Key{e.home_country, e.foreign_country, e.home_account, e.foreign_account}, i);
  }
  std::vector<std::size_t> out(entries.size(), npos);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    const auto it = index.find(Key{e.foreign_country, e.home_country, e.foreign_account, e.home_account});
    if (it != index.end()) out[i] = it->second;
  }
  return out;
}

const TransactionGraph& GraphCollection::graph(const std::string& partition) const {
  const auto it = graphs.find(partition);
  if (it == graphs.end()) throw UsageError("no graph for partition '" + partition + "'");
  return it->second;
}

std::string GraphCollection::partition_of(const CountryCode& country) const {
  const auto it = options.partition_map.find(country);
  return it == options.partition_map.end() ? country : it->second;
}

std::pair<std::string, std::size_t> GraphCollection::home_edge(std::size_t record) const {
  return record_home.at(record);
}

std::vector<std::string> GraphCollection::partitions() const {
  std::vector<std::string> out;
  for (const auto& [name, g] : graphs) out.push_back(name);
  return out;
}

namespace {

std::size_t payment_slot(const std::string& type) {
  for (std::size_t i = 0; i < std::size(kPaymentTypes); ++i)
    if (type == kPaymentTypes[i]) return i;
  return kPaymentSlots - 1;
}

std::size_t intern(TransactionGraph& g, const std::string& key) {
  const auto [it, inserted] = g.index.try_emplace(key, g.accounts.size());
  if (inserted) g.accounts.push_back(key);
  return it->second;
}

void assign_features(GraphCollection& c) {
  const FeatureOptions& opt = c.options;
  if (opt.scaled_amounts && opt.scaled_amounts->size() != c.records.size()) {
    throw UsageError("scaled_amounts must have one value per record");
  }
  auto raw = [&](double amount) { return opt.log_amounts ? std::log1p(amount) : amount; };

  std::map<std::string, std::vector<double>> values;
  for (const auto& [name, g] : c.graphs) {
    auto& v = values[name];
    for (double a : g.edge_amounts) v.push_back(raw(a));
  }
  if (opt.fixed_spec) {
    if (!(opt.fixed_spec->max > opt.fixed_spec->min)) {
      throw UsageError("degenerate normalization spec: max must exceed min");
    }
    for (const auto& [name, g] : c.graphs) c.normalization[name] = *opt.fixed_spec;
  } else {
    c.normalization = fit_normalization(opt.strategy, values, opt.fixed_source, opt.seed);
  }

  for (auto& [name, g] : c.graphs) {
    const std::size_t n = g.node_count();
    const std::size_t m = g.edge_count();
    const NormalizationSpec& spec = c.normalization[name];
    g.edge_features = Tensor::matrix(m, kEdgeFeatureDim);
    std::vector<double> out_deg(n, 0.0), in_deg(n, 0.0), out_amt(n, 0.0), in_amt(n, 0.0),
        cross(n, 0.0);
    for (std::size_t e = 0; e < m; ++e) {
      const double scaled = opt.scaled_amounts ? (*opt.scaled_amounts)[g.edge_record[e]]
                                               : normalize_value(raw(g.edge_amounts[e]), spec.min, spec.max);
      g.edge_features(e, 0) = scaled;
      g.edge_features(e, 1) = g.edge_cross_border[e];
      g.edge_features(e, 2 + payment_slot(c.records[g.edge_record[e]].payment_type)) = 1.0;
      const auto [s, d] = g.edges[e];
      out_deg[s] += 1.0;
      in_deg[d] += 1.0;
      out_amt[s] += scaled;
      in_amt[d] += scaled;
      cross[s] += g.edge_cross_border[e];
      if (d != s) cross[d] += g.edge_cross_border[e];
    }
    g.node_features = Tensor::matrix(n, kNodeFeatureDim);
    for (std::size_t v = 0; v < n; ++v) {
      const double total = out_deg[v] + in_deg[v];
      g.node_features(v, 0) = std::log1p(out_deg[v]) / 4.0;
      g.node_features(v, 1) = std::log1p(in_deg[v]) / 4.0;
      g.node_features(v, 2) = out_deg[v] > 0 ? out_amt[v] / out_deg[v] : 0.0;
      g.node_features(v, 3) = in_deg[v] > 0 ? in_amt[v] / in_deg[v] : 0.0;
      g.node_features(v, 4) = total > 0 ? cross[v] / total : 0.0;
    }
  }
}

}  // namespace

GraphCollection build_collection(std::vector<TransactionRecord> records, FeatureOptions options) {
  GraphCollection c;
  c.options = std::move(options);
  c.records = std::move(records);
  for (std::size_t i = 0; i < c.records.size(); ++i) validate_record(c.records[i], i);

  // (home partition, home account, foreign account) -> registry index
  std::map<std::tuple<std::string, std::string, std::string>, std::size_t> entry_index;
  auto touch_entry = [&](const std::string& home, const std::string& foreign,
                         const std::string& home_acct, const std::string& foreign_acct,
                         std::size_t home_local, std::size_t edge) {
    const auto key = std::make_tuple(home, home_acct, foreign_acct);
    auto it = entry_index.find(key);
    if (it == entry_index.end()) {
      it = entry_index.emplace(key, c.supernodes.entries.size()).first;
      c.supernodes.entries.push_back(
          SuperNodeEntry{home, foreign, home_acct, foreign_acct, home_local, {}, {}});
    }
    c.supernodes.entries[it->second].cross_border_edges.push_back(edge);
  };

  c.record_home.resize(c.records.size());
  for (std::size_t i = 0; i < c.records.size(); ++i) {
    const TransactionRecord& r = c.records[i];
    const std::string from_part = c.partition_of(r.from_bank);
    const std::string to_part = c.partition_of(r.to_bank);
    const std::string u = account_key(r.from_bank, r.from_account);
    const std::string v = account_key(r.to_bank, r.to_account);
    const bool cross = from_part != to_part;

    auto add_to = [&](const std::string& part) {
      TransactionGraph& g = c.graphs[part];
      g.country = part;
      const std::size_t s = intern(g, u);
      const std::size_t d = intern(g, v);
      g.edges.push_back({s, d});
      g.edge_labels.push_back(r.is_laundering);
      g.edge_amounts.push_back(r.amount);
      g.edge_record.push_back(i);
      g.edge_cross_border.push_back(cross ? 1 : 0);
      return std::make_pair(s, d);
    };

    const auto [fs, fd] = add_to(from_part);
    c.record_home[i] = {from_part, c.graphs[from_part].edge_count() - 1};
    if (cross) {
      const auto [ts, td] = add_to(to_part);
      touch_entry(from_part, to_part, u, v, fs, c.graphs[from_part].edge_count() - 1);
      touch_entry(to_part, from_part, v, u, td, c.graphs[to_part].edge_count() - 1);
      (void)fd;
      (void)ts;
    }
  }

  // Neighbour sets for supernode entries.
  std::map<std::string, std::vector<std::set<std::size_t>>> neighbours;
  for (const auto& [name, g] : c.graphs) {
    auto& nb = neighbours[name];
    nb.resize(g.node_count());
    for (const Edge& e : g.edges) {
      if (e.src == e.dst) continue;
      nb[e.src].insert(e.dst);
      nb[e.dst].insert(e.src);
    }
  }
  for (auto& entry : c.supernodes.entries) {
    const auto& nb = neighbours[entry.home_country][entry.home_local];
    entry.home_neighbors.assign(nb.begin(), nb.end());
  }

  assign_features(c);
  for (const auto& [name, g] : c.graphs) g.validate();
  return c;
}

std::vector<double> degree_vector(const TransactionGraph& graph,
                                  std::optional<std::span<const double>> weights) {
  if (weights && weights->size() != graph.edge_count()) {
    throw UsageError("degree_vector: weight length " + std::to_string(weights->size()) +
                     " does not match edge count " + std::to_string(graph.edge_count()));
  }
  std::vector<double> deg(graph.node_count(), 0.0);
  for (std::size_t e = 0; e < graph.edge_count(); ++e)
    deg[graph.edges[e].src] += weights ? (*weights)[e] : 1.0;
  return deg;
}

CsrMatrix account_adjacency(const TransactionGraph& graph,
                            std::optional<std::span<const double>> weights, bool symmetrize) {
  if (weights && weights->size() != graph.edge_count()) {
    throw UsageError("account_adjacency: weight length does not match edge count");
  }
  const std::size_t n = graph.node_count();
  std::vector<std::tuple<std::size_t, std::size_t, double>> trip;
  trip.reserve(graph.edge_count());
  for (std::size_t e = 0; e < graph.edge_count(); ++e)
    trip.emplace_back(graph.edges[e].src, graph.edges[e].dst, weights ? (*weights)[e] : 1.0);
  CsrMatrix a = CsrMatrix::from_triplets(n, n, std::move(trip));
  if (!symmetrize) return a;

  const CsrMatrix at = a.transpose();
  std::vector<std::tuple<std::size_t, std::size_t, double>> sym;
  sym.reserve(2 * a.nnz());
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t i = a.row_ptr[r], j = at.row_ptr[r];
    while (i < a.row_ptr[r + 1] || j < at.row_ptr[r + 1]) {
      if (j == at.row_ptr[r + 1] || (i < a.row_ptr[r + 1] && a.col_idx[i] < at.col_idx[j])) {
        sym.emplace_back(r, a.col_idx[i], a.values[i]);
        ++i;
      } else if (i == a.row_ptr[r + 1] || at.col_idx[j] < a.col_idx[i]) {
        sym.emplace_back(r, at.col_idx[j], at.values[j]);
        ++j;
      } else {
        sym.emplace_back(r, a.col_idx[i], std::max(a.values[i], at.values[j]));
        ++i;
        ++j;
      }
    }
  }
  return CsrMatrix::from_triplets(n, n, std::move(sym));
}

CsrMatrix binary_adjacency(const TransactionGraph& graph, bool self_loops) {
  const std::size_t n = graph.node_count();
  std::set<std::pair<std::size_t, std::size_t>> pairs;
  for (const Edge& e : graph.edges) {
    if (e.src == e.dst) continue;
    pairs.emplace(e.src, e.dst);
    pairs.emplace(e.dst, e.src);
  }
  std::vector<std::tuple<std::size_t, std::size_t, double>> trip;
  trip.reserve(pairs.size() + (self_loops ? n : 0));
  for (const auto& [s, d] : pairs) trip.emplace_back(s, d, 1.0);
  if (self_loops)
    for (std::size_t i = 0; i < n; ++i) trip.emplace_back(i, i, 1.0);
  return CsrMatrix::from_triplets(n, n, std::move(trip));
}

CsrMatrix supernode_averaging(const SuperNodeRegistry& registry, const std::string& country,
                              std::size_t node_count) {
  const auto ids = registry.entries_for(country);
  std::vector<std::tuple<std::size_t, std::size_t, double>> trip;
  for (std::size_t row = 0; row < ids.size(); ++row) {
    const auto& nb = registry.entries[ids[row]].home_neighbors;
    if (nb.empty()) {
      throw DataError("supernode " + registry.entries[ids[row]].home_account + " -> " +
                      registry.entries[ids[row]].foreign_account + " has an empty neighbour set");
    }
    const double w = 1.0 / static_cast<double>(nb.size());
    for (std::size_t v : nb) {
      if (v >= node_count) throw DataError("supernode neighbour index out of range");
      trip.emplace_back(row, v, w);
    }
  }
  return CsrMatrix::from_triplets(ids.size(), node_count, std::move(trip));
}

Tensor neighbor_mean_embedding(const SuperNodeRegistry& registry, const std::string& country,
                               const Tensor& embeddings, SupernodeAggregation mode) {
  const CsrMatrix avg = supernode_averaging(registry, country, embeddings.rows());
  Tensor mean = avg.multiply(embeddings);
  if (mode == SupernodeAggregation::kMean) return mean;

  Tensor sq = embeddings;
  for (double& v : sq.data()) v *= v;
  const Tensor mean_sq = avg.multiply(sq);
  const std::size_t d = embeddings.cols();
  Tensor out = Tensor::matrix(mean.rows(), 2 * d);
  for (std::size_t i = 0; i < mean.rows(); ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      out(i, j) = mean(i, j);
      out(i, d + j) = std::max(0.0, mean_sq(i, j) - mean(i, j) * mean(i, j));
    }
  }
  return out;
}

}  // namespace fedaml
