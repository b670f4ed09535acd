#include "fedaml/label_prop.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <tuple>

#include <fmt/format.h>

#include "fedaml/error.hpp"

namespace fedaml {

void PropagationConfig::validate() const {
  if (!(alpha >= 0.0 && alpha < 1.0)) throw UsageError("propagation alpha must lie in [0, 1)");
  if (!(alpha_lp >= 0.0 && alpha_lp <= 1.0)) throw UsageError("alpha_lp must lie in [0, 1]");
  if (!(tol > 0.0)) throw UsageError("propagation tol must be positive");
  if (max_iters == 0) throw UsageError("propagation max_iters must be positive");
}

std::vector<double> node_scores_from_edges(const TransactionGraph& graph,
                                           std::span<const double> edge_scores,
                                           bool in_edges_only) {
  if (edge_scores.size() != graph.edge_count()) {
    throw UsageError(fmt::format("node_scores_from_edges: {} scores for {} edges",
                                 edge_scores.size(), graph.edge_count()));
  }
  std::vector<double> sum(graph.node_count(), 0.0);
  std::vector<std::size_t> count(graph.node_count(), 0);
  for (std::size_t e = 0; e < graph.edge_count(); ++e) {
    const Edge& edge = graph.edges[e];
    sum[edge.dst] += edge_scores[e];
    ++count[edge.dst];
    if (!in_edges_only && edge.src != edge.dst) {
      sum[edge.src] += edge_scores[e];
      ++count[edge.src];
    }
  }
  for (std::size_t i = 0; i < sum.size(); ++i)
    if (count[i] > 0) sum[i] /= static_cast<double>(count[i]);
  return sum;
}

CsrMatrix cluster_structure(const TransactionGraph& graph, const ClusterSet& clusters) {
  std::set<std::pair<std::size_t, std::size_t>> pairs;
  for (const Cluster& c : clusters.clusters) {
    std::vector<std::size_t> local;
    for (const auto& account : c.accounts)
      if (auto idx = graph.find(account)) local.push_back(*idx);
    for (std::size_t i = 0; i < local.size(); ++i)
      for (std::size_t j = 0; j < local.size(); ++j)
        if (i != j) pairs.emplace(local[i], local[j]);
  }
  std::vector<std::tuple<std::size_t, std::size_t, double>> trip;
  trip.reserve(pairs.size());
  for (const auto& [a, b] : pairs) trip.emplace_back(a, b, 1.0);
  return CsrMatrix::from_triplets(graph.node_count(), graph.node_count(), std::move(trip));
}

namespace {

CsrMatrix add(const CsrMatrix& a, const CsrMatrix& b) {
  std::vector<std::tuple<std::size_t, std::size_t, double>> trip;
  trip.reserve(a.nnz() + b.nnz());
  for (const CsrMatrix* m : {&a, &b})
    for (std::size_t r = 0; r < m->rows; ++r)
      for (std::size_t k = m->row_ptr[r]; k < m->row_ptr[r + 1]; ++k)
        trip.emplace_back(r, m->col_idx[k], m->values[k]);
  return CsrMatrix::from_triplets(a.rows, a.cols, std::move(trip));
}

}  // namespace

PropagationResult propagate(const CsrMatrix& adjacency, const CsrMatrix* ppr_structure,
                            std::span<const double> initial, const PropagationConfig& config) {
  config.validate();
  const std::size_t n = adjacency.rows;
  if (adjacency.cols != n) throw UsageError("propagate: adjacency is not square");
  if (initial.size() != n) {
    throw UsageError(fmt::format("propagate: {} initial scores for {} nodes", initial.size(), n));
  }
  if (ppr_structure && (ppr_structure->rows != n || ppr_structure->cols != n)) {
    throw UsageError("propagate: group structure does not match the adjacency");
  }
  for (const CsrMatrix* m : {&adjacency, ppr_structure}) {
    if (!m) continue;
    for (double w : m->values)
      if (!(w >= 0.0)) throw UsageError("propagate: negative link weight");
  }

  PropagationResult result;
  result.scores.assign(initial.begin(), initial.end());
  if (std::all_of(initial.begin(), initial.end(), [](double x) { return x == 0.0; })) return result;

  CsrMatrix s = ppr_structure ? add(adjacency, *ppr_structure) : adjacency;
  const std::vector<double> degree = s.row_sums();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t k = s.row_ptr[r]; k < s.row_ptr[r + 1]; ++k) s.values[k] /= degree[r];

  const double a = config.alpha;
  std::vector<double> r = result.scores;
  bool converged = false;
  for (std::size_t it = 1; it <= config.max_iters; ++it) {
    std::vector<double> next = s.multiply(r);
    double l1 = 0.0;
    double sup = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      next[i] = a * next[i] + (1.0 - a) * initial[i];
      const double d = std::abs(next[i] - r[i]);
      l1 += d;
      sup = std::max(sup, d);
    }
    r = std::move(next);
    result.iterations = it;
    result.l1_residuals.push_back(l1);
    result.sup_residuals.push_back(sup);
    if (l1 < config.tol) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    throw NumericalError(fmt::format("propagate: no convergence after {} iterations (L1 change {:.3e})",
                                     config.max_iters, result.l1_residuals.back()));
  }
  const double top = *std::max_element(r.begin(), r.end());
  if (!(top > 0.0) || !std::isfinite(top)) throw NumericalError("propagate: degenerate scores");
  for (double& x : r) x /= top;
  result.scores = std::move(r);
  return result;
}

std::vector<double> refine_edges(std::span<const double> edge_scores,
                                 std::span<const double> node_scores,
                                 std::span<const Edge> edges, double alpha_lp) {
  if (!(alpha_lp >= 0.0 && alpha_lp <= 1.0)) throw UsageError("alpha_lp must lie in [0, 1]");
  if (edge_scores.size() != edges.size()) {
    throw UsageError(fmt::format("refine_edges: {} scores for {} edges", edge_scores.size(),
                                 edges.size()));
  }
  std::vector<double> out(edges.size());
  for (std::size_t e = 0; e < edges.size(); ++e) {
    if (edges[e].src >= node_scores.size() || edges[e].dst >= node_scores.size()) {
      throw UsageError("refine_edges: edge endpoint outside the node score vector");
    }
    const double pooled = std::max(node_scores[edges[e].src], node_scores[edges[e].dst]);
    out[e] = (1.0 - alpha_lp) * edge_scores[e] + alpha_lp * pooled;
  }
  return out;
}

PartitionScores refine_collection(const GraphCollection& collection, const PartitionScores& scores,
                                  const ClusterSet* clusters, const PropagationConfig& config) {
  config.validate();
  PartitionScores out;
  for (const auto& [name, graph] : collection.graphs) {
    auto it = scores.find(name);
    if (it == scores.end()) throw DataError("refine: no scores for partition " + name);
    const CsrMatrix adjacency = binary_adjacency(graph, false);
    std::optional<CsrMatrix> structure;
    if (clusters) structure = cluster_structure(graph, *clusters);
    const auto nodes = node_scores_from_edges(graph, it->second, config.in_edges_only);
    const auto prop = propagate(adjacency, structure ? &*structure : nullptr, nodes, config);
    out[name] = refine_edges(it->second, prop.scores, graph.edges, config.alpha_lp);
  }
  return out;
}

}  // namespace fedaml
