#pragma once

#include <span>
#include <vector>

#include "fedaml/graph.hpp"
#include "fedaml/metrics.hpp"
#include "fedaml/ppr.hpp"
#include "fedaml/tensor.hpp"

namespace fedaml {

struct PropagationConfig {
  double alpha = 0.85;     // weight on the diffused term
  double alpha_lp = 0.3;   // weight on the propagated signal when refining edges
  double tol = 1e-10;      // L1 change between iterates
  std::size_t max_iters = 10000;
  bool in_edges_only = false;  // node score from incoming edges only

  void validate() const;
};

// Mean score over edges incident to each node (both directions unless
// `in_edges_only`). Nodes without qualifying edges score 0.
std::vector<double> node_scores_from_edges(const TransactionGraph& graph,
                                           std::span<const double> edge_scores,
                                           bool in_edges_only = false);

// Weight-1 clique over the members of each cluster present in `graph`.
CsrMatrix cluster_structure(const TransactionGraph& graph, const ClusterSet& clusters);

struct PropagationResult {
  std::vector<double> scores;  // max-normalized
  std::size_t iterations = 0;
  std::vector<double> l1_residuals;   // per iteration
  std::vector<double> sup_residuals;  // per iteration, max-norm
};

// Iterates R <- alpha S R + (1 - alpha) y from R = y with S = D^-1 (A + A_ppr),
// then divides by max(R). Rows of A + A_ppr without weight contribute
// nothing. All-zero y is returned unchanged. Throws NumericalError when the
// L1 change is still above tol after max_iters.
PropagationResult propagate(const CsrMatrix& adjacency, const CsrMatrix* ppr_structure,
                            std::span<const double> initial, const PropagationConfig& config);

// (1 - alpha_lp) y_e + alpha_lp max(R_src, R_dst)
std::vector<double> refine_edges(std::span<const double> edge_scores,
                                 std::span<const double> node_scores,
                                 std::span<const Edge> edges, double alpha_lp);

// Per partition: node scores, propagation over the undirected 0/1 account
// adjacency plus the cluster cliques (none when `clusters` is null), edge
// refinement.
PartitionScores refine_collection(const GraphCollection& collection, const PartitionScores& scores,
                                  const ClusterSet* clusters, const PropagationConfig& config);

}  // namespace fedaml
