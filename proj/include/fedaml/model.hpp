#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "fedaml/autodiff.hpp"
#include "fedaml/graph.hpp"
#include "fedaml/params.hpp"
#include "fedaml/tensor.hpp"

namespace fedaml {

struct EncoderConfig {
  std::size_t layers = 2;
  std::size_t hidden_dim = 16;
  std::size_t input_dim = kNodeFeatureDim;
  std::size_t edge_feature_dim = kEdgeFeatureDim;
  std::vector<std::size_t> mlp_hidden{16};
  std::size_t membership_clusters = 4;

  // Width of H = [H0 | H1 | ... | HL].
  std::size_t embedding_dim() const { return input_dim + layers * hidden_dim; }
  // Width of z = [h_i | h_j - h_i | x_e].
  std::size_t edge_input_dim() const { return 2 * embedding_dim() + edge_feature_dim; }
  void validate() const;
};

enum class ClassificationLoss { kFocal, kBce };

struct LossConfig {
  ClassificationLoss classifier = ClassificationLoss::kFocal;
  double alpha = 0.25;
  double gamma_focal = 2.0;
  double beta = 1.0;
  double lambda1 = 0.1;
  double lambda2 = 0.1;
  SupernodeAggregation aggregation = SupernodeAggregation::kMean;
  void validate() const;
};

inline constexpr double kProbEpsilon = 1e-12;

// Parameter names: encoder.W<l>, head.W<k>/head.b<k>, membership.W/b.
ModelParams init_params(const EncoderConfig& config, std::uint64_t seed);

// Fixed per-graph operands, built once and reused every epoch.
struct GraphTensors {
  SparseOperand propagation;   // A + I, undirected 0/1
  SparseOperand adjacency;     // A, undirected 0/1, no self loops
  SparseOperand degree;        // diag of A's row sums
  SparseOperand supernode_avg;  // rows follow registry.entries_for(partition)
  Tensor node_features;
  Tensor edge_features;
  std::vector<std::size_t> src;
  std::vector<std::size_t> dst;
  std::vector<int> labels;
};

GraphTensors prepare(const TransactionGraph& graph, const SuperNodeRegistry* registry = nullptr);

struct ForwardPass {
  std::vector<Var> params;  // leaves, in ModelParams order
  Var embeddings;           // H
  Var predictions;          // [|edges| x 1], one row per requested edge
  Var membership;           // row-stochastic [n x c]
  std::vector<std::size_t> edge_ids;  // edge id per prediction row
};

// Records the forward pass for `edges` (all edges when empty) on `tape`.
// Parameters are registered as leaves.
ForwardPass forward(Tape& tape, const GraphTensors& graph, const ModelParams& params,
                    const EncoderConfig& config, std::span<const std::size_t> edges = {});

Tensor encode(const TransactionGraph& graph, const ModelParams& params,
              const EncoderConfig& config);
Tensor encode(const GraphTensors& graph, const ModelParams& params, const EncoderConfig& config);

// z = [h_i | h_j - h_i | x_e].
std::vector<double> edge_embed(const Tensor& h, std::size_t i, std::size_t j,
                               std::span<const double> edge_features);

std::vector<double> predict_edges(const TransactionGraph& graph, const ModelParams& params,
                                  const EncoderConfig& config);
std::vector<double> predict_edges(const GraphTensors& graph, const ModelParams& params,
                                  const EncoderConfig& config);

// Losses on the tape. `labels` are 0/1 per prediction row.
Var bce_loss(Var predictions, std::span<const int> labels);
Var focal_loss(Var predictions, std::span<const int> labels, double alpha, double gamma);
// -sum(M . AM) / sum(M . DM) + beta * ||M^T M - I||_F^2; the sums equal the
// traces of M^T A M and M^T D M.
Var graph_cut_loss(const SparseOperand& adjacency, const SparseOperand& degree, Var membership,
                   double beta);
// sum over rows of ||home - foreign||^2; `foreign` is received data.
Var self_consistency_loss(Var home, const Tensor& foreign);
// Neighbour aggregation of H through the averaging operator; mean+variance
// appends E[h^2] - E[h]^2.
Var supernode_embeddings(const SparseOperand& averaging, Var embeddings,
                         SupernodeAggregation mode);

// Plain-value forms.
double bce_loss(std::span<const double> predictions, std::span<const int> labels);
double focal_loss(std::span<const double> predictions, std::span<const int> labels, double alpha,
                  double gamma);
double graph_cut_loss(const CsrMatrix& adjacency, const Tensor& membership, double beta);
// Sum over mirrored entry pairs (each pair once) of the squared distance
// between the two sides' neighbour-mean embeddings.
double self_consistency_loss(const SuperNodeRegistry& registry,
                             const std::map<std::string, Tensor>& embeddings,
                             SupernodeAggregation mode = SupernodeAggregation::kMean);

struct LossTerms {
  Var total;
  Var classification;
  std::optional<Var> cut;
  std::optional<Var> consistency;
};

// L = L_cls + lambda1 * L_cut + lambda2 * L_sc, with L_cls over the edges
// the pass predicted. Zero-weight terms are not recorded. The consistency
// term is also skipped when `foreign` is absent or empty.
LossTerms total_loss(const ForwardPass& pass, const GraphTensors& graph, const LossConfig& loss,
                     const Tensor* foreign = nullptr);

}  // namespace fedaml
