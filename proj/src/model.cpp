#include "fedaml/model.hpp"

#include <cmath>
#include <random>
#include <string>

#include "fedaml/error.hpp"

namespace fedaml {

void EncoderConfig::validate() const {
  if (layers < 1) throw UsageError("encoder needs at least one layer");
  if (hidden_dim == 0 || input_dim == 0 || edge_feature_dim == 0) {
    throw UsageError("encoder dimensions must be positive");
  }
  for (std::size_t h : mlp_hidden)
    if (h == 0) throw UsageError("mlp hidden widths must be positive");
  if (membership_clusters < 2) throw UsageError("membership_clusters must be at least 2");
}

void LossConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw UsageError("focal alpha must lie in [0, 1]");
  if (!(gamma_focal >= 0.0)) throw UsageError("focal gamma must be non-negative");
  if (!(beta >= 0.0)) throw UsageError("graph-cut beta must be non-negative");
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) throw UsageError("loss weights must be non-negative");
}

namespace {

Tensor glorot(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-limit, limit);
  Tensor w = Tensor::matrix(fan_in, fan_out);
  for (double& v : w.data()) v = u(rng);
  return w;
}

std::vector<std::size_t> all_edges(std::size_t m) {
  std::vector<std::size_t> ids(m);
  for (std::size_t e = 0; e < m; ++e) ids[e] = e;
  return ids;
}

void check_labels(std::size_t rows, std::span<const int> labels, const char* op) {
  if (rows != labels.size()) {
    throw UsageError(std::string(op) + ": " + std::to_string(rows) + " predictions vs " +
                     std::to_string(labels.size()) + " labels");
  }
}

Tensor label_column(std::span<const int> labels, bool positive) {
  Tensor y = Tensor::matrix(labels.size(), 1);
  for (std::size_t i = 0; i < labels.size(); ++i)
    y[i] = (labels[i] == 1) == positive ? 1.0 : 0.0;
  return y;
}

}  // namespace

ModelParams init_params(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  ModelParams p;
  std::size_t in = config.input_dim;
  for (std::size_t l = 0; l < config.layers; ++l) {
    p.add("encoder.W" + std::to_string(l), glorot(in, config.hidden_dim, rng));
    in = config.hidden_dim;
  }
  in = config.edge_input_dim();
  std::size_t k = 0;
  for (std::size_t h : config.mlp_hidden) {
    p.add("head.W" + std::to_string(k), glorot(in, h, rng));
    p.add("head.b" + std::to_string(k), Tensor::matrix(1, h));
    in = h;
    ++k;
  }
  p.add("head.W" + std::to_string(k), glorot(in, 1, rng));
  p.add("head.b" + std::to_string(k), Tensor::matrix(1, 1));
  p.add("membership.W", glorot(config.embedding_dim(), config.membership_clusters, rng));
  p.add("membership.b", Tensor::matrix(1, config.membership_clusters));
  return p;
}

GraphTensors prepare(const TransactionGraph& graph, const SuperNodeRegistry* registry) {
  GraphTensors t;
  t.propagation = std::make_shared<CsrMatrix>(binary_adjacency(graph, true));
  auto a = std::make_shared<CsrMatrix>(binary_adjacency(graph, false));
  const std::vector<double> deg = a->row_sums();
  t.adjacency = a;
  t.degree = std::make_shared<CsrMatrix>(CsrMatrix::diagonal(deg));
  if (registry) {
    t.supernode_avg = std::make_shared<CsrMatrix>(
        supernode_averaging(*registry, graph.country, graph.node_count()));
  }
  t.node_features = graph.node_features;
  t.edge_features = graph.edge_features;
  t.src.reserve(graph.edge_count());
  t.dst.reserve(graph.edge_count());
  for (const Edge& e : graph.edges) {
    t.src.push_back(e.src);
    t.dst.push_back(e.dst);
  }
  t.labels = graph.edge_labels;
  return t;
}

ForwardPass forward(Tape& tape, const GraphTensors& graph, const ModelParams& params,
                    const EncoderConfig& config, std::span<const std::size_t> edges) {
  if (graph.node_features.cols() != config.input_dim) {
    throw UsageError("encode: node features have " + std::to_string(graph.node_features.cols()) +
                     " columns, config expects " + std::to_string(config.input_dim));
  }
  if (graph.edge_features.cols() != config.edge_feature_dim) {
    throw UsageError("edge features have " + std::to_string(graph.edge_features.cols()) +
                     " columns, config expects " + std::to_string(config.edge_feature_dim));
  }
  ForwardPass pass;
  for (const auto& [name, value] : params) pass.params.push_back(tape.leaf(value));
  auto param = [&](const std::string& name) {
    for (std::size_t i = 0; i < params.size(); ++i)
      if (params[i].first == name) return pass.params[i];
    throw UsageError("missing parameter " + name);
  };

  std::vector<Var> layers{tape.constant(graph.node_features)};
  for (std::size_t l = 0; l < config.layers; ++l) {
    // (A + I) H W, evaluated as (A + I)(H W).
    Var hw = matmul(layers.back(), param("encoder.W" + std::to_string(l)));
    layers.push_back(relu(spmm(graph.propagation, hw)));
  }
  pass.embeddings = concat(layers);

  pass.edge_ids = edges.empty() ? all_edges(graph.src.size())
                                : std::vector<std::size_t>(edges.begin(), edges.end());
  std::vector<std::size_t> src, dst;
  src.reserve(pass.edge_ids.size());
  dst.reserve(pass.edge_ids.size());
  Tensor xe = Tensor::matrix(pass.edge_ids.size(), graph.edge_features.cols());
  for (std::size_t r = 0; r < pass.edge_ids.size(); ++r) {
    const std::size_t e = pass.edge_ids[r];
    if (e >= graph.src.size()) throw UsageError("edge id " + std::to_string(e) + " out of range");
    src.push_back(graph.src[e]);
    dst.push_back(graph.dst[e]);
    const auto row = graph.edge_features.row_span(e);
    std::copy(row.begin(), row.end(), xe.row_span(r).begin());
  }
  Var hi = gather_rows(pass.embeddings, src);
  Var hj = gather_rows(pass.embeddings, dst);
  Var z_parts[] = {hi, sub(hj, hi), tape.constant(std::move(xe))};
  Var z = concat(z_parts);

  std::size_t k = 0;
  for (; k < config.mlp_hidden.size(); ++k) {
    const std::string s = std::to_string(k);
    z = relu(add_row(matmul(z, param("head.W" + s)), param("head.b" + s)));
  }
  const std::string s = std::to_string(k);
  pass.predictions = sigmoid(add_row(matmul(z, param("head.W" + s)), param("head.b" + s)));
  pass.membership =
      softmax(add_row(matmul(pass.embeddings, param("membership.W")), param("membership.b")));
  return pass;
}

Tensor encode(const GraphTensors& graph, const ModelParams& params, const EncoderConfig& config) {
  if (graph.node_features.cols() != config.input_dim) {
    throw UsageError("encode: node features have " + std::to_string(graph.node_features.cols()) +
                     " columns, config expects " + std::to_string(config.input_dim));
  }
  Tape tape;
  std::vector<Var> layers{tape.constant(graph.node_features)};
  for (std::size_t l = 0; l < config.layers; ++l) {
    Var w = tape.constant(params.at("encoder.W" + std::to_string(l)));
    layers.push_back(relu(spmm(graph.propagation, matmul(layers.back(), w))));
  }
  return concat(layers).value();
}

Tensor encode(const TransactionGraph& graph, const ModelParams& params,
              const EncoderConfig& config) {
  return encode(prepare(graph), params, config);
}

std::vector<double> edge_embed(const Tensor& h, std::size_t i, std::size_t j,
                               std::span<const double> edge_features) {
  if (i >= h.rows() || j >= h.rows()) throw UsageError("edge_embed: node index out of range");
  const auto hi = h.row_span(i);
  const auto hj = h.row_span(j);
  std::vector<double> z(hi.begin(), hi.end());
  for (std::size_t c = 0; c < hi.size(); ++c) z.push_back(hj[c] - hi[c]);
  z.insert(z.end(), edge_features.begin(), edge_features.end());
  return z;
}

std::vector<double> predict_edges(const GraphTensors& graph, const ModelParams& params,
                                  const EncoderConfig& config) {
  if (graph.src.empty()) return {};
  Tape tape;
  const Tensor& p = forward(tape, graph, params, config).predictions.value();
  return {p.data().begin(), p.data().end()};
}

std::vector<double> predict_edges(const TransactionGraph& graph, const ModelParams& params,
                                  const EncoderConfig& config) {
  return predict_edges(prepare(graph), params, config);
}

Var bce_loss(Var predictions, std::span<const int> labels) {
  check_labels(predictions.value().rows(), labels, "bce_loss");
  Tape& t = *predictions.tape();
  Var p = clamp(predictions, kProbEpsilon, 1.0 - kProbEpsilon);
  Var q = add_scalar(scale(p, -1.0), 1.0);
  Var pos = mul(t.constant(label_column(labels, true)), log(p));
  Var neg = mul(t.constant(label_column(labels, false)), log(q));
  return scale(mean(add(pos, neg)), -1.0);
}

Var focal_loss(Var predictions, std::span<const int> labels, double alpha, double gamma) {
  check_labels(predictions.value().rows(), labels, "focal_loss");
  if (!(gamma >= 0.0)) throw UsageError("focal_loss: gamma must be non-negative");
  Tape& t = *predictions.tape();
  Var p = clamp(predictions, kProbEpsilon, 1.0 - kProbEpsilon);
  Var q = add_scalar(scale(p, -1.0), 1.0);
  Var pos = scale(mul(mul(t.constant(label_column(labels, true)), pow(q, gamma)), log(p)), alpha);
  Var neg = scale(mul(mul(t.constant(label_column(labels, false)), pow(p, gamma)), log(q)),
                  1.0 - alpha);
  return scale(mean(add(pos, neg)), -1.0);
}

Var graph_cut_loss(const SparseOperand& adjacency, const SparseOperand& degree, Var membership,
                   double beta) {
  // Copies: recording new nodes may move the tape's storage.
  const std::size_t rows = membership.value().rows();
  const std::size_t clusters = membership.value().cols();
  if (adjacency->rows != rows || degree->rows != rows) {
    throw UsageError("graph_cut_loss: adjacency " + std::to_string(adjacency->rows) +
                     " rows vs membership " + membership.value().shape_string());
  }
  Var num = sum(mul(membership, spmm(adjacency, membership)));
  Var den = sum(mul(membership, spmm(degree, membership)));
  if (!(den.value().item() > 0.0)) throw NumericalError("graph_cut_loss: degenerate degree matrix");
  Var ratio = scale(div(num, den), -1.0);
  Tape& t = *membership.tape();
  Var gram = matmul(transpose(membership), membership);
  Var penalty = frobenius_norm_sq(sub(gram, t.constant(Tensor::identity(clusters))));
  return add(ratio, scale(penalty, beta));
}

Var self_consistency_loss(Var home, const Tensor& foreign) {
  if (!home.value().same_shape(foreign)) {
    throw UsageError("self_consistency_loss: home " + home.value().shape_string() +
                     " vs foreign " + foreign.shape_string());
  }
  return frobenius_norm_sq(sub(home, home.tape()->constant(foreign)));
}

Var supernode_embeddings(const SparseOperand& averaging, Var embeddings,
                         SupernodeAggregation mode) {
  Var m = spmm(averaging, embeddings);
  if (mode == SupernodeAggregation::kMean) return m;
  Var m2 = spmm(averaging, mul(embeddings, embeddings));
  Var parts[] = {m, sub(m2, mul(m, m))};
  return concat(parts);
}

double bce_loss(std::span<const double> predictions, std::span<const int> labels) {
  Tape t;
  return bce_loss(t.constant(Tensor::column(predictions)), labels).value().item();
}

double focal_loss(std::span<const double> predictions, std::span<const int> labels, double alpha,
                  double gamma) {
  Tape t;
  return focal_loss(t.constant(Tensor::column(predictions)), labels, alpha, gamma).value().item();
}

double graph_cut_loss(const CsrMatrix& adjacency, const Tensor& membership, double beta) {
  auto a = std::make_shared<CsrMatrix>(adjacency);
  auto d = std::make_shared<CsrMatrix>(CsrMatrix::diagonal(adjacency.row_sums()));
  Tape t;
  return graph_cut_loss(a, d, t.constant(membership), beta).value().item();
}

double self_consistency_loss(const SuperNodeRegistry& registry,
                             const std::map<std::string, Tensor>& embeddings,
                             SupernodeAggregation mode) {
  std::map<std::string, Tensor> means;
  std::map<std::string, std::map<std::pair<std::string, std::string>, std::size_t>> row_of;
  auto side = [&](const SuperNodeEntry& e) -> std::span<const double> {
    if (!means.count(e.home_country)) {
      const auto it = embeddings.find(e.home_country);
      if (it == embeddings.end()) {
        throw DataError("self_consistency_loss: no embeddings for " + e.home_country);
      }
      means[e.home_country] = neighbor_mean_embedding(registry, e.home_country, it->second, mode);
      const auto ids = registry.entries_for(e.home_country);
      auto& rows = row_of[e.home_country];
      for (std::size_t r = 0; r < ids.size(); ++r)
        rows[{registry.entries[ids[r]].home_account, registry.entries[ids[r]].foreign_account}] = r;
    }
    return means[e.home_country].row_span(row_of[e.home_country].at({e.home_account, e.foreign_account}));
  };

  double total = 0.0;
  const auto mirrors = registry.mirror_indices();
  for (std::size_t i = 0; i < registry.entries.size(); ++i) {
    const SuperNodeEntry& e = registry.entries[i];
    if (e.home_country > e.foreign_country) continue;
    if (mirrors[i] == SuperNodeRegistry::npos) {
      throw DataError("self_consistency_loss: entry " + e.home_account + " -> " +
                      e.foreign_account + " has no mirror");
    }
    const auto a = side(e);
    const auto b = side(registry.entries[mirrors[i]]);
    for (std::size_t c = 0; c < a.size(); ++c) total += (a[c] - b[c]) * (a[c] - b[c]);
  }
  return total;
}

LossTerms total_loss(const ForwardPass& pass, const GraphTensors& graph, const LossConfig& loss,
                     const Tensor* foreign) {
  std::vector<int> labels;
  labels.reserve(pass.edge_ids.size());
  for (std::size_t e : pass.edge_ids) labels.push_back(graph.labels[e]);

  LossTerms terms;
  terms.classification = loss.classifier == ClassificationLoss::kFocal
                             ? focal_loss(pass.predictions, labels, loss.alpha, loss.gamma_focal)
                             : bce_loss(pass.predictions, labels);
  terms.total = terms.classification;
  if (loss.lambda1 > 0.0) {
    terms.cut = graph_cut_loss(graph.adjacency, graph.degree, pass.membership, loss.beta);
    terms.total = add(terms.total, scale(*terms.cut, loss.lambda1));
  }
  if (loss.lambda2 > 0.0 && foreign && foreign->size() > 0) {
    if (!graph.supernode_avg) throw UsageError("total_loss: graph prepared without supernodes");
    Var home = supernode_embeddings(graph.supernode_avg, pass.embeddings, loss.aggregation);
    terms.consistency = self_consistency_loss(home, *foreign);
    terms.total = add(terms.total, scale(*terms.consistency, loss.lambda2));
  }
  return terms;
}

}  // namespace fedaml
