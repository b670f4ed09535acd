#include "fedaml/federated.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <tuple>

#include <fmt/format.h>

#include "fedaml/error.hpp"

namespace fedaml {

SplitMode parse_split_mode(const std::string& s) {
  if (s == "random") return SplitMode::kRandom;
  if (s == "chronological") return SplitMode::kChronological;
  throw UsageError("unknown split mode '" + s + "' (random|chronological)");
}

std::vector<std::uint8_t> split_records(const std::vector<TransactionRecord>& records,
                                        const SplitConfig& config) {
  if (!(config.train_fraction > 0.0 && config.train_fraction <= 1.0)) {
    throw UsageError("train_fraction must lie in (0, 1]");
  }
  const std::size_t n = records.size();
  const auto n_train =
      static_cast<std::size_t>(std::floor(config.train_fraction * static_cast<double>(n)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (config.mode == SplitMode::kRandom) {
    std::mt19937_64 rng(config.seed);
    std::shuffle(order.begin(), order.end(), rng);
  } else {
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return records[a].timestamp < records[b].timestamp;
    });
  }
  std::vector<std::uint8_t> train(n, 0);
  for (std::size_t i = 0; i < n_train; ++i) train[order[i]] = 1;
  return train;
}

PartitionMask edge_masks(const GraphCollection& collection,
                         std::span<const std::uint8_t> record_split, std::uint8_t want) {
  if (record_split.size() != collection.records.size()) {
    throw UsageError("split has " + std::to_string(record_split.size()) + " flags for " +
                     std::to_string(collection.records.size()) + " records");
  }
  PartitionMask out;
  for (const auto& [name, g] : collection.graphs) {
    auto& m = out[name];
    m.resize(g.edge_count());
    for (std::size_t e = 0; e < g.edge_count(); ++e)
      m[e] = record_split[g.edge_record[e]] == want ? 1 : 0;
  }
  return out;
}

void FederationConfig::validate() const {
  if (comm_frequency < 1) throw UsageError("comm_frequency must be at least 1");
  if (rounds < comm_frequency) throw UsageError("rounds must be at least comm_frequency");
  if (!(lr >= 0.0)) throw UsageError("learning rate must be non-negative");
  encoder.validate();
  loss.validate();
}

void MessageBus::send(const std::string& to, Message message) {
  queues_[to].push_back(std::move(message));
}

std::vector<Message> MessageBus::drain(const std::string& to) {
  std::vector<Message> out;
  auto it = queues_.find(to);
  if (it == queues_.end()) return out;
  out.assign(std::make_move_iterator(it->second.begin()), std::make_move_iterator(it->second.end()));
  it->second.clear();
  delivered_ += out.size();
  return out;
}

std::size_t MessageBus::pending(const std::string& to) const {
  const auto it = queues_.find(to);
  return it == queues_.end() ? 0 : it->second.size();
}

namespace {

std::vector<std::size_t> masked_edges(const PartitionMask* mask, const std::string& partition,
                                      std::size_t edges) {
  std::vector<std::size_t> out;
  const std::vector<std::uint8_t>* m = nullptr;
  if (mask) {
    const auto it = mask->find(partition);
    if (it == mask->end()) return out;
    m = &it->second;
  }
  for (std::size_t e = 0; e < edges; ++e)
    if (!m || (*m)[e]) out.push_back(e);
  return out;
}

}  // namespace

ClientState make_client(const GraphCollection& collection, const std::string& partition,
                        const ModelParams& init, const PartitionMask* train_mask,
                        const PartitionMask* eval_mask) {
  const TransactionGraph& g = collection.graph(partition);
  ClientState c;
  c.partition = partition;
  c.tensors = prepare(g, &collection.supernodes);
  c.params = init;
  c.train_edges = masked_edges(train_mask, partition, g.edge_count());
  c.eval_edges = masked_edges(eval_mask, partition, g.edge_count());
  return c;
}

void local_epoch(ClientState& client, const EncoderConfig& encoder, const LossConfig& loss,
                 double lr, Optimizer optimizer) {
  if (client.train_edges.empty()) {
    throw UsageError("client " + client.partition + " has no training edges");
  }
  Tape tape;
  const ForwardPass pass = forward(tape, client.tensors, client.params, encoder, client.train_edges);
  const LossTerms terms = total_loss(pass, client.tensors, loss, &client.foreign_embeddings);
  const double value = terms.total.value().item();
  if (!std::isfinite(value)) {
    throw NumericalError(fmt::format(
        "client {} epoch {}: non-finite loss (classification {}, cut {}, consistency {})",
        client.partition, client.epoch + 1, terms.classification.value().item(),
        terms.cut ? terms.cut->value().item() : 0.0,
        terms.consistency ? terms.consistency->value().item() : 0.0));
  }
  tape.backward(terms.total);
  ModelParams grads;
  for (std::size_t i = 0; i < client.params.size(); ++i)
    grads.add(client.params[i].first, tape.grad(pass.params[i]));
  client.params = optimizer == Optimizer::kAdam
                      ? adam_step(client.params, grads, lr, client.adam)
                      : sgd_step(client.params, grads, lr);
  client.last_loss = value;
  ++client.epoch;
}

void refresh_supernodes(ClientState& client, const EncoderConfig& encoder,
                        SupernodeAggregation mode) {
  if (!client.tensors.supernode_avg || client.tensors.supernode_avg->rows == 0) {
    client.home_embeddings = Tensor();
    return;
  }
  Tape tape;
  Var h = tape.constant(encode(client.tensors, client.params, encoder));
  client.home_embeddings = supernode_embeddings(client.tensors.supernode_avg, h, mode).value();
}

ModelParams fed_average(std::span<const ModelParams> params, std::span<const double> weights) {
  if (params.empty()) throw UsageError("fed_average: no clients");
  if (!weights.empty() && weights.size() != params.size()) {
    throw UsageError("fed_average: weight count does not match client count");
  }
  for (const auto& p : params) {
    if (!p.aligned_with(params[0])) {
      throw UsageError("fed_average: client parameters differ in names or shapes");
    }
  }
  ModelParams out = params[0];
  double seen = weights.empty() ? 1.0 : weights[0];
  for (std::size_t k = 1; k < params.size(); ++k) {
    const double w = weights.empty() ? 1.0 : weights[k];
    if (!(w >= 0.0)) throw UsageError("fed_average: weights must be non-negative");
    seen += w;
    if (seen == 0.0) continue;
    const double step = w / seen;
    for (std::size_t i = 0; i < out.size(); ++i) {
      auto o = out[i].second.data();
      auto x = params[k][i].second.data();
      for (std::size_t j = 0; j < o.size(); ++j) o[j] += step * (x[j] - o[j]);
    }
  }
  if (!(seen > 0.0)) throw UsageError("fed_average: weights sum to zero");
  return out;
}

void exchange_supernodes(std::vector<ClientState>& clients, const SuperNodeRegistry& registry,
                         MessageBus& bus) {
  std::set<std::string> participants;
  for (const auto& c : clients) participants.insert(c.partition);
  const auto mirrors = registry.mirror_indices();

  for (const auto& c : clients) {
    const auto ids = registry.entries_for(c.partition);
    std::map<std::string, SupernodeEmbeddings> outgoing;
    for (std::size_t r = 0; r < ids.size(); ++r) {
      const SuperNodeEntry& e = registry.entries[ids[r]];
      if (!participants.count(e.foreign_country)) continue;
      if (mirrors[ids[r]] == SuperNodeRegistry::npos) {
        throw DataError("supernode " + e.home_account + " -> " + e.foreign_account +
                        " has no mirror entry");
      }
      auto& msg = outgoing[e.foreign_country];
      msg.sender = c.partition;
      msg.keys.emplace_back(e.home_account, e.foreign_account);
    }
    for (auto& [to, msg] : outgoing) {
      const std::size_t d = c.home_embeddings.empty() ? 0 : c.home_embeddings.cols();
      msg.means = Tensor::matrix(msg.keys.size(), d);
      std::size_t out_row = 0;
      for (std::size_t r = 0; r < ids.size(); ++r) {
        const SuperNodeEntry& e = registry.entries[ids[r]];
        if (e.foreign_country != to) continue;
        const auto src = c.home_embeddings.row_span(r);
        std::copy(src.begin(), src.end(), msg.means.row_span(out_row++).begin());
      }
      bus.send(to, std::move(msg));
    }
  }

  for (auto& c : clients) {
    // (sender, sender-side account, our account) -> vector
    std::map<std::tuple<std::string, std::string, std::string>, std::span<const double>> received;
    std::vector<SupernodeEmbeddings> inbox;
    for (Message& m : bus.drain(c.partition)) {
      if (auto* s = std::get_if<SupernodeEmbeddings>(&m)) inbox.push_back(std::move(*s));
    }
    for (const auto& msg : inbox) {
      for (std::size_t r = 0; r < msg.keys.size(); ++r)
        received[{msg.sender, msg.keys[r].first, msg.keys[r].second}] = msg.means.row_span(r);
    }
    const auto ids = registry.entries_for(c.partition);
    if (ids.empty()) {
      c.foreign_embeddings = Tensor();
      continue;
    }
    c.foreign_embeddings = c.home_embeddings;
    for (std::size_t r = 0; r < ids.size(); ++r) {
      const SuperNodeEntry& e = registry.entries[ids[r]];
      if (!participants.count(e.foreign_country)) continue;  // no counterpart: zero residual
      const auto it = received.find({e.foreign_country, e.foreign_account, e.home_account});
      if (it == received.end()) {
        throw DataError("no mirror embedding for " + e.home_account + " <- " + e.foreign_account);
      }
      std::copy(it->second.begin(), it->second.end(), c.foreign_embeddings.row_span(r).begin());
    }
  }
}

namespace {

RoundMetrics evaluate_client(const ClientState& c, const EncoderConfig& encoder, double threshold,
                             std::size_t round) {
  RoundMetrics m;
  m.round = round;
  m.client = c.partition;
  m.loss = c.last_loss;
  if (c.eval_edges.empty()) return m;
  const std::vector<double> all = predict_edges(c.tensors, c.params, encoder);
  std::vector<double> s;
  std::vector<int> y;
  for (std::size_t e : c.eval_edges) {
    s.push_back(all[e]);
    y.push_back(c.tensors.labels[e]);
  }
  const MarketRow row = evaluate_market(c.partition, s, y, threshold);
  m.auroc = row.auroc;
  m.auprc = row.auprc;
  m.type1 = row.type1;
  m.type2 = row.type2;
  return m;
}

void aggregate(std::vector<ClientState>& clients, MessageBus& bus, bool volume_weighted,
               bool share_state) {
  for (const auto& c : clients) {
    const double w = volume_weighted ? static_cast<double>(c.tensors.src.size()) : 1.0;
    ParamsSnapshot snap{c.partition, c.params, w, {}, {}};
    if (share_state && c.adam.step > 0) {
      snap.moment1 = c.adam.m;
      snap.moment2 = c.adam.v;
    }
    bus.send(kCoordinator, std::move(snap));
  }
  std::vector<ModelParams> received, m1, m2;
  std::vector<double> weights;
  for (Message& m : bus.drain(kCoordinator)) {
    auto& snap = std::get<ParamsSnapshot>(m);
    received.push_back(std::move(snap.params));
    weights.push_back(snap.weight);
    if (!snap.moment1.empty()) {
      m1.push_back(std::move(snap.moment1));
      m2.push_back(std::move(snap.moment2));
    }
  }
  auto average = [&](std::span<const ModelParams> xs) {
    return volume_weighted ? fed_average(xs, weights) : fed_average(xs);
  };
  ParamsSnapshot reply{kCoordinator, average(received), 1.0, {}, {}};
  if (!m1.empty() && m1.size() == received.size()) {
    reply.moment1 = average(m1);
    reply.moment2 = average(m2);
  }
  for (const auto& c : clients) bus.send(c.partition, reply);
  for (auto& c : clients) {
    for (Message& m : bus.drain(c.partition)) {
      auto* snap = std::get_if<ParamsSnapshot>(&m);
      if (!snap) continue;
      c.params = std::move(snap->params);
      if (!snap->moment1.empty()) {
        c.adam.m = std::move(snap->moment1);
        c.adam.v = std::move(snap->moment2);
      }
    }
  }
}

std::vector<std::string> client_list(const GraphCollection& collection,
                                     const FederationConfig& config) {
  std::vector<std::string> names = config.clients.empty() ? collection.partitions() : config.clients;
  for (const auto& n : names) (void)collection.graph(n);
  return names;
}

}  // namespace

FederationResult run_federation(const GraphCollection& collection, const FederationConfig& config,
                                const PartitionMask* train_mask, const PartitionMask* eval_mask) {
  config.validate();
  const ModelParams init = init_params(config.encoder, config.seed);
  FederationResult result;
  for (const auto& name : client_list(collection, config))
    result.clients.push_back(make_client(collection, name, init, train_mask, eval_mask));

  MessageBus bus;
  const bool consistency = config.aggregate && config.loss.lambda2 > 0.0;
  auto exchange = [&] {
    if (!consistency) return;
    for (auto& c : result.clients) refresh_supernodes(c, config.encoder, config.loss.aggregation);
    exchange_supernodes(result.clients, collection.supernodes, bus);
  };
  exchange();

  const std::size_t k = config.comm_frequency;
  for (std::size_t epoch = 1; epoch <= config.rounds; ++epoch) {
    for (auto& c : result.clients)
      local_epoch(c, config.encoder, config.loss, config.lr, config.optimizer);
    const bool boundary = epoch % k == 0 || epoch == config.rounds;
    if (config.aggregate && boundary) {
      aggregate(result.clients, bus, config.volume_weighted, config.share_optimizer_state);
      ++result.aggregations;
      exchange();
    }
    const bool report = epoch == config.rounds ||
                        (config.eval_every > 0 && epoch % config.eval_every == 0);
    if (report) {
      for (const auto& c : result.clients)
        result.metrics.push_back(evaluate_client(c, config.encoder, config.threshold, epoch));
    }
  }
  if (config.aggregate) result.global = result.clients.front().params;
  return result;
}

ModelParams train_centralized(const GraphCollection& collection, const std::string& partition,
                              const FederationConfig& config, const PartitionMask* train_mask) {
  config.validate();
  ClientState c =
      make_client(collection, partition, init_params(config.encoder, config.seed), train_mask);
  for (std::size_t epoch = 0; epoch < config.rounds; ++epoch)
    local_epoch(c, config.encoder, config.loss, config.lr, config.optimizer);
  return c.params;
}

PartitionScores score_partitions(const GraphCollection& collection, const FederationResult& result,
                                 const EncoderConfig& encoder) {
  PartitionScores out;
  for (const auto& c : result.clients) {
    const ModelParams& p = result.global ? *result.global : c.params;
    out[c.partition] = predict_edges(c.tensors, p, encoder);
  }
  for (const auto& [name, g] : collection.graphs) {
    if (!out.count(name)) {
      if (!result.global) continue;
      out[name] = predict_edges(g, *result.global, encoder);
    }
  }
  return out;
}

void write_metrics_csv(std::ostream& out, std::span<const RoundMetrics> metrics) {
  auto cell = [](const std::optional<double>& v) {
    return v ? fmt::format("{:.6f}", *v) : std::string();
  };
  out << "round,client,loss,auroc,auprc,type1,type2\n";
  for (const auto& m : metrics) {
    out << m.round << ',' << m.client << ',' << fmt::format("{:.8g}", m.loss) << ','
        << cell(m.auroc) << ',' << cell(m.auprc) << ',' << cell(m.type1) << ',' << cell(m.type2)
        << '\n';
  }
}

}  // namespace fedaml
