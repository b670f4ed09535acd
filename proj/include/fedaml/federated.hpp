#pragma once

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "fedaml/graph.hpp"
#include "fedaml/metrics.hpp"
#include "fedaml/model.hpp"
#include "fedaml/params.hpp"

namespace fedaml {

enum class SplitMode { kRandom, kChronological };

struct SplitConfig {
  SplitMode mode = SplitMode::kRandom;
  double train_fraction = 0.05;
  std::uint64_t seed = 0;
};

SplitMode parse_split_mode(const std::string& s);

// 1 marks a training record. Random mode draws exactly floor(f * N) training
// records; chronological mode takes the earliest floor(f * N) by timestamp
// (ties by record index).
std::vector<std::uint8_t> split_records(const std::vector<TransactionRecord>& records,
                                        const SplitConfig& config);

// Per-partition edge mask: edges whose record has split flag `want`.
PartitionMask edge_masks(const GraphCollection& collection,
                         std::span<const std::uint8_t> record_split, std::uint8_t want);

enum class Optimizer { kSgd, kAdam };

struct FederationConfig {
  std::size_t rounds = 200;
  std::size_t comm_frequency = 1;    // aggregate every k epochs
  std::vector<std::string> clients;  // partitions; empty means all
  double lr = 0.01;
  std::uint64_t seed = 0;
  Optimizer optimizer = Optimizer::kAdam;
  bool aggregate = true;             // false: isolated per-client training
  bool volume_weighted = false;      // weight clients by edge count
  // Average Adam moments along with the parameters. Without this each
  // replica normalizes its own step and the average can move uphill.
  bool share_optimizer_state = true;
  std::size_t eval_every = 0;        // 0: evaluate only after the last epoch
  double threshold = 0.5;
  EncoderConfig encoder;
  LossConfig loss;

  void validate() const;
};

struct ClientState {
  std::string partition;
  GraphTensors tensors;
  ModelParams params;
  AdamState adam;
  std::size_t epoch = 0;
  std::vector<std::size_t> train_edges;
  std::vector<std::size_t> eval_edges;
  Tensor home_embeddings;     // neighbour means of this client's supernode entries
  Tensor foreign_embeddings;  // mirror side, filled by exchange_supernodes
  double last_loss = 0.0;
};

// The only message kinds that cross the institution boundary.
struct ParamsSnapshot {
  std::string sender;
  ModelParams params;
  double weight = 1.0;
  // Adam first/second moments; empty for SGD or when not shared.
  ModelParams moment1;
  ModelParams moment2;
};

// Neighbour-mean vectors keyed by (sender-side account, receiver-side
// account). No raw features or per-node embeddings.
struct SupernodeEmbeddings {
  std::string sender;
  std::vector<std::pair<std::string, std::string>> keys;
  Tensor means;
};

using Message = std::variant<ParamsSnapshot, SupernodeEmbeddings>;

// In-process mailbox per participant.
class MessageBus {
 public:
  void send(const std::string& to, Message message);
  std::vector<Message> drain(const std::string& to);
  std::size_t pending(const std::string& to) const;
  std::size_t delivered() const { return delivered_; }

 private:
  std::map<std::string, std::deque<Message>> queues_;
  std::size_t delivered_ = 0;
};

inline constexpr const char* kCoordinator = "coordinator";

ClientState make_client(const GraphCollection& collection, const std::string& partition,
                        const ModelParams& init, const PartitionMask* train_mask = nullptr,
                        const PartitionMask* eval_mask = nullptr);

// One full-batch step on the client's training edges. Throws NumericalError
// on a non-finite loss.
void local_epoch(ClientState& client, const EncoderConfig& encoder, const LossConfig& loss,
                 double lr, Optimizer optimizer = Optimizer::kAdam);

// Recomputes home_embeddings from the current parameters.
void refresh_supernodes(ClientState& client, const EncoderConfig& encoder,
                        SupernodeAggregation mode);

// Running mean over clients, so identical inputs return the input exactly.
// With weights, the weighted mean (weights need not sum to 1).
ModelParams fed_average(std::span<const ModelParams> params,
                        std::span<const double> weights = {});

void exchange_supernodes(std::vector<ClientState>& clients, const SuperNodeRegistry& registry,
                         MessageBus& bus);

struct RoundMetrics {
  std::size_t round = 0;
  std::string client;
  double loss = 0.0;
  std::optional<double> auroc;
  std::optional<double> auprc;
  std::optional<double> type1;
  std::optional<double> type2;
};

struct FederationResult {
  std::optional<ModelParams> global;  // absent for isolated training
  std::vector<ClientState> clients;
  std::vector<RoundMetrics> metrics;
  std::size_t aggregations = 0;
};

// Trains over `collection`. Training edges come from `train_mask` (all edges
// when null); metrics are computed on `eval_mask` (all edges when null).
FederationResult run_federation(const GraphCollection& collection, const FederationConfig& config,
                                const PartitionMask* train_mask = nullptr,
                                const PartitionMask* eval_mask = nullptr);

// Plain single-replica training loop on one partition, for comparison with
// a one-client federation.
ModelParams train_centralized(const GraphCollection& collection, const std::string& partition,
                              const FederationConfig& config,
                              const PartitionMask* train_mask = nullptr);

// Scores every edge of every partition: with `global` when given, else each
// client's own parameters.
PartitionScores score_partitions(const GraphCollection& collection, const FederationResult& result,
                                 const EncoderConfig& encoder);

void write_metrics_csv(std::ostream& out, std::span<const RoundMetrics> metrics);

}  // namespace fedaml
