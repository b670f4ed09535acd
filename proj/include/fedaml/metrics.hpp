#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedaml/graph.hpp"

namespace fedaml {

// Mann-Whitney AUROC; tied scores count one half. Throws DataError
// ("undefined metric") unless both classes are present.
double auroc(std::span<const double> scores, std::span<const int> labels);

// Average precision with tied scores treated as one step. Throws DataError
// when there are no positives.
double auprc(std::span<const double> scores, std::span<const int> labels);

// A score >= threshold is a positive prediction. A rate whose class is
// absent is left empty rather than reported as 0.
struct ErrorRates {
  std::optional<double> type1;  // FP / (FP + TN)
  std::optional<double> type2;  // FN / (FN + TP)
};
ErrorRates error_rates(std::span<const double> scores, std::span<const int> labels,
                       double threshold);

struct MarketRow {
  std::string market;
  std::optional<double> auroc;
  std::optional<double> auprc;
  std::optional<double> type1;
  std::optional<double> type2;
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

MarketRow evaluate_market(const std::string& market, std::span<const double> scores,
                          std::span<const int> labels, double threshold);

enum class OverallMode { kPooled, kMacro };

struct EvalReport {
  std::vector<MarketRow> rows;
  MarketRow overall;
};

using PartitionScores = std::map<std::string, std::vector<double>>;
using PartitionMask = std::map<std::string, std::vector<std::uint8_t>>;

// Per-partition rows over each graph's edges (restricted to `mask` when
// given). The pooled overall row counts every record once, through its copy
// in the origin partition.
EvalReport evaluate(const GraphCollection& collection, const PartitionScores& scores,
                    double threshold = 0.5, const PartitionMask* mask = nullptr,
                    OverallMode mode = OverallMode::kPooled);

// Pooled scores and labels over canonical record copies, in record order.
struct PooledEdges {
  std::vector<double> scores;
  std::vector<int> labels;
  std::vector<std::size_t> records;
};
PooledEdges pool_edges(const GraphCollection& collection, const PartitionScores& scores,
                       const PartitionMask* mask = nullptr);

void write_report_csv(std::ostream& out, const EvalReport& report);
std::string format_report_table(const EvalReport& report);

}  // namespace fedaml
