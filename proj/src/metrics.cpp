#include "fedaml/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>

#include <fmt/format.h>

#include "fedaml/error.hpp"

namespace fedaml {

namespace {

void check_aligned(std::span<const double> scores, std::span<const int> labels, const char* op) {
  if (scores.size() != labels.size()) {
    throw UsageError(std::string(op) + ": " + std::to_string(scores.size()) + " scores vs " +
                     std::to_string(labels.size()) + " labels");
  }
}

// Indices sorted by descending score, ties by index.
std::vector<std::size_t> descending(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const int> labels) {
  check_aligned(scores, labels, "auroc");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });
  // Sum of positive midranks.
  double pos = 0.0, neg = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) {
        pos += 1.0;
        rank_sum += midrank;
      } else {
        neg += 1.0;
      }
    }
    i = j;
  }
  if (pos == 0.0 || neg == 0.0) throw DataError("auroc: undefined metric, single-class input");
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

double auprc(std::span<const double> scores, std::span<const int> labels) {
  check_aligned(scores, labels, "auprc");
  const double total_pos =
      static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  if (total_pos == 0.0) throw DataError("auprc: undefined metric, no positives");
  const auto order = descending(scores);
  double tp = 0.0, seen = 0.0, ap = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    double group_pos = 0.0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      group_pos += labels[order[j]] == 1 ? 1.0 : 0.0;
      ++j;
    }
    tp += group_pos;
    seen += static_cast<double>(j - i);
    ap += (group_pos / total_pos) * (tp / seen);
    i = j;
  }
  return ap;
}

ErrorRates error_rates(std::span<const double> scores, std::span<const int> labels,
                       double threshold) {
  check_aligned(scores, labels, "error_rates");
  std::size_t fp = 0, tn = 0, fn = 0, tp = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    if (labels[i] == 1) {
      predicted ? ++tp : ++fn;
    } else {
      predicted ? ++fp : ++tn;
    }
  }
  ErrorRates r;
  if (fp + tn > 0) r.type1 = static_cast<double>(fp) / static_cast<double>(fp + tn);
  if (fn + tp > 0) r.type2 = static_cast<double>(fn) / static_cast<double>(fn + tp);
  return r;
}

MarketRow evaluate_market(const std::string& market, std::span<const double> scores,
                          std::span<const int> labels, double threshold) {
  check_aligned(scores, labels, "evaluate_market");
  MarketRow row;
  row.market = market;
  row.positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  row.negatives = labels.size() - row.positives;
  if (row.positives > 0 && row.negatives > 0) row.auroc = auroc(scores, labels);
  if (row.positives > 0) row.auprc = auprc(scores, labels);
  const ErrorRates e = error_rates(scores, labels, threshold);
  row.type1 = e.type1;
  row.type2 = e.type2;
  return row;
}

namespace {

const std::vector<double>& scores_for(const PartitionScores& scores, const std::string& name,
                                      std::size_t edges) {
  const auto it = scores.find(name);
  if (it == scores.end()) throw DataError("no scores for partition " + name);
  if (it->second.size() != edges) {
    throw DataError("partition " + name + ": " + std::to_string(it->second.size()) +
                    " scores for " + std::to_string(edges) + " edges");
  }
  return it->second;
}

bool selected(const PartitionMask* mask, const std::string& name, std::size_t e) {
  if (!mask) return true;
  const auto it = mask->find(name);
  return it != mask->end() && e < it->second.size() && it->second[e];
}

}  // namespace

PooledEdges pool_edges(const GraphCollection& collection, const PartitionScores& scores,
                       const PartitionMask* mask) {
  PooledEdges out;
  for (std::size_t r = 0; r < collection.records.size(); ++r) {
    const auto& [part, e] = collection.home_edge(r);
    const TransactionGraph& g = collection.graph(part);
    if (!selected(mask, part, e)) continue;
    out.scores.push_back(scores_for(scores, part, g.edge_count())[e]);
    out.labels.push_back(g.edge_labels[e]);
    out.records.push_back(r);
  }
  return out;
}

EvalReport evaluate(const GraphCollection& collection, const PartitionScores& scores,
                    double threshold, const PartitionMask* mask, OverallMode mode) {
  EvalReport report;
  for (const auto& [name, g] : collection.graphs) {
    const auto& s = scores_for(scores, name, g.edge_count());
    std::vector<double> sel_scores;
    std::vector<int> sel_labels;
    for (std::size_t e = 0; e < g.edge_count(); ++e) {
      if (!selected(mask, name, e)) continue;
      sel_scores.push_back(s[e]);
      sel_labels.push_back(g.edge_labels[e]);
    }
    report.rows.push_back(evaluate_market(name, sel_scores, sel_labels, threshold));
  }

  if (mode == OverallMode::kPooled) {
    const PooledEdges pooled = pool_edges(collection, scores, mask);
    report.overall = evaluate_market("Overall", pooled.scores, pooled.labels, threshold);
    return report;
  }

  MarketRow& o = report.overall;
  o.market = "Overall";
  auto macro = [&](std::optional<double> MarketRow::*field) -> std::optional<double> {
    double total = 0.0;
    std::size_t n = 0;
    for (const auto& row : report.rows) {
      if (row.*field) {
        total += *(row.*field);
        ++n;
      }
    }
    if (n == 0) return std::nullopt;
    return total / static_cast<double>(n);
  };
  o.auroc = macro(&MarketRow::auroc);
  o.auprc = macro(&MarketRow::auprc);
  o.type1 = macro(&MarketRow::type1);
  o.type2 = macro(&MarketRow::type2);
  for (const auto& row : report.rows) {
    o.positives += row.positives;
    o.negatives += row.negatives;
  }
  return report;
}

namespace {

std::string cell(const std::optional<double>& v) {
  return v ? fmt::format("{:.4f}", *v) : std::string();
}

}  // namespace

void write_report_csv(std::ostream& out, const EvalReport& report) {
  out << "market,auroc,auprc,type1,type2,positives,negatives\n";
  auto line = [&](const MarketRow& r) {
    out << r.market << ',' << cell(r.auroc) << ',' << cell(r.auprc) << ',' << cell(r.type1) << ','
        << cell(r.type2) << ',' << r.positives << ',' << r.negatives << '\n';
  };
  for (const auto& r : report.rows) line(r);
  line(report.overall);
}

std::string format_report_table(const EvalReport& report) {
  std::string out = fmt::format("{:<12} {:>8} {:>8} {:>8} {:>8} {:>8} {:>9}\n", "Market", "AUROC",
                                "AUPRC", "Type I", "Type II", "Pos", "Neg");
  auto line = [&](const MarketRow& r) {
    auto c = [](const std::optional<double>& v) { return v ? fmt::format("{:.4f}", *v) : "-"; };
    out += fmt::format("{:<12} {:>8} {:>8} {:>8} {:>8} {:>8} {:>9}\n", r.market, c(r.auroc),
                       c(r.auprc), c(r.type1), c(r.type2), r.positives, r.negatives);
  };
  for (const auto& r : report.rows) line(r);
  line(report.overall);
  return out;
}

}  // namespace fedaml
