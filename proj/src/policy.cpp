#include "fedaml/policy.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "fedaml/error.hpp"
#include "fedaml/records.hpp"

namespace fedaml {

std::string to_string(Action action) {
  switch (action) {
    case Action::kFreeze: return "Freeze";
    case Action::kMonitor: return "Monitor";
    case Action::kNoIntervention: return "NoIntervention";
  }
  throw UsageError("unknown action");
}

Action parse_action(const std::string& s) {
  std::string k;
  for (char c : s)
    if (c != '-' && c != '_' && c != ' ') k += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (k == "freeze") return Action::kFreeze;
  if (k == "monitor") return Action::kMonitor;
  if (k == "nointervention" || k == "none") return Action::kNoIntervention;
  throw UsageError("unknown action '" + s + "'");
}

void RewardConfig::validate() const {
  for (double a : {a1, a2, a3, a4, a5, a6}) {
    if (!(a > 0.0) || !std::isfinite(a)) throw UsageError("reward weights must be positive");
  }
  if (!(a1 > a2 && a2 > a3)) throw UsageError("reward weights must satisfy a1 > a2 > a3");
  if (!(a4 >= a6 && a6 > a5)) throw UsageError("reward weights must satisfy a4 >= a6 > a5");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw UsageError("reward gamma must lie in [0, 1)");
}

double reward(int label, Action action, double amount, const RewardConfig& config) {
  if (label == 1) {
    const double c = std::log1p(amount);
    switch (action) {
      case Action::kFreeze: return config.a1 * c;
      case Action::kMonitor: return config.a2 * c;
      case Action::kNoIntervention: return -config.a3 * c;
    }
  } else {
    switch (action) {
      case Action::kFreeze: return -config.a4;
      case Action::kMonitor: return -config.a5;
      case Action::kNoIntervention: return config.a6;
    }
  }
  throw UsageError("unknown action");
}

Action decide(double score, double tau, double monitor_band) {
  if (score >= tau) return Action::kFreeze;
  if (score >= tau - monitor_band) return Action::kMonitor;
  return Action::kNoIntervention;
}

std::vector<double> threshold_grid(std::size_t n, double lo, double hi) {
  if (n == 0) throw UsageError("threshold grid needs at least one point");
  if (!(lo > 0.0 && hi < 1.0 && lo <= hi)) throw UsageError("threshold grid bounds must lie in (0, 1)");
  auto logit = [](double p) { return std::log(p / (1.0 - p)); };
  const double a = logit(lo);
  const double b = logit(hi);
  std::vector<double> grid(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = n == 1 ? 0.5 : static_cast<double>(i) / static_cast<double>(n - 1);
    grid[i] = 1.0 / (1.0 + std::exp(-(a + t * (b - a))));
  }
  return grid;
}

double episode_reward(const Episode& episode, double tau, double monitor_band,
                      const RewardConfig& config) {
  if (episode.labels.size() != episode.size() || episode.amounts.size() != episode.size()) {
    throw UsageError("episode vectors are not aligned");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < episode.size(); ++i) {
    total += reward(episode.labels[i], decide(episode.scores[i], tau, monitor_band),
                    episode.amounts[i], config);
  }
  return total;
}

namespace {

std::size_t argmax_lower(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

void check_grid(const std::vector<double>& grid) {
  if (grid.empty()) throw UsageError("threshold grid is empty");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] > 0.0 && grid[i] < 1.0)) throw UsageError("threshold grid values must lie in (0, 1)");
    if (i > 0 && !(grid[i] > grid[i - 1])) throw UsageError("threshold grid must be ascending");
  }
}

void check_weights(const ThresholdPolicy& policy) {
  double sum = 0.0;
  for (const auto& [name, tau] : policy.tau) {
    auto it = policy.coordinator.weights.find(name);
    if (it == policy.coordinator.weights.end()) throw UsageError("no coordinator weight for " + name);
    if (!(it->second >= 0.0)) throw UsageError("coordinator weights must be non-negative");
    sum += it->second;
  }
  if (policy.coordinator.weights.size() != policy.tau.size()) {
    throw UsageError("coordinator weights name unknown institutions");
  }
  if (std::abs(sum - 1.0) > 1e-9) throw UsageError(fmt::format("coordinator weights sum to {}, not 1", sum));
}

double weighted_tau(const ThresholdPolicy& policy) {
  double bar = 0.0;
  for (const auto& [name, tau] : policy.tau) bar += policy.coordinator.weights.at(name) * tau;
  return bar;
}

std::vector<double> softmax(std::span<const double> x) {
  const double m = *std::max_element(x.begin(), x.end());
  std::vector<double> p(x.size());
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) z += p[i] = std::exp(x[i] - m);
  for (double& v : p) v /= z;
  return p;
}

std::size_t nearest(const std::vector<double>& grid, double x) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (std::abs(grid[i] - x) < std::abs(grid[best] - x)) best = i;
  return best;
}

}  // namespace

ThresholdPolicy train_policy(const InstitutionEpisodes& episodes, const RewardConfig& reward_config,
                             std::vector<double> grid, const PolicyTrainConfig& config,
                             Coordinator coordinator) {
  reward_config.validate();
  check_grid(grid);
  if (episodes.empty()) throw UsageError("train_policy: no institutions");
  if (!(config.epsilon >= 0.0 && config.epsilon <= 1.0)) throw UsageError("epsilon must lie in [0, 1]");
  if (!(config.monitor_band >= 0.0)) throw UsageError("monitor band must be non-negative");
  if (config.passes == 0) throw UsageError("policy passes must be positive");

  ThresholdPolicy policy;
  policy.grid = grid;
  policy.monitor_band = config.monitor_band;
  policy.coordinator = std::move(coordinator);
  const std::size_t g = grid.size();
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick(0, g - 1);

  for (const auto& [name, list] : episodes) {
    std::vector<double> sum(g, 0.0);
    std::vector<std::size_t> count(g, 0);
    auto value = [&](std::size_t k) {
      return count[k] == 0 ? std::numeric_limits<double>::infinity()
                           : sum[k] / static_cast<double>(count[k]);
    };
    for (std::size_t pass = 0; pass < config.passes; ++pass) {
      for (std::size_t e = 0; e < list.size(); ++e) {
        const Episode& ep = list[e];
        if (ep.size() == 0) {
          if (pass == 0) spdlog::warn("policy: institution {} episode {} is empty, skipped", name, e);
          continue;
        }
        if (config.full_information) {
          for (std::size_t k = 0; k < g; ++k) {
            sum[k] += episode_reward(ep, grid[k], config.monitor_band, reward_config);
            ++count[k];
          }
          continue;
        }
        std::size_t arm;
        if (unit(rng) < config.epsilon) {
          arm = pick(rng);
        } else {
          std::vector<double> v(g);
          for (std::size_t k = 0; k < g; ++k) v[k] = value(k);
          arm = argmax_lower(v);
        }
        sum[arm] += episode_reward(ep, grid[arm], config.monitor_band, reward_config);
        ++count[arm];
      }
    }
    std::vector<double> values(g);
    for (std::size_t k = 0; k < g; ++k)
      values[k] = count[k] == 0 ? -std::numeric_limits<double>::infinity() : value(k);
    if (std::all_of(count.begin(), count.end(), [](std::size_t c) { return c == 0; })) {
      spdlog::warn("policy: institution {} has no usable episodes; threshold set to the top of the grid",
                   name);
      std::fill(values.begin(), values.end(), 0.0);
      values.back() = 1.0;
    }
    policy.tau[name] = grid[argmax_lower(values)];
    policy.action_values[name] = std::move(values);
    policy.visits[name] = std::move(count);
  }

  if (policy.coordinator.weights.empty()) {
    for (const auto& [name, tau] : policy.tau)
      policy.coordinator.weights[name] = 1.0 / static_cast<double>(policy.tau.size());
  }
  if (policy.coordinator.lambda_c > 0.0) {
    check_weights(policy);
    // Best response to the current weighted threshold until no institution
    // moves; the grid is finite so the loop is bounded by a cap.
    for (std::size_t round = 0; round < 100; ++round) {
      const double bar = weighted_tau(policy);
      bool moved = false;
      for (auto& [name, tau] : policy.tau) {
        const auto& v = policy.action_values[name];
        std::vector<double> objective(g);
        for (std::size_t k = 0; k < g; ++k) {
          objective[k] = v[k] - policy.coordinator.lambda_c * (grid[k] - bar) * (grid[k] - bar);
        }
        const double next = grid[argmax_lower(objective)];
        if (next != tau) moved = true;
        tau = next;
      }
      if (!moved) break;
    }
  }
  return policy;
}

std::map<std::string, double> volume_weights(const std::map<std::string, std::size_t>& volumes) {
  double total = 0.0;
  for (const auto& [name, n] : volumes) total += static_cast<double>(n);
  if (!(total > 0.0)) throw UsageError("volume weights: no transactions");
  std::map<std::string, double> w;
  for (const auto& [name, n] : volumes) w[name] = static_cast<double>(n) / total;
  return w;
}

CoordinationReport coordinate(ThresholdPolicy& policy) {
  check_weights(policy);
  const double eta = policy.coordinator.eta_g;
  if (!(eta >= 0.0 && eta <= 1.0)) throw UsageError("eta_g must lie in [0, 1]");
  CoordinationReport report;
  report.tau_bar = weighted_tau(policy);
  for (const auto& [name, tau] : policy.tau) {
    report.threshold_term += (tau - report.tau_bar) * (tau - report.tau_bar);
  }

  // KL(softmax local values || softmax of the weighted mean value table).
  const std::size_t g = policy.grid.size();
  bool tables = !policy.action_values.empty();
  for (const auto& [name, tau] : policy.tau) {
    auto it = policy.action_values.find(name);
    if (it == policy.action_values.end() || it->second.size() != g ||
        !std::all_of(it->second.begin(), it->second.end(), [](double x) { return std::isfinite(x); })) {
      tables = false;
    }
  }
  if (tables) {
    std::vector<double> global(g, 0.0);
    for (const auto& [name, tau] : policy.tau) {
      const double w = policy.coordinator.weights.at(name);
      const auto& v = policy.action_values.at(name);
      for (std::size_t k = 0; k < g; ++k) global[k] += w * v[k];
    }
    const auto q = softmax(global);
    for (const auto& [name, tau] : policy.tau) {
      const auto p = softmax(policy.action_values.at(name));
      for (std::size_t k = 0; k < g; ++k) {
        if (p[k] > 0.0) report.kl_term += p[k] * (std::log(p[k]) - std::log(std::max(q[k], 1e-300)));
      }
    }
  }
  report.penalty = report.threshold_term + policy.coordinator.xi * report.kl_term;

  for (auto& [name, tau] : policy.tau) {
    const double next = tau + eta * (report.tau_bar - tau);
    report.unsnapped[name] = next;
    tau = policy.grid.empty() ? next : policy.grid[nearest(policy.grid, next)];
  }
  return report;
}

EconomicRow economic_eval(std::span<const Action> actions, std::span<const int> labels,
                          std::span<const double> amounts) {
  if (actions.size() != labels.size() || actions.size() != amounts.size()) {
    throw UsageError("economic_eval: inputs are not aligned");
  }
  EconomicRow row;
  std::size_t frozen_legit = 0, monitored_legit = 0, missed = 0;
  for (std::size_t i = 0; i < actions.size(); ++i) {
    if (labels[i] == 1) {
      ++row.illicit;
      row.total_loss += amounts[i];
      if (actions[i] == Action::kFreeze) row.prevented_loss += amounts[i];
      if (actions[i] == Action::kNoIntervention) ++missed;
    } else {
      ++row.legitimate;
      if (actions[i] == Action::kFreeze) ++frozen_legit;
      if (actions[i] == Action::kMonitor) ++monitored_legit;
    }
  }
  if (row.total_loss > 0.0) row.ratio = row.prevented_loss / row.total_loss;
  if (row.illicit > 0) row.type2 = static_cast<double>(missed) / static_cast<double>(row.illicit);
  if (row.legitimate > 0) {
    row.type1 = static_cast<double>(frozen_legit) / static_cast<double>(row.legitimate);
    row.legit_monitored = static_cast<double>(monitored_legit) / static_cast<double>(row.legitimate);
  }
  return row;
}

std::vector<std::size_t> budget_select(std::span<const double> scores,
                                       std::span<const double> amounts, double budget_fraction) {
  if (!(budget_fraction > 0.0 && budget_fraction <= 1.0)) {
    throw UsageError("budget fraction must lie in (0, 1]");
  }
  if (scores.size() != amounts.size()) throw UsageError("budget_select: inputs are not aligned");
  const auto cap = static_cast<std::size_t>(
      std::floor(budget_fraction * static_cast<double>(scores.size()) + 1e-12));
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (scores[i] > 0.0) order.push_back(i);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    if (amounts[a] != amounts[b]) return amounts[a] > amounts[b];
    return a < b;
  });
  if (order.size() > cap) order.resize(cap);
  std::sort(order.begin(), order.end());
  return order;
}

void write_decision_log(std::ostream& out, std::span<const Decision> decisions) {
  out << "edge_id,score,action,amount,label\n";
  for (const Decision& d : decisions) {
    out << fmt::format("{},{:.17g},{},{:.2f},{}\n", d.edge_id, d.score, to_string(d.action), d.amount,
                       d.label);
  }
}

std::vector<Decision> read_decision_log(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("decision log is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "edge_id,score,action,amount,label") throw DataError("decision log has an unexpected header");
  std::vector<Decision> out;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 5) throw DataError(fmt::format("decision log row {}: expected 5 fields", row));
    try {
      Decision d;
      d.edge_id = std::stoull(f[0]);
      d.score = std::stod(f[1]);
      d.action = parse_action(f[2]);
      d.amount = std::stod(f[3]);
      d.label = std::stoi(f[4]);
      out.push_back(d);
    } catch (const UsageError& e) {
      throw DataError(fmt::format("decision log row {}: {}", row, e.what()));
    } catch (const std::exception&) {
      throw DataError(fmt::format("decision log row {}: malformed number", row));
    }
  }
  return out;
}

namespace {

std::string cell(const std::optional<double>& x) { return x ? fmt::format("{:.6f}", *x) : std::string(); }

}  // namespace

void write_economic_csv(std::ostream& out, std::span<const EconomicRow> rows) {
  out << "market,threshold,total_loss,prevented_loss,ratio,type1,type2,legit_monitored\n";
  for (const EconomicRow& r : rows) {
    out << fmt::format("{},{},{:.2f},{:.2f},{},{},{},{}\n", r.market, cell(r.threshold), r.total_loss,
                       r.prevented_loss, cell(r.ratio), cell(r.type1), cell(r.type2),
                       cell(r.legit_monitored));
  }
}

std::string format_economic_table(std::span<const EconomicRow> rows) {
  auto show = [](const std::optional<double>& x) { return x ? fmt::format("{:.4f}", *x) : std::string("-"); };
  std::string out = fmt::format("{:<16} {:>9} {:>16} {:>16} {:>8} {:>8} {:>8} {:>9}\n", "Market",
                                "Threshold", "Total Loss", "Prevented Loss", "Ratio", "Type I",
                                "Type II", "Monitored");
  for (const EconomicRow& r : rows) {
    out += fmt::format("{:<16} {:>9} {:>16.2f} {:>16.2f} {:>8} {:>8} {:>8} {:>9}\n", r.market,
                       show(r.threshold), r.total_loss, r.prevented_loss, show(r.ratio), show(r.type1),
                       show(r.type2), show(r.legit_monitored));
  }
  return out;
}

}  // namespace fedaml
