#include "fedaml/ppr.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <queue>
#include <random>
#include <sstream>

#include <fmt/format.h>

#include "fedaml/error.hpp"

namespace fedaml {

void PprConfig::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw UsageError("alpha_ppr must lie in (0, 1)");
  if (!(tol > 0.0)) throw UsageError("ppr tol must be positive");
  if (max_iters == 0) throw UsageError("ppr max_iters must be positive");
  if (!(score_threshold > 0.0 && score_threshold <= 1.0)) {
    throw UsageError("ppr score_threshold must lie in (0, 1]");
  }
}

PprResult ppr_solve(const CsrMatrix& transition, std::span<const double> v,
                    const PprConfig& config) {
  config.validate();
  const std::size_t n = transition.rows;
  if (transition.cols != n) throw UsageError("ppr_solve: transition matrix is not square");
  if (v.size() != n) {
    throw UsageError("ppr_solve: personalization has " + std::to_string(v.size()) +
                     " entries for " + std::to_string(n) + " nodes");
  }
  double mass = 0.0;
  for (double x : v) {
    if (!(x >= 0.0)) throw UsageError("ppr_solve: personalization must be non-negative");
    mass += x;
  }
  if (std::abs(mass - 1.0) > 1e-9) throw UsageError("ppr_solve: personalization must sum to 1");

  std::vector<std::uint8_t> dangling(n, 0);
  const std::vector<double> out_mass = transition.row_sums();
  for (std::size_t i = 0; i < n; ++i) dangling[i] = out_mass[i] > 0.0 ? 0 : 1;
  const CsrMatrix pt = transition.transpose();
  const double a = config.alpha;

  PprResult result;
  std::vector<double> r(v.begin(), v.end());
  for (std::size_t it = 1; it <= config.max_iters; ++it) {
    std::vector<double> next = pt.multiply(r);
    double sink = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (dangling[i]) sink += r[i];
    double residual = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      next[i] = (1.0 - a) * (next[i] + sink * v[i]) + a * v[i];
      residual += std::abs(next[i] - r[i]);
    }
    r = std::move(next);
    result.iterations = it;
    result.residual = residual;
    if (residual < config.tol) {
      result.scores = std::move(r);
      const double top =
          result.scores.empty() ? 0.0 : *std::max_element(result.scores.begin(), result.scores.end());
      result.normalized.resize(n, 0.0);
      if (top > 0.0)
        for (std::size_t i = 0; i < n; ++i) result.normalized[i] = result.scores[i] / top;
      return result;
    }
  }
  throw NumericalError(fmt::format("ppr_solve: no convergence after {} iterations (residual {:.3e})",
                                   config.max_iters, result.residual));
}

std::vector<double> Personalization::combined() const {
  std::vector<double> v(local.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = local[i] + cross[i];
  return v;
}

Personalization build_personalization(std::size_t node_count,
                                      std::span<const std::size_t> seeds,
                                      std::span<const double> seed_scores,
                                      std::span<const std::pair<std::size_t, double>> cross) {
  if (seeds.size() != seed_scores.size()) {
    throw UsageError("build_personalization: seed and score counts differ");
  }
  Personalization p;
  p.local.assign(node_count, 0.0);
  p.cross.assign(node_count, 0.0);
  double total = 0.0;
  for (std::size_t k = 0; k < seeds.size(); ++k) {
    if (seeds[k] >= node_count) throw UsageError("build_personalization: seed out of range");
    if (!(seed_scores[k] >= 0.0)) throw UsageError("build_personalization: negative seed score");
    p.local[seeds[k]] += seed_scores[k];
    total += seed_scores[k];
  }
  for (const auto& [node, w] : cross) {
    if (node >= node_count) throw UsageError("build_personalization: cross node out of range");
    if (!(w >= 0.0)) throw UsageError("build_personalization: negative cross weight");
    p.cross[node] += w;
    total += w;
  }
  if (!(total > 0.0)) throw UsageError("build_personalization: all seed scores are zero");
  for (double& x : p.local) x /= total;
  for (double& x : p.cross) x /= total;
  return p;
}

CsrMatrix row_stochastic(const CsrMatrix& weights) {
  CsrMatrix p = weights;
  for (std::size_t r = 0; r < p.rows; ++r) {
    double s = 0.0;
    for (std::size_t k = p.row_ptr[r]; k < p.row_ptr[r + 1]; ++k) s += p.values[k];
    if (s > 0.0)
      for (std::size_t k = p.row_ptr[r]; k < p.row_ptr[r + 1]; ++k) p.values[k] /= s;
  }
  return p;
}

CsrMatrix cross_bank_transition(const TransactionGraph& graph,
                                std::span<const double> edge_predictions, bool symmetrize) {
  if (edge_predictions.size() != graph.edge_count()) {
    throw UsageError("cross_bank_transition: " + std::to_string(edge_predictions.size()) +
                     " predictions for " + std::to_string(graph.edge_count()) + " edges");
  }
  std::vector<double> w(graph.edge_count());
  for (std::size_t e = 0; e < w.size(); ++e) {
    const double y = edge_predictions[e];
    if (!(y >= 0.0 && y <= 1.0)) throw UsageError("cross_bank_transition: prediction outside [0, 1]");
    w[e] = 1.0 + y;
  }
  return row_stochastic(account_adjacency(graph, std::span<const double>(w), symmetrize));
}

CsrMatrix transition_matrix(const TransactionGraph& graph, bool symmetrize) {
  const std::vector<double> zero(graph.edge_count(), 0.0);
  return cross_bank_transition(graph, zero, symmetrize);
}

std::vector<std::size_t> extract_cluster(const PprResult& result, double threshold) {
  std::vector<std::size_t> out;
  if (result.normalized.empty()) return out;
  const auto top = static_cast<std::size_t>(
      std::max_element(result.normalized.begin(), result.normalized.end()) -
      result.normalized.begin());
  for (std::size_t i = 0; i < result.normalized.size(); ++i)
    if (i == top || result.normalized[i] >= threshold) out.push_back(i);
  return out;
}

std::size_t ClusterSet::account_count() const {
  std::size_t n = 0;
  for (const auto& c : clusters) n += c.accounts.size();
  return n;
}

namespace {

bool overlaps(const std::set<std::string>& a, const std::set<std::string>& b) {
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i == *j) return true;
    if (*i < *j) {
      ++i;
    } else {
      ++j;
    }
  }
  return false;
}

}  // namespace

ClusterSet merge_clusters(const std::map<std::string, ClusterDictionary>& dictionaries) {
  std::vector<std::pair<std::size_t, std::string>> order;
  for (const auto& [name, dict] : dictionaries) {
    std::set<std::string> covered;
    for (const auto& c : dict) covered.insert(c.accounts.begin(), c.accounts.end());
    order.emplace_back(covered.size(), name);
  }
  std::stable_sort(order.begin(), order.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });

  std::vector<Cluster> working;
  auto fold = [&](const Cluster& c) {
    std::size_t target = working.size();
    for (std::size_t i = 0; i < working.size();) {
      if (!overlaps(working[i].accounts, c.accounts)) {
        ++i;
        continue;
      }
      if (target == working.size()) {
        target = i;
        working[i].accounts.insert(c.accounts.begin(), c.accounts.end());
        ++i;
      } else {
        working[target].accounts.insert(working[i].accounts.begin(), working[i].accounts.end());
        working.erase(working.begin() + static_cast<long>(i));
      }
    }
    if (target == working.size()) working.push_back(c);
  };
  for (const auto& [size, name] : order)
    for (const auto& c : dictionaries.at(name)) fold(c);

  // Folding keeps the working set pairwise disjoint; this pass only guards
  // the fixed point.
  for (bool changed = true; changed;) {
    changed = false;
    for (std::size_t i = 0; i < working.size() && !changed; ++i) {
      for (std::size_t j = i + 1; j < working.size(); ++j) {
        if (overlaps(working[i].accounts, working[j].accounts)) {
          working[i].accounts.insert(working[j].accounts.begin(), working[j].accounts.end());
          working.erase(working.begin() + static_cast<long>(j));
          changed = true;
          break;
        }
      }
    }
  }

  ClusterSet out;
  for (std::size_t i = 0; i < working.size(); ++i) {
    Cluster c = std::move(working[i]);
    c.id = i;
    c.countries.clear();
    for (const auto& a : c.accounts) c.countries.insert(account_country(a));
    if (c.seed.empty() && !c.accounts.empty()) c.seed = *c.accounts.begin();
    out.clusters.push_back(std::move(c));
  }
  return out;
}

void count_hits(ClusterSet& clusters, const std::set<std::string>& malicious) {
  for (auto& c : clusters.clusters) {
    c.hits = 0;
    for (const auto& a : c.accounts) c.hits += malicious.count(a);
  }
}

SweepResult sweep_cut(std::span<const double> scores, const CsrMatrix& adjacency,
                      std::size_t max_size) {
  const std::size_t n = adjacency.rows;
  if (scores.size() != n) throw UsageError("sweep_cut: score length does not match node count");
  const std::vector<double> deg = adjacency.row_sums();
  SweepResult out;
  std::vector<std::size_t> order;
  for (std::size_t v = 0; v < n; ++v) {
    if (!(scores[v] >= 0.0)) throw UsageError("sweep_cut: scores must be non-negative");
    if (deg[v] > 0.0) {
      order.push_back(v);
    } else {
      out.skipped.push_back(v);
    }
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] / deg[a] > scores[b] / deg[b];
  });
  if (order.size() < 2) {
    out.set = order;
    return out;
  }
  const double total = std::accumulate(deg.begin(), deg.end(), 0.0);
  std::size_t limit = order.size() - 1;
  if (max_size > 0) limit = std::min(limit, max_size);

  std::vector<std::uint8_t> in(n, 0);
  double vol = 0.0, cut = 0.0, best = std::numeric_limits<double>::infinity();
  std::size_t best_len = 1;
  for (std::size_t k = 0; k < limit; ++k) {
    const std::size_t v = order[k];
    double self = 0.0, to_set = 0.0;
    for (std::size_t p = adjacency.row_ptr[v]; p < adjacency.row_ptr[v + 1]; ++p) {
      const std::size_t u = adjacency.col_idx[p];
      if (u == v) {
        self += adjacency.values[p];
      } else if (in[u]) {
        to_set += adjacency.values[p];
      }
    }
    in[v] = 1;
    vol += deg[v];
    cut += deg[v] - self - 2.0 * to_set;
    const double denom = std::min(vol, total - vol);
    const double phi = denom > 0.0 ? cut / denom : 1.0;
    if (phi < best) {
      best = phi;
      best_len = k + 1;
    }
  }
  out.set.assign(order.begin(), order.begin() + static_cast<long>(best_len));
  out.conductance = best;
  return out;
}

double conductance(const CsrMatrix& adjacency, std::span<const std::size_t> set) {
  std::vector<std::uint8_t> in(adjacency.rows, 0);
  for (std::size_t v : set) in[v] = 1;
  double vol = 0.0, total = 0.0, cut = 0.0;
  for (std::size_t r = 0; r < adjacency.rows; ++r) {
    for (std::size_t p = adjacency.row_ptr[r]; p < adjacency.row_ptr[r + 1]; ++p) {
      const double w = adjacency.values[p];
      total += w;
      if (in[r]) {
        vol += w;
        if (!in[adjacency.col_idx[p]]) cut += w;
      }
    }
  }
  const double denom = std::min(vol, total - vol);
  return denom > 0.0 ? cut / denom : 1.0;
}

double signal_ratio(std::size_t n, std::size_t s, double p_in, double p_out) {
  const double nd = static_cast<double>(n);
  return static_cast<double>(s) * (p_in - p_out) / std::sqrt(nd * p_in * std::log(nd));
}

std::optional<double> p_in_for_ratio(std::size_t n, std::size_t s, double p_out, double kappa) {
  const double nd = static_cast<double>(n);
  const double sd = static_cast<double>(s);
  const double b = kappa * std::sqrt(nd * std::log(nd));
  const double x = (b + std::sqrt(b * b + 4.0 * sd * sd * p_out)) / (2.0 * sd);
  const double p = x * x;
  if (p > 1.0 + 1e-12) return std::nullopt;
  return std::min(p, 1.0);
}

double DetectabilityReport::fraction_at_least(double r) const {
  if (trials.empty()) return 0.0;
  const auto k = std::count_if(trials.begin(), trials.end(),
                               [&](const TrialOutcome& t) { return t.recovery >= r; });
  return static_cast<double>(k) / static_cast<double>(trials.size());
}

double DetectabilityReport::fraction_at_most(double r) const {
  if (trials.empty()) return 0.0;
  const auto k = std::count_if(trials.begin(), trials.end(),
                               [&](const TrialOutcome& t) { return t.recovery <= r; });
  return static_cast<double>(k) / static_cast<double>(trials.size());
}

namespace {

bool connected(const CsrMatrix& a) {
  if (a.rows == 0) return true;
  std::vector<std::uint8_t> seen(a.rows, 0);
  std::queue<std::size_t> q;
  q.push(0);
  seen[0] = 1;
  std::size_t count = 1;
  while (!q.empty()) {
    const std::size_t v = q.front();
    q.pop();
    for (std::size_t p = a.row_ptr[v]; p < a.row_ptr[v + 1]; ++p) {
      const std::size_t u = a.col_idx[p];
      if (!seen[u]) {
        seen[u] = 1;
        ++count;
        q.push(u);
      }
    }
  }
  return count == a.rows;
}

}  // namespace

DetectabilityReport detectability_trial(const SbmSpec& spec, const DetectabilityConfig& config) {
  validate(spec);
  PprConfig ppr;
  ppr.alpha = config.alpha;
  ppr.validate();
  DetectabilityReport report;
  const std::size_t cap = config.max_size > 0 ? config.max_size : spec.s;
  for (std::size_t t = 0; t < config.trials; ++t) {
    TrialOutcome out;
    out.trial = t;
    SbmGraph g;
    for (std::size_t attempt = 0;; ++attempt) {
      SbmSpec draw = spec;
      draw.seed = spec.seed * 1'000'003ULL + t * 1'009ULL + attempt;
      g = sbm_generate(draw);
      out.graph_seed = draw.seed;
      if (connected(g.adjacency)) break;
      if (attempt + 1 >= config.max_resamples) {
        throw DataError(fmt::format("detectability trial {}: no connected sample after {} draws", t,
                                    config.max_resamples));
      }
      ++out.resamples;
    }
    report.resampled += out.resamples;

    std::mt19937_64 rng(out.graph_seed ^ 0x9e3779b97f4a7c15ULL);
    out.seed_node = g.planted[std::uniform_int_distribution<std::size_t>(0, spec.s - 1)(rng)];
    std::vector<double> v(spec.n, 0.0);
    v[out.seed_node] = 1.0;
    const PprResult r = ppr_solve(row_stochastic(g.adjacency), v, ppr);
    const SweepResult sweep = sweep_cut(r.scores, g.adjacency, cap);

    std::size_t hit = 0;
    for (std::size_t u : sweep.set) hit += g.in_planted[u];
    out.found = sweep.set.size();
    out.conductance = sweep.conductance;
    out.recovery = static_cast<double>(hit) / static_cast<double>(spec.s);
    double in_sum = 0.0, out_sum = 0.0;
    for (std::size_t u = 0; u < spec.n; ++u) (g.in_planted[u] ? in_sum : out_sum) += r.scores[u];
    out.mean_in = in_sum / static_cast<double>(spec.s);
    out.mean_out = out_sum / static_cast<double>(spec.n - spec.s);
    report.trials.push_back(out);
  }
  double rec = 0.0, sep = 0.0;
  for (const auto& t : report.trials) {
    rec += t.recovery;
    sep += t.separated() ? 1.0 : 0.0;
  }
  if (!report.trials.empty()) {
    report.mean_recovery = rec / static_cast<double>(report.trials.size());
    report.separation_rate = sep / static_cast<double>(report.trials.size());
  }
  return report;
}

void write_detectability_csv(std::ostream& out, const DetectabilityReport& report) {
  out << "trial,graph_seed,seed_node,recovery,mean_in,mean_out,separated,conductance,found,resamples\n";
  for (const auto& t : report.trials) {
    out << fmt::format("{},{},{},{:.6f},{:.8g},{:.8g},{},{:.6f},{},{}\n", t.trial, t.graph_seed,
                       t.seed_node, t.recovery, t.mean_in, t.mean_out, t.separated() ? 1 : 0,
                       t.conductance, t.found, t.resamples);
  }
}

Calibration calibrate_detectability(std::size_t n, std::size_t s, double p_out, std::uint64_t seed,
                                    const DetectabilityConfig& config, double step) {
  if (!(step > 0.0)) throw UsageError("calibration step must be positive");
  Calibration cal;
  cal.target = 2.0 * static_cast<double>(s) / static_cast<double>(n);
  for (std::size_t i = 0;; ++i) {
    const double kappa = step * static_cast<double>(i);
    const auto p_in = p_in_for_ratio(n, s, p_out, kappa);
    if (!p_in) break;
    const DetectabilityReport r = detectability_trial({n, s, *p_in, p_out, seed}, config);
    cal.curve.push_back({kappa, *p_in, r.mean_recovery});
    if (r.mean_recovery >= cal.target) {
      cal.constant = kappa;
      break;
    }
  }
  return cal;
}

namespace {

std::string join(const std::set<std::string>& items) {
  std::string out;
  for (const auto& s : items) {
    if (s.find_first_of(",\t\n") != std::string::npos) {
      throw DataError("cluster member '" + s + "' contains a separator character");
    }
    if (!out.empty()) out += ',';
    out += s;
  }
  return out;
}

std::set<std::string> split_list(const std::string& s) {
  std::set<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.insert(item);
  return out;
}

}  // namespace

void write_clusters(std::ostream& out, const ClusterSet& clusters) {
  for (const auto& c : clusters.clusters) {
    out << c.id << '\t' << c.seed << '\t' << join(c.accounts) << '\t' << join(c.countries) << '\t'
        << c.hits << '\n';
  }
}

ClusterSet read_clusters(std::istream& in) {
  ClusterSet out;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) f.push_back(field);
    if (line.back() == '\t') f.emplace_back();
    if (f.size() != 5) throw DataError("cluster file line " + std::to_string(row) + ": expected 5 fields");
    Cluster c;
    try {
      c.id = std::stoull(f[0]);
      c.hits = std::stoull(f[4]);
    } catch (const std::exception&) {
      throw DataError("cluster file line " + std::to_string(row) + ": bad number");
    }
    c.seed = f[1];
    c.accounts = split_list(f[2]);
    c.countries = split_list(f[3]);
    out.clusters.push_back(std::move(c));
  }
  return out;
}

std::map<std::string, ClusterDictionary> partition_clusters(const GraphCollection& collection,
                                                           const PartitionScores& scores,
                                                           const ClusterRunConfig& config) {
  config.ppr.validate();
  // record -> every (partition, edge) copy
  std::vector<std::vector<std::pair<std::string, std::size_t>>> copies(collection.records.size());
  for (const auto& [name, g] : collection.graphs)
    for (std::size_t e = 0; e < g.edge_count(); ++e) copies[g.edge_record[e]].emplace_back(name, e);

  auto score_of = [&](const std::string& part, std::size_t e) {
    const auto it = scores.find(part);
    if (it == scores.end()) throw DataError("no scores for partition " + part);
    return it->second.at(e);
  };

  std::map<std::string, ClusterDictionary> out;
  for (const auto& [name, g] : collection.graphs) {
    const auto it = scores.find(name);
    if (it == scores.end()) throw DataError("no scores for partition " + name);
    const std::vector<double>& y = it->second;
    if (y.size() != g.edge_count()) {
      throw DataError("partition " + name + ": score count does not match edge count");
    }
    std::vector<double> seed_score(g.node_count(), 0.0);
    for (std::size_t e = 0; e < g.edge_count(); ++e) {
      if (y[e] < config.seed_threshold) continue;
      seed_score[g.edges[e].src] = std::max(seed_score[g.edges[e].src], y[e]);
      seed_score[g.edges[e].dst] = std::max(seed_score[g.edges[e].dst], y[e]);
    }
    std::vector<std::size_t> seeds;
    std::vector<double> seed_values;
    for (std::size_t v = 0; v < g.node_count(); ++v) {
      if (seed_score[v] > 0.0) {
        seeds.push_back(v);
        seed_values.push_back(seed_score[v]);
      }
    }
    std::vector<std::pair<std::size_t, double>> cross;
    if (config.cross_bank) {
      for (std::size_t e = 0; e < g.edge_count(); ++e) {
        if (!g.edge_cross_border[e]) continue;
        for (const auto& [part, fe] : copies[g.edge_record[e]]) {
          if (part == name) continue;
          const double f = score_of(part, fe);
          if (f < config.seed_threshold) continue;
          cross.emplace_back(g.edges[e].src, f);
          cross.emplace_back(g.edges[e].dst, f);
        }
      }
    }
    auto& dict = out[name];
    if (seeds.empty() && cross.empty()) continue;

    const Personalization p = build_personalization(g.node_count(), seeds, seed_values, cross);
    const CsrMatrix transition = config.cross_bank
                                     ? cross_bank_transition(g, y, !config.directed)
                                     : transition_matrix(g, !config.directed);
    const PprResult r = ppr_solve(transition, p.combined(), config.ppr);
    const std::vector<std::size_t> members = extract_cluster(r, config.ppr.score_threshold);

    // Connected components of the extracted set.
    const CsrMatrix adj = binary_adjacency(g, false);
    std::vector<std::uint8_t> in(g.node_count(), 0);
    for (std::size_t v : members) in[v] = 1;
    std::vector<std::uint8_t> seen(g.node_count(), 0);
    for (std::size_t start : members) {
      if (seen[start]) continue;
      Cluster c;
      std::size_t best = start;
      std::queue<std::size_t> q;
      q.push(start);
      seen[start] = 1;
      while (!q.empty()) {
        const std::size_t v = q.front();
        q.pop();
        c.accounts.insert(g.accounts[v]);
        if (r.scores[v] > r.scores[best]) best = v;
        for (std::size_t k = adj.row_ptr[v]; k < adj.row_ptr[v + 1]; ++k) {
          const std::size_t u = adj.col_idx[k];
          if (in[u] && !seen[u]) {
            seen[u] = 1;
            q.push(u);
          }
        }
      }
      c.seed = g.accounts[best];
      c.id = dict.size();
      for (const auto& a : c.accounts) c.countries.insert(account_country(a));
      dict.push_back(std::move(c));
    }
  }
  return out;
}

ClusterQuality cluster_quality(const ClusterSet& clusters) {
  ClusterQuality q;
  q.clusters = clusters.clusters.size();
  for (const auto& c : clusters.clusters) {
    q.accounts += c.accounts.size();
    q.hits += c.hits;
    if (c.hits == 0) ++q.zero_hit_clusters;
  }
  return q;
}

}  // namespace fedaml
