#include "fedaml/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "fedaml/error.hpp"
#include "fedaml/params.hpp"
#include "fedaml/records.hpp"

namespace fedaml {

namespace fs = std::filesystem;

void write_scores(std::ostream& out, const std::vector<ScoreRow>& rows) {
  out << "edge_id,score,label\n";
  for (const auto& r : rows) out << fmt::format("{},{:.17g},{}\n", r.edge_id, r.score, r.label);
}

std::vector<ScoreRow> read_scores(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("scores file is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "edge_id,score,label") throw DataError("scores file has an unexpected header: " + line);
  std::vector<ScoreRow> rows;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 3) throw DataError(fmt::format("scores row {}: expected 3 fields", row));
    ScoreRow r;
    try {
      r.edge_id = std::stoull(f[0]);
      r.score = std::stod(f[1]);
      r.label = std::stoi(f[2]);
    } catch (const std::exception&) {
      throw DataError(fmt::format("scores row {}: malformed number", row));
    }
    if (!(r.score >= 0.0 && r.score <= 1.0)) {
      throw DataError(fmt::format("scores row {}: score {} outside [0, 1]", row, r.score));
    }
    rows.push_back(r);
  }
  return rows;
}

void save_scores(const fs::path& path, const std::vector<ScoreRow>& rows) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  write_scores(out, rows);
}

std::vector<ScoreRow> load_scores(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open scores file: " + path.string());
  return read_scores(in);
}

std::vector<ScoreRow> record_scores(const GraphCollection& collection, const PartitionScores& scores) {
  std::vector<ScoreRow> rows(collection.records.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto [part, e] = collection.home_edge(r);
    const auto it = scores.find(part);
    if (it == scores.end()) throw DataError("no scores for partition " + part);
    rows[r] = {r, it->second.at(e), collection.records[r].is_laundering};
  }
  return rows;
}

PartitionScores partition_scores(const GraphCollection& collection, const std::vector<ScoreRow>& rows) {
  std::vector<double> by_record(collection.records.size(), -1.0);
  for (const auto& r : rows) {
    if (r.edge_id >= by_record.size()) {
      throw DataError(fmt::format("scores file names edge {} but there are {} transactions", r.edge_id,
                                  by_record.size()));
    }
    by_record[r.edge_id] = r.score;
  }
  PartitionScores out;
  for (const auto& [name, g] : collection.graphs) {
    auto& v = out[name];
    v.resize(g.edge_count());
    for (std::size_t e = 0; e < g.edge_count(); ++e) {
      const double s = by_record[g.edge_record[e]];
      if (s < 0.0) throw DataError(fmt::format("scores file has no row for edge {}", g.edge_record[e]));
      v[e] = s;
    }
  }
  return out;
}

void write_ground_truth(std::ostream& out, const std::vector<InjectedGroup>& groups,
                        bool known_patterns) {
  out << "group_id,pattern,account\n";
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const std::string pattern = known_patterns ? to_string(groups[g].pattern) : "unknown";
    for (const auto& a : groups[g].accounts) out << g << ',' << pattern << ',' << a << '\n';
  }
}

void require_artifact(const fs::path& path, const std::string& stage) {
  if (!fs::exists(path)) {
    throw DataError(fmt::format("{}: missing input artifact {} (run the earlier stage first)", stage,
                                path.string()));
  }
}

namespace {

void ensure_dir(const RunPaths& paths) {
  std::error_code ec;
  fs::create_directories(paths.dir, ec);
  if (ec) throw DataError("cannot create output directory " + paths.dir.string() + ": " + ec.message());
}

template <typename F>
void write_file(const fs::path& path, F&& body) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  body(out);
  if (!out) throw DataError("write failed: " + path.string());
}

fs::path client_checkpoint(const RunPaths& paths, const std::string& partition) {
  return paths.dir / ("model." + partition + ".ckpt");
}

std::set<std::string> labelled_accounts(const std::vector<TransactionRecord>& records) {
  const auto v = malicious_accounts(records);
  return {v.begin(), v.end()};
}

}  // namespace

void stage_generate(const RunConfig& config, const RunPaths& paths) {
  ensure_dir(paths);
  std::vector<InjectedGroup> groups;
  std::vector<TransactionRecord> records;
  if (config.data.input) {
    records = ingest_csv(*config.data.input);
    InjectedGroup all;
    for (const auto& a : malicious_accounts(records)) all.accounts.push_back(a);
    if (!all.accounts.empty()) groups.push_back(std::move(all));
  } else {
    GeneratedDataset d = generate_dataset(config.data.generator);
    records = std::move(d.records);
    groups = std::move(d.groups);
  }
  write_csv(paths.transactions(), records);
  write_file(paths.ground_truth(),
             [&](std::ostream& out) { write_ground_truth(out, groups, !config.data.input); });
  write_file(paths.resolved_config(), [&](std::ostream& out) { out << to_json(config).dump(2) << '\n'; });
  spdlog::info("generate: {} transactions, {} groups -> {}", records.size(), groups.size(),
               paths.transactions().string());
}

void stage_generate_pattern(PatternKind kind, int size, std::uint64_t seed, const RunPaths& paths) {
  ensure_dir(paths);
  std::vector<TransactionRecord> records;
  SyntheticPatternSpec spec;
  spec.pattern = kind;
  spec.group_size = size;
  spec.countries = {"US"};
  spec.start_time = 1'661'990'400;
  std::mt19937_64 rng(seed);
  InjectedGroup g = inject_pattern_records(records, spec, rng);
  write_csv(paths.transactions(), records);
  write_file(paths.ground_truth(), [&](std::ostream& out) { write_ground_truth(out, {g}); });
  spdlog::info("generate: {} pattern of {} accounts, {} transactions", to_string(kind), size,
               records.size());
}

void stage_generate_sbm(const SbmSpec& spec, const RunPaths& paths) {
  ensure_dir(paths);
  const SbmGraph g = sbm_generate(spec);
  std::vector<TransactionRecord> records;
  for (std::size_t i = 0; i < g.adjacency.rows; ++i) {
    for (std::size_t k = g.adjacency.row_ptr[i]; k < g.adjacency.row_ptr[i + 1]; ++k) {
      const std::size_t j = g.adjacency.col_idx[k];
      if (j <= i) continue;
      TransactionRecord r;
      r.timestamp = static_cast<std::int64_t>(records.size());
      r.from_bank = "SB";
      r.from_account = fmt::format("n{}", i);
      r.to_bank = "SB";
      r.to_account = fmt::format("n{}", j);
      r.amount = 100.0;
      r.payment_type = "ACH";
      r.is_laundering = g.in_planted[i] && g.in_planted[j] ? 1 : 0;
      records.push_back(std::move(r));
    }
  }
  write_csv(paths.transactions(), records);
  InjectedGroup planted;
  for (std::size_t v : g.planted) planted.accounts.push_back(account_key("SB", fmt::format("n{}", v)));
  write_file(paths.ground_truth(), [&](std::ostream& out) {
    out << "group_id,pattern,account\n";
    for (const auto& a : planted.accounts) out << "0,planted," << a << '\n';
  });
  spdlog::info("generate: SBM n={} s={} with {} edges", spec.n, spec.s, records.size());
}

GraphCollection load_collection(const RunConfig& config, const RunPaths& paths) {
  require_artifact(paths.transactions(), "load");
  return build_collection(ingest_csv(paths.transactions()), feature_options(config));
}

void stage_train(const RunConfig& config, const RunPaths& paths) {
  const GraphCollection collection = load_collection(config, paths);
  const auto split = split_records(collection.records, config.split);
  const PartitionMask train = edge_masks(collection, split, 1);
  const PartitionMask eval = edge_masks(collection, split, 0);
  const FederationResult result = run_federation(collection, config.federation, &train, &eval);
  if (result.global) {
    save_checkpoint(paths.checkpoint(), *result.global);
  } else {
    for (const auto& c : result.clients) save_checkpoint(client_checkpoint(paths, c.partition), c.params);
  }
  write_file(paths.train_metrics(), [&](std::ostream& out) { write_metrics_csv(out, result.metrics); });
  spdlog::info("train: {} clients, {} epochs, {} aggregations", result.clients.size(),
               config.federation.rounds, result.aggregations);
}

void stage_detect(const RunConfig& config, const RunPaths& paths) {
  const GraphCollection collection = load_collection(config, paths);
  PartitionScores scores;
  if (config.federation.aggregate) {
    require_artifact(paths.checkpoint(), "detect");
    const ModelParams params = load_checkpoint(paths.checkpoint());
    for (const auto& [name, g] : collection.graphs)
      scores[name] = predict_edges(g, params, config.federation.encoder);
  } else {
    for (const auto& [name, g] : collection.graphs) {
      const fs::path p = client_checkpoint(paths, name);
      require_artifact(p, "detect");
      scores[name] = predict_edges(g, load_checkpoint(p), config.federation.encoder);
    }
  }
  save_scores(paths.scores(), record_scores(collection, scores));
  spdlog::info("detect: scored {} transactions", collection.records.size());
}

void stage_ppr(const RunConfig& config, const RunPaths& paths) {
  const GraphCollection collection = load_collection(config, paths);
  require_artifact(paths.scores(), "ppr");
  const PartitionScores scores = partition_scores(collection, load_scores(paths.scores()));
  ClusterSet clusters = merge_clusters(partition_clusters(collection, scores, config.ppr));
  count_hits(clusters, labelled_accounts(collection.records));
  write_file(paths.clusters(), [&](std::ostream& out) { write_clusters(out, clusters); });
  spdlog::info("ppr: {} clusters covering {} accounts", clusters.clusters.size(),
               clusters.account_count());
}

void stage_propagate(const RunConfig& config, const RunPaths& paths) {
  const GraphCollection collection = load_collection(config, paths);
  require_artifact(paths.scores(), "propagate");
  require_artifact(paths.clusters(), "propagate");
  const PartitionScores scores = partition_scores(collection, load_scores(paths.scores()));
  std::ifstream in(paths.clusters());
  const ClusterSet clusters = read_clusters(in);
  const PartitionScores refined = refine_collection(collection, scores, &clusters, config.propagation);
  save_scores(paths.refined_scores(), record_scores(collection, refined));
  spdlog::info("propagate: refined {} transactions", collection.records.size());
}

DecisionOutcome decide_markets(const GraphCollection& collection, const std::vector<ScoreRow>& scores,
                               std::span<const std::uint8_t> record_split, const DecideConfig& config) {
  const auto& records = collection.records;
  if (scores.size() != records.size() || record_split.size() != records.size()) {
    throw DataError(fmt::format("decide: {} scores and {} split flags for {} transactions", scores.size(),
                                record_split.size(), records.size()));
  }
  std::map<std::string, std::vector<std::size_t>> train_ids, eval_ids;
  for (std::size_t r = 0; r < records.size(); ++r) {
    if (scores[r].edge_id != r) throw DataError(fmt::format("decide: scores row {} is out of order", r));
    const std::string market = collection.partition_of(records[r].from_bank);
    (record_split[r] ? train_ids : eval_ids)[market].push_back(r);
  }
  std::set<std::string> markets;
  for (const auto& [m, v] : train_ids) markets.insert(m);
  for (const auto& [m, v] : eval_ids) markets.insert(m);

  DecisionOutcome out;
  const double band = config.train.monitor_band;
  if (config.fixed_threshold) {
    for (const auto& m : markets) out.thresholds[m] = *config.fixed_threshold;
  } else if (!config.budget_fraction) {
    InstitutionEpisodes episodes;
    std::map<std::string, std::size_t> volumes;
    for (const auto& m : markets) {
      auto ids = train_ids[m];
      std::stable_sort(ids.begin(), ids.end(), [&](std::size_t a, std::size_t b) {
        return records[a].timestamp < records[b].timestamp;
      });
      auto& list = episodes[m];
      const std::size_t k = config.episodes;
      for (std::size_t e = 0; e < k; ++e) {
        Episode ep;
        const std::size_t lo = ids.size() * e / k;
        const std::size_t hi = ids.size() * (e + 1) / k;
        for (std::size_t i = lo; i < hi; ++i) {
          ep.scores.push_back(scores[ids[i]].score);
          ep.labels.push_back(records[ids[i]].is_laundering);
          ep.amounts.push_back(records[ids[i]].amount);
        }
        list.push_back(std::move(ep));
      }
      volumes[m] = std::max<std::size_t>(1, ids.size());
    }
    Coordinator coord;
    if (config.volume_weights) coord.weights = volume_weights(volumes);
    coord.eta_g = config.eta_g;
    coord.xi = config.xi;
    coord.lambda_c = config.lambda_c;
    ThresholdPolicy policy =
        train_policy(episodes, config.reward, threshold_grid(config.grid_points, config.grid_lo, config.grid_hi),
                     config.train, coord);
    for (std::size_t round = 0; round < config.coordination_rounds; ++round) {
      const CoordinationReport rep = coordinate(policy);
      spdlog::info("decide: coordination round {} tau_bar {:.4f} penalty {:.4g}", round + 1, rep.tau_bar,
                   rep.penalty);
    }
    out.thresholds = policy.tau;
  }

  std::vector<Action> all_actions;
  std::vector<int> all_labels;
  std::vector<double> all_amounts;
  double weighted_tau = 0.0;
  std::size_t eval_total = 0;
  for (const auto& m : markets) {
    const auto& ids = eval_ids[m];
    std::vector<Action> actions(ids.size(), Action::kNoIntervention);
    if (config.budget_fraction) {
      std::vector<double> s, a;
      for (std::size_t r : ids) {
        s.push_back(scores[r].score);
        a.push_back(records[r].amount);
      }
      for (std::size_t i : budget_select(s, a, *config.budget_fraction)) actions[i] = Action::kFreeze;
    } else {
      const double tau = out.thresholds.at(m);
      for (std::size_t i = 0; i < ids.size(); ++i) actions[i] = decide(scores[ids[i]].score, tau, band);
      weighted_tau += tau * static_cast<double>(ids.size());
    }
    std::vector<int> labels;
    std::vector<double> amounts;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const std::size_t r = ids[i];
      labels.push_back(records[r].is_laundering);
      amounts.push_back(records[r].amount);
      out.decisions.push_back({r, scores[r].score, actions[i], records[r].amount, records[r].is_laundering});
    }
    EconomicRow row = economic_eval(actions, labels, amounts);
    row.market = m;
    if (out.thresholds.count(m)) row.threshold = out.thresholds.at(m);
    out.rows.push_back(row);
    all_actions.insert(all_actions.end(), actions.begin(), actions.end());
    all_labels.insert(all_labels.end(), labels.begin(), labels.end());
    all_amounts.insert(all_amounts.end(), amounts.begin(), amounts.end());
    eval_total += ids.size();
  }
  EconomicRow overall = economic_eval(all_actions, all_labels, all_amounts);
  overall.market = "Overall";
  if (config.fixed_threshold) {
    overall.threshold = *config.fixed_threshold;
  } else if (!config.budget_fraction && eval_total > 0) {
    overall.threshold = weighted_tau / static_cast<double>(eval_total);
  }
  out.rows.push_back(overall);
  std::sort(out.decisions.begin(), out.decisions.end(),
            [](const Decision& a, const Decision& b) { return a.edge_id < b.edge_id; });
  return out;
}

void stage_decide(const RunConfig& config, const RunPaths& paths) {
  const GraphCollection collection = load_collection(config, paths);
  const fs::path source = config.decide.use_refined ? paths.refined_scores() : paths.scores();
  require_artifact(source, "decide");
  const auto scores = load_scores(source);
  const auto split = split_records(collection.records, config.split);
  const DecisionOutcome outcome = decide_markets(collection, scores, split, config.decide);
  write_file(paths.decisions(), [&](std::ostream& out) { write_decision_log(out, outcome.decisions); });
  write_file(paths.economic(), [&](std::ostream& out) { write_economic_csv(out, outcome.rows); });
  spdlog::info("decide: {} decisions on the evaluation split", outcome.decisions.size());
}

void stage_report(const RunConfig& config, const RunPaths& paths) {
  const GraphCollection collection = load_collection(config, paths);
  for (const auto& p : {paths.scores(), paths.refined_scores(), paths.clusters(), paths.economic()})
    require_artifact(p, "report");
  const auto split = split_records(collection.records, config.split);
  const PartitionMask eval = edge_masks(collection, split, 0);

  const auto raw = partition_scores(collection, load_scores(paths.scores()));
  const auto refined = partition_scores(collection, load_scores(paths.refined_scores()));
  const EvalReport base = evaluate(collection, raw, config.report.threshold, &eval, config.report.overall);
  const EvalReport lp = evaluate(collection, refined, config.report.threshold, &eval, config.report.overall);
  write_file(paths.detection_report(), [&](std::ostream& out) { write_report_csv(out, base); });

  std::ifstream cin(paths.clusters());
  const ClusterSet clusters = read_clusters(cin);
  const ClusterQuality q = cluster_quality(clusters);

  std::ifstream ein(paths.economic());
  std::string economic((std::istreambuf_iterator<char>(ein)), std::istreambuf_iterator<char>());

  write_file(paths.report(), [&](std::ostream& out) {
    out << "Detection (evaluation split)\n" << format_report_table(base) << '\n';
    out << "Detection with label propagation (evaluation split)\n" << format_report_table(lp) << '\n';
    out << fmt::format("Clusters: {} clusters, {} accounts, {} labelled hits, {} without hits, precision {:.4f}\n\n",
                       q.clusters, q.accounts, q.hits, q.zero_hit_clusters, q.precision());
    out << "Economic evaluation (evaluation split)\n" << economic;
  });
  spdlog::info("report: {}", paths.report().string());
}

void run_pipeline(const RunConfig& config, const RunPaths& paths) {
  stage_generate(config, paths);
  stage_train(config, paths);
  stage_detect(config, paths);
  stage_ppr(config, paths);
  stage_propagate(config, paths);
  stage_decide(config, paths);
  stage_report(config, paths);
}

}  // namespace fedaml
