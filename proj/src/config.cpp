#include "fedaml/config.hpp"

#include <fstream>
#include <set>

#include <fmt/format.h>

#include "fedaml/error.hpp"

namespace fedaml {

using nlohmann::json;

namespace {

// Reads members of one JSON object and remembers which keys were consumed,
// so leftovers can be reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw UsageError("config: " + where() + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    used_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw UsageError("config: " + child(key) + " has the wrong type");
    }
  }

  template <typename T>
  void get(const char* key, std::optional<T>& out) {
    used_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end() || it->is_null()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw UsageError("config: " + child(key) + " has the wrong type");
    }
  }

  template <typename F>
  void get_with(const char* key, F&& convert) {
    used_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    if (!it->is_string()) throw UsageError("config: " + child(key) + " must be a string");
    convert(it->template get<std::string>());
  }

  // Nested object, or nullopt when absent.
  std::optional<Section> sub(const char* key) {
    used_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return std::nullopt;
    return Section(*it, child(key));
  }

  const json* raw(const char* key) {
    used_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  std::string where() const { return path_.empty() ? "top level" : path_; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key())) throw UsageError("config: unknown key '" + child(it.key()) + "'");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

PatternKind pattern_from(const std::string& s) { return parse_pattern(s); }

void read_country(const json& j, const std::string& path, CountryProfile& c) {
  Section s(j, path);
  s.get("code", c.code);
  s.get("accounts", c.accounts);
  s.get("transactions", c.transactions);
  s.get("amount_log_mean", c.amount_log_mean);
  s.get("amount_log_sd", c.amount_log_sd);
  s.finish();
}

void read_generator(Section s, DatasetSpec& g) {
  if (const json* countries = s.raw("countries")) {
    if (!countries->is_array()) throw UsageError("config: " + s.child("countries") + " must be an array");
    g.countries.clear();
    for (std::size_t i = 0; i < countries->size(); ++i) {
      CountryProfile c;
      read_country((*countries)[i], fmt::format("{}[{}]", s.child("countries"), i), c);
      g.countries.push_back(c);
    }
  }
  s.get("cross_border_fraction", g.cross_border_fraction);
  s.get("patterns", g.patterns);
  if (const json* mix = s.raw("pattern_mix")) {
    std::vector<std::string> names;
    try {
      names = mix->get<std::vector<std::string>>();
    } catch (const json::exception&) {
      throw UsageError("config: " + s.child("pattern_mix") + " must be a list of pattern names");
    }
    g.pattern_mix.clear();
    for (const auto& n : names) g.pattern_mix.push_back(pattern_from(n));
  }
  if (const json* r = s.raw("group_size_range")) {
    try {
      const auto v = r->get<std::vector<int>>();
      if (v.size() != 2) throw UsageError("");
      g.group_size_range = {v[0], v[1]};
    } catch (const std::exception&) {
      throw UsageError("config: " + s.child("group_size_range") + " must be [min, max]");
    }
  }
  s.get("cross_border_pattern_fraction", g.cross_border_pattern_fraction);
  s.get("reuse_fraction", g.reuse_fraction);
  s.get("laundering_log_mean", g.laundering_log_mean);
  s.get("laundering_log_sd", g.laundering_log_sd);
  s.get("laundering_ach_rate", g.laundering_ach_rate);
  s.get("legit_ach_rate", g.legit_ach_rate);
  s.get("start_time", g.start_time);
  s.get("duration", g.duration);
  s.finish();
}

void read_data(Section s, DataConfig& d) {
  std::optional<std::string> input;
  s.get("input", input);
  if (input) d.input = *input;
  if (auto g = s.sub("generator")) read_generator(*g, d.generator);
  s.get_with("normalization", [&](const std::string& v) { d.normalization = parse_normalization_strategy(v); });
  s.get("fixed_source", d.fixed_source);
  s.get("log_amounts", d.log_amounts);
  s.get("partition_map", d.partition_map);
  s.finish();
}

void read_split(Section s, SplitConfig& c) {
  s.get_with("mode", [&](const std::string& v) { c.mode = parse_split_mode(v); });
  s.get("train_fraction", c.train_fraction);
  s.finish();
}

void read_encoder(Section s, EncoderConfig& e) {
  s.get("layers", e.layers);
  s.get("hidden_dim", e.hidden_dim);
  s.get("mlp_hidden", e.mlp_hidden);
  s.get("membership_clusters", e.membership_clusters);
  s.finish();
}

void read_loss(Section s, LossConfig& l) {
  s.get_with("classifier", [&](const std::string& v) {
    if (v == "focal") l.classifier = ClassificationLoss::kFocal;
    else if (v == "bce") l.classifier = ClassificationLoss::kBce;
    else throw UsageError("config: unknown classifier loss '" + v + "' (focal|bce)");
  });
  s.get("alpha", l.alpha);
  s.get("gamma", l.gamma_focal);
  s.get("beta", l.beta);
  s.get("lambda1", l.lambda1);
  s.get("lambda2", l.lambda2);
  s.get_with("supernode_aggregation", [&](const std::string& v) {
    if (v == "mean") l.aggregation = SupernodeAggregation::kMean;
    else if (v == "mean_variance") l.aggregation = SupernodeAggregation::kMeanVariance;
    else throw UsageError("config: unknown supernode aggregation '" + v + "' (mean|mean_variance)");
  });
  s.finish();
}

void read_federation(Section s, FederationConfig& f) {
  s.get("rounds", f.rounds);
  s.get("comm_frequency", f.comm_frequency);
  s.get("clients", f.clients);
  s.get("lr", f.lr);
  s.get_with("optimizer", [&](const std::string& v) {
    if (v == "adam") f.optimizer = Optimizer::kAdam;
    else if (v == "sgd") f.optimizer = Optimizer::kSgd;
    else throw UsageError("config: unknown optimizer '" + v + "' (adam|sgd)");
  });
  s.get("aggregate", f.aggregate);
  s.get("volume_weighted", f.volume_weighted);
  s.get("share_optimizer_state", f.share_optimizer_state);
  s.get("eval_every", f.eval_every);
  if (auto e = s.sub("encoder")) read_encoder(*e, f.encoder);
  if (auto l = s.sub("loss")) read_loss(*l, f.loss);
  s.finish();
}

void read_ppr(Section s, ClusterRunConfig& c) {
  s.get("alpha", c.ppr.alpha);
  s.get("tol", c.ppr.tol);
  s.get("max_iters", c.ppr.max_iters);
  s.get("score_threshold", c.ppr.score_threshold);
  s.get("seed_threshold", c.seed_threshold);
  s.get("cross_bank", c.cross_bank);
  s.get("directed", c.directed);
  s.finish();
}

void read_propagation(Section s, PropagationConfig& p) {
  s.get("alpha", p.alpha);
  s.get("alpha_lp", p.alpha_lp);
  s.get("tol", p.tol);
  s.get("max_iters", p.max_iters);
  s.get("in_edges_only", p.in_edges_only);
  s.finish();
}

void read_reward(Section s, RewardConfig& r) {
  s.get("a1", r.a1);
  s.get("a2", r.a2);
  s.get("a3", r.a3);
  s.get("a4", r.a4);
  s.get("a5", r.a5);
  s.get("a6", r.a6);
  s.get("gamma", r.gamma);
  s.finish();
}

void read_decide(Section s, DecideConfig& d) {
  if (auto r = s.sub("reward")) read_reward(*r, d.reward);
  s.get("grid_points", d.grid_points);
  s.get("grid_lo", d.grid_lo);
  s.get("grid_hi", d.grid_hi);
  s.get("epsilon", d.train.epsilon);
  s.get("passes", d.train.passes);
  s.get("full_information", d.train.full_information);
  s.get("monitor_band", d.train.monitor_band);
  s.get("eta_g", d.eta_g);
  s.get("xi", d.xi);
  s.get("lambda_c", d.lambda_c);
  s.get("coordination_rounds", d.coordination_rounds);
  s.get("episodes", d.episodes);
  s.get("volume_weights", d.volume_weights);
  s.get("fixed_threshold", d.fixed_threshold);
  s.get("budget_fraction", d.budget_fraction);
  s.get("use_refined", d.use_refined);
  s.finish();
}

void read_report(Section s, ReportConfig& r) {
  s.get("threshold", r.threshold);
  s.get_with("overall", [&](const std::string& v) {
    if (v == "pooled") r.overall = OverallMode::kPooled;
    else if (v == "macro") r.overall = OverallMode::kMacro;
    else throw UsageError("config: unknown overall mode '" + v + "' (pooled|macro)");
  });
  s.finish();
}

}  // namespace

void RunConfig::apply_seed(std::uint64_t s) {
  seed = s;
  data.generator.seed = s;
  split.seed = s;
  federation.seed = s;
  decide.train.seed = s;
}

void RunConfig::validate() const {
  if (data.generator.countries.empty() && !data.input) {
    throw UsageError("config: data.generator.countries is empty and no data.input is given");
  }
  if (!(split.train_fraction > 0.0 && split.train_fraction < 1.0)) {
    throw UsageError("config: split.train_fraction must lie in (0, 1)");
  }
  federation.validate();
  ppr.ppr.validate();
  if (!(ppr.seed_threshold > 0.0 && ppr.seed_threshold <= 1.0)) {
    throw UsageError("config: ppr.seed_threshold must lie in (0, 1]");
  }
  propagation.validate();
  decide.reward.validate();
  (void)threshold_grid(decide.grid_points, decide.grid_lo, decide.grid_hi);
  if (decide.episodes == 0) throw UsageError("config: decide.episodes must be positive");
  if (!(decide.eta_g >= 0.0 && decide.eta_g <= 1.0)) throw UsageError("config: decide.eta_g must lie in [0, 1]");
  if (!(decide.xi >= 0.0) || !(decide.lambda_c >= 0.0)) {
    throw UsageError("config: decide.xi and decide.lambda_c must be non-negative");
  }
  if (!(decide.train.monitor_band >= 0.0)) throw UsageError("config: decide.monitor_band must be non-negative");
  if (decide.fixed_threshold && !(*decide.fixed_threshold >= 0.0 && *decide.fixed_threshold <= 1.0)) {
    throw UsageError("config: decide.fixed_threshold must lie in [0, 1]");
  }
  if (decide.budget_fraction && !(*decide.budget_fraction > 0.0 && *decide.budget_fraction <= 1.0)) {
    throw UsageError("config: decide.budget_fraction must lie in (0, 1]");
  }
  if (!(report.threshold >= 0.0 && report.threshold <= 1.0)) {
    throw UsageError("config: report.threshold must lie in [0, 1]");
  }
}

RunConfig parse_config(const json& j) {
  RunConfig c;
  c.data.generator.countries = {{"US", 300, 1700, 6.5, 1.2}, {"DE", 250, 1700, 6.0, 1.1},
                                {"FR", 250, 1600, 5.8, 1.0}};
  c.data.generator.patterns = 12;
  Section s(j, "");
  std::uint64_t seed = c.seed;
  s.get("seed", seed);
  if (auto d = s.sub("data")) read_data(*d, c.data);
  if (auto x = s.sub("split")) read_split(*x, c.split);
  if (auto x = s.sub("federation")) read_federation(*x, c.federation);
  if (auto x = s.sub("ppr")) read_ppr(*x, c.ppr);
  if (auto x = s.sub("propagation")) read_propagation(*x, c.propagation);
  if (auto x = s.sub("decide")) read_decide(*x, c.decide);
  if (auto x = s.sub("report")) read_report(*x, c.report);
  s.finish();
  c.apply_seed(seed);
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw UsageError("config " + path.string() + ": " + e.what());
  }
  RunConfig c = parse_config(j);
  // A relative input path is resolved against the config file's directory.
  if (c.data.input && c.data.input->is_relative()) c.data.input = path.parent_path() / *c.data.input;
  return c;
}

json to_json(const RunConfig& c) {
  json countries = json::array();
  for (const auto& p : c.data.generator.countries) {
    countries.push_back({{"code", p.code},
                         {"accounts", p.accounts},
                         {"transactions", p.transactions},
                         {"amount_log_mean", p.amount_log_mean},
                         {"amount_log_sd", p.amount_log_sd}});
  }
  std::vector<std::string> mix;
  for (auto k : c.data.generator.pattern_mix) mix.push_back(to_string(k));
  const auto& g = c.data.generator;
  json data = {{"generator",
                {{"countries", countries},
                 {"cross_border_fraction", g.cross_border_fraction},
                 {"patterns", g.patterns},
                 {"pattern_mix", mix},
                 {"group_size_range", {g.group_size_range.first, g.group_size_range.second}},
                 {"cross_border_pattern_fraction", g.cross_border_pattern_fraction},
                 {"reuse_fraction", g.reuse_fraction},
                 {"laundering_log_mean", g.laundering_log_mean},
                 {"laundering_log_sd", g.laundering_log_sd},
                 {"laundering_ach_rate", g.laundering_ach_rate},
                 {"legit_ach_rate", g.legit_ach_rate},
                 {"start_time", g.start_time},
                 {"duration", g.duration}}},
               {"normalization", to_string(c.data.normalization)},
               {"log_amounts", c.data.log_amounts},
               {"partition_map", c.data.partition_map}};
  if (c.data.input) data["input"] = c.data.input->string();
  if (c.data.fixed_source) data["fixed_source"] = *c.data.fixed_source;

  const auto& f = c.federation;
  json fed = {{"rounds", f.rounds},
              {"comm_frequency", f.comm_frequency},
              {"clients", f.clients},
              {"lr", f.lr},
              {"optimizer", f.optimizer == Optimizer::kAdam ? "adam" : "sgd"},
              {"aggregate", f.aggregate},
              {"volume_weighted", f.volume_weighted},
              {"share_optimizer_state", f.share_optimizer_state},
              {"eval_every", f.eval_every},
              {"encoder",
               {{"layers", f.encoder.layers},
                {"hidden_dim", f.encoder.hidden_dim},
                {"mlp_hidden", f.encoder.mlp_hidden},
                {"membership_clusters", f.encoder.membership_clusters}}},
              {"loss",
               {{"classifier", f.loss.classifier == ClassificationLoss::kFocal ? "focal" : "bce"},
                {"alpha", f.loss.alpha},
                {"gamma", f.loss.gamma_focal},
                {"beta", f.loss.beta},
                {"lambda1", f.loss.lambda1},
                {"lambda2", f.loss.lambda2},
                {"supernode_aggregation",
                 f.loss.aggregation == SupernodeAggregation::kMean ? "mean" : "mean_variance"}}}};

  const auto& d = c.decide;
  json decide = {{"reward",
                  {{"a1", d.reward.a1},
                   {"a2", d.reward.a2},
                   {"a3", d.reward.a3},
                   {"a4", d.reward.a4},
                   {"a5", d.reward.a5},
                   {"a6", d.reward.a6},
                   {"gamma", d.reward.gamma}}},
                 {"grid_points", d.grid_points},
                 {"grid_lo", d.grid_lo},
                 {"grid_hi", d.grid_hi},
                 {"epsilon", d.train.epsilon},
                 {"passes", d.train.passes},
                 {"full_information", d.train.full_information},
                 {"monitor_band", d.train.monitor_band},
                 {"eta_g", d.eta_g},
                 {"xi", d.xi},
                 {"lambda_c", d.lambda_c},
                 {"coordination_rounds", d.coordination_rounds},
                 {"episodes", d.episodes},
                 {"volume_weights", d.volume_weights},
                 {"use_refined", d.use_refined}};
  if (d.fixed_threshold) decide["fixed_threshold"] = *d.fixed_threshold;
  if (d.budget_fraction) decide["budget_fraction"] = *d.budget_fraction;

  return {{"seed", c.seed},
          {"data", data},
          {"split",
           {{"mode", c.split.mode == SplitMode::kRandom ? "random" : "chronological"},
            {"train_fraction", c.split.train_fraction}}},
          {"federation", fed},
          {"ppr",
           {{"alpha", c.ppr.ppr.alpha},
            {"tol", c.ppr.ppr.tol},
            {"max_iters", c.ppr.ppr.max_iters},
            {"score_threshold", c.ppr.ppr.score_threshold},
            {"seed_threshold", c.ppr.seed_threshold},
            {"cross_bank", c.ppr.cross_bank},
            {"directed", c.ppr.directed}}},
          {"propagation",
           {{"alpha", c.propagation.alpha},
            {"alpha_lp", c.propagation.alpha_lp},
            {"tol", c.propagation.tol},
            {"max_iters", c.propagation.max_iters},
            {"in_edges_only", c.propagation.in_edges_only}}},
          {"decide", decide},
          {"report",
           {{"threshold", c.report.threshold},
            {"overall", c.report.overall == OverallMode::kPooled ? "pooled" : "macro"}}}};
}

FeatureOptions feature_options(const RunConfig& config) {
  FeatureOptions o;
  o.strategy = config.data.normalization;
  o.fixed_source = config.data.fixed_source;
  o.seed = config.seed;
  o.log_amounts = config.data.log_amounts;
  o.partition_map = config.data.partition_map;
  return o;
}

}  // namespace fedaml
