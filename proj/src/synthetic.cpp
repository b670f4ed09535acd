#include "fedaml/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "fedaml/error.hpp"

namespace fedaml {

std::string to_string(PatternKind p) {
  switch (p) {
    case PatternKind::kFanOut: return "fan-out";
    case PatternKind::kLoop: return "loop";
    case PatternKind::kGatherScatter: return "gather-scatter";
    case PatternKind::kHybrid: return "hybrid";
  }
  return "?";
}

PatternKind parse_pattern(const std::string& s) {
  if (s == "fan-out" || s == "fanout") return PatternKind::kFanOut;
  if (s == "loop") return PatternKind::kLoop;
  if (s == "gather-scatter") return PatternKind::kGatherScatter;
  if (s == "hybrid") return PatternKind::kHybrid;
  throw UsageError("unknown pattern '" + s + "' (fan-out|loop|gather-scatter|hybrid)");
}

namespace {

int min_group_size(PatternKind p) { return p == PatternKind::kHybrid ? 4 : 3; }

// Distinct accounts per country seen in `records`, in first-appearance order.
std::map<CountryCode, std::vector<std::string>> accounts_by_country(
    const std::vector<TransactionRecord>& records) {
  std::map<CountryCode, std::vector<std::string>> out;
  std::set<std::string> seen;
  for (const auto& r : records) {
    for (const auto& [bank, acct] : {std::pair{r.from_bank, r.from_account},
                                     std::pair{r.to_bank, r.to_account}}) {
      if (seen.insert(account_key(bank, acct)).second) out[bank].push_back(acct);
    }
  }
  return out;
}

}  // namespace

InjectedGroup inject_pattern_records(std::vector<TransactionRecord>& records,
                                     const SyntheticPatternSpec& spec, std::mt19937_64& rng) {
  if (spec.group_size < min_group_size(spec.pattern)) {
    throw UsageError(to_string(spec.pattern) + " needs group_size >= " +
                     std::to_string(min_group_size(spec.pattern)));
  }
  if (spec.countries.empty()) throw UsageError("pattern needs at least one country");
  if (!(spec.amount_range.first > 0.0) || spec.amount_range.second < spec.amount_range.first) {
    throw UsageError("pattern amount_range must satisfy 0 < low <= high");
  }

  const auto existing = spec.reuse_fraction > 0.0 ? accounts_by_country(records)
                                                  : std::map<CountryCode, std::vector<std::string>>{};
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t k = static_cast<std::size_t>(spec.group_size);
  const std::size_t tag = records.size();

  // Members: (bank, account).
  std::vector<std::pair<CountryCode, std::string>> members;
  std::set<std::string> used;
  for (std::size_t i = 0; i < k; ++i) {
    const CountryCode& bank = spec.countries[i % spec.countries.size()];
    std::string acct;
    const auto it = existing.find(bank);
    if (it != existing.end() && !it->second.empty() && unit(rng) < spec.reuse_fraction) {
      std::uniform_int_distribution<std::size_t> pick(0, it->second.size() - 1);
      for (int attempt = 0; attempt < 8 && acct.empty(); ++attempt) {
        const std::string& cand = it->second[pick(rng)];
        if (!used.count(account_key(bank, cand))) acct = cand;
      }
    }
    if (acct.empty()) acct = "ml" + std::to_string(tag) + "_" + std::to_string(i);
    used.insert(account_key(bank, acct));
    members.emplace_back(bank, acct);
  }

  std::vector<std::pair<std::size_t, std::size_t>> links;
  switch (spec.pattern) {
    case PatternKind::kFanOut:
      for (std::size_t i = 1; i < k; ++i) links.emplace_back(0, i);
      break;
    case PatternKind::kLoop:
      for (std::size_t i = 0; i < k; ++i) links.emplace_back(i, (i + 1) % k);
      break;
    case PatternKind::kGatherScatter: {
      const std::size_t gather = (k - 1) / 2;
      for (std::size_t i = 1; i <= gather; ++i) links.emplace_back(i, 0);
      for (std::size_t i = gather + 1; i < k; ++i) links.emplace_back(0, i);
      break;
    }
    case PatternKind::kHybrid: {
      const std::size_t gather = (k - 2) / 2;
      for (std::size_t i = 2; i < 2 + gather; ++i) links.emplace_back(i, 0);
      links.emplace_back(0, 1);
      for (std::size_t i = 2 + gather; i < k; ++i) links.emplace_back(1, i);
      break;
    }
  }

  InjectedGroup group;
  group.pattern = spec.pattern;
  for (const auto& [bank, acct] : members) group.accounts.push_back(account_key(bank, acct));
  std::uniform_real_distribution<double> amount(spec.amount_range.first, spec.amount_range.second);
  std::int64_t t = spec.start_time;
  for (const auto& [a, b] : links) {
    TransactionRecord r;
    r.timestamp = t;
    t += 60 + static_cast<std::int64_t>(unit(rng) * 600.0);
    r.from_bank = members[a].first;
    r.from_account = members[a].second;
    r.to_bank = members[b].first;
    r.to_account = members[b].second;
    r.amount = std::round(amount(rng) * 100.0) / 100.0;
    r.payment_type = spec.payment_type;
    r.is_laundering = 1;
    group.records.push_back(records.size());
    records.push_back(std::move(r));
  }
  return group;
}

std::pair<GraphCollection, InjectedGroup> inject_pattern(const GraphCollection& collection,
                                                         const SyntheticPatternSpec& spec,
                                                         std::mt19937_64& rng) {
  for (const auto& c : spec.countries) {
    if (!collection.graphs.count(collection.partition_of(c))) {
      throw UsageError("inject_pattern: country '" + c + "' is not in the collection");
    }
  }
  std::vector<TransactionRecord> records = collection.records;
  InjectedGroup group = inject_pattern_records(records, spec, rng);
  FeatureOptions options = collection.options;
  options.scaled_amounts.reset();
  return {build_collection(std::move(records), std::move(options)), std::move(group)};
}

GeneratedDataset generate_dataset(const DatasetSpec& spec) {
  if (spec.countries.empty()) throw UsageError("dataset needs at least one country");
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t nc = spec.countries.size();

  auto other_payment = [&]() -> std::string {
    // Any non-ACH rail.
    std::uniform_int_distribution<std::size_t> pick(1, std::size(kPaymentTypes) - 1);
    return kPaymentTypes[pick(rng)];
  };
  auto account_name = [](std::size_t i) { return "A" + std::to_string(i); };
  auto random_time = [&]() {
    return spec.start_time + static_cast<std::int64_t>(unit(rng) * static_cast<double>(spec.duration));
  };
  auto legit_record = [&](std::size_t ci, const std::string& from_acct, std::size_t cj,
                          const std::string& to_acct) {
    const CountryProfile& prof = spec.countries[ci];
    std::lognormal_distribution<double> amt(prof.amount_log_mean, prof.amount_log_sd);
    TransactionRecord r;
    r.timestamp = random_time();
    r.from_bank = prof.code;
    r.from_account = from_acct;
    r.to_bank = spec.countries[cj].code;
    r.to_account = to_acct;
    r.amount = std::max(0.01, std::round(amt(rng) * 100.0) / 100.0);
    r.payment_type = unit(rng) < spec.legit_ach_rate ? std::string("ACH") : other_payment();
    r.is_laundering = 0;
    return r;
  };

  std::vector<TransactionRecord> records;
  for (std::size_t ci = 0; ci < nc; ++ci) {
    const CountryProfile& prof = spec.countries[ci];
    if (prof.accounts < 2) throw UsageError("country " + prof.code + " needs at least 2 accounts");
    std::uniform_int_distribution<std::size_t> pick(0, prof.accounts - 1);
    for (std::size_t t = 0; t < prof.transactions; ++t) {
      const std::size_t src = pick(rng);
      std::size_t cj = ci;
      if (nc > 1 && unit(rng) < spec.cross_border_fraction) {
        std::uniform_int_distribution<std::size_t> pc(0, nc - 2);
        cj = pc(rng);
        if (cj >= ci) ++cj;
      }
      std::uniform_int_distribution<std::size_t> pick_dst(0, spec.countries[cj].accounts - 1);
      std::size_t dst = pick_dst(rng);
      if (cj == ci && dst == src) dst = (dst + 1) % prof.accounts;
      records.push_back(legit_record(ci, account_name(src), cj, account_name(dst)));
    }
  }

  std::vector<InjectedGroup> groups;
  for (std::size_t p = 0; p < spec.patterns; ++p) {
    SyntheticPatternSpec ps;
    ps.pattern = spec.pattern_mix[p % spec.pattern_mix.size()];
    const int lo = std::max(spec.group_size_range.first, min_group_size(ps.pattern));
    const int hi = std::max(lo, spec.group_size_range.second);
    ps.group_size = std::uniform_int_distribution<int>(lo, hi)(rng);
    std::uniform_int_distribution<std::size_t> pc(0, nc - 1);
    const std::size_t c0 = pc(rng);
    ps.countries.push_back(spec.countries[c0].code);
    if (nc > 1 && unit(rng) < spec.cross_border_pattern_fraction) {
      std::size_t c1 = std::uniform_int_distribution<std::size_t>(0, nc - 2)(rng);
      if (c1 >= c0) ++c1;
      ps.countries.push_back(spec.countries[c1].code);
    }
    const double lo_amt = std::exp(spec.laundering_log_mean - 2.0 * spec.laundering_log_sd);
    const double hi_amt = std::exp(spec.laundering_log_mean + 2.0 * spec.laundering_log_sd);
    ps.amount_range = {lo_amt, hi_amt};
    ps.start_time = random_time();
    ps.payment_type = "ACH";
    ps.reuse_fraction = spec.reuse_fraction;
    InjectedGroup g = inject_pattern_records(records, ps, rng);
    for (std::size_t idx : g.records) {
      if (unit(rng) >= spec.laundering_ach_rate) records[idx].payment_type = other_payment();
    }
    // Fresh members also get ordinary traffic so they are not isolated
    // purely by their illicit edges.
    for (const std::string& key : g.accounts) {
      const CountryCode bank = account_country(key);
      const std::string acct = key.substr(bank.size() + 1);
      if (acct.rfind("ml", 0) != 0) continue;
      std::size_t ci = 0;
      while (spec.countries[ci].code != bank) ++ci;
      std::uniform_int_distribution<std::size_t> pick(0, spec.countries[ci].accounts - 1);
      const int extra = 1 + static_cast<int>(unit(rng) * 3.0);
      for (int e = 0; e < extra; ++e) {
        if (unit(rng) < 0.5) {
          records.push_back(legit_record(ci, acct, ci, account_name(pick(rng))));
        } else {
          records.push_back(legit_record(ci, account_name(pick(rng)), ci, acct));
        }
      }
    }
    groups.push_back(std::move(g));
  }

  // Chronological order; remap group record indices.
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return records[a].timestamp < records[b].timestamp;
  });
  std::vector<std::size_t> new_pos(records.size());
  GeneratedDataset out;
  out.records.reserve(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    new_pos[order[i]] = i;
    out.records.push_back(records[order[i]]);
  }
  for (auto& g : groups) {
    for (auto& idx : g.records) idx = new_pos[idx];
  }
  out.groups = std::move(groups);
  return out;
}

std::vector<std::string> malicious_accounts(const std::vector<TransactionRecord>& records) {
  std::set<std::string> out;
  for (const auto& r : records) {
    if (!r.is_laundering) continue;
    out.insert(account_key(r.from_bank, r.from_account));
    out.insert(account_key(r.to_bank, r.to_account));
  }
  return {out.begin(), out.end()};
}

void validate(const SbmSpec& spec) {
  if (!(spec.p_out > 0.0 || (spec.p_out == 0.0 && spec.p_in == 0.0))) {
    // p_in = p_out = 0 is allowed as the empty-graph edge case.
    throw UsageError("SBM requires 0 < p_out");
  }
  if (spec.p_out > spec.p_in || spec.p_in > 1.0) {
    throw UsageError("SBM requires p_out <= p_in <= 1");
  }
  if (spec.s >= spec.n) throw UsageError("SBM requires s < n");
}

SbmGraph sbm_generate(const SbmSpec& spec) {
  validate(spec);
  std::mt19937_64 rng(spec.seed);
  std::vector<std::size_t> nodes(spec.n);
  std::iota(nodes.begin(), nodes.end(), 0);
  std::shuffle(nodes.begin(), nodes.end(), rng);

  SbmGraph g;
  g.in_planted.assign(spec.n, 0);
  g.planted.assign(nodes.begin(), nodes.begin() + static_cast<long>(spec.s));
  std::sort(g.planted.begin(), g.planted.end());
  for (std::size_t v : g.planted) g.in_planted[v] = 1;

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::tuple<std::size_t, std::size_t, double>> trip;
  for (std::size_t i = 0; i < spec.n; ++i) {
    for (std::size_t j = i + 1; j < spec.n; ++j) {
      const double p = (g.in_planted[i] && g.in_planted[j]) ? spec.p_in : spec.p_out;
      if (unit(rng) < p) {
        trip.emplace_back(i, j, 1.0);
        trip.emplace_back(j, i, 1.0);
      }
    }
  }
  g.adjacency = CsrMatrix::from_triplets(spec.n, spec.n, std::move(trip));
  return g;
}

}  // namespace fedaml
