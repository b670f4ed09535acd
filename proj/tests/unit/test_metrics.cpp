#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "fedaml/error.hpp"
#include "fedaml/graph.hpp"
#include "fedaml/metrics.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace fedaml;
using testing_util::rec;

namespace {

struct Sample {
  std::vector<double> scores;
  std::vector<int> labels;
};

// Scores rounded to two decimals so that ties are common.
Sample random_sample(std::mt19937_64& rng, std::size_t n, double prevalence) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Sample s;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = u(rng) < prevalence ? 1 : 0;
    s.labels.push_back(y);
    s.scores.push_back(std::round(100.0 * std::min(1.0, u(rng) * 0.8 + 0.2 * y)) / 100.0);
  }
  s.labels[0] = 1;
  s.labels[1] = 0;
  return s;
}

}  // namespace

TEST_CASE("auroc examples") {
  CHECK(auroc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, std::vector<int>{0, 0, 1, 1}) ==
        doctest::Approx(0.75));
  CHECK(auroc(std::vector<double>{0.1, 0.2, 0.3}, std::vector<int>{0, 1, 1}) == 1.0);
  CHECK(auroc(std::vector<double>{0.9, 0.2, 0.3}, std::vector<int>{1, 0, 0}) == 1.0);
  CHECK(auroc(std::vector<double>{0.9, 0.2}, std::vector<int>{0, 1}) == 0.0);
  CHECK(auroc(std::vector<double>{0.5, 0.5, 0.5}, std::vector<int>{0, 1, 0}) == 0.5);
}

TEST_CASE("auroc and auprc match pairwise and per-positive definitions") {
  std::mt19937_64 rng(71);
  for (int trial = 0; trial < 50; ++trial) {
    const Sample s = random_sample(rng, 20 + static_cast<std::size_t>(trial) * 7, 0.3);
    CHECK(auroc(s.scores, s.labels) == doctest::Approx(oracle::auroc_pairs(s.scores, s.labels)).epsilon(1e-12));
    CHECK(auprc(s.scores, s.labels) ==
          doctest::Approx(oracle::average_precision(s.scores, s.labels)).epsilon(1e-12));
  }
}

TEST_CASE("auprc examples") {
  CHECK(auprc(std::vector<double>{0.9, 0.1}, std::vector<int>{1, 0}) == 1.0);
  // One positive ranked last among n.
  const std::size_t n = 8;
  std::vector<double> s(n);
  std::vector<int> y(n, 0);
  for (std::size_t i = 0; i < n; ++i) s[i] = 1.0 - 0.1 * static_cast<double>(i);
  y[n - 1] = 1;
  CHECK(auprc(s, y) == doctest::Approx(1.0 / static_cast<double>(n)));
  // Everything tied: one step at the prevalence.
  CHECK(auprc(std::vector<double>{0.5, 0.5, 0.5, 0.5}, std::vector<int>{1, 0, 0, 0}) ==
        doctest::Approx(0.25));
}

TEST_CASE("random scores give average precision near the prevalence") {
  std::mt19937_64 rng(72);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double prevalence = 0.1;
  double total = 0.0;
  const int trials = 200;
  for (int t = 0; t < trials; ++t) {
    std::vector<double> s(500);
    std::vector<int> y(500);
    for (std::size_t i = 0; i < 500; ++i) {
      s[i] = u(rng);
      y[i] = u(rng) < prevalence;
    }
    y[0] = 1;
    total += auprc(s, y);
  }
  CHECK(total / trials == doctest::Approx(prevalence).epsilon(0.2));
}

TEST_CASE("ranking metrics ignore monotone rescaling") {
  std::mt19937_64 rng(73);
  for (int trial = 0; trial < 30; ++trial) {
    const Sample s = random_sample(rng, 60, 0.25);
    std::vector<double> warped;
    for (double x : s.scores) warped.push_back(std::exp(3.0 * x) - 7.0);
    CHECK(auroc(warped, s.labels) == auroc(s.scores, s.labels));
    CHECK(auprc(warped, s.labels) == doctest::Approx(auprc(s.scores, s.labels)).epsilon(1e-12));
  }
}

TEST_CASE("undefined metrics") {
  CHECK_THROWS_AS(auroc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), DataError);
  CHECK_THROWS_AS(auroc(std::vector<double>{0.1, 0.2}, std::vector<int>{0, 0}), DataError);
  CHECK_THROWS_AS(auroc(std::vector<double>{}, std::vector<int>{}), DataError);
  CHECK_THROWS_AS(auprc(std::vector<double>{0.1, 0.2}, std::vector<int>{0, 0}), DataError);
  const MarketRow row = evaluate_market("US", std::vector<double>{0.1, 0.7}, std::vector<int>{0, 0}, 0.5);
  CHECK_FALSE(row.auroc.has_value());
  CHECK_FALSE(row.auprc.has_value());
  CHECK_FALSE(row.type2.has_value());
  CHECK(*row.type1 == 0.5);
}

TEST_CASE("error rates") {
  const std::vector<double> s{0.1, 0.6, 0.4, 0.9};
  const std::vector<int> y{0, 0, 1, 1};
  const ErrorRates r = error_rates(s, y, 0.5);
  CHECK(*r.type1 == 0.5);
  CHECK(*r.type2 == 0.5);
  CHECK(*error_rates(s, y, 0.4).type2 == 0.0);  // >= counts as positive
  CHECK(*error_rates(s, y, 0.0).type1 == 1.0);
  CHECK(*error_rates(s, y, 1.01).type2 == 1.0);
  CHECK_FALSE(error_rates(std::vector<double>{0.3}, std::vector<int>{1}, 0.5).type1.has_value());
}

TEST_CASE("error rates move in opposite directions with the threshold") {
  std::mt19937_64 rng(74);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 30; ++trial) {
    const Sample s = random_sample(rng, 80, 0.3);
    const double t1 = u(rng), t2 = u(rng);
    const double lo = std::min(t1, t2), hi = std::max(t1, t2);
    const ErrorRates a = error_rates(s.scores, s.labels, lo);
    const ErrorRates b = error_rates(s.scores, s.labels, hi);
    CHECK(*b.type1 <= *a.type1);
    CHECK(*b.type2 >= *a.type2);
  }
}

TEST_CASE("collection evaluation counts cross-border records once") {
  const GraphCollection c = build_collection({rec("US", "a", "DE", "x", 100, 1, 0),
                                              rec("US", "a", "US", "b", 100, 0, 1),
                                              rec("DE", "x", "DE", "y", 100, 0, 2)});
  PartitionScores scores;
  for (const auto& [name, g] : c.graphs) {
    scores[name].resize(g.edge_count());
    for (std::size_t e = 0; e < g.edge_count(); ++e) scores[name][e] = g.edge_labels[e] ? 0.9 : 0.2;
  }
  const EvalReport r = evaluate(c, scores);
  CHECK(r.rows.size() == 2);
  CHECK(r.overall.positives == 1);
  CHECK(r.overall.negatives == 2);
  CHECK(*r.overall.auroc == 1.0);
  for (const auto& row : r.rows) CHECK(row.positives == 1);

  const PooledEdges pooled = pool_edges(c, scores);
  CHECK(pooled.records == std::vector<std::size_t>{0, 1, 2});

  const EvalReport macro = evaluate(c, scores, 0.5, nullptr, OverallMode::kMacro);
  CHECK(macro.overall.positives == 2);
  CHECK(*macro.overall.auroc == 1.0);

  PartitionMask mask;
  for (const auto& [name, g] : c.graphs) mask[name].assign(g.edge_count(), 0);
  const EvalReport empty = evaluate(c, scores, 0.5, &mask);
  CHECK(empty.overall.positives + empty.overall.negatives == 0);

  std::stringstream csv;
  write_report_csv(csv, r);
  CHECK(csv.str().rfind("market,auroc,auprc,type1,type2,positives,negatives\n", 0) == 0);
  CHECK(format_report_table(r).find("Overall") != std::string::npos);
}
