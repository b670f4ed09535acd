#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>
#include <sstream>

#include "fedaml/error.hpp"
#include "fedaml/graph.hpp"
#include "fedaml/synthetic.hpp"
#include "helpers.hpp"

using namespace fedaml;
using testing_util::rec;

namespace {

std::vector<TransactionRecord> random_records(std::uint64_t seed, std::size_t count) {
  std::mt19937_64 rng(seed);
  const char* banks[] = {"US", "DE", "FR"};
  std::uniform_int_distribution<int> bank(0, 2), acct(0, 9);
  std::vector<TransactionRecord> out;
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(rec(banks[bank(rng)], "a" + std::to_string(acct(rng)), banks[bank(rng)],
                      "a" + std::to_string(acct(rng)), 10.0 + static_cast<double>(i),
                      static_cast<int>(i % 7 == 0), static_cast<std::int64_t>(i)));
  }
  return out;
}

}  // namespace

TEST_CASE("empty input builds an empty collection") {
  const GraphCollection c = build_collection({});
  CHECK(c.graphs.empty());
  CHECK(c.supernodes.entries.empty());
}

TEST_CASE("domestic triangle") {
  const GraphCollection c =
      build_collection({rec("US", "a", "US", "b"), rec("US", "b", "US", "c"), rec("US", "a", "US", "c")});
  REQUIRE(c.graphs.size() == 1);
  const TransactionGraph& g = c.graph("US");
  CHECK(g.node_count() == 3);
  CHECK(g.edge_count() == 3);
  CHECK(c.supernodes.entries.empty());
  // First-appearance indexing.
  CHECK(g.accounts == std::vector<std::string>{"US:a", "US:b", "US:c"});
  CHECK(g.edges[2].src == 0);
  CHECK(g.edges[2].dst == 2);
}

TEST_CASE("cross-border record is duplicated with mirrored supernodes") {
  const GraphCollection c = build_collection({rec("US", "x", "DE", "y")});
  REQUIRE(c.graphs.size() == 2);
  for (const char* p : {"US", "DE"}) {
    const TransactionGraph& g = c.graph(p);
    CHECK(g.edge_count() == 1);
    CHECK(g.edge_cross_border[0] == 1);
    CHECK(g.accounts[g.edges[0].src] == "US:x");
    CHECK(g.accounts[g.edges[0].dst] == "DE:y");
  }
  REQUIRE(c.supernodes.entries.size() == 2);
  const SuperNodeEntry& e = c.supernodes.entries[0];
  const SuperNodeEntry* m = c.supernodes.find_mirror(e);
  REQUIRE(m != nullptr);
  CHECK(m->home_country == e.foreign_country);
  CHECK(m->home_account == e.foreign_account);
  CHECK(c.home_edge(0).first == "US");
}

TEST_CASE("malformed records are rejected with their index") {
  auto bad = rec("US", "a", "US", "b", -5.0);
  try {
    build_collection({rec("US", "a", "US", "b"), bad});
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("record 1") != std::string::npos);
  }
  auto label = rec("US", "a", "US", "b");
  label.is_laundering = 2;
  CHECK_THROWS_AS(build_collection({label}), DataError);
  auto missing = rec("US", "", "US", "b");
  CHECK_THROWS_AS(build_collection({missing}), DataError);
}

TEST_CASE("degree vector") {
  SUBCASE("single isolated node") {
    TransactionGraph g;
    g.accounts = {"US:a"};
    CHECK(degree_vector(g) == std::vector<double>{0.0});
  }
  SUBCASE("chain") {
    const auto c = build_collection({rec("US", "a", "US", "b"), rec("US", "b", "US", "c")});
    CHECK(degree_vector(c.graph("US")) == std::vector<double>{1.0, 1.0, 0.0});
  }
  SUBCASE("weighted") {
    const auto c = build_collection({rec("US", "a", "US", "b"), rec("US", "a", "US", "c")});
    const std::vector<double> w{0.5, 0.25};
    CHECK(degree_vector(c.graph("US"), w)[0] == doctest::Approx(0.75));
    const std::vector<double> short_w{0.5};
    CHECK_THROWS_AS(degree_vector(c.graph("US"), short_w), UsageError);
  }
}

TEST_CASE("neighbour mean embedding") {
  // US:a has one neighbour in the US graph (DE:b); DE:b has US:a and DE:c.
  const auto c = build_collection({rec("US", "a", "DE", "b"), rec("DE", "b", "DE", "c")});
  SUBCASE("single neighbour") {
    const TransactionGraph& us = c.graph("US");
    Tensor h = Tensor::matrix(us.node_count(), 2);
    const std::size_t b = *us.find("DE:b");
    h(b, 0) = 1.0;
    h(b, 1) = 2.0;
    const Tensor out = neighbor_mean_embedding(c.supernodes, "US", h);
    REQUIRE(out.rows() == 1);
    CHECK(out(0, 0) == 1.0);
    CHECK(out(0, 1) == 2.0);
  }
  SUBCASE("two neighbours, mean and variance") {
    const TransactionGraph& de = c.graph("DE");
    Tensor h = Tensor::matrix(de.node_count(), 2);
    h(*de.find("US:a"), 0) = 0.0;
    h(*de.find("US:a"), 1) = 0.0;
    h(*de.find("DE:c"), 0) = 2.0;
    h(*de.find("DE:c"), 1) = 4.0;
    const Tensor mean = neighbor_mean_embedding(c.supernodes, "DE", h);
    REQUIRE(mean.rows() == 1);
    CHECK(mean(0, 0) == 1.0);
    CHECK(mean(0, 1) == 2.0);

    Tensor h1 = Tensor::matrix(de.node_count(), 1);
    h1(*de.find("DE:c"), 0) = 2.0;
    const Tensor mv = neighbor_mean_embedding(c.supernodes, "DE", h1, SupernodeAggregation::kMeanVariance);
    REQUIRE(mv.cols() == 2);
    CHECK(mv(0, 0) == 1.0);
    CHECK(mv(0, 1) == 1.0);
  }
  SUBCASE("empty neighbour set is an error") {
    SuperNodeRegistry reg;
    reg.entries.push_back({"US", "DE", "US:a", "DE:b", 0, {0}, {}});
    CHECK_THROWS_AS(neighbor_mean_embedding(reg, "US", Tensor::matrix(1, 1)), DataError);
  }
}

TEST_CASE("account adjacency collapses parallel edges") {
  const auto c = build_collection(
      {rec("US", "a", "US", "b"), rec("US", "a", "US", "b"), rec("US", "b", "US", "a")});
  const TransactionGraph& g = c.graph("US");
  CHECK(g.edge_count() == 3);
  const CsrMatrix a = account_adjacency(g);
  CHECK(a.at(0, 1) == 2.0);
  CHECK(a.at(1, 0) == 1.0);
  const CsrMatrix s = account_adjacency(g, std::nullopt, true);
  CHECK(s.at(0, 1) == 2.0);
  CHECK(s.at(1, 0) == 2.0);
  const CsrMatrix bin = binary_adjacency(g, true);
  CHECK(bin.at(0, 1) == 1.0);
  CHECK(bin.at(0, 0) == 1.0);
}

TEST_CASE("property: edge totals follow the duplication rule") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto records = random_records(seed, 60);
    std::size_t domestic = 0, cross = 0;
    for (const auto& r : records) (r.cross_border() ? cross : domestic) += 1;
    const auto c = build_collection(records);
    std::size_t total = 0;
    for (const auto& [name, g] : c.graphs) total += g.edge_count();
    CHECK(total == domestic + 2 * cross);
  }
}

TEST_CASE("property: mirror symmetry is a bijection") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto c = build_collection(random_records(seed, 60));
    std::set<const SuperNodeEntry*> images;
    for (const auto& e : c.supernodes.entries) {
      const SuperNodeEntry* m = c.supernodes.find_mirror(e);
      REQUIRE(m != nullptr);
      CHECK(c.supernodes.find_mirror(*m) == &e);
      CHECK(!m->cross_border_edges.empty());
      images.insert(m);
    }
    CHECK(images.size() == c.supernodes.entries.size());
  }
}

TEST_CASE("property: account ids are unique and in range") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto c = build_collection(random_records(seed, 80));
    for (const auto& [name, g] : c.graphs) {
      std::set<std::string> seen(g.accounts.begin(), g.accounts.end());
      CHECK(seen.size() == g.node_count());
      for (const Edge& e : g.edges) {
        CHECK(e.src < g.node_count());
        CHECK(e.dst < g.node_count());
      }
      CHECK(g.edge_features.rows() == g.edge_count());
      CHECK(g.node_features.rows() == g.node_count());
    }
  }
}

TEST_CASE("property: rebuilding is byte-identical") {
  const auto records = random_records(5, 100);
  const auto a = build_collection(records);
  const auto b = build_collection(records);
  REQUIRE(a.graphs.size() == b.graphs.size());
  for (const auto& [name, g] : a.graphs) {
    const auto& h = b.graph(name);
    CHECK(g.accounts == h.accounts);
    CHECK(g.node_features == h.node_features);
    CHECK(g.edge_features == h.edge_features);
    CHECK(g.edge_labels == h.edge_labels);
  }
  std::ostringstream sa, sb;
  write_transactions(sa, a.records);
  write_transactions(sb, b.records);
  CHECK(sa.str() == sb.str());
}

TEST_CASE("partition map buckets countries") {
  FeatureOptions opt;
  opt.partition_map = {{"FR", "Rest"}, {"IT", "Rest"}};
  const auto c = build_collection({rec("FR", "a", "IT", "b"), rec("US", "c", "FR", "a")}, opt);
  CHECK(c.graphs.size() == 2);
  CHECK(c.graph("Rest").edge_count() == 2);
  CHECK(c.graph("Rest").edge_cross_border[0] == 0);
  CHECK(c.graph("US").edge_count() == 1);
}
