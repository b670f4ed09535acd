#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "fedaml/error.hpp"
#include "fedaml/graph.hpp"
#include "fedaml/model.hpp"
#include "fedaml/synthetic.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace fedaml;
using testing_util::rec;

namespace {

Tensor random_matrix(std::mt19937_64& rng, std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t = Tensor::matrix(r, c);
  for (double& v : t.data()) v = u(rng);
  return t;
}

// Small graph tensors built by hand: binary undirected adjacency.
GraphTensors hand_graph(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& edges,
                        Tensor x, Tensor xe, std::vector<int> labels = {}) {
  GraphTensors g;
  std::vector<std::tuple<std::size_t, std::size_t, double>> a, ai;
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (auto [s, d] : edges) {
    g.src.push_back(s);
    g.dst.push_back(d);
    if (s != d) {
      seen.insert({s, d});
      seen.insert({d, s});
    }
  }
  for (auto [s, d] : seen) {
    a.emplace_back(s, d, 1.0);
    ai.emplace_back(s, d, 1.0);
  }
  for (std::size_t i = 0; i < n; ++i) ai.emplace_back(i, i, 1.0);
  auto adj = std::make_shared<CsrMatrix>(CsrMatrix::from_triplets(n, n, a));
  g.adjacency = adj;
  g.degree = std::make_shared<CsrMatrix>(CsrMatrix::diagonal(adj->row_sums()));
  g.propagation = std::make_shared<CsrMatrix>(CsrMatrix::from_triplets(n, n, ai));
  g.node_features = std::move(x);
  g.edge_features = std::move(xe);
  g.labels = labels.empty() ? std::vector<int>(edges.size(), 0) : std::move(labels);
  return g;
}

std::vector<double> flatten(const ModelParams& p) {
  std::vector<double> out;
  for (const auto& [name, t] : p) out.insert(out.end(), t.data().begin(), t.data().end());
  return out;
}

ModelParams unflatten(const ModelParams& shape, const std::vector<double>& x) {
  ModelParams out = shape;
  std::size_t k = 0;
  for (std::size_t i = 0; i < out.size(); ++i)
    for (double& v : out[i].second.data()) v = x[k++];
  return out;
}

// Dense reference for the ratio-cut loss.
double cut_oracle(const oracle::Matrix& a, const oracle::Matrix& m, double beta) {
  const std::size_t n = a.size(), c = m[0].size();
  double num = 0.0, den = 0.0, pen = 0.0;
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t i = 0; i < n; ++i) {
      double deg = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        num += m[i][k] * a[i][j] * m[j][k];
        deg += a[i][j];
      }
      den += m[i][k] * deg * m[i][k];
    }
  for (std::size_t p = 0; p < c; ++p)
    for (std::size_t q = 0; q < c; ++q) {
      double g = 0.0;
      for (std::size_t i = 0; i < n; ++i) g += m[i][p] * m[i][q];
      g -= p == q ? 1.0 : 0.0;
      pen += g * g;
    }
  return -num / den + beta * pen;
}

Tensor dense_to_tensor(const oracle::Matrix& m) {
  Tensor t = Tensor::matrix(m.size(), m[0].size());
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m[0].size(); ++j) t(i, j) = m[i][j];
  return t;
}

CsrMatrix dense_to_csr(const oracle::Matrix& m) {
  std::vector<std::tuple<std::size_t, std::size_t, double>> trip;
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m[i].size(); ++j)
      if (m[i][j] != 0.0) trip.emplace_back(i, j, m[i][j]);
  return CsrMatrix::from_triplets(m.size(), m[0].size(), trip);
}

GraphCollection small_collection(std::uint64_t seed) {
  DatasetSpec spec;
  spec.countries = {{"US", 12, 30, 6.0, 1.0}, {"DE", 10, 25, 6.0, 1.0}};
  spec.patterns = 2;
  spec.group_size_range = {4, 5};
  spec.seed = seed;
  return build_collection(generate_dataset(spec).records);
}

}  // namespace

TEST_CASE("encode") {
  SUBCASE("zero weights leave only the input block") {
    EncoderConfig cfg;
    cfg.input_dim = 2;
    cfg.edge_feature_dim = 1;
    cfg.hidden_dim = 3;
    cfg.layers = 2;
    ModelParams p = init_params(cfg, 1);
    for (auto& [name, t] : p) std::fill(t.storage().begin(), t.storage().end(), 0.0);
    const auto g = hand_graph(3, {{0, 1}, {1, 2}}, Tensor::from_rows({{1, 2}, {3, 4}, {5, 6}}), Tensor::matrix(2, 1));
    const Tensor h = encode(g, p, cfg);
    REQUIRE(h.cols() == 2 + 2 * 3);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(h(i, 0) == g.node_features(i, 0));
      CHECK(h(i, 1) == g.node_features(i, 1));
      for (std::size_t j = 2; j < h.cols(); ++j) CHECK(h(i, j) == 0.0);
    }
  }
  SUBCASE("one node, identity weights, non-negative input") {
    EncoderConfig cfg;
    cfg.input_dim = 2;
    cfg.hidden_dim = 2;
    cfg.layers = 1;
    cfg.edge_feature_dim = 1;
    ModelParams p = init_params(cfg, 1);
    p.at("encoder.W0") = Tensor::identity(2);
    const auto g = hand_graph(1, {}, Tensor::from_rows({{0.5, 2.0}}), Tensor::matrix(0, 1));
    const Tensor h = encode(g, p, cfg);
    CHECK(h(0, 2) == 0.5);
    CHECK(h(0, 3) == 2.0);
  }
  SUBCASE("two nodes a -> b against a hand product") {
    EncoderConfig cfg;
    cfg.input_dim = 2;
    cfg.hidden_dim = 2;
    cfg.layers = 1;
    cfg.edge_feature_dim = 1;
    ModelParams p = init_params(cfg, 1);
    p.at("encoder.W0") = Tensor::from_rows({{1.0, -1.0}, {0.5, 2.0}});
    const auto g = hand_graph(2, {{0, 1}}, Tensor::from_rows({{1.0, 2.0}, {3.0, 0.0}}), Tensor::matrix(1, 1));
    const Tensor h = encode(g, p, cfg);
    // (A + I) = [[1,1],[1,1]]; XW = [[2, 3], [3, -3]]; sum = [5, 0] per row.
    CHECK(h(1, 2) == 5.0);
    CHECK(h(1, 3) == 0.0);
    CHECK(h(0, 2) == 5.0);
  }
  SUBCASE("feature width mismatch") {
    EncoderConfig cfg;
    cfg.input_dim = 3;
    cfg.edge_feature_dim = 1;
    const ModelParams p = init_params(cfg, 1);
    const auto g = hand_graph(1, {}, Tensor::matrix(1, 2), Tensor::matrix(0, 1));
    CHECK_THROWS_AS(encode(g, p, cfg), UsageError);
  }
}

TEST_CASE("edge embedding") {
  const Tensor h = Tensor::from_rows({{1.0}, {3.0}});
  const std::vector<double> xe{7.0};
  CHECK(edge_embed(h, 0, 1, xe) == std::vector<double>{1.0, 2.0, 7.0});
  CHECK(edge_embed(h, 1, 1, xe) == std::vector<double>{3.0, 0.0, 7.0});
  const auto fwd = edge_embed(h, 0, 1, xe);
  const auto rev = edge_embed(h, 1, 0, xe);
  CHECK(rev[1] == -fwd[1]);
}

TEST_CASE("edge prediction") {
  EncoderConfig cfg;
  cfg.input_dim = 2;
  cfg.hidden_dim = 2;
  cfg.layers = 1;
  cfg.edge_feature_dim = 1;
  cfg.mlp_hidden = {};
  const auto g = hand_graph(3, {{0, 1}, {1, 2}, {2, 0}}, Tensor::from_rows({{1, 0}, {0, 1}, {1, 1}}),
                            Tensor::from_rows({{0.2}, {0.5}, {0.9}}));
  ModelParams p = init_params(cfg, 4);

  SUBCASE("zero head gives one half") {
    ModelParams z = p;
    std::fill(z.at("head.W0").storage().begin(), z.at("head.W0").storage().end(), 0.0);
    for (double y : predict_edges(g, z, cfg)) CHECK(y == 0.5);
  }
  SUBCASE("raising the bias raises every score") {
    const auto before = predict_edges(g, p, cfg);
    ModelParams q = p;
    q.at("head.b0")[0] += 0.3;
    const auto after = predict_edges(g, q, cfg);
    for (std::size_t e = 0; e < 3; ++e) CHECK(after[e] > before[e]);
  }
  SUBCASE("matches a hand-rolled forward pass") {
    const Tensor& w = p.at("encoder.W0");
    // H1 = relu((A + I) X W) with A + I the all-ones 3x3 (triangle).
    double colsum[2] = {2, 2};
    Tensor h = Tensor::matrix(3, 4);
    for (std::size_t i = 0; i < 3; ++i) {
      h(i, 0) = g.node_features(i, 0);
      h(i, 1) = g.node_features(i, 1);
      for (std::size_t c = 0; c < 2; ++c)
        h(i, 2 + c) = std::max(0.0, colsum[0] * w(0, c) + colsum[1] * w(1, c));
    }
    const auto got = predict_edges(g, p, cfg);
    for (std::size_t e = 0; e < 3; ++e) {
      const auto z = edge_embed(h, g.src[e], g.dst[e], g.edge_features.row_span(e));
      double a = p.at("head.b0")[0];
      for (std::size_t k = 0; k < z.size(); ++k) a += z[k] * p.at("head.W0")(k, 0);
      CHECK(got[e] == doctest::Approx(1.0 / (1.0 + std::exp(-a))).epsilon(1e-14));
    }
  }
}

TEST_CASE("bce loss") {
  const std::vector<int> y{1, 0};
  CHECK(bce_loss(std::vector<double>{1.0, 0.0}, y) < 1e-11);
  CHECK(bce_loss(std::vector<double>{0.5, 0.5}, y) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK(bce_loss(std::vector<double>{0.9}, std::vector<int>{1}) == doctest::Approx(0.1053605157).epsilon(1e-9));
  CHECK_THROWS_AS(bce_loss(std::vector<double>{0.5}, y), UsageError);
}

TEST_CASE("focal loss") {
  CHECK(focal_loss(std::vector<double>{0.9}, std::vector<int>{1}, 0.25, 2.0) ==
        doctest::Approx(0.25 * 0.01 * -std::log(0.9)).epsilon(1e-12));
  CHECK(focal_loss(std::vector<double>{0.9}, std::vector<int>{1}, 0.25, 2.0) == doctest::Approx(2.634e-4).epsilon(1e-3));
  // Confident correct positives contribute less.
  for (double gamma : {0.5, 1.0, 2.0, 5.0}) {
    CHECK(focal_loss(std::vector<double>{0.95}, std::vector<int>{1}, 0.25, gamma) <
          focal_loss(std::vector<double>{0.6}, std::vector<int>{1}, 0.25, gamma));
  }
}

TEST_CASE("property: focal with gamma 0 and alpha one half is half of bce") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> p(30);
    std::vector<int> y(30);
    for (std::size_t i = 0; i < 30; ++i) {
      p[i] = u(rng);
      y[i] = u(rng) < 0.3;
    }
    CHECK(std::abs(focal_loss(p, y, 0.5, 0.0) - 0.5 * bce_loss(p, y)) <= 1e-12);
  }
}

TEST_CASE("graph cut loss") {
  SUBCASE("two disconnected cliques with the indicator membership") {
    oracle::Matrix a = oracle::zeros(6, 6), m = oracle::zeros(6, 2);
    for (std::size_t i = 0; i < 6; ++i) {
      m[i][i / 3] = 1.0;
      for (std::size_t j = 0; j < 6; ++j)
        if (i != j && i / 3 == j / 3) a[i][j] = 1.0;
    }
    CHECK(graph_cut_loss(dense_to_csr(a), dense_to_tensor(m), 0.0) == doctest::Approx(-1.0).epsilon(1e-15));
  }
  SUBCASE("orthonormal columns carry no penalty") {
    const oracle::Matrix a{{0, 1}, {1, 0}};
    const oracle::Matrix m{{1, 0}, {0, 1}};
    CHECK(graph_cut_loss(dense_to_csr(a), dense_to_tensor(m), 3.0) == graph_cut_loss(dense_to_csr(a), dense_to_tensor(m), 0.0));
  }
  SUBCASE("uniform membership against the trace oracle") {
    const oracle::Matrix a{{0, 1, 1, 0}, {1, 0, 1, 0}, {1, 1, 0, 1}, {0, 0, 1, 0}};
    const oracle::Matrix m(4, std::vector<double>(3, 1.0 / 3.0));
    for (double beta : {0.0, 0.5, 2.0})
      CHECK(graph_cut_loss(dense_to_csr(a), dense_to_tensor(m), beta) ==
            doctest::Approx(cut_oracle(a, m, beta)).epsilon(1e-14));
    CHECK(cut_oracle(a, m, 0.0) == doctest::Approx(-1.0).epsilon(1e-14));
  }
  SUBCASE("random soft memberships against the trace oracle") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
      oracle::Matrix a = oracle::zeros(6, 6), m = oracle::zeros(6, 3);
      for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = i + 1; j < 6; ++j)
          if (u(rng) < 0.5) a[i][j] = a[j][i] = 1.0;
      a[0][1] = a[1][0] = 1.0;
      for (auto& row : m) {
        double s = 0.0;
        for (double& v : row) s += v = u(rng) + 0.01;
        for (double& v : row) v /= s;
      }
      CHECK(graph_cut_loss(dense_to_csr(a), dense_to_tensor(m), 0.7) ==
            doctest::Approx(cut_oracle(a, m, 0.7)).epsilon(1e-12));
    }
  }
  SUBCASE("isolated nodes only") {
    CHECK_THROWS_AS(graph_cut_loss(CsrMatrix::from_triplets(3, 3, {}), Tensor::matrix(3, 2, 0.5), 0.0), NumericalError);
  }
}

TEST_CASE("self-consistency loss") {
  Tape t;
  const Var home = t.leaf(Tensor::from_rows({{0.0, 0.0}}));
  CHECK(self_consistency_loss(home, Tensor::from_rows({{0.0, 0.0}})).value().item() == 0.0);
  CHECK(self_consistency_loss(home, Tensor::from_rows({{1.0, 1.0}})).value().item() == 2.0);
  const Var h2 = t.leaf(Tensor::from_rows({{1.0, -2.0}, {0.5, 3.0}}));
  const Var h4 = t.leaf(Tensor::from_rows({{2.0, -4.0}, {1.0, 6.0}}));
  const Tensor f2 = Tensor::from_rows({{0.0, 1.0}, {2.0, 2.0}});
  const Tensor f4 = Tensor::from_rows({{0.0, 2.0}, {4.0, 4.0}});
  CHECK(self_consistency_loss(h4, f4).value().item() == 4.0 * self_consistency_loss(h2, f2).value().item());
  CHECK_THROWS_AS(self_consistency_loss(home, Tensor::matrix(2, 2)), UsageError);

  SUBCASE("registry form") {
    const auto c = build_collection({rec("US", "a", "DE", "b"), rec("US", "a", "US", "c")});
    std::map<std::string, Tensor> emb;
    for (const auto& [name, g] : c.graphs) emb[name] = Tensor::matrix(g.node_count(), 2, 1.0);
    CHECK(self_consistency_loss(c.supernodes, emb) == 0.0);
    // The US side of the entry averages DE:b and US:c; the DE side is US:a.
    const auto& us = c.graph("US");
    emb["US"](*us.find("US:c"), 0) = 3.0;
    CHECK(self_consistency_loss(c.supernodes, emb) == doctest::Approx(1.0));
    emb.erase("DE");
    CHECK_THROWS_AS(self_consistency_loss(c.supernodes, emb), DataError);
  }
}

TEST_CASE("total loss composition") {
  const GraphCollection c = small_collection(3);
  const auto& g = c.graph("US");
  const GraphTensors gt = prepare(g, &c.supernodes);
  EncoderConfig cfg;
  cfg.hidden_dim = 4;
  cfg.mlp_hidden = {4};
  const ModelParams p = init_params(cfg, 2);

  LossConfig none;
  none.lambda1 = none.lambda2 = 0.0;
  Tape t1;
  const auto pass1 = forward(t1, gt, p, cfg);
  const auto terms1 = total_loss(pass1, gt, none);
  CHECK(terms1.total.value().item() == terms1.classification.value().item());
  CHECK(!terms1.cut);
  std::vector<double> preds(pass1.predictions.value().data().begin(), pass1.predictions.value().data().end());
  CHECK(terms1.total.value().item() == doctest::Approx(focal_loss(preds, g.edge_labels, 0.25, 2.0)).epsilon(1e-14));

  LossConfig cut = none;
  cut.lambda1 = 1.0;
  Tape t2;
  const auto pass2 = forward(t2, gt, p, cfg);
  const auto terms2 = total_loss(pass2, gt, cut);
  REQUIRE(terms2.cut);
  CHECK(terms2.total.value().item() ==
        doctest::Approx(terms2.classification.value().item() + terms2.cut->value().item()).epsilon(1e-14));
  CHECK(terms2.cut->value().item() ==
        doctest::Approx(graph_cut_loss(binary_adjacency(g, false), pass2.membership.value(), cut.beta)).epsilon(1e-12));
}

TEST_CASE("property: total loss gradient matches finite differences") {
  std::mt19937_64 rng(41);
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    const GraphCollection c = small_collection(seed);
    for (const std::string country : {"US", "DE"}) {
      const auto& g = c.graph(country);
      const GraphTensors gt = prepare(g, &c.supernodes);
      EncoderConfig cfg;
      cfg.hidden_dim = 3;
      cfg.layers = 2;
      cfg.mlp_hidden = {3};
      cfg.membership_clusters = 3;
      const ModelParams p0 = init_params(cfg, seed);
      const std::size_t rows = c.supernodes.entries_for(country).size();
      const Tensor foreign = random_matrix(rng, rows, cfg.embedding_dim(), 0.0, 1.0);
      LossConfig loss;
      loss.lambda1 = 0.5;
      loss.lambda2 = 0.3;
      loss.classifier = seed % 2 ? ClassificationLoss::kFocal : ClassificationLoss::kBce;

      Tape tape;
      const auto pass = forward(tape, gt, p0, cfg);
      const auto terms = total_loss(pass, gt, loss, &foreign);
      REQUIRE(terms.consistency);
      tape.backward(terms.total);
      std::vector<double> analytic;
      for (const Var& v : pass.params) {
        const Tensor& gr = tape.grad(v);
        analytic.insert(analytic.end(), gr.data().begin(), gr.data().end());
      }
      auto f = [&](const std::vector<double>& x) {
        Tape t;
        const auto ps = forward(t, gt, unflatten(p0, x), cfg);
        return total_loss(ps, gt, loss, &foreign).total.value().item();
      };
      const auto x0 = flatten(p0);
      double worst = 0.0;
      for (std::size_t i = 0; i < x0.size(); i += 3)
        worst = std::max(worst, oracle::relative_error(analytic[i], oracle::central_difference(f, x0, i)));
      CAPTURE(seed);
      CAPTURE(country);
      CHECK(worst < 1e-4);
    }
  }
}

TEST_CASE("property: relabelling nodes permutes embeddings and keeps losses") {
  EncoderConfig cfg;
  cfg.input_dim = 3;
  cfg.edge_feature_dim = 2;
  cfg.hidden_dim = 4;
  cfg.mlp_hidden = {5};
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 7;
    std::vector<std::pair<std::size_t, std::size_t>> edges{{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6}, {6, 4}, {2, 5}};
    const Tensor x = random_matrix(rng, n, 3, 0.0, 1.0);
    const Tensor xe = random_matrix(rng, edges.size(), 2, 0.0, 1.0);
    std::vector<int> labels{1, 0, 0, 1, 0, 0, 1, 0};
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::pair<std::size_t, std::size_t>> pedges;
    for (auto [s, d] : edges) pedges.emplace_back(perm[s], perm[d]);
    Tensor px = Tensor::matrix(n, 3);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < 3; ++j) px(perm[i], j) = x(i, j);

    const auto g = hand_graph(n, edges, x, xe, labels);
    const auto pg = hand_graph(n, pedges, px, xe, labels);
    const ModelParams p = init_params(cfg, static_cast<std::uint64_t>(trial));
    const Tensor h = encode(g, p, cfg);
    const Tensor ph = encode(pg, p, cfg);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < h.cols(); ++j) CHECK(ph(perm[i], j) == doctest::Approx(h(i, j)).epsilon(1e-12));

    LossConfig loss;
    loss.lambda1 = 1.0;
    Tape t1, t2;
    const double l1 = total_loss(forward(t1, g, p, cfg), g, loss).total.value().item();
    const double l2 = total_loss(forward(t2, pg, p, cfg), pg, loss).total.value().item();
    CHECK(l1 == doctest::Approx(l2).epsilon(1e-12));
  }
}

TEST_CASE("property: predictions stay strictly inside (0, 1)") {
  EncoderConfig cfg;
  const GraphCollection c = small_collection(5);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ModelParams p = init_params(cfg, seed);
    for (double& v : p.at("head.b1").storage()) v = seed % 2 ? 800.0 : -800.0;
    for (const auto& [name, g] : c.graphs) {
      const auto y = predict_edges(g, p, cfg);
      Tape t;
      const GraphTensors gt = prepare(g);
      const double l = total_loss(forward(t, gt, p, cfg), gt, LossConfig{}).total.value().item();
      CHECK(std::isfinite(l));
      for (double v : y) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
    }
  }
}

TEST_CASE("config validation") {
  EncoderConfig e;
  e.layers = 0;
  CHECK_THROWS_AS(e.validate(), UsageError);
  e = EncoderConfig{};
  e.membership_clusters = 1;
  CHECK_THROWS_AS(e.validate(), UsageError);
  LossConfig l;
  l.alpha = 1.5;
  CHECK_THROWS_AS(l.validate(), UsageError);
  l = LossConfig{};
  l.lambda2 = -1.0;
  CHECK_THROWS_AS(l.validate(), UsageError);
}
