#include <cmath>
#include <random>

#include "doctest.h"
#include "grad_harness.hpp"
#include "graph_oracle.hpp"
#include "kpgnn/encoder.hpp"
#include "kpgnn/random.hpp"

using namespace kpgnn;
using namespace kpgnn::encoder;
using ingest::ElementSet;
using tensor::Matrix;

namespace {

double elu(double x) { return x > 0 ? x : std::expm1(x); }
double leaky(double x) { return x > 0 ? x : 0.2 * x; }

graph::MessageGraph build(const std::vector<ElementSet>& elems, std::size_t dim, std::uint64_t seed) {
  auto prepared = oracle::prepare(elems, 0, "n", dim);
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd;
  for (auto& p : prepared)
    for (double& v : p.features) v = nd(gen);
  graph::MessageGraph g;
  g.insert_block(prepared);
  return g;
}

// Whole-graph forward with plain loops, every neighbor included.
Matrix dense_forward(const graph::MessageGraph& g, const EncoderParams& p) {
  const auto& cfg = p.config;
  const std::size_t n = g.size(), k = cfg.head_width();
  std::vector<std::vector<double>> h(n);
  for (std::size_t i = 0; i < n; ++i) h[i].assign(g.features().row(i).begin(), g.features().row(i).end());
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    std::vector<std::vector<double>> next(n, std::vector<double>(cfg.hidden, 0.0));
    for (std::size_t head = 0; head < cfg.heads; ++head) {
      const Matrix& W = p.projection(l, head);
      const Matrix& a = p.attention(l, head);
      std::vector<std::vector<double>> z(n, std::vector<double>(k, 0.0));
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < k; ++c)
          for (std::size_t r = 0; r < W.rows(); ++r) z[i][c] += h[i][r] * W(r, c);
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::size_t> nb{i};
        for (std::size_t j : g.neighbors(i)) nb.push_back(j);
        std::vector<double> e;
        for (std::size_t j : nb) {
          double s = 0;
          for (std::size_t c = 0; c < k; ++c) s += a(c, 0) * z[i][c] + a(k + c, 0) * z[j][c];
          e.push_back(leaky(s));
        }
        const double mx = *std::max_element(e.begin(), e.end());
        double tot = 0;
        for (double& v : e) tot += (v = std::exp(v - mx));
        for (std::size_t q = 0; q < nb.size(); ++q)
          for (std::size_t c = 0; c < k; ++c) next[i][head * k + c] += e[q] / tot * z[nb[q]][c];
      }
    }
    if (l + 1 < cfg.layers)
      for (auto& row : next)
        for (double& v : row) v = elu(v);
    h = std::move(next);
  }
  Matrix out(n, cfg.hidden);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < cfg.hidden; ++c) out(i, c) = h[i][c];
  return out;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  REQUIRE(a.same_shape(b));
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

std::vector<std::size_t> all_nodes(const graph::MessageGraph& g) {
  std::vector<std::size_t> v(g.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = i;
  return v;
}

}  // namespace

TEST_CASE("fan-out above degree keeps every neighbor") {
  const std::vector<std::size_t> nb{2, 5, 9};
  CHECK(sample_neighbors(nb, 800, 1) == nb);
  CHECK(sample_neighbors({}, 800, 1).empty());
}

TEST_CASE("seeded neighbor sampling replays") {
  const std::vector<std::size_t> nb{10, 11, 12, 13, 14, 15, 16, 17, 18, 19};
  const std::uint64_t seed = neighbor_seed(7, 1, 3);
  // partial Fisher-Yates, mt19937_64 draws rejected above the last full multiple
  std::mt19937_64 eng(seed);
  auto pool = nb;
  for (std::size_t i = 0; i < 4; ++i) {
    const std::uint64_t bound = pool.size() - i;
    const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % bound);
    std::uint64_t x = eng();
    while (x >= limit) x = eng();
    std::swap(pool[i], pool[i + x % bound]);
  }
  pool.resize(4);
  std::sort(pool.begin(), pool.end());
  const auto got = sample_neighbors(nb, 4, seed);
  CHECK(got == pool);
  CHECK(got == sample_neighbors(nb, 4, seed));
  CHECK(got.size() == 4);
}

TEST_CASE("sampled lists are bounded true neighbors") {
  std::mt19937_64 gen(3);
  auto g = build(oracle::random_incidence(40, 10, 0.3, gen), 3, 1);
  const std::vector<std::size_t> seeds{0, 5, 17, 33};
  const std::vector<std::size_t> fan{3, 2};
  auto sg = sample_subgraph(g, seeds, fan, 11);
  CHECK(sg.layer_nodes.back() == seeds);
  for (std::size_t l = 1; l <= 2; ++l) {
    const auto& targets = sg.layer_nodes[l];
    for (std::size_t t = 0; t < targets.size(); ++t) {
      const auto& s = sg.sampled[l - 1][t];
      CHECK(s.size() == std::min(fan[l - 1], g.degree(targets[t])));
      for (std::size_t v : s) {
        auto nb = g.neighbors(targets[t]);
        CHECK(std::binary_search(nb.begin(), nb.end(), v));
      }
      // self edge first
      CHECK(sg.edges[l - 1].source[sg.edges[l - 1].offsets[t]] == t);
    }
    // targets are a prefix of the layer below
    CHECK(std::equal(targets.begin(), targets.end(), sg.layer_nodes[l - 1].begin()));
  }
  const std::vector<std::size_t> dup{1, 1};
  CHECK_THROWS_AS(sample_subgraph(g, dup, fan, 1), ConfigError);
}

TEST_CASE("isolated seed gives a one-node subgraph") {
  auto g = build({{{"a"}, {}, {}}, {{"a"}, {}, {}}, {{"zz"}, {}, {}}}, 2, 1);
  const std::vector<std::size_t> seeds{2};
  const std::vector<std::size_t> fan{800, 800};
  auto sg = sample_subgraph(g, seeds, fan, 1);
  CHECK(sg.input_nodes() == seeds);
}

TEST_CASE("zero attention vector averages the closed neighborhood") {
  auto g = build({{{"a"}, {}, {}}, {{"a", "b"}, {}, {}}, {{"b"}, {}, {}}, {{"a"}, {}, {}}}, 3, 4);
  EncoderConfig cfg{3, 4, 1, 1};
  auto p = EncoderParams::initialize(cfg, 2);
  p.mutable_tensor(EncoderParams::attention_name(0, 0)) = Matrix(8, 1, 0.0);
  const std::vector<std::size_t> fan{800};
  auto nodes = all_nodes(g);
  auto h = encode(g, nodes, p, fan, 1);
  const Matrix z = tensor::matmul(g.features(), p.projection(0, 0));
  for (std::size_t i = 0; i < g.size(); ++i) {
    std::vector<std::size_t> closed{i};
    for (auto j : g.neighbors(i)) closed.push_back(j);
    for (std::size_t c = 0; c < 4; ++c) {
      double s = 0;
      for (auto j : closed) s += z(j, c);
      CHECK(h(i, c) == doctest::Approx(s / closed.size()).epsilon(1e-12));
    }
  }
}

TEST_CASE("isolated node is two stacked self transforms") {
  auto g = build({{{"a"}, {}, {}}, {{"a"}, {}, {}}, {{"zz"}, {}, {}}}, 5, 9);
  EncoderConfig cfg;
  cfg.input_dim = 5;
  auto p = EncoderParams::initialize(cfg, 3);
  const std::vector<std::size_t> node{2}, fan{800, 800};
  auto h = encode(g, node, p, fan, 1);
  Matrix x(1, 5);
  for (std::size_t c = 0; c < 5; ++c) x(0, c) = g.features()(2, c);
  Matrix h1(1, 32);
  for (std::size_t head = 0; head < 4; ++head) {
    auto z = tensor::matmul(x, p.projection(0, head));
    for (std::size_t c = 0; c < 8; ++c) h1(0, head * 8 + c) = elu(z(0, c));
  }
  Matrix h2(1, 32);
  for (std::size_t head = 0; head < 4; ++head) {
    auto z = tensor::matmul(h1, p.projection(1, head));
    for (std::size_t c = 0; c < 8; ++c) h2(0, head * 8 + c) = z(0, c);
  }
  CHECK(max_abs_diff(h, h2) < 1e-12);
}

TEST_CASE("three-node path against a scalar oracle") {
  // 0 - 1 - 2
  auto g = build({{{"a"}, {}, {}}, {{"a", "b"}, {}, {}}, {{"b"}, {}, {}}}, 1, 0);
  g.set_features(Matrix{{0.5}, {-1.25}, {2.0}});
  EncoderConfig cfg{1, 1, 1, 2};
  auto p = EncoderParams::initialize(cfg, 0);
  const double w0 = 0.8, a0s = 0.3, a0n = -0.6, w1 = -1.5, a1s = 0.45, a1n = 0.7;
  p.mutable_tensor(EncoderParams::projection_name(0, 0)) = Matrix{{w0}};
  p.mutable_tensor(EncoderParams::attention_name(0, 0)) = Matrix{{a0s}, {a0n}};
  p.mutable_tensor(EncoderParams::projection_name(1, 0)) = Matrix{{w1}};
  p.mutable_tensor(EncoderParams::attention_name(1, 0)) = Matrix{{a1s}, {a1n}};

  const double x[3] = {0.5, -1.25, 2.0};
  const std::vector<std::vector<int>> closed{{0, 1}, {1, 0, 2}, {2, 1}};
  auto layer = [&](const double* in, double w, double as, double an, bool last, double* out) {
    double z[3];
    for (int i = 0; i < 3; ++i) z[i] = w * in[i];
    for (int i = 0; i < 3; ++i) {
      double e[3], tot = 0;
      for (std::size_t q = 0; q < closed[i].size(); ++q) {
        e[q] = std::exp(leaky(as * z[i] + an * z[closed[i][q]]));
        tot += e[q];
      }
      double s = 0;
      for (std::size_t q = 0; q < closed[i].size(); ++q) s += e[q] / tot * z[closed[i][q]];
      out[i] = last ? s : elu(s);
    }
  };
  double h1[3], h2[3];
  layer(x, w0, a0s, a0n, false, h1);
  layer(h1, w1, a1s, a1n, true, h2);

  const std::vector<std::size_t> fan{800, 800};
  auto h = encode(g, all_nodes(g), p, fan, 5);
  for (int i = 0; i < 3; ++i) CHECK(std::abs(h(i, 0) - h2[i]) < 1e-12);
}

TEST_CASE("full fan-out encode equals the dense whole-graph oracle") {
  std::mt19937_64 gen(12);
  auto g = build(oracle::random_incidence(12, 14, 0.2, gen), 6, 12);
  EncoderConfig cfg;
  cfg.input_dim = 6;
  auto p = EncoderParams::initialize(cfg, 8);
  const std::vector<std::size_t> fan{g.max_degree() + 1, g.max_degree() + 1};
  auto h = encode(g, all_nodes(g), p, fan, 99);
  CHECK(max_abs_diff(h, dense_forward(g, p)) < 1e-12);
  // sampling degenerates: any seed gives the same result
  CHECK(encode(g, all_nodes(g), p, fan, 1) == h);
}

TEST_CASE("permuting the node set permutes the rows") {
  std::mt19937_64 gen(21);
  auto g = build(oracle::random_incidence(15, 12, 0.2, gen), 4, 2);
  EncoderConfig cfg;
  cfg.input_dim = 4;
  auto p = EncoderParams::initialize(cfg, 4);
  const std::vector<std::size_t> fan{3, 3};
  std::vector<std::size_t> order{4, 0, 11, 7, 2};
  auto h = encode(g, order, p, fan, 6);
  std::vector<std::size_t> perm{3, 1, 4, 0, 2};
  std::vector<std::size_t> reordered;
  for (auto k : perm) reordered.push_back(order[k]);
  auto hp = encode(g, reordered, p, fan, 6);
  for (std::size_t r = 0; r < perm.size(); ++r)
    for (std::size_t c = 0; c < 32; ++c) CHECK(hp(r, c) == doctest::Approx(h(perm[r], c)).epsilon(1e-13));
  CHECK(encode(g, std::vector<std::size_t>{}, p, fan, 6).rows() == 0);
  // duplicates reuse one row
  auto hd = encode(g, std::vector<std::size_t>{7, 7}, p, fan, 6);
  CHECK(std::equal(hd.row(0).begin(), hd.row(0).end(), hd.row(1).begin()));
}

TEST_CASE("corruption equals encoding explicitly permuted features") {
  auto g = build({{{"a"}, {}, {}}, {{"a", "b"}, {}, {}}, {{"b", "c"}, {}, {}},
                  {{"c"}, {}, {}}, {{"c", "d"}, {}, {}}, {{"d", "a"}, {}, {}}},
                 3, 30);
  EncoderConfig cfg;
  cfg.input_dim = 3;
  auto p = EncoderParams::initialize(cfg, 31);
  const std::vector<std::size_t> fan{800, 800};
  const auto nodes = all_nodes(g);
  const std::uint64_t cseed = 77;
  auto hc = encode_corrupted(g, nodes, p, fan, 5, cseed);

  auto sg = sample_subgraph(g, nodes, fan, 5);
  REQUIRE(sg.input_nodes().size() == 6);
  const auto perm = corruption_permutation(6, cseed);
  Matrix shuffled(6, 3);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t c = 0; c < 3; ++c)
      shuffled(sg.input_nodes()[i], c) = g.features()(sg.input_nodes()[perm[i]], c);
  auto g2 = g;
  g2.set_features(shuffled);
  CHECK(max_abs_diff(hc, encode(g2, nodes, p, fan, 5)) < 1e-12);
  CHECK(hc != encode(g, nodes, p, fan, 5));
}

TEST_CASE("constant features make corruption a no-op") {
  std::mt19937_64 gen(2);
  auto g = build(oracle::random_incidence(8, 8, 0.3, gen), 3, 1);
  g.set_features(Matrix(8, 3, 0.7));
  EncoderConfig cfg;
  cfg.input_dim = 3;
  auto p = EncoderParams::initialize(cfg, 1);
  const std::vector<std::size_t> fan{800, 800};
  CHECK(encode_corrupted(g, all_nodes(g), p, fan, 3, 4) == encode(g, all_nodes(g), p, fan, 3));
}

TEST_CASE("attention coefficients sum to one") {
  std::mt19937_64 gen(8);
  auto g = build(oracle::random_incidence(20, 12, 0.25, gen), 4, 8);
  EncoderConfig cfg;
  cfg.input_dim = 4;
  auto p = EncoderParams::initialize(cfg, 8);
  const std::vector<std::size_t> fan{5, 5};
  auto nodes = all_nodes(g);
  auto sg = sample_subgraph(g, nodes, fan, 2);
  tensor::Tape tape;
  auto bound = bind(tape, p, false);
  std::vector<LayerTrace> traces;
  forward(tape, sg, input_features(g, sg), bound, &traces);
  REQUIRE(traces.size() == 2);
  for (std::size_t l = 0; l < 2; ++l) {
    const auto& off = sg.edges[l].offsets;
    REQUIRE(traces[l].attention.size() == 4);
    for (const auto& alpha : traces[l].attention)
      for (std::size_t t = 0; t + 1 < off.size(); ++t) {
        double s = 0;
        for (std::size_t e = off[t]; e < off[t + 1]; ++e) s += alpha(e, 0);
        CHECK(std::abs(s - 1.0) < 1e-12);
      }
  }
}

TEST_CASE("an isolated newcomer leaves other embeddings untouched") {
  std::mt19937_64 gen(17);
  auto elems = oracle::random_incidence(10, 10, 0.25, gen);
  auto g = build(elems, 4, 5);
  EncoderConfig cfg;
  cfg.input_dim = 4;
  auto p = EncoderParams::initialize(cfg, 5);
  const std::vector<std::size_t> fan{800, 800};
  auto before = encode(g, all_nodes(g), p, fan, 1);
  auto extra = oracle::prepare({{{"never-seen"}, {}, {}}}, 1, "new", 4);
  g.insert_block(extra);
  auto after = encode(g, all_nodes(g), p, fan, 1);
  for (std::size_t i = 0; i < 10; ++i)
    CHECK(std::equal(before.row(i).begin(), before.row(i).end(), after.row(i).begin()));
}

TEST_CASE("encoder configuration checks") {
  CHECK_THROWS_AS((EncoderConfig{4, 30, 4, 2}.validate()), ConfigError);
  CHECK_THROWS_AS((EncoderConfig{0, 32, 4, 2}.validate()), ConfigError);
  CHECK_THROWS_AS((EncoderConfig{4, 32, 4, 0}.validate()), ConfigError);
  auto p = EncoderParams::initialize({4, 32, 4, 2}, 1);
  CHECK(p.projection(0, 0).rows() == 4);
  CHECK(p.projection(1, 3).rows() == 32);
  CHECK(p.projection(1, 3).cols() == 8);
  CHECK(p.attention(0, 2).rows() == 16);
  CHECK(p.discriminator().rows() == 32);
  const double bound = std::sqrt(6.0 / (4 + 8));
  for (double v : p.projection(0, 1).data()) CHECK(std::abs(v) <= bound);
  CHECK(EncoderParams::initialize({4, 32, 4, 2}, 1).params.size() == p.params.size());
}

TEST_CASE("encoder and loss gradients match finite differences") {
  for (std::uint64_t seed : {101u, 102u}) {
    auto r = oracle::encoder_grad_check(seed);
    CHECK(r.worst < 1e-4);
    CHECK(r.entries > 2000);
  }
}
