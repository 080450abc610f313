#include "doctest.h"

#include <cmath>
#include <numeric>
#include <random>

#include "support/gradcheck.hpp"
#include "support/micro.hpp"
#include "transgrec/adam.hpp"
#include "transgrec/gnn.hpp"

using namespace transgrec;
using nk::Tensor;
using Td = Tensor<double>;
using Vd = nk::Var<double>;

namespace {

GnnParams<double> identity_params(std::size_t m, std::size_t n, std::size_t d, std::size_t layers) {
  GnnParams<double> p;
  p.user_emb = Td({m, d});
  p.item_emb = Td({n, d});
  p.reduce = Td::identity(d);
  for (std::size_t k = 0; k < layers; ++k) {
    p.user_weights.push_back(Td::identity(d));
    p.item_weights.push_back(Td::identity(d));
  }
  return p;
}

}  // namespace

TEST_CASE("fuse_item examples") {
  const Td w = Td::matrix({{1, 0}, {0, 2}});
  auto r = fuse_item(Td::vector({1, 1}), Td::vector({1, 1}), w);
  CHECK(r.fused == Td::vector({2, 3}));
  CHECK(r.content == Td::vector({1, 2}));
  r = fuse_item(Td::vector({0, 0}), Td::vector({0.5, -4}), w);
  CHECK(r.fused == Td::vector({0.5, -4}));
  r = fuse_item(Td::vector({7, -1}), Td::vector({0, 0}), Td::identity(2));
  CHECK(r.fused == Td::vector({7, -1}));
  CHECK_THROWS_AS(fuse_item(Td::vector({1, 1, 1}), Td::vector({0, 0}), w), ShapeError);
}

TEST_CASE("propagate examples") {
  const auto g = micro::make_graph(1, 2, {{0, 0}});
  auto p = identity_params(1, 2, 2, 1);
  p.user_emb = Td::matrix({{1, 2}});
  p.item_emb = Td::matrix({{0.5, 0.5}, {-1, 3}});
  const Td f = Td::matrix({{1, 0}, {0, 1}});

  SUBCASE("K=0 keeps layer-0 embeddings") {
    auto p0 = p;
    p0.user_weights.clear();
    p0.item_weights.clear();
    const auto s = propagate(g, p0, f, {0, nk::Pooling::mean, nk::Activation::identity});
    CHECK(s.user_final() == p.user_emb);
    CHECK(s.item_final() == Td::matrix({{1.5, 0.5}, {-1, 4}}));
  }
  SUBCASE("single edge, identity weights and activation") {
    const auto s = propagate(g, p, f, {1, nk::Pooling::mean, nk::Activation::identity});
    // u1 = x + y0, v1 = y0 + x
    CHECK(s.user_final() == Td::matrix({{2.5, 2.5}}));
    CHECK(s.item_final()(0, 0) == 2.5);
    CHECK(s.item_final()(0, 1) == 2.5);
    // isolated item: pooled neighbor vector is zero
    CHECK(s.item_final()(1, 0) == -1.0);
    CHECK(s.item_final()(1, 1) == 4.0);
  }
  SUBCASE("isolated item under relu") {
    const auto s = propagate(g, p, f, {1, nk::Pooling::max, nk::Activation::relu});
    CHECK(s.item_final()(1, 0) == 0.0);
    CHECK(s.item_final()(1, 1) == 4.0);
  }
  SUBCASE("shape mismatch") {
    auto bad = p;
    bad.item_emb = Td({3, 2});
    CHECK_THROWS_AS(propagate(g, bad, f, {1, nk::Pooling::mean, nk::Activation::relu}), ShapeError);
  }
}

TEST_CASE("predict examples") {
  const double a[] = {1, 0}, b[] = {0, 1}, c[] = {1, 1}, u[] = {1, -1}, v[] = {2, 3};
  CHECK(predict<double>(a, b) == 0.0);
  CHECK(predict<double>(c, c) == 2.0);
  CHECK(predict<double>(u, v) == -1.0);
  const double three[] = {1, 2, 3};
  CHECK_THROWS_AS(predict<double>(a, three), ShapeError);
}

namespace {

/// BPR on a one-user, two-item graph where the final embeddings are set directly (K=0).
double bpr_value(const Td& user, const Td& items, double lambda) {
  const auto g = micro::make_graph(1, 2, {{0, 0}});
  nk::Tape<double> t;
  GnnVars<double> vars{t.leaf(user), t.leaf(Td({2, user.cols()})), t.leaf(Td({user.cols(), 1})), {}, {}};
  auto fwd = propagate(g, t.constant(Td({2, 1})), vars, {0, nk::Pooling::mean, nk::Activation::relu});
  fwd.items.back() = t.constant(items);
  const Triplet trip[] = {{0, 0, 1}};
  return bpr_loss(fwd, trip, vars, lambda).value()[0];
}

}  // namespace

TEST_CASE("bpr examples") {
  CHECK(bpr_value(Td::matrix({{0, 0}}), Td::matrix({{0, 0}, {0, 0}}), 0.0) == doctest::Approx(0.6931471805599453));
  CHECK(bpr_value(Td::matrix({{1, 0}}), Td::matrix({{1, 0}, {0, 0}}), 0.0) == doctest::Approx(0.31326168751822286));
  CHECK(bpr_value(Td::matrix({{1, 0}}), Td::matrix({{60, 0}, {-60, 0}}), 0.0) < 1e-12);
  // regularization reads the free embedding tables: ||X||^2 = 1
  CHECK(bpr_value(Td::matrix({{1, 0}}), Td::matrix({{1, 0}, {0, 0}}), 2.0) ==
        doctest::Approx(0.31326168751822286 + 2.0));
  // a huge negative margin stays finite through the clamp
  CHECK(std::isfinite(bpr_value(Td::matrix({{1, 0}}), Td::matrix({{-1e4, 0}, {1e4, 0}}), 0.0)));
}

TEST_CASE("empty triplet batch gives zero loss") {
  const auto g = micro::make_graph(1, 1, {{0, 0}});
  nk::Tape<double> t;
  auto p = identity_params(1, 1, 1, 0);
  const auto vars = bind(t, p);
  const auto fwd = propagate(g, t.constant(Td({1, 1})), vars, {0, nk::Pooling::mean, nk::Activation::relu});
  CHECK(bpr_loss<double>(fwd, {}, vars, 1.0).value()[0] == 0.0);
}

TEST_CASE("propagate matches the straight-line oracle on random graphs") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 60; ++trial) {
    for (auto pool : {nk::Pooling::mean, nk::Pooling::max}) {
      for (auto act : {nk::Activation::relu, nk::Activation::sigmoid, nk::Activation::identity}) {
        auto inst = micro::random_instance(rng, trial % 3, pool);
        inst.gnn.activation = act;
        const auto& g = inst.graph;
        const auto s = propagate(g, inst.params.gnn, inst.features, inst.gnn);
        const auto o = micro::oracle_propagate(g.num_users(), g.num_items(), g.user_items(), g.item_users(),
                                               inst.features, inst.params.gnn, inst.gnn);
        for (std::size_t k = 0; k <= inst.gnn.layers; ++k) {
          for (std::size_t a = 0; a < g.num_users(); ++a)
            for (std::size_t c = 0; c < inst.params.gnn.dim(); ++c)
              CHECK(std::abs(s.users[k](a, c) - o.users[k][a][c]) <= 1e-12);
          for (std::size_t i = 0; i < g.num_items(); ++i)
            for (std::size_t c = 0; c < inst.params.gnn.dim(); ++c)
              CHECK(std::abs(s.items[k](i, c) - o.items[k][i][c]) <= 1e-12);
        }
      }
    }
  }
}

TEST_CASE("relabeling nodes permutes the outputs") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    auto inst = micro::random_instance(rng, 2, nk::Pooling::mean);
    const auto& g = inst.graph;
    const std::size_t m = g.num_users(), n = g.num_items();
    std::vector<std::uint32_t> pu(m), pi(n);
    std::iota(pu.begin(), pu.end(), 0u);
    std::iota(pi.begin(), pi.end(), 0u);
    std::shuffle(pu.begin(), pu.end(), rng);
    std::shuffle(pi.begin(), pi.end(), rng);
    std::vector<RatingGraph::Edge> edges;
    for (const auto& e : g.edges()) edges.push_back({pu[e.user], pi[e.item]});
    const auto g2 = micro::make_graph(m, n, edges);
    auto p2 = inst.params.gnn;
    Td f2 = inst.features;
    for (std::size_t a = 0; a < m; ++a)
      std::copy(inst.params.gnn.user_emb.row(a).begin(), inst.params.gnn.user_emb.row(a).end(), p2.user_emb.row(pu[a]).begin());
    for (std::size_t i = 0; i < n; ++i) {
      std::copy(inst.params.gnn.item_emb.row(i).begin(), inst.params.gnn.item_emb.row(i).end(), p2.item_emb.row(pi[i]).begin());
      std::copy(inst.features.row(i).begin(), inst.features.row(i).end(), f2.row(pi[i]).begin());
    }
    const auto s1 = propagate(g, inst.params.gnn, inst.features, inst.gnn);
    const auto s2 = propagate(g2, p2, f2, inst.gnn);
    for (std::size_t a = 0; a < m; ++a)
      for (std::size_t c = 0; c < p2.dim(); ++c)
        CHECK(s2.user_final()(pu[a], c) == doctest::Approx(s1.user_final()(a, c)).epsilon(1e-12));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < p2.dim(); ++c)
        CHECK(s2.item_final()(pi[i], c) == doctest::Approx(s1.item_final()(i, c)).epsilon(1e-12));
  }
}

TEST_CASE("K=0 scores are inner products of fused embeddings") {
  std::mt19937_64 rng(9);
  auto inst = micro::random_instance(rng, 0, nk::Pooling::mean);
  const auto s = propagate(inst.graph, inst.params.gnn, inst.features, inst.gnn);
  for (std::size_t i = 0; i < inst.graph.num_items(); ++i) {
    const auto y = fuse_item(Td({inst.features.cols()}, std::vector<double>(inst.features.row(i).begin(), inst.features.row(i).end())),
                             Td({inst.params.gnn.dim()}, std::vector<double>(inst.params.gnn.item_emb.row(i).begin(), inst.params.gnn.item_emb.row(i).end())),
                             inst.params.gnn.reduce);
    CHECK(predict<double>(s.user_final().row(0), s.item_final().row(i)) ==
          predict<double>(inst.params.gnn.user_emb.row(0), y.fused.data()));
  }
}

TEST_CASE("BPR gradient through propagation matches finite differences") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t layers = trial % 3;
    const auto pool = trial % 2 ? nk::Pooling::max : nk::Pooling::mean;
    auto inst = micro::random_instance(rng, layers, pool);
    inst.params.transfer.weights.clear();
    inst.params.disc.weights.clear();
    const auto build = [&](nk::Tape<double>& t, const std::vector<Vd>& v) {
      const auto b = micro::split(v, layers, 0);
      const auto fwd = propagate(inst.graph, t.constant(inst.features), b.gnn, inst.gnn);
      return bpr_loss(fwd, inst.triplets, b.gnn, 0.7);
    };
    const auto s = gradcheck::check(micro::flat(inst.params), build);
    CAPTURE(s.worst);
    CHECK(s.max_rel <= 1e-4);
    CHECK(s.checked > 0);
  }
}

TEST_CASE("Adam on a separable graph halves the BPR loss") {
  // two user clusters, each liking every item of its own half
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t m = 20, n = 20, f = 8;
    std::vector<RatingGraph::Edge> edges;
    for (std::uint32_t a = 0; a < m; ++a) {
      const std::uint32_t base = a < m / 2 ? 0 : n / 2;
      for (std::uint32_t i = 0; i < n / 2; ++i) edges.push_back({a, base + i});
    }
    const auto g = micro::make_graph(m, n, edges);
    Tensor<float> feats({n, f});
    std::normal_distribution<float> nd;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < f; ++c) feats(i, c) = (i < n / 2 ? 1.0f : -1.0f) * (c % 2 ? 1.0f : 0.0f) + 0.5f * nd(rng);
    ModelConfig cfg;
    cfg.dim = 16;
    cfg.layers = 2;
    Rng init = make_stream(seed, "init");
    auto params = init_model<float>(m, n, f, cfg, init);
    Rng sampling = make_stream(seed, "sampling");
    const auto triplets = sample_triplets(g, 200, 5, sampling);

    nk::AdamConfig adam;
    std::map<std::string, nk::AdamState<float>> states;
    double first = 0.0, last = 0.0;
    for (int step = 0; step <= 200; ++step) {
      nk::Tape<float> t;
      const auto vars = bind(t, params.gnn);
      const auto fwd = propagate(g, t.constant(feats), vars, cfg.gnn_options());
      const auto loss = bpr_loss(fwd, triplets, vars, 1.0f);
      if (step == 0) first = loss.value()[0];
      last = loss.value()[0];
      if (step == 200) break;
      t.backward(loss);
      std::vector<nk::Var<float>> flat{vars.user_emb, vars.item_emb, vars.reduce};
      for (std::size_t k = 0; k < cfg.layers; ++k) {
        flat.push_back(vars.user_weights[k]);
        flat.push_back(vars.item_weights[k]);
      }
      auto named = params.named();
      for (std::size_t p = 0; p < flat.size(); ++p) {
        nk::adam_step(*named[p].second, flat[p].grad(), states[named[p].first], adam, named[p].first);
      }
    }
    CAPTURE(seed);
    CAPTURE(first);
    CHECK(last <= 0.5 * first);
  }
}
