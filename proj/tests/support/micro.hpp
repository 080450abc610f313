#pragma once

// Small random model instances and a tape-free propagation oracle.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "transgrec/model.hpp"
#include "transgrec/objectives.hpp"

namespace micro {

using namespace transgrec;
using nk::Tensor;
using nk::Var;

inline Tensor<double> random_tensor(nk::Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, stddev);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = nd(rng);
  return t;
}

/// Graph over users x items with the given edges; each item is its own segment and video.
inline RatingGraph make_graph(std::size_t users, std::size_t items,
                              const std::vector<RatingGraph::Edge>& edges) {
  std::vector<std::uint32_t> seg(items), vid(items);
  for (std::size_t i = 0; i < items; ++i) seg[i] = vid[i] = static_cast<std::uint32_t>(i);
  return RatingGraph(users, seg, vid, edges);
}

struct Instance {
  RatingGraph graph;
  Tensor<double> features;  // N x F
  ModelParams<double> params;
  GnnOptions gnn;
  std::vector<Triplet> triplets;
};

/// Random graph with at least one tripletable edge, M, N <= 6, D <= 4.
inline Instance random_instance(std::mt19937_64& rng, std::size_t layers, nk::Pooling pooling,
                                double stddev = 0.6) {
  auto pick = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  for (;;) {
    const std::size_t m = pick(1, 6), n = pick(2, 6), d = pick(1, 4), f = pick(1, 4);
    std::vector<RatingGraph::Edge> edges;
    std::bernoulli_distribution coin(0.4);
    for (std::uint32_t a = 0; a < m; ++a)
      for (std::uint32_t i = 0; i < n; ++i)
        if (coin(rng)) edges.push_back({a, i});
    std::vector<Triplet> trips;
    for (const auto& e : edges) {
      for (std::uint32_t j = 0; j < n; ++j) {
        const bool rated = std::find(edges.begin(), edges.end(), RatingGraph::Edge{e.user, j}) != edges.end();
        if (!rated && coin(rng)) trips.push_back({e.user, e.item, j});
      }
    }
    if (trips.empty()) continue;

    Instance inst;
    inst.graph = make_graph(m, n, edges);
    inst.features = random_tensor({n, f}, 1.0, rng);
    inst.gnn = {layers, pooling, nk::Activation::relu};
    ModelConfig cfg;
    cfg.dim = d;
    cfg.layers = layers;
    cfg.pooling = pooling;
    cfg.init_std = stddev;
    Rng init(rng());
    inst.params = init_model<double>(m, n, f, cfg, init);
    inst.triplets = std::move(trips);
    return inst;
  }
}

inline std::vector<Tensor<double>> flat(const ModelParams<double>& p) {
  std::vector<Tensor<double>> out;
  for (const auto& [name, t] : p.named()) out.push_back(*t);
  return out;
}

struct Bound {
  GnnVars<double> gnn;
  std::vector<Var<double>> transfer;
  std::vector<Var<double>> disc;
};

/// Splits leaves laid out in ModelParams::named() order.
inline Bound split(const std::vector<Var<double>>& v, std::size_t layers, std::size_t transfer_layers) {
  Bound b;
  b.gnn.user_emb = v[0];
  b.gnn.item_emb = v[1];
  b.gnn.reduce = v[2];
  std::size_t k = 3;
  for (std::size_t l = 0; l < layers; ++l) {
    b.gnn.user_weights.push_back(v[k++]);
    b.gnn.item_weights.push_back(v[k++]);
  }
  for (std::size_t l = 0; l < transfer_layers; ++l) b.transfer.push_back(v[k++]);
  for (; k < v.size(); ++k) b.disc.push_back(v[k]);
  return b;
}

// ---- straight-line oracle -------------------------------------------------------------

using Vec = std::vector<double>;
using Table = std::vector<Vec>;

inline Vec mat_vec(const Tensor<double>& w, const Vec& x) {
  Vec out(w.rows(), 0.0);
  for (std::size_t r = 0; r < w.rows(); ++r)
    for (std::size_t c = 0; c < w.cols(); ++c) out[r] += w(r, c) * x[c];
  return out;
}

inline double act(double x, nk::Activation a) {
  switch (a) {
    case nk::Activation::relu: return x > 0.0 ? x : 0.0;
    case nk::Activation::sigmoid: return 1.0 / (1.0 + std::exp(-x));
    case nk::Activation::identity: return x;
  }
  return x;
}

inline Vec pool(const Table& src, const std::vector<std::uint32_t>& nb, std::size_t d, nk::Pooling p) {
  Vec out(d, 0.0);
  if (nb.empty()) return out;
  if (p == nk::Pooling::mean) {
    for (auto j : nb)
      for (std::size_t c = 0; c < d; ++c) out[c] += src[j][c];
    for (auto& v : out) v /= static_cast<double>(nb.size());
  } else {
    out = src[nb[0]];
    for (auto j : nb)
      for (std::size_t c = 0; c < d; ++c) out[c] = std::max(out[c], src[j][c]);
  }
  return out;
}

struct OracleState {
  std::vector<Table> users, items;  // per layer
};

/// Direct evaluation of the propagation rules from explicit adjacency lists.
inline OracleState oracle_propagate(std::size_t m, std::size_t n,
                                    const std::vector<std::vector<std::uint32_t>>& r_user,
                                    const std::vector<std::vector<std::uint32_t>>& r_item,
                                    const Tensor<double>& features, const GnnParams<double>& p,
                                    const GnnOptions& o) {
  const std::size_t d = p.dim();
  OracleState s;
  Table u0(m), v0(n);
  for (std::size_t a = 0; a < m; ++a) u0[a] = Vec(p.user_emb.row(a).begin(), p.user_emb.row(a).end());
  for (std::size_t i = 0; i < n; ++i) {
    const Vec f(features.row(i).begin(), features.row(i).end());
    Vec g = mat_vec(p.reduce, f);
    for (std::size_t c = 0; c < d; ++c) g[c] += p.item_emb(i, c);
    v0[i] = g;
  }
  s.users.push_back(u0);
  s.items.push_back(v0);
  for (std::size_t k = 0; k < o.layers; ++k) {
    const Table& u = s.users.back();
    const Table& v = s.items.back();
    Table nu(m), nv(n);
    for (std::size_t a = 0; a < m; ++a) {
      Vec x = pool(v, r_user[a], d, o.pooling);
      for (std::size_t c = 0; c < d; ++c) x[c] += u[a][c];
      nu[a] = mat_vec(p.user_weights[k], x);
      for (auto& e : nu[a]) e = act(e, o.activation);
    }
    for (std::size_t i = 0; i < n; ++i) {
      Vec x = pool(u, r_item[i], d, o.pooling);
      for (std::size_t c = 0; c < d; ++c) x[c] += v[i][c];
      nv[i] = mat_vec(p.item_weights[k], x);
      for (auto& e : nv[i]) e = act(e, o.activation);
    }
    s.users.push_back(std::move(nu));
    s.items.push_back(std::move(nv));
  }
  return s;
}

}  // namespace micro
