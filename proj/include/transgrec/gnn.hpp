#pragma once

// Graph encoder: content reduction and fusion, K synchronous propagation layers over the
// user-item bipartite graph, inner-product scoring, and the BPR preference loss.
//
// Embedding tables are entity-major: row a of the user table is x_a, row i of the item
// table is z_i. Weight matrices act on column vectors as usual (W is out x in), which on
// row-major entity tables is applied as rows * W^T.

#include <spdlog/spdlog.h>

#include <span>
#include <vector>

#include "transgrec/autodiff.hpp"
#include "transgrec/dataset.hpp"

namespace transgrec {

struct GnnOptions {
  std::size_t layers = 2;
  nk::Pooling pooling = nk::Pooling::mean;
  nk::Activation activation = nk::Activation::relu;
};

template <typename T>
struct GnnParams {
  nk::Tensor<T> user_emb;                   // M x D
  nk::Tensor<T> item_emb;                   // N x D
  nk::Tensor<T> reduce;                     // D x F
  std::vector<nk::Tensor<T>> user_weights;  // K of D x D
  std::vector<nk::Tensor<T>> item_weights;  // K of D x D

  std::size_t dim() const { return reduce.rows(); }
  std::size_t layers() const { return user_weights.size(); }
};

template <typename T>
struct GnnVars {
  nk::Var<T> user_emb;
  nk::Var<T> item_emb;
  nk::Var<T> reduce;
  std::vector<nk::Var<T>> user_weights;
  std::vector<nk::Var<T>> item_weights;
};

template <typename T>
GnnVars<T> bind(nk::Tape<T>& tape, const GnnParams<T>& p, bool trainable = true) {
  GnnVars<T> v{tape.leaf(p.user_emb, trainable), tape.leaf(p.item_emb, trainable),
               tape.leaf(p.reduce, trainable), {}, {}};
  for (const auto& w : p.user_weights) v.user_weights.push_back(tape.leaf(w, trainable));
  for (const auto& w : p.item_weights) v.item_weights.push_back(tape.leaf(w, trainable));
  return v;
}

/// Recorded forward pass. users[k] / items[k] are the layer-k tables, k = 0..K.
template <typename T>
struct GnnForward {
  nk::Var<T> content;  // g_i = W0 f_i, N x D
  nk::Var<T> fused;    // y_i = g_i + z_i, N x D
  std::vector<nk::Var<T>> users;
  std::vector<nk::Var<T>> items;

  nk::Var<T> user_final() const { return users.back(); }
  nk::Var<T> item_final() const { return items.back(); }
};

/// Value-only propagation result.
template <typename T>
struct PropagationState {
  nk::Tensor<T> content;
  nk::Tensor<T> fused;
  std::vector<nk::Tensor<T>> users;
  std::vector<nk::Tensor<T>> items;

  const nk::Tensor<T>& user_final() const { return users.back(); }
  const nk::Tensor<T>& item_final() const { return items.back(); }
};

template <typename T>
void check_shapes(const RatingGraph& graph, const nk::Tensor<T>& features, const GnnParams<T>& p) {
  const std::size_t d = p.dim();
  if (p.user_emb.shape() != nk::Shape{graph.num_users(), d} ||
      p.item_emb.shape() != nk::Shape{graph.num_items(), d} ||
      features.shape() != nk::Shape{graph.num_items(), p.reduce.cols()} ||
      p.user_weights.size() != p.item_weights.size()) {
    throw ShapeError("gnn parameters do not match graph (" + std::to_string(graph.num_users()) +
                     " users, " + std::to_string(graph.num_items()) + " items)");
  }
  for (std::size_t k = 0; k < p.layers(); ++k) {
    if (p.user_weights[k].shape() != nk::Shape{d, d} || p.item_weights[k].shape() != nk::Shape{d, d}) {
      throw ShapeError("propagation weight " + std::to_string(k + 1) + " is not D x D");
    }
  }
}

/// Embedding propagation over the whole graph. Both sides of layer k+1 read the layer-k
/// snapshot. Layer count comes from the bound weights; pooling and activation from options.
template <typename T>
GnnForward<T> propagate(const RatingGraph& graph, nk::Var<T> features, const GnnVars<T>& vars,
                        const GnnOptions& options) {
  GnnForward<T> out;
  out.content = nk::matmul_nt(features, vars.reduce);
  out.fused = nk::add(out.content, vars.item_emb);
  out.users.push_back(vars.user_emb);
  out.items.push_back(out.fused);
  for (std::size_t k = 0; k < vars.user_weights.size(); ++k) {
    const nk::Var<T> u = out.users.back();
    const nk::Var<T> v = out.items.back();
    const nk::Var<T> user_pool = nk::neighbor_pool(v, graph.user_items(), options.pooling);
    const nk::Var<T> item_pool = nk::neighbor_pool(u, graph.item_users(), options.pooling);
    out.users.push_back(nk::activate(
        nk::matmul_nt(nk::add(u, user_pool), vars.user_weights[k]), options.activation));
    out.items.push_back(nk::activate(
        nk::matmul_nt(nk::add(v, item_pool), vars.item_weights[k]), options.activation));
  }
  return out;
}

template <typename T>
PropagationState<T> propagate(const RatingGraph& graph, const GnnParams<T>& params,
                              const nk::Tensor<T>& features, const GnnOptions& options) {
  check_shapes(graph, features, params);
  nk::Tape<T> tape;
  const GnnVars<T> vars = bind(tape, params, false);
  const GnnForward<T> fwd = propagate(graph, tape.constant(features), vars, options);
  PropagationState<T> s{fwd.content.value(), fwd.fused.value(), {}, {}};
  for (auto u : fwd.users) s.users.push_back(u.value());
  for (auto v : fwd.items) s.items.push_back(v.value());
  return s;
}

template <typename T>
struct FusedItem {
  nk::Tensor<T> content;  // g_i
  nk::Tensor<T> fused;    // y_i
};

/// y_i = W0 f_i + z_i for one item; also returns g_i.
template <typename T>
FusedItem<T> fuse_item(const nk::Tensor<T>& features, const nk::Tensor<T>& free_emb,
                       const nk::Tensor<T>& reduce) {
  nk::Tape<T> tape;
  auto g = nk::matmul(tape.constant(reduce), tape.constant(features));
  auto y = nk::add(g, tape.constant(free_emb));
  return {g.value(), y.value()};
}

template <typename T>
T predict(std::span<const T> user, std::span<const T> item) {
  if (user.size() != item.size()) throw ShapeError("predict: embedding lengths differ");
  T acc = T(0);
  for (std::size_t c = 0; c < user.size(); ++c) acc += user[c] * item[c];
  return acc;
}

inline constexpr double kLogClampLow = 1e-12;

/// Sum over triplets of -ln s(r_ai - r_aj), plus lambda_reg (||X||^2 + ||Z||^2).
/// The sigmoid output is clamped to [1e-12, 1] before the log.
template <typename T>
nk::Var<T> bpr_loss(const GnnForward<T>& fwd, std::span<const Triplet> triplets,
                    const GnnVars<T>& vars, T lambda_reg) {
  nk::Tape<T>& tape = *fwd.content.tape;
  if (triplets.empty()) {
    spdlog::warn("bpr_loss: empty triplet batch");
    return tape.constant(nk::Tensor<T>({1}));
  }
  std::vector<std::uint32_t> us, is, js;
  us.reserve(triplets.size());
  is.reserve(triplets.size());
  js.reserve(triplets.size());
  for (const auto& t : triplets) {
    us.push_back(t.user);
    is.push_back(t.pos);
    js.push_back(t.neg);
  }
  const auto users = nk::gather_rows(fwd.user_final(), std::move(us));
  const auto pos = nk::gather_rows(fwd.item_final(), std::move(is));
  const auto neg = nk::gather_rows(fwd.item_final(), std::move(js));
  const auto diff = nk::sub(nk::rowwise_dot(users, pos), nk::rowwise_dot(users, neg));
  const auto prob = nk::clamp(nk::sigmoid(diff), static_cast<T>(kLogClampLow), T(1));
  auto loss = nk::scale(nk::sum(nk::log(prob)), T(-1));
  if (lambda_reg != T(0)) {
    const auto reg = nk::add(nk::frobenius_sq(vars.user_emb), nk::frobenius_sq(vars.item_emb));
    loss = nk::add(loss, nk::scale(reg, lambda_reg));
  }
  return loss;
}

}  // namespace transgrec
