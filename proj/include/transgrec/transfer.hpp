#pragma once

// Transfer network T (content embedding -> approximated graph-output item embedding)
// and the conditional discriminator used by the adversarial variant.

#include <span>
#include <vector>

#include "transgrec/autodiff.hpp"

namespace transgrec {

template <typename T>
struct TransferParams {
  std::vector<nk::Tensor<T>> weights;  // P^l, out x in; input D, output D
};

/// Input is [item embedding, user embedding, rating] of length 2D + 1; output one logit.
template <typename T>
struct DiscriminatorParams {
  std::vector<nk::Tensor<T>> weights;  // Q^l, out x in; the last has one row
};

template <typename T>
std::vector<nk::Var<T>> bind_all(nk::Tape<T>& tape, const std::vector<nk::Tensor<T>>& ws,
                                 bool trainable = true) {
  std::vector<nk::Var<T>> out;
  out.reserve(ws.size());
  for (const auto& w : ws) out.push_back(tape.leaf(w, trainable));
  return out;
}

/// h^l = f(P^l h^{l-1}) applied to every row of `input` (n x D).
template <typename T>
nk::Var<T> transfer_forward(nk::Var<T> input, const std::vector<nk::Var<T>>& weights,
                            nk::Activation activation) {
  nk::Var<T> h = input;
  for (const auto& w : weights) h = nk::activate(nk::matmul_nt(h, w), activation);
  return h;
}

/// Single-vector form.
template <typename T>
nk::Tensor<T> transfer_forward(const nk::Tensor<T>& input, const TransferParams<T>& params,
                               nk::Activation activation) {
  nk::Tape<T> tape;
  nk::Var<T> h = tape.constant(input);
  for (const auto& w : params.weights) {
    h = nk::activate(nk::matmul(tape.constant(w), h), activation);
  }
  return h.value();
}

/// sum_i ||transferred_i - target_i||^2. The target is detached: no gradient reaches it.
template <typename T>
nk::Var<T> euclidean_transfer_loss(nk::Var<T> transferred, nk::Var<T> target) {
  return nk::frobenius_sq(nk::sub(transferred, nk::detach(target)));
}

/// Same loss with gradient flowing into the target as well.
template <typename T>
nk::Var<T> euclidean_transfer_loss_joint(nk::Var<T> transferred, nk::Var<T> target) {
  return nk::frobenius_sq(nk::sub(transferred, target));
}

inline constexpr double kDiscClamp = 1e-7;

/// D(item, user, r) = clamp(sigmoid(MLP([item, user, r])), 1e-7, 1 - 1e-7), n x 1.
/// Hidden layers use ReLU; the final layer is linear.
template <typename T>
nk::Var<T> discriminator_prob(nk::Var<T> items, nk::Var<T> users, nk::Var<T> ratings,
                              const std::vector<nk::Var<T>>& weights) {
  nk::Var<T> h = nk::concat_cols<T>({items, users, ratings});
  for (std::size_t l = 0; l < weights.size(); ++l) {
    h = nk::matmul_nt(h, weights[l]);
    if (l + 1 < weights.size()) h = nk::relu(h);
  }
  return nk::clamp(nk::sigmoid(h), static_cast<T>(kDiscClamp), static_cast<T>(1.0 - kDiscClamp));
}

template <typename T>
struct AdversarialLosses {
  nk::Var<T> real_term;           // -sum ln D(real)
  nk::Var<T> fake_term;           // -sum ln (1 - D(fake))
  nk::Var<T> discriminator_loss;  // real_term + fake_term
  nk::Var<T> generator_loss;      // sum ln (1 - D(fake)), or -sum ln D(fake) when non-saturating
  nk::Var<T> real_prob;           // n x 1
  nk::Var<T> fake_prob;           // n x 1
};

/// Both players' losses on one batch of (user, item, rating) pairs. `real_items` are graph
/// outputs v_i, `fake_items` are T outputs, `users` are u_a, `ratings` is n x 1.
/// Callers detach whatever the current update step holds fixed.
template <typename T>
AdversarialLosses<T> adversarial_losses(nk::Var<T> real_items, nk::Var<T> fake_items,
                                        nk::Var<T> users, nk::Var<T> ratings,
                                        const std::vector<nk::Var<T>>& disc_weights,
                                        bool non_saturating = false) {
  AdversarialLosses<T> out;
  out.real_prob = discriminator_prob(real_items, users, ratings, disc_weights);
  out.fake_prob = discriminator_prob(fake_items, users, ratings, disc_weights);
  out.real_term = nk::scale(nk::sum(nk::log(out.real_prob)), T(-1));
  const auto log_one_minus_fake = nk::sum(nk::log(nk::add_scalar(nk::scale(out.fake_prob, T(-1)), T(1))));
  out.fake_term = nk::scale(log_one_minus_fake, T(-1));
  out.discriminator_loss = nk::add(out.real_term, out.fake_term);
  out.generator_loss = non_saturating ? nk::scale(nk::sum(nk::log(out.fake_prob)), T(-1))
                                      : log_one_minus_fake;
  return out;
}

/// v_hat = T(W0 f). Reads only features and parameters, never graph structure.
template <typename T>
nk::Tensor<T> inductive_item_embed(std::span<const T> features, const nk::Tensor<T>& reduce,
                                   const TransferParams<T>& transfer, nk::Activation activation) {
  if (features.size() != reduce.cols()) {
    throw ShapeError("inductive_item_embed: feature length " + std::to_string(features.size()) +
                     " does not match reduction input " + std::to_string(reduce.cols()));
  }
  nk::Tensor<T> f({features.size()}, std::vector<T>(features.begin(), features.end()));
  nk::Tape<T> tape;
  const auto g = nk::matmul(tape.constant(reduce), tape.constant(std::move(f)));
  return transfer_forward(g.value(), transfer, activation);
}

}  // namespace transgrec
