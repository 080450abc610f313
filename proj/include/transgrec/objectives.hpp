#pragma once

// Training objectives assembled from the gnn and transfer pieces. The trainer and the
// gradient tests build losses through these functions only.

#include <algorithm>
#include <set>
#include <span>
#include <utility>
#include <vector>

#include "transgrec/gnn.hpp"
#include "transgrec/transfer.hpp"

namespace transgrec {

struct ObjectiveOptions {
  nk::Activation activation = nk::Activation::relu;
  double lambda_reg = 1.0;
  double lambda_t = 1.0;
  bool transfer_on_fused = false;
  bool joint_target = false;
  bool bpr_only = false;
  bool non_saturating = false;
};

template <typename T>
struct EObjective {
  nk::Var<T> bpr;
  nk::Var<T> transfer;     // unweighted; unset when bpr_only
  nk::Var<T> total;        // bpr + lambda_t * transfer
  nk::Var<T> transferred;  // T outputs for `items`
  nk::Var<T> target;       // graph outputs for `items`
  std::vector<std::uint32_t> items;
};

/// Distinct positive and negative items of a batch, ascending.
inline std::vector<std::uint32_t> batch_items(std::span<const Triplet> triplets) {
  std::vector<std::uint32_t> items;
  items.reserve(2 * triplets.size());
  for (const auto& t : triplets) {
    items.push_back(t.pos);
    items.push_back(t.neg);
  }
  std::sort(items.begin(), items.end());
  items.erase(std::unique(items.begin(), items.end()), items.end());
  return items;
}

/// BPR + lambda_t * sum_i ||T(g_i) - v_i||^2 over the batch's items.
template <typename T>
EObjective<T> variant_e_objective(const GnnForward<T>& fwd, const GnnVars<T>& gnn,
                                  const std::vector<nk::Var<T>>& transfer,
                                  std::span<const Triplet> triplets, const ObjectiveOptions& o) {
  EObjective<T> out;
  out.bpr = bpr_loss(fwd, triplets, gnn, static_cast<T>(o.lambda_reg));
  out.total = out.bpr;
  if (o.bpr_only || triplets.empty()) return out;
  out.items = batch_items(triplets);
  const auto input = nk::gather_rows(o.transfer_on_fused ? fwd.fused : fwd.content, out.items);
  out.target = nk::gather_rows(fwd.item_final(), out.items);
  out.transferred = transfer_forward(input, transfer, o.activation);
  out.transfer = o.joint_target ? euclidean_transfer_loss_joint(out.transferred, out.target)
                                : euclidean_transfer_loss(out.transferred, out.target);
  out.total = nk::add(out.total, nk::scale(out.transfer, static_cast<T>(o.lambda_t)));
  return out;
}

/// (user, item, rating) pairs for the adversarial game: (a, i+, 1) once per distinct
/// positive, then (a, j-, 0) for every triplet.
struct AdversarialPairs {
  std::vector<std::uint32_t> users;
  std::vector<std::uint32_t> items;
  std::vector<double> ratings;

  std::size_t size() const noexcept { return users.size(); }
};

inline AdversarialPairs adversarial_pairs(std::span<const Triplet> triplets) {
  AdversarialPairs p;
  std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
  for (const auto& t : triplets) {
    if (!seen.insert({t.user, t.pos}).second) continue;
    p.users.push_back(t.user);
    p.items.push_back(t.pos);
    p.ratings.push_back(1.0);
  }
  for (const auto& t : triplets) {
    p.users.push_back(t.user);
    p.items.push_back(t.neg);
    p.ratings.push_back(0.0);
  }
  return p;
}

/// Generator and discriminator losses on one batch of pairs. `item_final`, `user_final` and
/// `transfer_input` are whole tables (constants or tape outputs); rows are gathered here.
/// `detach_fake` holds T fixed for the discriminator step.
template <typename T>
AdversarialLosses<T> variant_a_losses(nk::Var<T> item_final, nk::Var<T> user_final,
                                      nk::Var<T> transfer_input,
                                      const std::vector<nk::Var<T>>& transfer,
                                      const std::vector<nk::Var<T>>& disc,
                                      const AdversarialPairs& pairs, const ObjectiveOptions& o,
                                      bool detach_fake = false) {
  nk::Tape<T>& tape = *item_final.tape;
  const auto real = nk::gather_rows(item_final, pairs.items);
  const auto users = nk::gather_rows(user_final, pairs.users);
  auto fake = transfer_forward(nk::gather_rows(transfer_input, pairs.items), transfer, o.activation);
  if (detach_fake) fake = nk::detach(fake);
  nk::Tensor<T> r({pairs.size(), 1});
  for (std::size_t k = 0; k < pairs.size(); ++k) r[k] = static_cast<T>(pairs.ratings[k]);
  return adversarial_losses(real, fake, users, tape.constant(std::move(r)), disc, o.non_saturating);
}

}  // namespace transgrec
