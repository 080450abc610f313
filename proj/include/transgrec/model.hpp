#pragma once

#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "transgrec/gnn.hpp"
#include "transgrec/rng.hpp"
#include "transgrec/transfer.hpp"

namespace transgrec {

enum class Variant { E, A };

inline const char* variant_tag(Variant v) { return v == Variant::E ? "E" : "A"; }
Variant parse_variant(const std::string& tag);

nk::Pooling parse_pooling(const std::string& s);
std::string pooling_name(nk::Pooling p);
nk::Activation parse_activation(const std::string& s);
std::string activation_name(nk::Activation a);

struct ModelConfig {
  std::size_t dim = 128;
  std::size_t layers = 2;
  nk::Pooling pooling = nk::Pooling::mean;
  nk::Activation activation = nk::Activation::relu;
  std::size_t transfer_layers = 2;
  std::size_t transfer_hidden = 0;  // 0 means dim
  std::size_t disc_layers = 2;
  std::size_t disc_hidden = 0;  // 0 means dim
  double init_std = 0.1;

  GnnOptions gnn_options() const { return {layers, pooling, activation}; }
};

/// Every learnable tensor of the framework.
template <typename T>
struct ModelParams {
  GnnParams<T> gnn;
  TransferParams<T> transfer;
  DiscriminatorParams<T> disc;

  /// Stable names in a fixed order; used for optimizer state and checkpoints.
  auto named() { return named_impl(*this); }
  auto named() const { return named_impl(*this); }

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    return a.gnn.user_emb == b.gnn.user_emb && a.gnn.item_emb == b.gnn.item_emb &&
           a.gnn.reduce == b.gnn.reduce && a.gnn.user_weights == b.gnn.user_weights &&
           a.gnn.item_weights == b.gnn.item_weights && a.transfer.weights == b.transfer.weights &&
           a.disc.weights == b.disc.weights;
  }

 private:
  template <typename Self>
  static auto named_impl(Self& self) {
    using Ptr = decltype(&self.gnn.user_emb);
    std::vector<std::pair<std::string, Ptr>> out{{"user_emb", &self.gnn.user_emb},
                                                 {"item_emb", &self.gnn.item_emb},
                                                 {"reduce", &self.gnn.reduce}};
    for (std::size_t k = 0; k < self.gnn.user_weights.size(); ++k) {
      out.emplace_back("user_weight." + std::to_string(k + 1), &self.gnn.user_weights[k]);
      out.emplace_back("item_weight." + std::to_string(k + 1), &self.gnn.item_weights[k]);
    }
    for (std::size_t l = 0; l < self.transfer.weights.size(); ++l) {
      out.emplace_back("transfer." + std::to_string(l + 1), &self.transfer.weights[l]);
    }
    for (std::size_t l = 0; l < self.disc.weights.size(); ++l) {
      out.emplace_back("disc." + std::to_string(l + 1), &self.disc.weights[l]);
    }
    return out;
  }
};

namespace detail {
template <typename T>
nk::Tensor<T> gaussian(nk::Shape shape, double stddev, Rng& rng) {
  nk::Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(stddev * normal(rng));
  return t;
}
}  // namespace detail

/// Draws every tensor from Normal(0, init_std^2) in the order of ModelParams::named().
template <typename T>
ModelParams<T> init_model(std::size_t num_users, std::size_t num_items, std::size_t feature_dim,
                          const ModelConfig& cfg, Rng& rng) {
  if (cfg.dim == 0 || feature_dim == 0) throw InvalidInput("embedding and feature dims must be positive");
  const std::size_t d = cfg.dim;
  const double s = cfg.init_std;
  ModelParams<T> p;
  p.gnn.user_emb = detail::gaussian<T>({num_users, d}, s, rng);
  p.gnn.item_emb = detail::gaussian<T>({num_items, d}, s, rng);
  p.gnn.reduce = detail::gaussian<T>({d, feature_dim}, s, rng);
  for (std::size_t k = 0; k < cfg.layers; ++k) {
    p.gnn.user_weights.push_back(detail::gaussian<T>({d, d}, s, rng));
    p.gnn.item_weights.push_back(detail::gaussian<T>({d, d}, s, rng));
  }
  const std::size_t th = cfg.transfer_hidden ? cfg.transfer_hidden : d;
  for (std::size_t l = 0; l < cfg.transfer_layers; ++l) {
    const std::size_t in = l == 0 ? d : th;
    const std::size_t out = l + 1 == cfg.transfer_layers ? d : th;
    p.transfer.weights.push_back(detail::gaussian<T>({out, in}, s, rng));
  }
  const std::size_t dh = cfg.disc_hidden ? cfg.disc_hidden : d;
  for (std::size_t l = 0; l < cfg.disc_layers; ++l) {
    const std::size_t in = l == 0 ? 2 * d + 1 : dh;
    const std::size_t out = l + 1 == cfg.disc_layers ? 1 : dh;
    p.disc.weights.push_back(detail::gaussian<T>({out, in}, s, rng));
  }
  return p;
}

/// Trained model plus what scoring needs without the graph: final user and item tables
/// and the key lists that index them.
struct Checkpoint {
  Variant variant = Variant::E;
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  nlohmann::json hyperparameters = nlohmann::json::object();
  std::vector<std::string> users;  // row order of user_final / user_emb
  std::vector<std::string> items;  // segment keys, row order of item_final / item_emb
  ModelParams<float> params;
  nk::Tensorf user_final;
  nk::Tensorf item_final;
};

/// Layout: "TGCK", u32 version, u64 header length, JSON header, then little-endian float32
/// blobs in header order.
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace transgrec
