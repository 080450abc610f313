#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "transgrec/error.hpp"
#include "transgrec/tensor.hpp"

namespace transgrec {

/// Dense content vector per segment key, all of one dimensionality.
class FeatureStore {
 public:
  FeatureStore() = default;
  explicit FeatureStore(std::size_t dim) : dim_(dim) {}

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return keys_.size(); }
  const std::vector<std::string>& keys() const noexcept { return keys_; }

  /// Adds or replaces a vector. Throws InvalidInput on wrong length or non-finite values.
  void insert(const std::string& key, std::span<const float> values);

  bool contains(const std::string& key) const { return index_.count(key) > 0; }

  /// Throws MissingFeature when absent.
  std::span<const float> at(const std::string& key) const;

  /// Rows for the given keys, stacked into a keys.size() x dim tensor.
  /// Throws MissingFeature listing every absent key.
  template <typename T>
  nk::Tensor<T> gather(std::span<const std::string> keys) const;

  friend bool operator==(const FeatureStore& a, const FeatureStore& b) {
    return a.dim_ == b.dim_ && a.keys_ == b.keys_ && a.values_ == b.values_;
  }

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> keys_;
  std::vector<float> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename T>
nk::Tensor<T> FeatureStore::gather(std::span<const std::string> keys) const {
  nk::Tensor<T> out({keys.size(), dim_});
  std::string missing;
  std::size_t n_missing = 0;
  for (std::size_t r = 0; r < keys.size(); ++r) {
    auto it = index_.find(keys[r]);
    if (it == index_.end()) {
      if (n_missing++ < 20) missing += (missing.empty() ? "" : ", ") + keys[r];
      continue;
    }
    const float* src = values_.data() + it->second * dim_;
    for (std::size_t c = 0; c < dim_; ++c) out(r, c) = static_cast<T>(src[c]);
  }
  if (n_missing) {
    throw MissingFeature("missing feature vectors for " + std::to_string(n_missing) +
                         " segment(s): " + missing + (n_missing > 20 ? ", ..." : ""));
  }
  return out;
}

void write_features_binary(const FeatureStore& store, const std::string& path);
FeatureStore read_features_binary(const std::string& path);
void write_features_csv(const FeatureStore& store, const std::string& path);
FeatureStore read_features_csv(const std::string& path);
/// Dispatches on the CRFS magic bytes.
FeatureStore read_features(const std::string& path);

}  // namespace transgrec
