#pragma once

// Desk-scale testbed: clustered users and segments with cluster-centroid features.

#include <string>
#include <utility>
#include <vector>

#include "transgrec/dataset.hpp"
#include "transgrec/features.hpp"

namespace transgrec {

struct SynthOptions {
  std::size_t users = 200;
  std::size_t videos = 100;
  std::size_t segments_per_video = 8;
  std::size_t clusters = 4;
  std::size_t feature_dim = 32;
  double noise = 1.0;
  std::uint64_t seed = 0;
  double window = 5.0;
  double fresh_fraction = 0.2;  // trailing videos reserved for each user's final annotation
  double off_affinity = 0.05;   // relative weight of a block outside the user's cluster
  std::size_t min_train_annotations = 3;
  std::size_t max_train_annotations = 8;
};

struct SynthData {
  std::vector<Annotation> annotations;
  std::vector<std::pair<std::string, double>> videos;  // key, duration
  FeatureStore features;                               // keyed by "video#ordinal"
  std::vector<std::uint32_t> user_cluster;
  std::vector<std::vector<std::uint32_t>> segment_cluster;  // per video, per ordinal
};

/// Each video is cut into contiguous blocks of 2-3 segments, each drawn from a random
/// cluster; segment features are the block's centroid plus Gaussian noise. Every user
/// annotates whole blocks, chosen in proportion to cluster affinity, on a few ordinary
/// videos and finally on one fresh video nobody else has seen beforehand.
SynthData generate_synth(const SynthOptions& options);

}  // namespace transgrec
