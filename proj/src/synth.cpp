#include "transgrec/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "transgrec/error.hpp"
#include "transgrec/rng.hpp"

namespace transgrec {

namespace {

std::string padded(char prefix, std::size_t i, std::size_t n) {
  const int width = static_cast<int>(std::to_string(n > 0 ? n - 1 : 0).size());
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%0*zu", prefix, width, i);
  return buf;
}

struct Block {
  std::uint32_t first = 0;
  std::uint32_t count = 0;
  std::uint32_t cluster = 0;
};

std::size_t weighted_pick(const std::vector<double>& w, Rng& rng) {
  double total = 0.0;
  for (double x : w) total += x;
  double u = uniform_real(rng) * total;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (u < w[i]) return i;
    u -= w[i];
  }
  return w.size() - 1;
}

}  // namespace

SynthData generate_synth(const SynthOptions& o) {
  if (o.users == 0 || o.videos == 0 || o.segments_per_video == 0 || o.clusters == 0 ||
      o.feature_dim == 0) {
    throw InvalidInput("synth: all counts must be positive");
  }
  if (o.clusters > std::min(o.users, o.videos * o.segments_per_video)) {
    throw InvalidInput("synth: " + std::to_string(o.clusters) + " clusters exceed min(users, segments)");
  }
  if (!(o.noise >= 0.0) || !(o.window > 0.0)) throw InvalidInput("synth: noise >= 0 and window > 0 required");
  if (o.min_train_annotations == 0 || o.max_train_annotations < o.min_train_annotations) {
    throw InvalidInput("synth: bad train annotation range");
  }

  SynthData d;
  d.features = FeatureStore(o.feature_dim);

  Rng feat_rng = make_stream(o.seed, "synth.features");
  std::vector<std::vector<float>> centroid(o.clusters, std::vector<float>(o.feature_dim));
  for (auto& c : centroid) {
    for (auto& x : c) x = static_cast<float>(normal(feat_rng));
  }

  Rng block_rng = make_stream(o.seed, "synth.blocks");
  std::vector<std::vector<Block>> blocks(o.videos);
  d.segment_cluster.assign(o.videos, std::vector<std::uint32_t>(o.segments_per_video));
  std::vector<float> f(o.feature_dim);
  for (std::size_t v = 0; v < o.videos; ++v) {
    const std::string key = padded('v', v, o.videos);
    d.videos.emplace_back(key, o.window * static_cast<double>(o.segments_per_video));
    std::uint32_t pos = 0;
    while (pos < o.segments_per_video) {
      const auto rem = static_cast<std::uint32_t>(o.segments_per_video) - pos;
      auto len = std::min(rem, static_cast<std::uint32_t>(2 + uniform_index(block_rng, 2)));
      if (rem - len == 1) ++len;  // no single-segment tail block
      Block b{pos, len, static_cast<std::uint32_t>(uniform_index(block_rng, o.clusters))};
      for (std::uint32_t k = 0; k < b.count; ++k) {
        d.segment_cluster[v][b.first + k] = b.cluster;
        for (std::size_t c = 0; c < o.feature_dim; ++c) {
          f[c] = centroid[b.cluster][c] + static_cast<float>(o.noise * normal(feat_rng));
        }
        d.features.insert(key + "#" + std::to_string(b.first + k), f);
      }
      blocks[v].push_back(b);
      pos += b.count;
    }
  }

  const std::size_t fresh = std::min(
      o.videos, std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(o.fresh_fraction * o.videos))));
  const std::size_t ordinary = o.videos - fresh;

  auto has_cluster = [&](std::size_t v, std::uint32_t c) {
    return std::any_of(blocks[v].begin(), blocks[v].end(), [c](const Block& b) { return b.cluster == c; });
  };

  Rng user_rng = make_stream(o.seed, "synth.users");
  d.user_cluster.resize(o.users);
  for (std::size_t a = 0; a < o.users; ++a) d.user_cluster[a] = static_cast<std::uint32_t>(a % o.clusters);
  shuffle(d.user_cluster.begin(), d.user_cluster.end(), user_rng);

  double clock = 0.0;
  auto annotate = [&](std::size_t a, std::size_t v) {
    const std::uint32_t c = d.user_cluster[a];
    std::vector<double> w;
    for (const auto& b : blocks[v]) w.push_back(b.cluster == c ? 1.0 : o.off_affinity);
    const Block& b = blocks[v][weighted_pick(w, user_rng)];
    const double start = o.window * b.first + 0.2 * o.window * uniform_real(user_rng);
    const double end = o.window * (b.first + b.count) - 0.2 * o.window * uniform_real(user_rng);
    d.annotations.push_back(
        {padded('u', a, o.users), d.videos[v].first, start, end, clock});
    clock += 1.0;
  };
  auto pick_video = [&](std::size_t lo, std::size_t hi, std::uint32_t c,
                        const std::vector<std::size_t>& used) {
    std::vector<std::size_t> pool, fallback;
    for (std::size_t v = lo; v < hi; ++v) {
      if (std::find(used.begin(), used.end(), v) != used.end()) continue;
      (has_cluster(v, c) ? pool : fallback).push_back(v);
    }
    if (pool.empty()) pool = fallback;
    if (pool.empty()) pool.push_back(lo + uniform_index(user_rng, hi - lo));
    return pool[uniform_index(user_rng, pool.size())];
  };

  for (std::size_t a = 0; a < o.users; ++a) {
    std::size_t count = o.min_train_annotations;
    while (count < o.max_train_annotations && uniform_real(user_rng) < 0.5) ++count;
    std::vector<std::size_t> used;
    if (ordinary > 0) {
      for (std::size_t k = 0; k < count; ++k) {
        used.push_back(pick_video(0, ordinary, d.user_cluster[a], used));
        annotate(a, used.back());
      }
    }
    annotate(a, pick_video(ordinary, o.videos, d.user_cluster[a], {}));
  }
  return d;
}

}  // namespace transgrec
