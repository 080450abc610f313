#include "transgrec/dataset.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "transgrec/error.hpp"

namespace transgrec {

std::vector<Segment> segment_video(double duration, double window, std::uint32_t video,
                                   std::uint32_t first_id) {
  if (!(duration > 0.0) || !std::isfinite(duration)) {
    throw InvalidInput("video duration must be positive, got " + std::to_string(duration));
  }
  if (!(window > 0.0) || !std::isfinite(window)) {
    throw InvalidInput("segment window must be positive, got " + std::to_string(window));
  }
  // Tolerance keeps exact multiples (20 / 5) from producing a zero-length tail.
  const auto count = static_cast<std::uint32_t>(std::ceil(duration / window - 1e-9));
  std::vector<Segment> out;
  out.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    const double start = k * window;
    const double end = std::min((k + 1) * window, duration);
    out.push_back(Segment{first_id + k, video, k, start, end});
  }
  return out;
}

double overlap_ratio(double t_start, double t_end, const Segment& segment) {
  const double len = segment.end - segment.start;
  const double covered = std::min(t_end, segment.end) - std::max(t_start, segment.start);
  return covered > 0.0 ? covered / len : 0.0;
}

std::vector<std::uint32_t> label_positives(const Annotation& annotation,
                                           std::span<const Segment> segments, double theta) {
  if (!(theta > 0.0 && theta <= 1.0)) {
    throw InvalidInput("threshold must lie in (0, 1], got " + std::to_string(theta));
  }
  std::vector<std::uint32_t> out;
  for (const auto& s : segments) {
    if (overlap_ratio(annotation.t_start, annotation.t_end, s) > theta) {
      out.push_back(s.segment_id);
    }
  }
  return out;
}

RatingGraph::RatingGraph(std::size_t num_users, std::vector<std::uint32_t> item_segment,
                         std::vector<std::uint32_t> item_video, std::vector<Edge> edges)
    : item_segment_(std::move(item_segment)),
      item_video_(std::move(item_video)),
      edges_(std::move(edges)),
      user_items_(num_users),
      item_users_(item_segment_.size()) {
  if (item_video_.size() != item_segment_.size()) {
    throw ShapeError("RatingGraph: item_segment and item_video differ in length");
  }
  std::sort(edges_.begin(), edges_.end());
  edges_.erase(std::unique(edges_.begin(), edges_.end()), edges_.end());
  for (const auto& e : edges_) {
    if (e.user >= num_users || e.item >= item_segment_.size()) {
      throw InvalidInput("RatingGraph: edge index out of range");
    }
    user_items_[e.user].push_back(e.item);
    item_users_[e.item].push_back(e.user);
  }
  for (auto& l : item_users_) std::sort(l.begin(), l.end());
  for (std::uint32_t i = 0; i < item_segment_.size(); ++i) {
    segment_item_.emplace(item_segment_[i], i);
    video_items_[item_video_[i]].push_back(i);
  }
}

std::optional<std::uint32_t> RatingGraph::item_of_segment(std::uint32_t segment) const {
  auto it = segment_item_.find(segment);
  if (it == segment_item_.end()) return std::nullopt;
  return it->second;
}

const std::vector<std::uint32_t>& RatingGraph::items_of_video(std::uint32_t video) const {
  static const std::vector<std::uint32_t> none;
  auto it = video_items_.find(video);
  return it == video_items_.end() ? none : it->second;
}

bool RatingGraph::has_edge(std::uint32_t user, std::uint32_t item) const {
  if (user >= user_items_.size()) return false;
  const auto& l = user_items_[user];
  return std::binary_search(l.begin(), l.end(), item);
}

std::string Corpus::segment_key(std::uint32_t segment) const {
  const Segment& s = segments.at(segment);
  return videos.at(s.video).key + "#" + std::to_string(s.ordinal);
}

std::optional<std::uint32_t> Corpus::find_user(const std::string& key) const {
  auto it = std::find(users.begin(), users.end(), key);
  if (it == users.end()) return std::nullopt;
  return static_cast<std::uint32_t>(it - users.begin());
}

std::optional<std::uint32_t> Corpus::find_video(const std::string& key) const {
  for (std::uint32_t v = 0; v < videos.size(); ++v) {
    if (videos[v].key == key) return v;
  }
  return std::nullopt;
}

std::optional<std::uint32_t> Corpus::find_segment(const std::string& key) const {
  const auto hash = key.rfind('#');
  if (hash == std::string::npos) return std::nullopt;
  auto v = find_video(key.substr(0, hash));
  if (!v) return std::nullopt;
  try {
    const auto ordinal = std::stoul(key.substr(hash + 1));
    if (ordinal >= videos[*v].segment_count) return std::nullopt;
    return videos[*v].first_segment + static_cast<std::uint32_t>(ordinal);
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

RatingGraph Corpus::full_graph() const {
  std::vector<std::uint32_t> item_segment(segments.size());
  std::vector<std::uint32_t> item_video(segments.size());
  for (std::uint32_t s = 0; s < segments.size(); ++s) {
    item_segment[s] = s;
    item_video[s] = segments[s].video;
  }
  std::vector<RatingGraph::Edge> e;
  e.reserve(edges.size());
  for (const auto& x : edges) e.push_back({x.user, x.segment});
  return RatingGraph(users.size(), std::move(item_segment), std::move(item_video), std::move(e));
}

RatingGraph Corpus::graph_from(std::span<const UserSegment> graph_edges) const {
  std::set<std::uint32_t> touched;
  for (const auto& e : graph_edges) touched.insert(segments.at(e.segment).video);
  std::vector<std::uint32_t> item_segment;
  std::vector<std::uint32_t> item_video;
  std::unordered_map<std::uint32_t, std::uint32_t> item_of;
  for (auto v : touched) {
    const Video& vid = videos[v];
    for (std::uint32_t k = 0; k < vid.segment_count; ++k) {
      const std::uint32_t seg = vid.first_segment + k;
      item_of.emplace(seg, static_cast<std::uint32_t>(item_segment.size()));
      item_segment.push_back(seg);
      item_video.push_back(v);
    }
  }
  std::vector<RatingGraph::Edge> e;
  e.reserve(graph_edges.size());
  for (const auto& x : graph_edges) e.push_back({x.user, item_of.at(x.segment)});
  return RatingGraph(users.size(), std::move(item_segment), std::move(item_video), std::move(e));
}

Corpus build_corpus(std::span<const Annotation> annotations,
                    const std::unordered_map<std::string, double>& video_durations, double window,
                    double threshold) {
  if (annotations.empty()) throw InvalidInput("no annotations");
  if (!(threshold > 0.0 && threshold <= 1.0)) {
    throw InvalidInput("threshold must lie in (0, 1], got " + std::to_string(threshold));
  }
  Corpus c;
  c.window = window;
  c.threshold = threshold;
  std::unordered_map<std::string, std::uint32_t> user_index;
  std::unordered_map<std::string, std::uint32_t> video_index;

  for (std::size_t n = 0; n < annotations.size(); ++n) {
    const Annotation& a = annotations[n];
    if (!(a.t_start >= 0.0) || !(a.t_end > a.t_start)) {
      throw InvalidInput("annotation " + std::to_string(n) + " has invalid interval [" +
                         std::to_string(a.t_start) + ", " + std::to_string(a.t_end) + ")");
    }
    auto [uit, new_user] = user_index.emplace(a.user_id, static_cast<std::uint32_t>(c.users.size()));
    if (new_user) c.users.push_back(a.user_id);

    auto vit = video_index.find(a.video_id);
    if (vit == video_index.end()) {
      auto dur = video_durations.find(a.video_id);
      if (dur == video_durations.end()) {
        throw MissingMetadata("no duration for video '" + a.video_id + "' (annotation " +
                              std::to_string(n) + ")");
      }
      const auto v = static_cast<std::uint32_t>(c.videos.size());
      const auto first = static_cast<std::uint32_t>(c.segments.size());
      auto segs = segment_video(dur->second, window, v, first);
      c.videos.push_back(Video{a.video_id, dur->second, first, static_cast<std::uint32_t>(segs.size())});
      c.segments.insert(c.segments.end(), segs.begin(), segs.end());
      vit = video_index.emplace(a.video_id, v).first;
    }
    const Video& vid = c.videos[vit->second];
    std::span<const Segment> segs(c.segments.data() + vid.first_segment, vid.segment_count);
    ResolvedAnnotation r;
    r.user = uit->second;
    r.video = vit->second;
    r.positives = label_positives(a, segs, threshold);
    r.order = a.timestamp.value_or(static_cast<double>(n));
    for (auto s : r.positives) c.edges.push_back({r.user, s});
    c.annotations.push_back(std::move(r));
  }
  std::sort(c.edges.begin(), c.edges.end());
  c.edges.erase(std::unique(c.edges.begin(), c.edges.end()), c.edges.end());
  return c;
}

Split split_leave_last_video(const Corpus& corpus, const SplitOptions& options) {
  if (options.validation_fraction < 0.0 || options.validation_fraction >= 1.0) {
    throw InvalidInput("validation fraction must lie in [0, 1)");
  }
  const std::size_t num_users = corpus.users.size();
  std::vector<std::vector<std::size_t>> by_user(num_users);
  for (std::size_t n = 0; n < corpus.annotations.size(); ++n) {
    by_user[corpus.annotations[n].user].push_back(n);
  }
  std::vector<std::vector<std::uint32_t>> user_edges(num_users);
  for (const auto& e : corpus.edges) user_edges[e.user].push_back(e.segment);

  Split split;
  std::set<UserSegment> held_out;
  for (std::uint32_t u = 0; u < num_users; ++u) {
    if (user_edges[u].size() < options.min_records) continue;
    auto& order = by_user[u];
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return corpus.annotations[a].order < corpus.annotations[b].order;
    });
    // The last video in which the user has at least one positive segment.
    std::optional<std::uint32_t> last_video;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      if (!corpus.annotations[*it].positives.empty()) {
        last_video = corpus.annotations[*it].video;
        break;
      }
    }
    if (!last_video) continue;
    TestRecord rec{u, *last_video, {}};
    for (auto s : user_edges[u]) {
      if (corpus.segments[s].video == *last_video) rec.positives.push_back(s);
    }
    // A user whose records all sit in one video keeps them for training.
    if (rec.positives.size() == user_edges[u].size()) continue;
    for (auto s : rec.positives) held_out.insert({u, s});
    split.test.push_back(std::move(rec));
  }

  std::vector<UserSegment> remaining;
  for (const auto& e : corpus.edges) {
    if (!held_out.count(e)) remaining.push_back(e);
  }
  const auto n_val = static_cast<std::size_t>(
      std::llround(options.validation_fraction * static_cast<double>(remaining.size())));
  std::vector<std::size_t> idx(remaining.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = make_stream(options.seed, "split");
  shuffle(idx.begin(), idx.end(), rng);
  std::vector<bool> is_val(remaining.size(), false);
  for (std::size_t k = 0; k < n_val; ++k) is_val[idx[k]] = true;
  for (std::size_t k = 0; k < remaining.size(); ++k) {
    (is_val[k] ? split.validation : split.train).push_back(remaining[k]);
  }
  return split;
}

namespace {

std::vector<std::set<std::uint32_t>> train_sets(const Corpus& corpus, const Split& split) {
  std::vector<std::set<std::uint32_t>> rated(corpus.users.size());
  for (const auto& e : split.train) rated[e.user].insert(e.segment);
  return rated;
}

EvalRecord make_record(const Corpus& corpus, std::uint32_t user, std::uint32_t video,
                       const std::set<std::uint32_t>& rated,
                       const std::vector<std::uint32_t>& positives) {
  EvalRecord r;
  r.user = user;
  r.video = video;
  const Video& v = corpus.videos.at(video);
  for (std::uint32_t k = 0; k < v.segment_count; ++k) {
    const std::uint32_t s = v.first_segment + k;
    if (!rated.count(s)) r.candidates.push_back(s);
  }
  for (auto s : positives) {
    if (std::binary_search(r.candidates.begin(), r.candidates.end(), s)) r.positives.push_back(s);
  }
  std::sort(r.positives.begin(), r.positives.end());
  return r;
}

}  // namespace

std::vector<EvalRecord> test_records(const Corpus& corpus, const Split& split) {
  const auto rated = train_sets(corpus, split);
  std::vector<EvalRecord> out;
  out.reserve(split.test.size());
  for (const auto& t : split.test) {
    out.push_back(make_record(corpus, t.user, t.video, rated[t.user], t.positives));
  }
  return out;
}

std::vector<EvalRecord> validation_records(const Corpus& corpus, const Split& split) {
  const auto rated = train_sets(corpus, split);
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::vector<std::uint32_t>> groups;
  for (const auto& e : split.validation) {
    groups[{e.user, corpus.segments.at(e.segment).video}].push_back(e.segment);
  }
  std::vector<EvalRecord> out;
  out.reserve(groups.size());
  for (const auto& [key, pos] : groups) {
    out.push_back(make_record(corpus, key.first, key.second, rated[key.first], pos));
  }
  return out;
}

NegativeSampler::NegativeSampler(const RatingGraph& graph) : graph_(&graph) {
  for (std::uint32_t i = 0; i < graph.num_items(); ++i) {
    if (!graph.item_users()[i].empty()) active_.push_back(i);
  }
}

std::size_t NegativeSampler::pool_size(std::uint32_t user, std::uint32_t item) const {
  std::size_t inactive = 0;
  for (auto j : graph_->items_of_video(graph_->video_of(item))) {
    if (graph_->item_users()[j].empty()) ++inactive;
  }
  return active_.size() - graph_->user_items()[user].size() + inactive;
}

bool NegativeSampler::sample(std::uint32_t user, std::uint32_t item, std::size_t count, Rng& rng,
                             std::vector<Triplet>& out) const {
  const auto& rated = graph_->user_items()[user];
  std::vector<std::uint32_t> inactive;
  for (auto j : graph_->items_of_video(graph_->video_of(item))) {
    if (graph_->item_users()[j].empty()) inactive.push_back(j);
  }
  const std::size_t span = active_.size() + inactive.size();
  if (span == rated.size()) return false;  // rated is a subset of active_

  std::vector<std::uint32_t> explicit_pool;
  for (std::size_t n = 0; n < count; ++n) {
    std::uint32_t j = 0;
    bool found = false;
    for (int attempt = 0; attempt < 64 && !found; ++attempt) {
      const auto r = uniform_index(rng, span);
      j = r < active_.size() ? active_[r] : inactive[r - active_.size()];
      found = !std::binary_search(rated.begin(), rated.end(), j);
    }
    if (!found) {
      if (explicit_pool.empty()) {
        for (auto a : active_) {
          if (!std::binary_search(rated.begin(), rated.end(), a)) explicit_pool.push_back(a);
        }
        explicit_pool.insert(explicit_pool.end(), inactive.begin(), inactive.end());
      }
      j = explicit_pool[uniform_index(rng, explicit_pool.size())];
    }
    out.push_back({user, item, j});
  }
  return true;
}

std::vector<Triplet> sample_triplets(const RatingGraph& graph, std::size_t batch_size,
                                     std::size_t negatives_per_positive, Rng& rng) {
  if (graph.num_edges() == 0) throw InvalidInput("sample_triplets: graph has no positive edges");
  NegativeSampler sampler(graph);
  std::vector<Triplet> out;
  out.reserve(batch_size * negatives_per_positive);
  for (std::size_t b = 0; b < batch_size; ++b) {
    const auto& e = graph.edges()[uniform_index(rng, graph.num_edges())];
    if (!sampler.sample(e.user, e.item, negatives_per_positive, rng, out)) {
      spdlog::warn("no negative candidates for user {} item {}; positive skipped", e.user, e.item);
    }
  }
  return out;
}

}  // namespace transgrec
