#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "transgrec/autodiff.hpp"
#include "transgrec/rng.hpp"

namespace transgrec {

/// One highlight selection <user, video, t_start, t_end>.
struct Annotation {
  std::string user_id;
  std::string video_id;
  double t_start = 0.0;
  double t_end = 0.0;
  std::optional<double> timestamp;
};

struct Segment {
  std::uint32_t segment_id = 0;  // global dense index
  std::uint32_t video = 0;       // dense video index
  std::uint32_t ordinal = 0;     // position within the video
  double start = 0.0;
  double end = 0.0;
};

struct Video {
  std::string key;
  double duration = 0.0;
  std::uint32_t first_segment = 0;
  std::uint32_t segment_count = 0;
};

/// Splits [0, duration) into ceil(duration / window) contiguous windows; the last may be short.
/// Returned segments carry ids first_id, first_id + 1, ... and video index `video`.
std::vector<Segment> segment_video(double duration, double window, std::uint32_t video = 0,
                                   std::uint32_t first_id = 0);

/// Fraction of the segment's own length covered by [t_start, t_end].
double overlap_ratio(double t_start, double t_end, const Segment& segment);

/// Segment ids whose overlap ratio with the annotation is strictly greater than theta.
std::vector<std::uint32_t> label_positives(const Annotation& annotation,
                                           std::span<const Segment> segments, double theta);

/// User-segment bipartite graph. Items are graph-local dense indices; each maps to a
/// global segment id. R_a and R_i are kept sorted ascending.
class RatingGraph {
 public:
  struct Edge {
    std::uint32_t user;
    std::uint32_t item;
    friend bool operator==(const Edge&, const Edge&) = default;
    friend auto operator<=>(const Edge&, const Edge&) = default;
  };

  RatingGraph() = default;
  RatingGraph(std::size_t num_users, std::vector<std::uint32_t> item_segment,
              std::vector<std::uint32_t> item_video, std::vector<Edge> edges);

  std::size_t num_users() const noexcept { return user_items_.size(); }
  std::size_t num_items() const noexcept { return item_segment_.size(); }
  std::size_t num_edges() const noexcept { return edges_.size(); }

  const nk::Adjacency& user_items() const noexcept { return user_items_; }
  const nk::Adjacency& item_users() const noexcept { return item_users_; }
  const std::vector<Edge>& edges() const noexcept { return edges_; }

  std::uint32_t segment_of(std::uint32_t item) const { return item_segment_.at(item); }
  std::uint32_t video_of(std::uint32_t item) const { return item_video_.at(item); }
  std::optional<std::uint32_t> item_of_segment(std::uint32_t segment) const;
  const std::vector<std::uint32_t>& items_of_video(std::uint32_t video) const;
  const std::vector<std::uint32_t>& item_segments() const noexcept { return item_segment_; }

  bool has_edge(std::uint32_t user, std::uint32_t item) const;

 private:
  std::vector<std::uint32_t> item_segment_;
  std::vector<std::uint32_t> item_video_;
  std::vector<Edge> edges_;
  nk::Adjacency user_items_;
  nk::Adjacency item_users_;
  std::unordered_map<std::uint32_t, std::uint32_t> segment_item_;
  std::map<std::uint32_t, std::vector<std::uint32_t>> video_items_;
};

/// An annotation resolved to dense indices, with its positive segments.
struct ResolvedAnnotation {
  std::uint32_t user = 0;
  std::uint32_t video = 0;
  std::vector<std::uint32_t> positives;  // global segment ids
  double order = 0.0;                    // timestamp, or input position when absent
};

/// (user, global segment) positive record.
struct UserSegment {
  std::uint32_t user = 0;
  std::uint32_t segment = 0;
  friend bool operator==(const UserSegment&, const UserSegment&) = default;
  friend auto operator<=>(const UserSegment&, const UserSegment&) = default;
};

/// Everything derived from the raw annotations: index maps, segment table, deduplicated edges.
struct Corpus {
  double window = 5.0;
  double threshold = 0.5;
  std::vector<std::string> users;
  std::vector<Video> videos;
  std::vector<Segment> segments;
  std::vector<UserSegment> edges;  // sorted, unique
  std::vector<ResolvedAnnotation> annotations;

  std::string segment_key(std::uint32_t segment) const;
  std::optional<std::uint32_t> find_user(const std::string& key) const;
  std::optional<std::uint32_t> find_video(const std::string& key) const;
  std::optional<std::uint32_t> find_segment(const std::string& key) const;

  /// Graph over every segment of every annotated video, with all edges.
  RatingGraph full_graph() const;
  /// Graph over the given edges; items are the segments of videos touched by those edges.
  RatingGraph graph_from(std::span<const UserSegment> edges) const;
};

/// Segments every annotated video, labels positives, deduplicates (user, segment) pairs.
/// Videos no annotation touches are dropped. Throws MissingMetadata for unknown videos.
Corpus build_corpus(std::span<const Annotation> annotations,
                    const std::unordered_map<std::string, double>& video_durations,
                    double window = 5.0, double threshold = 0.5);

struct TestRecord {
  std::uint32_t user = 0;
  std::uint32_t video = 0;
  std::vector<std::uint32_t> positives;  // global segment ids
  friend bool operator==(const TestRecord&, const TestRecord&) = default;
};

struct Split {
  std::vector<UserSegment> train;
  std::vector<UserSegment> validation;
  std::vector<TestRecord> test;
  friend bool operator==(const Split&, const Split&) = default;
};

struct SplitOptions {
  std::size_t min_records = 5;
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;
};

/// Holds out each eligible user's last annotated video as a test record, then samples
/// a fraction of the remaining edges into validation.
Split split_leave_last_video(const Corpus& corpus, const SplitOptions& options = {});

/// Candidate ranking unit: all segments of `video` the user has not rated in training.
struct EvalRecord {
  std::uint32_t user = 0;
  std::uint32_t video = 0;
  std::vector<std::uint32_t> candidates;  // global segment ids, ascending
  std::vector<std::uint32_t> positives;   // subset of candidates, ascending
};

std::vector<EvalRecord> test_records(const Corpus& corpus, const Split& split);
std::vector<EvalRecord> validation_records(const Corpus& corpus, const Split& split);

struct Triplet {
  std::uint32_t user;
  std::uint32_t pos;
  std::uint32_t neg;
  friend bool operator==(const Triplet&, const Triplet&) = default;
};

/// Negative pool for a positive (a, i): items positive for some user plus the
/// unobserved items of i's video, excluding R_a.
class NegativeSampler {
 public:
  explicit NegativeSampler(const RatingGraph& graph);

  /// Appends `count` triplets for the positive (user, item); returns false and appends
  /// nothing when the pool is empty.
  bool sample(std::uint32_t user, std::uint32_t item, std::size_t count, Rng& rng,
              std::vector<Triplet>& out) const;

  /// Number of distinct candidates available to (user, item).
  std::size_t pool_size(std::uint32_t user, std::uint32_t item) const;

 private:
  const RatingGraph* graph_;
  std::vector<std::uint32_t> active_;
};

/// Draws `batch_size` positive edges uniformly and expands each into negatives.
std::vector<Triplet> sample_triplets(const RatingGraph& graph, std::size_t batch_size,
                                     std::size_t negatives_per_positive, Rng& rng);

}  // namespace transgrec
