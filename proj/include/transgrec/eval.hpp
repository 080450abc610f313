#pragma once

// Inductive ranking of candidate segments and the ranking metrics.

#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "transgrec/dataset.hpp"
#include "transgrec/features.hpp"
#include "transgrec/model.hpp"

namespace transgrec {

struct RankingRun {
  std::uint32_t user = 0;
  std::uint32_t video = 0;
  std::vector<std::uint32_t> candidates;  // segment ids
  std::vector<double> scores;             // parallel to candidates
  std::vector<std::uint32_t> positives;   // subset of candidates
};

/// Candidate positions sorted by descending score, ties by ascending segment id.
std::vector<std::size_t> ranking_order(const RankingRun& run);

/// 0/1 relevance of each rank position.
std::vector<int> ranked_relevance(const RankingRun& run);

/// Metrics over a 0/1 relevance list in rank order.
double average_precision(std::span<const int> relevance);
double nmsd(std::span<const int> relevance);

struct TopN {
  double hr = 0.0;  // hits / N
  double recall = 0.0;
  double ndcg = 0.0;
};
TopN topn_metrics(std::span<const int> relevance, std::size_t n);

double average_precision(const RankingRun& run);
double nmsd(const RankingRun& run);
TopN topn_metrics(const RankingRun& run, std::size_t n);

struct MetricSummary {
  std::size_t records = 0;   // runs that entered the averages
  std::size_t excluded = 0;  // runs without positives
  double map = 0.0;
  double nmsd = 0.0;
  std::vector<TopN> topn;  // topn[n - 1] for n = 1..max_n

  double ndcg(std::size_t n) const { return topn.at(n - 1).ndcg; }
};

/// Averages over runs with at least one positive; the rest are counted and logged.
MetricSummary summarize(std::span<const RankingRun> runs, std::size_t max_n = 5);

/// Scores segments for users from a checkpoint alone: u_a is the trained final user
/// embedding, every segment goes through T(W0 f).
class InductiveScorer {
 public:
  InductiveScorer(const Checkpoint& ckpt, const FeatureStore& features);

  std::size_t user_row(const std::string& user_key) const;  // throws InvalidInput
  std::span<const float> user_embedding(std::size_t row) const;
  /// T(W0 f) for one segment key; throws MissingFeature.
  nk::Tensorf item_embedding(const std::string& segment_key) const;
  /// Scores for several keys; throws MissingFeature listing every missing key.
  std::vector<double> score(std::size_t user_row, std::span<const std::string> keys) const;

 private:
  const Checkpoint* ckpt_;
  const FeatureStore* features_;
  nk::Activation activation_;
  std::unordered_map<std::string, std::size_t> users_;
};

/// Ranks each record's candidates; records are independent so they are split across
/// `threads` workers and written back in input order. Empty-candidate records are skipped.
std::vector<RankingRun> score_records(const Corpus& corpus, std::span<const EvalRecord> records,
                                      const InductiveScorer& scorer, std::size_t threads = 1);

RankingRun score_test_record(const Corpus& corpus, const EvalRecord& record,
                             const InductiveScorer& scorer);

/// Mean NDCG@n of a scorer that orders each candidate list uniformly at random,
/// estimated from `shuffles` permutations per record.
double random_ndcg_baseline(std::span<const EvalRecord> records, std::size_t n,
                            std::size_t shuffles, std::uint64_t seed);

struct BucketSummary {
  std::string label;
  std::size_t lower = 0;
  std::optional<std::size_t> upper;
  std::size_t users = 0;
  std::optional<MetricSummary> metrics;  // absent when no run falls in the bucket
};

/// Groups runs by the user's training degree |R_a| into [0,e0), [e0,e1), ..., [ek,inf).
std::vector<BucketSummary> sparsity_buckets(std::span<const RankingRun> runs,
                                            const RatingGraph& train_graph,
                                            std::span<const std::size_t> edges);

struct DistanceReport {
  std::size_t items = 0;
  double fused_to_graph = 0.0;        // mean ||v0 - v||
  double fused_to_transfer = 0.0;     // mean ||v0 - v_hat||
  double transfer_to_graph = 0.0;     // mean ||v_hat - v||
  double transfer_sq_error = 0.0;     // mean ||v_hat - v||^2
};

/// Per-item distances between the fused layer-0, graph-output and transferred embeddings
/// of up to `sample_size` checkpoint items.
DistanceReport embedding_distance_report(const Checkpoint& ckpt, const FeatureStore& features,
                                         std::size_t sample_size = 1000, std::uint64_t seed = 0);

nlohmann::json metrics_json(const MetricSummary& m);
nlohmann::json metrics_report(const MetricSummary& overall, std::span<const BucketSummary> buckets,
                              const std::optional<DistanceReport>& distances);
/// section,bucket,metric,n,value rows.
std::string metrics_csv(const MetricSummary& overall, std::span<const BucketSummary> buckets,
                        const std::optional<DistanceReport>& distances);

}  // namespace transgrec
