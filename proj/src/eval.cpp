#include "transgrec/eval.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <thread>

#include "transgrec/error.hpp"

namespace transgrec {

using json = nlohmann::json;

std::vector<std::size_t> ranking_order(const RankingRun& run) {
  if (run.scores.size() != run.candidates.size()) {
    throw ShapeError("ranking run has " + std::to_string(run.scores.size()) + " scores for " +
                     std::to_string(run.candidates.size()) + " candidates");
  }
  std::vector<std::size_t> order(run.candidates.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (run.scores[a] != run.scores[b]) return run.scores[a] > run.scores[b];
    return run.candidates[a] < run.candidates[b];
  });
  return order;
}

std::vector<int> ranked_relevance(const RankingRun& run) {
  std::vector<std::uint32_t> pos = run.positives;
  std::sort(pos.begin(), pos.end());
  std::vector<int> rel;
  rel.reserve(run.candidates.size());
  for (auto idx : ranking_order(run)) {
    rel.push_back(std::binary_search(pos.begin(), pos.end(), run.candidates[idx]) ? 1 : 0);
  }
  return rel;
}

namespace {
std::size_t count_ones(std::span<const int> rel) {
  return static_cast<std::size_t>(std::count(rel.begin(), rel.end(), 1));
}
}  // namespace

double average_precision(std::span<const int> rel) {
  const std::size_t g = count_ones(rel);
  if (g == 0) return 0.0;
  double acc = 0.0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < rel.size(); ++r) {
    if (rel[r]) {
      ++hits;
      acc += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
  }
  return acc / static_cast<double>(g);
}

double nmsd(std::span<const int> rel) {
  const std::size_t g = count_ones(rel);
  if (g == 0) return 0.0;
  const std::size_t m = g / 2 + 1;
  const std::size_t n = rel.size();
  if (n <= m) return 0.0;
  std::size_t hits = 0, k = n;
  for (std::size_t r = 0; r < n; ++r) {
    hits += rel[r] ? 1 : 0;
    if (hits >= m) {
      k = r + 1;
      break;
    }
  }
  return static_cast<double>(k - m) / static_cast<double>(n - m);
}

TopN topn_metrics(std::span<const int> rel, std::size_t n) {
  if (n == 0) throw InvalidInput("top-N cutoff must be at least 1");
  const std::size_t g = count_ones(rel);
  TopN out;
  std::size_t hits = 0;
  double dcg = 0.0;
  for (std::size_t r = 0; r < std::min(n, rel.size()); ++r) {
    if (rel[r]) {
      ++hits;
      dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
    }
  }
  double idcg = 0.0;
  for (std::size_t r = 0; r < std::min(n, g); ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  out.hr = static_cast<double>(hits) / static_cast<double>(n);
  out.recall = g ? static_cast<double>(hits) / static_cast<double>(g) : 0.0;
  out.ndcg = idcg > 0.0 ? dcg / idcg : 0.0;
  return out;
}

double average_precision(const RankingRun& run) { return average_precision(ranked_relevance(run)); }
double nmsd(const RankingRun& run) { return nmsd(ranked_relevance(run)); }
TopN topn_metrics(const RankingRun& run, std::size_t n) { return topn_metrics(ranked_relevance(run), n); }

MetricSummary summarize(std::span<const RankingRun> runs, std::size_t max_n) {
  MetricSummary s;
  s.topn.assign(max_n, TopN{});
  for (const auto& run : runs) {
    const auto rel = ranked_relevance(run);
    if (count_ones(rel) == 0) {
      ++s.excluded;
      continue;
    }
    ++s.records;
    s.map += average_precision(rel);
    s.nmsd += nmsd(rel);
    for (std::size_t n = 1; n <= max_n; ++n) {
      const TopN t = topn_metrics(rel, n);
      s.topn[n - 1].hr += t.hr;
      s.topn[n - 1].recall += t.recall;
      s.topn[n - 1].ndcg += t.ndcg;
    }
  }
  if (s.excluded) spdlog::warn("{} ranking run(s) without positives excluded from metrics", s.excluded);
  if (s.records) {
    const double k = static_cast<double>(s.records);
    s.map /= k;
    s.nmsd /= k;
    for (auto& t : s.topn) {
      t.hr /= k;
      t.recall /= k;
      t.ndcg /= k;
    }
  }
  return s;
}

InductiveScorer::InductiveScorer(const Checkpoint& ckpt, const FeatureStore& features)
    : ckpt_(&ckpt), features_(&features), activation_(nk::Activation::relu) {
  const auto& hp = ckpt.hyperparameters;
  if (hp.contains("activation")) activation_ = parse_activation(hp.at("activation").get<std::string>());
  if (ckpt.params.gnn.reduce.cols() != features.dim()) {
    throw ShapeError("checkpoint expects " + std::to_string(ckpt.params.gnn.reduce.cols()) +
                     "-dim features, feature store has " + std::to_string(features.dim()));
  }
  if (ckpt.user_final.rows() != ckpt.users.size()) {
    throw ShapeError("checkpoint user table does not match its user list");
  }
  for (std::size_t r = 0; r < ckpt.users.size(); ++r) users_.emplace(ckpt.users[r], r);
}

std::size_t InductiveScorer::user_row(const std::string& user_key) const {
  auto it = users_.find(user_key);
  if (it == users_.end()) throw InvalidInput("unknown user '" + user_key + "'");
  return it->second;
}

std::span<const float> InductiveScorer::user_embedding(std::size_t row) const {
  return ckpt_->user_final.row(row);
}

nk::Tensorf InductiveScorer::item_embedding(const std::string& segment_key) const {
  return inductive_item_embed(features_->at(segment_key), ckpt_->params.gnn.reduce,
                              ckpt_->params.transfer, activation_);
}

std::vector<double> InductiveScorer::score(std::size_t user_row,
                                           std::span<const std::string> keys) const {
  const nk::Tensorf f = features_->gather<float>(keys);  // reports all missing keys at once
  const auto u = user_embedding(user_row);
  std::vector<double> out;
  out.reserve(keys.size());
  for (std::size_t r = 0; r < keys.size(); ++r) {
    const nk::Tensorf v = inductive_item_embed(f.row(r), ckpt_->params.gnn.reduce,
                                               ckpt_->params.transfer, activation_);
    out.push_back(static_cast<double>(predict<float>(u, v.data())));
  }
  return out;
}

RankingRun score_test_record(const Corpus& corpus, const EvalRecord& record,
                             const InductiveScorer& scorer) {
  RankingRun run{record.user, record.video, record.candidates, {}, record.positives};
  std::vector<std::string> keys;
  keys.reserve(record.candidates.size());
  for (auto s : record.candidates) keys.push_back(corpus.segment_key(s));
  run.scores = scorer.score(scorer.user_row(corpus.users.at(record.user)), keys);
  return run;
}

std::vector<RankingRun> score_records(const Corpus& corpus, std::span<const EvalRecord> records,
                                      const InductiveScorer& scorer, std::size_t threads) {
  std::vector<const EvalRecord*> work;
  for (const auto& r : records) {
    if (r.candidates.empty()) {
      spdlog::warn("record for user {} video {} has no candidates; skipped", r.user, r.video);
      continue;
    }
    work.push_back(&r);
  }
  std::vector<RankingRun> out(work.size());
  threads = std::max<std::size_t>(1, std::min(threads, work.size()));
  if (threads == 1) {
    for (std::size_t i = 0; i < work.size(); ++i) out[i] = score_test_record(corpus, *work[i], scorer);
    return out;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < work.size(); i += threads) {
          out[i] = score_test_record(corpus, *work[i], scorer);
        }
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

double random_ndcg_baseline(std::span<const EvalRecord> records, std::size_t n,
                            std::size_t shuffles, std::uint64_t seed) {
  Rng rng = make_stream(seed, "baseline");
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& rec : records) {
    if (rec.positives.empty() || rec.candidates.empty()) continue;
    std::vector<int> rel(rec.candidates.size());
    for (std::size_t c = 0; c < rec.candidates.size(); ++c) {
      rel[c] = std::binary_search(rec.positives.begin(), rec.positives.end(), rec.candidates[c]);
    }
    double acc = 0.0;
    for (std::size_t s = 0; s < shuffles; ++s) {
      shuffle(rel.begin(), rel.end(), rng);
      acc += topn_metrics(rel, n).ndcg;
    }
    total += acc / static_cast<double>(shuffles);
    ++count;
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

std::vector<BucketSummary> sparsity_buckets(std::span<const RankingRun> runs,
                                            const RatingGraph& train_graph,
                                            std::span<const std::size_t> edges) {
  for (std::size_t i = 1; i < edges.size(); ++i) {
    if (edges[i] <= edges[i - 1]) throw InvalidInput("bucket edges must be strictly increasing");
  }
  std::vector<BucketSummary> out(edges.size() + 1);
  for (std::size_t b = 0; b < out.size(); ++b) {
    out[b].lower = b == 0 ? 0 : edges[b - 1];
    if (b < edges.size()) out[b].upper = edges[b];
    out[b].label = "[" + std::to_string(out[b].lower) + "," +
                   (out[b].upper ? std::to_string(*out[b].upper) + ")" : std::string("inf)"));
  }
  auto bucket_of = [&](std::size_t degree) {
    return static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), degree) - edges.begin());
  };
  std::vector<std::vector<RankingRun>> grouped(out.size());
  std::vector<std::vector<std::uint32_t>> users(out.size());
  for (const auto& run : runs) {
    const std::size_t degree =
        run.user < train_graph.num_users() ? train_graph.user_items()[run.user].size() : 0;
    const std::size_t b = bucket_of(degree);
    grouped[b].push_back(run);
    users[b].push_back(run.user);
  }
  for (std::size_t b = 0; b < out.size(); ++b) {
    std::sort(users[b].begin(), users[b].end());
    out[b].users = static_cast<std::size_t>(std::unique(users[b].begin(), users[b].end()) - users[b].begin());
    if (!grouped[b].empty()) out[b].metrics = summarize(grouped[b]);
  }
  return out;
}

DistanceReport embedding_distance_report(const Checkpoint& ckpt, const FeatureStore& features,
                                         std::size_t sample_size, std::uint64_t seed) {
  const auto& p = ckpt.params;
  const std::size_t n = ckpt.items.size();
  std::vector<std::size_t> items(n);
  std::iota(items.begin(), items.end(), std::size_t{0});
  if (sample_size < n) {
    Rng rng = make_stream(seed, "distance");
    shuffle(items.begin(), items.end(), rng);
    items.resize(sample_size);
    std::sort(items.begin(), items.end());
  }
  nk::Activation act = nk::Activation::relu;
  if (ckpt.hyperparameters.contains("activation")) {
    act = parse_activation(ckpt.hyperparameters.at("activation").get<std::string>());
  }
  auto dist_sq = [](std::span<const float> a, std::span<const float> b) {
    double s = 0.0;
    for (std::size_t c = 0; c < a.size(); ++c) {
      const double d = static_cast<double>(a[c]) - static_cast<double>(b[c]);
      s += d * d;
    }
    return s;
  };
  DistanceReport r;
  for (auto i : items) {
    const auto f = features.at(ckpt.items[i]);
    nk::Tensorf fv({f.size()}, std::vector<float>(f.begin(), f.end()));
    nk::Tensorf z({p.gnn.item_emb.cols()},
                  std::vector<float>(p.gnn.item_emb.row(i).begin(), p.gnn.item_emb.row(i).end()));
    const auto fused = fuse_item(fv, z, p.gnn.reduce);
    const nk::Tensorf vhat = transfer_forward(fused.content, p.transfer, act);
    const auto v = ckpt.item_final.row(i);
    const double tg = dist_sq(vhat.data(), v);
    r.fused_to_graph += std::sqrt(dist_sq(fused.fused.data(), v));
    r.fused_to_transfer += std::sqrt(dist_sq(fused.fused.data(), vhat.data()));
    r.transfer_to_graph += std::sqrt(tg);
    r.transfer_sq_error += tg;
  }
  r.items = items.size();
  if (r.items) {
    const double k = static_cast<double>(r.items);
    r.fused_to_graph /= k;
    r.fused_to_transfer /= k;
    r.transfer_to_graph /= k;
    r.transfer_sq_error /= k;
  }
  return r;
}

json metrics_json(const MetricSummary& m) {
  json topn = json::array();
  for (std::size_t n = 1; n <= m.topn.size(); ++n) {
    const auto& t = m.topn[n - 1];
    topn.push_back({{"n", n}, {"hr", t.hr}, {"recall", t.recall}, {"ndcg", t.ndcg}});
  }
  return {{"records", m.records}, {"excluded", m.excluded}, {"map", m.map},
          {"nmsd", m.nmsd},       {"topn", std::move(topn)}};
}

namespace {
json distances_json(const DistanceReport& d) {
  return {{"items", d.items},
          {"fused_to_graph", d.fused_to_graph},
          {"fused_to_transfer", d.fused_to_transfer},
          {"transfer_to_graph", d.transfer_to_graph},
          {"transfer_sq_error", d.transfer_sq_error}};
}
}  // namespace

json metrics_report(const MetricSummary& overall, std::span<const BucketSummary> buckets,
                    const std::optional<DistanceReport>& distances) {
  json out;
  out["overall"] = metrics_json(overall);
  json b = json::array();
  for (const auto& bucket : buckets) {
    json e{{"bucket", bucket.label}, {"users", bucket.users}};
    e["metrics"] = bucket.metrics ? metrics_json(*bucket.metrics) : json(nullptr);
    b.push_back(std::move(e));
  }
  out["sparsity"] = std::move(b);
  out["embedding_distance"] = distances ? distances_json(*distances) : json(nullptr);
  return out;
}

std::string metrics_csv(const MetricSummary& overall, std::span<const BucketSummary> buckets,
                        const std::optional<DistanceReport>& distances) {
  std::ostringstream os;
  os.precision(10);
  os << "section,bucket,metric,n,value\n";
  auto emit = [&](const std::string& section, const std::string& bucket, const MetricSummary& m) {
    os << section << ',' << bucket << ",records,," << m.records << '\n';
    os << section << ',' << bucket << ",map,," << m.map << '\n';
    os << section << ',' << bucket << ",nmsd,," << m.nmsd << '\n';
    for (std::size_t n = 1; n <= m.topn.size(); ++n) {
      os << section << ',' << bucket << ",hr," << n << ',' << m.topn[n - 1].hr << '\n';
      os << section << ',' << bucket << ",recall," << n << ',' << m.topn[n - 1].recall << '\n';
      os << section << ',' << bucket << ",ndcg," << n << ',' << m.topn[n - 1].ndcg << '\n';
    }
  };
  emit("overall", "all", overall);
  for (const auto& b : buckets) {
    if (b.metrics) emit("sparsity", b.label, *b.metrics);
  }
  if (distances) {
    os << "distance,all,fused_to_graph,," << distances->fused_to_graph << '\n';
    os << "distance,all,fused_to_transfer,," << distances->fused_to_transfer << '\n';
    os << "distance,all,transfer_to_graph,," << distances->transfer_to_graph << '\n';
    os << "distance,all,transfer_sq_error,," << distances->transfer_sq_error << '\n';
  }
  return os.str();
}

}  // namespace transgrec
