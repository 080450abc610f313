#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "support/metric_oracle.hpp"
#include "support/testbed.hpp"
#include "transgrec/eval.hpp"
#include "transgrec/trainer.hpp"

using namespace transgrec;

namespace {

std::vector<int> rel(std::initializer_list<int> v) { return v; }

RankingRun run_of(std::vector<double> scores, std::vector<std::uint32_t> positives) {
  RankingRun r;
  r.candidates.resize(scores.size());
  std::iota(r.candidates.begin(), r.candidates.end(), 0u);
  r.scores = std::move(scores);
  r.positives = std::move(positives);
  return r;
}

}  // namespace

TEST_CASE("average precision examples") {
  CHECK(average_precision(rel({1, 0, 1})) == doctest::Approx((1.0 + 2.0 / 3.0) / 2.0));
  CHECK(average_precision(rel({1, 1, 0})) == 1.0);
  CHECK(average_precision(rel({0, 0, 1})) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("nmsd examples") {
  CHECK(nmsd(rel({1, 0, 1, 0, 0})) == doctest::Approx(1.0 / 3.0));
  // g = 3, m = 2, second hit at rank 4
  CHECK(nmsd(rel({1, 0, 0, 1, 1})) == doctest::Approx(2.0 / 3.0));
  CHECK(nmsd(rel({1, 1, 0, 0})) == 0.0);
  CHECK(nmsd(rel({0, 0, 1, 1})) == 1.0);
  CHECK(nmsd(rel({1})) == 0.0);
}

TEST_CASE("top-n examples") {
  auto t = topn_metrics(rel({0, 1, 0}), 2);
  CHECK(t.hr == 0.5);
  CHECK(t.recall == 1.0);
  CHECK(t.ndcg == doctest::Approx(1.0 / std::log2(3.0)));
  t = topn_metrics(rel({1, 0}), 1);
  CHECK(t.hr == t.ndcg);
  CHECK(t.hr == 1.0);
  t = topn_metrics(rel({1, 1, 1, 0}), 2);
  CHECK(t.hr == 1.0);
  CHECK(t.ndcg == 1.0);
  CHECK(t.recall == doctest::Approx(2.0 / 3.0));
  CHECK_THROWS_AS(topn_metrics(rel({1}), 0), InvalidInput);
}

TEST_CASE("ties rank by ascending segment id") {
  RankingRun r;
  r.candidates = {9, 4, 7};
  r.scores = {1.0, 1.0, 2.0};
  r.positives = {4};
  CHECK(ranking_order(r) == std::vector<std::size_t>{2, 1, 0});
  CHECK(ranked_relevance(r) == std::vector<int>{0, 1, 0});
}

TEST_CASE("metrics equal a brute-force reimplementation") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto run = metric_oracle::random_run(rng);
    const auto b = metric_oracle::brute(run, 5);
    CAPTURE(trial);
    CHECK(average_precision(run) == b.ap);
    CHECK(nmsd(run) == b.nmsd);
    for (std::size_t n = 1; n <= 5; ++n) {
      const auto t = topn_metrics(run, n);
      CHECK(t.hr == b.hr[n - 1]);
      CHECK(t.recall == b.recall[n - 1]);
      CHECK(t.ndcg == b.ndcg[n - 1]);
    }
  }
}

TEST_CASE("metric ranges") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 500; ++trial) {
    const auto run = metric_oracle::random_run(rng);
    for (double v : {average_precision(run), nmsd(run), topn_metrics(run, 3).hr, topn_metrics(run, 3).recall,
                     topn_metrics(run, 3).ndcg}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("perfect oracle identities") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 300; ++trial) {
    auto run = metric_oracle::random_run(rng);
    for (std::size_t c = 0; c < run.candidates.size(); ++c)
      run.scores[c] = std::binary_search(run.positives.begin(), run.positives.end(), run.candidates[c]) ? 1.0 : 0.0;
    CHECK(average_precision(run) == 1.0);
    CHECK(nmsd(run) == 0.0);
    for (std::size_t n = 1; n <= std::min<std::size_t>(5, run.positives.size()); ++n)
      CHECK(topn_metrics(run, n).ndcg == 1.0);
  }
}

TEST_CASE("reversed oracle attains the minimum NDCG@5") {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + trial % 5;
    std::vector<int> r(n, 0);
    const std::size_t g = 1 + static_cast<std::size_t>(rng() % (n - 1));
    std::fill(r.begin(), r.begin() + static_cast<std::ptrdiff_t>(g), 1);
    std::sort(r.begin(), r.end());
    const double reversed = topn_metrics(r, 5).ndcg;  // all positives last
    double lowest = 1.0;
    do lowest = std::min(lowest, topn_metrics(r, 5).ndcg);
    while (std::next_permutation(r.begin(), r.end()));
    CHECK(reversed == lowest);
  }
}

TEST_CASE("metrics depend only on the score order") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    auto run = metric_oracle::random_run(rng);
    auto moved = run;
    for (auto& s : moved.scores) s = std::exp(2.0 * s) - 3.0;
    CHECK(average_precision(run) == average_precision(moved));
    CHECK(nmsd(run) == nmsd(moved));
    CHECK(topn_metrics(run, 5).ndcg == topn_metrics(moved, 5).ndcg);
  }
}

TEST_CASE("summarize excludes runs without positives") {
  std::vector<RankingRun> runs{run_of({2, 1}, {0}), run_of({2, 1}, {1}), run_of({1, 2}, {})};
  const auto s = summarize(runs, 2);
  CHECK(s.records == 2);
  CHECK(s.excluded == 1);
  CHECK(s.map == doctest::Approx(0.75));
  CHECK(s.ndcg(1) == 0.5);
  CHECK(s.topn.size() == 2);
}

TEST_CASE("sparsity bucket boundaries") {
  // user 0 has 7 training edges, user 1 has 8
  std::vector<RatingGraph::Edge> edges;
  for (std::uint32_t i = 0; i < 7; ++i) edges.push_back({0, i});
  for (std::uint32_t i = 0; i < 8; ++i) edges.push_back({1, i});
  std::vector<std::uint32_t> seg(8), vid(8, 0);
  std::iota(seg.begin(), seg.end(), 0u);
  const RatingGraph g(2, seg, vid, edges);
  auto r0 = run_of({1, 0}, {0});
  auto r1 = run_of({0, 1}, {0});
  r1.user = 1;
  const std::vector<RankingRun> runs{r0, r1};
  const std::size_t cuts[] = {8, 16};
  const auto b = sparsity_buckets(runs, g, cuts);
  REQUIRE(b.size() == 3);
  CHECK(b[0].label == "[0,8)");
  CHECK(b[0].users == 1);
  CHECK(b[0].metrics->map == 1.0);
  CHECK(b[1].label == "[8,16)");
  CHECK(b[1].metrics->map == 0.5);
  CHECK(b[2].label == "[16,inf)");
  CHECK_FALSE(b[2].metrics.has_value());
  const std::size_t bad[] = {8, 8};
  CHECK_THROWS_AS(sparsity_buckets(runs, g, bad), InvalidInput);
}

TEST_CASE("inductive scoring on a trained checkpoint") {
  spdlog::set_level(spdlog::level::warn);
  const auto ds = testbed::make("eval_scoring", testbed::small(3));
  const TrainingSet data(ds.corpus, ds.split, ds.features);
  TrainConfig cfg;
  cfg.model.dim = 8;
  cfg.max_epochs = 0;
  auto ckpt = train(data, cfg).checkpoint;
  const auto records = test_records(ds.corpus, ds.split);
  REQUIRE(!records.empty());
  const InductiveScorer scorer(ckpt, ds.features);

  SUBCASE("scores match an independent forward pass") {
    const auto& rec = records.front();
    const auto run = score_test_record(ds.corpus, rec, scorer);
    const auto& p = ckpt.params;
    const std::size_t row = scorer.user_row(ds.corpus.users[rec.user]);
    for (std::size_t c = 0; c < rec.candidates.size(); ++c) {
      const auto f = ds.features.at(ds.corpus.segment_key(rec.candidates[c]));
      std::vector<double> x(p.gnn.reduce.rows(), 0.0);
      for (std::size_t r = 0; r < x.size(); ++r)
        for (std::size_t k = 0; k < f.size(); ++k) x[r] += double(p.gnn.reduce(r, k)) * f[k];
      for (const auto& w : p.transfer.weights) {
        std::vector<double> y(w.rows(), 0.0);
        for (std::size_t r = 0; r < y.size(); ++r) {
          for (std::size_t k = 0; k < x.size(); ++k) y[r] += double(w(r, k)) * x[k];
          y[r] = std::max(0.0, y[r]);
        }
        x = y;
      }
      double s = 0.0;
      for (std::size_t k = 0; k < x.size(); ++k) s += double(ckpt.user_final(row, k)) * x[k];
      CHECK(run.scores[c] == doctest::Approx(s).epsilon(1e-5));
    }
  }
  SUBCASE("a zero user scores every candidate equally and ranks by id") {
    for (auto& v : ckpt.user_final.data()) v = 0.0f;
    const InductiveScorer zero(ckpt, ds.features);
    const auto run = score_test_record(ds.corpus, records.front(), zero);
    for (double s : run.scores) CHECK(s == 0.0);
    std::vector<std::size_t> idx(run.candidates.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    CHECK(ranking_order(run) == idx);
  }
  SUBCASE("single candidate") {
    EvalRecord one = records.front();
    one.candidates.resize(1);
    one.positives = {one.candidates[0]};
    const auto run = score_test_record(ds.corpus, one, scorer);
    CHECK(average_precision(run) == 1.0);
    CHECK(topn_metrics(run, 5).ndcg == 1.0);
  }
  SUBCASE("threaded scoring matches serial and skips empty records") {
    auto recs = records;
    recs.push_back(EvalRecord{records.front().user, records.front().video, {}, {}});
    const auto serial = score_records(ds.corpus, recs, scorer, 1);
    const auto threaded = score_records(ds.corpus, recs, scorer, 3);
    CHECK(serial.size() == records.size());
    REQUIRE(threaded.size() == serial.size());
    for (std::size_t i = 0; i < serial.size(); ++i) CHECK(threaded[i].scores == serial[i].scores);
  }
  SUBCASE("unknown user and missing features") {
    CHECK_THROWS_AS(scorer.user_row("nobody"), InvalidInput);
    const std::string keys[] = {"no_such_video#1"};
    CHECK_THROWS_AS(scorer.score(0, keys), MissingFeature);
  }
  SUBCASE("distance report over every item ignores the seed") {
    const auto a = embedding_distance_report(ckpt, ds.features, ckpt.items.size(), 1);
    const auto b = embedding_distance_report(ckpt, ds.features, ckpt.items.size(), 2);
    CHECK(a.items == ckpt.items.size());
    CHECK(a.fused_to_graph == b.fused_to_graph);
    CHECK(a.transfer_sq_error == b.transfer_sq_error);
    CHECK(a.transfer_sq_error >= 0.0);
    const auto c = embedding_distance_report(ckpt, ds.features, 5, 1);
    CHECK(c.items == 5);
  }
}

TEST_CASE("random baseline") {
  std::vector<EvalRecord> recs{{0, 0, {0, 1}, {0}}};
  // one positive among two: NDCG@5 is 1 or 1/log2(3) with equal odds
  const double expect = (1.0 + 1.0 / std::log2(3.0)) / 2.0;
  CHECK(random_ndcg_baseline(recs, 5, 20000, 1) == doctest::Approx(expect).epsilon(0.01));
  std::vector<EvalRecord> all{{0, 0, {0, 1, 2}, {0, 1, 2}}};
  CHECK(random_ndcg_baseline(all, 5, 50, 1) == 1.0);
}
