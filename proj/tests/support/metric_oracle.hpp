#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "transgrec/eval.hpp"

namespace metric_oracle {

using transgrec::RankingRun;

// Straight from the metric definitions, with 1-based ranks assigned by counting.
struct Brute {
  double ap, nmsd;
  std::vector<double> hr, recall, ndcg;
};

inline Brute brute(const RankingRun& run, std::size_t max_n) {
  const std::size_t n = run.candidates.size();
  std::vector<int> at_rank(n + 1, 0);
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t rank = 1;
    for (std::size_t o = 0; o < n; ++o) {
      if (o == c) continue;
      if (run.scores[o] > run.scores[c] || (run.scores[o] == run.scores[c] && run.candidates[o] < run.candidates[c]))
        ++rank;
    }
    at_rank[rank] =
        std::find(run.positives.begin(), run.positives.end(), run.candidates[c]) != run.positives.end();
  }
  const std::size_t g = run.positives.size();
  auto hits_upto = [&](std::size_t k) {
    std::size_t h = 0;
    for (std::size_t r = 1; r <= std::min(k, n); ++r) h += at_rank[r];
    return h;
  };
  Brute b{};
  for (std::size_t r = 1; r <= n; ++r)
    if (at_rank[r]) b.ap += static_cast<double>(hits_upto(r)) / static_cast<double>(r);
  b.ap /= static_cast<double>(g);
  const std::size_t m = g / 2 + 1;
  std::size_t k = 1;
  while (hits_upto(k) < m && k < n) ++k;
  b.nmsd = n > m ? static_cast<double>(k - m) / static_cast<double>(n - m) : 0.0;
  for (std::size_t cut = 1; cut <= max_n; ++cut) {
    double dcg = 0, idcg = 0;
    for (std::size_t r = 1; r <= std::min(cut, n); ++r)
      if (at_rank[r]) dcg += 1.0 / std::log2(static_cast<double>(r) + 1.0);
    for (std::size_t r = 1; r <= std::min(cut, g); ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 1.0);
    b.hr.push_back(static_cast<double>(hits_upto(cut)) / static_cast<double>(cut));
    b.recall.push_back(static_cast<double>(hits_upto(cut)) / static_cast<double>(g));
    b.ndcg.push_back(dcg / idcg);
  }
  return b;
}

inline RankingRun random_run(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> len(1, 12);
  const std::size_t n = len(rng);
  std::vector<std::uint32_t> ids(n);
  std::iota(ids.begin(), ids.end(), 0u);
  std::shuffle(ids.begin(), ids.end(), rng);
  std::uniform_int_distribution<int> coarse(0, 3);  // few distinct scores so ties happen
  RankingRun r;
  r.candidates = ids;
  for (std::size_t c = 0; c < n; ++c) r.scores.push_back(coarse(rng));
  const std::size_t g = std::uniform_int_distribution<std::size_t>(1, n)(rng);
  r.positives.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(g));
  std::sort(r.positives.begin(), r.positives.end());
  return r;
}

}  // namespace metric_oracle
