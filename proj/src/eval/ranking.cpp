#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "fairlab/errors.hpp"
#include "fairlab/eval.hpp"
#include "fairlab/kernels.hpp"

namespace fairlab {
namespace {

void check_k(std::size_t k, const InteractionDataset& ds) {
  if (k == 0 || k > ds.item_count()) {
    throw ArgumentError("k=" + std::to_string(k) + " must lie in [1, " +
                        std::to_string(ds.item_count()) + "]");
  }
}

bool masked_for(SplitTag tag, SplitTag target) {
  if (target == SplitTag::kTest) return tag != SplitTag::kTest;
  if (target == SplitTag::kVal) return tag == SplitTag::kTrain;
  return false;
}

// Top-k item indices by descending score, ties toward the lower index.
std::vector<std::uint32_t> top_k(std::span<const double> scores, std::size_t k,
                                 std::vector<std::uint32_t>& scratch) {
  scratch.resize(scores.size());
  std::iota(scratch.begin(), scratch.end(), 0U);
  const auto better = [&](std::uint32_t a, std::uint32_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  };
  std::partial_sort(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(k),
                    scratch.end(), better);
  return {scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(k)};
}

UserScorer matrix_scorer(const Matrix& scores) {
  return [&scores](std::size_t u, std::span<double> out) {
    std::ranges::copy(scores.row(u), out.begin());
  };
}

UserScorer embedding_scorer(const Matrix& users, const Matrix& items) {
  return [&users, &items](std::size_t u, std::span<double> out) {
    const auto& k = kernels::active();
    k.gemv(items.data().data(), nullptr, users.row(u).data(), out.data(), items.rows(),
           items.cols());
  };
}

}  // namespace

RankingReport evaluate_ranking(const UserScorer& scorer, const InteractionDataset& ds,
                               std::size_t k, SplitTag target) {
  check_k(k, ds);
  RankingReport report;
  report.k = k;
  std::vector<double> scores(ds.item_count());
  std::vector<std::uint32_t> scratch;
  std::vector<char> relevant(ds.item_count(), 0);
  std::vector<double> ideal(k + 1, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    ideal[i + 1] = ideal[i] + 1.0 / std::log2(static_cast<double>(i) + 2.0);
  }
  for (std::size_t u = 0; u < ds.user_count(); ++u) {
    std::size_t n_relevant = 0;
    for (auto row : ds.user_rows(u)) {
      if (ds.interactions()[row].tag == target) ++n_relevant;
    }
    if (n_relevant == 0) continue;
    scorer(u, scores);
    for (auto row : ds.user_rows(u)) {
      const auto& r = ds.interactions()[row];
      if (r.tag == target) {
        relevant[r.item] = 1;
      } else if (masked_for(r.tag, target)) {
        scores[r.item] = -std::numeric_limits<double>::infinity();
      }
    }
    const auto top = top_k(scores, k, scratch);
    std::size_t hits = 0;
    double dcg = 0.0;
    for (std::size_t rank = 0; rank < top.size(); ++rank) {
      if (relevant[top[rank]] != 0) {
        ++hits;
        dcg += 1.0 / std::log2(static_cast<double>(rank) + 2.0);
      }
    }
    for (auto row : ds.user_rows(u)) relevant[ds.interactions()[row].item] = 0;
    report.users.push_back(u);
    report.per_user_recall.push_back(static_cast<double>(hits) /
                                     static_cast<double>(n_relevant));
    report.per_user_ndcg.push_back(dcg / ideal[std::min(n_relevant, k)]);
  }
  if (!report.users.empty()) {
    const auto n = static_cast<double>(report.users.size());
    report.recall = std::accumulate(report.per_user_recall.begin(),
                                    report.per_user_recall.end(), 0.0) / n;
    report.ndcg = std::accumulate(report.per_user_ndcg.begin(),
                                  report.per_user_ndcg.end(), 0.0) / n;
  }
  return report;
}

RankingReport evaluate_ranking(const Matrix& users, const Matrix& items,
                               const InteractionDataset& ds, std::size_t k,
                               SplitTag target) {
  if (users.rows() != ds.user_count() || items.rows() != ds.item_count() ||
      users.cols() != items.cols()) {
    throw ArgumentError("embedding shapes do not match the dataset");
  }
  return evaluate_ranking(embedding_scorer(users, items), ds, k, target);
}

double recall_at_k(const Matrix& scores, const InteractionDataset& ds, std::size_t k) {
  if (scores.rows() != ds.user_count() || scores.cols() != ds.item_count()) {
    throw ArgumentError("score matrix shape does not match the dataset");
  }
  return evaluate_ranking(matrix_scorer(scores), ds, k).recall;
}

double ndcg_at_k(const Matrix& scores, const InteractionDataset& ds, std::size_t k) {
  if (scores.rows() != ds.user_count() || scores.cols() != ds.item_count()) {
    throw ArgumentError("score matrix shape does not match the dataset");
  }
  return evaluate_ranking(matrix_scorer(scores), ds, k).ndcg;
}

std::vector<std::vector<std::uint32_t>> top_k_lists(const UserScorer& scorer,
                                                    const InteractionDataset& ds,
                                                    std::size_t k) {
  check_k(k, ds);
  std::vector<std::vector<std::uint32_t>> lists(ds.user_count());
  std::vector<double> scores(ds.item_count());
  std::vector<std::uint32_t> scratch;
  for (std::size_t u = 0; u < ds.user_count(); ++u) {
    scorer(u, scores);
    for (auto row : ds.user_rows(u)) {
      const auto& r = ds.interactions()[row];
      if (r.tag != SplitTag::kTest) {
        scores[r.item] = -std::numeric_limits<double>::infinity();
      }
    }
    lists[u] = top_k(scores, k, scratch);
  }
  return lists;
}

}  // namespace fairlab
