#include <algorithm>
#include <cmath>
#include <map>

#include "fairlab/errors.hpp"
#include "fairlab/eval.hpp"

namespace fairlab {
namespace {

std::map<int, std::vector<std::size_t>> group_members(std::span<const int> groups,
                                                      std::size_t user_count) {
  if (groups.size() != user_count) {
    throw ArgumentError("group vector length does not match the user count");
  }
  std::map<int, std::vector<std::size_t>> members;
  for (std::size_t u = 0; u < groups.size(); ++u) {
    if (groups[u] >= 0) members[groups[u]].push_back(u);
  }
  if (members.size() < 2) throw ArgumentError("need at least two nonempty groups");
  return members;
}

}  // namespace

double dp_at_k(std::span<const std::vector<std::uint32_t>> lists,
               std::span<const int> groups, std::size_t k) {
  if (k == 0) throw ArgumentError("k must be positive");
  const auto members = group_members(groups, lists.size());
  std::uint32_t max_item = 0;
  for (const auto& list : lists) {
    for (auto v : list) max_item = std::max(max_item, v);
  }
  std::map<int, std::vector<double>> exposure;
  for (const auto& [g, users] : members) {
    auto& e = exposure[g];
    e.assign(static_cast<std::size_t>(max_item) + 1, 0.0);
    const double inv = 1.0 / static_cast<double>(users.size());
    for (auto u : users) {
      for (auto v : lists[u]) e[v] += inv;
    }
  }
  double worst = 0.0;
  for (auto a = exposure.begin(); a != exposure.end(); ++a) {
    for (auto b = std::next(a); b != exposure.end(); ++b) {
      double l1 = 0.0;
      for (std::size_t v = 0; v < a->second.size(); ++v) {
        l1 += std::abs(a->second[v] - b->second[v]);
      }
      worst = std::max(worst, 0.5 * l1 / static_cast<double>(k));
    }
  }
  return worst;
}

double eo_at_k(const RankingReport& report, std::span<const int> groups) {
  std::map<int, std::pair<double, std::size_t>> sums;
  for (std::size_t i = 0; i < report.users.size(); ++i) {
    const auto u = report.users[i];
    if (u >= groups.size()) throw ArgumentError("group vector is too short");
    if (groups[u] < 0) continue;
    auto& [sum, count] = sums[groups[u]];
    sum += report.per_user_recall[i];
    ++count;
  }
  int max_group = -1;
  for (int g : groups) max_group = std::max(max_group, g);
  for (int g = 0; g <= max_group; ++g) {
    if (std::ranges::find(groups, g) != groups.end() && !sums.contains(g)) {
      throw ArgumentError("group " + std::to_string(g) + " has no evaluated users");
    }
  }
  if (sums.size() < 2) throw ArgumentError("need at least two nonempty groups");
  double worst = 0.0;
  for (auto a = sums.begin(); a != sums.end(); ++a) {
    for (auto b = std::next(a); b != sums.end(); ++b) {
      const double ra = a->second.first / static_cast<double>(a->second.second);
      const double rb = b->second.first / static_cast<double>(b->second.second);
      worst = std::max(worst, std::abs(ra - rb));
    }
  }
  return worst;
}

double eo_at_k(const UserScorer& scorer, const InteractionDataset& ds,
               std::span<const int> groups, std::size_t k) {
  group_members(groups, ds.user_count());
  return eo_at_k(evaluate_ranking(scorer, ds, k), groups);
}

}  // namespace fairlab
