#include <algorithm>
#include <limits>

#include "fairlab/errors.hpp"
#include "fairlab/eval.hpp"

namespace fairlab {

std::vector<int> best_label_mapping(const std::vector<std::vector<std::size_t>>& counts) {
  // Hungarian algorithm (potentials form) on cost = max - count.
  const std::size_t n = counts.size();
  for (const auto& row : counts) {
    if (row.size() != n) throw ArgumentError("count matrix must be square");
  }
  if (n == 0) return {};
  std::size_t top = 0;
  for (const auto& row : counts) {
    for (auto c : row) top = std::max(top, c);
  }
  const auto cost = [&](std::size_t i, std::size_t j) {
    return static_cast<double>(top - counts[i - 1][j - 1]);
  };
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0);
  std::vector<double> v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0);
  std::vector<std::size_t> way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j] != 0) continue;
        const double cur = cost(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j] != 0) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> mapping(n, 0);
  for (std::size_t j = 1; j <= n; ++j) mapping[p[j] - 1] = static_cast<int>(j - 1);
  return mapping;
}

LabelQualityReport label_quality(std::string strategy, std::span<const int> predicted,
                                 const GroundTruthLabels& truth, bool map_clusters) {
  if (predicted.size() != truth.labels.size()) {
    throw ArgumentError("prediction count does not match the label count");
  }
  const auto arity = static_cast<std::size_t>(truth.arity);
  if (arity < 2) throw ArgumentError("label arity must be >= 2");
  LabelQualityReport report;
  report.strategy = std::move(strategy);
  std::vector<int> pred(predicted.begin(), predicted.end());
  for (std::size_t u = 0; u < pred.size(); ++u) {
    if (pred[u] == kAbstain) continue;
    if (pred[u] < 0 || static_cast<std::size_t>(pred[u]) >= arity) {
      throw ArgumentError("prediction " + std::to_string(pred[u]) +
                          " outside the label arity " + std::to_string(arity));
    }
  }
  std::vector<std::vector<std::size_t>> counts(arity, std::vector<std::size_t>(arity, 0));
  for (std::size_t u = 0; u < pred.size(); ++u) {
    if (truth.labels[u] < 0) continue;
    if (static_cast<std::size_t>(truth.labels[u]) >= arity) {
      throw ArgumentError("truth label exceeds the declared arity");
    }
    if (pred[u] == kAbstain) {
      ++report.abstained;
      continue;
    }
    ++counts[static_cast<std::size_t>(pred[u])][static_cast<std::size_t>(truth.labels[u])];
  }
  if (map_clusters) {
    const auto mapping = best_label_mapping(counts);
    std::vector<std::vector<std::size_t>> remapped(arity, std::vector<std::size_t>(arity, 0));
    for (std::size_t p = 0; p < arity; ++p) {
      remapped[static_cast<std::size_t>(mapping[p])] = counts[p];
    }
    counts = std::move(remapped);
  }
  // counts[pred][truth]
  std::size_t correct = 0;
  for (std::size_t l = 0; l < arity; ++l) {
    correct += counts[l][l];
    for (std::size_t t = 0; t < arity; ++t) report.evaluated += counts[l][t];
  }
  if (report.evaluated == 0) return report;
  report.accuracy = static_cast<double>(correct) / static_cast<double>(report.evaluated);
  const auto f1_of = [&](std::size_t l) {
    std::size_t fp = 0;
    std::size_t fn = 0;
    for (std::size_t o = 0; o < arity; ++o) {
      if (o == l) continue;
      fp += counts[l][o];
      fn += counts[o][l];
    }
    const std::size_t tp = counts[l][l];
    const std::size_t denom = 2 * tp + fp + fn;
    return denom == 0 ? 1.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
  };
  if (arity == 2) {
    report.f1 = f1_of(1);
  } else {
    double sum = 0.0;
    for (std::size_t l = 0; l < arity; ++l) sum += f1_of(l);
    report.f1 = sum / static_cast<double>(arity);
  }
  return report;
}

std::vector<int> majority_vote(std::span<const AnnotationRecord> annotations,
                               std::size_t user_count, std::size_t arity) {
  std::vector<std::vector<std::size_t>> votes(user_count, std::vector<std::size_t>(arity, 0));
  for (const auto& r : annotations) {
    if (r.user >= user_count) throw ArgumentError("annotation for unknown user");
    if (r.abstained()) continue;
    if (static_cast<std::size_t>(r.label) >= arity) {
      throw ArgumentError("annotation label outside the arity");
    }
    ++votes[r.user][static_cast<std::size_t>(r.label)];
  }
  std::vector<int> out(user_count, kAbstain);
  for (std::size_t u = 0; u < user_count; ++u) {
    const auto& v = votes[u];
    const auto best = std::ranges::max_element(v);
    if (*best == 0) continue;
    if (std::ranges::count(v, *best) > 1) continue;
    out[u] = static_cast<int>(best - v.begin());
  }
  return out;
}

std::vector<int> single_annotator_labels(std::span<const AnnotationRecord> annotations,
                                         std::size_t user_count, int annotator) {
  std::vector<int> out(user_count, kAbstain);
  for (const auto& r : annotations) {
    if (r.annotator == annotator && r.user < user_count) out[r.user] = r.label;
  }
  return out;
}

}  // namespace fairlab
