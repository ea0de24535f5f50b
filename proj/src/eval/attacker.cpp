#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "fairlab/errors.hpp"
#include "fairlab/eval.hpp"

namespace fairlab {

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw ArgumentError("scores and labels differ in length");
  }
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::ranges::sort(order, [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    // Midrank of the tie block, 1-based.
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) {
      if (labels[order[t]] == 1) {
        rank_sum += midrank;
        ++positives;
      } else if (labels[order[t]] != 0) {
        throw ArgumentError("binary AUC expects labels in {0, 1}");
      }
    }
    i = j;
  }
  const std::size_t negatives = scores.size() - positives;
  if (positives == 0 || negatives == 0) {
    throw ArgumentError("AUC is undefined with a single class");
  }
  const auto p = static_cast<double>(positives);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(negatives));
}

namespace {

// Stratified shuffle split: returns (first, second) with `frac` of each class
// going to second (at least one when the class has two or more members).
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(
    std::span<const std::size_t> users, std::span<const int> labels, double frac,
    Rng& rng) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (auto u : users) by_class[labels[u]].push_back(u);
  std::vector<std::size_t> first;
  std::vector<std::size_t> second;
  for (auto& [label, members] : by_class) {
    rng.shuffle(std::span(members));
    auto take = static_cast<std::size_t>(std::llround(frac * static_cast<double>(members.size())));
    if (take == 0 && members.size() >= 2) take = 1;
    second.insert(second.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
    first.insert(first.end(), members.begin() + static_cast<std::ptrdiff_t>(take), members.end());
  }
  std::ranges::sort(first);
  std::ranges::sort(second);
  return {std::move(first), std::move(second)};
}

double cross_entropy(const Mlp& net, const Matrix& x, std::span<const int> labels,
                     std::span<const std::size_t> rows) {
  double total = 0.0;
  for (auto r : rows) {
    auto logits = net.forward(x.row(r));
    total += log_sum_exp(logits) - logits[static_cast<std::size_t>(labels[r])];
  }
  return total / static_cast<double>(std::max<std::size_t>(rows.size(), 1));
}

}  // namespace

AttackReport train_attacker(const Matrix& embeddings, const GroundTruthLabels& labels,
                            std::uint64_t seed, const AttackerConfig& config) {
  if (labels.labels.size() != embeddings.rows()) {
    throw ArgumentError("label count does not match embedding rows");
  }
  std::vector<std::size_t> users;
  std::set<int> classes;
  for (std::size_t u = 0; u < labels.labels.size(); ++u) {
    if (labels.labels[u] < 0) continue;
    users.push_back(u);
    classes.insert(labels.labels[u]);
  }
  if (classes.size() < 2) throw ArgumentError("attacker AUC is undefined for a single class");
  const auto arity = static_cast<std::size_t>(
      std::max(labels.arity, *classes.rbegin() + 1));

  Rng rng(derive_seed(seed, "attacker"));
  auto [train, test] = stratified_split(users, labels.labels, config.test_frac, rng);
  auto [fit, holdout] = stratified_split(train, labels.labels, config.holdout_frac, rng);
  if (fit.empty() || test.empty()) throw ArgumentError("too few labelled users to attack");
  if (holdout.empty()) holdout = fit;

  // Standardize with attack-train statistics.
  const std::size_t d = embeddings.cols();
  std::vector<double> mean(d, 0.0);
  std::vector<double> scale(d, 0.0);
  for (auto u : train) {
    for (std::size_t k = 0; k < d; ++k) mean[k] += embeddings(u, k);
  }
  for (double& m : mean) m /= static_cast<double>(train.size());
  for (auto u : train) {
    for (std::size_t k = 0; k < d; ++k) {
      const double diff = embeddings(u, k) - mean[k];
      scale[k] += diff * diff;
    }
  }
  for (double& s : scale) {
    s = std::sqrt(s / static_cast<double>(train.size()));
    s = s > 1e-12 ? 1.0 / s : 1.0;
  }
  Matrix x(embeddings.rows(), d);
  for (auto u : users) {
    for (std::size_t k = 0; k < d; ++k) x(u, k) = (embeddings(u, k) - mean[k]) * scale[k];
  }

  Mlp net({d, config.hidden, arity});
  net.init_he(rng);
  Adam opt({config.lr});
  Mlp best = net;
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  Mlp::Trace trace;
  std::vector<double> grad(arity);
  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    rng.shuffle(std::span(fit));
    for (std::size_t start = 0; start < fit.size(); start += config.batch_size) {
      const std::size_t end = std::min(fit.size(), start + config.batch_size);
      const double inv = 1.0 / static_cast<double>(end - start);
      net.params().zero_grad();
      for (std::size_t i = start; i < end; ++i) {
        const auto u = fit[i];
        net.forward(x.row(u), trace);
        grad = trace.output;
        softmax_inplace(grad);
        grad[static_cast<std::size_t>(labels.labels[u])] -= 1.0;
        for (double& g : grad) g *= inv;
        net.backward(trace, grad, {});
      }
      opt.step(net.params());
    }
    const double loss = cross_entropy(net, x, labels.labels, holdout);
    if (loss < best_loss - 1e-9) {
      best_loss = loss;
      best = net;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }

  std::vector<std::vector<double>> probs;
  std::vector<int> test_labels;
  for (auto u : test) {
    probs.push_back(best.forward(x.row(u)));
    softmax_inplace(probs.back());
    test_labels.push_back(labels.labels[u]);
  }
  AttackReport report;
  report.n_train = train.size();
  report.n_test = test.size();
  report.seed = seed;
  report.description = "mlp(" + std::to_string(d) + "-" + std::to_string(config.hidden) +
                       "-" + std::to_string(arity) + ")";
  if (arity == 2) {
    std::vector<double> score;
    for (const auto& p : probs) score.push_back(p[1]);
    report.auc = roc_auc(score, test_labels);
    return report;
  }
  double sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < arity; ++c) {
    std::vector<double> score;
    std::vector<int> binary;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      score.push_back(probs[i][c]);
      binary.push_back(test_labels[i] == static_cast<int>(c) ? 1 : 0);
    }
    const auto pos = std::ranges::count(binary, 1);
    if (pos == 0 || pos == static_cast<std::ptrdiff_t>(binary.size())) continue;
    sum += roc_auc(score, binary);
    ++counted;
  }
  if (counted == 0) throw ArgumentError("attack test set holds a single class");
  report.auc = sum / static_cast<double>(counted);
  return report;
}

}  // namespace fairlab
