#pragma once

// Ranking metrics, attacker leakage AUC, group fairness over top-k lists,
// label-quality scoring and clustering pseudo-labels.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fairlab/agents.hpp"
#include "fairlab/data.hpp"
#include "fairlab/nn.hpp"

namespace fairlab {

// ---------------------------------------------------------------------------
// Ranking

// Fills `out` (length N) with the scores of user u.
using UserScorer = std::function<void(std::size_t u, std::span<double> out)>;

struct RankingReport {
  std::size_t k = 20;
  double recall = 0.0;
  double ndcg = 0.0;
  std::vector<std::size_t> users;  // evaluated users
  std::vector<double> per_user_recall;
  std::vector<double> per_user_ndcg;
};

// Items tagged `target` are relevant. For a test target, train and val items
// are masked; for a val target, train items are masked. Users without target
// items are skipped. Ties break toward the lower item index.
RankingReport evaluate_ranking(const UserScorer& scorer, const InteractionDataset& ds,
                               std::size_t k, SplitTag target = SplitTag::kTest);
RankingReport evaluate_ranking(const Matrix& users, const Matrix& items,
                               const InteractionDataset& ds, std::size_t k,
                               SplitTag target = SplitTag::kTest);

// scores is M x N.
double recall_at_k(const Matrix& scores, const InteractionDataset& ds, std::size_t k);
double ndcg_at_k(const Matrix& scores, const InteractionDataset& ds, std::size_t k);

// Top-k after masking train and val items.
std::vector<std::vector<std::uint32_t>> top_k_lists(const UserScorer& scorer,
                                                    const InteractionDataset& ds,
                                                    std::size_t k);

// ---------------------------------------------------------------------------
// Leakage

// Binary AUC by rank sums with midranks for ties. labels are 0/1.
// ArgumentError when one class is missing.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

struct AttackerConfig {
  std::size_t hidden = 64;
  double lr = 1e-2;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 200;
  std::size_t patience = 10;
  double test_frac = 0.2;
  double holdout_frac = 0.1;
};

struct AttackReport {
  double auc = 0.5;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  std::uint64_t seed = 0;
  std::string description;
};

// 80/20 user split; a 2-layer MLP trained with cross-entropy on standardized
// features, early-stopped on a held-out tenth of the attack-train users.
// Users with label < 0 are ignored. For arity > 2 the AUC is one-vs-rest
// macro. ArgumentError on a single-class label set.
AttackReport train_attacker(const Matrix& embeddings, const GroundTruthLabels& labels,
                            std::uint64_t seed, const AttackerConfig& config = {});

// ---------------------------------------------------------------------------
// Group fairness

// Half the L1 distance between group exposure vectors divided by k, where
// exposure_g(v) is the fraction of group-g users with v in their list. Max
// over group pairs. ArgumentError on an empty group.
double dp_at_k(std::span<const std::vector<std::uint32_t>> lists,
               std::span<const int> groups, std::size_t k);

// |Recall@k(group a) - Recall@k(group b)|, max over group pairs.
double eo_at_k(const RankingReport& report, std::span<const int> groups);
double eo_at_k(const UserScorer& scorer, const InteractionDataset& ds,
               std::span<const int> groups, std::size_t k);

// ---------------------------------------------------------------------------
// Label quality

struct LabelQualityReport {
  std::string strategy;
  double accuracy = 0.0;
  double f1 = 0.0;
  std::size_t evaluated = 0;
  std::size_t abstained = 0;
};

// Users whose prediction is kAbstain are excluded and counted; users with an
// unknown truth (< 0) are skipped. F1 is binary with positive label 1, or
// macro over labels when arity > 2. When map_clusters is set predictions are
// cluster ids and are relabelled by the best one-to-one assignment first.
LabelQualityReport label_quality(std::string strategy, std::span<const int> predicted,
                                 const GroundTruthLabels& truth, bool map_clusters = false);

// Modal non-abstaining label per user; ties and all-abstain give kAbstain.
std::vector<int> majority_vote(std::span<const AnnotationRecord> annotations,
                               std::size_t user_count, std::size_t arity);

// Label from annotator `annotator` only (kAbstain where missing).
std::vector<int> single_annotator_labels(std::span<const AnnotationRecord> annotations,
                                         std::size_t user_count, int annotator);

// Permutation maximizing the trace of the counts matrix (rows: predicted,
// cols: truth), by the Hungarian algorithm. mapping[p] is the truth label
// assigned to predicted label p.
std::vector<int> best_label_mapping(const std::vector<std::vector<std::size_t>>& counts);

// ---------------------------------------------------------------------------
// Clustering

enum class ClusterMethod { kKMeans, kGmm, kHierarchical };
ClusterMethod parse_cluster_method(std::string_view name);
std::string_view cluster_method_name(ClusterMethod method);

// Cluster ids in [0, arity). ClusteringError when there are fewer distinct
// rows than clusters.
std::vector<int> cluster_labels(const Matrix& embeddings, ClusterMethod method,
                                std::size_t arity, std::uint64_t seed);

std::vector<int> random_labels(std::size_t user_count, std::size_t arity,
                               std::uint64_t seed);

}  // namespace fairlab
