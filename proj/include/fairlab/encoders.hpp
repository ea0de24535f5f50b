#pragma once

// Matrix-factorization collaborative encoder trained with BPR.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fairlab/data.hpp"
#include "fairlab/nn.hpp"

namespace fairlab {

// User and item tables, each a flat row-major parameter buffer.
class EmbeddingTables {
 public:
  EmbeddingTables() = default;
  EmbeddingTables(std::size_t user_count, std::size_t item_count, std::size_t dim);

  std::size_t user_count() const { return user_count_; }
  std::size_t item_count() const { return item_count_; }
  std::size_t dim() const { return dim_; }

  std::span<double> user(std::size_t u);
  std::span<const double> user(std::size_t u) const;
  std::span<double> item(std::size_t v);
  std::span<const double> item(std::size_t v) const;
  std::span<double> user_grad(std::size_t u);
  std::span<double> item_grad(std::size_t v);

  ParamBuffer& users() { return users_; }
  const ParamBuffer& users() const { return users_; }
  ParamBuffer& items() { return items_; }
  const ParamBuffer& items() const { return items_; }

  Matrix user_matrix() const;
  Matrix item_matrix() const;
  void zero_grad();
  bool all_finite() const;
  bool operator==(const EmbeddingTables& other) const;

  // N(0, std^2) entries from the given seed.
  void init_normal(std::uint64_t seed, double std = 0.01);

 private:
  std::size_t user_count_ = 0;
  std::size_t item_count_ = 0;
  std::size_t dim_ = 0;
  ParamBuffer users_;
  ParamBuffer items_;
};

// u^T v; ArgumentError on a bad index.
double score(const EmbeddingTables& tables, std::size_t u, std::size_t v);

struct Triplet {
  std::uint32_t user;
  std::uint32_t pos;
  std::uint32_t neg;
};
using BprBatch = std::vector<Triplet>;

// Uniform rejection sampling of an item outside the full history of u.
// SamplingError when u has interacted with every item.
std::uint32_t sample_negative(const InteractionDataset& ds, std::size_t u, Rng& rng);

BprBatch sample_negatives(
    const InteractionDataset& ds,
    std::span<const std::pair<std::uint32_t, std::uint32_t>> positives,
    std::uint64_t seed);

// Mean over triplets of -log sigmoid(u^T v+ - u^T v-).
//
// user_vecs holds one user vector per triplet (row t for triplet t), so the
// same routine serves raw table rows and encoded users. Gradients are added
// into user_grad (per-triplet rows, may be null) and into the item rows of
// item_grad (may be null).
double bpr_loss(const Matrix& user_vecs, const EmbeddingTables& tables,
                std::span<const Triplet> batch, Matrix* user_grad,
                EmbeddingTables* item_grad);

// Convenience form: user vectors are the raw table rows, and gradients land
// in tables' own gradient buffers when accumulate is set.
double bpr_loss(EmbeddingTables& tables, std::span<const Triplet> batch,
                bool accumulate = true);

struct BprConfig {
  std::size_t batch_size = 2048;
  double lr = 1e-3;
  std::size_t max_epochs = 200;
  std::size_t patience = 10;
  std::size_t eval_k = 20;
  std::uint64_t seed = 0;
};

// Adam state for both tables.
struct TableOptimizer {
  Adam users;
  Adam items;
  explicit TableOptimizer(double lr) : users({lr}), items({lr}) {}
  void step(EmbeddingTables& tables);
};

// Positive (user, item) pairs of the train split, shuffled per epoch.
std::vector<std::pair<std::uint32_t, std::uint32_t>> train_pairs(
    const InteractionDataset& ds);

// One pass over shuffled train pairs in batches; returns the mean batch loss.
// TrainingError if a loss goes non-finite.
double train_bpr_epoch(EmbeddingTables& tables, TableOptimizer& optimizer,
                       const InteractionDataset& ds, const BprConfig& config,
                       std::size_t epoch);

struct PretrainedCF {
  EmbeddingTables tables;  // never written after pretraining
  std::size_t epochs = 0;
  std::size_t best_epoch = 0;
  double val_recall = 0.0;
  std::vector<double> loss_curve;
  std::vector<double> val_curve;
};

// Fresh tables trained until validation Recall@k stops improving for
// `patience` epochs; the best epoch's tables are kept.
PretrainedCF pretrain_cf(const InteractionDataset& ds, std::size_t dim,
                         const BprConfig& config);

// One LFSA file per table plus manifest.json {d, M, N, epoch, val_recall}.
void save_tables(const std::filesystem::path& dir, const EmbeddingTables& tables,
                 std::size_t epoch, double val_recall);
EmbeddingTables load_tables(const std::filesystem::path& dir);

}  // namespace fairlab
