#pragma once

// Confusion-aware sensitive representation learning: a sensitive encoder S,
// a softmax classifier C, one learnable confusion matrix per annotator, the
// persona consensus penalty and the rationale contrastive loss.

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "fairlab/agents.hpp"
#include "fairlab/encoders.hpp"
#include "fairlab/nn.hpp"

namespace fairlab {

struct SensitiveShape {
  std::size_t dim = 64;
  std::size_t arity = 2;
  std::size_t annotators = 4;
  std::size_t rationale_dim = 768;
};

class SensitiveModel {
 public:
  SensitiveModel() = default;
  explicit SensitiveModel(const SensitiveShape& shape);

  const SensitiveShape& shape() const { return shape_; }

  // He-initialized networks, Z_i = gamma * I, small random projection.
  void init(std::uint64_t seed, double confusion_gamma = 1.0);

  Mlp encoder;     // d -> d -> d
  Mlp classifier;  // d -> d -> |A|, softmax applied by class_probs
  ParamBuffer confusion_logits;  // annotators * |A| * |A|, row-major per matrix
  ParamBuffer projection;        // d x rationale_dim, no bias

  // Realized row-softmax F_i.
  Matrix confusion(std::size_t annotator) const;
  std::vector<double> class_probs(std::span<const double> s) const;
  // W * rationale
  std::vector<double> project(std::span<const double> rationale) const;

  void zero_grad();
  bool all_finite() const;
  bool operator==(const SensitiveModel& other) const;

 private:
  SensitiveShape shape_;
};

// s_u = S(u); ArgumentError on a dimension mismatch.
std::vector<double> encode_sensitive(const Mlp& net, std::span<const double> u);

// Component k = sum_j F[j][k] * c_j. ValidationError when c is off the
// simplex by more than 1e-6.
std::vector<double> predicted_annotator_dist(const Matrix& f,
                                             std::span<const double> class_probs);

// Directed K-nearest-persona sets with ties at the K-th distance included.
struct ConsensusGraph {
  std::size_t k = 1;
  Matrix distances;
  std::vector<std::vector<std::size_t>> neighbors;
};

ConsensusGraph consensus_neighbors(const Matrix& persona_embeddings, std::size_t k);
ConsensusGraph consensus_neighbors(std::span<const PersonaProfile> personas,
                                   std::size_t k);

// Per-user non-abstaining (annotator, label) pairs and optional rationale
// embeddings, indexed by dense user id.
struct SensitiveData {
  std::vector<std::vector<std::pair<int, int>>> labels;
  Matrix rationales;  // user_count x rationale_dim
  std::vector<bool> has_rationale;
  // Users with at least one non-abstaining annotation, ascending.
  std::vector<std::uint32_t> eligible;

  static SensitiveData build(std::size_t user_count, std::size_t arity,
                             std::size_t annotators,
                             std::span<const AnnotationRecord> annotations,
                             const Matrix& rationales = {},
                             std::span<const std::size_t> rationale_users = {});
};

// Users of one sensitive batch with their current table rows.
struct SensitiveBatch {
  std::vector<std::uint32_t> users;
  Matrix user_vecs;  // users.size() x d
};

SensitiveBatch make_sensitive_batch(const EmbeddingTables& tables,
                                    std::vector<std::uint32_t> users);

// Mean over non-abstaining (u, i) pairs of -log q_i(a~_u^i | u).
// With user_grad non-null, dL/du rows are added into it and parameter
// gradients into the model. ArgumentError if every pair abstains.
double loss_cls(SensitiveModel& model, const SensitiveData& data,
                const SensitiveBatch& batch, Matrix* user_grad);

// Sum over directed edges (i, j in Gamma(i)) of ||F_i - F_j||_F; gradients
// into confusion_logits when accumulate is set.
double loss_sim(SensitiveModel& model, const ConsensusGraph& graph,
                bool accumulate = true);

// Mean over rationales u of -s_u.e_u + log sum_j exp(s_j.e_u), with
// s (B x d) and projected rationales e (B x d) already computed. Gradients
// are added into ds / de when non-null.
double loss_fine(const Matrix& s, const Matrix& e, Matrix* ds, Matrix* de);

// loss_fine through the model: batch users lacking a rationale are skipped,
// gradients reach S, W and (if user_grad is set) the user rows.
double loss_fine(SensitiveModel& model, const SensitiveData& data,
                 const SensitiveBatch& batch, Matrix* user_grad);

struct SenWeights {
  double lambda_sim = 1e-3;
  double lambda_fine = 1e-3;
};

struct SenComponents {
  double cls = 0.0;
  double bpr = 0.0;
  double sim = 0.0;
  double fine = 0.0;
  double total = 0.0;
};

// L_cls + lambda_sim * L_sim + lambda_fine * L_fine with gradients reaching
// the user table rows of the batch.
SenComponents sensitive_objective(SensitiveModel& model, EmbeddingTables& tables,
                                  const SensitiveData& data,
                                  const SensitiveBatch& batch,
                                  const ConsensusGraph& graph,
                                  const SenWeights& weights, bool accumulate = true);

// Full composite L_sen = L_cls + L_bpr + lambda_sim L_sim + lambda_fine L_fine.
SenComponents loss_sen(SensitiveModel& model, EmbeddingTables& tables,
                       const SensitiveData& data, const SensitiveBatch& batch,
                       std::span<const Triplet> bpr_batch,
                       const ConsensusGraph& graph, const SenWeights& weights,
                       bool accumulate = true);

struct Stage1Config {
  std::size_t epochs = 50;
  std::size_t bpr_batch = 2048;
  std::size_t sens_batch = 128;
  double lr = 1e-3;
  // Step size of the confusion logits relative to lr.
  double confusion_lr_scale = 10.0;
  SenWeights weights;
  double confusion_gamma = 1.0;
  // Let the sensitive step move the user table rows of its batch.
  bool sensitive_updates_users = false;
  // Eligible users held out of the sensitive steps to measure annotator fit.
  double validation_frac = 0.2;
  // Stop once the validation fit has not improved by min_delta for this many
  // epochs and restore the best epoch; 0 trains every epoch and keeps the last.
  std::size_t patience = 5;
  double min_delta = 1e-4;
  std::uint64_t seed = 0;
};

struct Stage1Result {
  std::vector<double> bpr_curve;
  std::vector<double> sens_curve;
  std::vector<double> fit_curve;  // mean L_cls over the validation users
  std::size_t epochs = 0;
  std::size_t best_epoch = 0;
  std::vector<std::uint32_t> validation_users;
};

// Strict alternation: one BPR step on a bpr_batch of triplets, then one
// sensitive step on sens_batch eligible training users. An epoch is one pass
// over the train pairs. The model is initialized by the caller.
Stage1Result train_stage1(SensitiveModel& model, EmbeddingTables& tables,
                          const InteractionDataset& ds, const SensitiveData& data,
                          const ConsensusGraph& graph, const Stage1Config& config);

// Seeded split of data.eligible into (train, validation) users, both ascending.
// Validation is empty when fewer than two users would remain for training.
std::pair<std::vector<std::uint32_t>, std::vector<std::uint32_t>> split_eligible(
    std::span<const std::uint32_t> eligible, double validation_frac, std::uint64_t seed);

// Mean L_cls over the given users, every eligible user by default (no
// gradients).
double annotator_fit(SensitiveModel& model, const EmbeddingTables& tables,
                     const SensitiveData& data, std::span<const std::uint32_t> users = {});

void save_sensitive(const std::filesystem::path& dir, const SensitiveModel& model);
SensitiveModel load_sensitive(const std::filesystem::path& dir);
// confusion_<i>.csv, |A| rows of |A| comma-separated values.
void export_confusions(const std::filesystem::path& dir, const SensitiveModel& model);

}  // namespace fairlab
