#pragma once

// Second-stage objectives: the preference encoder P, the CLUB upper bound on
// I(S;P) with its Gaussian variational network, the conditional InfoNCE
// lower bound on I(P;R|S) and the stage-2 trainer.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fairlab/encoders.hpp"
#include "fairlab/nn.hpp"
#include "fairlab/sensitive.hpp"

namespace fairlab {

inline constexpr double kLogvarMin = -10.0;
inline constexpr double kLogvarMax = 10.0;
inline constexpr double kCosineEps = 1e-12;

struct MiConfig {
  double lambda_ub = 0.01;
  double lambda_lb = 0.1;
  double alpha = 0.1;
  std::size_t inner_steps = 5;
  bool item_side_lb = false;
};

// P: d -> d -> d. B: d -> d -> 2d, read as (mu, logvar).
struct FairModel {
  Mlp preference;
  Mlp variational;

  FairModel() = default;
  explicit FairModel(std::size_t dim);
  std::size_t dim() const { return preference.input_dim(); }
  void init(std::uint64_t seed);
};

std::vector<double> encode_preference(const Mlp& net, std::span<const double> u);

// Diagonal Gaussian log-density of s under (mu, logvar), logvar clamped.
double gaussian_loglik(std::span<const double> s, std::span<const double> mu,
                       std::span<const double> logvar);
// log q(s | p) with (mu, logvar) = B(p).
double variational_loglik(const Mlp& bnet, std::span<const double> s,
                          std::span<const double> p);

// One ascent step's gradient on B: adds -d/dtheta of the batch-mean
// log-likelihood into bnet's gradient buffer and returns that mean.
double variational_objective(Mlp& bnet, const Matrix& s, const Matrix& p);

// CLUB: mean over u of [log q(s_u|p_u) - mean_u' log q(s_u'|p_u)].
// Gradients w.r.t. p (and s, when requested) are added into grad_p /
// grad_s; bnet is not touched. ArgumentError for a batch smaller than 2.
double loss_ub(const Mlp& bnet, const Matrix& s, const Matrix& p, Matrix* grad_p,
               Matrix* grad_s = nullptr);

// Conditional InfoNCE with score cos(r_u', p_u + alpha s_u):
// mean over u of -f(u,u) + log sum_u' exp f(u',u). Pass an empty s to score
// cos(r_u', p_u). Norms are floored at kCosineEps.
double loss_lb(const Matrix& r, const Matrix& s, const Matrix& p, double alpha,
               Matrix* grad_p, Matrix* grad_s = nullptr);

// Batch inputs for one composite evaluation.
struct StageTwoBatch {
  std::vector<Triplet> triplets;     // BPR triplets, scored with P(u)
  std::vector<std::uint32_t> users;  // MI batch
  std::vector<std::uint32_t> items;  // item-side batch (used when enabled)
};

struct LbComponents {
  double bpr = 0.0;
  double ub = 0.0;
  double lb = 0.0;
  double item_lb = 0.0;
  double total = 0.0;
};

// L_b = L_bpr + lambda_ub L_ub + lambda_lb L_lb (+ lambda_lb L_item).
// s_u = S(u) is recomputed through the frozen encoder and treated as a
// constant. Gradients reach P and both tables when accumulate is set.
LbComponents loss_b(FairModel& model, EmbeddingTables& tables,
                    const SensitiveModel& sensitive, const EmbeddingTables& pretrained,
                    const StageTwoBatch& batch, const MiConfig& config,
                    bool accumulate = true);

struct Stage2Config {
  std::size_t epochs = 30;
  std::size_t bpr_batch = 2048;
  std::size_t mi_batch = 128;
  double lr = 1e-3;
  // B's learning rate is lr times this.
  double variational_lr_scale = 10.0;
  MiConfig mi;
  std::size_t eval_k = 20;
  // Keep the epoch with the best validation Recall@k instead of the last.
  bool keep_best = false;
  std::uint64_t seed = 0;
};

struct Stage2Result {
  std::vector<double> loss_curve;
  std::vector<double> ub_curve;
  std::vector<double> lb_curve;
  std::vector<double> val_curve;
  std::size_t epochs = 0;
  std::size_t best_epoch = 0;
};

// Per outer step: inner_steps ascent updates of B on the MI batch, then one
// update of the tables and P on L_b. The sensitive model and the pretrained
// tables are read-only.
Stage2Result train_stage2(FairModel& model, EmbeddingTables& tables,
                          const SensitiveModel& sensitive,
                          const EmbeddingTables& pretrained,
                          const InteractionDataset& ds, const Stage2Config& config);

// P applied to every user row.
Matrix preference_embeddings(const Mlp& preference, const EmbeddingTables& tables);
Matrix sensitive_embeddings(const Mlp& encoder, const EmbeddingTables& tables);

void save_fair(const std::filesystem::path& dir, const FairModel& model);
FairModel load_fair(const std::filesystem::path& dir);

}  // namespace fairlab
