#pragma once

// Run configuration: a TOML subset with [data], [agents], [train] and [eval]
// sections plus top-level run_id and seed. Unknown keys are rejected.
//
//   run_id = "demo"
//   seed = 7
//   [train]
//   d = 64
//   lambda_ub = 0.01
//   [agents]
//   simulated_accuracy = [0.85, 0.9]

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace fairlab {

struct DataConfig {
  // "synthetic" or a path to an interaction file.
  std::string source = "synthetic";
  std::string format = "movielens-dat";
  std::string metadata;  // optional iid<TAB>title sidecar
  std::string labels;    // optional user<TAB>label file, evaluation only
  double user_sample_frac = 1.0;
  std::size_t core_k = 10;  // 0 disables k-core filtering
  double train_ratio = 0.8;
  double val_ratio = 0.1;
  double test_ratio = 0.1;
  std::size_t synthetic_users = 1000;
  std::size_t synthetic_items = 400;
  std::size_t synthetic_clusters = 2;
  std::size_t interactions_per_user = 30;
  double group_ratio = 0.5;
  double preference_mix = 0.8;
  double popularity_skew = 0.0;
};

struct AgentsConfig {
  std::size_t n_personas = 4;
  std::string attribute = "gender";
  double temperature = 0.0;
  int max_tokens = 512;
  std::size_t workers = 4;
  // annotate fails when more than this fraction of requests fail
  double failure_threshold = 0.05;
  std::size_t max_history_titles = 50;
  std::size_t embed_dim = 768;
  // Diagonal of each simulated annotator's symmetric confusion matrix; one
  // value applies to every annotator.
  std::vector<double> simulated_accuracy = {0.85};
  std::string prompts_dir;
  std::string scripted_file;
  std::string record_file;  // append every live exchange here when set
};

struct TrainConfig {
  std::size_t d = 64;
  double lr = 1e-3;
  std::size_t bpr_batch = 2048;
  std::size_t sens_batch = 128;
  std::size_t mi_batch = 128;
  std::size_t pretrain_epochs = 200;
  std::size_t patience = 10;
  std::size_t stage1_epochs = 50;
  std::size_t stage1_patience = 5;
  double stage1_validation_frac = 0.2;
  std::size_t stage2_epochs = 30;
  double lambda_sim = 1e-3;
  double lambda_fine = 1e-3;
  double lambda_ub = 0.01;
  double lambda_lb = 0.1;
  double alpha = 0.1;
  std::size_t K = 2;
  std::size_t inner_steps = 5;
  double variational_lr_scale = 10.0;
  bool item_side_lb = false;
  double confusion_gamma = 1.0;
  double confusion_lr_scale = 10.0;
  bool sensitive_updates_users = false;
  bool keep_best = false;
};

struct EvalConfig {
  std::size_t k = 20;
  // Any of "preference" (stage-2 p) and "user" (pretrained CF u).
  std::vector<std::string> embeddings = {"preference", "user"};
  bool attack = true;
  bool label_quality = true;
  std::size_t attacker_hidden = 64;
};

struct RunConfig {
  std::string run_id = "run";
  std::uint64_t seed = 0;
  std::string backbone = "mf";
  std::string backend = "mock";
  DataConfig data;
  AgentsConfig agents;
  TrainConfig train;
  EvalConfig eval;
};

// ConfigError (with line number) on syntax errors, unknown keys and type
// mismatches; the result is validated.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);

// Applies "section.key=value" (or "key=value" at top level) with the same
// typing rules as the file format.
void apply_override(RunConfig& config, std::string_view assignment);

void validate(const RunConfig& config);

// Canonical TOML rendering; parse_config(to_toml(c)) reproduces c.
std::string to_toml(const RunConfig& config);

}  // namespace fairlab
