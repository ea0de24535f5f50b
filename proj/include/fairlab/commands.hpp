#pragma once

// Command layer behind the CLI. Every command works inside one run directory:
//
//   config.toml                  config snapshot of the last command
//   data/interactions.tsv        split file (uid, iid, split)
//   data/labels.tsv              hidden labels, when known
//   personas.jsonl, personas.lfsa, personas.index
//   annotations.jsonl
//   summaries.jsonl, rationales.lfsa, rationales.index
//   checkpoints/{pretrain,stage1,stage2}/...
//   metrics.csv, attack_<embedding>.json, label_quality.csv
//   embeddings/<embedding>.lfsa
//   manifest.json

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fairlab/config.hpp"
#include "fairlab/data.hpp"

namespace fairlab {

struct CommandContext {
  RunConfig config;
  std::filesystem::path out = "run";
  bool force = false;
  std::ostream* log = nullptr;  // progress and warnings; silent when null
};

// Loads the run's dataset, creating data/ from the config on first use.
InteractionDataset ensure_dataset(const CommandContext& ctx);
// Labels from data/labels.tsv, or nullopt when the run has none.
std::optional<GroundTruthLabels> load_run_labels(const CommandContext& ctx,
                                                 const InteractionDataset& ds,
                                                 LabelVisibility visibility);

// Symmetric confusion matrices with the configured simulated accuracies.
std::vector<std::vector<std::vector<double>>> simulated_confusions(const RunConfig& config,
                                                                   std::size_t arity);

void cmd_data(const CommandContext& ctx);
void cmd_personas(const CommandContext& ctx);
void cmd_annotate(const CommandContext& ctx);
void cmd_summarize(const CommandContext& ctx);

enum class TrainStage { kPretrain, kStage1, kStage2, kAll };
TrainStage parse_train_stage(std::string_view name);
void cmd_train(const CommandContext& ctx, TrainStage stage);

void cmd_evaluate(const CommandContext& ctx);

// data, personas, annotate, summarize, train all, evaluate.
void cmd_pipeline(const CommandContext& ctx);

}  // namespace fairlab
