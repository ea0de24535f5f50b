// fairlab: LLM-annotated fair recommendation pipeline.
//
//   fairlab pipeline --backend simulated --out runs/demo
//   fairlab train stage2 --config run.toml --out runs/demo
//   fairlab evaluate --embedding user --out runs/demo --force

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fairlab/commands.hpp"
#include "fairlab/errors.hpp"

namespace {

struct SharedFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string backend;
  std::string out = "run";
  bool force = false;
  bool quiet = false;
  std::vector<std::string> overrides;
};

void add_shared(CLI::App* app, SharedFlags& flags) {
  app->add_option("--config", flags.config_path, "TOML run config")->check(CLI::ExistingFile);
  app->add_option("--seed", flags.seed, "root seed");
  app->add_option("--backend", flags.backend, "completion backend")
      ->check(CLI::IsMember({"http", "scripted", "mock", "simulated"}));
  app->add_option("--out", flags.out, "run directory");
  app->add_flag("--force", flags.force, "overwrite existing outputs");
  app->add_flag("--quiet", flags.quiet, "no progress output");
  app->add_option("--set", flags.overrides, "config override section.key=value");
}

fairlab::CommandContext make_context(const SharedFlags& flags) {
  fairlab::CommandContext ctx;
  if (!flags.config_path.empty()) ctx.config = fairlab::load_config(flags.config_path);
  for (const auto& o : flags.overrides) fairlab::apply_override(ctx.config, o);
  if (flags.seed) ctx.config.seed = *flags.seed;
  if (!flags.backend.empty()) ctx.config.backend = flags.backend;
  fairlab::validate(ctx.config);
  ctx.out = flags.out;
  ctx.force = flags.force;
  ctx.log = flags.quiet ? nullptr : &std::cerr;
  std::filesystem::create_directories(ctx.out);
  return ctx;
}

int exit_code(const std::exception& e) {
  if (dynamic_cast<const fairlab::TransportError*>(&e) != nullptr) return 2;
  if (dynamic_cast<const fairlab::OverwriteError*>(&e) != nullptr) return 3;
  if (dynamic_cast<const fairlab::MissingPrerequisiteError*>(&e) != nullptr) return 4;
  if (dynamic_cast<const fairlab::ValidationError*>(&e) != nullptr ||
      dynamic_cast<const fairlab::ParseError*>(&e) != nullptr ||
      dynamic_cast<const fairlab::ArgumentError*>(&e) != nullptr) {
    return 5;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fair recommendation with LLM-inferred sensitive attributes"};
  app.require_subcommand(1);
  SharedFlags flags;

  auto* data = app.add_subcommand("data", "build the run dataset");
  add_shared(data, flags);
  std::string source;
  std::optional<double> sample_frac;
  data->add_option("--source", source, "interaction file or 'synthetic'");
  data->add_option("--user-sample-frac", sample_frac, "fraction of users kept");

  auto* personas = app.add_subcommand("personas", "generate annotator personas");
  add_shared(personas, flags);
  std::optional<std::size_t> n_personas;
  personas->add_option("--n", n_personas, "number of personas")->check(CLI::PositiveNumber);

  auto* annotate = app.add_subcommand("annotate", "label users with every persona");
  add_shared(annotate, flags);
  auto* summarize = app.add_subcommand("summarize", "summarize annotations per user");
  add_shared(summarize, flags);

  auto* train = app.add_subcommand("train", "train models");
  add_shared(train, flags);
  std::string stage = "all";
  train->add_option("stage", stage, "pretrain, stage1, stage2 or all")
      ->check(CLI::IsMember({"pretrain", "stage1", "stage2", "all"}));

  auto* evaluate = app.add_subcommand("evaluate", "ranking, leakage and label metrics");
  add_shared(evaluate, flags);
  std::vector<std::string> embeddings;
  evaluate->add_option("--embedding", embeddings, "preference and/or user")
      ->check(CLI::IsMember({"preference", "user"}));

  auto* pipeline = app.add_subcommand("pipeline", "run every step");
  add_shared(pipeline, flags);
  pipeline->add_option("--n", n_personas, "number of personas")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // --help and --version exit 0; anything else is an argument error.
    return app.exit(e) == 0 ? 0 : 5;
  }

  try {
    auto ctx = make_context(flags);
    if (!source.empty()) ctx.config.data.source = source;
    if (sample_frac) ctx.config.data.user_sample_frac = *sample_frac;
    if (n_personas) ctx.config.agents.n_personas = *n_personas;
    if (!embeddings.empty()) ctx.config.eval.embeddings = embeddings;
    fairlab::validate(ctx.config);

    if (data->parsed()) fairlab::cmd_data(ctx);
    if (personas->parsed()) fairlab::cmd_personas(ctx);
    if (annotate->parsed()) fairlab::cmd_annotate(ctx);
    if (summarize->parsed()) fairlab::cmd_summarize(ctx);
    if (train->parsed()) fairlab::cmd_train(ctx, fairlab::parse_train_stage(stage));
    if (evaluate->parsed()) fairlab::cmd_evaluate(ctx);
    if (pipeline->parsed()) fairlab::cmd_pipeline(ctx);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e);
  }
  return 0;
}
