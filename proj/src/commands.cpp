#include "fairlab/commands.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include "fairlab/agents.hpp"
#include "fairlab/encoders.hpp"
#include "fairlab/errors.hpp"
#include "fairlab/eval.hpp"
#include "fairlab/lfsa_io.hpp"
#include "fairlab/mi.hpp"
#include "fairlab/rng.hpp"
#include "fairlab/sensitive.hpp"
#include "json.hpp"

namespace fairlab {
namespace fs = std::filesystem;

namespace {

struct RunPaths {
  fs::path root;
  fs::path data() const { return root / "data"; }
  fs::path interactions() const { return data() / "interactions.tsv"; }
  fs::path labels() const { return data() / "labels.tsv"; }
  fs::path personas() const { return root / "personas.jsonl"; }
  fs::path persona_lfsa() const { return root / "personas.lfsa"; }
  fs::path persona_index() const { return root / "personas.index"; }
  fs::path annotations() const { return root / "annotations.jsonl"; }
  fs::path summaries() const { return root / "summaries.jsonl"; }
  fs::path rationale_lfsa() const { return root / "rationales.lfsa"; }
  fs::path rationale_index() const { return root / "rationales.index"; }
  fs::path pretrain() const { return root / "checkpoints" / "pretrain"; }
  fs::path stage1() const { return root / "checkpoints" / "stage1"; }
  fs::path stage2() const { return root / "checkpoints" / "stage2"; }
  fs::path metrics() const { return root / "metrics.csv"; }
  fs::path label_quality() const { return root / "label_quality.csv"; }
  fs::path manifest() const { return root / "manifest.json"; }
  fs::path embedding(const std::string& name) const {
    return root / "embeddings" / (name + ".lfsa");
  }
  fs::path attack(const std::string& name) const {
    return root / ("attack_" + name + ".json");
  }
};

void say(const CommandContext& ctx, const std::string& text) {
  if (ctx.log != nullptr) *ctx.log << text << '\n';
}

void guard_overwrite(const CommandContext& ctx, const fs::path& path) {
  if (fs::exists(path) && !ctx.force) {
    throw OverwriteError(path.string() + " exists; pass --force to overwrite");
  }
}

void require_file(const fs::path& path, const std::string& what) {
  if (!fs::exists(path)) {
    throw MissingPrerequisiteError("missing " + what + ": " + path.string());
  }
}

std::string timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

nlohmann::json read_manifest(const RunPaths& paths) {
  std::ifstream in(paths.manifest());
  if (!in) return nlohmann::json::object();
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception&) {
    return nlohmann::json::object();
  }
}

// Records a command in manifest.json together with the digests of the files
// it read and wrote.
void record_step(const CommandContext& ctx, const std::string& step,
                 const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs) {
  const RunPaths paths{ctx.out};
  auto manifest = read_manifest(paths);
  manifest["run_id"] = ctx.config.run_id;
  manifest["seed"] = ctx.config.seed;
  manifest["config"] = to_toml(ctx.config);
  auto& entry = manifest["steps"][step];
  entry = nlohmann::json::object();
  entry["finished"] = timestamp();
  const auto digests = [&](const std::vector<fs::path>& files) {
    nlohmann::json out = nlohmann::json::object();
    for (const auto& f : files) {
      out[fs::relative(f, ctx.out).generic_string()] = file_digest(f);
    }
    return out;
  };
  entry["inputs"] = digests(inputs);
  entry["outputs"] = digests(outputs);
  std::ofstream out(paths.manifest());
  if (!out) throw Error("cannot write " + paths.manifest().string());
  out << manifest.dump(2) << '\n';
  std::ofstream snapshot(ctx.out / "config.toml");
  snapshot << to_toml(ctx.config);
}

std::vector<fs::path> files_in(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::exists(dir)) return out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out.push_back(e.path());
  }
  std::ranges::sort(out);
  return out;
}

AttributeSchema run_schema(const RunConfig& config) {
  if (config.agents.attribute != "gender") {
    throw ConfigError("unsupported attribute " + config.agents.attribute);
  }
  return AttributeSchema::gender();
}

SyntheticSpec synthetic_spec(const RunConfig& c) {
  SyntheticSpec spec;
  spec.user_count = c.data.synthetic_users;
  spec.item_count = c.data.synthetic_items;
  spec.cluster_count = c.data.synthetic_clusters;
  spec.interactions_per_user = c.data.interactions_per_user;
  spec.group_ratio = c.data.group_ratio;
  spec.preference_mix = c.data.preference_mix;
  spec.popularity_skew = c.data.popularity_skew;
  spec.seed = derive_seed(c.seed, "data");
  return spec;
}

SplitRatios split_ratios(const RunConfig& c) {
  return {c.data.train_ratio, c.data.val_ratio, c.data.test_ratio};
}

std::shared_ptr<CompletionBackend> make_backend(const CommandContext& ctx,
                                                const InteractionDataset& ds) {
  const auto& c = ctx.config;
  const auto schema = run_schema(c);
  const auto seed = derive_seed(c.seed, "backend");
  std::shared_ptr<CompletionBackend> backend;
  if (c.backend == "mock") {
    backend = std::make_shared<MockBackend>(schema, seed);
  } else if (c.backend == "simulated") {
    auto labels = load_run_labels(ctx, ds, LabelVisibility::kSimulation);
    if (!labels) {
      throw MissingPrerequisiteError("the simulated backend needs " +
                                     RunPaths{ctx.out}.labels().string());
    }
    backend = std::make_shared<SimulatedBackend>(
        schema, std::move(*labels), simulated_confusions(c, schema.arity()),
        derive_seed(c.seed, "annotators"));
  } else if (c.backend == "scripted") {
    if (c.agents.scripted_file.empty()) {
      throw ConfigError("the scripted backend needs agents.scripted_file");
    }
    require_file(c.agents.scripted_file, "scripted responses");
    backend = std::make_shared<ScriptedBackend>(c.agents.scripted_file);
  } else {
    backend = std::make_shared<HttpBackend>(HttpSettings::from_environment());
  }
  if (!c.agents.record_file.empty()) {
    backend = std::make_shared<RecordingBackend>(backend, c.agents.record_file);
  }
  return backend;
}

std::unique_ptr<TextEmbedder> make_embedder(const RunConfig& c) {
  if (c.backend == "http" && std::getenv("FAIRLAB_EMBED_URL") != nullptr) {
    return std::make_unique<HttpEmbedder>(HttpEmbedder::from_environment(c.agents.embed_dim));
  }
  return std::make_unique<HashEmbedder>(c.agents.embed_dim, derive_seed(c.seed, "embedder"));
}

DecodeParams decode_params(const RunConfig& c) {
  return {c.agents.temperature, c.agents.max_tokens};
}

std::vector<std::string> history_titles(const InteractionDataset& ds, std::size_t u,
                                        std::size_t cap) {
  std::vector<std::string> titles;
  for (auto v : user_history(ds, u, SplitTag::kTrain)) {
    if (titles.size() == cap) break;
    titles.push_back(ds.item_title(v));
  }
  return titles;
}

std::vector<PersonaProfile> load_personas_checked(const RunPaths& paths,
                                                  const RunConfig& c) {
  require_file(paths.personas(), "personas (run the personas command)");
  auto personas = read_personas(paths.personas());
  if (personas.size() != c.agents.n_personas) {
    throw ValidationError("personas.jsonl holds " + std::to_string(personas.size()) +
                          " personas but agents.n_personas is " +
                          std::to_string(c.agents.n_personas));
  }
  require_file(paths.persona_lfsa(), "persona embeddings");
  const auto rows = read_lfsa(paths.persona_lfsa());
  if (rows.rows() != personas.size()) {
    throw ValidationError("personas.lfsa does not match personas.jsonl");
  }
  for (std::size_t i = 0; i < personas.size(); ++i) {
    personas[i].embedding.assign(rows.row(i).begin(), rows.row(i).end());
  }
  return personas;
}

// Runs fn(i) for i in [0, n) on a bounded pool; returns the failure count.
template <typename Fn>
std::size_t run_pool(std::size_t n, std::size_t workers, Fn&& fn,
                     const CommandContext& ctx) {
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> failures{0};
  std::mutex log_mutex;
  const auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (const TransportError& e) {
        ++failures;
        std::lock_guard lock(log_mutex);
        say(ctx, std::string("request failed: ") + e.what());
      }
    }
  };
  std::vector<std::thread> pool;
  const std::size_t count = std::min(workers, std::max<std::size_t>(n, 1));
  for (std::size_t w = 1; w < count; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return failures;
}

void check_failures(const CommandContext& ctx, std::size_t failures, std::size_t attempted,
                    const std::string& what) {
  if (attempted == 0 || failures == 0) return;
  const double rate = static_cast<double>(failures) / static_cast<double>(attempted);
  say(ctx, std::to_string(failures) + " of " + std::to_string(attempted) + " " + what +
               " requests failed");
  if (rate > ctx.config.agents.failure_threshold) {
    throw TransportError(what + " failure rate " + std::to_string(rate) +
                         " exceeds agents.failure_threshold");
  }
}

// Appends one line under a mutex; the partial file makes a run resumable.
class LineAppender {
 public:
  explicit LineAppender(const fs::path& path) : out_(path, std::ios::app) {
    if (!out_) throw Error("cannot append to " + path.string());
  }
  void write(const std::string& line) {
    std::lock_guard lock(mutex_);
    out_ << line << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
  std::mutex mutex_;
};

// Sensitive training data from the annotation and summary files.
SensitiveData load_sensitive_data(const RunPaths& paths, const InteractionDataset& ds,
                                  const RunConfig& c, std::size_t arity) {
  require_file(paths.annotations(), "annotations (run the annotate command)");
  require_file(paths.summaries(), "summaries (run the summarize command)");
  require_file(paths.rationale_lfsa(), "rationale embeddings (run the summarize command)");
  const auto annotations = read_annotations(paths.annotations());
  const auto rationales = read_lfsa(paths.rationale_lfsa());
  const auto ids = read_lfsa_index(paths.rationale_index());
  std::map<std::string, std::size_t> index;
  for (std::size_t u = 0; u < ds.user_count(); ++u) index[ds.user_id(u)] = u;
  std::vector<std::size_t> users;
  users.reserve(ids.size());
  for (const auto& id : ids) {
    const auto it = index.find(id);
    if (it == index.end()) throw ValidationError("rationale for unknown user " + id);
    users.push_back(it->second);
  }
  return SensitiveData::build(ds.user_count(), arity, c.agents.n_personas, annotations,
                              rationales, users);
}

void write_curve(const fs::path& path, const std::vector<std::string>& names,
                 const std::vector<const std::vector<double>*>& curves) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "epoch";
  for (const auto& n : names) out << ',' << n;
  out << '\n';
  out << std::setprecision(17);
  std::size_t rows = 0;
  for (const auto* c : curves) rows = std::max(rows, c->size());
  for (std::size_t e = 0; e < rows; ++e) {
    out << e;
    for (const auto* c : curves) {
      out << ',';
      if (e < c->size()) out << (*c)[e];
    }
    out << '\n';
  }
}

BprConfig bpr_config(const RunConfig& c) {
  BprConfig b;
  b.batch_size = c.train.bpr_batch;
  b.lr = c.train.lr;
  b.max_epochs = c.train.pretrain_epochs;
  b.patience = c.train.patience;
  b.eval_k = c.eval.k;
  b.seed = derive_seed(c.seed, "pretrain");
  return b;
}

void train_pretrain(const CommandContext& ctx, const InteractionDataset& ds) {
  const RunPaths paths{ctx.out};
  guard_overwrite(ctx, paths.pretrain());
  const auto& c = ctx.config;
  say(ctx, "pretraining MF on " + std::to_string(ds.size()) + " interactions");
  const auto cf = pretrain_cf(ds, c.train.d, bpr_config(c));
  fs::create_directories(paths.pretrain());
  save_tables(paths.pretrain(), cf.tables, cf.best_epoch, cf.val_recall);
  write_curve(paths.pretrain() / "curves.csv", {"bpr", "val_recall"},
              {&cf.loss_curve, &cf.val_curve});
  say(ctx, "pretrain: best epoch " + std::to_string(cf.best_epoch) + ", val recall " +
               std::to_string(cf.val_recall));
  record_step(ctx, "train.pretrain", {paths.interactions()}, files_in(paths.pretrain()));
}

void train_stage1_cmd(const CommandContext& ctx, const InteractionDataset& ds) {
  const RunPaths paths{ctx.out};
  const auto& c = ctx.config;
  require_file(paths.pretrain() / "manifest.json", "pretrained CF checkpoint");
  const auto personas = load_personas_checked(paths, c);
  const auto schema = run_schema(c);
  auto data = load_sensitive_data(paths, ds, c, schema.arity());
  guard_overwrite(ctx, paths.stage1());
  if (data.eligible.empty()) {
    throw ValidationError("no user has a non-abstaining annotation");
  }
  auto tables = load_tables(paths.pretrain());
  SensitiveShape shape{c.train.d, schema.arity(), c.agents.n_personas,
                       data.rationales.cols() > 0 ? data.rationales.cols()
                                                  : c.agents.embed_dim};
  SensitiveModel model(shape);
  model.init(derive_seed(c.seed, "init-sensitive"), c.train.confusion_gamma);
  const auto graph = consensus_neighbors(
      personas, std::min<std::size_t>(c.train.K, personas.size() - 1));
  Stage1Config config;
  config.epochs = c.train.stage1_epochs;
  config.bpr_batch = c.train.bpr_batch;
  config.sens_batch = c.train.sens_batch;
  config.lr = c.train.lr;
  config.weights = {c.train.lambda_sim, c.train.lambda_fine};
  config.confusion_gamma = c.train.confusion_gamma;
  config.patience = c.train.stage1_patience;
  config.validation_frac = c.train.stage1_validation_frac;
  config.confusion_lr_scale = c.train.confusion_lr_scale;
  config.sensitive_updates_users = c.train.sensitive_updates_users;
  config.seed = derive_seed(c.seed, "stage1");
  say(ctx, "stage 1 on " + std::to_string(data.eligible.size()) + " annotated users");
  const auto result = train_stage1(model, tables, ds, data, graph, config);
  fs::create_directories(paths.stage1() / "tables");
  save_tables(paths.stage1() / "tables", tables, result.epochs, 0.0);
  save_sensitive(paths.stage1(), model);
  export_confusions(paths.stage1(), model);
  write_curve(paths.stage1() / "curves.csv", {"bpr", "sensitive", "annotator_fit"},
              {&result.bpr_curve, &result.sens_curve, &result.fit_curve});
  record_step(ctx, "train.stage1",
              {paths.interactions(), paths.annotations(), paths.rationale_lfsa(),
               paths.pretrain() / "users.lfsa"},
              files_in(paths.stage1()));
}

void train_stage2_cmd(const CommandContext& ctx, const InteractionDataset& ds) {
  const RunPaths paths{ctx.out};
  const auto& c = ctx.config;
  require_file(paths.pretrain() / "manifest.json", "pretrained CF checkpoint");
  require_file(paths.stage1() / "sensitive.json", "stage-1 checkpoint");
  guard_overwrite(ctx, paths.stage2());
  const auto pretrained = load_tables(paths.pretrain());
  const auto sensitive = load_sensitive(paths.stage1());
  auto tables = load_tables(paths.stage1() / "tables");
  FairModel model(c.train.d);
  model.init(derive_seed(c.seed, "init-fair"));
  Stage2Config config;
  config.epochs = c.train.stage2_epochs;
  config.bpr_batch = c.train.bpr_batch;
  config.mi_batch = c.train.mi_batch;
  config.lr = c.train.lr;
  config.variational_lr_scale = c.train.variational_lr_scale;
  config.mi = {c.train.lambda_ub, c.train.lambda_lb, c.train.alpha, c.train.inner_steps,
               c.train.item_side_lb};
  config.eval_k = c.eval.k;
  config.keep_best = c.train.keep_best;
  config.seed = derive_seed(c.seed, "stage2");
  say(ctx, "stage 2 for " + std::to_string(config.epochs) + " epochs");
  const auto result = train_stage2(model, tables, sensitive, pretrained, ds, config);
  fs::create_directories(paths.stage2() / "tables");
  save_tables(paths.stage2() / "tables", tables, result.best_epoch,
              result.val_curve.empty() ? 0.0 : result.val_curve[result.best_epoch]);
  save_fair(paths.stage2(), model);
  write_curve(paths.stage2() / "curves.csv", {"loss", "ub", "lb", "val_recall"},
              {&result.loss_curve, &result.ub_curve, &result.lb_curve, &result.val_curve});
  {
    nlohmann::json info;
    info["stage1_digest"] = file_digest(paths.stage1() / "encoder.lfsa");
    info["best_epoch"] = result.best_epoch;
    info["epochs"] = result.epochs;
    std::ofstream out(paths.stage2() / "stage2.json");
    out << info.dump(2) << '\n';
  }
  record_step(ctx, "train.stage2",
              {paths.interactions(), paths.stage1() / "encoder.lfsa",
               paths.pretrain() / "users.lfsa"},
              files_in(paths.stage2()));
}

struct EmbeddingView {
  Matrix users;
  Matrix items;
  fs::path file;
};

EmbeddingView embedding_view(const CommandContext& ctx, const std::string& name) {
  const RunPaths paths{ctx.out};
  EmbeddingView view;
  if (name == "user") {
    require_file(paths.pretrain() / "manifest.json", "pretrained CF checkpoint");
    const auto tables = load_tables(paths.pretrain());
    view.users = tables.user_matrix();
    view.items = tables.item_matrix();
  } else if (name == "preference") {
    require_file(paths.stage2() / "fair.json", "stage-2 checkpoint");
    const auto tables = load_tables(paths.stage2() / "tables");
    const auto fair = load_fair(paths.stage2());
    view.users = preference_embeddings(fair.preference, tables);
    view.items = tables.item_matrix();
  } else {
    throw ArgumentError("unknown embedding '" + name + "'");
  }
  view.file = paths.embedding(name);
  return view;
}

void write_metric(std::ostream& out, const RunConfig& c, const std::string& metric,
                  std::size_t k, double value) {
  out << c.run_id << ',' << c.backbone << ',' << metric << ',' << k << ','
      << std::setprecision(10) << value << ',' << c.seed << '\n';
}

}  // namespace

InteractionDataset ensure_dataset(const CommandContext& ctx) {
  const RunPaths paths{ctx.out};
  // Titles live in the metadata sidecar next to the split file.
  const auto load = [&] {
    auto ds = read_split_file(paths.interactions());
    if (fs::exists(paths.data() / "metadata.tsv")) {
      ds = attach_metadata(ds, paths.data() / "metadata.tsv");
    }
    return ds;
  };
  if (fs::exists(paths.interactions())) return load();
  const auto& c = ctx.config;
  fs::create_directories(paths.data());
  InteractionDataset ds;
  std::vector<fs::path> inputs;
  if (c.data.source == "synthetic") {
    const auto spec = synthetic_spec(c);
    auto [raw, labels] = generate_synthetic(spec);
    ds = split_per_user(raw, split_ratios(c), derive_seed(c.seed, "split"));
    write_labels(ds, labels, paths.labels());
  } else {
    require_file(c.data.source, "interaction file");
    inputs.emplace_back(c.data.source);
    LoadOptions options;
    options.user_sample_frac = c.data.user_sample_frac;
    options.sample_seed = derive_seed(c.seed, "user-sample");
    auto raw = load_interactions(c.data.source, parse_interaction_format(c.data.format),
                                 options);
    if (!c.data.metadata.empty()) {
      raw = attach_metadata(raw, c.data.metadata);
      inputs.emplace_back(c.data.metadata);
    }
    if (c.data.core_k > 0) raw = core_filter(raw, c.data.core_k);
    if (raw.size() == 0) throw EmptyDatasetError("no interactions left after filtering");
    ds = split_per_user(raw, split_ratios(c), derive_seed(c.seed, "split"));
    if (!c.data.labels.empty()) {
      inputs.emplace_back(c.data.labels);
      const auto labels = read_labels(ds, c.data.labels, LabelVisibility::kTestOnly);
      write_labels(ds, labels, paths.labels());
    }
  }
  write_split_file(ds, paths.interactions());
  if (ds.has_titles()) {
    std::ofstream meta(paths.data() / "metadata.tsv");
    for (std::size_t v = 0; v < ds.item_count(); ++v) {
      meta << ds.item_id(v) << '\t' << ds.item_title(v) << '\n';
    }
  }
  say(ctx, "dataset: " + std::to_string(ds.user_count()) + " users, " +
               std::to_string(ds.item_count()) + " items, " + std::to_string(ds.size()) +
               " interactions");
  record_step(ctx, "data", inputs, files_in(paths.data()));
  return load();
}

std::optional<GroundTruthLabels> load_run_labels(const CommandContext& ctx,
                                                 const InteractionDataset& ds,
                                                 LabelVisibility visibility) {
  const RunPaths paths{ctx.out};
  if (!fs::exists(paths.labels())) return std::nullopt;
  return read_labels(ds, paths.labels(), visibility);
}

std::vector<std::vector<std::vector<double>>> simulated_confusions(const RunConfig& config,
                                                                   std::size_t arity) {
  const auto& acc = config.agents.simulated_accuracy;
  std::vector<std::vector<std::vector<double>>> out;
  for (std::size_t i = 0; i < config.agents.n_personas; ++i) {
    const double p = acc.size() == 1 ? acc[0] : acc.at(i);
    const double off = arity > 1 ? (1.0 - p) / static_cast<double>(arity - 1) : 0.0;
    std::vector<std::vector<double>> f(arity, std::vector<double>(arity, off));
    for (std::size_t j = 0; j < arity; ++j) f[j][j] = p;
    out.push_back(std::move(f));
  }
  return out;
}

void cmd_data(const CommandContext& ctx) {
  const RunPaths paths{ctx.out};
  if (fs::exists(paths.interactions())) {
    guard_overwrite(ctx, paths.interactions());
    fs::remove_all(paths.data());
  }
  ensure_dataset(ctx);
}

void cmd_personas(const CommandContext& ctx) {
  const RunPaths paths{ctx.out};
  guard_overwrite(ctx, paths.personas());
  const auto ds = ensure_dataset(ctx);
  const auto& c = ctx.config;
  auto backend = make_backend(ctx, ds);
  auto personas = generate_personas(*backend, PromptTemplates::load(c.agents.prompts_dir),
                                    c.agents.n_personas, decode_params(c));
  auto embedder = make_embedder(c);
  Matrix rows(personas.size(), embedder->dimension());
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < personas.size(); ++i) {
    personas[i].embedding = embed_text(*embedder, personas[i].description);
    std::ranges::copy(personas[i].embedding, rows.row(i).begin());
    ids.push_back(std::to_string(personas[i].persona_id));
  }
  write_personas(paths.personas(), personas);
  write_lfsa(paths.persona_lfsa(), rows);
  write_lfsa_index(paths.persona_index(), ids);
  say(ctx, "wrote " + std::to_string(personas.size()) + " personas");
  record_step(ctx, "personas", {},
              {paths.personas(), paths.persona_lfsa(), paths.persona_index()});
}

void cmd_annotate(const CommandContext& ctx) {
  const RunPaths paths{ctx.out};
  const auto& c = ctx.config;
  const auto ds = ensure_dataset(ctx);
  const auto personas = load_personas_checked(paths, c);
  const auto schema = run_schema(c);
  if (ctx.force) fs::remove(paths.annotations());
  AnnotationStore store;
  if (fs::exists(paths.annotations())) {
    for (auto& r : read_annotations(paths.annotations())) store.put(std::move(r));
  }
  std::vector<std::pair<std::size_t, std::size_t>> todo;
  for (std::size_t u = 0; u < ds.user_count(); ++u) {
    for (std::size_t i = 0; i < personas.size(); ++i) {
      if (!store.contains(u, personas[i].persona_id)) todo.emplace_back(u, i);
    }
  }
  say(ctx, "annotate: " + std::to_string(store.size()) + " records present, " +
               std::to_string(todo.size()) + " to fetch");
  auto backend = make_backend(ctx, ds);
  const auto templates = PromptTemplates::load(c.agents.prompts_dir);
  const auto decode = decode_params(c);
  std::size_t failures = 0;
  {
    LineAppender appender(paths.annotations());
    failures = run_pool(
        todo.size(), c.agents.workers,
        [&](std::size_t t) {
          const auto [u, i] = todo[t];
          const auto titles = history_titles(ds, u, c.agents.max_history_titles);
          auto record =
              annotate_user(*backend, templates, personas[i], titles, schema, u, decode);
          appender.write(to_json_line(record));
          store.put(std::move(record));
        },
        ctx);
  }
  const auto records = store.records();
  write_annotations(paths.annotations(), records);
  record_step(ctx, "annotate", {paths.interactions(), paths.personas()},
              {paths.annotations()});
  check_failures(ctx, failures, todo.size(), "annotation");
}

void cmd_summarize(const CommandContext& ctx) {
  const RunPaths paths{ctx.out};
  const auto& c = ctx.config;
  const auto ds = ensure_dataset(ctx);
  const auto personas = load_personas_checked(paths, c);
  require_file(paths.annotations(), "annotations (run the annotate command)");
  const auto schema = run_schema(c);
  AnnotationStore store;
  for (auto& r : read_annotations(paths.annotations())) store.put(std::move(r));
  if (ctx.force) {
    fs::remove(paths.summaries());
    fs::remove(paths.rationale_lfsa());
    fs::remove(paths.rationale_index());
  }
  std::map<std::size_t, RationaleSummary> done;
  if (fs::exists(paths.summaries())) {
    for (auto& s : read_summaries(paths.summaries())) done[s.user] = std::move(s);
  }
  std::vector<std::size_t> todo;
  std::size_t incomplete = 0;
  for (std::size_t u = 0; u < ds.user_count(); ++u) {
    if (done.contains(u)) continue;
    if (store.for_user(u).size() < personas.size()) {
      ++incomplete;
      continue;
    }
    todo.push_back(u);
  }
  if (incomplete > 0) {
    say(ctx, "warning: skipping " + std::to_string(incomplete) +
                 " users with incomplete annotations");
  }
  say(ctx, "summarize: " + std::to_string(done.size()) + " present, " +
               std::to_string(todo.size()) + " to fetch");
  auto backend = make_backend(ctx, ds);
  auto embedder = make_embedder(c);
  const auto templates = PromptTemplates::load(c.agents.prompts_dir);
  const auto decode = decode_params(c);
  std::mutex mutex;
  std::size_t failures = 0;
  {
    LineAppender appender(paths.summaries());
    failures = run_pool(
        todo.size(), c.agents.workers,
        [&](std::size_t t) {
          const auto u = todo[t];
          const auto titles = history_titles(ds, u, c.agents.max_history_titles);
          const auto annotations = store.for_user(u);
          auto summary = summarize_user(*backend, templates, titles, annotations, schema,
                                        decode);
          std::lock_guard lock(mutex);
          // The embedder is not assumed thread-safe.
          summary.embedding = embed_text(*embedder, summary.summary_text);
          appender.write(to_json_line(summary));
          done[u] = std::move(summary);
        },
        ctx);
  }
  std::vector<RationaleSummary> ordered;
  for (auto& [u, s] : done) ordered.push_back(s);
  write_summaries(paths.summaries(), ordered);
  Matrix rows(ordered.size(), embedder->dimension());
  std::vector<std::string> ids;
  for (std::size_t r = 0; r < ordered.size(); ++r) {
    if (ordered[r].embedding.size() != embedder->dimension()) {
      throw ValidationError("summary embedding has the wrong dimension");
    }
    std::ranges::copy(ordered[r].embedding, rows.row(r).begin());
    ids.push_back(ds.user_id(ordered[r].user));
  }
  write_lfsa(paths.rationale_lfsa(), rows);
  write_lfsa_index(paths.rationale_index(), ids);
  record_step(ctx, "summarize", {paths.interactions(), paths.annotations()},
              {paths.summaries(), paths.rationale_lfsa(), paths.rationale_index()});
  check_failures(ctx, failures, todo.size(), "summary");
}

TrainStage parse_train_stage(std::string_view name) {
  if (name == "pretrain") return TrainStage::kPretrain;
  if (name == "stage1") return TrainStage::kStage1;
  if (name == "stage2") return TrainStage::kStage2;
  if (name == "all") return TrainStage::kAll;
  throw ArgumentError("unknown training stage '" + std::string(name) + "'");
}

void cmd_train(const CommandContext& ctx, TrainStage stage) {
  const auto ds = ensure_dataset(ctx);
  if (stage == TrainStage::kPretrain || stage == TrainStage::kAll) train_pretrain(ctx, ds);
  if (stage == TrainStage::kStage1 || stage == TrainStage::kAll) train_stage1_cmd(ctx, ds);
  if (stage == TrainStage::kStage2 || stage == TrainStage::kAll) train_stage2_cmd(ctx, ds);
}

void cmd_evaluate(const CommandContext& ctx) {
  const RunPaths paths{ctx.out};
  const auto& c = ctx.config;
  guard_overwrite(ctx, paths.metrics());
  const auto ds = ensure_dataset(ctx);
  const auto labels = load_run_labels(ctx, ds, LabelVisibility::kTestOnly);
  if (!labels) say(ctx, "notice: no labels for this run; leakage metrics skipped");
  std::vector<EmbeddingView> views;
  for (const auto& name : c.eval.embeddings) views.push_back(embedding_view(ctx, name));

  std::ostringstream metrics;
  metrics << "run_id,backbone,metric,k,value,seed\n";
  std::vector<fs::path> outputs{paths.metrics()};
  AttackerConfig attacker;
  attacker.hidden = c.eval.attacker_hidden;
  for (std::size_t e = 0; e < views.size(); ++e) {
    const auto& name = c.eval.embeddings[e];
    const auto& view = views[e];
    fs::create_directories(view.file.parent_path());
    write_lfsa(view.file, view.users);
    outputs.push_back(view.file);
    const auto report = evaluate_ranking(view.users, view.items, ds, c.eval.k);
    write_metric(metrics, c, name + ".recall", c.eval.k, report.recall);
    write_metric(metrics, c, name + ".ndcg", c.eval.k, report.ndcg);
    if (!labels || !c.eval.attack) continue;
    const UserScorer scorer = [&](std::size_t u, std::span<double> out) {
      for (std::size_t v = 0; v < view.items.rows(); ++v) {
        double s = 0.0;
        for (std::size_t j = 0; j < view.users.cols(); ++j) s += view.users(u, j) * view.items(v, j);
        out[v] = s;
      }
    };
    const auto lists = top_k_lists(scorer, ds, c.eval.k);
    write_metric(metrics, c, name + ".dp", c.eval.k, dp_at_k(lists, labels->labels, c.eval.k));
    write_metric(metrics, c, name + ".eo", c.eval.k, eo_at_k(report, labels->labels));
    const auto attack =
        train_attacker(view.users, *labels, derive_seed(c.seed, "attacker"), attacker);
    write_metric(metrics, c, name + ".attacker_auc", 0, attack.auc);
    nlohmann::json j;
    j["auc"] = attack.auc;
    j["n_train"] = attack.n_train;
    j["n_test"] = attack.n_test;
    j["seed"] = attack.seed;
    j["embedding_file"] = fs::relative(view.file, ctx.out).generic_string();
    std::ofstream out(paths.attack(name));
    out << j.dump(2) << '\n';
    outputs.push_back(paths.attack(name));
  }

  if (labels && c.eval.label_quality) {
    const auto arity = static_cast<std::size_t>(labels->arity);
    std::vector<LabelQualityReport> rows;
    rows.push_back(label_quality(
        "random", random_labels(ds.user_count(), arity, derive_seed(c.seed, "random")),
        *labels));
    if (fs::exists(paths.pretrain() / "manifest.json")) {
      const auto u = load_tables(paths.pretrain()).user_matrix();
      for (auto method :
           {ClusterMethod::kKMeans, ClusterMethod::kGmm, ClusterMethod::kHierarchical}) {
        try {
          rows.push_back(label_quality(
              std::string(cluster_method_name(method)),
              cluster_labels(u, method, arity, derive_seed(c.seed, "cluster")), *labels,
              true));
        } catch (const ClusteringError& err) {
          say(ctx, std::string("notice: ") + err.what());
        }
      }
    }
    if (fs::exists(paths.annotations())) {
      const auto annotations = read_annotations(paths.annotations());
      rows.push_back(label_quality(
          "llm-single", single_annotator_labels(annotations, ds.user_count(), 0), *labels));
      rows.push_back(label_quality(
          "llm-mv", majority_vote(annotations, ds.user_count(), arity), *labels));
    }
    std::ofstream out(paths.label_quality());
    out << "strategy,accuracy,f1,evaluated,abstained\n" << std::setprecision(10);
    for (const auto& r : rows) {
      out << r.strategy << ',' << r.accuracy << ',' << r.f1 << ',' << r.evaluated << ','
          << r.abstained << '\n';
    }
    outputs.push_back(paths.label_quality());
  }

  {
    std::ofstream out(paths.metrics());
    if (!out) throw Error("cannot write " + paths.metrics().string());
    out << metrics.str();
  }
  std::vector<fs::path> inputs{paths.interactions()};
  for (const auto& f : files_in(ctx.out / "checkpoints")) inputs.push_back(f);
  record_step(ctx, "evaluate", inputs, outputs);
}

void cmd_pipeline(const CommandContext& ctx) {
  cmd_data(ctx);
  cmd_personas(ctx);
  cmd_annotate(ctx);
  cmd_summarize(ctx);
  cmd_train(ctx, TrainStage::kAll);
  cmd_evaluate(ctx);
}

}  // namespace fairlab
