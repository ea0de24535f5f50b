#include "fairlab/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "fairlab/errors.hpp"
#include "fairlab/eval.hpp"
#include "fairlab/kernels.hpp"
#include "fairlab/lfsa_io.hpp"
#include "json.hpp"

namespace fairlab {

EmbeddingTables::EmbeddingTables(std::size_t user_count, std::size_t item_count,
                                 std::size_t dim)
    : user_count_(user_count),
      item_count_(item_count),
      dim_(dim),
      users_(user_count * dim),
      items_(item_count * dim) {
  if (dim == 0) throw ArgumentError("embedding dimension must be positive");
}

std::span<double> EmbeddingTables::user(std::size_t u) {
  return {users_.value.data() + u * dim_, dim_};
}
std::span<const double> EmbeddingTables::user(std::size_t u) const {
  return {users_.value.data() + u * dim_, dim_};
}
std::span<double> EmbeddingTables::item(std::size_t v) {
  return {items_.value.data() + v * dim_, dim_};
}
std::span<const double> EmbeddingTables::item(std::size_t v) const {
  return {items_.value.data() + v * dim_, dim_};
}
std::span<double> EmbeddingTables::user_grad(std::size_t u) {
  return {users_.grad.data() + u * dim_, dim_};
}
std::span<double> EmbeddingTables::item_grad(std::size_t v) {
  return {items_.grad.data() + v * dim_, dim_};
}

Matrix EmbeddingTables::user_matrix() const {
  Matrix m(user_count_, dim_);
  m.data() = users_.value;
  return m;
}

Matrix EmbeddingTables::item_matrix() const {
  Matrix m(item_count_, dim_);
  m.data() = items_.value;
  return m;
}

void EmbeddingTables::zero_grad() {
  users_.zero_grad();
  items_.zero_grad();
}

bool EmbeddingTables::all_finite() const {
  return users_.all_finite() && items_.all_finite();
}

bool EmbeddingTables::operator==(const EmbeddingTables& other) const {
  return dim_ == other.dim_ && users_.value == other.users_.value &&
         items_.value == other.items_.value;
}

void EmbeddingTables::init_normal(std::uint64_t seed, double std) {
  Rng rng(seed);
  for (double& x : users_.value) x = std * rng.normal();
  for (double& x : items_.value) x = std * rng.normal();
}

double score(const EmbeddingTables& tables, std::size_t u, std::size_t v) {
  if (u >= tables.user_count() || v >= tables.item_count()) {
    throw ArgumentError("score index out of range (user " + std::to_string(u) +
                        ", item " + std::to_string(v) + ")");
  }
  return kernels::dot(tables.user(u), tables.item(v));
}

std::uint32_t sample_negative(const InteractionDataset& ds, std::size_t u, Rng& rng) {
  if (ds.user_items_sorted(u).size() >= ds.item_count()) {
    throw SamplingError("user " + std::to_string(u) +
                        " has interacted with every item; no negative exists");
  }
  for (;;) {
    const auto v = static_cast<std::uint32_t>(rng.uniform_index(ds.item_count()));
    if (!ds.has_interaction(u, v)) return v;
  }
}

BprBatch sample_negatives(
    const InteractionDataset& ds,
    std::span<const std::pair<std::uint32_t, std::uint32_t>> positives,
    std::uint64_t seed) {
  Rng rng(seed);
  BprBatch batch;
  batch.reserve(positives.size());
  for (const auto& [u, v] : positives) {
    batch.push_back({u, v, sample_negative(ds, u, rng)});
  }
  return batch;
}

double bpr_loss(const Matrix& user_vecs, const EmbeddingTables& tables,
                std::span<const Triplet> batch, Matrix* user_grad,
                EmbeddingTables* item_grad) {
  if (batch.empty()) throw ArgumentError("empty BPR batch");
  const std::size_t d = tables.dim();
  const double scale = 1.0 / static_cast<double>(batch.size());
  std::vector<double> diff(d);
  double total = 0.0;
  for (std::size_t t = 0; t < batch.size(); ++t) {
    const auto& tr = batch[t];
    if (tr.pos >= tables.item_count() || tr.neg >= tables.item_count()) {
      throw ArgumentError("BPR triplet item index out of range");
    }
    const auto u = user_vecs.row(t);
    const auto vp = tables.item(tr.pos);
    const auto vn = tables.item(tr.neg);
    for (std::size_t k = 0; k < d; ++k) diff[k] = vp[k] - vn[k];
    const double margin = kernels::dot(u, diff);
    total += softplus(-margin);
    // d/dmargin of softplus(-margin)
    const double g = (sigmoid(margin) - 1.0) * scale;
    if (user_grad != nullptr) kernels::axpy(g, diff, user_grad->row(t));
    if (item_grad != nullptr) {
      kernels::axpy(g, u, item_grad->item_grad(tr.pos));
      kernels::axpy(-g, u, item_grad->item_grad(tr.neg));
    }
  }
  return total * scale;
}

double bpr_loss(EmbeddingTables& tables, std::span<const Triplet> batch,
                bool accumulate) {
  Matrix users(batch.size(), tables.dim());
  for (std::size_t t = 0; t < batch.size(); ++t) {
    if (batch[t].user >= tables.user_count()) {
      throw ArgumentError("BPR triplet user index out of range");
    }
    std::ranges::copy(tables.user(batch[t].user), users.row(t).begin());
  }
  if (!accumulate) return bpr_loss(users, tables, batch, nullptr, nullptr);
  Matrix grad(batch.size(), tables.dim());
  const double loss = bpr_loss(users, tables, batch, &grad, &tables);
  for (std::size_t t = 0; t < batch.size(); ++t) {
    kernels::axpy(1.0, grad.row(t), tables.user_grad(batch[t].user));
  }
  return loss;
}

void TableOptimizer::step(EmbeddingTables& tables) {
  users.step(tables.users());
  items.step(tables.items());
}

std::vector<std::pair<std::uint32_t, std::uint32_t>> train_pairs(
    const InteractionDataset& ds) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
  pairs.reserve(ds.count(SplitTag::kTrain));
  for (const auto& r : ds.interactions()) {
    if (r.tag == SplitTag::kTrain) pairs.emplace_back(r.user, r.item);
  }
  return pairs;
}

double train_bpr_epoch(EmbeddingTables& tables, TableOptimizer& optimizer,
                       const InteractionDataset& ds, const BprConfig& config,
                       std::size_t epoch) {
  if (!(config.lr >= 0.0)) throw ArgumentError("learning rate must be >= 0");
  if (config.batch_size == 0) throw ArgumentError("batch size must be positive");
  auto pairs = train_pairs(ds);
  if (pairs.empty()) throw ArgumentError("dataset has no train interactions");
  Rng order(derive_seed(config.seed, epoch, 0xe90c));
  order.shuffle(std::span(pairs));
  double sum = 0.0;
  std::size_t batches = 0;
  for (std::size_t start = 0; start < pairs.size(); start += config.batch_size) {
    const std::size_t end = std::min(pairs.size(), start + config.batch_size);
    const auto batch = sample_negatives(
        ds, std::span(pairs).subspan(start, end - start),
        derive_seed(derive_seed(config.seed, "negatives"), epoch, batches));
    tables.zero_grad();
    const double loss = bpr_loss(tables, batch);
    if (!std::isfinite(loss)) {
      throw TrainingError("non-finite BPR loss at epoch " + std::to_string(epoch) +
                          ", batch " + std::to_string(batches));
    }
    optimizer.step(tables);
    sum += loss;
    ++batches;
  }
  return sum / static_cast<double>(batches);
}

PretrainedCF pretrain_cf(const InteractionDataset& ds, std::size_t dim,
                         const BprConfig& config) {
  if (ds.count(SplitTag::kTrain) == 0) {
    throw ArgumentError("pretraining needs a train split");
  }
  EmbeddingTables tables(ds.user_count(), ds.item_count(), dim);
  tables.init_normal(derive_seed(config.seed, "init-cf"));
  TableOptimizer optimizer(config.lr);
  PretrainedCF out;
  out.tables = tables;
  out.val_recall = -1.0;
  const bool has_val = ds.count(SplitTag::kVal) > 0;
  std::size_t since_best = 0;
  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    out.loss_curve.push_back(train_bpr_epoch(tables, optimizer, ds, config, epoch));
    ++out.epochs;
    if (!has_val) {
      out.tables = tables;
      out.best_epoch = epoch;
      continue;
    }
    const double recall =
        evaluate_ranking(tables.user_matrix(), tables.item_matrix(), ds,
                         config.eval_k, SplitTag::kVal)
            .recall;
    out.val_curve.push_back(recall);
    if (recall > out.val_recall) {
      out.val_recall = recall;
      out.best_epoch = epoch;
      out.tables = tables;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  if (out.val_recall < 0.0) out.val_recall = 0.0;
  out.tables.zero_grad();
  return out;
}

void save_tables(const std::filesystem::path& dir, const EmbeddingTables& tables,
                 std::size_t epoch, double val_recall) {
  std::filesystem::create_directories(dir);
  write_lfsa(dir / "users.lfsa", tables.user_matrix());
  write_lfsa(dir / "items.lfsa", tables.item_matrix());
  nlohmann::json manifest;
  manifest["d"] = tables.dim();
  manifest["M"] = tables.user_count();
  manifest["N"] = tables.item_count();
  manifest["epoch"] = epoch;
  manifest["val_recall"] = val_recall;
  std::ofstream out(dir / "manifest.json");
  if (!out) throw Error("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

EmbeddingTables load_tables(const std::filesystem::path& dir) {
  for (const char* name : {"users.lfsa", "items.lfsa"}) {
    if (!std::filesystem::exists(dir / name)) {
      throw MissingPrerequisiteError("missing checkpoint file " + (dir / name).string());
    }
  }
  const Matrix users = read_lfsa(dir / "users.lfsa");
  const Matrix items = read_lfsa(dir / "items.lfsa");
  if (users.cols() != items.cols()) {
    throw ValidationError("user and item tables in " + dir.string() +
                          " disagree on dimension");
  }
  EmbeddingTables tables(users.rows(), items.rows(), users.cols());
  tables.users().value = users.data();
  tables.items().value = items.data();
  return tables;
}

}  // namespace fairlab
