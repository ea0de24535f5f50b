#include "fairlab/sensitive.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <limits>

#include "fairlab/errors.hpp"
#include "fairlab/kernels.hpp"
#include "fairlab/lfsa_io.hpp"
#include "json.hpp"

namespace fairlab {

SensitiveModel::SensitiveModel(const SensitiveShape& shape)
    : encoder({shape.dim, shape.dim, shape.dim}),
      classifier({shape.dim, shape.dim, shape.arity}),
      confusion_logits(shape.annotators * shape.arity * shape.arity),
      projection(shape.dim * shape.rationale_dim),
      shape_(shape) {
  if (shape.arity < 2) throw ArgumentError("attribute arity must be >= 2");
  if (shape.annotators < 1) throw ArgumentError("need at least one annotator");
}

void SensitiveModel::init(std::uint64_t seed, double confusion_gamma) {
  Rng rng(seed);
  encoder.init_he(rng);
  classifier.init_he(rng);
  const std::size_t a = shape_.arity;
  std::fill(confusion_logits.value.begin(), confusion_logits.value.end(), 0.0);
  for (std::size_t i = 0; i < shape_.annotators; ++i) {
    for (std::size_t j = 0; j < a; ++j) {
      confusion_logits.value[(i * a + j) * a + j] = confusion_gamma;
    }
  }
  const double std = 1.0 / std::sqrt(static_cast<double>(shape_.rationale_dim));
  for (double& w : projection.value) w = std * rng.normal();
}

Matrix SensitiveModel::confusion(std::size_t annotator) const {
  const std::size_t a = shape_.arity;
  if (annotator >= shape_.annotators) {
    throw ArgumentError("annotator " + std::to_string(annotator) + " out of range");
  }
  Matrix f(a, a);
  std::copy_n(confusion_logits.value.begin() + annotator * a * a, a * a,
              f.data().begin());
  for (std::size_t j = 0; j < a; ++j) softmax_inplace(f.row(j));
  return f;
}

std::vector<double> SensitiveModel::class_probs(std::span<const double> s) const {
  auto out = classifier.forward(s);
  softmax_inplace(out);
  return out;
}

std::vector<double> SensitiveModel::project(std::span<const double> rationale) const {
  if (rationale.size() != shape_.rationale_dim) {
    throw ArgumentError("rationale has dimension " + std::to_string(rationale.size()) +
                        ", expected " + std::to_string(shape_.rationale_dim));
  }
  std::vector<double> out(shape_.dim);
  kernels::active().gemv(projection.value.data(), nullptr, rationale.data(),
                         out.data(), shape_.dim, shape_.rationale_dim);
  return out;
}

void SensitiveModel::zero_grad() {
  encoder.params().zero_grad();
  classifier.params().zero_grad();
  confusion_logits.zero_grad();
  projection.zero_grad();
}

bool SensitiveModel::all_finite() const {
  return encoder.params().all_finite() && classifier.params().all_finite() &&
         confusion_logits.all_finite() && projection.all_finite();
}

bool SensitiveModel::operator==(const SensitiveModel& other) const {
  return encoder.params().value == other.encoder.params().value &&
         classifier.params().value == other.classifier.params().value &&
         confusion_logits.value == other.confusion_logits.value &&
         projection.value == other.projection.value;
}

std::vector<double> encode_sensitive(const Mlp& net, std::span<const double> u) {
  return net.forward(u);
}

std::vector<double> predicted_annotator_dist(const Matrix& f,
                                             std::span<const double> class_probs) {
  const std::size_t a = f.rows();
  if (f.cols() != a || class_probs.size() != a) {
    throw ArgumentError("confusion matrix and class probabilities disagree in size");
  }
  double sum = 0.0;
  for (double c : class_probs) {
    if (c < -1e-6) throw ValidationError("class probabilities must be nonnegative");
    sum += c;
  }
  if (std::abs(sum - 1.0) > 1e-6) {
    throw ValidationError("class probabilities sum to " + std::to_string(sum));
  }
  std::vector<double> q(a, 0.0);
  for (std::size_t j = 0; j < a; ++j) {
    for (std::size_t k = 0; k < a; ++k) q[k] += f(j, k) * class_probs[j];
  }
  return q;
}

ConsensusGraph consensus_neighbors(const Matrix& persona_embeddings, std::size_t k) {
  const std::size_t n = persona_embeddings.rows();
  if (k < 1 || k >= n) {
    throw ArgumentError("K must satisfy 1 <= K < " + std::to_string(n) + ", got " +
                        std::to_string(k));
  }
  ConsensusGraph graph;
  graph.k = k;
  graph.distances = Matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      graph.distances(i, j) = std::sqrt(kernels::squared_distance(
          persona_embeddings.row(i), persona_embeddings.row(j)));
    }
  }
  graph.neighbors.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> others;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) others.push_back(graph.distances(i, j));
    }
    std::nth_element(others.begin(), others.begin() + (k - 1), others.end());
    const double kth = others[k - 1];
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i && graph.distances(i, j) <= kth) graph.neighbors[i].push_back(j);
    }
  }
  return graph;
}

ConsensusGraph consensus_neighbors(std::span<const PersonaProfile> personas,
                                   std::size_t k) {
  if (personas.empty()) throw ArgumentError("no personas");
  const std::size_t dim = personas.front().embedding.size();
  Matrix emb(personas.size(), dim);
  for (std::size_t i = 0; i < personas.size(); ++i) {
    if (personas[i].embedding.empty() || personas[i].embedding.size() != dim) {
      throw ArgumentError("persona " + std::to_string(personas[i].persona_id) +
                          " lacks an embedding of dimension " + std::to_string(dim));
    }
    std::ranges::copy(personas[i].embedding, emb.row(i).begin());
  }
  return consensus_neighbors(emb, k);
}

SensitiveData SensitiveData::build(std::size_t user_count, std::size_t arity,
                                   std::size_t annotators,
                                   std::span<const AnnotationRecord> annotations,
                                   const Matrix& rationales,
                                   std::span<const std::size_t> rationale_users) {
  SensitiveData data;
  data.labels.resize(user_count);
  for (const auto& r : annotations) {
    if (r.user >= user_count) {
      throw ValidationError("annotation for unknown user " + std::to_string(r.user));
    }
    if (r.annotator < 0 || static_cast<std::size_t>(r.annotator) >= annotators) {
      throw ValidationError("annotation from unknown annotator " +
                            std::to_string(r.annotator));
    }
    if (r.abstained()) continue;
    if (r.label < 0 || static_cast<std::size_t>(r.label) >= arity) {
      throw ValidationError("annotation label " + std::to_string(r.label) +
                            " outside the attribute schema");
    }
    data.labels[r.user].emplace_back(r.annotator, r.label);
  }
  for (auto& pairs : data.labels) std::ranges::sort(pairs);
  for (std::size_t u = 0; u < user_count; ++u) {
    if (!data.labels[u].empty()) data.eligible.push_back(static_cast<std::uint32_t>(u));
  }
  data.has_rationale.assign(user_count, false);
  if (rationales.rows() > 0) {
    if (rationales.rows() != rationale_users.size()) {
      throw ArgumentError("rationale rows and user index disagree in length");
    }
    data.rationales = Matrix(user_count, rationales.cols());
    for (std::size_t r = 0; r < rationale_users.size(); ++r) {
      const std::size_t u = rationale_users[r];
      if (u >= user_count) {
        throw ValidationError("rationale for unknown user " + std::to_string(u));
      }
      std::ranges::copy(rationales.row(r), data.rationales.row(u).begin());
      data.has_rationale[u] = true;
    }
  }
  return data;
}

SensitiveBatch make_sensitive_batch(const EmbeddingTables& tables,
                                    std::vector<std::uint32_t> users) {
  SensitiveBatch batch;
  batch.user_vecs = Matrix(users.size(), tables.dim());
  for (std::size_t b = 0; b < users.size(); ++b) {
    std::ranges::copy(tables.user(users[b]), batch.user_vecs.row(b).begin());
  }
  batch.users = std::move(users);
  return batch;
}

namespace {

// Backpropagates gradients on realized confusion matrices (annotator-major,
// row-major) into their logits through the row softmax.
void confusion_backward(SensitiveModel& model, std::span<const Matrix> f,
                        std::span<const double> grad_f) {
  const std::size_t a = model.shape().arity;
  auto& g = model.confusion_logits.grad;
  for (std::size_t i = 0; i < f.size(); ++i) {
    for (std::size_t j = 0; j < a; ++j) {
      const auto row = f[i].row(j);
      const double* gr = grad_f.data() + (i * a + j) * a;
      double inner = 0.0;
      for (std::size_t k = 0; k < a; ++k) inner += gr[k] * row[k];
      for (std::size_t k = 0; k < a; ++k) {
        g[(i * a + j) * a + k] += row[k] * (gr[k] - inner);
      }
    }
  }
}

std::vector<Matrix> all_confusions(const SensitiveModel& model) {
  std::vector<Matrix> f;
  for (std::size_t i = 0; i < model.shape().annotators; ++i) {
    f.push_back(model.confusion(i));
  }
  return f;
}

double cls_impl(SensitiveModel& model, const SensitiveData& data,
                const SensitiveBatch& batch, Matrix* user_grad, double weight,
                bool grads) {
  const std::size_t a = model.shape().arity;
  const std::size_t d = model.shape().dim;
  std::size_t pairs = 0;
  for (auto u : batch.users) pairs += data.labels.at(u).size();
  if (pairs == 0) {
    throw ArgumentError("every annotation in the batch abstains; L_cls is undefined");
  }
  const double scale = weight / static_cast<double>(pairs);
  const auto f = all_confusions(model);
  std::vector<double> grad_f(f.size() * a * a, 0.0);
  Mlp::Trace ts;
  Mlp::Trace tc;
  std::vector<double> c(a);
  std::vector<double> gc(a);
  std::vector<double> gs(d);
  double total = 0.0;
  for (std::size_t b = 0; b < batch.users.size(); ++b) {
    const auto& labels = data.labels[batch.users[b]];
    if (labels.empty()) continue;
    model.encoder.forward(batch.user_vecs.row(b), ts);
    model.classifier.forward(ts.output, tc);
    c = tc.output;
    softmax_inplace(c);
    std::fill(gc.begin(), gc.end(), 0.0);
    for (const auto& [annotator, label] : labels) {
      const auto& fi = f[static_cast<std::size_t>(annotator)];
      const auto k = static_cast<std::size_t>(label);
      double q = 0.0;
      for (std::size_t j = 0; j < a; ++j) q += fi(j, k) * c[j];
      total += -std::log(q);
      if (!grads) continue;
      double* gfi = grad_f.data() + static_cast<std::size_t>(annotator) * a * a;
      for (std::size_t j = 0; j < a; ++j) {
        gc[j] -= scale * fi(j, k) / q;
        gfi[j * a + k] -= scale * c[j] / q;
      }
    }
    if (!grads) continue;
    double inner = 0.0;
    for (std::size_t j = 0; j < a; ++j) inner += gc[j] * c[j];
    for (std::size_t j = 0; j < a; ++j) gc[j] = c[j] * (gc[j] - inner);
    std::fill(gs.begin(), gs.end(), 0.0);
    model.classifier.backward(tc, gc, gs);
    model.encoder.backward(ts, gs,
                           user_grad != nullptr ? user_grad->row(b) : std::span<double>{});
  }
  if (grads) confusion_backward(model, f, grad_f);
  return total / static_cast<double>(pairs);
}

double sim_impl(SensitiveModel& model, const ConsensusGraph& graph, double weight,
                bool grads) {
  const std::size_t a = model.shape().arity;
  if (graph.neighbors.size() != model.shape().annotators) {
    throw ArgumentError("consensus graph covers " +
                        std::to_string(graph.neighbors.size()) +
                        " annotators, model has " +
                        std::to_string(model.shape().annotators));
  }
  const auto f = all_confusions(model);
  std::vector<double> grad_f(f.size() * a * a, 0.0);
  std::vector<double> diff(a * a);
  double total = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    for (std::size_t j : graph.neighbors[i]) {
      for (std::size_t e = 0; e < a * a; ++e) {
        diff[e] = f[i].data()[e] - f[j].data()[e];
      }
      const double norm = std::sqrt(kernels::dot(diff, diff));
      total += norm;
      if (!grads || norm == 0.0) continue;
      for (std::size_t e = 0; e < a * a; ++e) {
        grad_f[i * a * a + e] += weight * diff[e] / norm;
        grad_f[j * a * a + e] -= weight * diff[e] / norm;
      }
    }
  }
  if (grads) confusion_backward(model, f, grad_f);
  return total;
}

double fine_impl(SensitiveModel& model, const SensitiveData& data,
                 const SensitiveBatch& batch, Matrix* user_grad, double weight,
                 bool grads) {
  const std::size_t d = model.shape().dim;
  const std::size_t r_dim = model.shape().rationale_dim;
  std::vector<std::size_t> rows;
  for (std::size_t b = 0; b < batch.users.size(); ++b) {
    if (batch.users[b] < data.has_rationale.size() && data.has_rationale[batch.users[b]]) {
      rows.push_back(b);
    }
  }
  if (rows.size() < 2) return 0.0;
  if (data.rationales.cols() != r_dim) {
    throw ArgumentError("rationale embeddings have dimension " +
                        std::to_string(data.rationales.cols()) + ", model expects " +
                        std::to_string(r_dim));
  }
  const std::size_t n = rows.size();
  std::vector<Mlp::Trace> traces(n);
  Matrix s(n, d);
  Matrix e(n, d);
  for (std::size_t r = 0; r < n; ++r) {
    model.encoder.forward(batch.user_vecs.row(rows[r]), traces[r]);
    std::ranges::copy(traces[r].output, s.row(r).begin());
    const auto proj = model.project(data.rationales.row(batch.users[rows[r]]));
    std::ranges::copy(proj, e.row(r).begin());
  }
  if (!grads) return loss_fine(s, e, nullptr, nullptr);
  Matrix ds(n, d);
  Matrix de(n, d);
  const double loss = loss_fine(s, e, &ds, &de);
  const auto& k = kernels::active();
  for (std::size_t r = 0; r < n; ++r) {
    for (double& g : ds.row(r)) g *= weight;
    for (double& g : de.row(r)) g *= weight;
    model.encoder.backward(
        traces[r], ds.row(r),
        user_grad != nullptr ? user_grad->row(rows[r]) : std::span<double>{});
    k.outer_acc(de.row(r).data(), data.rationales.row(batch.users[rows[r]]).data(),
                model.projection.grad.data(), d, r_dim);
  }
  return loss;
}

}  // namespace

double loss_cls(SensitiveModel& model, const SensitiveData& data,
                const SensitiveBatch& batch, Matrix* user_grad) {
  return cls_impl(model, data, batch, user_grad, 1.0, true);
}

double loss_sim(SensitiveModel& model, const ConsensusGraph& graph, bool accumulate) {
  return sim_impl(model, graph, 1.0, accumulate);
}

double loss_fine(const Matrix& s, const Matrix& e, Matrix* ds, Matrix* de) {
  const std::size_t n = s.rows();
  if (e.rows() != n || e.cols() != s.cols()) {
    throw ArgumentError("sensitive and rationale batches disagree in shape");
  }
  if (n == 0) throw ArgumentError("empty contrastive batch");
  const double scale = 1.0 / static_cast<double>(n);
  std::vector<double> logits(n);
  double total = 0.0;
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t j = 0; j < n; ++j) logits[j] = kernels::dot(s.row(j), e.row(u));
    const double lse = log_sum_exp(logits);
    total += lse - logits[u];
    if (ds == nullptr && de == nullptr) continue;
    for (std::size_t j = 0; j < n; ++j) {
      const double p = std::exp(logits[j] - lse);
      const double g = (p - (j == u ? 1.0 : 0.0)) * scale;
      if (ds != nullptr) kernels::axpy(g, e.row(u), ds->row(j));
      if (de != nullptr) kernels::axpy(g, s.row(j), de->row(u));
    }
  }
  return total * scale;
}

double loss_fine(SensitiveModel& model, const SensitiveData& data,
                 const SensitiveBatch& batch, Matrix* user_grad) {
  return fine_impl(model, data, batch, user_grad, 1.0, true);
}

SenComponents sensitive_objective(SensitiveModel& model, EmbeddingTables& tables,
                                  const SensitiveData& data,
                                  const SensitiveBatch& batch,
                                  const ConsensusGraph& graph,
                                  const SenWeights& weights, bool accumulate) {
  Matrix user_grad(batch.users.size(), model.shape().dim);
  SenComponents out;
  out.cls = cls_impl(model, data, batch, &user_grad, 1.0, accumulate);
  out.sim = sim_impl(model, graph, weights.lambda_sim, accumulate);
  out.fine = fine_impl(model, data, batch, &user_grad, weights.lambda_fine, accumulate);
  out.total = out.cls + weights.lambda_sim * out.sim + weights.lambda_fine * out.fine;
  if (accumulate) {
    for (std::size_t b = 0; b < batch.users.size(); ++b) {
      kernels::axpy(1.0, user_grad.row(b), tables.user_grad(batch.users[b]));
    }
  }
  return out;
}

SenComponents loss_sen(SensitiveModel& model, EmbeddingTables& tables,
                       const SensitiveData& data, const SensitiveBatch& batch,
                       std::span<const Triplet> bpr_batch,
                       const ConsensusGraph& graph, const SenWeights& weights,
                       bool accumulate) {
  auto out = sensitive_objective(model, tables, data, batch, graph, weights, accumulate);
  out.bpr = bpr_loss(tables, bpr_batch, accumulate);
  out.total += out.bpr;
  return out;
}

double annotator_fit(SensitiveModel& model, const EmbeddingTables& tables,
                     const SensitiveData& data, std::span<const std::uint32_t> users) {
  if (users.empty()) users = data.eligible;
  if (users.empty()) return 0.0;
  const auto batch =
      make_sensitive_batch(tables, std::vector<std::uint32_t>(users.begin(), users.end()));
  return cls_impl(model, data, batch, nullptr, 1.0, false);
}

std::pair<std::vector<std::uint32_t>, std::vector<std::uint32_t>> split_eligible(
    std::span<const std::uint32_t> eligible, double validation_frac, std::uint64_t seed) {
  if (validation_frac < 0.0 || validation_frac >= 1.0) {
    throw ArgumentError("validation_frac must lie in [0, 1)");
  }
  std::vector<std::uint32_t> order(eligible.begin(), eligible.end());
  auto held = static_cast<std::size_t>(validation_frac * static_cast<double>(order.size()));
  if (order.size() < held + 2) held = 0;
  Rng rng(derive_seed(seed, "stage1-validation"));
  rng.shuffle(std::span(order));
  std::vector<std::uint32_t> validation(order.begin(), order.begin() + held);
  std::vector<std::uint32_t> train(order.begin() + held, order.end());
  std::ranges::sort(validation);
  std::ranges::sort(train);
  return {std::move(train), std::move(validation)};
}

Stage1Result train_stage1(SensitiveModel& model, EmbeddingTables& tables,
                          const InteractionDataset& ds, const SensitiveData& data,
                          const ConsensusGraph& graph, const Stage1Config& config) {
  if (model.shape().dim != tables.dim()) {
    throw ArgumentError("sensitive model and tables disagree on dimension");
  }
  if (config.bpr_batch == 0 || config.sens_batch == 0) {
    throw ArgumentError("batch sizes must be positive");
  }
  if (config.confusion_lr_scale < 0.0) {
    throw ArgumentError("confusion_lr_scale must be >= 0");
  }
  auto pairs = train_pairs(ds);
  if (pairs.empty()) throw ArgumentError("dataset has no train interactions");
  TableOptimizer table_opt(config.lr);
  Adam enc_opt({config.lr});
  Adam cls_opt({config.lr});
  Adam conf_opt({config.lr * config.confusion_lr_scale});
  Adam proj_opt({config.lr});

  Stage1Result result;
  auto [order, validation] = split_eligible(data.eligible, config.validation_frac, config.seed);
  result.validation_users = validation;
  std::size_t cursor = order.size();
  Rng user_rng(derive_seed(config.seed, "stage1-users"));
  const std::uint64_t negative_seed = derive_seed(config.seed, "stage1-negatives");

  double best_fit = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  bool has_best = false;
  SensitiveModel best_model;
  EmbeddingTables best_tables;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Rng pair_rng(derive_seed(config.seed, epoch, 0x51a6e1));
    pair_rng.shuffle(std::span(pairs));
    double bpr_sum = 0.0;
    double sens_sum = 0.0;
    std::size_t steps = 0;
    std::size_t sens_steps = 0;
    for (std::size_t start = 0; start < pairs.size(); start += config.bpr_batch) {
      const std::size_t end = std::min(pairs.size(), start + config.bpr_batch);
      const auto triplets =
          sample_negatives(ds, std::span(pairs).subspan(start, end - start),
                           derive_seed(negative_seed, epoch, steps));
      tables.zero_grad();
      const double bpr = bpr_loss(tables, triplets);
      if (!std::isfinite(bpr)) {
        throw TrainingError("non-finite BPR loss in stage 1, epoch " +
                            std::to_string(epoch) + ", step " + std::to_string(steps));
      }
      table_opt.step(tables);
      bpr_sum += bpr;
      ++steps;

      if (order.empty()) continue;
      std::vector<std::uint32_t> users;
      while (users.size() < std::min(config.sens_batch, order.size())) {
        if (cursor == order.size()) {
          user_rng.shuffle(std::span(order));
          cursor = 0;
        }
        users.push_back(order[cursor++]);
      }
      const auto batch = make_sensitive_batch(tables, std::move(users));
      model.zero_grad();
      tables.zero_grad();
      const auto parts =
          sensitive_objective(model, tables, data, batch, graph, config.weights);
      if (!std::isfinite(parts.total)) {
        throw TrainingError("non-finite sensitive loss in stage 1, epoch " +
                            std::to_string(epoch) + ", step " + std::to_string(steps));
      }
      enc_opt.step(model.encoder.params());
      cls_opt.step(model.classifier.params());
      conf_opt.step(model.confusion_logits);
      proj_opt.step(model.projection);
      if (config.sensitive_updates_users) table_opt.users.step(tables.users());
      sens_sum += parts.total;
      ++sens_steps;
    }
    ++result.epochs;
    result.bpr_curve.push_back(bpr_sum / static_cast<double>(steps));
    result.sens_curve.push_back(sens_steps > 0 ? sens_sum / static_cast<double>(sens_steps)
                                               : 0.0);
    const double fit =
        annotator_fit(model, tables, data, validation.empty() ? order : validation);
    result.fit_curve.push_back(fit);
    result.best_epoch = epoch;
    if (config.patience == 0) continue;
    if (fit < best_fit - config.min_delta) {
      best_fit = fit;
      since_best = 0;
      has_best = true;
      best_model = model;
      best_tables = tables;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  if (has_best) {
    model = std::move(best_model);
    tables = std::move(best_tables);
    result.best_epoch = result.epochs - 1 - since_best;
  }
  model.zero_grad();
  tables.zero_grad();
  return result;
}

void save_sensitive(const std::filesystem::path& dir, const SensitiveModel& model) {
  std::filesystem::create_directories(dir);
  write_lfsa(dir / "encoder.lfsa", model.encoder.params().value);
  write_lfsa(dir / "classifier.lfsa", model.classifier.params().value);
  write_lfsa(dir / "confusion.lfsa", model.confusion_logits.value);
  write_lfsa(dir / "projection.lfsa", model.projection.value);
  const auto& s = model.shape();
  nlohmann::json manifest;
  manifest["d"] = s.dim;
  manifest["arity"] = s.arity;
  manifest["annotators"] = s.annotators;
  manifest["rationale_dim"] = s.rationale_dim;
  std::ofstream out(dir / "sensitive.json");
  if (!out) throw Error("cannot write " + (dir / "sensitive.json").string());
  out << manifest.dump(2) << '\n';
}

SensitiveModel load_sensitive(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "sensitive.json";
  std::ifstream in(manifest_path);
  if (!in) throw MissingPrerequisiteError("missing " + manifest_path.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(manifest_path.string() + ": " + e.what());
  }
  SensitiveShape shape;
  shape.dim = manifest.at("d").get<std::size_t>();
  shape.arity = manifest.at("arity").get<std::size_t>();
  shape.annotators = manifest.at("annotators").get<std::size_t>();
  shape.rationale_dim = manifest.at("rationale_dim").get<std::size_t>();
  SensitiveModel model(shape);
  const auto load_into = [&](const char* name, ParamBuffer& buffer) {
    auto values = read_lfsa_flat(dir / name);
    if (values.size() != buffer.size()) {
      throw ValidationError(std::string(name) + " holds " + std::to_string(values.size()) +
                            " values, expected " + std::to_string(buffer.size()));
    }
    buffer.value = std::move(values);
  };
  load_into("encoder.lfsa", model.encoder.params());
  load_into("classifier.lfsa", model.classifier.params());
  load_into("confusion.lfsa", model.confusion_logits);
  load_into("projection.lfsa", model.projection);
  return model;
}

void export_confusions(const std::filesystem::path& dir, const SensitiveModel& model) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < model.shape().annotators; ++i) {
    const auto f = model.confusion(i);
    const auto path = dir / ("confusion_" + std::to_string(i) + ".csv");
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << std::setprecision(10);
    for (std::size_t j = 0; j < f.rows(); ++j) {
      for (std::size_t k = 0; k < f.cols(); ++k) {
        out << (k > 0 ? "," : "") << f(j, k);
      }
      out << '\n';
    }
  }
}

}  // namespace fairlab
