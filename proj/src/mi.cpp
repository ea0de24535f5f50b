#include "fairlab/mi.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "fairlab/errors.hpp"
#include "fairlab/eval.hpp"
#include "fairlab/kernels.hpp"
#include "fairlab/lfsa_io.hpp"
#include "json.hpp"

namespace fairlab {
namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // ln(2 pi)

double clamp_logvar(double x) { return std::clamp(x, kLogvarMin, kLogvarMax); }

// Adds d/dmu and d/dlogvar of log q(s) (times weight) into gmu / glv, and
// d/ds into gs when non-empty. Clamped coordinates pass no logvar gradient.
void loglik_grad(std::span<const double> s, std::span<const double> out,
                 double weight, std::span<double> gmu, std::span<double> glv,
                 std::span<double> gs) {
  const std::size_t d = s.size();
  for (std::size_t k = 0; k < d; ++k) {
    const double raw = out[d + k];
    const double lv = clamp_logvar(raw);
    const double prec = std::exp(-lv);
    const double diff = s[k] - out[k];
    gmu[k] += weight * diff * prec;
    if (raw > kLogvarMin && raw < kLogvarMax) {
      glv[k] += weight * 0.5 * (diff * diff * prec - 1.0);
    }
    if (!gs.empty()) gs[k] -= weight * diff * prec;
  }
}

double loglik_from_output(std::span<const double> s, std::span<const double> out) {
  const std::size_t d = s.size();
  return gaussian_loglik(s, out.subspan(0, d), out.subspan(d, d));
}

void check_pair(const Matrix& s, const Matrix& p) {
  if (s.rows() != p.rows() || s.cols() != p.cols()) {
    throw ArgumentError("s and p batches must be aligned and of equal shape");
  }
}

double safe_norm(std::span<const double> x) {
  return std::max(std::sqrt(kernels::dot(x, x)), kCosineEps);
}

}  // namespace

FairModel::FairModel(std::size_t dim)
    : preference({dim, dim, dim}), variational({dim, dim, 2 * dim}) {}

void FairModel::init(std::uint64_t seed) {
  Rng rng(seed);
  preference.init_he(rng);
  variational.init_he(rng);
  // Start the variance head near unit variance.
  const std::size_t last = variational.layer_count() - 1;
  const std::size_t d = dim();
  auto w = variational.weights(last);
  for (std::size_t r = d; r < 2 * d; ++r) {
    for (std::size_t c = 0; c < d; ++c) w[r * d + c] *= 0.1;
  }
}

std::vector<double> encode_preference(const Mlp& net, std::span<const double> u) {
  return net.forward(u);
}

double gaussian_loglik(std::span<const double> s, std::span<const double> mu,
                       std::span<const double> logvar) {
  if (s.size() != mu.size() || s.size() != logvar.size()) {
    throw ArgumentError("Gaussian log-likelihood operands differ in dimension");
  }
  double total = 0.0;
  for (std::size_t k = 0; k < s.size(); ++k) {
    const double lv = clamp_logvar(logvar[k]);
    const double diff = s[k] - mu[k];
    total += -0.5 * (kLog2Pi + lv + diff * diff * std::exp(-lv));
  }
  return total;
}

double variational_loglik(const Mlp& bnet, std::span<const double> s,
                          std::span<const double> p) {
  if (bnet.output_dim() != 2 * s.size()) {
    throw ArgumentError("variational net output does not match s dimension");
  }
  return loglik_from_output(s, bnet.forward(p));
}

double variational_objective(Mlp& bnet, const Matrix& s, const Matrix& p) {
  check_pair(s, p);
  const std::size_t n = s.rows();
  const std::size_t d = s.cols();
  if (n == 0) throw ArgumentError("empty variational batch");
  const double weight = -1.0 / static_cast<double>(n);
  Mlp::Trace trace;
  std::vector<double> g(2 * d);
  double total = 0.0;
  for (std::size_t u = 0; u < n; ++u) {
    bnet.forward(p.row(u), trace);
    total += loglik_from_output(s.row(u), trace.output);
    std::fill(g.begin(), g.end(), 0.0);
    loglik_grad(s.row(u), trace.output, weight, std::span(g).subspan(0, d),
                std::span(g).subspan(d, d), {});
    bnet.backward(trace, g, {});
  }
  return total / static_cast<double>(n);
}

double loss_ub(const Mlp& bnet, const Matrix& s, const Matrix& p, Matrix* grad_p,
               Matrix* grad_s) {
  check_pair(s, p);
  const std::size_t n = s.rows();
  const std::size_t d = s.cols();
  if (n < 2) throw ArgumentError("CLUB needs a batch of at least 2");
  if (bnet.output_dim() != 2 * d) {
    throw ArgumentError("variational net output does not match s dimension");
  }
  const double inv = 1.0 / static_cast<double>(n);
  // B is frozen here: backward runs on a copy whose parameter gradients are
  // discarded.
  Mlp frozen = bnet;
  Mlp::Trace trace;
  std::vector<double> g(2 * d);
  double total = 0.0;
  for (std::size_t u = 0; u < n; ++u) {
    frozen.forward(p.row(u), trace);
    const auto& out = trace.output;
    const double positive = loglik_from_output(s.row(u), out);
    double negative = 0.0;
    for (std::size_t v = 0; v < n; ++v) negative += loglik_from_output(s.row(v), out);
    total += positive - negative * inv;
    if (grad_p == nullptr && grad_s == nullptr) continue;
    std::fill(g.begin(), g.end(), 0.0);
    const auto gmu = std::span(g).subspan(0, d);
    const auto glv = std::span(g).subspan(d, d);
    loglik_grad(s.row(u), out, inv, gmu, glv,
                grad_s != nullptr ? grad_s->row(u) : std::span<double>{});
    for (std::size_t v = 0; v < n; ++v) {
      loglik_grad(s.row(v), out, -inv * inv, gmu, glv,
                  grad_s != nullptr ? grad_s->row(v) : std::span<double>{});
    }
    if (grad_p != nullptr) frozen.backward(trace, g, grad_p->row(u), false);
  }
  return total * inv;
}

double loss_lb(const Matrix& r, const Matrix& s, const Matrix& p, double alpha,
               Matrix* grad_p, Matrix* grad_s) {
  const std::size_t n = p.rows();
  const std::size_t d = p.cols();
  const bool conditional = s.rows() > 0;
  if (r.rows() != n || r.cols() != d) {
    throw ArgumentError("r and p batches must be aligned and of equal shape");
  }
  if (conditional) check_pair(s, p);
  if (n == 0) throw ArgumentError("empty InfoNCE batch");
  const double inv = 1.0 / static_cast<double>(n);
  std::vector<double> r_norm(n);
  for (std::size_t v = 0; v < n; ++v) r_norm[v] = safe_norm(r.row(v));
  std::vector<double> z(d);
  std::vector<double> gz(d);
  std::vector<double> f(n);
  double total = 0.0;
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t k = 0; k < d; ++k) {
      z[k] = p(u, k) + (conditional ? alpha * s(u, k) : 0.0);
    }
    const double z_norm = safe_norm(z);
    for (std::size_t v = 0; v < n; ++v) {
      f[v] = kernels::dot(r.row(v), z) / (r_norm[v] * z_norm);
    }
    const double lse = log_sum_exp(f);
    total += lse - f[u];
    if (grad_p == nullptr && grad_s == nullptr) continue;
    std::fill(gz.begin(), gz.end(), 0.0);
    for (std::size_t v = 0; v < n; ++v) {
      const double w = (std::exp(f[v] - lse) - (v == u ? 1.0 : 0.0)) * inv;
      // d cos(r, z) / dz = r / (|r||z|) - cos z / |z|^2
      kernels::axpy(w / (r_norm[v] * z_norm), r.row(v), gz);
      kernels::axpy(-w * f[v] / (z_norm * z_norm), z, gz);
    }
    if (grad_p != nullptr) kernels::axpy(1.0, gz, grad_p->row(u));
    if (grad_s != nullptr && conditional) kernels::axpy(alpha, gz, grad_s->row(u));
  }
  return total * inv;
}

LbComponents loss_b(FairModel& model, EmbeddingTables& tables,
                    const SensitiveModel& sensitive, const EmbeddingTables& pretrained,
                    const StageTwoBatch& batch, const MiConfig& config,
                    bool accumulate) {
  const std::size_t d = tables.dim();
  auto& pref = model.preference;
  LbComponents out;

  // BPR on P(u).
  if (!batch.triplets.empty()) {
    const std::size_t t_count = batch.triplets.size();
    std::vector<Mlp::Trace> traces(t_count);
    Matrix users(t_count, d);
    for (std::size_t t = 0; t < t_count; ++t) {
      pref.forward(tables.user(batch.triplets[t].user), traces[t]);
      std::ranges::copy(traces[t].output, users.row(t).begin());
    }
    Matrix grad(t_count, d);
    out.bpr = bpr_loss(users, tables, batch.triplets, accumulate ? &grad : nullptr,
                       accumulate ? &tables : nullptr);
    if (accumulate) {
      for (std::size_t t = 0; t < t_count; ++t) {
        pref.backward(traces[t], grad.row(t), tables.user_grad(batch.triplets[t].user));
      }
    }
  }

  const bool mi_terms = config.lambda_ub != 0.0 || config.lambda_lb != 0.0;
  if (mi_terms && !batch.users.empty()) {
    const std::size_t n = batch.users.size();
    std::vector<Mlp::Trace> traces(n);
    Matrix s(n, d);
    Matrix p(n, d);
    Matrix r(n, d);
    for (std::size_t b = 0; b < n; ++b) {
      const auto u = batch.users[b];
      pref.forward(tables.user(u), traces[b]);
      std::ranges::copy(traces[b].output, p.row(b).begin());
      std::ranges::copy(sensitive.encoder.forward(tables.user(u)), s.row(b).begin());
      std::ranges::copy(pretrained.user(u), r.row(b).begin());
    }
    Matrix gp_ub(n, d);
    Matrix gp_lb(n, d);
    out.ub = loss_ub(model.variational, s, p, accumulate ? &gp_ub : nullptr);
    out.lb = loss_lb(r, s, p, config.alpha, accumulate ? &gp_lb : nullptr);
    if (accumulate) {
      std::vector<double> g(d);
      for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t k = 0; k < d; ++k) {
          g[k] = config.lambda_ub * gp_ub(b, k) + config.lambda_lb * gp_lb(b, k);
        }
        pref.backward(traces[b], g, tables.user_grad(batch.users[b]));
      }
    }
  }

  if (config.item_side_lb && config.lambda_lb != 0.0 && batch.items.size() > 0) {
    const std::size_t n = batch.items.size();
    Matrix v(n, d);
    Matrix r(n, d);
    for (std::size_t b = 0; b < n; ++b) {
      std::ranges::copy(tables.item(batch.items[b]), v.row(b).begin());
      std::ranges::copy(pretrained.item(batch.items[b]), r.row(b).begin());
    }
    Matrix gv(n, d);
    out.item_lb = loss_lb(r, Matrix{}, v, 0.0, accumulate ? &gv : nullptr);
    if (accumulate) {
      for (std::size_t b = 0; b < n; ++b) {
        kernels::axpy(config.lambda_lb, gv.row(b), tables.item_grad(batch.items[b]));
      }
    }
  }

  out.total = out.bpr + config.lambda_ub * out.ub + config.lambda_lb * out.lb;
  if (config.item_side_lb) out.total += config.lambda_lb * out.item_lb;
  return out;
}

Matrix preference_embeddings(const Mlp& preference, const EmbeddingTables& tables) {
  Matrix out(tables.user_count(), preference.output_dim());
  for (std::size_t u = 0; u < tables.user_count(); ++u) {
    std::ranges::copy(preference.forward(tables.user(u)), out.row(u).begin());
  }
  return out;
}

Matrix sensitive_embeddings(const Mlp& encoder, const EmbeddingTables& tables) {
  return preference_embeddings(encoder, tables);
}

Stage2Result train_stage2(FairModel& model, EmbeddingTables& tables,
                          const SensitiveModel& sensitive,
                          const EmbeddingTables& pretrained,
                          const InteractionDataset& ds, const Stage2Config& config) {
  const std::size_t d = tables.dim();
  if (model.dim() != d || sensitive.shape().dim != d || pretrained.dim() != d) {
    throw ArgumentError("stage-2 components disagree on embedding dimension");
  }
  if (pretrained.user_count() != tables.user_count() ||
      pretrained.item_count() != tables.item_count()) {
    throw ArgumentError("pretrained tables do not match the dataset shape");
  }
  if (config.mi.inner_steps < 1) throw ArgumentError("inner_steps must be >= 1");
  if (config.variational_lr_scale <= 0.0) {
    throw ArgumentError("variational_lr_scale must be positive");
  }
  if (config.mi.lambda_ub < 0.0 || config.mi.lambda_lb < 0.0) {
    throw ArgumentError("MI weights must be nonnegative");
  }
  auto pairs = train_pairs(ds);
  if (pairs.empty()) throw ArgumentError("dataset has no train interactions");

  TableOptimizer table_opt(config.lr);
  Adam pref_opt({config.lr});
  Adam var_opt({config.lr * config.variational_lr_scale});
  std::vector<std::uint32_t> order(tables.user_count());
  for (std::size_t u = 0; u < order.size(); ++u) order[u] = static_cast<std::uint32_t>(u);
  std::size_t cursor = order.size();
  Rng user_rng(derive_seed(config.seed, "stage2-users"));
  const std::uint64_t negative_seed = derive_seed(config.seed, "stage2-negatives");
  const std::size_t mi_batch = std::min(config.mi_batch, order.size());

  Stage2Result result;
  FairModel best_model = model;
  EmbeddingTables best_tables = tables;
  double best_recall = -1.0;
  const bool has_val = ds.count(SplitTag::kVal) > 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Rng pair_rng(derive_seed(config.seed, epoch, 0x52a6e2));
    pair_rng.shuffle(std::span(pairs));
    double loss_sum = 0.0;
    double ub_sum = 0.0;
    double lb_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < pairs.size(); start += config.bpr_batch) {
      const std::size_t end = std::min(pairs.size(), start + config.bpr_batch);
      StageTwoBatch batch;
      batch.triplets = sample_negatives(ds, std::span(pairs).subspan(start, end - start),
                                        derive_seed(negative_seed, epoch, steps));
      while (batch.users.size() < mi_batch) {
        if (cursor == order.size()) {
          user_rng.shuffle(std::span(order));
          cursor = 0;
        }
        batch.users.push_back(order[cursor++]);
      }
      if (config.mi.item_side_lb) {
        for (const auto& t : batch.triplets) {
          if (batch.items.size() == mi_batch) break;
          if (std::ranges::find(batch.items, t.pos) == batch.items.end()) {
            batch.items.push_back(t.pos);
          }
        }
      }

      if (config.mi.lambda_ub != 0.0) {
        Matrix s(mi_batch, d);
        Matrix p(mi_batch, d);
        for (std::size_t b = 0; b < mi_batch; ++b) {
          const auto u = tables.user(batch.users[b]);
          std::ranges::copy(sensitive.encoder.forward(u), s.row(b).begin());
          std::ranges::copy(model.preference.forward(u), p.row(b).begin());
        }
        for (std::size_t inner = 0; inner < config.mi.inner_steps; ++inner) {
          model.variational.params().zero_grad();
          variational_objective(model.variational, s, p);
          var_opt.step(model.variational.params());
        }
      }

      tables.zero_grad();
      model.preference.params().zero_grad();
      const auto parts = loss_b(model, tables, sensitive, pretrained, batch, config.mi);
      if (!std::isfinite(parts.total)) {
        throw TrainingError("non-finite stage-2 loss at epoch " + std::to_string(epoch) +
                            ", step " + std::to_string(steps));
      }
      pref_opt.step(model.preference.params());
      table_opt.step(tables);
      loss_sum += parts.total;
      ub_sum += parts.ub;
      lb_sum += parts.lb;
      ++steps;
    }
    const double denom = static_cast<double>(steps);
    result.loss_curve.push_back(loss_sum / denom);
    result.ub_curve.push_back(ub_sum / denom);
    result.lb_curve.push_back(lb_sum / denom);
    ++result.epochs;
    if (!has_val) continue;
    const double recall =
        evaluate_ranking(preference_embeddings(model.preference, tables),
                         tables.item_matrix(), ds, config.eval_k, SplitTag::kVal)
            .recall;
    result.val_curve.push_back(recall);
    if (recall > best_recall) {
      best_recall = recall;
      result.best_epoch = epoch;
      if (config.keep_best) {
        best_model = model;
        best_tables = tables;
      }
    }
  }
  if (config.keep_best && has_val) {
    model = std::move(best_model);
    tables = std::move(best_tables);
  } else {
    result.best_epoch = result.epochs > 0 ? result.epochs - 1 : 0;
  }
  model.preference.params().zero_grad();
  model.variational.params().zero_grad();
  tables.zero_grad();
  return result;
}

void save_fair(const std::filesystem::path& dir, const FairModel& model) {
  std::filesystem::create_directories(dir);
  write_lfsa(dir / "preference.lfsa", model.preference.params().value);
  write_lfsa(dir / "variational.lfsa", model.variational.params().value);
  nlohmann::json manifest;
  manifest["d"] = model.dim();
  std::ofstream out(dir / "fair.json");
  if (!out) throw Error("cannot write " + (dir / "fair.json").string());
  out << manifest.dump(2) << '\n';
}

FairModel load_fair(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "fair.json";
  std::ifstream in(manifest_path);
  if (!in) throw MissingPrerequisiteError("missing " + manifest_path.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(manifest_path.string() + ": " + e.what());
  }
  FairModel model(manifest.at("d").get<std::size_t>());
  auto pref = read_lfsa_flat(dir / "preference.lfsa");
  auto var = read_lfsa_flat(dir / "variational.lfsa");
  if (pref.size() != model.preference.params().size() ||
      var.size() != model.variational.params().size()) {
    throw ValidationError("stage-2 checkpoint in " + dir.string() +
                          " does not match its manifest");
  }
  model.preference.params().value = std::move(pref);
  model.variational.params().value = std::move(var);
  return model;
}

}  // namespace fairlab
