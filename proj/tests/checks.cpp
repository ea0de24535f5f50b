#include "checks.hpp"

#include <algorithm>
#include <cmath>

#include "fairlab/encoders.hpp"
#include "fairlab/mi.hpp"
#include "fairlab/sensitive.hpp"
#include "oracles.hpp"

namespace fairlab::checks {
namespace {

constexpr std::size_t kDim = 4;
constexpr std::size_t kUsers = 4;
constexpr std::size_t kItems = 6;
constexpr std::size_t kAnnotators = 3;
constexpr std::size_t kRationaleDim = 5;

struct Micro {
  EmbeddingTables tables;
  EmbeddingTables pretrained;
  SensitiveModel sensitive;
  SensitiveData data;
  ConsensusGraph graph;
  std::vector<Triplet> triplets;
  FairModel fair;
};

void jitter(std::vector<double>& values, Rng& rng, double scale) {
  for (double& v : values) v += scale * rng.normal();
}

Micro make_micro(std::uint64_t seed) {
  Rng rng(seed);
  Micro m;
  m.tables = EmbeddingTables(kUsers, kItems, kDim);
  m.tables.init_normal(derive_seed(seed, "tables"), 0.8);
  m.pretrained = EmbeddingTables(kUsers, kItems, kDim);
  m.pretrained.init_normal(derive_seed(seed, "pretrained"), 0.8);

  m.sensitive = SensitiveModel({kDim, 2, kAnnotators, kRationaleDim});
  m.sensitive.init(derive_seed(seed, "sensitive"));
  // Move biases and logits off symmetric points so no ReLU or norm sits at a kink.
  jitter(m.sensitive.encoder.params().value, rng, 0.1);
  jitter(m.sensitive.classifier.params().value, rng, 0.1);
  jitter(m.sensitive.confusion_logits.value, rng, 0.5);
  jitter(m.sensitive.projection.value, rng, 0.3);

  std::vector<AnnotationRecord> annotations = {
      {0, 0, "", 0, "t"}, {0, 1, "", 1, "t"}, {0, 2, "", 0, "t"},
      {1, 0, "", 1, "t"}, {1, 2, "", kAbstain, "t"},
      {2, 1, "", 0, "t"}, {2, 2, "", 1, "t"},
      {3, 0, "", kAbstain, "t"}, {3, 1, "", 1, "t"}};
  Matrix rationales = oracle::random_matrix(3, kRationaleDim, rng, 0.5);
  const std::vector<std::size_t> rationale_users = {0, 1, 3};
  m.data = SensitiveData::build(kUsers, 2, kAnnotators, annotations, rationales,
                                rationale_users);
  m.graph = consensus_neighbors(oracle::random_matrix(kAnnotators, 3, rng), 1);
  m.triplets = {{0, 1, 2}, {1, 3, 0}, {2, 4, 5}, {3, 0, 1}};

  m.fair = FairModel(kDim);
  m.fair.init(derive_seed(seed, "fair"));
  jitter(m.fair.preference.params().value, rng, 0.1);
  jitter(m.fair.variational.params().value, rng, 0.1);
  return m;
}

std::vector<std::uint32_t> all_users() { return {0, 1, 2, 3}; }

// Concatenates analytic and numeric gradients over several buffers.
struct Comparison {
  std::vector<double> analytic;
  std::vector<double> numeric;
  void add(const std::vector<double>& a, const std::vector<double>& n) {
    analytic.insert(analytic.end(), a.begin(), a.end());
    numeric.insert(numeric.end(), n.begin(), n.end());
  }
  double error() const { return oracle::relative_error(analytic, numeric); }
};

double bpr_error(std::uint64_t seed) {
  auto m = make_micro(seed);
  m.tables.zero_grad();
  bpr_loss(m.tables, m.triplets, true);
  const auto f = [&] { return bpr_loss(m.tables, m.triplets, false); };
  Comparison c;
  const auto gu = m.tables.users().grad;
  const auto gi = m.tables.items().grad;
  c.add(gu, oracle::numeric_gradient(f, m.tables.users().value));
  c.add(gi, oracle::numeric_gradient(f, m.tables.items().value));
  return c.error();
}

double cls_error(std::uint64_t seed) {
  auto m = make_micro(seed);
  auto batch = make_sensitive_batch(m.tables, all_users());
  Matrix user_grad(kUsers, kDim);
  m.sensitive.zero_grad();
  loss_cls(m.sensitive, m.data, batch, &user_grad);
  const auto ge = m.sensitive.encoder.params().grad;
  const auto gc = m.sensitive.classifier.params().grad;
  const auto gz = m.sensitive.confusion_logits.grad;
  const auto f = [&] { return loss_cls(m.sensitive, m.data, batch, nullptr); };
  Comparison c;
  c.add(ge, oracle::numeric_gradient(f, m.sensitive.encoder.params().value));
  c.add(gc, oracle::numeric_gradient(f, m.sensitive.classifier.params().value));
  c.add(gz, oracle::numeric_gradient(f, m.sensitive.confusion_logits.value));
  c.add(user_grad.data(), oracle::numeric_gradient(f, batch.user_vecs.data()));
  return c.error();
}

double sim_error(std::uint64_t seed) {
  auto m = make_micro(seed);
  m.sensitive.zero_grad();
  loss_sim(m.sensitive, m.graph, true);
  const auto g = m.sensitive.confusion_logits.grad;
  const auto f = [&] { return loss_sim(m.sensitive, m.graph, false); };
  Comparison c;
  c.add(g, oracle::numeric_gradient(f, m.sensitive.confusion_logits.value));
  return c.error();
}

double fine_error(std::uint64_t seed) {
  auto m = make_micro(seed);
  Rng rng(derive_seed(seed, "fine"));
  auto s = oracle::random_matrix(kUsers, kDim, rng);
  auto e = oracle::random_matrix(kUsers, kDim, rng);
  Matrix ds(kUsers, kDim);
  Matrix de(kUsers, kDim);
  loss_fine(s, e, &ds, &de);
  const auto f = [&] { return loss_fine(s, e, nullptr, nullptr); };
  Comparison c;
  c.add(ds.data(), oracle::numeric_gradient(f, s.data()));
  c.add(de.data(), oracle::numeric_gradient(f, e.data()));

  // Through the model: S, W and the user rows.
  auto batch = make_sensitive_batch(m.tables, all_users());
  Matrix user_grad(kUsers, kDim);
  m.sensitive.zero_grad();
  loss_fine(m.sensitive, m.data, batch, &user_grad);
  const auto ge = m.sensitive.encoder.params().grad;
  const auto gw = m.sensitive.projection.grad;
  const auto fm = [&] { return loss_fine(m.sensitive, m.data, batch, nullptr); };
  c.add(ge, oracle::numeric_gradient(fm, m.sensitive.encoder.params().value));
  c.add(gw, oracle::numeric_gradient(fm, m.sensitive.projection.value));
  c.add(user_grad.data(), oracle::numeric_gradient(fm, batch.user_vecs.data()));
  return c.error();
}

double ub_error(std::uint64_t seed) {
  auto m = make_micro(seed);
  Rng rng(derive_seed(seed, "ub"));
  auto s = oracle::random_matrix(kUsers, kDim, rng);
  auto p = oracle::random_matrix(kUsers, kDim, rng);
  Matrix gp(kUsers, kDim);
  Matrix gs(kUsers, kDim);
  loss_ub(m.fair.variational, s, p, &gp, &gs);
  const auto f = [&] { return loss_ub(m.fair.variational, s, p, nullptr); };
  Comparison c;
  c.add(gp.data(), oracle::numeric_gradient(f, p.data()));
  c.add(gs.data(), oracle::numeric_gradient(f, s.data()));
  return c.error();
}

double lb_error(std::uint64_t seed) {
  Rng rng(derive_seed(seed, "lb"));
  auto r = oracle::random_matrix(kUsers, kDim, rng);
  auto s = oracle::random_matrix(kUsers, kDim, rng);
  auto p = oracle::random_matrix(kUsers, kDim, rng);
  Matrix gp(kUsers, kDim);
  Matrix gs(kUsers, kDim);
  loss_lb(r, s, p, 0.1, &gp, &gs);
  const auto f = [&] { return loss_lb(r, s, p, 0.1, nullptr); };
  Comparison c;
  c.add(gp.data(), oracle::numeric_gradient(f, p.data()));
  c.add(gs.data(), oracle::numeric_gradient(f, s.data()));
  return c.error();
}

double variational_error(std::uint64_t seed) {
  auto m = make_micro(seed);
  Rng rng(derive_seed(seed, "variational"));
  const auto s = oracle::random_matrix(kUsers, kDim, rng);
  const auto p = oracle::random_matrix(kUsers, kDim, rng);
  auto& b = m.fair.variational;
  b.params().zero_grad();
  variational_objective(b, s, p);
  const auto g = b.params().grad;
  const auto f = [&] {
    double total = 0.0;
    for (std::size_t u = 0; u < kUsers; ++u) total += variational_loglik(b, s.row(u), p.row(u));
    return -total / static_cast<double>(kUsers);
  };
  Comparison c;
  c.add(g, oracle::numeric_gradient(f, b.params().value));
  return c.error();
}

MiConfig micro_mi() {
  MiConfig mi;
  mi.lambda_ub = 0.3;
  mi.lambda_lb = 0.7;
  mi.alpha = 0.1;
  mi.item_side_lb = true;
  return mi;
}

StageTwoBatch micro_stage_two(const Micro& m) {
  return {m.triplets, {0, 1, 2, 3}, {0, 2, 4}};
}

double composite_b_error(std::uint64_t seed) {
  auto m = make_micro(seed);
  const auto batch = micro_stage_two(m);
  const auto mi = micro_mi();
  m.tables.zero_grad();
  m.fair.preference.params().zero_grad();
  loss_b(m.fair, m.tables, m.sensitive, m.pretrained, batch, mi, true);
  const auto gp = m.fair.preference.params().grad;
  const auto gi = m.tables.items().grad;
  const auto f = [&] {
    return loss_b(m.fair, m.tables, m.sensitive, m.pretrained, batch, mi, false).total;
  };
  // User rows are left out: s_u is a stop-gradient copy of S(u), so a finite
  // difference on u would also move s. Their gradient comes from the same
  // backward pass as P's and the MLP input gradient is checked separately.
  Comparison c;
  c.add(gp, oracle::numeric_gradient(f, m.fair.preference.params().value));
  c.add(gi, oracle::numeric_gradient(f, m.tables.items().value));
  return c.error();
}

double composite_sen_error(std::uint64_t seed) {
  auto m = make_micro(seed);
  auto batch = make_sensitive_batch(m.tables, all_users());
  const SenWeights w{0.2, 0.4};
  m.tables.zero_grad();
  m.sensitive.zero_grad();
  loss_sen(m.sensitive, m.tables, m.data, batch, m.triplets, m.graph, w, true);
  const auto gu = m.tables.users().grad;
  const auto gz = m.sensitive.confusion_logits.grad;
  const auto ge = m.sensitive.encoder.params().grad;
  // The sensitive batch carries its own copy of the user rows; keep it in sync.
  const auto f = [&] {
    batch = make_sensitive_batch(m.tables, all_users());
    return loss_sen(m.sensitive, m.tables, m.data, batch, m.triplets, m.graph, w, false).total;
  };
  Comparison c;
  c.add(gu, oracle::numeric_gradient(f, m.tables.users().value));
  c.add(gz, oracle::numeric_gradient(f, m.sensitive.confusion_logits.value));
  c.add(ge, oracle::numeric_gradient(f, m.sensitive.encoder.params().value));
  return c.error();
}

}  // namespace

std::vector<Named> gradient_errors(std::uint64_t seed) {
  return {{"L_bpr", bpr_error(seed)},   {"L_cls", cls_error(seed)},
          {"L_sim", sim_error(seed)},   {"L_fine", fine_error(seed)},
          {"L_ub", ub_error(seed)},     {"L_lb", lb_error(seed)},
          {"B loglik", variational_error(seed)},
          {"L_sen", composite_sen_error(seed)},
          {"L_b", composite_b_error(seed)}};
}

std::vector<Named> additivity_errors(std::uint64_t seed) {
  auto m = make_micro(seed);
  std::vector<Named> out;

  const SenWeights w{0.2, 0.4};
  auto batch = make_sensitive_batch(m.tables, all_users());
  const auto sen = loss_sen(m.sensitive, m.tables, m.data, batch, m.triplets, m.graph, w, false);
  const double cls = annotator_fit(m.sensitive, m.tables, m.data, all_users());
  const double bpr = bpr_loss(m.tables, m.triplets, false);
  const double sim = loss_sim(m.sensitive, m.graph, false);
  // L_fine over the users that have a rationale, encoded and projected here.
  std::vector<std::uint32_t> with = {0, 1, 3};
  Matrix s(with.size(), kDim);
  Matrix e(with.size(), kDim);
  for (std::size_t r = 0; r < with.size(); ++r) {
    std::ranges::copy(m.sensitive.encoder.forward(m.tables.user(with[r])), s.row(r).begin());
    std::ranges::copy(m.sensitive.project(m.data.rationales.row(with[r])), e.row(r).begin());
  }
  const double fine = loss_fine(s, e, nullptr, nullptr);
  out.push_back({"L_sen", std::abs(sen.total - (cls + bpr + w.lambda_sim * sim + w.lambda_fine * fine))});
  out.push_back({"L_sen parts", std::max({std::abs(sen.cls - cls), std::abs(sen.bpr - bpr),
                                          std::abs(sen.sim - sim), std::abs(sen.fine - fine)})});

  const auto mi = micro_mi();
  const auto b_batch = micro_stage_two(m);
  const auto lb = loss_b(m.fair, m.tables, m.sensitive, m.pretrained, b_batch, mi, false);
  Matrix users(m.triplets.size(), kDim);
  for (std::size_t t = 0; t < m.triplets.size(); ++t) {
    std::ranges::copy(m.fair.preference.forward(m.tables.user(m.triplets[t].user)),
                      users.row(t).begin());
  }
  const double b_bpr = bpr_loss(users, m.tables, m.triplets, nullptr, nullptr);
  Matrix ss(kUsers, kDim), pp(kUsers, kDim), rr(kUsers, kDim);
  for (std::uint32_t u = 0; u < kUsers; ++u) {
    std::ranges::copy(m.sensitive.encoder.forward(m.tables.user(u)), ss.row(u).begin());
    std::ranges::copy(m.fair.preference.forward(m.tables.user(u)), pp.row(u).begin());
    std::ranges::copy(m.pretrained.user(u), rr.row(u).begin());
  }
  const double ub = loss_ub(m.fair.variational, ss, pp, nullptr);
  const double lbv = loss_lb(rr, ss, pp, mi.alpha, nullptr);
  Matrix vi(3, kDim), ri(3, kDim);
  for (std::size_t k = 0; k < 3; ++k) {
    std::ranges::copy(m.tables.item(b_batch.items[k]), vi.row(k).begin());
    std::ranges::copy(m.pretrained.item(b_batch.items[k]), ri.row(k).begin());
  }
  const double item = loss_lb(ri, Matrix{}, vi, 0.0, nullptr);
  out.push_back({"L_b", std::abs(lb.total - (b_bpr + mi.lambda_ub * ub + mi.lambda_lb * lbv +
                                             mi.lambda_lb * item))});
  out.push_back({"L_b parts", std::max({std::abs(lb.bpr - b_bpr), std::abs(lb.ub - ub),
                                        std::abs(lb.lb - lbv), std::abs(lb.item_lb - item)})});

  MiConfig off = mi;
  off.lambda_ub = 0.0;
  off.lambda_lb = 0.0;
  const auto plain = loss_b(m.fair, m.tables, m.sensitive, m.pretrained, b_batch, off, false);
  out.push_back({"L_b at zero weights", std::abs(plain.total - b_bpr)});
  return out;
}

MiEstimates gaussian_mi_estimates(std::uint64_t seed, double rho) {
  Rng rng(derive_seed(seed, "gaussian-mi"));
  const double c = std::sqrt(1.0 - rho * rho);
  const auto draw = [&](std::size_t n, Matrix& s, Matrix& p) {
    s = Matrix(n, 1);
    p = Matrix(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
      const double x = rng.normal();
      p(i, 0) = x;
      s(i, 0) = rho * x + c * rng.normal();
    }
  };
  Mlp bnet({1, 32, 2});
  bnet.init_he(rng);
  Adam opt({5e-3});
  Matrix s, p;
  for (int step = 0; step < 3000; ++step) {
    draw(256, s, p);
    bnet.params().zero_grad();
    variational_objective(bnet, s, p);
    opt.step(bnet.params());
  }
  MiEstimates out;
  draw(2000, s, p);
  out.club = loss_ub(bnet, s, p, nullptr);

  // InfoNCE with the cosine critic on (x, 1) embeddings.
  const std::size_t batch = 128;
  out.log_batch = std::log(static_cast<double>(batch));
  double total = 0.0;
  const int rounds = 200;
  for (int r = 0; r < rounds; ++r) {
    draw(batch, s, p);
    Matrix sa(batch, 2), pa(batch, 2);
    for (std::size_t i = 0; i < batch; ++i) {
      sa(i, 0) = s(i, 0);
      sa(i, 1) = 1.0;
      pa(i, 0) = p(i, 0);
      pa(i, 1) = 1.0;
    }
    total += out.log_batch - loss_lb(sa, Matrix{}, pa, 0.0, nullptr);
  }
  out.infonce = total / rounds;
  return out;
}

}  // namespace fairlab::checks
