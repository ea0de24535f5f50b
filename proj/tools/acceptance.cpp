// Offline acceptance runner: one PASS/FAIL line per criterion, exit status 1
// if any fails. Runs in a scratch directory under the system temp dir.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "checks.hpp"
#include "fairlab/agents.hpp"
#include "fairlab/commands.hpp"
#include "fairlab/eval.hpp"
#include "fairlab/sensitive.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace fairlab;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "fairlab_acceptance" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::map<std::string, double> read_metrics(const fs::path& path) {
  std::map<std::string, double> out;
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() >= 5) out[f[2]] = std::stod(f[4]);
  }
  return out;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome gradients() {
  const std::vector<std::string> wanted = {"L_bpr", "L_cls", "L_sim", "L_fine", "L_ub", "L_lb"};
  double worst = 0.0;
  std::string worst_name;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    for (const auto& [name, err] : checks::gradient_errors(seed)) {
      if (std::ranges::find(wanted, name) == wanted.end()) continue;
      if (!(err <= worst)) {
        worst = err;
        worst_name = name;
      }
    }
  }
  return {worst < 1e-4, "max relative error " + fmt("%.2e", worst) + " (" + worst_name + ")"};
}

Outcome metric_oracles() {
  std::size_t cases = 0;
  std::size_t mismatches = 0;
  const std::vector<std::vector<std::uint32_t>> relevant_sets = {
      {0}, {4}, {0, 2}, {1, 3}, {1, 3, 4}, {0, 1, 2, 3}, {0, 1, 2, 3, 4}};
  for (const auto& relevant : relevant_sets) {
    std::vector<Interaction> rows = {{0, 5, SplitTag::kTrain}, {0, 6, SplitTag::kVal}};
    for (auto v : relevant) rows.push_back({0, v, SplitTag::kTest});
    const InteractionDataset ds(1, 7, rows);
    std::vector<std::uint32_t> order = {0, 1, 2, 3, 4};
    do {
      Matrix users(1, 1, 1.0), items(7, 1);
      items(5, 0) = items(6, 0) = 100.0;
      for (std::size_t r = 0; r < 5; ++r) items(order[r], 0) = 10.0 - static_cast<double>(r);
      for (std::size_t k = 1; k <= 5; ++k) {
        const auto got = evaluate_ranking(users, items, ds, k);
        const auto want = oracle::list_metrics(order, relevant, k);
        ++cases;
        if (std::abs(got.recall - want.recall) > 1e-12 || std::abs(got.ndcg - want.ndcg) > 1e-12) {
          ++mismatches;
        }
      }
    } while (std::next_permutation(order.begin(), order.end()));
  }
  // AUC on every labelled set of up to 8 points drawn from a coarse score grid.
  Rng rng(17);
  std::size_t auc_cases = 0;
  for (std::size_t n = 2; n <= 8; ++n) {
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<double> s(n);
      std::vector<int> y(n);
      for (std::size_t i = 0; i < n; ++i) {
        s[i] = static_cast<double>(rng.uniform_index(4));
        y[i] = static_cast<int>(rng.uniform_index(2));
      }
      y[0] = 0;
      y[1] = 1;
      ++auc_cases;
      if (std::abs(roc_auc(s, y) - oracle::pairwise_auc(s, y)) > 1e-12) ++mismatches;
    }
  }
  const std::vector<double> hand_s = {0.1, 0.4, 0.35, 0.8};
  const std::vector<int> hand_y = {0, 0, 1, 1};
  if (std::abs(roc_auc(hand_s, hand_y) - 0.75) > 1e-12) ++mismatches;
  return {mismatches == 0, std::to_string(cases) + " ranking and " + std::to_string(auc_cases + 1) +
                               " AUC cases, " + std::to_string(mismatches) + " mismatches"};
}

CommandContext context(const fs::path& out) {
  CommandContext ctx;
  ctx.out = out;
  ctx.config.backend = "simulated";
  ctx.config.eval.label_quality = false;
  return ctx;
}

Outcome confusion_recovery() {
  auto ctx = context(scratch("recovery"));
  auto& c = ctx.config;
  c.seed = 3;
  c.data.synthetic_users = 1000;
  c.data.preference_mix = 0.8;
  c.agents.n_personas = 4;
  c.agents.simulated_accuracy = {0.7, 0.8, 0.9, 0.95};
  validate(c);
  cmd_data(ctx);
  cmd_personas(ctx);
  cmd_annotate(ctx);
  cmd_summarize(ctx);
  cmd_train(ctx, TrainStage::kPretrain);
  cmd_train(ctx, TrainStage::kStage1);
  const auto model = load_sensitive(ctx.out / "checkpoints" / "stage1");
  const auto planted = simulated_confusions(c, 2);
  double worst = 0.0;
  std::string per;
  for (std::size_t i = 0; i < planted.size(); ++i) {
    const auto f = model.confusion(i);
    double err = 0.0;
    for (std::size_t j = 0; j < 2; ++j) {
      for (std::size_t k = 0; k < 2; ++k) err += std::abs(f(j, k) - planted[i][j][k]) / 4.0;
    }
    worst = std::max(worst, err);
    per += (i == 0 ? "" : " ") + fmt("%.4f", err);
  }
  return {worst < 0.05, "mean |F - F*| per annotator: " + per};
}

Outcome majority_arithmetic() {
  const std::size_t n = 10000;
  GroundTruthLabels truth{std::vector<int>(n), 2, LabelVisibility::kSimulation};
  Rng rng(5);
  for (auto& l : truth.labels) l = static_cast<int>(rng.uniform_index(2));
  const std::vector<std::vector<double>> row = {{0.85, 0.15}, {0.15, 0.85}};
  const std::vector<std::vector<std::vector<double>>> confusions(5, row);
  const auto recs = simulate_annotations(truth, confusions, AttributeSchema::gender(), 11);
  const auto q = label_quality("llm-mv", majority_vote(recs, n, 2), truth);
  const double want = oracle::binomial_majority(5, 0.85);
  return {std::abs(q.accuracy - want) <= 0.01,
          "accuracy " + fmt("%.4f", q.accuracy) + " vs binomial " + fmt("%.4f", want)};
}

Outcome mi_sanity() {
  const auto est = checks::gaussian_mi_estimates(7, 0.5);
  const double cap = std::min(0.1438 + 0.05, est.log_batch);
  return {est.club >= 0.1238 && est.infonce <= cap,
          "CLUB " + fmt("%.4f", est.club) + " (>= 0.1238), InfoNCE " + fmt("%.4f", est.infonce) +
              " (<= " + fmt("%.4f", cap) + ")"};
}

Outcome fairness_effect() {
  bool pass = true;
  std::string detail;
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    auto ctx = context(scratch("fairness_" + std::to_string(seed)));
    auto& c = ctx.config;
    c.seed = seed;
    c.data.synthetic_users = 2000;
    c.data.preference_mix = 0.8;
    c.data.popularity_skew = 1.0;
    c.agents.simulated_accuracy = {0.85};
    c.train.lambda_ub = 0.1;
    validate(c);
    cmd_pipeline(ctx);
    auto m = read_metrics(ctx.out / "metrics.csv");
    const double auc_u = m["user.attacker_auc"];
    const double auc_p = m["preference.attacker_auc"];
    const double rec_u = m["user.recall"];
    const double rec_p = m["preference.recall"];
    const bool ok = auc_u >= 0.75 && auc_p <= auc_u - 0.10 && rec_p >= 0.7 * rec_u;
    pass = pass && ok;
    detail += (detail.empty() ? "" : "; ") + std::string("seed ") + std::to_string(seed) +
              (ok ? "" : " FAIL") + ": AUC u " + fmt("%.3f", auc_u) + " p " + fmt("%.3f", auc_p) +
              ", recall ratio " + fmt("%.2f", rec_u > 0 ? rec_p / rec_u : 0.0);
  }
  return {pass, detail};
}

Outcome additivity() {
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    for (const auto& [name, err] : checks::additivity_errors(seed)) worst = std::max(worst, err);
  }
  return {worst < 1e-10, "max |composite - sum| " + fmt("%.2e", worst)};
}

Outcome determinism() {
  std::string first;
  for (const char* name : {"determinism_a", "determinism_b"}) {
    auto ctx = context(scratch(name));
    auto& c = ctx.config;
    c.seed = 9;
    c.data.synthetic_users = 300;
    c.data.synthetic_items = 150;
    c.train.d = 16;
    c.train.pretrain_epochs = 20;
    c.train.stage1_epochs = 5;
    c.train.stage2_epochs = 3;
    c.eval.label_quality = true;
    validate(c);
    cmd_pipeline(ctx);
    const auto text = slurp(ctx.out / "metrics.csv");
    if (first.empty()) {
      first = text;
    } else {
      return {!first.empty() && text == first,
              std::to_string(first.size()) + "-byte metrics.csv " +
                  (text == first ? "identical" : "differs")};
    }
  }
  return {false, "unreachable"};
}

Outcome verbalizer_fixtures() {
  const auto schema = AttributeSchema::gender();
  const bool refs = verbalize(oracle::kAnnotatorExample, schema) == 0 &&
                    verbalize(oracle::kSummarizerExample, schema) == 1;
  const auto cases = oracle::read_verbalizer_cases(FAIRLAB_FIXTURES "/verbalizer_cases.tsv");
  std::size_t ok = 0;
  for (const auto& c : cases) {
    const int got = verbalize(c.text, schema);
    const std::string name = got == kAbstain ? "abstain" : schema.names[static_cast<std::size_t>(got)];
    if (name == c.expected) ++ok;
  }
  return {refs && cases.size() == 20 && ok == cases.size(),
          std::string("reference examples ") + (refs ? "ok" : "wrong") + ", fixtures " +
              std::to_string(ok) + "/" + std::to_string(cases.size())};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient correctness", gradients},
      {"metric oracles", metric_oracles},
      {"planted confusion recovery", confusion_recovery},
      {"majority-vote arithmetic", majority_arithmetic},
      {"MI-bound sanity", mi_sanity},
      {"end-to-end fairness effect", fairness_effect},
      {"composite loss additivity", additivity},
      {"determinism", determinism},
      {"verbalizer fixtures", verbalizer_fixtures},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!o.pass) ++failed;
    std::printf("%s %zu %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", i + 1,
                criteria[i].first.c_str(), o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
