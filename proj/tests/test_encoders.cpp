#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "fairlab/encoders.hpp"
#include "fairlab/errors.hpp"
#include "fairlab/eval.hpp"
#include "fairlab/lfsa_io.hpp"
#include "oracles.hpp"

using namespace fairlab;

namespace {

EmbeddingTables random_tables(std::size_t m, std::size_t n, std::size_t d, std::uint64_t seed) {
  EmbeddingTables t(m, n, d);
  t.init_normal(seed, 0.7);
  return t;
}

}  // namespace

TEST_SUITE("encoders") {
  TEST_CASE("score is the inner product") {
    auto t = random_tables(2, 3, 4, 1);
    double want = 0.0;
    for (std::size_t k = 0; k < 4; ++k) want += t.user(1)[k] * t.item(2)[k];
    CHECK(score(t, 1, 2) == doctest::Approx(want).epsilon(1e-14));
    CHECK_THROWS_AS(score(t, 2, 0), ArgumentError);
    CHECK_THROWS_AS(score(t, 0, 3), ArgumentError);
  }

  TEST_CASE("bpr loss value and gradients") {
    auto t = random_tables(3, 5, 4, 2);
    const std::vector<Triplet> batch = {{0, 1, 2}, {1, 3, 0}, {2, 4, 1}, {0, 0, 3}};
    double want = 0.0;
    for (const auto& tr : batch) {
      const double x = score(t, tr.user, tr.pos) - score(t, tr.user, tr.neg);
      want += std::log1p(std::exp(-x));
    }
    want /= static_cast<double>(batch.size());
    t.zero_grad();
    CHECK(bpr_loss(t, batch, true) == doctest::Approx(want).epsilon(1e-12));
    const auto f = [&] { return bpr_loss(t, batch, false); };
    CHECK(oracle::relative_error(t.users().grad,
                                 oracle::numeric_gradient(f, t.users().value)) < 1e-7);
    CHECK(oracle::relative_error(t.items().grad,
                                 oracle::numeric_gradient(f, t.items().value)) < 1e-7);
  }

  TEST_CASE("bpr with encoded user vectors") {
    auto t = random_tables(2, 4, 3, 3);
    Rng rng(4);
    auto users = oracle::random_matrix(2, 3, rng);
    const std::vector<Triplet> batch = {{0, 1, 2}, {1, 3, 0}};
    Matrix grad(2, 3);
    t.zero_grad();
    bpr_loss(users, t, batch, &grad, &t);
    const auto f = [&] { return bpr_loss(users, t, batch, nullptr, nullptr); };
    CHECK(oracle::relative_error(grad.data(), oracle::numeric_gradient(f, users.data())) < 1e-7);
    CHECK(oracle::relative_error(t.items().grad,
                                 oracle::numeric_gradient(f, t.items().value)) < 1e-7);
  }

  TEST_CASE("negative sampling avoids the whole history") {
    SyntheticSpec spec;
    spec.user_count = 40;
    spec.item_count = 30;
    spec.interactions_per_user = 25;
    const auto ds = split_per_user(generate_synthetic(spec).first, {}, 0);
    Rng rng(9);
    for (std::size_t u = 0; u < ds.user_count(); ++u) {
      for (int r = 0; r < 20; ++r) CHECK_FALSE(ds.has_interaction(u, sample_negative(ds, u, rng)));
    }
    std::vector<Interaction> rows = {{0, 0}, {0, 1}};
    const InteractionDataset full(1, 2, rows);
    CHECK_THROWS_AS(sample_negative(full, 0, rng), SamplingError);
  }

  TEST_CASE("pretraining learns planted structure") {
    SyntheticSpec spec;
    spec.user_count = 300;
    spec.item_count = 200;
    spec.interactions_per_user = 30;
    spec.preference_mix = 0.9;
    spec.popularity_skew = 1.0;
    const auto ds = split_per_user(generate_synthetic(spec).first, {}, 0);
    BprConfig config;
    config.max_epochs = 40;
    config.patience = 5;
    config.batch_size = 512;
    config.lr = 1e-2;
    const auto cf = pretrain_cf(ds, 16, config);
    CHECK(cf.tables.all_finite());
    CHECK(cf.loss_curve.front() > cf.loss_curve.back());
    // Random ranking hits 20 of ~170 candidates.
    const auto rep = evaluate_ranking(cf.tables.user_matrix(), cf.tables.item_matrix(), ds, 20);
    CHECK(rep.recall > 0.25);
    const auto again = pretrain_cf(ds, 16, config);
    CHECK(again.tables == cf.tables);
  }

  TEST_CASE("tables round trip through LFSA at float precision") {
    auto t = random_tables(5, 7, 3, 8);
    const auto dir = std::filesystem::temp_directory_path() / "fairlab_tests" / "tables";
    save_tables(dir, t, 3, 0.25);
    const auto back = load_tables(dir);
    round_to_float(t.users().value);
    round_to_float(t.items().value);
    CHECK(back.users().value == t.users().value);
    CHECK(back.items().value == t.items().value);
  }
}
