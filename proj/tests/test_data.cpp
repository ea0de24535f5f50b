#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "fairlab/data.hpp"
#include "fairlab/errors.hpp"
#include "fairlab/rng.hpp"
#include "oracles.hpp"

using namespace fairlab;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "fairlab_tests";
  fs::create_directories(dir);
  return dir / name;
}

fs::path write_text(const std::string& name, const std::string& text) {
  const auto path = scratch(name);
  std::ofstream(path) << text;
  return path;
}

InteractionDataset from_pairs(std::size_t m, std::size_t n,
                              const std::vector<std::pair<std::uint32_t, std::uint32_t>>& pairs) {
  std::vector<Interaction> rows;
  for (auto [u, v] : pairs) rows.push_back({u, v, SplitTag::kTrain});
  return InteractionDataset(m, n, rows);
}

}  // namespace

TEST_SUITE("data") {
  TEST_CASE("single movielens row") {
    const auto ds = load_interactions(write_text("one.dat", "1::7::5::964982703\n"),
                                      InteractionFormat::kMovielensDat);
    CHECK(ds.user_count() == 1);
    CHECK(ds.item_count() == 1);
    REQUIRE(ds.size() == 1);
    CHECK(ds.interactions()[0] == Interaction{0, 0, SplitTag::kTrain});
    CHECK(ds.user_id(0) == "1");
    CHECK(ds.item_id(0) == "7");
  }

  TEST_CASE("ratings of zero are not positive feedback") {
    const auto ds = load_interactions(write_text("zero.dat", "5::1::0::1\n5::2::4::2\n"),
                                      InteractionFormat::kMovielensDat);
    REQUIRE(ds.size() == 1);
    CHECK(ds.item_id(ds.interactions()[0].item) == "2");
  }

  TEST_CASE("tsv rows with and without ratings") {
    const auto ds = load_interactions(write_text("rows.tsv", "a\tx\nb\ty\t3\na\ty\t1\t10\n"),
                                      InteractionFormat::kTsv);
    CHECK(ds.user_count() == 2);
    CHECK(ds.item_count() == 2);
    CHECK(ds.size() == 3);
  }

  TEST_CASE("malformed rows report their line") {
    const auto path = write_text("bad.dat", "1::2::5::1\n1::oops\n1::3::x::1\n");
    try {
      load_interactions(path, InteractionFormat::kMovielensDat);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 3);
    }
    CHECK_THROWS_AS(load_interactions(write_text("three.dat", "1\n"),
                                      InteractionFormat::kMovielensDat),
                    ParseError);
    CHECK_THROWS_AS(load_interactions(write_text("empty.dat", "\n\n"),
                                      InteractionFormat::kMovielensDat),
                    EmptyDatasetError);
  }

  TEST_CASE("dataset rejects duplicates and out of range ids") {
    CHECK_THROWS_AS(from_pairs(1, 2, {{0, 1}, {0, 1}}), ArgumentError);
    CHECK_THROWS_AS(from_pairs(1, 2, {{0, 2}}), ArgumentError);
  }

  TEST_CASE("k-core star graph cascades to empty") {
    std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
    for (std::uint32_t v = 0; v < 10; ++v) pairs.emplace_back(0, v);
    CHECK_THROWS_AS(core_filter(from_pairs(1, 10, pairs), 10), EmptyDatasetError);
  }

  TEST_CASE("k-core keeps a complete 12x12 graph") {
    std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
    for (std::uint32_t u = 0; u < 12; ++u) {
      for (std::uint32_t v = 0; v < 12; ++v) pairs.emplace_back(u, v);
    }
    const auto ds = from_pairs(12, 12, pairs);
    const auto out = core_filter(ds, 10);
    CHECK(out.user_count() == 12);
    CHECK(out.item_count() == 12);
    CHECK(out.interactions() == ds.interactions());
  }

  TEST_CASE("k-core matches iterative deletion on random graphs") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Rng rng(seed);
      std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
      for (std::uint32_t u = 0; u < 50; ++u) {
        const double density = 0.05 + 0.4 * rng.uniform();
        for (std::uint32_t v = 0; v < 50; ++v) {
          if (rng.uniform() < density * (0.3 + v / 50.0)) pairs.emplace_back(u, v);
        }
      }
      const auto ds = from_pairs(50, 50, pairs);
      const auto expected = oracle::k_core(pairs, 10);
      if (expected.empty()) {
        CHECK_THROWS_AS(core_filter(ds, 10), EmptyDatasetError);
        continue;
      }
      const auto out = core_filter(ds, 10);
      std::set<std::pair<std::string, std::string>> got;
      for (const auto& r : out.interactions()) got.emplace(out.user_id(r.user), out.item_id(r.item));
      std::set<std::pair<std::string, std::string>> want;
      for (auto [u, v] : expected) want.emplace(std::to_string(u), std::to_string(v));
      CHECK(got == want);
      for (std::size_t u = 0; u < out.user_count(); ++u) CHECK(out.user_degree(u) >= 10);
    }
  }

  TEST_CASE("split sizes follow the rounding rule") {
    const SplitRatios r;
    for (std::size_t n = 3; n <= 60; ++n) {
      CAPTURE(n);
      const auto s = split_sizes(n, r);
      const std::size_t test = std::max<std::size_t>(1, n / 10);
      CHECK(s.test == test);
      CHECK(s.val == test);
      CHECK(s.train == n - 2 * test);
    }
    const auto ten = split_sizes(10, r);
    CHECK((ten.train == 8 && ten.val == 1 && ten.test == 1));
    const auto seven = split_sizes(7, r);
    CHECK((seven.train == 5 && seven.val == 1 && seven.test == 1));
  }

  TEST_CASE("per-user split is seeded and validated") {
    SyntheticSpec spec;
    spec.user_count = 30;
    spec.item_count = 60;
    spec.interactions_per_user = 10;
    const auto ds = generate_synthetic(spec).first;
    const auto a = split_per_user(ds, {}, 4);
    const auto b = split_per_user(ds, {}, 4);
    const auto c = split_per_user(ds, {}, 5);
    CHECK(a.interactions() == b.interactions());
    CHECK(a.interactions() != c.interactions());
    for (std::size_t u = 0; u < a.user_count(); ++u) {
      CHECK(user_history(a, u, SplitTag::kTrain).size() == 8);
      CHECK(user_history(a, u, "val").size() == 1);
      CHECK(user_history(a, u, SplitTag::kTest).size() == 1);
    }
    CHECK_THROWS_AS(user_history(a, 0, "dev"), ArgumentError);
    const auto tiny = from_pairs(2, 3, {{0, 0}, {0, 1}, {0, 2}, {1, 0}, {1, 1}});
    try {
      split_per_user(tiny, {}, 0);
      FAIL("expected a split error");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("user 1") != std::string::npos);
    }
  }

  TEST_CASE("user history in insertion order") {
    std::vector<Interaction> rows = {{0, 3}, {0, 9}, {0, 4, SplitTag::kVal}, {1, 2}};
    const InteractionDataset ds(2, 10, rows);
    CHECK(user_history(ds, 0, SplitTag::kTrain) == std::vector<std::uint32_t>{3, 9});
    CHECK(user_history(ds, 1, SplitTag::kTest).empty());
    CHECK(ds.has_interaction(0, 4));
    CHECK_FALSE(ds.has_interaction(1, 4));
  }

  TEST_CASE("synthetic generator") {
    SyntheticSpec spec;
    spec.user_count = 200;
    spec.item_count = 100;
    spec.interactions_per_user = 20;
    spec.preference_mix = 1.0;
    const auto [ds, labels] = generate_synthetic(spec);
    CHECK(labels.visibility == LabelVisibility::kSimulation);
    for (const auto& r : ds.interactions()) {
      CHECK(synthetic_cluster_of(spec, r.item) == static_cast<std::size_t>(labels.labels[r.user]));
    }
    CHECK(ds.item_title(0) == "cluster0_item0");
    CHECK(ds.item_title(50) == "cluster1_item0");

    const auto again = generate_synthetic(spec);
    CHECK(again.first.interactions() == ds.interactions());
    CHECK(again.second.labels == labels.labels);

    spec.interactions_per_user = 101;
    CHECK_THROWS_AS(generate_synthetic(spec), ArgumentError);
    spec.interactions_per_user = 20;
    spec.preference_mix = 0.5;
    CHECK_THROWS_AS(generate_synthetic(spec), ArgumentError);
  }

  TEST_CASE("in-cluster fraction within three standard errors") {
    for (double mix : {0.6, 0.8}) {
      SyntheticSpec spec;
      spec.user_count = 500;
      spec.item_count = 2000;
      spec.interactions_per_user = 20;
      spec.preference_mix = mix;
      spec.seed = 11;
      const auto [ds, labels] = generate_synthetic(spec);
      double own = 0.0;
      for (const auto& r : ds.interactions()) {
        own += synthetic_cluster_of(spec, r.item) == static_cast<std::size_t>(labels.labels[r.user]);
      }
      const double n = static_cast<double>(ds.size());
      const double se = std::sqrt(mix * (1.0 - mix) / n);
      CHECK(std::abs(own / n - mix) < 3.0 * se);
    }
  }

  TEST_CASE("split and label files round trip") {
    SyntheticSpec spec;
    spec.user_count = 20;
    spec.item_count = 40;
    spec.interactions_per_user = 10;
    auto [raw, labels] = generate_synthetic(spec);
    const auto ds = split_per_user(raw, {}, 1);
    write_split_file(ds, scratch("split.tsv"));
    write_labels(ds, labels, scratch("labels.tsv"));
    const auto back = read_split_file(scratch("split.tsv"));
    REQUIRE(back.size() == ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const auto& x = ds.interactions()[i];
      const auto& y = back.interactions()[i];
      CHECK(back.user_id(y.user) == ds.user_id(x.user));
      CHECK(back.item_id(y.item) == ds.item_id(x.item));
      CHECK(y.tag == x.tag);
    }
    CHECK(back.user_ids() == ds.user_ids());
    const auto lab = read_labels(back, scratch("labels.tsv"), LabelVisibility::kTestOnly);
    CHECK(lab.labels == labels.labels);
    CHECK(lab.visibility == LabelVisibility::kTestOnly);
  }

  TEST_CASE("metadata sidecar supplies titles") {
    const auto ds = load_interactions(write_text("meta.tsv", "u1\t10\nu1\t20\n"),
                                      InteractionFormat::kTsv);
    const auto titled = attach_metadata(ds, write_text("titles.tsv", "10\tHeat\n20\tAlien\n"));
    CHECK(titled.item_title(0) == "Heat");
    CHECK(titled.item_title(1) == "Alien");
    CHECK(ds.item_title(1) == "20");
  }

  TEST_CASE("user sampling keeps a seeded subset") {
    std::string text;
    for (int u = 0; u < 100; ++u) text += std::to_string(u) + "\t1\n";
    const auto path = write_text("sample.tsv", text);
    const auto a = load_interactions(path, InteractionFormat::kTsv, {0.25, 3});
    const auto b = load_interactions(path, InteractionFormat::kTsv, {0.25, 3});
    CHECK(a.user_count() == 25);
    CHECK(a.user_ids() == b.user_ids());
  }
}
