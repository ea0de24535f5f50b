#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance runner. Nothing here calls the routine it is checking.

#include <cstdint>
#include <functional>
#include <string>
#include <span>
#include <vector>

#include "fairlab/nn.hpp"

namespace fairlab::oracle {

// Central differences of f with respect to every entry of x (x is restored).
std::vector<double> numeric_gradient(const std::function<double()>& f, std::span<double> x,
                                     double h = 1e-6);

// ||a - n|| / max(||a|| + ||n||, floor)
double relative_error(std::span<const double> analytic, std::span<const double> numeric,
                      double floor = 1e-10);

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0);

// Recall and NDCG of one ranked list; `ranked` already excludes masked items.
struct ListMetrics {
  double recall;
  double ndcg;
};
ListMetrics list_metrics(std::span<const std::uint32_t> ranked,
                         std::span<const std::uint32_t> relevant, std::size_t k);

// Mann-Whitney pair counting with half credit for ties.
double pairwise_auc(std::span<const double> scores, std::span<const int> labels);

// P(majority of n independent voters correct), n odd.
double binomial_majority(std::size_t n, double p);

// Iterative deletion on explicit sets; returns surviving (user, item) pairs
// under the original indices.
std::vector<std::pair<std::uint32_t, std::uint32_t>> k_core(
    std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs, std::size_t k);

// All j != i whose distance is <= the k-th smallest distance from i.
std::vector<std::vector<std::size_t>> knn_with_ties(const Matrix& points, std::size_t k);

}  // namespace fairlab::oracle

namespace fairlab::oracle {

struct VerbalizerCase {
  std::string expected;  // label name or "abstain"
  std::string text;
};
// label<TAB>text lines; '#' starts a comment line.
std::vector<VerbalizerCase> read_verbalizer_cases(const std::string& path);

// Two long-form reference responses: an annotator concluding male and a meta
// summarizer concluding female.
extern const char* const kAnnotatorExample;
extern const char* const kSummarizerExample;

}  // namespace fairlab::oracle
