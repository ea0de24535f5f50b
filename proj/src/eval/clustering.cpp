#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "fairlab/errors.hpp"
#include "fairlab/eval.hpp"
#include "fairlab/kernels.hpp"

namespace fairlab {
namespace {

constexpr std::size_t kRestarts = 10;
constexpr std::size_t kMaxIter = 300;

std::size_t distinct_rows(const Matrix& x) {
  std::vector<std::size_t> order(x.rows());
  std::iota(order.begin(), order.end(), 0);
  const auto less = [&](std::size_t a, std::size_t b) {
    return std::ranges::lexicographical_compare(x.row(a), x.row(b));
  };
  std::ranges::sort(order, less);
  std::size_t distinct = order.empty() ? 0 : 1;
  for (std::size_t i = 1; i < order.size(); ++i) {
    if (!std::ranges::equal(x.row(order[i - 1]), x.row(order[i]))) ++distinct;
  }
  return distinct;
}

// Renumbers cluster ids by first appearance so equal partitions compare equal.
std::vector<int> canonical(std::vector<int> labels) {
  std::vector<int> remap;
  for (int& l : labels) {
    auto it = std::ranges::find(remap, l);
    if (it == remap.end()) {
      remap.push_back(l);
      it = remap.end() - 1;
    }
    l = static_cast<int>(it - remap.begin());
  }
  return labels;
}

struct KMeansRun {
  std::vector<int> labels;
  Matrix centers;
  double inertia = std::numeric_limits<double>::infinity();
};

KMeansRun kmeans_once(const Matrix& x, std::size_t k, Rng& rng) {
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  KMeansRun run;
  run.centers = Matrix(k, d);
  // k-means++ seeding.
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  std::size_t first = rng.uniform_index(n);
  std::ranges::copy(x.row(first), run.centers.row(0).begin());
  for (std::size_t c = 1; c < k; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i],
                            kernels::squared_distance(x.row(i), run.centers.row(c - 1)));
    }
    const std::size_t pick = rng.categorical(nearest);
    std::ranges::copy(x.row(pick), run.centers.row(c).begin());
  }
  run.labels.assign(n, -1);
  std::vector<std::size_t> sizes(k);
  for (std::size_t iter = 0; iter < kMaxIter; ++iter) {
    bool changed = false;
    run.inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      int arg = 0;
      for (std::size_t c = 0; c < k; ++c) {
        const double dist = kernels::squared_distance(x.row(i), run.centers.row(c));
        if (dist < best) {
          best = dist;
          arg = static_cast<int>(c);
        }
      }
      run.inertia += best;
      if (run.labels[i] != arg) {
        run.labels[i] = arg;
        changed = true;
      }
    }
    if (!changed) break;
    Matrix sums(k, d);
    std::ranges::fill(sizes, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = static_cast<std::size_t>(run.labels[i]);
      kernels::axpy(1.0, x.row(i), sums.row(c));
      ++sizes[c];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (sizes[c] == 0) {
        // Re-seed an empty cluster at the point farthest from its center.
        std::size_t far = 0;
        double far_dist = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double dist = kernels::squared_distance(
              x.row(i), run.centers.row(static_cast<std::size_t>(run.labels[i])));
          if (dist > far_dist) {
            far_dist = dist;
            far = i;
          }
        }
        std::ranges::copy(x.row(far), run.centers.row(c).begin());
        continue;
      }
      for (std::size_t j = 0; j < d; ++j) {
        run.centers(c, j) = sums(c, j) / static_cast<double>(sizes[c]);
      }
    }
  }
  return run;
}

KMeansRun kmeans(const Matrix& x, std::size_t k, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "kmeans"));
  KMeansRun best;
  for (std::size_t r = 0; r < kRestarts; ++r) {
    auto run = kmeans_once(x, k, rng);
    if (run.inertia < best.inertia) best = std::move(run);
  }
  return best;
}

std::vector<int> gmm(const Matrix& x, std::size_t k, std::uint64_t seed) {
  using Eigen::MatrixXd;
  using Eigen::VectorXd;
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  const double reg = 1e-6;
  const auto init = kmeans(x, k, seed);
  MatrixXd data(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) data(i, j) = x(i, j);
  }
  MatrixXd resp = MatrixXd::Zero(n, k);
  for (std::size_t i = 0; i < n; ++i) resp(i, init.labels[i]) = 1.0;

  std::vector<VectorXd> means(k);
  std::vector<MatrixXd> chol(k);
  std::vector<double> log_det(k);
  VectorXd log_weights(k);
  double previous = -std::numeric_limits<double>::infinity();
  const double log2pi = std::log(2.0 * std::numbers::pi);
  for (std::size_t iter = 0; iter < kMaxIter; ++iter) {
    // M step.
    for (std::size_t c = 0; c < k; ++c) {
      const double nk = resp.col(c).sum() + 10 * std::numeric_limits<double>::epsilon();
      log_weights(c) = std::log(nk / static_cast<double>(n));
      means[c] = (data.transpose() * resp.col(c)) / nk;
      const MatrixXd centered = data.rowwise() - means[c].transpose();
      MatrixXd cov = (centered.transpose() * resp.col(c).asDiagonal() * centered) / nk;
      cov.diagonal().array() += reg;
      Eigen::LLT<MatrixXd> llt(cov);
      if (llt.info() != Eigen::Success) {
        throw ClusteringError("GMM covariance is not positive definite");
      }
      chol[c] = llt.matrixL();
      log_det[c] = 2.0 * chol[c].diagonal().array().log().sum();
    }
    // E step.
    MatrixXd log_prob(n, k);
    for (std::size_t c = 0; c < k; ++c) {
      const MatrixXd centered = (data.rowwise() - means[c].transpose()).transpose();
      const MatrixXd solved = chol[c].triangularView<Eigen::Lower>().solve(centered);
      const VectorXd maha = solved.colwise().squaredNorm().transpose();
      log_prob.col(c) = (-0.5 * (static_cast<double>(d) * log2pi + log_det[c]) +
                         log_weights(c)) -
                        0.5 * maha.array();
    }
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double m = log_prob.row(i).maxCoeff();
      const double lse = m + std::log((log_prob.row(i).array() - m).exp().sum());
      total += lse;
      resp.row(i) = (log_prob.row(i).array() - lse).exp();
    }
    const double mean_ll = total / static_cast<double>(n);
    if (std::abs(mean_ll - previous) < 1e-6) break;
    previous = mean_ll;
  }
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::Index arg = 0;
    resp.row(i).maxCoeff(&arg);
    labels[i] = static_cast<int>(arg);
  }
  return labels;
}

// Ward linkage by the nearest-neighbour chain on centroids; merges are then
// replayed in distance order and stopped at k clusters.
std::vector<int> ward(const Matrix& x, std::size_t k) {
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  std::vector<std::vector<double>> centroid(n);
  std::vector<double> size(n, 1.0);
  std::vector<char> active(n, 1);
  for (std::size_t i = 0; i < n; ++i) centroid[i].assign(x.row(i).begin(), x.row(i).end());
  const auto cost = [&](std::size_t a, std::size_t b) {
    return size[a] * size[b] / (size[a] + size[b]) *
           kernels::squared_distance(centroid[a], centroid[b]);
  };
  struct Merge {
    double height;
    std::size_t a;
    std::size_t b;
  };
  std::vector<Merge> merges;
  std::vector<std::size_t> chain;
  std::size_t remaining = n;
  while (remaining > 1) {
    if (chain.empty()) {
      for (std::size_t i = 0; i < n; ++i) {
        if (active[i] != 0) {
          chain.push_back(i);
          break;
        }
      }
    }
    const std::size_t top = chain.back();
    const std::size_t prev = chain.size() >= 2 ? chain[chain.size() - 2] : n;
    std::size_t best = n;
    double best_cost = std::numeric_limits<double>::infinity();
    if (prev != n) {
      best = prev;
      best_cost = cost(top, prev);
    }
    for (std::size_t j = 0; j < n; ++j) {
      if (active[j] == 0 || j == top) continue;
      const double c = cost(top, j);
      if (c < best_cost) {
        best_cost = c;
        best = j;
      }
    }
    if (best == prev) {
      chain.pop_back();
      chain.pop_back();
      const std::size_t a = std::min(top, prev);
      const std::size_t b = std::max(top, prev);
      merges.push_back({best_cost, a, b});
      const double total = size[a] + size[b];
      for (std::size_t j = 0; j < d; ++j) {
        centroid[a][j] = (size[a] * centroid[a][j] + size[b] * centroid[b][j]) / total;
      }
      size[a] = total;
      active[b] = 0;
      --remaining;
    } else {
      chain.push_back(best);
    }
  }
  std::ranges::stable_sort(merges, {}, &Merge::height);
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  const auto find = [&](std::size_t i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  };
  // Cluster ids from the NN-chain refer to the surviving lower index, so the
  // merges replay as unions of those representatives.
  for (std::size_t m = 0; m + k < n; ++m) {
    const auto ra = find(merges[m].a);
    const auto rb = find(merges[m].b);
    parent[std::max(ra, rb)] = std::min(ra, rb);
  }
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(find(i));
  return labels;
}

}  // namespace

ClusterMethod parse_cluster_method(std::string_view name) {
  if (name == "kmeans") return ClusterMethod::kKMeans;
  if (name == "gmm") return ClusterMethod::kGmm;
  if (name == "hierarchical") return ClusterMethod::kHierarchical;
  throw ArgumentError("unknown clustering method '" + std::string(name) + "'");
}

std::string_view cluster_method_name(ClusterMethod method) {
  switch (method) {
    case ClusterMethod::kKMeans:
      return "kmeans";
    case ClusterMethod::kGmm:
      return "gmm";
    case ClusterMethod::kHierarchical:
      return "hierarchical";
  }
  return "kmeans";
}

std::vector<int> cluster_labels(const Matrix& embeddings, ClusterMethod method,
                                std::size_t arity, std::uint64_t seed) {
  if (arity < 2) throw ArgumentError("clustering needs arity >= 2");
  if (distinct_rows(embeddings) < arity) {
    throw ClusteringError("fewer distinct embeddings than the " + std::to_string(arity) +
                          " requested clusters");
  }
  switch (method) {
    case ClusterMethod::kKMeans:
      return canonical(kmeans(embeddings, arity, seed).labels);
    case ClusterMethod::kGmm:
      return canonical(gmm(embeddings, arity, seed));
    case ClusterMethod::kHierarchical:
      return canonical(ward(embeddings, arity));
  }
  return {};
}

std::vector<int> random_labels(std::size_t user_count, std::size_t arity,
                               std::uint64_t seed) {
  Rng rng(derive_seed(seed, "random-labels"));
  std::vector<int> out(user_count);
  for (int& l : out) l = static_cast<int>(rng.uniform_index(arity));
  return out;
}

}  // namespace fairlab
