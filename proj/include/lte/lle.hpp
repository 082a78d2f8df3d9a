#pragma once

// Locally linear reconstruction weights.
//
// For a query f_i with neighbors eta_1..eta_K the weights minimize
//   |f_i - sum_l w_l eta_l|^2 + gamma |w|^2   subject to  sum_l w_l = 1,
// whose solution is w = (G + gamma I)^{-1} 1 / (1^T (G + gamma I)^{-1} 1) with
// G[l][m] = <f_i - eta_l, f_i - eta_m>. Everything here is differentiable
// through the tape except the neighbor selection, whose indices are constants.

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "lte/neighbors.hpp"
#include "lte/pointcloud.hpp"
#include "lte/tensor.hpp"

namespace lte {

constexpr double kDefaultGamma = 1.0;

struct ReconWeights {
  NeighborTable neighbors;
  Tensor weights;  // [N, K]; each row sums to one

  double weight(std::size_t i, std::size_t l) const { return weights[i * neighbors.k + l]; }
};

// Stacked K x K Gram matrices, shape [N, K, K].
struct GramStack {
  Tensor mats;
};

// Blocks of neighbor features, shape [N, K, D], gathered from `source` rows.
inline Tensor gather_neighbors(const Tensor& source, const NeighborTable& table) {
  if (source.dim() != 2) throw Error("gather_neighbors: expected 2-d source, got " + shape_str(source.shape()));
  Tensor flat = gather_rows(source, table.indices);
  return reshape(flat, {table.rows, table.k, source.size(1)});
}

inline GramStack gram_stack(const Tensor& query, const Tensor& blocks) {
  if (query.dim() != 2 || blocks.dim() != 3 || blocks.size(0) != query.size(0) || blocks.size(2) != query.size(1)) {
    throw Error("gram_stack: dimension mismatch " + shape_str(query.shape()) + " vs " + shape_str(blocks.shape()));
  }
  const std::size_t n = query.size(0), d = query.size(1);
  Tensor diff = reshape(query, {n, 1, d}) - blocks;  // [N, K, D]
  return {matmul(diff, transpose(diff))};
}

namespace detail {

// Minimum-norm solution of the Lagrangian system [2G 1; 1^T 0][w; mu] = [0; 1].
// Equals the closed form when G is invertible and its gamma -> 0+ limit otherwise.
inline std::vector<double> min_norm_affine_weights(const double* g, std::size_t k) {
  Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(static_cast<long>(k + 1), static_cast<long>(k + 1));
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = 0; b < k; ++b) kkt(static_cast<long>(a), static_cast<long>(b)) = 2.0 * g[a * k + b];
    kkt(static_cast<long>(a), static_cast<long>(k)) = 1.0;
    kkt(static_cast<long>(k), static_cast<long>(a)) = 1.0;
  }
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<long>(k + 1));
  rhs(static_cast<long>(k)) = 1.0;
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(kkt);
  cod.setThreshold(1e-12);
  Eigen::VectorXd sol = cod.solve(rhs);
  std::vector<double> w(k);
  double s = 0.0;
  for (std::size_t a = 0; a < k; ++a) s += (w[a] = sol(static_cast<long>(a)));
  for (auto& v : w) v /= s;
  return w;
}

}  // namespace detail

// Closed-form weights for every Gram matrix; returns [N, K].
inline Tensor solve_weights(const GramStack& grams, double gamma) {
  const Tensor& G = grams.mats;
  if (G.dim() != 3 || G.size(1) != G.size(2)) throw Error("solve_weights: expected [N,K,K], got " + shape_str(G.shape()));
  if (!(gamma >= 0.0)) throw Error("solve_weights: gamma must be >= 0");
  const std::size_t n = G.size(0), k = G.size(1);
  if (k == 1) return Tensor::ones({n, 1});
  if (gamma == 0.0 && !G.tracked()) {
    // Unregularized weights of possibly singular G: the gamma -> 0+ limit.
    std::vector<double> w(n * k);
    const auto& gv = G.values();
    for (std::size_t i = 0; i < n; ++i) {
      auto row = detail::min_norm_affine_weights(gv.data() + i * k * k, k);
      std::copy(row.begin(), row.end(), w.begin() + static_cast<long>(i * k));
    }
    return Tensor({n, k}, std::move(w));
  }
  Tensor A = gamma > 0.0 ? G + scale(Tensor::eye(k), gamma) : G;
  Tensor z;
  try {
    z = linear_solve(A, Tensor::ones({n, k, 1}));
  } catch (const SolveError& e) {
    throw Error("solve_weights: factorization failed at point " + std::to_string(e.index));
  }
  Tensor w = z / sum(z, 1, true);  // [N, K, 1]
  return reshape(w, {n, k});
}

// Weights reconstructing each row of `query` from its `table` neighbors in `source`.
inline ReconWeights lle_weights(const Tensor& query, const Tensor& source, const NeighborTable& table, double gamma) {
  if (table.rows != query.size(0)) throw Error("lle_weights: table rows do not match query rows");
  Tensor blocks = gather_neighbors(source, table);
  return {table, solve_weights(gram_stack(query, blocks), gamma)};
}

// Classic self weights on coordinates: Euclidean neighbors, self excluded.
inline ReconWeights lle_self_weights(const PointCloud& cloud, std::size_t k, double gamma) {
  Tensor x = cloud.to_tensor();
  return lle_weights(x, x, knn_euclidean(x, k, true), gamma);
}

// Self weights in an embedding: cosine neighbors, self excluded.
inline ReconWeights lle_self_weights(const Tensor& embedding, std::size_t k, double gamma) {
  return lle_weights(embedding, embedding, knn_cosine(embedding.detach(), embedding.detach(), k, true), gamma);
}

}  // namespace lte
