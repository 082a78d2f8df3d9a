#pragma once

// Cross- and self-reconstruction via locally linear transformations.
//
// cross: each row of FX picks its K most cosine-similar rows of FY, gets LLE
// weights against them, and the same weights combine the matching rows of Y.
// Row i of the rebuilt cloud therefore lines up with source index i.

#include <optional>

#include "lte/lle.hpp"
#include "lte/neighbors.hpp"
#include "lte/tensor.hpp"

namespace lte {

struct ReconConfig {
  std::size_t k = 10;
  double gamma = kDefaultGamma;

  void validate() const {
    if (k < 1) throw Error("recon.k must be >= 1");
    if (!(gamma >= 0.0)) throw Error("recon.gamma must be >= 0");
  }
};

struct ReconResult {
  Tensor rebuilt_cloud;      // [N, 3]
  Tensor rebuilt_embedding;  // [N, D]
  ReconWeights weights;

  const NeighborTable& table() const { return weights.neighbors; }
};

// Combines neighbor rows of `values` ([M, C]) with weights [N, K] -> [N, C].
inline Tensor weighted_neighbor_sum(const Tensor& weights, const Tensor& values, const NeighborTable& table) {
  Tensor blocks = gather_neighbors(values, table);  // [N, K, C]
  return sum(reshape(weights, {table.rows, table.k, 1}) * blocks, 1);
}

// Shared machinery given a fixed neighbor table (rows of fx -> rows of fy).
inline ReconResult reconstruct_with_table(const Tensor& fx, const Tensor& fy, const Tensor& coords,
                                          const NeighborTable& table, double gamma) {
  if (fx.dim() != 2 || fy.dim() != 2 || fx.size(1) != fy.size(1)) {
    throw Error("reconstruct: embedding mismatch " + shape_str(fx.shape()) + " vs " + shape_str(fy.shape()));
  }
  if (coords.dim() != 2 || coords.size(0) != fy.size(0)) {
    throw Error("reconstruct: coordinates " + shape_str(coords.shape()) + " do not match embedding " +
                shape_str(fy.shape()));
  }
  ReconWeights w = lle_weights(fx, fy, table, gamma);
  Tensor emb = weighted_neighbor_sum(w.weights, fy, table);
  Tensor cloud = weighted_neighbor_sum(w.weights, coords, table);
  return {std::move(cloud), std::move(emb), std::move(w)};
}

inline ReconResult cross_reconstruct(const Tensor& fx, const Tensor& fy, const Tensor& y, std::size_t k, double gamma,
                                     const NeighborTable* fixed_table = nullptr) {
  if (fixed_table) return reconstruct_with_table(fx, fy, y, *fixed_table, gamma);
  NeighborTable table = knn_cosine_cross(fx.detach(), fy.detach(), k);
  return reconstruct_with_table(fx, fy, y, table, gamma);
}

// Self path: neighbors come from the same embedding with the point itself excluded.
inline ReconResult self_reconstruct(const Tensor& f, const Tensor& c, std::size_t k, double gamma,
                                    const NeighborTable* fixed_table = nullptr) {
  if (fixed_table) return reconstruct_with_table(f, f, c, *fixed_table, gamma);
  NeighborTable table = knn_cosine(f.detach(), f.detach(), k, true);
  return reconstruct_with_table(f, f, c, table, gamma);
}

}  // namespace lte
