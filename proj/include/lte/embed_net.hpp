#pragma once

// Edge-convolution embedding network. Each layer builds a k-NN graph on its
// input features, maps every edge feature [h_i || h_j - h_i] through a shared
// affine map with leaky-ReLU, and max-pools over the neighbors. A final affine
// head produces D-dimensional embeddings.
//
// The shared map is stored as two blocks, W = [w_center | w_edge], so the edge
// response is evaluated as (w_center - w_edge) h_i + w_edge h_j + b without
// materializing the N*k edge features.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "lte/neighbors.hpp"
#include "lte/pointcloud.hpp"
#include "lte/tensor.hpp"

namespace lte {

constexpr double kLeakySlope = 0.2;

struct EmbedConfig {
  std::size_t k_graph = 10;
  std::vector<std::size_t> layer_dims{64, 64, 64};
  std::size_t out_dim = 64;
  std::uint64_t seed = 0;

  void validate() const {
    if (layer_dims.empty()) throw Error("embed.layer_dims must be nonempty");
    for (auto d : layer_dims)
      if (d == 0) throw Error("embed.layer_dims entries must be >= 1");
    if (out_dim < 1) throw Error("embed.out_dim must be >= 1");
    if (k_graph < 1) throw Error("embed.k_graph must be >= 1");
  }

  friend bool operator==(const EmbedConfig&, const EmbedConfig&) = default;
};

struct EmbedParams {
  EmbedConfig config;
  std::vector<std::string> names;
  std::vector<Tensor> tensors;

  std::size_t layers() const { return config.layer_dims.size(); }
  const Tensor& w_center(std::size_t l) const { return tensors[3 * l]; }
  const Tensor& w_edge(std::size_t l) const { return tensors[3 * l + 1]; }
  const Tensor& bias(std::size_t l) const { return tensors[3 * l + 2]; }
  const Tensor& head_weight() const { return tensors[3 * layers()]; }
  const Tensor& head_bias() const { return tensors[3 * layers() + 1]; }

  // Same parameters registered as leaves on `tape`.
  EmbedParams track(Tape& tape) const {
    EmbedParams p = *this;
    for (auto& t : p.tensors) t = tape.leaf(t);
    return p;
  }
};

inline std::vector<std::pair<std::string, Shape>> param_layout(const EmbedConfig& cfg) {
  std::vector<std::pair<std::string, Shape>> out;
  std::size_t in = 3;
  for (std::size_t l = 0; l < cfg.layer_dims.size(); ++l) {
    const std::size_t o = cfg.layer_dims[l];
    const std::string p = "edge" + std::to_string(l);
    out.push_back({p + ".w_center", {o, in}});
    out.push_back({p + ".w_edge", {o, in}});
    out.push_back({p + ".bias", {o}});
    in = o;
  }
  out.push_back({"head.weight", {cfg.out_dim, in}});
  out.push_back({"head.bias", {cfg.out_dim}});
  return out;
}

// Glorot-uniform weights, zero biases. An edge layer's fan-in counts both
// halves of the edge feature.
inline EmbedParams init_params(const EmbedConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  EmbedParams p;
  p.config = cfg;
  for (const auto& [name, shape] : param_layout(cfg)) {
    p.names.push_back(name);
    if (shape.size() == 1) {
      p.tensors.push_back(Tensor::zeros(shape));
      continue;
    }
    const bool edge = name.rfind("edge", 0) == 0;
    const double fan_in = static_cast<double>(edge ? 2 * shape[1] : shape[1]);
    const double fan_out = static_cast<double>(shape[0]);
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> u(-bound, bound);
    std::vector<double> w(numel(shape));
    for (auto& v : w) v = u(rng);
    p.tensors.push_back(Tensor(shape, std::move(w)));
  }
  return p;
}

struct EmbedOutput {
  Tensor features;                    // [N, D]
  std::vector<NeighborTable> graphs;  // one per edge layer
};

// `fixed_graphs`, when given, replaces the per-layer k-NN search.
inline EmbedOutput embed_forward(const EmbedParams& params, const Tensor& coords,
                                 const std::vector<NeighborTable>* fixed_graphs = nullptr) {
  const auto& cfg = params.config;
  if (coords.dim() != 2 || coords.size(1) != 3) throw Error("embed: expected [N,3] input, got " + shape_str(coords.shape()));
  const std::size_t n = coords.size(0);
  if (cfg.k_graph >= n) {
    throw Error("embed: k_graph=" + std::to_string(cfg.k_graph) + " needs at least " + std::to_string(cfg.k_graph + 1) +
                " points, got " + std::to_string(n));
  }
  if (fixed_graphs && fixed_graphs->size() != params.layers()) throw Error("embed: wrong number of fixed graphs");
  EmbedOutput out;
  Tensor h = coords;
  for (std::size_t l = 0; l < params.layers(); ++l) {
    NeighborTable g = fixed_graphs ? (*fixed_graphs)[l] : knn_euclidean(h.detach(), cfg.k_graph, true);
    const std::size_t c = cfg.layer_dims[l];
    Tensor neighbor_part = matmul(h, transpose(params.w_edge(l)));                              // [N, C]
    Tensor center_part = matmul(h, transpose(params.w_center(l) - params.w_edge(l))) + params.bias(l);  // [N, C]
    Tensor edges = reshape(gather_rows(neighbor_part, g.indices), {n, cfg.k_graph, c}) + reshape(center_part, {n, 1, c});
    h = max(leaky_relu(edges, kLeakySlope), 1).values;
    out.graphs.push_back(std::move(g));
  }
  out.features = matmul(h, transpose(params.head_weight())) + params.head_bias();
  return out;
}

inline Tensor embed(const EmbedParams& params, const PointCloud& cloud) {
  return embed_forward(params, cloud.to_tensor()).features;
}

}  // namespace lte
