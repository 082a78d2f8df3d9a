#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "lte/neighbors.hpp"
#include "lte/pointcloud.hpp"
#include "lte/tensor.hpp"

namespace lte {

enum class Divergence { CS, CD, EMD };

inline Divergence parse_divergence(std::string_view s) {
  if (s == "cs" || s == "CS") return Divergence::CS;
  if (s == "cd" || s == "CD") return Divergence::CD;
  if (s == "emd" || s == "EMD") return Divergence::EMD;
  throw Error("unknown divergence '" + std::string(s) + "' (expected cs|cd|emd)");
}

inline const char* divergence_name(Divergence d) {
  switch (d) {
    case Divergence::CS: return "cs";
    case Divergence::CD: return "cd";
    case Divergence::EMD: return "emd";
  }
  return "?";
}

struct LossConfig {
  double sigma = 0.01;
  double lambda_cross = 1.0;
  double lambda_self = 1.0;
  double lambda_reg = 10.0;
  std::optional<double> alpha;  // unset: mean squared NN distance of the reference cloud
  Divergence divergence = Divergence::CS;
  std::size_t k_map = 10;

  void validate() const {
    if (!(sigma > 0.0)) throw Error("loss.sigma must be > 0");
    if (!(lambda_cross >= 0.0) || !(lambda_self >= 0.0) || !(lambda_reg >= 0.0)) throw Error("loss.lambda_* must be >= 0");
    if (alpha && !(*alpha > 0.0)) throw Error("loss.alpha must be > 0");
    if (k_map < 1) throw Error("loss.k_map must be >= 1");
  }
};

// [N, M] squared distances between rows of a ([N, C]) and b ([M, C]).
inline Tensor pairwise_sqdist(const Tensor& a, const Tensor& b) {
  if (a.dim() != 2 || b.dim() != 2 || a.size(1) != b.size(1)) {
    throw Error("pairwise_sqdist: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t n = a.size(0), m = b.size(0), c = a.size(1);
  return sum(square(reshape(a, {n, 1, c}) - reshape(b, {1, m, c})), 2);
}

// log sum_{i,j} exp(-0.5 |a_i - b_j|^2 / (2 sigma^2) - 0.5 ln(2 pi) - ln(sqrt(2) sigma)).
inline Tensor gmm_logterm(const Tensor& a, const Tensor& b, double sigma, bool include_constant = true) {
  if (!(sigma > 0.0)) throw Error("gmm_logterm: bandwidth must be > 0");
  if (a.size(0) != b.size(0)) {
    throw Error("gmm_logterm: point counts differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const double factor = 2.0 * sigma * sigma;
  Tensor terms = scale(pairwise_sqdist(a, b), -0.5 / factor);
  if (include_constant) {
    terms = add_scalar(terms, -0.5 * std::log(2.0 * std::numbers::pi) - std::log(std::numbers::sqrt2 * sigma));
  }
  return logsumexp(terms);
}

// Cauchy-Schwarz divergence between Gaussian KDEs of two clouds.
inline Tensor cs_divergence(const Tensor& rec, const Tensor& tgt, double sigma, bool include_constant = true) {
  // Cross term over both argument orders: D(a,b) == D(b,a) bit for bit.
  Tensor cross = gmm_logterm(rec, tgt, sigma, include_constant) + gmm_logterm(tgt, rec, sigma, include_constant);
  Tensor self = gmm_logterm(rec, rec, sigma, include_constant) + gmm_logterm(tgt, tgt, sigma, include_constant);
  return scale(self - cross, 0.5);
}

inline Tensor chamfer(const Tensor& rec, const Tensor& tgt) {
  Tensor d = pairwise_sqdist(rec, tgt);
  Tensor to_tgt = neg(max(neg(d), 1).values);  // per rec point
  Tensor to_rec = neg(max(neg(d), 0).values);  // per tgt point
  return mean(to_tgt) + mean(to_rec);
}

struct Assignment {
  std::vector<std::size_t> row_to_col;
  double cost = 0.0;
};

// Exact minimum-cost perfect matching on a square cost matrix (row-major),
// shortest augmenting path with potentials, O(n^3).
inline Assignment hungarian(const std::vector<double>& cost, std::size_t n) {
  if (cost.size() != n * n) throw Error("hungarian: cost matrix is not n x n");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  Assignment a;
  a.row_to_col.assign(n, 0);
  for (std::size_t j = 1; j <= n; ++j) a.row_to_col[p[j] - 1] = j - 1;
  for (std::size_t i = 0; i < n; ++i) a.cost += cost[i * n + a.row_to_col[i]];
  return a;
}

// (1/N) * minimum-cost perfect matching under Euclidean cost. The gradient
// flows through the fixed optimal assignment.
inline Tensor emd(const Tensor& rec, const Tensor& tgt) {
  if (rec.dim() != 2 || tgt.dim() != 2 || rec.size(0) != tgt.size(0) || rec.size(1) != tgt.size(1)) {
    throw Error("emd: needs equal point counts, got " + shape_str(rec.shape()) + " vs " + shape_str(tgt.shape()));
  }
  const std::size_t n = rec.size(0);
  Tensor d2 = pairwise_sqdist(rec.detach(), tgt.detach());
  std::vector<double> cost(d2.values());
  for (auto& c : cost) c = std::sqrt(c);
  Assignment a = hungarian(cost, n);
  Tensor matched = gather_rows(tgt, a.row_to_col);
  return mean(sqrt(sum(square(rec - matched), 1)));
}

// Mean squared nearest-neighbor distance; the default mapping-loss scale.
inline double mean_sq_nn_distance(const PointCloud& x) {
  NeighborTable t = knn_euclidean(x, 1, true);
  double s = 0.0;
  for (double d : t.scores) s += d * d;
  return s / static_cast<double>(t.rows);
}

// Smoothness term: rebuilt rows whose reference points are close should stay close.
inline Tensor mapping_loss(const PointCloud& x, const Tensor& rebuilt, std::size_t k_map, std::optional<double> alpha) {
  const std::size_t n = x.size();
  if (rebuilt.dim() != 2 || rebuilt.size(0) != n) {
    throw Error("mapping_loss: rebuilt " + shape_str(rebuilt.shape()) + " does not match " + std::to_string(n) + " points");
  }
  const double a = alpha ? *alpha : mean_sq_nn_distance(x);
  if (!(a > 0.0)) throw Error("mapping_loss: alpha must be > 0");
  NeighborTable t = knn_euclidean(x, k_map, true);
  std::vector<double> v(n * k_map);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t l = 0; l < k_map; ++l) v[i * k_map + l] = std::exp(-dist2(x[i], x[t.index(i, l)]) / a);
  const std::size_t c = rebuilt.size(1);
  Tensor nb = reshape(gather_rows(rebuilt, t.indices), {n, k_map, c});
  Tensor gap = sum(square(nb - reshape(rebuilt, {n, 1, c})), 2);  // [N, K]
  return scale(sum(gap * Tensor({n, k_map}, std::move(v))), 1.0 / static_cast<double>(n * k_map));
}

inline Tensor divergence(const Tensor& rec, const Tensor& tgt, const LossConfig& cfg) {
  switch (cfg.divergence) {
    case Divergence::CS: return cs_divergence(rec, tgt, cfg.sigma);
    case Divergence::CD: return chamfer(rec, tgt);
    case Divergence::EMD: return emd(rec, tgt);
  }
  throw Error("divergence: unknown kind");
}

// Everything the objective needs for one pair. Self reconstructions may be
// left empty when lambda_self is zero.
struct PairOutputs {
  PointCloud x, y;
  Tensor x_hat, y_hat;                  // cross reconstructions, rows aligned with y / x
  std::optional<Tensor> x_tilde, y_tilde;  // self reconstructions
};

struct ObjectiveTerms {
  Tensor total;
  double cross = 0.0, self = 0.0, reg = 0.0;
};

inline ObjectiveTerms total_objective_terms(const PairOutputs& o, const LossConfig& cfg) {
  ObjectiveTerms t;
  std::optional<Tensor> total;
  auto accumulate = [&](const Tensor& part, double lambda) {
    Tensor w = scale(part, lambda);
    total = total ? add(*total, w) : w;
  };
  const Tensor x = o.x.to_tensor(), y = o.y.to_tensor();
  if (cfg.lambda_cross > 0.0) {
    Tensor c = divergence(o.x_hat, x, cfg) + divergence(o.y_hat, y, cfg);
    t.cross = c.item();
    accumulate(c, cfg.lambda_cross);
  }
  if (cfg.lambda_self > 0.0) {
    if (!o.x_tilde || !o.y_tilde) throw Error("total_objective: self reconstructions missing");
    Tensor s = divergence(*o.x_tilde, x, cfg) + divergence(*o.y_tilde, y, cfg);
    t.self = s.item();
    accumulate(s, cfg.lambda_self);
  }
  if (cfg.lambda_reg > 0.0) {
    // y_hat rows follow x's indices, x_hat rows follow y's.
    Tensor r = mapping_loss(o.x, o.y_hat, cfg.k_map, cfg.alpha) + mapping_loss(o.y, o.x_hat, cfg.k_map, cfg.alpha);
    t.reg = r.item();
    accumulate(r, cfg.lambda_reg);
  }
  t.total = total ? *total : Tensor::scalar(0.0);
  return t;
}

inline Tensor total_objective(const PairOutputs& o, const LossConfig& cfg) { return total_objective_terms(o, cfg).total; }

}  // namespace lte
