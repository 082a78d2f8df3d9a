#pragma once

// Exhaustive K-nearest-neighbor queries. Ties always break toward the lower
// index so tables are deterministic.

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "lte/pointcloud.hpp"
#include "lte/tensor.hpp"

namespace lte {

struct NeighborTable {
  std::size_t rows = 0;
  std::size_t k = 0;
  std::vector<std::size_t> indices;  // rows x k, row-major
  std::vector<double> scores;        // distance (Euclidean) or similarity (cosine)

  std::size_t index(std::size_t i, std::size_t l) const { return indices[i * k + l]; }
  double score(std::size_t i, std::size_t l) const { return scores[i * k + l]; }
  std::span<const std::size_t> row(std::size_t i) const { return {indices.data() + i * k, k}; }

  friend bool operator==(const NeighborTable& a, const NeighborTable& b) {
    return a.rows == b.rows && a.k == b.k && a.indices == b.indices;
  }
};

namespace detail {

inline void check_matrix(const Tensor& t, const char* op) {
  if (t.dim() != 2) throw Error(std::string(op) + ": expected 2-d row matrix, got " + shape_str(t.shape()));
}

// Keeps the k best (key, index) candidates. `better(a, b)` orders keys.
template <class Better>
void select_top(std::vector<std::pair<double, std::size_t>>& cand, std::size_t k, Better better) {
  auto cmp = [&](const auto& a, const auto& b) {
    if (a.first != b.first) return better(a.first, b.first);
    return a.second < b.second;
  };
  std::partial_sort(cand.begin(), cand.begin() + static_cast<long>(k), cand.end(), cmp);
}

}  // namespace detail

// Row i holds the K rows of `points` closest to row i in Euclidean distance.
inline NeighborTable knn_euclidean(const Tensor& points, std::size_t k, bool exclude_self) {
  detail::check_matrix(points, "knn_euclidean");
  const std::size_t n = points.size(0), d = points.size(1);
  const std::size_t avail = exclude_self ? n - 1 : n;
  if (k < 1 || k > avail) {
    throw Error("knn_euclidean: K=" + std::to_string(k) + " out of range [1," + std::to_string(avail) + "]");
  }
  const auto& v = points.values();
  NeighborTable t{n, k, std::vector<std::size_t>(n * k), std::vector<double>(n * k)};
  std::vector<std::pair<double, std::size_t>> cand;
  cand.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    cand.clear();
    const double* pi = v.data() + i * d;
    for (std::size_t j = 0; j < n; ++j) {
      if (exclude_self && j == i) continue;
      const double* pj = v.data() + j * d;
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = pi[c] - pj[c];
        s += diff * diff;
      }
      cand.emplace_back(s, j);
    }
    detail::select_top(cand, k, [](double a, double b) { return a < b; });
    for (std::size_t l = 0; l < k; ++l) {
      t.indices[i * k + l] = cand[l].second;
      t.scores[i * k + l] = std::sqrt(cand[l].first);
    }
  }
  return t;
}

inline NeighborTable knn_euclidean(const PointCloud& cloud, std::size_t k, bool exclude_self) {
  return knn_euclidean(cloud.to_tensor(), k, exclude_self);
}

namespace detail {

inline std::vector<double> row_norms(const Tensor& f, const char* what) {
  const std::size_t n = f.size(0), d = f.size(1);
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += f[i * d + c] * f[i * d + c];
    norms[i] = std::sqrt(s);
    if (!(norms[i] > 0.0)) throw Error(std::string(what) + ": zero-norm embedding row " + std::to_string(i));
  }
  return norms;
}

// n_x x n_y cosine similarities.
inline std::vector<double> cosine_matrix(const Tensor& fx, const Tensor& fy, const char* op) {
  check_matrix(fx, op);
  check_matrix(fy, op);
  if (fx.size(1) != fy.size(1)) {
    throw Error(std::string(op) + ": feature dimension mismatch " + shape_str(fx.shape()) + " vs " + shape_str(fy.shape()));
  }
  const std::size_t nx = fx.size(0), ny = fy.size(0), d = fx.size(1);
  const auto nxn = row_norms(fx, (std::string(op) + " (source)").c_str());
  const auto nyn = row_norms(fy, (std::string(op) + " (target)").c_str());
  std::vector<double> sim(nx * ny, 0.0);
  gemm(fx.values().data(), fy.values().data(), sim.data(), nx, d, ny, false, true);
  for (std::size_t i = 0; i < nx; ++i)
    for (std::size_t j = 0; j < ny; ++j) sim[i * ny + j] /= nxn[i] * nyn[j];
  return sim;
}

}  // namespace detail

// Row i holds the K rows of FY with the highest cosine similarity to FX row i.
// With same_set, row i never lists itself (FX and FY are the same embedding).
inline NeighborTable knn_cosine(const Tensor& fx, const Tensor& fy, std::size_t k, bool same_set) {
  const auto sim = detail::cosine_matrix(fx, fy, "knn_cosine");
  const std::size_t nx = fx.size(0), ny = fy.size(0);
  const std::size_t avail = same_set ? ny - 1 : ny;
  if (k < 1 || k > avail) {
    throw Error("knn_cosine: K=" + std::to_string(k) + " out of range [1," + std::to_string(avail) + "]");
  }
  NeighborTable t{nx, k, std::vector<std::size_t>(nx * k), std::vector<double>(nx * k)};
  std::vector<std::pair<double, std::size_t>> cand;
  cand.reserve(ny);
  for (std::size_t i = 0; i < nx; ++i) {
    cand.clear();
    for (std::size_t j = 0; j < ny; ++j) {
      if (same_set && j == i) continue;
      cand.emplace_back(sim[i * ny + j], j);
    }
    detail::select_top(cand, k, [](double a, double b) { return a > b; });
    for (std::size_t l = 0; l < k; ++l) {
      t.indices[i * k + l] = cand[l].second;
      t.scores[i * k + l] = cand[l].first;
    }
  }
  return t;
}

inline NeighborTable knn_cosine_cross(const Tensor& fx, const Tensor& fy, std::size_t k) {
  return knn_cosine(fx, fy, k, false);
}

}  // namespace lte
