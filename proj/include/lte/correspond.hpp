#pragma once

// Matching in embedding space and correspondence metrics.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "lte/neighbors.hpp"
#include "lte/pointcloud.hpp"
#include "lte/tensor.hpp"

namespace lte {

// mapping[i] = predicted target index of source point i; need not be a bijection.
using Correspondence = std::vector<std::size_t>;

// Argmax cosine similarity per row of fx; ties go to the lower index.
inline Correspondence match_nn(const Tensor& fx, const Tensor& fy) {
  const auto sim = detail::cosine_matrix(fx.detach(), fy.detach(), "match_nn");
  const std::size_t nx = fx.size(0), ny = fy.size(0);
  Correspondence map(nx, 0);
  for (std::size_t i = 0; i < nx; ++i) {
    const double* row = sim.data() + i * ny;
    std::size_t best = 0;
    for (std::size_t j = 1; j < ny; ++j)
      if (row[j] > row[best]) best = j;
    map[i] = best;
  }
  return map;
}

// Baseline: each source point maps to the nearest target point in space.
inline Correspondence match_coordinates(const PointCloud& x, const PointCloud& y) {
  Correspondence map(x.size(), 0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::size_t best = 0;
    double bd = dist2(x[i], y[0]);
    for (std::size_t j = 1; j < y.size(); ++j) {
      const double d = dist2(x[i], y[j]);
      if (d < bd) {
        bd = d;
        best = j;
      }
    }
    map[i] = best;
  }
  return map;
}

struct EvalPoint {
  double epsilon = 0.0;
  double accuracy = 0.0;
};

struct EvalReport {
  double err = 0.0;
  double dist_max = 0.0;
  std::vector<EvalPoint> acc_curve;

  // Accuracy at the grid point closest to `eps`.
  double acc(double eps) const {
    if (acc_curve.empty()) throw Error("EvalReport: empty accuracy curve");
    const EvalPoint* best = &acc_curve[0];
    for (const auto& p : acc_curve)
      if (std::abs(p.epsilon - eps) < std::abs(best->epsilon - eps)) best = &p;
    return best->accuracy;
  }
};

// 0%, 1%, ..., 20%.
inline std::vector<double> default_eps_grid() {
  std::vector<double> g;
  for (int i = 0; i <= 20; ++i) g.push_back(i / 100.0);
  return g;
}

inline double max_pairwise_distance(const PointCloud& y) {
  double m = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i)
    for (std::size_t j = i + 1; j < y.size(); ++j) m = std::max(m, dist2(y[i], y[j]));
  return std::sqrt(m);
}

inline EvalReport evaluate(const Correspondence& pred, const ShapePair& pair,
                           const std::vector<double>& eps_grid = default_eps_grid()) {
  const std::size_t n = pair.source.size();
  if (pred.size() != n) {
    throw Error("evaluate: correspondence has " + std::to_string(pred.size()) + " entries, expected " + std::to_string(n));
  }
  const PointCloud& y = pair.target;
  std::vector<double> dists(n);
  EvalReport r;
  for (std::size_t i = 0; i < n; ++i) {
    if (pred[i] >= y.size()) throw Error("evaluate: predicted index " + std::to_string(pred[i]) + " out of range");
    dists[i] = std::sqrt(dist2(y[pred[i]], y[pair.gt_map[i]]));
    r.err += dists[i];
  }
  r.err /= static_cast<double>(n);
  r.dist_max = max_pairwise_distance(y);
  for (double eps : eps_grid) {
    const double thr = eps * r.dist_max;
    std::size_t hit = 0;
    for (double d : dists)
      if (d < thr) ++hit;
    r.acc_curve.push_back({eps, static_cast<double>(hit) / static_cast<double>(n)});
  }
  return r;
}

namespace detail {

inline Eigen::MatrixXd to_eigen(const Tensor& t) {
  check_matrix(t, "to_eigen");
  Eigen::MatrixXd m(static_cast<long>(t.size(0)), static_cast<long>(t.size(1)));
  for (std::size_t i = 0; i < t.size(0); ++i)
    for (std::size_t j = 0; j < t.size(1); ++j) m(static_cast<long>(i), static_cast<long>(j)) = t.at(i, j);
  return m;
}

inline Tensor from_eigen(const Eigen::MatrixXd& m) {
  std::vector<double> d(static_cast<std::size_t>(m.size()));
  for (long i = 0; i < m.rows(); ++i)
    for (long j = 0; j < m.cols(); ++j) d[static_cast<std::size_t>(i * m.cols() + j)] = m(i, j);
  return Tensor({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())}, std::move(d));
}

// SVD pseudo-inverse; singular values below rel_tol * sigma_max are dropped.
inline Eigen::MatrixXd pinv(const Eigen::MatrixXd& a, double rel_tol = 1e-10) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  const double cut = s.size() ? rel_tol * s(0) : 0.0;
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(s.size());
  for (long i = 0; i < s.size(); ++i)
    if (s(i) > cut) inv(i) = 1.0 / s(i);
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

}  // namespace detail

// Least-squares A minimizing |FX A^T - Pi FY|, where (Pi FY)_i = FY[gt_map[i]].
inline Tensor optimal_linear_transform(const Tensor& fx, const Tensor& fy, const IndexMap& gt_map) {
  detail::check_matrix(fx, "optimal_linear_transform");
  detail::check_matrix(fy, "optimal_linear_transform");
  if (fx.size(1) != fy.size(1) || gt_map.size() != fx.size(0)) {
    throw Error("optimal_linear_transform: shape mismatch " + shape_str(fx.shape()) + " vs " + shape_str(fy.shape()));
  }
  for (auto j : gt_map)
    if (j >= fy.size(0)) throw Error("optimal_linear_transform: ground-truth index out of range");
  Tensor permuted = gather_rows(fy.detach(), gt_map);
  Eigen::MatrixXd a = (detail::pinv(detail::to_eigen(fx.detach())) * detail::to_eigen(permuted)).transpose();
  return detail::from_eigen(a);
}

inline double transform_residual(const Tensor& fx, const Tensor& fy, const IndexMap& gt_map, const Tensor& a) {
  Eigen::MatrixXd r = detail::to_eigen(fx.detach()) * detail::to_eigen(a.detach()).transpose() -
                      detail::to_eigen(gather_rows(fy.detach(), gt_map));
  return r.norm();
}

inline Correspondence match_with_transform(const Tensor& fx, const Tensor& fy, const Tensor& a) {
  return match_nn(matmul(fx.detach(), transpose(a.detach())), fy);
}

// Correspondence file: one predicted target index per line.
inline std::string format_correspondence(const Correspondence& c) { return format_index_list(c); }

inline Correspondence parse_correspondence(std::string_view text, const std::string& origin) {
  return parse_index_list(text, origin);
}

inline std::string format_report(const EvalReport& r) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "err,%.17g\n", r.err);
  std::string out = buf;
  out += "epsilon,accuracy\n";
  for (const auto& p : r.acc_curve) {
    std::snprintf(buf, sizeof buf, "%.2f,%.17g\n", p.epsilon, p.accuracy);
    out += buf;
  }
  return out;
}

}  // namespace lte
