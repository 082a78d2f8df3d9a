#pragma once

// Independent reference computations used only by the tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "lte/tensor.hpp"

namespace oracle {

using lte::Shape;
using lte::Tensor;

inline Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(lte::numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v));
}

inline Tensor random_spd(std::mt19937_64& rng, std::size_t k, double shift = 1.0) {
  Tensor m = random_tensor(rng, {k, k});
  std::vector<double> a(k * k, 0.0);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t l = 0; l < k; ++l) a[i * k + j] += m.at(i, l) * m.at(j, l);
      if (i == j) a[i * k + j] += shift;
    }
  return Tensor({k, k}, std::move(a));
}

inline double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// |a - b| / max(|a|, |b|), with an absolute floor for near-zero vectors.
inline double rel_err(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-8) {
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  return norm(d) / std::max({norm(a), norm(b), floor});
}

using TapeFn = std::function<Tensor(const std::vector<Tensor>&)>;

struct GradCheck {
  double rel = 0.0;
  std::vector<std::vector<double>> analytic, numeric;
};

// Analytic gradients of scalar f at `inputs` versus central differences.
inline GradCheck check_gradients(const TapeFn& f, const std::vector<Tensor>& inputs, double h = 1e-5) {
  GradCheck out;
  {
    lte::Tape tape;
    std::vector<Tensor> leaves;
    for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
    Tensor loss = f(leaves);
    auto g = tape.backward(loss);
    for (const auto& l : leaves) out.analytic.push_back(g.wrt(l).values());
  }
  std::vector<double> all_a, all_n;
  for (std::size_t p = 0; p < inputs.size(); ++p) {
    std::vector<double> num(inputs[p].numel());
    for (std::size_t i = 0; i < num.size(); ++i) {
      auto eval = [&](double delta) {
        std::vector<Tensor> xs = inputs;
        std::vector<double> v = xs[p].values();
        v[i] += delta;
        xs[p] = Tensor(xs[p].shape(), std::move(v));
        return f(xs).item();
      };
      num[i] = (eval(h) - eval(-h)) / (2.0 * h);
    }
    all_a.insert(all_a.end(), out.analytic[p].begin(), out.analytic[p].end());
    all_n.insert(all_n.end(), num.begin(), num.end());
    out.numeric.push_back(std::move(num));
  }
  out.rel = rel_err(all_a, all_n);
  return out;
}

// Dense Gaussian elimination with partial pivoting; solves M x = r.
inline std::vector<double> gauss_solve(std::vector<double> m, std::vector<double> r, std::size_t n) {
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t i = c + 1; i < n; ++i)
      if (std::abs(m[i * n + c]) > std::abs(m[piv * n + c])) piv = i;
    for (std::size_t j = 0; j < n; ++j) std::swap(m[c * n + j], m[piv * n + j]);
    std::swap(r[c], r[piv]);
    for (std::size_t i = c + 1; i < n; ++i) {
      const double f = m[i * n + c] / m[c * n + c];
      for (std::size_t j = c; j < n; ++j) m[i * n + j] -= f * m[c * n + j];
      r[i] -= f * r[c];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = r[i];
    for (std::size_t j = i + 1; j < n; ++j) s -= m[i * n + j] * x[j];
    x[i] = s / m[i * n + i];
  }
  return x;
}

// Lagrangian system of  min w^T (G + gamma I) w  s.t.  1^T w = 1:
//   [2(G + gamma I)  1] [w ]   [0]
//   [1^T             0] [mu] = [1]
inline std::vector<double> kkt_weights(const std::vector<double>& g, std::size_t k, double gamma) {
  const std::size_t n = k + 1;
  std::vector<double> m(n * n, 0.0), r(n, 0.0);
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = 0; b < k; ++b) m[a * n + b] = 2.0 * (g[a * k + b] + (a == b ? gamma : 0.0));
    m[a * n + k] = 1.0;
    m[k * n + a] = 1.0;
  }
  r[k] = 1.0;
  auto x = gauss_solve(m, r, n);
  x.resize(k);
  return x;
}

// Same problem by projected gradient descent on the affine constraint set.
inline std::vector<double> projected_gradient_weights(const std::vector<double>& g, std::size_t k, double gamma,
                                                      double tol = 1e-13, std::size_t max_iter = 2'000'000) {
  double bound = 0.0;  // Gershgorin bound on the largest eigenvalue
  for (std::size_t a = 0; a < k; ++a) {
    double s = gamma;
    for (std::size_t b = 0; b < k; ++b) s += std::abs(g[a * k + b]);
    bound = std::max(bound, s);
  }
  const double step = 1.0 / (2.0 * bound);
  std::vector<double> w(k, 1.0 / static_cast<double>(k)), grad(k);
  for (std::size_t it = 0; it < max_iter; ++it) {
    double mean = 0.0;
    for (std::size_t a = 0; a < k; ++a) {
      double s = gamma * w[a];
      for (std::size_t b = 0; b < k; ++b) s += g[a * k + b] * w[b];
      grad[a] = 2.0 * s;
      mean += grad[a];
    }
    mean /= static_cast<double>(k);
    double change = 0.0;
    for (std::size_t a = 0; a < k; ++a) {
      const double d = step * (grad[a] - mean);
      w[a] -= d;
      change = std::max(change, std::abs(d));
    }
    if (change < tol) break;
  }
  return w;
}

// Objective of the constrained problem for a given row.
inline double lle_energy(const std::vector<double>& g, std::size_t k, double gamma, const std::vector<double>& w) {
  double e = 0.0;
  for (std::size_t a = 0; a < k; ++a) {
    e += gamma * w[a] * w[a];
    for (std::size_t b = 0; b < k; ++b) e += w[a] * g[a * k + b] * w[b];
  }
  return e;
}

// Minimum total cost over all n! assignments.
inline double brute_force_assignment(const std::vector<double>& cost, std::size_t n) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < n; ++i) c += cost[i * n + perm[i]];
    best = std::min(best, c);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

inline double sqdist_rows(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
  double s = 0.0;
  for (std::size_t c = 0; c < a.size(1); ++c) {
    const double d = a.at(i, c) - b.at(j, c);
    s += d * d;
  }
  return s;
}

// Cauchy-Schwarz divergence of two Gaussian KDEs with explicit kernel sums:
//   -log <p,q> + 0.5 log <p,p> + 0.5 log <q,q>,
//   <p,q> = (1/N^2) sum_ij N(a_i - b_j; 0, 2 sigma^2 I).
inline double cs_direct(const Tensor& a, const Tensor& b, double sigma) {
  const double var = 2.0 * sigma * sigma;
  const double dim = static_cast<double>(a.size(1));
  const double norm_c = std::pow(2.0 * M_PI * var, -0.5 * dim);
  auto cross = [&](const Tensor& p, const Tensor& q) {
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(0); ++i)
      for (std::size_t j = 0; j < q.size(0); ++j) s += norm_c * std::exp(-sqdist_rows(p, i, q, j) / (2.0 * var));
    return s / static_cast<double>(p.size(0) * q.size(0));
  };
  return -std::log(cross(a, b)) + 0.5 * std::log(cross(a, a)) + 0.5 * std::log(cross(b, b));
}

// Standalone AdamW over a flat parameter vector.
struct ReferenceAdamW {
  double lr_scale = 1.0;
  double b1, b2, eps, wd;
  std::vector<double> m, v;
  int t = 0;

  ReferenceAdamW(std::size_t n, double beta1, double beta2, double epsilon, double decay)
      : b1(beta1), b2(beta2), eps(epsilon), wd(decay), m(n, 0.0), v(n, 0.0) {}

  void step(std::vector<double>& p, const std::vector<double>& g, double lr) {
    ++t;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double mhat = m[i] / (1.0 - std::pow(b1, t));
      const double vhat = v[i] / (1.0 - std::pow(b2, t));
      p[i] = p[i] - lr * (mhat / (std::sqrt(vhat) + eps) + wd * p[i]);
    }
  }
};

}  // namespace oracle
