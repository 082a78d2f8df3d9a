#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "lte/tensor.hpp"

namespace lte {

using Vec3 = std::array<double, 3>;

inline double dist2(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

class PointCloud {
 public:
  PointCloud() = default;
  explicit PointCloud(std::vector<Vec3> points) : points_(std::move(points)) {
    if (points_.size() < 2) throw Error("point cloud: need at least 2 points, got " + std::to_string(points_.size()));
    for (std::size_t i = 0; i < points_.size(); ++i)
      for (double c : points_[i])
        if (!std::isfinite(c)) throw Error("point cloud: non-finite coordinate at point " + std::to_string(i));
  }

  static PointCloud from_tensor(const Tensor& t) {
    if (t.dim() != 2 || t.size(1) != 3) throw Error("point cloud: expected [N,3] tensor, got " + shape_str(t.shape()));
    std::vector<Vec3> pts(t.size(0));
    for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = {t[3 * i], t[3 * i + 1], t[3 * i + 2]};
    return PointCloud(std::move(pts));
  }

  std::size_t size() const { return points_.size(); }
  const Vec3& operator[](std::size_t i) const { return points_[i]; }
  const std::vector<Vec3>& points() const { return points_; }

  Tensor to_tensor() const {
    std::vector<double> d;
    d.reserve(points_.size() * 3);
    for (const auto& p : points_) d.insert(d.end(), p.begin(), p.end());
    return Tensor({points_.size(), 3}, std::move(d));
  }

  friend bool operator==(const PointCloud&, const PointCloud&) = default;

 private:
  std::vector<Vec3> points_;
};

// Source index -> target index. Validated as a permutation of {0..N-1}.
using IndexMap = std::vector<std::size_t>;

inline void validate_permutation(const IndexMap& map, std::size_t n, const std::string& what) {
  if (map.size() != n) {
    throw Error(what + ": expected " + std::to_string(n) + " entries, got " + std::to_string(map.size()));
  }
  std::vector<char> seen(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (map[i] >= n || seen[map[i]]) throw Error(what + ": not a permutation (entry " + std::to_string(i) + ")");
    seen[map[i]] = 1;
  }
}

// Gaussian radial-basis displacement field: x -> x + sum_c d_c exp(-|x-c|^2 / (2 r^2)).
struct WarpField {
  std::vector<Vec3> centers;
  std::vector<Vec3> displacements;
  double radius = 0.5;

  Vec3 displacement(const Vec3& x) const {
    Vec3 d{0.0, 0.0, 0.0};
    for (std::size_t c = 0; c < centers.size(); ++c) {
      const double w = std::exp(-dist2(x, centers[c]) / (2.0 * radius * radius));
      for (int k = 0; k < 3; ++k) d[k] += w * displacements[c][k];
    }
    return d;
  }
};

struct ShapePair {
  PointCloud source;
  PointCloud target;
  IndexMap gt_map;  // target[gt_map[i]] corresponds to source[i]
  WarpField warp;   // empty for pairs loaded from disk

  ShapePair() = default;
  ShapePair(PointCloud src, PointCloud tgt, IndexMap map, WarpField w = {})
      : source(std::move(src)), target(std::move(tgt)), gt_map(std::move(map)), warp(std::move(w)) {
    if (source.size() != target.size()) {
      throw Error("shape pair: source has " + std::to_string(source.size()) + " points, target " +
                  std::to_string(target.size()));
    }
    validate_permutation(gt_map, source.size(), "shape pair ground truth");
  }
};

// ---------------------------------------------------------------------------
// XYZ files

inline PointCloud parse_xyz(std::string_view text, const std::string& origin = "<string>") {
  std::vector<Vec3> pts;
  std::size_t line_no = 0, pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    Vec3 p{};
    const char* cur = line.data();
    const char* last = line.data() + line.size();
    for (int k = 0; k < 3; ++k) {
      while (cur < last && (*cur == ' ' || *cur == '\t')) ++cur;
      auto [ptr, ec] = std::from_chars(cur, last, p[k]);
      if (ec != std::errc() || (ptr < last && *ptr != ' ' && *ptr != '\t') || !std::isfinite(p[k])) {
        throw Error(origin + ":" + std::to_string(line_no) + ": malformed coordinate");
      }
      cur = ptr;
    }
    while (cur < last && (*cur == ' ' || *cur == '\t')) ++cur;
    if (cur != last) throw Error(origin + ":" + std::to_string(line_no) + ": expected 3 numbers, got more");
    pts.push_back(p);
  }
  if (pts.size() < 2) throw Error(origin + ": need at least 2 points, got " + std::to_string(pts.size()));
  return PointCloud(std::move(pts));
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed: " + path.string());
}

inline PointCloud load_xyz(const std::filesystem::path& path) { return parse_xyz(read_file(path), path.string()); }

inline std::string format_xyz(const PointCloud& cloud) {
  std::string out;
  char buf[96];
  for (const auto& p : cloud.points()) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g\n", p[0], p[1], p[2]);
    out += buf;
  }
  return out;
}

inline void save_xyz(const PointCloud& cloud, const std::filesystem::path& path) { write_file(path, format_xyz(cloud)); }

inline IndexMap parse_index_list(std::string_view text, const std::string& origin) {
  IndexMap map;
  std::size_t line_no = 0, pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) line.remove_suffix(1);
    while (!line.empty() && (line.front() == ' ' || line.front() == '\t')) line.remove_prefix(1);
    if (line.empty()) continue;
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(line.data(), line.data() + line.size(), v);
    if (ec != std::errc() || ptr != line.data() + line.size()) {
      throw Error(origin + ":" + std::to_string(line_no) + ": malformed index");
    }
    map.push_back(v);
  }
  return map;
}

inline std::string format_index_list(const IndexMap& map) {
  std::string out;
  for (auto v : map) {
    out += std::to_string(v);
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization and noise

inline PointCloud normalize(const PointCloud& cloud) {
  const std::size_t n = cloud.size();
  Vec3 c{0.0, 0.0, 0.0};
  for (const auto& p : cloud.points())
    for (int k = 0; k < 3; ++k) c[k] += p[k];
  for (auto& v : c) v /= static_cast<double>(n);
  double max_norm = 0.0;
  for (const auto& p : cloud.points()) max_norm = std::max(max_norm, dist2(p, c));
  max_norm = std::sqrt(max_norm);
  if (!(max_norm > 0.0)) throw Error("normalize: degenerate cloud (all points identical)");
  std::vector<Vec3> out(n);
  for (std::size_t i = 0; i < n; ++i)
    for (int k = 0; k < 3; ++k) out[i][k] = (cloud[i][k] - c[k]) / max_norm;
  return PointCloud(std::move(out));
}

inline PointCloud add_noise(const PointCloud& cloud, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw Error("add_noise: sigma must be >= 0");
  if (sigma == 0.0) return cloud;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, sigma);
  std::vector<Vec3> out = cloud.points();
  for (auto& p : out)
    for (auto& v : p) v += normal(rng);
  return PointCloud(std::move(out));
}

// ---------------------------------------------------------------------------
// Synthetic shapes

enum class BaseShape { Sphere, Torus, Articulated };

inline BaseShape parse_base_shape(std::string_view name) {
  if (name == "sphere") return BaseShape::Sphere;
  if (name == "torus") return BaseShape::Torus;
  if (name == "articulated") return BaseShape::Articulated;
  throw Error("unknown base shape '" + std::string(name) + "' (expected sphere|torus|articulated)");
}

inline const char* base_shape_name(BaseShape s) {
  switch (s) {
    case BaseShape::Sphere: return "sphere";
    case BaseShape::Torus: return "torus";
    case BaseShape::Articulated: return "articulated";
  }
  return "?";
}

namespace detail {

inline Vec3 unit_gaussian(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 v;
  double len = 0.0;
  do {
    v = {n(rng), n(rng), n(rng)};
    len = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  } while (len < 1e-12);
  for (auto& c : v) c /= len;
  return v;
}

inline std::vector<Vec3> sample_sphere(std::size_t n, std::mt19937_64& rng) {
  std::vector<Vec3> pts(n);
  for (auto& p : pts) p = unit_gaussian(rng);
  return pts;
}

// Area-uniform samples on a torus with major radius 1, tube radius 0.4.
inline std::vector<Vec3> sample_torus(std::size_t n, std::mt19937_64& rng) {
  constexpr double R = 1.0, r = 0.4, pi = 3.14159265358979323846;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Vec3> pts;
  pts.reserve(n);
  while (pts.size() < n) {
    const double a = 2 * pi * u(rng), b = 2 * pi * u(rng);
    if (u(rng) * (R + r) > R + r * std::cos(b)) continue;
    pts.push_back({(R + r * std::cos(b)) * std::cos(a), (R + r * std::cos(b)) * std::sin(a), r * std::sin(b)});
  }
  return pts;
}

// Ellipsoidal torso with four cylindrical limbs at seeded joint angles.
inline std::vector<Vec3> sample_articulated(std::size_t n, std::mt19937_64& rng) {
  constexpr double pi = 3.14159265358979323846;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  struct Limb {
    Vec3 root, dir;
    double length, radius;
  };
  std::vector<Limb> limbs;
  const Vec3 roots[4] = {{0.35, 0.0, 0.45}, {-0.35, 0.0, 0.45}, {0.2, 0.0, -0.55}, {-0.2, 0.0, -0.55}};
  for (int l = 0; l < 4; ++l) {
    const double side = roots[l][0] > 0 ? 1.0 : -1.0;
    const double down = roots[l][2] > 0 ? 0.3 : -1.0;
    const double swing = (u(rng) - 0.5) * 0.9;
    Vec3 d{side * std::cos(swing), 0.3 * (u(rng) - 0.5), down + std::sin(swing)};
    const double len = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    for (auto& c : d) c /= len;
    limbs.push_back({roots[l], d, 0.8, 0.12});
  }
  // Area weights: torso ~ ellipsoid (0.4, 0.3, 0.7), limbs ~ cylinders.
  const double torso_area = 4 * pi * std::pow((std::pow(0.4 * 0.3, 1.6) + std::pow(0.4 * 0.7, 1.6) + std::pow(0.3 * 0.7, 1.6)) / 3, 1 / 1.6);
  std::vector<double> areas{torso_area};
  for (const auto& l : limbs) areas.push_back(2 * pi * l.radius * l.length);
  std::discrete_distribution<int> pick(areas.begin(), areas.end());
  std::vector<Vec3> pts;
  pts.reserve(n);
  while (pts.size() < n) {
    const int part = pick(rng);
    if (part == 0) {
      Vec3 s = unit_gaussian(rng);
      pts.push_back({0.4 * s[0], 0.3 * s[1], 0.7 * s[2]});
      continue;
    }
    const Limb& l = limbs[static_cast<std::size_t>(part - 1)];
    // Orthonormal frame around the limb axis.
    Vec3 a = std::abs(l.dir[0]) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
    Vec3 e1{l.dir[1] * a[2] - l.dir[2] * a[1], l.dir[2] * a[0] - l.dir[0] * a[2], l.dir[0] * a[1] - l.dir[1] * a[0]};
    const double n1 = std::sqrt(e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2]);
    for (auto& c : e1) c /= n1;
    Vec3 e2{l.dir[1] * e1[2] - l.dir[2] * e1[1], l.dir[2] * e1[0] - l.dir[0] * e1[2], l.dir[0] * e1[1] - l.dir[1] * e1[0]};
    const double t = u(rng) * l.length, phi = 2 * pi * u(rng);
    Vec3 p;
    for (int k = 0; k < 3; ++k)
      p[k] = l.root[k] + t * l.dir[k] + l.radius * (std::cos(phi) * e1[k] + std::sin(phi) * e2[k]);
    pts.push_back(p);
  }
  return pts;
}

}  // namespace detail

constexpr std::size_t kWarpCenters = 8;
constexpr double kWarpRadius = 0.5;

// Source: normalized sample of the base shape. Target: RBF-warped copy of the
// source, rows shuffled; gt_map records where each source point went.
inline ShapePair gen_pair(BaseShape shape, std::size_t n_points, double warp_strength, std::uint64_t seed) {
  if (n_points < 8) throw Error("gen_pair: n_points must be >= 8");
  if (!(warp_strength >= 0.0)) throw Error("gen_pair: warp_strength must be >= 0");
  std::mt19937_64 rng(seed);
  std::vector<Vec3> base;
  switch (shape) {
    case BaseShape::Sphere: base = detail::sample_sphere(n_points, rng); break;
    case BaseShape::Torus: base = detail::sample_torus(n_points, rng); break;
    case BaseShape::Articulated: base = detail::sample_articulated(n_points, rng); break;
  }
  PointCloud source = normalize(PointCloud(std::move(base)));

  WarpField warp;
  warp.radius = kWarpRadius;
  std::uniform_int_distribution<std::size_t> pick(0, n_points - 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t c = 0; c < kWarpCenters; ++c) {
    warp.centers.push_back(source[pick(rng)]);
    warp.displacements.push_back({warp_strength * normal(rng), warp_strength * normal(rng), warp_strength * normal(rng)});
  }

  IndexMap perm(n_points);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);

  std::vector<Vec3> target(n_points);
  for (std::size_t i = 0; i < n_points; ++i) {
    Vec3 p = source[i];
    if (warp_strength > 0.0) {
      const Vec3 d = warp.displacement(p);
      for (int k = 0; k < 3; ++k) p[k] += d[k];
    }
    target[perm[i]] = p;
  }
  return ShapePair(std::move(source), PointCloud(std::move(target)), std::move(perm), std::move(warp));
}

// ---------------------------------------------------------------------------
// Corpus directories: pair_<idx>_src.xyz, pair_<idx>_tgt.xyz, pair_<idx>.map

inline std::string pair_stem(std::size_t idx) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "pair_%04zu", idx);
  return buf;
}

inline void save_pair(const ShapePair& pair, const std::filesystem::path& dir, std::size_t idx) {
  const std::string stem = pair_stem(idx);
  save_xyz(pair.source, dir / (stem + "_src.xyz"));
  save_xyz(pair.target, dir / (stem + "_tgt.xyz"));
  write_file(dir / (stem + ".map"), format_index_list(pair.gt_map));
}

inline ShapePair load_pair(const std::filesystem::path& dir, std::size_t idx) {
  const std::string stem = pair_stem(idx);
  PointCloud src = load_xyz(dir / (stem + "_src.xyz"));
  PointCloud tgt = load_xyz(dir / (stem + "_tgt.xyz"));
  const auto map_path = dir / (stem + ".map");
  IndexMap map = parse_index_list(read_file(map_path), map_path.string());
  validate_permutation(map, src.size(), map_path.string());
  return ShapePair(std::move(src), std::move(tgt), std::move(map));
}

inline std::size_t count_pairs(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error("corpus directory not found: " + dir.string());
  std::size_t n = 0;
  while (std::filesystem::exists(dir / (pair_stem(n) + "_src.xyz"))) ++n;
  return n;
}

inline std::vector<ShapePair> load_corpus(const std::filesystem::path& dir) {
  const std::size_t n = count_pairs(dir);
  if (n == 0) throw Error("corpus " + dir.string() + " contains no pairs");
  std::vector<ShapePair> pairs;
  pairs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) pairs.push_back(load_pair(dir, i));
  return pairs;
}

}  // namespace lte
