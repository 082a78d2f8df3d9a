#pragma once

// Run configuration: `key = value` lines grouped under `[section]` headers.
// '#' starts a comment. Keys are validated on assignment; the merged config
// is validated as a whole before any command does work.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "lte/embed_net.hpp"
#include "lte/losses.hpp"
#include "lte/pointcloud.hpp"
#include "lte/reconstruct.hpp"
#include "lte/trainer.hpp"

namespace lte::cli {

struct DataConfig {
  std::size_t n_pairs = 100;
  std::size_t n_points = 128;
  double warp = 0.15;
  std::vector<BaseShape> shapes{BaseShape::Sphere, BaseShape::Torus};
  std::uint64_t seed = 0;
  double noise = 0.0;

  void validate() const {
    if (n_pairs < 1) throw Error("data.n_pairs must be >= 1");
    if (n_points < 8) throw Error("data.n_points must be >= 8");
    if (!(warp >= 0.0)) throw Error("data.warp must be >= 0");
    if (shapes.empty()) throw Error("data.shapes must be nonempty");
    if (!(noise >= 0.0)) throw Error("data.noise must be >= 0");
  }
};

struct RunConfig {
  DataConfig data;
  EmbedConfig embed;
  ReconConfig recon;
  LossConfig loss;
  TrainConfig train;

  void validate() const {
    data.validate();
    embed.validate();
    recon.validate();
    loss.validate();
    train.validate();
    if (embed.k_graph >= data.n_points) throw Error("embed.k_graph must be < data.n_points");
    if (recon.k >= data.n_points) throw Error("recon.k must be < data.n_points");
    if (loss.k_map >= data.n_points) throw Error("loss.k_map must be < data.n_points");
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const auto end = comma == std::string_view::npos ? s.size() : comma;
    std::string item = trim(s.substr(start, end - start));
    if (!item.empty()) out.push_back(std::move(item));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out)) {
    throw Error(key + ": expected a number, got '" + v + "'");
  }
  return out;
}

inline std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw Error(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

// Assigns `section.key`. Throws on an unknown key or malformed value.
inline void apply_setting(RunConfig& c, const std::string& dotted, const std::string& raw) {
  using detail::to_double, detail::to_uint;
  const std::string v = detail::trim(raw);
  const std::string& k = dotted;
  auto& d = c.data;
  auto& e = c.embed;
  auto& r = c.recon;
  auto& l = c.loss;
  auto& t = c.train;
  if (k == "data.n_pairs") d.n_pairs = to_uint(k, v);
  else if (k == "data.n_points") d.n_points = to_uint(k, v);
  else if (k == "data.warp") d.warp = to_double(k, v);
  else if (k == "data.seed") d.seed = to_uint(k, v);
  else if (k == "data.noise") d.noise = to_double(k, v);
  else if (k == "data.shapes") {
    d.shapes.clear();
    for (const auto& s : detail::split_list(v)) d.shapes.push_back(parse_base_shape(s));
  } else if (k == "embed.k_graph") e.k_graph = to_uint(k, v);
  else if (k == "embed.out_dim") e.out_dim = to_uint(k, v);
  else if (k == "embed.seed") e.seed = to_uint(k, v);
  else if (k == "embed.layer_dims") {
    e.layer_dims.clear();
    for (const auto& s : detail::split_list(v)) e.layer_dims.push_back(to_uint(k, s));
  } else if (k == "recon.k") r.k = to_uint(k, v);
  else if (k == "recon.gamma") r.gamma = to_double(k, v);
  else if (k == "loss.sigma") l.sigma = to_double(k, v);
  else if (k == "loss.lambda_cross") l.lambda_cross = to_double(k, v);
  else if (k == "loss.lambda_self") l.lambda_self = to_double(k, v);
  else if (k == "loss.lambda_reg") l.lambda_reg = to_double(k, v);
  else if (k == "loss.alpha") l.alpha = (v == "auto") ? std::nullopt : std::optional<double>(to_double(k, v));
  else if (k == "loss.divergence") l.divergence = parse_divergence(v);
  else if (k == "loss.k_map") l.k_map = to_uint(k, v);
  else if (k == "train.lr0") t.lr0 = to_double(k, v);
  else if (k == "train.beta1") t.beta1 = to_double(k, v);
  else if (k == "train.beta2") t.beta2 = to_double(k, v);
  else if (k == "train.eps") t.eps = to_double(k, v);
  else if (k == "train.weight_decay") t.weight_decay = to_double(k, v);
  else if (k == "train.epochs") t.epochs = to_uint(k, v);
  else if (k == "train.warmup_epochs") t.warmup_epochs = to_uint(k, v);
  else if (k == "train.batch_size") t.batch_size = to_uint(k, v);
  else if (k == "train.seed") t.seed = to_uint(k, v);
  else throw Error("unknown config key '" + k + "'");
}

// Parses "section.key=value" as given on the command line.
inline void apply_override(RunConfig& c, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw Error("--set expects section.key=value, got '" + std::string(assignment) + "'");
  apply_setting(c, detail::trim(assignment.substr(0, eq)), std::string(assignment.substr(eq + 1)));
}

inline void parse_config(RunConfig& c, std::string_view text, const std::string& origin) {
  std::string section;
  std::size_t line_no = 0, start = 0;
  while (start <= text.size()) {
    const auto nl = text.find('\n', start);
    std::string_view line = text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string body = detail::trim(line);
    const std::string where = origin + ":" + std::to_string(line_no) + ": ";
    if (!body.empty()) {
      if (body.front() == '[') {
        if (body.back() != ']' || body.size() < 3) throw Error(where + "malformed section header");
        section = detail::trim(std::string_view(body).substr(1, body.size() - 2));
      } else {
        const auto eq = body.find('=');
        if (eq == std::string::npos) throw Error(where + "expected key = value");
        if (section.empty()) throw Error(where + "key outside of any [section]");
        const std::string key = detail::trim(std::string_view(body).substr(0, eq));
        try {
          apply_setting(c, section + "." + key, body.substr(eq + 1));
        } catch (const Error& e) {
          throw Error(where + e.what());
        }
      }
    }
    if (nl == std::string_view::npos) break;
    start = nl + 1;
  }
}

inline void load_config(RunConfig& c, const std::filesystem::path& path) { parse_config(c, read_file(path), path.string()); }

inline std::string format_config(const RunConfig& c) {
  using detail::fmt;
  auto join = [](const auto& items, auto f) {
    std::string s;
    for (std::size_t i = 0; i < items.size(); ++i) s += (i ? "," : "") + f(items[i]);
    return s;
  };
  std::string o;
  o += "[data]\n";
  o += "n_pairs = " + std::to_string(c.data.n_pairs) + "\n";
  o += "n_points = " + std::to_string(c.data.n_points) + "\n";
  o += "warp = " + fmt(c.data.warp) + "\n";
  o += "shapes = " + join(c.data.shapes, [](BaseShape s) { return std::string(base_shape_name(s)); }) + "\n";
  o += "seed = " + std::to_string(c.data.seed) + "\n";
  o += "noise = " + fmt(c.data.noise) + "\n";
  o += "\n[embed]\n";
  o += "k_graph = " + std::to_string(c.embed.k_graph) + "\n";
  o += "layer_dims = " + join(c.embed.layer_dims, [](std::size_t d) { return std::to_string(d); }) + "\n";
  o += "out_dim = " + std::to_string(c.embed.out_dim) + "\n";
  o += "seed = " + std::to_string(c.embed.seed) + "\n";
  o += "\n[recon]\n";
  o += "k = " + std::to_string(c.recon.k) + "\n";
  o += "gamma = " + fmt(c.recon.gamma) + "\n";
  o += "\n[loss]\n";
  o += "sigma = " + fmt(c.loss.sigma) + "\n";
  o += "lambda_cross = " + fmt(c.loss.lambda_cross) + "\n";
  o += "lambda_self = " + fmt(c.loss.lambda_self) + "\n";
  o += "lambda_reg = " + fmt(c.loss.lambda_reg) + "\n";
  o += "alpha = " + (c.loss.alpha ? fmt(*c.loss.alpha) : std::string("auto")) + "\n";
  o += "divergence = " + std::string(divergence_name(c.loss.divergence)) + "\n";
  o += "k_map = " + std::to_string(c.loss.k_map) + "\n";
  o += "\n[train]\n";
  o += "lr0 = " + fmt(c.train.lr0) + "\n";
  o += "beta1 = " + fmt(c.train.beta1) + "\n";
  o += "beta2 = " + fmt(c.train.beta2) + "\n";
  o += "eps = " + fmt(c.train.eps) + "\n";
  o += "weight_decay = " + fmt(c.train.weight_decay) + "\n";
  o += "epochs = " + std::to_string(c.train.epochs) + "\n";
  o += "warmup_epochs = " + std::to_string(c.train.warmup_epochs) + "\n";
  o += "batch_size = " + std::to_string(c.train.batch_size) + "\n";
  o += "seed = " + std::to_string(c.train.seed) + "\n";
  return o;
}

}  // namespace lte::cli
