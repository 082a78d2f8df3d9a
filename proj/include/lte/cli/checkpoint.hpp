#pragma once

// Binary checkpoint, all integers and floats little-endian:
//
//   "LTEC"  u32 version
//   embed config   u64 k_graph, u64 n_layers, u64 dims[n_layers], u64 out_dim, u64 seed
//   parameters     u64 count, then per tensor:
//                    u32 name_len, name bytes, u32 ndim, u64 dims[ndim], f64 values[]
//   optimizer      u64 step, then per tensor f64 m[], f64 v[]
//   progress       u64 completed epochs, u64 log rows, per row: u64 epoch, f64 mean_loss, f64 lr

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "lte/embed_net.hpp"
#include "lte/trainer.hpp"

namespace lte::cli {

constexpr char kCheckpointMagic[4] = {'L', 'T', 'E', 'C'};
constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  EmbedParams params;
  AdamState adam;
  std::uint64_t epoch = 0;
  std::vector<EpochLog> log;

  static Checkpoint from_state(const TrainState& s) { return {s.params, s.adam, s.epoch, s.log}; }
  TrainState to_state() const { return {params, adam, static_cast<std::size_t>(epoch), log}; }
};

namespace detail {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <class T>
  void le(T v) {
    static_assert(std::is_integral_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  void f64s(const std::vector<double>& v) {
    for (double x : v) f64(x);
  }
  const std::string& str() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(const std::string& data, std::string origin) : data_(data), origin_(std::move(origin)) {}
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw Error(origin_ + ": truncated checkpoint");
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  template <class T>
  T le() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return v;
  }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  std::vector<double> f64s(std::size_t n) {
    need(n * 8);
    std::vector<double> v(n);
    for (auto& x : v) x = f64();
    return v;
  }
  std::size_t count(const char* what, std::size_t limit) {
    const auto v = le<std::uint64_t>();
    if (v > limit) throw Error(origin_ + ": implausible " + what + " " + std::to_string(v));
    return static_cast<std::size_t>(v);
  }
  bool done() const { return pos_ == data_.size(); }
  const std::string& origin() const { return origin_; }

 private:
  const std::string& data_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& c) {
  detail::Writer w;
  w.bytes(kCheckpointMagic, 4);
  w.le<std::uint32_t>(kCheckpointVersion);
  const auto& cfg = c.params.config;
  w.le<std::uint64_t>(cfg.k_graph);
  w.le<std::uint64_t>(cfg.layer_dims.size());
  for (auto d : cfg.layer_dims) w.le<std::uint64_t>(d);
  w.le<std::uint64_t>(cfg.out_dim);
  w.le<std::uint64_t>(cfg.seed);
  w.le<std::uint64_t>(c.params.tensors.size());
  for (std::size_t i = 0; i < c.params.tensors.size(); ++i) {
    const auto& name = c.params.names[i];
    const auto& t = c.params.tensors[i];
    w.le<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.le<std::uint32_t>(static_cast<std::uint32_t>(t.dim()));
    for (auto d : t.shape()) w.le<std::uint64_t>(d);
    w.f64s(t.values());
  }
  w.le<std::uint64_t>(c.adam.step);
  for (std::size_t i = 0; i < c.params.tensors.size(); ++i) {
    w.f64s(c.adam.m[i]);
    w.f64s(c.adam.v[i]);
  }
  w.le<std::uint64_t>(c.epoch);
  w.le<std::uint64_t>(c.log.size());
  for (const auto& e : c.log) {
    w.le<std::uint64_t>(e.epoch);
    w.f64(e.mean_loss);
    w.f64(e.lr);
  }
  return w.str();
}

inline Checkpoint deserialize_checkpoint(const std::string& data, const std::string& origin) {
  detail::Reader r(data, origin);
  if (r.bytes(4) != std::string(kCheckpointMagic, 4)) throw Error(origin + ": not a checkpoint (bad magic)");
  const auto version = r.le<std::uint32_t>();
  if (version != kCheckpointVersion) throw Error(origin + ": unsupported checkpoint version " + std::to_string(version));
  constexpr std::size_t kLimit = std::size_t{1} << 32;
  Checkpoint c;
  EmbedConfig cfg;
  cfg.k_graph = r.count("k_graph", kLimit);
  cfg.layer_dims.resize(r.count("layer count", 4096));
  for (auto& d : cfg.layer_dims) d = r.count("layer width", kLimit);
  cfg.out_dim = r.count("out_dim", kLimit);
  cfg.seed = r.le<std::uint64_t>();
  cfg.validate();
  const auto layout = param_layout(cfg);
  const std::size_t n = r.count("tensor count", 1 << 20);
  if (n != layout.size()) throw Error(origin + ": expected " + std::to_string(layout.size()) + " tensors, found " + std::to_string(n));
  c.params.config = cfg;
  for (std::size_t i = 0; i < n; ++i) {
    std::string name = r.bytes(r.le<std::uint32_t>());
    Shape shape(r.le<std::uint32_t>());
    for (auto& d : shape) d = r.count("dimension", kLimit);
    if (name != layout[i].first || shape != layout[i].second) {
      throw Error(origin + ": tensor " + std::to_string(i) + " is " + name + shape_str(shape) + ", expected " +
                  layout[i].first + shape_str(layout[i].second));
    }
    c.params.names.push_back(std::move(name));
    c.params.tensors.emplace_back(shape, r.f64s(numel(shape)));
  }
  c.adam.step = r.le<std::uint64_t>();
  for (const auto& t : c.params.tensors) {
    c.adam.m.push_back(r.f64s(t.numel()));
    c.adam.v.push_back(r.f64s(t.numel()));
  }
  c.epoch = r.le<std::uint64_t>();
  c.log.resize(r.count("log length", kLimit));
  for (auto& e : c.log) {
    e.epoch = r.count("log epoch", kLimit);
    e.mean_loss = r.f64();
    e.lr = r.f64();
  }
  if (!r.done()) throw Error(origin + ": trailing bytes after checkpoint");
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  write_file(path, serialize_checkpoint(c));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_file(path), path.string());
}

}  // namespace lte::cli
