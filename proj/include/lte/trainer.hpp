#pragma once

// Training loop: AdamW with decoupled weight decay, cosine learning-rate decay
// after a linear warm-up, mini-batches of shape pairs.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "lte/embed_net.hpp"
#include "lte/losses.hpp"
#include "lte/pointcloud.hpp"
#include "lte/reconstruct.hpp"
#include "lte/tensor.hpp"

namespace lte {

struct TrainConfig {
  double lr0 = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 5e-4;
  std::size_t epochs = 30;
  std::size_t warmup_epochs = 3;
  std::size_t batch_size = 4;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lr0 > 0.0)) throw Error("train.lr0 must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw Error("train.beta1/beta2 must be in [0,1)");
    if (!(eps > 0.0)) throw Error("train.eps must be > 0");
    if (!(weight_decay >= 0.0)) throw Error("train.weight_decay must be >= 0");
    if (warmup_epochs > epochs) throw Error("train.warmup_epochs must be <= train.epochs");
    if (batch_size < 1) throw Error("train.batch_size must be >= 1");
  }
};

// Learning rate at training progress `frac` in [0, 1].
inline double lr_at(double frac, const TrainConfig& cfg) {
  frac = std::clamp(frac, 0.0, 1.0);
  if (cfg.epochs == 0) return cfg.lr0;
  const double warm = static_cast<double>(cfg.warmup_epochs) / static_cast<double>(cfg.epochs);
  if (warm > 0.0 && frac < warm) return cfg.lr0 * frac / warm;
  if (warm >= 1.0) return cfg.lr0;
  const double progress = (frac - warm) / (1.0 - warm);
  return cfg.lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

struct AdamState {
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m, v;

  static AdamState fresh(const std::vector<Tensor>& params) {
    AdamState s;
    for (const auto& p : params) {
      s.m.emplace_back(p.numel(), 0.0);
      s.v.emplace_back(p.numel(), 0.0);
    }
    return s;
  }

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

// One AdamW update in place. Throws before touching anything if a gradient
// is non-finite.
inline void optimizer_step(std::vector<Tensor>& params, const std::vector<std::string>& names,
                           const std::vector<std::vector<double>>& grads, AdamState& state, double lr,
                           const TrainConfig& cfg) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw Error("optimizer_step: parameter/gradient/state count mismatch");
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (grads[p].size() != params[p].numel()) throw Error("optimizer_step: gradient size mismatch for " + names.at(p));
    for (double g : grads[p])
      if (!std::isfinite(g)) throw Error("optimizer_step: non-finite gradient for parameter " + names.at(p));
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t p = 0; p < params.size(); ++p) {
    std::vector<double> w = params[p].values();
    auto& m = state.m[p];
    auto& v = state.v[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double g = grads[p][i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      const double mh = m[i] / c1;
      const double vh = v[i] / c2;
      w[i] -= lr * (mh / (std::sqrt(vh) + cfg.eps) + cfg.weight_decay * w[i]);
    }
    params[p] = Tensor(params[p].shape(), std::move(w));
  }
}

// Forward pass of the full objective for one pair. Clouds are normalized
// independently first.
struct PairForward {
  PairOutputs outputs;
  ObjectiveTerms terms;
};

inline PairForward pair_objective(const EmbedParams& params, const ShapePair& pair, const ReconConfig& recon,
                                  const LossConfig& loss) {
  PointCloud x = normalize(pair.source), y = normalize(pair.target);
  const Tensor xt = x.to_tensor(), yt = y.to_tensor();
  Tensor fx = embed_forward(params, xt).features;
  Tensor fy = embed_forward(params, yt).features;
  PairOutputs o{x, y, Tensor(), Tensor(), std::nullopt, std::nullopt};
  o.y_hat = cross_reconstruct(fx, fy, yt, recon.k, recon.gamma).rebuilt_cloud;
  o.x_hat = cross_reconstruct(fy, fx, xt, recon.k, recon.gamma).rebuilt_cloud;
  if (loss.lambda_self > 0.0) {
    o.x_tilde = self_reconstruct(fx, xt, recon.k, recon.gamma).rebuilt_cloud;
    o.y_tilde = self_reconstruct(fy, yt, recon.k, recon.gamma).rebuilt_cloud;
  }
  ObjectiveTerms terms = total_objective_terms(o, loss);
  return {std::move(o), std::move(terms)};
}

struct PairGradient {
  double loss = 0.0;
  std::vector<std::vector<double>> grads;
};

inline PairGradient pair_gradient(const EmbedParams& params, const ShapePair& pair, const ReconConfig& recon,
                                  const LossConfig& loss) {
  Tape tape;
  EmbedParams tracked = params.track(tape);
  PairForward f = pair_objective(tracked, pair, recon, loss);
  PairGradient out;
  out.loss = f.terms.total.item();
  if (!f.terms.total.tracked()) {
    for (const auto& p : params.tensors) out.grads.emplace_back(p.numel(), 0.0);
    return out;
  }
  Gradients g = tape.backward(f.terms.total);
  for (const auto& p : tracked.tensors) out.grads.push_back(g.wrt(p).values());
  return out;
}

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double mean_loss = 0.0;
  double lr = 0.0;        // rate of the epoch's first update

  friend bool operator==(const EpochLog&, const EpochLog&) = default;
};

struct TrainState {
  EmbedParams params;
  AdamState adam;
  std::size_t epoch = 0;  // completed epochs
  std::vector<EpochLog> log;
};

// Worker count: LTE_THREADS if set, else hardware concurrency.
inline std::size_t worker_threads() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("LTE_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v >= 1) n = static_cast<std::size_t>(v);
  }
  return n;
}

// Pair visiting order for an epoch; depends only on (seed, epoch).
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x5eedu};
  std::mt19937_64 rng(seq);
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  return order;
}

inline std::size_t steps_per_epoch(std::size_t n_pairs, const TrainConfig& cfg) {
  return (n_pairs + cfg.batch_size - 1) / cfg.batch_size;
}

using EpochCallback = std::function<void(const TrainState&)>;

// Continues `state` until cfg.epochs epochs are complete.
inline void train_continue(TrainState& state, const std::vector<ShapePair>& data, const ReconConfig& recon,
                           const LossConfig& loss, const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  if (data.empty()) throw Error("train: dataset is empty");
  recon.validate();
  loss.validate();
  cfg.validate();
  const std::size_t per_epoch = steps_per_epoch(data.size(), cfg);
  const double total_steps = static_cast<double>(per_epoch * cfg.epochs);
  const std::size_t threads = std::min(worker_threads(), cfg.batch_size);

  while (state.epoch < cfg.epochs) {
    const auto order = epoch_order(data.size(), cfg.seed, state.epoch);
    double loss_sum = 0.0;
    EpochLog entry{state.epoch + 1, 0.0, 0.0};
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const std::size_t lo = b * cfg.batch_size, hi = std::min(data.size(), lo + cfg.batch_size);
      std::vector<PairGradient> results(hi - lo);
      std::vector<std::exception_ptr> errors(hi - lo);
      auto run = [&](std::size_t slot) {
        const std::size_t idx = order[lo + slot];
        try {
          results[slot] = pair_gradient(state.params, data[idx], recon, loss);
        } catch (const std::exception& e) {
          errors[slot] = std::make_exception_ptr(Error("train: pair " + std::to_string(idx) + ": " + e.what()));
        }
      };
      if (threads <= 1 || results.size() <= 1) {
        for (std::size_t s = 0; s < results.size(); ++s) run(s);
      } else {
        std::vector<std::thread> pool;
        const std::size_t nt = std::min(threads, results.size());
        for (std::size_t t = 0; t < nt; ++t) {
          pool.emplace_back([&, t] {
            for (std::size_t s = t; s < results.size(); s += nt) run(s);
          });
        }
        for (auto& th : pool) th.join();
      }
      for (auto& e : errors)
        if (e) std::rethrow_exception(e);

      // Mean over the batch, accumulated in pair order.
      const double inv = 1.0 / static_cast<double>(results.size());
      std::vector<std::vector<double>> grads = results[0].grads;
      for (std::size_t s = 1; s < results.size(); ++s)
        for (std::size_t p = 0; p < grads.size(); ++p)
          for (std::size_t i = 0; i < grads[p].size(); ++i) grads[p][i] += results[s].grads[p][i];
      for (auto& g : grads)
        for (auto& v : g) v *= inv;
      for (const auto& r : results) {
        if (!std::isfinite(r.loss)) throw Error("train: non-finite loss in epoch " + std::to_string(state.epoch + 1));
        loss_sum += r.loss;
      }

      const std::size_t step = state.epoch * per_epoch + b + 1;
      const double lr = lr_at(static_cast<double>(step) / total_steps, cfg);
      if (b == 0) entry.lr = lr;
      optimizer_step(state.params.tensors, state.params.names, grads, state.adam, lr, cfg);
    }
    entry.mean_loss = loss_sum / static_cast<double>(data.size());
    state.log.push_back(entry);
    ++state.epoch;
    if (on_epoch) on_epoch(state);
  }
}

inline TrainState train(const std::vector<ShapePair>& data, const EmbedConfig& embed_cfg, const ReconConfig& recon,
                        const LossConfig& loss, const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  TrainState state;
  state.params = init_params(embed_cfg);
  state.adam = AdamState::fresh(state.params.tensors);
  train_continue(state, data, recon, loss, cfg, on_epoch);
  return state;
}

}  // namespace lte
