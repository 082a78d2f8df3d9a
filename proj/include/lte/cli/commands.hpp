#pragma once

// Subcommand bodies. Each takes already-validated inputs, writes its outputs,
// and returns a human-readable summary for stdout.

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "lte/cli/checkpoint.hpp"
#include "lte/cli/config.hpp"
#include "lte/correspond.hpp"
#include "lte/embed_net.hpp"
#include "lte/lle.hpp"
#include "lte/pointcloud.hpp"
#include "lte/reconstruct.hpp"
#include "lte/trainer.hpp"

namespace lte::cli {

// SplitMix64 finalizer; decorrelates per-pair seeds.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t idx) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (idx + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::vector<ShapePair> generate_corpus(const DataConfig& d) {
  d.validate();
  std::vector<ShapePair> pairs;
  pairs.reserve(d.n_pairs);
  for (std::size_t i = 0; i < d.n_pairs; ++i) {
    const std::uint64_t s = mix_seed(d.seed, i);
    ShapePair p = gen_pair(d.shapes[i % d.shapes.size()], d.n_points, d.warp, s);
    if (d.noise > 0.0) p = ShapePair(p.source, add_noise(p.target, d.noise, s ^ 0x6e6f697365ull), p.gt_map, p.warp);
    pairs.push_back(std::move(p));
  }
  return pairs;
}

inline std::string cmd_gen_data(const DataConfig& d, const std::filesystem::path& out_dir) {
  const auto pairs = generate_corpus(d);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) throw Error("cannot create corpus directory " + out_dir.string());
  for (std::size_t i = 0; i < pairs.size(); ++i) save_pair(pairs[i], out_dir, i);
  std::string shapes;
  for (std::size_t i = 0; i < d.shapes.size(); ++i) shapes += (i ? "," : "") + std::string(base_shape_name(d.shapes[i]));
  char buf[256];
  std::snprintf(buf, sizeof buf, "wrote %zu pairs (%zu points, warp %g, shapes %s, seed %llu) to %s\n", pairs.size(),
                d.n_points, d.warp, shapes.c_str(), static_cast<unsigned long long>(d.seed), out_dir.string().c_str());
  return buf;
}

inline std::string format_loss_log(const std::vector<EpochLog>& log) {
  std::string out = "epoch,mean_loss,lr\n";
  char buf[96];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", e.epoch, e.mean_loss, e.lr);
    out += buf;
  }
  return out;
}

struct TrainPaths {
  std::filesystem::path corpus;
  std::filesystem::path checkpoint;
  std::filesystem::path loss_csv;
  std::filesystem::path resume;  // empty: start fresh
};

inline std::string cmd_train(const RunConfig& cfg, const TrainPaths& paths) {
  cfg.validate();
  const auto data = load_corpus(paths.corpus);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t n = data[i].source.size();
    if (cfg.embed.k_graph >= n || cfg.recon.k >= n || cfg.loss.k_map >= n) {
      throw Error("pair " + std::to_string(i) + " has " + std::to_string(n) + " points, too few for the configured K");
    }
  }
  TrainState state;
  if (!paths.resume.empty()) {
    state = load_checkpoint(paths.resume).to_state();
    if (!(state.params.config == cfg.embed)) throw Error("resume: checkpoint embed config differs from the run config");
    if (state.epoch > cfg.train.epochs) throw Error("resume: checkpoint is past train.epochs");
  } else {
    state.params = init_params(cfg.embed);
    state.adam = AdamState::fresh(state.params.tensors);
  }
  auto persist = [&](const TrainState& s) {
    save_checkpoint(Checkpoint::from_state(s), paths.checkpoint);
    if (!paths.loss_csv.empty()) write_file(paths.loss_csv, format_loss_log(s.log));
    const auto& e = s.log.back();
    std::fprintf(stderr, "epoch %zu/%zu  loss %.6g  lr %.3g\n", e.epoch, cfg.train.epochs, e.mean_loss, e.lr);
  };
  train_continue(state, data, cfg.recon, cfg.loss, cfg.train, persist);
  save_checkpoint(Checkpoint::from_state(state), paths.checkpoint);
  if (!paths.loss_csv.empty()) write_file(paths.loss_csv, format_loss_log(state.log));
  char buf[256];
  std::snprintf(buf, sizeof buf, "trained %zu epochs on %zu pairs; final mean loss %.6g; checkpoint %s\n", state.epoch,
                data.size(), state.log.empty() ? 0.0 : state.log.back().mean_loss, paths.checkpoint.string().c_str());
  return buf;
}

struct PairEmbedding {
  Tensor fx, fy;
};

inline PairEmbedding embed_pair(const EmbedParams& params, const PointCloud& src, const PointCloud& tgt) {
  return {embed(params, normalize(src)), embed(params, normalize(tgt))};
}

inline Correspondence predict(const EmbedParams& params, const PointCloud& src, const PointCloud& tgt) {
  auto e = embed_pair(params, src, tgt);
  return match_nn(e.fx, e.fy);
}

inline std::string cmd_match(const std::filesystem::path& ckpt, const std::filesystem::path& src,
                             const std::filesystem::path& tgt, const std::filesystem::path& out) {
  const auto c = load_checkpoint(ckpt);
  const auto x = load_xyz(src), y = load_xyz(tgt);
  const auto map = predict(c.params, x, y);
  write_file(out, format_correspondence(map));
  return "wrote " + std::to_string(map.size()) + " correspondences to " + out.string() + "\n";
}

// Pointwise mean over reports that share an epsilon grid.
inline EvalReport average_reports(const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw Error("average_reports: nothing to average");
  EvalReport avg = reports[0];
  for (std::size_t r = 1; r < reports.size(); ++r) {
    avg.err += reports[r].err;
    avg.dist_max += reports[r].dist_max;
    for (std::size_t i = 0; i < avg.acc_curve.size(); ++i) avg.acc_curve[i].accuracy += reports[r].acc_curve[i].accuracy;
  }
  const double inv = 1.0 / static_cast<double>(reports.size());
  avg.err *= inv;
  avg.dist_max *= inv;
  for (auto& p : avg.acc_curve) p.accuracy *= inv;
  return avg;
}

struct CorpusEval {
  EvalReport plain, transformed;
  std::vector<EvalReport> plain_per_pair, transformed_per_pair;
};

inline CorpusEval evaluate_corpus(const EmbedParams& params, const std::vector<ShapePair>& pairs, bool with_transform) {
  CorpusEval out;
  for (const auto& p : pairs) {
    auto e = embed_pair(params, p.source, p.target);
    out.plain_per_pair.push_back(evaluate(match_nn(e.fx, e.fy), p));
    if (with_transform) {
      const Tensor a = optimal_linear_transform(e.fx, e.fy, p.gt_map);
      out.transformed_per_pair.push_back(evaluate(match_with_transform(e.fx, e.fy, a), p));
    }
  }
  out.plain = average_reports(out.plain_per_pair);
  if (with_transform) out.transformed = average_reports(out.transformed_per_pair);
  return out;
}

inline std::string acc_summary(const char* label, const EvalReport& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s: err %.6g  acc@1%% %.4f  acc@5%% %.4f  acc@10%% %.4f\n", label, r.err, r.acc(0.01),
                r.acc(0.05), r.acc(0.10));
  return buf;
}

// Scores an existing correspondence file against a pair's ground truth.
inline std::string cmd_eval_prediction(const std::filesystem::path& pred, const std::filesystem::path& src,
                                       const std::filesystem::path& tgt, const std::filesystem::path& map,
                                       const std::filesystem::path& out) {
  const auto x = load_xyz(src), y = load_xyz(tgt);
  IndexMap gt = parse_index_list(read_file(map), map.string());
  validate_permutation(gt, x.size(), map.string());
  ShapePair pair(x, y, std::move(gt));
  const auto c = parse_correspondence(read_file(pred), pred.string());
  const auto r = evaluate(c, pair);
  write_file(out, format_report(r));
  return acc_summary("eval", r);
}

inline std::string cmd_eval_model(const std::filesystem::path& ckpt, const std::filesystem::path& corpus,
                                  const std::filesystem::path& out) {
  const auto c = load_checkpoint(ckpt);
  const auto r = evaluate_corpus(c.params, load_corpus(corpus), false).plain;
  write_file(out, format_report(r));
  return acc_summary("eval", r);
}

inline std::string cmd_xform_opt(const std::filesystem::path& ckpt, const std::filesystem::path& corpus,
                                 const std::filesystem::path& plain_out, const std::filesystem::path& xform_out) {
  const auto c = load_checkpoint(ckpt);
  const auto r = evaluate_corpus(c.params, load_corpus(corpus), true);
  write_file(plain_out, format_report(r.plain));
  write_file(xform_out, format_report(r.transformed));
  return acc_summary("plain", r.plain) + acc_summary("transformed", r.transformed);
}

struct AblationSetting {
  std::string name;
  double lambda_cross, lambda_self, lambda_reg;
  Divergence divergence;
};

inline std::vector<AblationSetting> ablation_grid() {
  return {
      {"self", 0.0, 1.0, 0.0, Divergence::CS},
      {"cross", 1.0, 0.0, 0.0, Divergence::CS},
      {"self+cross", 1.0, 1.0, 0.0, Divergence::CS},
      {"full-cd", 1.0, 1.0, 10.0, Divergence::CD},
      {"full-emd", 1.0, 1.0, 10.0, Divergence::EMD},
      {"full-cs", 1.0, 1.0, 10.0, Divergence::CS},
  };
}

inline LossConfig ablation_loss(const LossConfig& base, const AblationSetting& s) {
  LossConfig l = base;
  l.lambda_cross = s.lambda_cross;
  l.lambda_self = s.lambda_self;
  l.lambda_reg = s.lambda_reg;
  l.divergence = s.divergence;
  return l;
}

struct AblationRow {
  AblationSetting setting;
  double final_loss = 0.0;
  EvalReport report;
};

inline std::string format_ablation(const std::vector<AblationRow>& rows) {
  std::string out = "config,lambda_cross,lambda_self,lambda_reg,divergence,final_loss,err,acc_1,acc_5,acc_10\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%g,%g,%g,%s,%.10g,%.10g,%.6f,%.6f,%.6f\n", r.setting.name.c_str(),
                  r.setting.lambda_cross, r.setting.lambda_self, r.setting.lambda_reg,
                  divergence_name(r.setting.divergence), r.final_loss, r.report.err, r.report.acc(0.01),
                  r.report.acc(0.05), r.report.acc(0.10));
    out += buf;
  }
  return out;
}

inline std::vector<AblationRow> run_ablation(const RunConfig& cfg, const std::vector<ShapePair>& train_set,
                                             const std::vector<ShapePair>& test_set,
                                             const std::vector<AblationSetting>& grid = ablation_grid()) {
  std::vector<AblationRow> rows;
  for (const auto& s : grid) {
    std::fprintf(stderr, "ablate: %s\n", s.name.c_str());
    const LossConfig l = ablation_loss(cfg.loss, s);
    TrainState st = train(train_set, cfg.embed, cfg.recon, l, cfg.train);
    rows.push_back({s, st.log.empty() ? 0.0 : st.log.back().mean_loss, evaluate_corpus(st.params, test_set, false).plain});
  }
  return rows;
}

inline std::string cmd_ablate(const RunConfig& cfg, const std::filesystem::path& train_dir,
                              const std::filesystem::path& test_dir, const std::filesystem::path& out) {
  cfg.validate();
  const auto rows = run_ablation(cfg, load_corpus(train_dir), load_corpus(test_dir));
  const std::string table = format_ablation(rows);
  write_file(out, table);
  return table;
}

// Debug dump of cross weights (source rows against target neighbors).
inline std::string cmd_lle_weights(const RunConfig& cfg, const std::filesystem::path& ckpt,
                                   const std::filesystem::path& src, const std::filesystem::path& tgt,
                                   const std::filesystem::path& out) {
  const auto c = load_checkpoint(ckpt);
  const auto x = normalize(load_xyz(src)), y = normalize(load_xyz(tgt));
  const auto e = embed_pair(c.params, x, y);
  const auto r = cross_reconstruct(e.fx, e.fy, y.to_tensor(), cfg.recon.k, cfg.recon.gamma);
  std::string csv = "source,rank,target,weight\n";
  char buf[96];
  const auto& t = r.table();
  for (std::size_t i = 0; i < t.rows; ++i) {
    for (std::size_t l = 0; l < t.k; ++l) {
      std::snprintf(buf, sizeof buf, "%zu,%zu,%zu,%.17g\n", i, l, t.index(i, l), r.weights.weight(i, l));
      csv += buf;
    }
  }
  write_file(out, csv);
  return "wrote " + std::to_string(t.rows * t.k) + " weights to " + out.string() + "\n";
}

}  // namespace lte::cli
