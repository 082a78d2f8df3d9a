#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "lte/cli/commands.hpp"

namespace {

// Single-line, prefix-tagged error report.
int fail(const std::string& msg) {
  std::string line = msg;
  for (auto& c : line)
    if (c == '\n') c = ' ';
  std::fprintf(stderr, "ERROR: %s\n", line.c_str());
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Locally linear embedding networks for unsupervised shape correspondence"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "Config file (key = value lines under [section] headers)");
  app.add_option("--set", overrides, "Override one config key: section.key=value (repeatable)");

  std::string out, corpus, checkpoint, loss_csv, resume, src, tgt, map, pred, test_corpus, xform_out;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic corpus of shape pairs");
  gen->add_option("--out", out, "Corpus directory")->required();

  auto* train = app.add_subcommand("train", "Train the embedding network on a corpus");
  train->add_option("--corpus", corpus, "Corpus directory")->required();
  train->add_option("--checkpoint", checkpoint, "Checkpoint path (rewritten every epoch)")->required();
  train->add_option("--loss-csv", loss_csv, "Per-epoch loss log (epoch,mean_loss,lr)");
  train->add_option("--resume", resume, "Continue from this checkpoint");

  auto* match = app.add_subcommand("match", "Predict correspondences for one pair");
  match->add_option("--checkpoint", checkpoint, "Trained checkpoint")->required();
  match->add_option("--src", src, "Source .xyz")->required();
  match->add_option("--tgt", tgt, "Target .xyz")->required();
  match->add_option("--out", out, "Correspondence file")->required();

  auto* eval = app.add_subcommand("eval", "Score correspondences (from a file, or from a model over a corpus)");
  eval->add_option("--pred", pred, "Correspondence file to score");
  eval->add_option("--src", src, "Source .xyz (with --pred)");
  eval->add_option("--tgt", tgt, "Target .xyz (with --pred)");
  eval->add_option("--map", map, "Ground-truth map (with --pred)");
  eval->add_option("--checkpoint", checkpoint, "Trained checkpoint (with --corpus)");
  eval->add_option("--corpus", corpus, "Corpus to evaluate the model on");
  eval->add_option("--out", out, "Report CSV")->required();

  auto* xform = app.add_subcommand("xform-opt", "Evaluate with the optimal ground-truth linear transform");
  xform->add_option("--checkpoint", checkpoint, "Trained checkpoint")->required();
  xform->add_option("--corpus", corpus, "Corpus with ground truth")->required();
  xform->add_option("--out", out, "Report CSV for plain matching")->required();
  xform->add_option("--xform-out", xform_out, "Report CSV for transformed matching")->required();

  auto* ablate = app.add_subcommand("ablate", "Train and evaluate the loss-configuration grid");
  ablate->add_option("--corpus", corpus, "Training corpus")->required();
  ablate->add_option("--test-corpus", test_corpus, "Held-out corpus")->required();
  ablate->add_option("--out", out, "Summary CSV")->required();

  auto* weights = app.add_subcommand("lle-weights", "Dump cross-reconstruction weights for one pair");
  weights->add_option("--checkpoint", checkpoint, "Trained checkpoint")->required();
  weights->add_option("--src", src, "Source .xyz")->required();
  weights->add_option("--tgt", tgt, "Target .xyz")->required();
  weights->add_option("--out", out, "Weights CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(e.what());
  }

  try {
    lte::cli::RunConfig cfg;
    if (!config_path.empty()) lte::cli::load_config(cfg, config_path);
    for (const auto& o : overrides) lte::cli::apply_override(cfg, o);
    cfg.validate();

    std::string summary;
    if (*gen) {
      summary = lte::cli::cmd_gen_data(cfg.data, out);
    } else if (*train) {
      summary = lte::cli::cmd_train(cfg, {corpus, checkpoint, loss_csv, resume});
    } else if (*match) {
      summary = lte::cli::cmd_match(checkpoint, src, tgt, out);
    } else if (*eval) {
      if (!pred.empty()) {
        if (src.empty() || tgt.empty() || map.empty()) throw lte::Error("eval --pred needs --src, --tgt and --map");
        summary = lte::cli::cmd_eval_prediction(pred, src, tgt, map, out);
      } else if (!checkpoint.empty() && !corpus.empty()) {
        summary = lte::cli::cmd_eval_model(checkpoint, corpus, out);
      } else {
        throw lte::Error("eval needs either --pred/--src/--tgt/--map or --checkpoint/--corpus");
      }
    } else if (*xform) {
      summary = lte::cli::cmd_xform_opt(checkpoint, corpus, out, xform_out);
    } else if (*ablate) {
      summary = lte::cli::cmd_ablate(cfg, corpus, test_corpus, out);
    } else if (*weights) {
      summary = lte::cli::cmd_lle_weights(cfg, checkpoint, src, tgt, out);
    }
    std::fputs(summary.c_str(), stdout);
  } catch (const std::exception& e) {
    return fail(e.what());
  }
  return 0;
}
