// Experiment driver: train / schedule / eval / compress subcommands over
// key=value config files. Exits 0 on success, nonzero with a single-line
// diagnostic on error.

#include <cstdio>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "annealprune/checkpoint.hpp"
#include "annealprune/config.hpp"
#include "annealprune/error.hpp"
#include "annealprune/experiment.hpp"

namespace {

using annealprune::ExperimentConfig;

ExperimentConfig load_config(const std::string& path,
                             const std::optional<std::uint64_t>& seed,
                             const std::optional<std::string>& out,
                             bool timing) {
  ExperimentConfig cfg = annealprune::parse_config_file(path);
  if (seed.has_value()) cfg.seed = *seed;
  if (out.has_value()) cfg.out_dir = *out;
  if (timing) cfg.timing = true;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"annealed-pruning training and compression toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::string checkpoint_path;
  std::string resume_path;
  bool timing = false;

  CLI::App* train = app.add_subcommand(
      "train", "train repeated runs and emit metrics CSVs + checkpoints");
  train->add_option("--config", config_path, "config file")->required();
  train->add_option("--seed", seed, "override train.seed");
  train->add_option("--out", out_dir, "override train.out");
  train->add_option("--resume", resume_path,
                    "continue a single run from a checkpoint");
  train->add_flag("--timing", timing,
                  "record wall-clock seconds in the CSV (off keeps output "
                  "byte-reproducible)");

  CLI::App* schedule = app.add_subcommand(
      "schedule", "emit the analytic pruning schedule without training");
  schedule->add_option("--config", config_path, "config file")->required();
  schedule->add_option("--out", out_dir, "override train.out");

  CLI::App* eval =
      app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval->add_option("--checkpoint", checkpoint_path, "checkpoint file")
      ->required();
  eval->add_option("--config", config_path, "config file (dataset section)")
      ->required();

  CLI::App* compress = app.add_subcommand(
      "compress", "report parameter counts and storage for a checkpoint");
  compress->add_option("--checkpoint", checkpoint_path, "checkpoint file")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      const ExperimentConfig cfg =
          load_config(config_path, seed, out_dir, timing);
      const annealprune::TrainOutput out =
          resume_path.empty()
              ? annealprune::cmd_train(cfg)
              : annealprune::cmd_train_resume(cfg, resume_path);
      std::printf("wrote %zu run CSVs and %s\n", out.run_csv_paths.size(),
                  out.mean_csv_path.c_str());
      for (const auto& p : out.checkpoint_paths) {
        std::printf("checkpoint: %s\n", p.c_str());
      }
    } else if (schedule->parsed()) {
      const ExperimentConfig cfg =
          load_config(config_path, seed, out_dir, false);
      const std::string path = annealprune::cmd_schedule(cfg);
      std::printf("wrote %s\n", path.c_str());
    } else if (eval->parsed()) {
      const ExperimentConfig cfg =
          load_config(config_path, std::nullopt, std::nullopt, false);
      const annealprune::EvalReport rep =
          annealprune::cmd_eval(checkpoint_path, cfg);
      std::fputs(annealprune::format_eval_report(rep).c_str(), stdout);
    } else if (compress->parsed()) {
      const annealprune::CompressionReport rep =
          annealprune::compression_report(checkpoint_path);
      std::fputs(annealprune::format_compression_table(rep).c_str(), stdout);
      std::fputs(annealprune::format_compression_kv(rep).c_str(), stdout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
