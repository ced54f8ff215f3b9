#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "annealprune/checkpoint.hpp"
#include "annealprune/config.hpp"
#include "annealprune/data.hpp"
#include "annealprune/network.hpp"

namespace annealprune {

struct MetricsRow {
  std::size_t run = 0;
  std::size_t epoch = 0;
  double train_acc = 0.0;
  double test_acc = 0.0;
  double loss = 0.0;
  double nonzero_frac = 0.0;
  double seconds = 0.0;
};

extern const char* const kMetricsCsvHeader;   // schema comment + columns
extern const char* const kScheduleCsvHeader;

std::string format_metrics_row(const MetricsRow& row);

struct TrainOutput {
  std::vector<std::vector<MetricsRow>> per_run;
  std::vector<MetricsRow> mean_rows;  // run field unused
  std::vector<std::string> run_csv_paths;
  std::string mean_csv_path;
  std::vector<std::string> checkpoint_paths;
};

// Loads the configured dataset pair (train, test).
std::pair<Dataset, Dataset> load_datasets(const ExperimentConfig& cfg);

// Builds the configured model for the given data dimensions.
Network build_model(const ExperimentConfig& cfg,
                    const std::vector<std::size_t>& input_shape,
                    std::size_t classes, Rng& init_rng);

// Trains cfg.repeats independent runs (seeds seed, seed+1, ...), writing
// per-run CSVs, a mean CSV, checkpoints, and a config echo into
// cfg.out_dir. Runs execute in parallel when ANNEALPRUNE_THREADS > 1.
TrainOutput cmd_train(const ExperimentConfig& cfg);

// Continues a single interrupted run from a checkpoint (repeats must be
// 1); produces the same artifacts as an uninterrupted run from that
// epoch onward.
TrainOutput cmd_train_resume(const ExperimentConfig& cfg,
                             const std::string& resume_checkpoint);

struct ScheduleRow {
  std::size_t epoch = 0;
  std::size_t iteration = 0;
  std::size_t scheduled = 0;
  double frac = 0.0;
};

// Analytic pruning envelope, no training involved.
std::vector<ScheduleRow> schedule_rows(const ExperimentConfig& cfg);

// Writes schedule.csv into cfg.out_dir; returns its path.
std::string cmd_schedule(const ExperimentConfig& cfg);

struct EvalReport {
  std::size_t total = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // [truth][prediction]
};

EvalReport cmd_eval(const std::string& checkpoint_path,
                    const ExperimentConfig& cfg);
std::string format_eval_report(const EvalReport& rep);

// Test accuracy of a network over a dataset (eval mode, fixed batching).
double eval_accuracy(const Network& net, const Dataset& ds);

}  // namespace annealprune
