#include "annealprune/experiment.hpp"

#include <cstdio>
#include <fstream>
#include <gtest/gtest.h>
#include <sstream>

#include "annealprune/error.hpp"
#include "testing/fixtures.hpp"

using namespace annealprune;
using annealprune::testing::fresh_dir;

namespace {

std::string slurp_text(const std::string& path) {
  std::ifstream in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::uint8_t> slurp_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in),
          std::istreambuf_iterator<char>()};
}

// Small synth experiment used across tests.
ExperimentConfig toy_config(const std::string& out) {
  ExperimentConfig cfg;
  cfg.dataset = DatasetKind::Synth;
  cfg.synth_classes = 3;
  cfg.synth_per_class = 30;
  cfg.synth_test_per_class = 10;
  cfg.synth_dim = 8;
  cfg.synth_spread = 0.08;
  cfg.synth_seed = 5;
  cfg.model = ModelKind::Mlp;
  cfg.hidden = {16};
  cfg.regularizer = RegularizerKind::None;
  cfg.epochs = 3;
  cfg.batch_size = 16;
  cfg.lr = 0.05;
  cfg.seed = 11;
  cfg.repeats = 2;
  cfg.out_dir = out;
  return cfg;
}

// Parses data rows of a metrics CSV (skips comment + column header).
std::vector<std::vector<double>> parse_csv(const std::string& text) {
  std::vector<std::vector<double>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || std::isalpha(line[0])) continue;
    std::vector<double> row;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(std::move(row));
  }
  return rows;
}

TEST(Config, ParsesSectionsAndOverrides) {
  const std::string text =
      "[dataset]\n"
      "kind = synth\n"
      "classes = 4\n"
      "per_class = 10\n"
      "dim = 6\n"
      "spread = 0.2\n"
      "\n"
      "[model]\n"
      "kind = mlp\n"
      "hidden = 32,16\n"
      "\n"
      "[regularizer]\n"
      "kind = ap\n"
      "p = 0.2\n"
      "mode = prune-smallest\n"
      "\n"
      "[train]\n"
      "epochs = 12\n"
      "batch = 8\n"
      "lr = 0.02\n"
      "seed = 3\n"
      "repeats = 2\n"
      "out = /tmp/x\n";
  const ExperimentConfig cfg = parse_config_text(text, "test");
  EXPECT_EQ(cfg.synth_classes, 4u);
  EXPECT_EQ(cfg.hidden, (std::vector<std::size_t>{32, 16}));
  EXPECT_EQ(cfg.regularizer, RegularizerKind::Ap);
  EXPECT_DOUBLE_EQ(cfg.ap.keep_fraction, 0.2);
  EXPECT_EQ(cfg.ap.mode, PruneMode::Smallest);
  EXPECT_EQ(cfg.epochs, 12u);
  EXPECT_DOUBLE_EQ(cfg.lr, 0.02);
}

TEST(Config, UnknownKeyRejectedBeforeTraining) {
  EXPECT_THROW(
      parse_config_text("[train]\nepoch = 3\nout = /tmp/x\n", "test"),
      ConfigError);
  EXPECT_THROW(parse_config_text("[nope]\nx = 1\n", "test"), ConfigError);
  EXPECT_THROW(parse_config_text("keyless = 1\n", "test"), ConfigError);
}

TEST(Config, InvalidValuesRejected) {
  EXPECT_THROW(parse_config_text("[train]\nepochs = banana\n", "test"),
               ConfigError);
  EXPECT_THROW(parse_config_text("[train]\nepochs = 0\n", "test"),
               ConfigError);
  // AP needs room for start + post epochs.
  EXPECT_THROW(
      parse_config_text("[regularizer]\nkind = ap\n[train]\nepochs = 4\n",
                        "test"),
      ConfigError);
}

TEST(Config, RenderedEchoReparsesIdentically) {
  ExperimentConfig cfg = toy_config("/tmp/echo");
  cfg.regularizer = RegularizerKind::Ap;
  cfg.ap.start = 1;
  cfg.ap.post = 1;
  cfg.epochs = 4;
  const std::string echoed = render_config(cfg);
  const ExperimentConfig back = parse_config_text(echoed, "echo");
  EXPECT_EQ(render_config(back), echoed);
}

TEST(CmdTrain, SmokeRunEmitsOneRowPerEpochPerRun) {
  ExperimentConfig cfg = toy_config(fresh_dir("train_smoke"));
  cfg.epochs = 1;
  const TrainOutput out = cmd_train(cfg);
  ASSERT_EQ(out.per_run.size(), 2u);
  EXPECT_EQ(out.per_run[0].size(), 1u);
  EXPECT_EQ(out.per_run[1].size(), 1u);
  for (const auto& path : out.run_csv_paths) {
    EXPECT_TRUE(std::filesystem::exists(path)) << path;
  }
  EXPECT_TRUE(std::filesystem::exists(cfg.out_dir + "/config.txt"));
  // Accuracies live in [0,1]; nonzero fraction starts near 1.
  const MetricsRow& row = out.per_run[0][0];
  EXPECT_GE(row.train_acc, 0.0);
  EXPECT_LE(row.train_acc, 1.0);
  EXPECT_GT(row.nonzero_frac, 0.9);
}

TEST(CmdTrain, IdenticalConfigAndSeedGiveByteIdenticalArtifacts) {
  ExperimentConfig a = toy_config(fresh_dir("determinism_a"));
  ExperimentConfig b = toy_config(fresh_dir("determinism_b"));
  a.regularizer = b.regularizer = RegularizerKind::Ap;
  a.ap.start = b.ap.start = 1;
  a.ap.post = b.ap.post = 1;
  a.epochs = b.epochs = 4;
  const TrainOutput ra = cmd_train(a);
  const TrainOutput rb = cmd_train(b);
  for (std::size_t r = 0; r < ra.run_csv_paths.size(); ++r) {
    EXPECT_EQ(slurp_text(ra.run_csv_paths[r]),
              slurp_text(rb.run_csv_paths[r]));
    EXPECT_EQ(slurp_bytes(ra.checkpoint_paths[r]),
              slurp_bytes(rb.checkpoint_paths[r]));
  }
  EXPECT_EQ(slurp_text(ra.mean_csv_path), slurp_text(rb.mean_csv_path));
}

TEST(CmdTrain, DifferentSeedsGiveDifferentRuns) {
  ExperimentConfig a = toy_config(fresh_dir("seeds_a"));
  ExperimentConfig b = toy_config(fresh_dir("seeds_b"));
  b.seed = a.seed + 100;
  const TrainOutput ra = cmd_train(a);
  const TrainOutput rb = cmd_train(b);
  EXPECT_NE(slurp_text(ra.run_csv_paths[0]),
            slurp_text(rb.run_csv_paths[0]));
}

TEST(CmdTrain, MeanCsvIsArithmeticMeanOfRuns) {
  ExperimentConfig cfg = toy_config(fresh_dir("mean_csv"));
  cfg.repeats = 3;
  const TrainOutput out = cmd_train(cfg);

  std::vector<std::vector<std::vector<double>>> runs;
  for (const auto& path : out.run_csv_paths) {
    runs.push_back(parse_csv(slurp_text(path)));
  }
  const auto mean_rows = parse_csv(slurp_text(out.mean_csv_path));
  ASSERT_EQ(mean_rows.size(), cfg.epochs);
  for (std::size_t i = 0; i < mean_rows.size(); ++i) {
    // mean CSV columns: epoch, train_acc, test_acc, loss, nonzero, seconds
    for (std::size_t col = 1; col < 6; ++col) {
      double sum = 0.0;
      for (const auto& run : runs) {
        sum += run[i][col + 1];  // run CSV has a leading run column
      }
      EXPECT_DOUBLE_EQ(mean_rows[i][col], sum / 3.0)
          << "row " << i << " col " << col;
    }
  }
}

TEST(CmdTrain, ParallelRunsMatchSerialRuns) {
  ExperimentConfig a = toy_config(fresh_dir("serial"));
  ExperimentConfig b = toy_config(fresh_dir("parallel"));
  cmd_train(a);
  setenv("ANNEALPRUNE_THREADS", "2", 1);
  cmd_train(b);
  unsetenv("ANNEALPRUNE_THREADS");
  for (std::size_t r = 0; r < 2; ++r) {
    EXPECT_EQ(
        slurp_text(a.out_dir + "/metrics_run" + std::to_string(r) + ".csv"),
        slurp_text(b.out_dir + "/metrics_run" + std::to_string(r) + ".csv"));
  }
}

TEST(CmdTrainResume, MatchesUninterruptedRunStepForStep) {
  ExperimentConfig full = toy_config(fresh_dir("resume_full"));
  full.repeats = 1;
  full.epochs = 3;
  full.checkpoint_every = 1;
  full.regularizer = RegularizerKind::Ap;
  full.ap.start = 1;
  full.ap.post = 0;
  const TrainOutput uninterrupted = cmd_train(full);

  ExperimentConfig resumed = full;
  resumed.out_dir = fresh_dir("resume_cont");
  const TrainOutput continued =
      cmd_train_resume(resumed, full.out_dir + "/checkpoint_run0_epoch1.bin");

  // Final checkpoints agree bit for bit.
  EXPECT_EQ(slurp_bytes(uninterrupted.checkpoint_paths[0]),
            slurp_bytes(continued.checkpoint_paths[0]));
  // And the overlapping metrics rows agree exactly.
  ASSERT_EQ(continued.per_run[0].size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(format_metrics_row(continued.per_run[0][i]),
              format_metrics_row(uninterrupted.per_run[0][i + 1]));
  }
}

TEST(CmdSchedule, PaperConfigurationEnvelope) {
  ExperimentConfig cfg;
  cfg.dataset = DatasetKind::Cifar10;
  cfg.data_dir = "unused";  // schedule never touches the archive
  cfg.model = ModelKind::BaselineCnn;
  cfg.regularizer = RegularizerKind::Ap;
  cfg.epochs = 20;
  cfg.out_dir = fresh_dir("sched_paper");
  const std::vector<ScheduleRow> rows = schedule_rows(cfg);
  ASSERT_EQ(rows.size(), 15u);
  EXPECT_EQ(rows.front().epoch, 3u);
  EXPECT_EQ(rows.back().epoch, 17u);
  EXPECT_EQ(rows.front().scheduled, 992722u);
  EXPECT_EQ(rows.back().scheduled, 118016u);

  const std::string path = cmd_schedule(cfg);
  const auto parsed = parse_csv(slurp_text(path));
  ASSERT_EQ(parsed.size(), 15u);
  EXPECT_DOUBLE_EQ(parsed[0][2], 992722.0);
  EXPECT_DOUBLE_EQ(parsed[0][3], 992722.0 / 1180160.0);
}

TEST(CmdSchedule, OneShotDegenerateSchedule) {
  ExperimentConfig cfg = toy_config(fresh_dir("sched_oneshot"));
  cfg.regularizer = RegularizerKind::Ap;
  cfg.ap.start = 1;
  cfg.ap.post = 0;
  cfg.epochs = 1;
  const auto rows = schedule_rows(cfg);
  ASSERT_EQ(rows.size(), 1u);
  // M = 8*16+16 = 144, k = floor(0.1*144) = 14.
  EXPECT_EQ(rows[0].scheduled, 14u);
}

TEST(CmdSchedule, LargeMuDropsImmediately) {
  ExperimentConfig cfg = toy_config(fresh_dir("sched_mu"));
  cfg.regularizer = RegularizerKind::Ap;
  cfg.ap.start = 1;
  cfg.ap.post = 0;
  cfg.ap.mu = 1000.0;
  cfg.epochs = 10;
  const auto rows = schedule_rows(cfg);
  const std::size_t total = 144, keep = 14;
  EXPECT_LT(rows[0].scheduled - keep, (total - keep) / 100);
}

TEST(CmdSchedule, RequiresApRegularizer) {
  ExperimentConfig cfg = toy_config(fresh_dir("sched_noap"));
  EXPECT_THROW(schedule_rows(cfg), ConfigError);
}

TEST(CmdEval, UntrainedNetSitsAtChanceLevel) {
  ExperimentConfig cfg;
  cfg.dataset = DatasetKind::Synth;
  cfg.synth_classes = 10;
  cfg.synth_per_class = 5;
  cfg.synth_test_per_class = 100;
  cfg.synth_dim = 12;
  cfg.synth_spread = 0.15;
  cfg.synth_seed = 31;
  cfg.model = ModelKind::Mlp;
  cfg.hidden = {16};
  cfg.out_dir = fresh_dir("eval_chance");

  Rng init(71);
  Network net(mlp_specs({16}, 10, 0.0f), {12}, init);
  const std::string ckpt = cfg.out_dir + "/untrained.bin";
  std::filesystem::create_directories(cfg.out_dir);
  save_checkpoint(ckpt, net, nullptr, 0, 0);

  const EvalReport rep = cmd_eval(ckpt, cfg);
  EXPECT_EQ(rep.total, 1000u);
  EXPECT_NEAR(rep.accuracy, 0.1, 0.02);

  // Confusion rows add up to the per-class test counts.
  for (std::size_t t = 0; t < rep.confusion.size(); ++t) {
    std::size_t row_sum = 0;
    for (std::size_t p = 0; p < rep.confusion[t].size(); ++p) {
      row_sum += rep.confusion[t][p];
    }
    EXPECT_EQ(row_sum, 100u);
  }
}

TEST(CmdEval, RepeatedEvaluationIsIdentical) {
  ExperimentConfig cfg = toy_config(fresh_dir("eval_repeat"));
  cfg.repeats = 1;
  cfg.epochs = 1;
  const TrainOutput out = cmd_train(cfg);
  const EvalReport a = cmd_eval(out.checkpoint_paths[0], cfg);
  const EvalReport b = cmd_eval(out.checkpoint_paths[0], cfg);
  EXPECT_EQ(a.correct, b.correct);
  EXPECT_EQ(a.confusion, b.confusion);
}

TEST(CmdEval, ShapeMismatchIsCompatibilityError) {
  ExperimentConfig cfg = toy_config(fresh_dir("eval_mismatch"));
  Rng init(73);
  Network net(mlp_specs({16}, 3, 0.0f), {9}, init);  // dataset dim is 8
  const std::string ckpt = cfg.out_dir + "/wrong.bin";
  std::filesystem::create_directories(cfg.out_dir);
  save_checkpoint(ckpt, net, nullptr, 0, 0);
  EXPECT_THROW(cmd_eval(ckpt, cfg), DimensionError);
}

TEST(CmdTrain, MissingCifarDirectoryNamesFile) {
  ExperimentConfig cfg = toy_config(fresh_dir("missing_cifar"));
  cfg.dataset = DatasetKind::Cifar10;
  cfg.data_dir = "/nonexistent/cifar";
  try {
    cmd_train(cfg);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("data_batch_1.bin"),
              std::string::npos)
        << e.what();
  }
}

}  // namespace
