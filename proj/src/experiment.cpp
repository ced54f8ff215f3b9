#include "annealprune/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "annealprune/error.hpp"
#include "annealprune/pruning.hpp"

namespace annealprune {

const char* const kMetricsCsvHeader =
    "# annealprune metrics v1\n"
    "run,epoch,train_acc,test_acc,loss,nonzero_frac,seconds\n";

const char* const kScheduleCsvHeader =
    "# annealprune schedule v1\n"
    "epoch,iteration,scheduled_nonzero,nonzero_frac\n";

namespace {

constexpr std::uint64_t kStreamInit = 0;
constexpr std::uint64_t kStreamAp = 1;
constexpr std::uint64_t kStreamShuffle = 2;
constexpr std::uint64_t kStreamDropout = 3;

constexpr std::size_t kEvalBatch = 256;

Dataset truncate_dataset(Dataset ds, std::size_t limit) {
  if (limit == 0 || limit >= ds.count()) return ds;
  const std::size_t sample_len = shape_numel(ds.sample_shape());
  Dataset out;
  out.classes = ds.classes;
  std::vector<std::size_t> shape = ds.images.shape;
  shape[0] = limit;
  out.images = Tensor(shape);
  std::memcpy(out.images.data.data(), ds.images.data.data(),
              limit * sample_len * sizeof(float));
  out.labels.assign(ds.labels.begin(),
                    ds.labels.begin() + static_cast<long>(limit));
  return out;
}

std::size_t env_thread_count() {
  const char* env = std::getenv("ANNEALPRUNE_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  const long v = std::strtol(env, nullptr, 10);
  return v < 1 ? 1 : static_cast<std::size_t>(v);
}

Batch slice_batch(const Dataset& ds, std::size_t lo, std::size_t hi) {
  const auto sample = ds.sample_shape();
  const std::size_t sample_len = shape_numel(sample);
  Batch out;
  std::vector<std::size_t> shape{hi - lo};
  shape.insert(shape.end(), sample.begin(), sample.end());
  out.images = Tensor(shape);
  std::memcpy(out.images.data.data(),
              ds.images.data.data() + lo * sample_len,
              (hi - lo) * sample_len * sizeof(float));
  out.labels.assign(ds.labels.begin() + static_cast<long>(lo),
                    ds.labels.begin() + static_cast<long>(hi));
  return out;
}

std::string format_mean_row(const MetricsRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g",
                r.epoch, r.train_acc, r.test_acc, r.loss, r.nonzero_frac,
                r.seconds);
  return buf;
}

struct RunArtifacts {
  std::vector<MetricsRow> rows;
  std::string csv_path;
  std::string checkpoint_path;
};

RunArtifacts run_one(const ExperimentConfig& cfg, const Dataset& train,
                     const Dataset& test, std::size_t run_id,
                     const LoadedCheckpoint* resume) {
  const std::uint64_t run_seed =
      resume != nullptr ? resume->run_seed : cfg.seed + run_id;
  Rng master(run_seed);

  std::optional<Network> net;
  std::optional<MaskState> mask;
  std::size_t start_epoch = 1;
  if (resume != nullptr) {
    net = resume->net;
    mask = resume->mask;
    start_epoch = static_cast<std::size_t>(resume->epoch) + 1;
    if (start_epoch > cfg.epochs + 1) {
      throw ConfigError("resume: checkpoint is past the configured epochs");
    }
  } else {
    Rng init_rng = master.derive(kStreamInit);
    net = build_model(cfg, train.sample_shape(), train.classes, init_rng);
    if (cfg.regularizer == RegularizerKind::Ap) {
      mask = make_mask_state(cfg.ap, net->first_dense_layer(),
                             master.derive(kStreamAp));
    }
  }
  const std::size_t target_layer =
      mask.has_value() ? mask->target_layer : net->first_dense_layer();
  const std::uint64_t shuffle_seed = master.derive(kStreamShuffle).seed();

  RunArtifacts art;
  for (std::size_t e = start_epoch; e <= cfg.epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng dropout_rng = master.derive(kStreamDropout).derive(e);
    Batcher batcher(train, BatchPlan{cfg.batch_size, shuffle_seed, e});

    std::size_t correct = 0;
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batcher.batch_count(); ++b) {
      const Batch batch = batcher.get(b);
      ForwardCache cache =
          net->forward(batch.images, Mode::Train, dropout_rng);
      const LossReport rep = net->loss_report(cache, batch.labels);
      correct += rep.correct;
      loss_sum += rep.loss * static_cast<double>(batch.labels.size());
      net->backward(cache, batch.labels);
      if (mask.has_value()) discard_masked_gradients(*net, *mask);
      net->sgd_step(static_cast<float>(cfg.lr));
      if (mask.has_value()) enforce_frozen_zeros(*net, *mask);
    }
    if (mask.has_value()) {
      ap_epoch_end(*net, *mask, e, cfg.epochs);
    }

    MetricsRow row;
    row.run = run_id;
    row.epoch = e;
    row.train_acc =
        static_cast<double>(correct) / static_cast<double>(train.count());
    row.test_acc = eval_accuracy(*net, test);
    row.loss = loss_sum / static_cast<double>(train.count());
    row.nonzero_frac = nonzero_fraction(*net, target_layer);
    if (cfg.timing) {
      row.seconds = std::chrono::duration<double>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
    }
    art.rows.push_back(row);

    if (cfg.checkpoint_every != 0 && e % cfg.checkpoint_every == 0 &&
        e != cfg.epochs) {
      const std::string path = cfg.out_dir + "/checkpoint_run" +
                               std::to_string(run_id) + "_epoch" +
                               std::to_string(e) + ".bin";
      save_checkpoint(path, *net, mask.has_value() ? &*mask : nullptr, e,
                      run_seed);
    }
  }

  art.checkpoint_path =
      cfg.out_dir + "/checkpoint_run" + std::to_string(run_id) + ".bin";
  save_checkpoint(art.checkpoint_path, *net,
                  mask.has_value() ? &*mask : nullptr, cfg.epochs, run_seed);

  art.csv_path =
      cfg.out_dir + "/metrics_run" + std::to_string(run_id) + ".csv";
  std::ofstream csv(art.csv_path, std::ios::trunc);
  if (!csv) throw Error("cannot write " + art.csv_path);
  csv << kMetricsCsvHeader;
  for (const MetricsRow& row : art.rows) {
    csv << format_metrics_row(row) << '\n';
  }
  return art;
}

TrainOutput finish_training(const ExperimentConfig& cfg,
                            std::vector<RunArtifacts> arts) {
  TrainOutput out;
  for (auto& a : arts) {
    out.per_run.push_back(std::move(a.rows));
    out.run_csv_paths.push_back(a.csv_path);
    out.checkpoint_paths.push_back(a.checkpoint_path);
  }

  // Mean over runs, epoch by epoch.
  const std::size_t runs = out.per_run.size();
  const std::size_t rows = out.per_run.front().size();
  for (std::size_t i = 0; i < rows; ++i) {
    MetricsRow m;
    m.epoch = out.per_run.front()[i].epoch;
    for (std::size_t r = 0; r < runs; ++r) {
      const MetricsRow& row = out.per_run[r][i];
      m.train_acc += row.train_acc;
      m.test_acc += row.test_acc;
      m.loss += row.loss;
      m.nonzero_frac += row.nonzero_frac;
      m.seconds += row.seconds;
    }
    const double d = static_cast<double>(runs);
    m.train_acc /= d;
    m.test_acc /= d;
    m.loss /= d;
    m.nonzero_frac /= d;
    m.seconds /= d;
    out.mean_rows.push_back(m);
  }

  out.mean_csv_path = cfg.out_dir + "/metrics_mean.csv";
  std::ofstream csv(out.mean_csv_path, std::ios::trunc);
  if (!csv) throw Error("cannot write " + out.mean_csv_path);
  csv << "# annealprune metrics mean v1\n"
      << "epoch,train_acc,test_acc,loss,nonzero_frac,seconds\n";
  for (const MetricsRow& m : out.mean_rows) {
    csv << format_mean_row(m) << '\n';
  }
  return out;
}

void write_config_echo(const ExperimentConfig& cfg) {
  std::filesystem::create_directories(cfg.out_dir);
  std::ofstream echo(cfg.out_dir + "/config.txt", std::ios::trunc);
  echo << render_config(cfg);
}

}  // namespace

std::string format_metrics_row(const MetricsRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%zu,%zu,%.17g,%.17g,%.17g,%.17g,%.17g",
                r.run, r.epoch, r.train_acc, r.test_acc, r.loss,
                r.nonzero_frac, r.seconds);
  return buf;
}

std::pair<Dataset, Dataset> load_datasets(const ExperimentConfig& cfg) {
  std::pair<Dataset, Dataset> out;
  switch (cfg.dataset) {
    case DatasetKind::Cifar10:
      out = load_cifar10(cfg.data_dir);
      break;
    case DatasetKind::Mnist:
      out = {load_mnist_idx(cfg.train_images, cfg.train_labels),
             load_mnist_idx(cfg.test_images, cfg.test_labels)};
      break;
    case DatasetKind::Synth: {
      // One draw with shared class centers, split into train and test so
      // the two sets never share samples.
      const std::size_t per = cfg.synth_per_class + cfg.synth_test_per_class;
      const Dataset full =
          synth_blobs(cfg.synth_classes, per, cfg.synth_dim,
                      cfg.synth_spread, cfg.synth_seed);
      const std::size_t dim = cfg.synth_dim;
      Dataset train, test;
      train.classes = test.classes = cfg.synth_classes;
      train.images =
          Tensor({cfg.synth_classes * cfg.synth_per_class, dim});
      test.images =
          Tensor({cfg.synth_classes * cfg.synth_test_per_class, dim});
      train.labels.reserve(cfg.synth_classes * cfg.synth_per_class);
      test.labels.reserve(cfg.synth_classes * cfg.synth_test_per_class);
      std::size_t tr = 0, te = 0;
      for (std::size_t c = 0; c < cfg.synth_classes; ++c) {
        for (std::size_t s = 0; s < per; ++s) {
          const float* src = full.images.data.data() + (c * per + s) * dim;
          if (s < cfg.synth_per_class) {
            std::memcpy(train.images.data.data() + tr * dim, src,
                        dim * sizeof(float));
            train.labels.push_back(static_cast<int>(c));
            ++tr;
          } else {
            std::memcpy(test.images.data.data() + te * dim, src,
                        dim * sizeof(float));
            test.labels.push_back(static_cast<int>(c));
            ++te;
          }
        }
      }
      out = {std::move(train), std::move(test)};
      break;
    }
  }
  out.first = truncate_dataset(std::move(out.first), cfg.train_limit);
  out.second = truncate_dataset(std::move(out.second), cfg.test_limit);
  return out;
}

Network build_model(const ExperimentConfig& cfg,
                    const std::vector<std::size_t>& input_shape,
                    std::size_t classes, Rng& init_rng) {
  const float q = cfg.regularizer == RegularizerKind::Dropout
                      ? static_cast<float>(cfg.dropout_q)
                      : 0.0f;
  if (cfg.model == ModelKind::BaselineCnn) {
    if (classes != 10) {
      throw ConfigError("baseline-cnn expects a 10-class dataset");
    }
    return Network(baseline_cnn_specs(q), input_shape, init_rng);
  }
  return Network(mlp_specs(cfg.hidden, classes, q), input_shape, init_rng);
}

double eval_accuracy(const Network& net, const Dataset& ds) {
  Rng dummy(0);
  std::size_t correct = 0;
  for (std::size_t lo = 0; lo < ds.count(); lo += kEvalBatch) {
    const std::size_t hi = std::min(ds.count(), lo + kEvalBatch);
    const Batch batch = slice_batch(ds, lo, hi);
    const ForwardCache cache =
        net.forward(batch.images, Mode::Eval, dummy);
    correct += net.loss_report(cache, batch.labels).correct;
  }
  return static_cast<double>(correct) / static_cast<double>(ds.count());
}

TrainOutput cmd_train(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto [train, test] = load_datasets(cfg);
  write_config_echo(cfg);

  std::vector<RunArtifacts> arts(cfg.repeats);
  const std::size_t threads =
      std::min(env_thread_count(), static_cast<std::size_t>(cfg.repeats));
  if (threads <= 1) {
    for (std::size_t r = 0; r < cfg.repeats; ++r) {
      arts[r] = run_one(cfg, train, test, r, nullptr);
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (;;) {
          const std::size_t r = next.fetch_add(1);
          if (r >= cfg.repeats) return;
          try {
            arts[r] = run_one(cfg, train, test, r, nullptr);
          } catch (...) {
            std::lock_guard<std::mutex> lock(error_mutex);
            if (!first_error) first_error = std::current_exception();
            return;
          }
        }
      });
    }
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
  }
  return finish_training(cfg, std::move(arts));
}

TrainOutput cmd_train_resume(const ExperimentConfig& cfg,
                             const std::string& resume_checkpoint) {
  cfg.validate();
  if (cfg.repeats != 1) {
    throw ConfigError("resume requires train.repeats = 1");
  }
  const LoadedCheckpoint loaded = load_checkpoint(resume_checkpoint);
  const auto [train, test] = load_datasets(cfg);
  write_config_echo(cfg);
  std::vector<RunArtifacts> arts;
  arts.push_back(run_one(cfg, train, test, 0, &loaded));
  return finish_training(cfg, std::move(arts));
}

std::vector<ScheduleRow> schedule_rows(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.regularizer != RegularizerKind::Ap) {
    throw ConfigError("schedule requires the ap regularizer");
  }
  std::vector<std::size_t> input_shape;
  std::size_t classes = 10;
  switch (cfg.dataset) {
    case DatasetKind::Cifar10:
      input_shape = {32, 32, 3};
      break;
    case DatasetKind::Mnist:
      input_shape = {28, 28, 1};
      break;
    case DatasetKind::Synth:
      input_shape = {cfg.synth_dim};
      classes = cfg.synth_classes;
      break;
  }
  Rng scratch(0);
  Network net = build_model(cfg, input_shape, classes, scratch);
  const std::size_t total =
      net.layer_parameter_count(net.first_dense_layer());
  const ScheduleParams sched = make_schedule(total, cfg.ap, cfg.epochs);

  std::vector<ScheduleRow> rows;
  for (std::size_t i = 1; i <= sched.iterations; ++i) {
    ScheduleRow row;
    row.epoch = cfg.ap.start + i - 1;
    row.iteration = i;
    row.scheduled = scheduled_nonzero(i, sched);
    row.frac = static_cast<double>(row.scheduled) /
               static_cast<double>(sched.total);
    rows.push_back(row);
  }
  return rows;
}

std::string cmd_schedule(const ExperimentConfig& cfg) {
  const std::vector<ScheduleRow> rows = schedule_rows(cfg);
  std::filesystem::create_directories(cfg.out_dir);
  const std::string path = cfg.out_dir + "/schedule.csv";
  std::ofstream csv(path, std::ios::trunc);
  if (!csv) throw Error("cannot write " + path);
  csv << kScheduleCsvHeader;
  char buf[128];
  for (const ScheduleRow& row : rows) {
    std::snprintf(buf, sizeof(buf), "%zu,%zu,%zu,%.17g", row.epoch,
                  row.iteration, row.scheduled, row.frac);
    csv << buf << '\n';
  }
  return path;
}

EvalReport cmd_eval(const std::string& checkpoint_path,
                    const ExperimentConfig& cfg) {
  LoadedCheckpoint loaded = load_checkpoint(checkpoint_path);
  const auto [train, test] = load_datasets(cfg);
  (void)train;
  if (loaded.net.input_shape() != test.sample_shape()) {
    Tensor probe(test.sample_shape());
    throw DimensionError("checkpoint expects input " +
                         Tensor(loaded.net.input_shape()).shape_str() +
                         " but dataset provides " + probe.shape_str());
  }
  const std::size_t classes =
      loaded.net.output_shape(loaded.net.layer_count() - 1)[0];
  if (classes != test.classes) {
    throw DimensionError("checkpoint has " + std::to_string(classes) +
                         " classes but dataset has " +
                         std::to_string(test.classes));
  }

  EvalReport rep;
  rep.total = test.count();
  rep.confusion.assign(classes, std::vector<std::size_t>(classes, 0));
  Rng dummy(0);
  for (std::size_t lo = 0; lo < test.count(); lo += kEvalBatch) {
    const std::size_t hi = std::min(test.count(), lo + kEvalBatch);
    const Batch batch = slice_batch(test, lo, hi);
    const ForwardCache cache =
        loaded.net.forward(batch.images, Mode::Eval, dummy);
    const Tensor& probs = Network::probabilities(cache);
    for (std::size_t s = 0; s < batch.labels.size(); ++s) {
      const float* row = probs.data.data() + s * classes;
      std::size_t arg = 0;
      for (std::size_t j = 1; j < classes; ++j) {
        if (row[j] > row[arg]) arg = j;
      }
      const auto truth = static_cast<std::size_t>(batch.labels[s]);
      rep.confusion[truth][arg] += 1;
      if (arg == truth) ++rep.correct;
    }
  }
  rep.accuracy =
      static_cast<double>(rep.correct) / static_cast<double>(rep.total);
  return rep;
}

std::string format_eval_report(const EvalReport& rep) {
  std::ostringstream os;
  char buf[128];
  std::snprintf(buf, sizeof(buf), "accuracy=%.6f correct=%zu total=%zu\n",
                rep.accuracy, rep.correct, rep.total);
  os << buf;
  os << "confusion (rows = truth, cols = prediction):\n";
  for (std::size_t t = 0; t < rep.confusion.size(); ++t) {
    os << t << ':';
    for (std::size_t p = 0; p < rep.confusion[t].size(); ++p) {
      os << ' ' << rep.confusion[t][p];
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace annealprune
