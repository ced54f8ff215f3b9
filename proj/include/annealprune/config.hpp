#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "annealprune/pruning.hpp"

namespace annealprune {

enum class DatasetKind { Cifar10, Mnist, Synth };
enum class ModelKind { BaselineCnn, Mlp };
enum class RegularizerKind { None, Dropout, Ap };

// One experiment = dataset x model x regularizer x training settings,
// trained `repeats` times with seeds seed, seed+1, ...
struct ExperimentConfig {
  DatasetKind dataset = DatasetKind::Synth;
  std::string data_dir;  // cifar10 archive directory
  std::string train_images, train_labels;  // mnist idx files
  std::string test_images, test_labels;
  std::size_t synth_classes = 10;
  std::size_t synth_per_class = 100;
  std::size_t synth_test_per_class = 20;
  std::size_t synth_dim = 16;
  double synth_spread = 0.1;
  std::uint64_t synth_seed = 7;
  std::size_t train_limit = 0;  // 0 = use everything
  std::size_t test_limit = 0;

  ModelKind model = ModelKind::Mlp;
  std::vector<std::size_t> hidden = {512};

  RegularizerKind regularizer = RegularizerKind::None;
  double dropout_q = 0.25;
  ApHyperparams ap;

  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  double lr = 0.01;
  std::uint64_t seed = 1;
  std::size_t repeats = 10;
  std::size_t checkpoint_every = 0;  // 0 = final checkpoint only
  std::string out_dir = "out";
  bool timing = false;  // wall-clock seconds column; off keeps CSVs
                        // reproducible byte for byte

  void validate() const;
};

ExperimentConfig parse_config_text(const std::string& text,
                                   const std::string& origin);
ExperimentConfig parse_config_file(const std::string& path);

// Canonical key=value form, written next to experiment outputs.
std::string render_config(const ExperimentConfig& cfg);

}  // namespace annealprune
