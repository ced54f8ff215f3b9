#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "annealprune/tensor.hpp"

namespace annealprune {

// Immutable after load; images scaled to [0,1], labels in [0, classes).
struct Dataset {
  Tensor images;  // [count, ...sample shape]
  std::vector<int> labels;
  std::size_t classes = 0;

  std::size_t count() const { return labels.size(); }
  std::vector<std::size_t> sample_shape() const;
};

// Standard CIFAR-10 binary archive: data_batch_1..5.bin plus
// test_batch.bin, each record one label byte followed by 3072 pixel bytes
// (1024 R, 1024 G, 1024 B, row-major within each plane). Pixels are
// converted to interleaved [32,32,3] and divided by 255.
std::pair<Dataset, Dataset> load_cifar10(const std::string& dir);

// IDX image/label pair (magic 0x803 / 0x801, big-endian headers).
Dataset load_mnist_idx(const std::string& images_path,
                       const std::string& labels_path);

// Gaussian clusters around per-class centers drawn in [0.2, 0.8]^dim,
// samples clamped to [0,1]. spread == 0 collapses each class onto its
// center.
Dataset synth_blobs(std::size_t classes, std::size_t per_class,
                    std::size_t dim, double spread, std::uint64_t seed);

struct BatchPlan {
  std::size_t batch_size = 32;
  std::uint64_t shuffle_seed = 0;
  std::size_t epoch = 0;  // advancing the counter reshuffles
};

struct Batch {
  Tensor images;
  std::vector<int> labels;
};

// One epoch's deterministic shuffled partition of a dataset; every sample
// appears exactly once and the final short batch is emitted.
class Batcher {
 public:
  Batcher(const Dataset& ds, const BatchPlan& plan);

  std::size_t batch_count() const;
  Batch get(std::size_t b) const;

 private:
  const Dataset& ds_;
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
};

}  // namespace annealprune
