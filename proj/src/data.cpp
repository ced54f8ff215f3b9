#include "annealprune/data.hpp"

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "annealprune/error.hpp"
#include "annealprune/rng.hpp"

namespace annealprune {

std::vector<std::size_t> Dataset::sample_shape() const {
  return {images.shape.begin() + 1, images.shape.end()};
}

namespace {

constexpr std::size_t kCifarDim = 32;
constexpr std::size_t kCifarPlane = kCifarDim * kCifarDim;
constexpr std::size_t kCifarRecord = 1 + 3 * kCifarPlane;

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("missing file: " + path);
  in.seekg(0, std::ios::end);
  const auto len = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  std::vector<unsigned char> bytes(len);
  if (len > 0) {
    in.read(reinterpret_cast<char*>(bytes.data()),
            static_cast<std::streamsize>(len));
  }
  if (!in) throw FormatError("failed reading " + path);
  return bytes;
}

// Appends one file's records; returns how many were added.
std::size_t append_cifar_file(const std::string& path,
                              std::vector<float>& pixels,
                              std::vector<int>& labels) {
  const std::vector<unsigned char> bytes = read_file(path);
  if (bytes.size() % kCifarRecord != 0) {
    throw FormatError(path + ": truncated record at offset " +
                      std::to_string(bytes.size() -
                                     bytes.size() % kCifarRecord));
  }
  const std::size_t records = bytes.size() / kCifarRecord;
  for (std::size_t r = 0; r < records; ++r) {
    const unsigned char* rec = bytes.data() + r * kCifarRecord;
    if (rec[0] > 9) {
      throw FormatError(path + ": label byte " + std::to_string(rec[0]) +
                        " out of range at offset " +
                        std::to_string(r * kCifarRecord));
    }
    labels.push_back(rec[0]);
    const unsigned char* planes = rec + 1;
    for (std::size_t p = 0; p < kCifarPlane; ++p) {
      for (std::size_t ch = 0; ch < 3; ++ch) {
        pixels.push_back(
            static_cast<float>(planes[ch * kCifarPlane + p]) / 255.0f);
      }
    }
  }
  return records;
}

Dataset assemble_cifar(std::vector<float> pixels, std::vector<int> labels) {
  Dataset ds;
  ds.classes = 10;
  ds.labels = std::move(labels);
  ds.images = Tensor({ds.labels.size(), kCifarDim, kCifarDim, 3});
  ds.images.data = std::move(pixels);
  return ds;
}

std::uint32_t read_be32(const unsigned char* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) |
         (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) |
         static_cast<std::uint32_t>(p[3]);
}

}  // namespace

std::pair<Dataset, Dataset> load_cifar10(const std::string& dir) {
  std::vector<float> train_pixels;
  std::vector<int> train_labels;
  for (int i = 1; i <= 5; ++i) {
    append_cifar_file(dir + "/data_batch_" + std::to_string(i) + ".bin",
                      train_pixels, train_labels);
  }
  std::vector<float> test_pixels;
  std::vector<int> test_labels;
  append_cifar_file(dir + "/test_batch.bin", test_pixels, test_labels);
  return {assemble_cifar(std::move(train_pixels), std::move(train_labels)),
          assemble_cifar(std::move(test_pixels), std::move(test_labels))};
}

Dataset load_mnist_idx(const std::string& images_path,
                       const std::string& labels_path) {
  const std::vector<unsigned char> img = read_file(images_path);
  const std::vector<unsigned char> lab = read_file(labels_path);
  if (img.size() < 16 || read_be32(img.data()) != 0x00000803u) {
    throw FormatError(images_path + ": bad IDX image magic");
  }
  if (lab.size() < 8 || read_be32(lab.data()) != 0x00000801u) {
    throw FormatError(labels_path + ": bad IDX label magic");
  }
  const std::size_t n = read_be32(img.data() + 4);
  const std::size_t rows = read_be32(img.data() + 8);
  const std::size_t cols = read_be32(img.data() + 12);
  const std::size_t n_labels = read_be32(lab.data() + 4);
  if (n != n_labels) {
    throw FormatError("IDX count mismatch: " + std::to_string(n) +
                      " images vs " + std::to_string(n_labels) + " labels");
  }
  if (img.size() != 16 + n * rows * cols) {
    throw FormatError(images_path + ": truncated image body");
  }
  if (lab.size() != 8 + n) {
    throw FormatError(labels_path + ": truncated label body");
  }
  Dataset ds;
  ds.classes = 10;
  ds.images = Tensor({n, rows, cols, 1});
  for (std::size_t i = 0; i < n * rows * cols; ++i) {
    ds.images.data[i] = static_cast<float>(img[16 + i]) / 255.0f;
  }
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char v = lab[8 + i];
    if (v > 9) {
      throw FormatError(labels_path + ": label byte " + std::to_string(v) +
                        " out of range at offset " + std::to_string(8 + i));
    }
    ds.labels[i] = v;
  }
  return ds;
}

Dataset synth_blobs(std::size_t classes, std::size_t per_class,
                    std::size_t dim, double spread, std::uint64_t seed) {
  if (classes < 2) throw ArgumentError("synth_blobs: need >= 2 classes");
  if (per_class == 0 || dim == 0) {
    throw ArgumentError("synth_blobs: per_class and dim must be positive");
  }
  Rng rng(seed);
  Rng center_rng = rng.derive(0);
  Rng noise_rng = rng.derive(1);

  std::vector<std::vector<float>> centers(classes);
  for (auto& c : centers) {
    c.resize(dim);
    for (auto& v : c) {
      v = static_cast<float>(center_rng.uniform(0.2, 0.8));
    }
  }

  Dataset ds;
  ds.classes = classes;
  ds.images = Tensor({classes * per_class, dim});
  ds.labels.resize(classes * per_class);
  std::size_t row = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t s = 0; s < per_class; ++s, ++row) {
      float* out = ds.images.data.data() + row * dim;
      for (std::size_t d = 0; d < dim; ++d) {
        double v = centers[c][d];
        if (spread > 0.0) v += spread * noise_rng.next_gaussian();
        out[d] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
      ds.labels[row] = static_cast<int>(c);
    }
  }
  return ds;
}

Batcher::Batcher(const Dataset& ds, const BatchPlan& plan)
    : ds_(ds), batch_size_(plan.batch_size) {
  if (plan.batch_size == 0) {
    throw ArgumentError("batches: batch size must be positive");
  }
  order_.resize(ds.count());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  Rng rng = Rng(plan.shuffle_seed).derive(plan.epoch);
  for (std::size_t i = order_.size(); i > 1; --i) {
    std::swap(order_[i - 1], order_[rng.next_below(i)]);
  }
}

std::size_t Batcher::batch_count() const {
  return (order_.size() + batch_size_ - 1) / batch_size_;
}

Batch Batcher::get(std::size_t b) const {
  const std::size_t lo = b * batch_size_;
  const std::size_t hi = std::min(order_.size(), lo + batch_size_);
  if (lo >= hi) throw ArgumentError("batches: batch index out of range");
  const auto sample = ds_.sample_shape();
  const std::size_t sample_len = shape_numel(sample);

  Batch out;
  std::vector<std::size_t> shape{hi - lo};
  shape.insert(shape.end(), sample.begin(), sample.end());
  out.images = Tensor(shape);
  out.labels.resize(hi - lo);
  for (std::size_t i = lo; i < hi; ++i) {
    const std::size_t src = order_[i];
    std::memcpy(out.images.data.data() + (i - lo) * sample_len,
                ds_.images.data.data() + src * sample_len,
                sample_len * sizeof(float));
    out.labels[i - lo] = ds_.labels[src];
  }
  return out;
}

}  // namespace annealprune
