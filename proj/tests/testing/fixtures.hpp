#pragma once

// File fixtures for dataset-loader tests: byte-level writers for the
// CIFAR-10 binary archive layout and the IDX image/label pair.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "annealprune/rng.hpp"

namespace annealprune::testing {

inline void write_bytes(const std::string& path,
                        const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("fixture write failed: " + path);
}

inline std::string fresh_dir(const std::string& tag) {
  static std::uint64_t counter = 0;
  const auto dir = std::filesystem::temp_directory_path() /
                   ("annealprune_" + tag + "_" + std::to_string(++counter));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

// One CIFAR record: label byte + 3072 planar pixel bytes.
inline std::vector<std::uint8_t> cifar_record(std::uint8_t label,
                                              Rng& rng) {
  std::vector<std::uint8_t> rec(3073);
  rec[0] = label;
  for (std::size_t i = 1; i < rec.size(); ++i) {
    rec[i] = static_cast<std::uint8_t>(rng.next_below(256));
  }
  return rec;
}

// Writes data_batch_1..5.bin and test_batch.bin with the given record
// counts; returns all written bytes per file for later comparison.
inline std::vector<std::vector<std::uint8_t>> write_cifar_archive(
    const std::string& dir, const std::vector<std::size_t>& train_counts,
    std::size_t test_count, std::uint64_t seed) {
  if (train_counts.size() != 5) {
    throw std::runtime_error("cifar archive needs 5 train files");
  }
  Rng rng(seed);
  std::vector<std::vector<std::uint8_t>> files;
  for (std::size_t f = 0; f < 5; ++f) {
    std::vector<std::uint8_t> bytes;
    for (std::size_t r = 0; r < train_counts[f]; ++r) {
      const auto rec =
          cifar_record(static_cast<std::uint8_t>(rng.next_below(10)), rng);
      bytes.insert(bytes.end(), rec.begin(), rec.end());
    }
    write_bytes(dir + "/data_batch_" + std::to_string(f + 1) + ".bin",
                bytes);
    files.push_back(std::move(bytes));
  }
  std::vector<std::uint8_t> test_bytes;
  for (std::size_t r = 0; r < test_count; ++r) {
    const auto rec =
        cifar_record(static_cast<std::uint8_t>(rng.next_below(10)), rng);
    test_bytes.insert(test_bytes.end(), rec.begin(), rec.end());
  }
  write_bytes(dir + "/test_batch.bin", test_bytes);
  files.push_back(std::move(test_bytes));
  return files;
}

inline void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

inline std::vector<std::uint8_t> idx_image_bytes(
    const std::vector<std::vector<std::uint8_t>>& images, std::uint32_t rows,
    std::uint32_t cols) {
  std::vector<std::uint8_t> out;
  put_be32(out, 0x00000803u);
  put_be32(out, static_cast<std::uint32_t>(images.size()));
  put_be32(out, rows);
  put_be32(out, cols);
  for (const auto& img : images) {
    out.insert(out.end(), img.begin(), img.end());
  }
  return out;
}

inline std::vector<std::uint8_t> idx_label_bytes(
    const std::vector<std::uint8_t>& labels) {
  std::vector<std::uint8_t> out;
  put_be32(out, 0x00000801u);
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.insert(out.end(), labels.begin(), labels.end());
  return out;
}

}  // namespace annealprune::testing
