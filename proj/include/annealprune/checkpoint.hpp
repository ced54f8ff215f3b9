#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "annealprune/network.hpp"
#include "annealprune/pruning.hpp"

namespace annealprune {

// Coordinate-list encoding of a parameter tensor: entries whose 32-bit
// pattern is nonzero, by strictly increasing flat index. Decoding
// restores the exact bit pattern of every element.
struct SparsePayload {
  std::size_t total = 0;
  std::vector<std::uint64_t> indices;
  std::vector<float> values;
};

SparsePayload sparse_encode(const Tensor& t);
Tensor sparse_decode(const SparsePayload& p,
                     const std::vector<std::size_t>& shape);

// Stores exactly the entries where keep[first + j] != 0 (the layer's
// surviving parameters). Dropped entries must read bit-exact zero, which
// apply_mask guarantees after a freeze.
SparsePayload sparse_encode_kept(const Tensor& t,
                                 const std::vector<std::uint8_t>& mask,
                                 std::size_t first);

struct LoadedCheckpoint {
  Network net;
  std::optional<MaskState> mask;
  std::uint64_t epoch = 0;
  std::uint64_t run_seed = 0;
  // Per-layer flag: parameters were stored sparse.
  std::vector<std::uint8_t> stored_sparse;
  // Per-layer count of entries physically stored (sparse layers hold
  // only their surviving parameters).
  std::vector<std::size_t> stored_counts;
};

// Single binary file: magic, version, then length-prefixed CRC-checked
// sections (architecture, parameters, optional mask state, training
// progress). Layers of a frozen pruned target are stored sparse, all
// others dense; save -> load -> save is byte-identical.
void save_checkpoint(const std::string& path, Network& net,
                     const MaskState* mask, std::uint64_t epoch,
                     std::uint64_t run_seed);

LoadedCheckpoint load_checkpoint(const std::string& path);

struct LayerCompression {
  std::size_t layer = 0;
  std::string kind;
  std::size_t params = 0;
  std::size_t nonzeros = 0;
  bool sparse = false;
  std::size_t effective_params = 0;  // stored entries if sparse else params
  std::size_t dense_bytes = 0;
  std::size_t actual_bytes = 0;
};

struct CompressionReport {
  std::vector<LayerCompression> layers;
  std::size_t total_params = 0;
  std::size_t total_effective = 0;
  std::size_t total_dense_bytes = 0;
  std::size_t total_actual_bytes = 0;
  double reduction = 0.0;  // 1 - effective/params
};

CompressionReport compression_report(const std::string& checkpoint_path);

// Rendering used by the CLI: a table plus key=value lines.
std::string format_compression_table(const CompressionReport& rep);
std::string format_compression_kv(const CompressionReport& rep);

std::uint32_t crc32(const void* data, std::size_t len);

}  // namespace annealprune
