#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "annealprune/rng.hpp"

namespace annealprune {

// Dense row-major float array tagged with its shape. Values are 32-bit;
// kernels may accumulate wider internally. Tensors are plain values:
// operations never modify their inputs and return freshly allocated
// results, so sharing across threads is safe.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> dims);

  static Tensor full(std::vector<std::size_t> dims, float value);

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }

  float& operator[](std::size_t i) { return data[i]; }
  float operator[](std::size_t i) const { return data[i]; }

  // 2-d convenience accessors (row-major).
  float& at2(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
  float at2(std::size_t r, std::size_t c) const {
    return data[r * shape[1] + c];
  }

  void fill(float v);
  std::string shape_str() const;
};

std::size_t shape_numel(const std::vector<std::size_t>& dims);

// Throws NumericError naming `context` if any element is NaN/Inf.
void ensure_finite(const Tensor& t, const std::string& context);

// C = A[m x k] * B[k x n]. Shape mismatch throws DimensionError naming
// both shapes.
Tensor matmul(const Tensor& a, const Tensor& b);

enum class Padding { Same, Valid };

// Cross-correlation of a single image. input is [h,w,c] (channel
// interleaved), filters [f,3,3,c], bias [f]. Same keeps h,w; Valid
// shrinks both by 2.
Tensor conv2d_forward(const Tensor& input, const Tensor& filters,
                      const Tensor& bias, Padding padding);

struct PoolResult {
  Tensor output;                    // [floor(h/2), floor(w/2), c]
  std::vector<std::size_t> argmax;  // flat input index per output element
};

// 2x2 max pooling with stride 2; odd trailing row/column dropped.
PoolResult maxpool2x2(const Tensor& input);

}  // namespace annealprune
