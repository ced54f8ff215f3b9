#include "annealprune/tensor.hpp"

#include <cmath>
#include <sstream>

#include "annealprune/error.hpp"

namespace annealprune {

std::size_t shape_numel(const std::vector<std::size_t>& dims) {
  std::size_t n = 1;
  for (std::size_t d : dims) n *= d;
  return n;
}

Tensor::Tensor(std::vector<std::size_t> dims) : shape(std::move(dims)) {
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor dimension must be positive");
  }
  data.assign(shape_numel(shape), 0.0f);
}

Tensor Tensor::full(std::vector<std::size_t> dims, float value) {
  Tensor t(std::move(dims));
  t.fill(value);
  return t;
}

void Tensor::fill(float v) {
  for (auto& x : data) x = v;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void ensure_finite(const Tensor& t, const std::string& context) {
  for (float v : t.data) {
    if (!std::isfinite(v)) {
      throw NumericError(context + ": non-finite value");
    }
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0]) {
    throw DimensionError("matmul: incompatible shapes " + a.shape_str() +
                         " and " + b.shape_str());
  }
  const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
  Tensor c({m, n});
  const float* pa = a.data.data();
  const float* pb = b.data.data();
  float* pc = c.data.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t l = 0; l < k; ++l) {
      const float av = pa[i * k + l];
      const float* brow = pb + l * n;
      float* crow = pc + i * n;
      for (std::size_t j = 0; j < n; ++j) {
        crow[j] += av * brow[j];
      }
    }
  }
  ensure_finite(c, "matmul");
  return c;
}

Tensor conv2d_forward(const Tensor& input, const Tensor& filters,
                      const Tensor& bias, Padding padding) {
  if (input.rank() != 3) {
    throw DimensionError("conv2d: input must be [h,w,c], got " +
                         input.shape_str());
  }
  if (filters.rank() != 4 || filters.shape[1] != 3 || filters.shape[2] != 3) {
    throw DimensionError("conv2d: filters must be [f,3,3,c], got " +
                         filters.shape_str());
  }
  const std::size_t h = input.shape[0], w = input.shape[1],
                    c = input.shape[2];
  const std::size_t f = filters.shape[0];
  if (filters.shape[3] != c) {
    throw DimensionError("conv2d: channel mismatch, input " +
                         input.shape_str() + " vs filters " +
                         filters.shape_str());
  }
  if (bias.rank() != 1 || bias.shape[0] != f) {
    throw DimensionError("conv2d: bias must be [f], got " + bias.shape_str());
  }
  const long pad = padding == Padding::Same ? 1 : 0;
  if (padding == Padding::Valid && (h < 3 || w < 3)) {
    throw DimensionError("conv2d: input " + input.shape_str() +
                         " too small for valid padding");
  }
  const std::size_t oh = padding == Padding::Same ? h : h - 2;
  const std::size_t ow = padding == Padding::Same ? w : w - 2;

  Tensor out({oh, ow, f});
  const float* pin = input.data.data();
  const float* pf = filters.data.data();
  float* po = out.data.data();
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      float* ocell = po + (oy * ow + ox) * f;
      for (std::size_t o = 0; o < f; ++o) ocell[o] = bias[o];
      for (std::size_t ky = 0; ky < 3; ++ky) {
        const long iy = static_cast<long>(oy + ky) - pad;
        if (iy < 0 || iy >= static_cast<long>(h)) continue;
        for (std::size_t kx = 0; kx < 3; ++kx) {
          const long ix = static_cast<long>(ox + kx) - pad;
          if (ix < 0 || ix >= static_cast<long>(w)) continue;
          const float* icell = pin + (iy * w + ix) * c;
          const float* fcell = pf + (ky * 3 + kx) * c;
          for (std::size_t o = 0; o < f; ++o) {
            const float* fchan = fcell + o * 9 * c;
            float acc = 0.0f;
            for (std::size_t ci = 0; ci < c; ++ci) {
              acc += icell[ci] * fchan[ci];
            }
            ocell[o] += acc;
          }
        }
      }
    }
  }
  ensure_finite(out, "conv2d");
  return out;
}

PoolResult maxpool2x2(const Tensor& input) {
  if (input.rank() != 3) {
    throw DimensionError("maxpool2x2: input must be [h,w,c], got " +
                         input.shape_str());
  }
  const std::size_t h = input.shape[0], w = input.shape[1],
                    c = input.shape[2];
  if (h < 2 || w < 2) {
    throw DimensionError("maxpool2x2: input " + input.shape_str() +
                         " smaller than window");
  }
  const std::size_t oh = h / 2, ow = w / 2;
  PoolResult res{Tensor({oh, ow, c}), {}};
  res.argmax.resize(oh * ow * c);
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      for (std::size_t ci = 0; ci < c; ++ci) {
        std::size_t best = (2 * oy * w + 2 * ox) * c + ci;
        float bv = input.data[best];
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const std::size_t idx =
                ((2 * oy + dy) * w + (2 * ox + dx)) * c + ci;
            if (input.data[idx] > bv) {
              bv = input.data[idx];
              best = idx;
            }
          }
        }
        const std::size_t oidx = (oy * ow + ox) * c + ci;
        res.output.data[oidx] = bv;
        res.argmax[oidx] = best;
      }
    }
  }
  return res;
}

}  // namespace annealprune
