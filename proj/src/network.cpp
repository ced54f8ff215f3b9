#include "annealprune/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "annealprune/error.hpp"

namespace annealprune {

const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv2d:
      return "conv2d";
    case LayerKind::MaxPool2x2:
      return "maxpool2x2";
    case LayerKind::Flatten:
      return "flatten";
    case LayerKind::Dense:
      return "dense";
    case LayerKind::Relu:
      return "relu";
    case LayerKind::Softmax:
      return "softmax";
    case LayerKind::Dropout:
      return "dropout";
  }
  return "?";
}

LayerSpec LayerSpec::conv2d(std::size_t filters, Padding padding) {
  if (filters == 0) throw ArgumentError("conv2d: filters must be positive");
  LayerSpec s{LayerKind::Conv2d};
  s.filters = filters;
  s.padding = padding;
  return s;
}

LayerSpec LayerSpec::maxpool() { return LayerSpec{LayerKind::MaxPool2x2}; }
LayerSpec LayerSpec::flatten() { return LayerSpec{LayerKind::Flatten}; }

LayerSpec LayerSpec::dense(std::size_t units) {
  if (units == 0) throw ArgumentError("dense: units must be positive");
  LayerSpec s{LayerKind::Dense};
  s.units = units;
  return s;
}

LayerSpec LayerSpec::relu() { return LayerSpec{LayerKind::Relu}; }
LayerSpec LayerSpec::softmax() { return LayerSpec{LayerKind::Softmax}; }

LayerSpec LayerSpec::dropout(float q) {
  if (!(q >= 0.0f && q < 1.0f)) {
    throw ArgumentError("dropout: fraction must be in [0,1)");
  }
  LayerSpec s{LayerKind::Dropout};
  s.dropout_q = q;
  return s;
}

namespace {

// C = A * B^T, A [m x k], B [n x k].
Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[0];
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const float* arow = a.data.data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const float* brow = b.data.data() + j * k;
      float acc = 0.0f;
      for (std::size_t l = 0; l < k; ++l) acc += arow[l] * brow[l];
      c.data[i * n + j] = acc;
    }
  }
  return c;
}

// C = A^T * B, A [k x m], B [k x n].
Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  const std::size_t k = a.shape[0], m = a.shape[1], n = b.shape[1];
  Tensor c({m, n});
  for (std::size_t l = 0; l < k; ++l) {
    const float* arow = a.data.data() + l * m;
    const float* brow = b.data.data() + l * n;
    for (std::size_t i = 0; i < m; ++i) {
      const float av = arow[i];
      float* crow = c.data.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

Tensor sample_slice(const Tensor& batch,
                    const std::vector<std::size_t>& sample_shape,
                    std::size_t s) {
  Tensor t(sample_shape);
  const std::size_t n = t.numel();
  std::memcpy(t.data.data(), batch.data.data() + s * n, n * sizeof(float));
  return t;
}

void store_sample(Tensor& batch, std::size_t s, const Tensor& t) {
  const std::size_t n = t.numel();
  std::memcpy(batch.data.data() + s * n, t.data.data(), n * sizeof(float));
}

void conv2d_backward_sample(const float* x, std::size_t h, std::size_t w,
                            std::size_t c, const float* filt, std::size_t f,
                            long pad, const float* dout, std::size_t oh,
                            std::size_t ow, float* gfilt, float* gbias,
                            float* dx) {
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      const float* gcell = dout + (oy * ow + ox) * f;
      for (std::size_t o = 0; o < f; ++o) {
        const float g = gcell[o];
        gbias[o] += g;
        const float* fbase = filt + o * 9 * c;
        float* gfbase = gfilt + o * 9 * c;
        for (std::size_t ky = 0; ky < 3; ++ky) {
          const long iy = static_cast<long>(oy + ky) - pad;
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          for (std::size_t kx = 0; kx < 3; ++kx) {
            const long ix = static_cast<long>(ox + kx) - pad;
            if (ix < 0 || ix >= static_cast<long>(w)) continue;
            const float* icell = x + (iy * w + ix) * c;
            float* dcell = dx + (iy * w + ix) * c;
            const std::size_t foff = (ky * 3 + kx) * c;
            for (std::size_t ci = 0; ci < c; ++ci) {
              gfbase[foff + ci] += g * icell[ci];
              dcell[ci] += g * fbase[foff + ci];
            }
          }
        }
      }
    }
  }
}

Tensor softmax_rows(const Tensor& x) {
  const std::size_t n = x.shape[0], k = x.shape[1];
  Tensor out({n, k});
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = x.data.data() + i * k;
    float* orow = out.data.data() + i * k;
    float m = row[0];
    for (std::size_t j = 1; j < k; ++j) m = std::max(m, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      orow[j] = std::exp(row[j] - m);
      sum += orow[j];
    }
    const float inv = static_cast<float>(1.0 / sum);
    for (std::size_t j = 0; j < k; ++j) orow[j] *= inv;
  }
  return out;
}

std::pair<Tensor, Tensor> dropout_with_mask(const Tensor& x, float q,
                                            Rng& rng) {
  Tensor mask(x.shape);
  Tensor out(x.shape);
  const float scale = 1.0f / (1.0f - q);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const float m = rng.next_double() < q ? 0.0f : scale;
    mask.data[i] = m;
    out.data[i] = x.data[i] * m;
  }
  return {std::move(out), std::move(mask)};
}

}  // namespace

Tensor dropout_forward(const Tensor& x, float q, Rng& rng, Mode mode) {
  if (!(q >= 0.0f && q < 1.0f)) {
    throw ArgumentError("dropout: fraction must be in [0,1)");
  }
  if (mode == Mode::Eval || q == 0.0f) {
    return x;  // value copy
  }
  return dropout_with_mask(x, q, rng).first;
}

Network::Network(std::vector<LayerSpec> specs,
                 std::vector<std::size_t> input_shape, Rng& init_rng)
    : specs_(std::move(specs)), input_shape_(std::move(input_shape)) {
  if (specs_.empty()) throw ArgumentError("network needs at least one layer");
  if (input_shape_.empty() || shape_numel(input_shape_) == 0) {
    throw DimensionError("network input shape must be non-empty");
  }

  std::vector<std::size_t> shape = input_shape_;
  states_.resize(specs_.size());
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    const LayerSpec& spec = specs_[i];
    LayerState& st = states_[i];
    auto fail = [&](const std::string& why) {
      throw DimensionError("layer " + std::to_string(i) + " (" +
                           layer_kind_name(spec.kind) + "): " + why);
    };
    switch (spec.kind) {
      case LayerKind::Conv2d: {
        if (shape.size() != 3) fail("expects [h,w,c] input");
        const std::size_t h = shape[0], w = shape[1], c = shape[2];
        if (spec.padding == Padding::Valid && (h < 3 || w < 3)) {
          fail("input too small for valid padding");
        }
        st.weights = Tensor({spec.filters, 3, 3, c});
        st.bias = Tensor({spec.filters});
        shape = spec.padding == Padding::Same
                    ? std::vector<std::size_t>{h, w, spec.filters}
                    : std::vector<std::size_t>{h - 2, w - 2, spec.filters};
        break;
      }
      case LayerKind::MaxPool2x2: {
        if (shape.size() != 3) fail("expects [h,w,c] input");
        if (shape[0] < 2 || shape[1] < 2) fail("input smaller than window");
        shape = {shape[0] / 2, shape[1] / 2, shape[2]};
        break;
      }
      case LayerKind::Flatten:
        shape = {shape_numel(shape)};
        break;
      case LayerKind::Dense: {
        if (shape.size() != 1) fail("expects flat input");
        st.weights = Tensor({shape[0], spec.units});
        st.bias = Tensor({spec.units});
        shape = {spec.units};
        break;
      }
      case LayerKind::Relu:
      case LayerKind::Dropout:
        break;
      case LayerKind::Softmax:
        if (shape.size() != 1) fail("expects flat input");
        break;
    }
    st.out_shape = shape;
    st.grad_weights = Tensor();
    st.grad_bias = Tensor();
    if (st.weights.numel() > 0) {
      st.grad_weights = Tensor(st.weights.shape);
      st.grad_bias = Tensor(st.bias.shape);
    }
  }
  init_params(init_rng);
}

void Network::init_params(Rng& init_rng) {
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    LayerState& st = states_[i];
    if (st.weights.numel() == 0) continue;
    Rng rng = init_rng.derive(i);
    double fan_in = 0, fan_out = 0;
    if (specs_[i].kind == LayerKind::Dense) {
      fan_in = static_cast<double>(st.weights.shape[0]);
      fan_out = static_cast<double>(st.weights.shape[1]);
    } else {  // conv [f,3,3,c]
      fan_in = 9.0 * static_cast<double>(st.weights.shape[3]);
      fan_out = 9.0 * static_cast<double>(st.weights.shape[0]);
    }
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (auto& v : st.weights.data) {
      v = static_cast<float>(rng.uniform(-limit, limit));
    }
    st.bias.fill(0.0f);
  }
}

const std::vector<std::size_t>& Network::output_shape(
    std::size_t layer) const {
  return states_.at(layer).out_shape;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& st : states_) n += st.weights.numel() + st.bias.numel();
  return n;
}

std::size_t Network::layer_parameter_count(std::size_t layer) const {
  const auto& st = states_.at(layer);
  return st.weights.numel() + st.bias.numel();
}

std::vector<ParamRef> Network::params() {
  std::vector<ParamRef> out;
  for (std::size_t i = 0; i < states_.size(); ++i) {
    auto sub = params_of(i);
    out.insert(out.end(), sub.begin(), sub.end());
  }
  return out;
}

std::vector<ParamRef> Network::params_of(std::size_t layer) {
  LayerState& st = states_.at(layer);
  std::vector<ParamRef> out;
  if (st.weights.numel() > 0) {
    out.push_back({layer, "weights", &st.weights, &st.grad_weights});
    out.push_back({layer, "bias", &st.bias, &st.grad_bias});
  }
  return out;
}

std::size_t Network::first_dense_layer() const {
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    if (specs_[i].kind == LayerKind::Dense) return i;
  }
  throw StateError("network has no dense layer");
}

ForwardCache Network::forward(const Tensor& batch, Mode mode,
                              Rng& rng) const {
  if (batch.rank() != input_shape_.size() + 1 ||
      !std::equal(input_shape_.begin(), input_shape_.end(),
                  batch.shape.begin() + 1)) {
    throw DimensionError("forward: batch " + batch.shape_str() +
                         " does not match network input");
  }
  const std::size_t n = batch.shape[0];

  ForwardCache cache;
  cache.mode = mode;
  cache.batch = n;
  cache.input = batch;
  cache.outputs.resize(specs_.size());
  cache.pool_index.resize(specs_.size());
  cache.dropout_mask.resize(specs_.size());

  const Tensor* x = &cache.input;
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    const LayerSpec& spec = specs_[i];
    const LayerState& st = states_[i];
    Tensor out;
    switch (spec.kind) {
      case LayerKind::Conv2d: {
        std::vector<std::size_t> in_shape(x->shape.begin() + 1,
                                          x->shape.end());
        out = Tensor({n, st.out_shape[0], st.out_shape[1], st.out_shape[2]});
        for (std::size_t s = 0; s < n; ++s) {
          Tensor sample = sample_slice(*x, in_shape, s);
          store_sample(out, s,
                       conv2d_forward(sample, st.weights, st.bias,
                                      spec.padding));
        }
        break;
      }
      case LayerKind::MaxPool2x2: {
        std::vector<std::size_t> in_shape(x->shape.begin() + 1,
                                          x->shape.end());
        const std::size_t sample_len = shape_numel(in_shape);
        out = Tensor({n, st.out_shape[0], st.out_shape[1], st.out_shape[2]});
        cache.pool_index[i].resize(out.numel());
        const std::size_t out_len = shape_numel(st.out_shape);
        for (std::size_t s = 0; s < n; ++s) {
          Tensor sample = sample_slice(*x, in_shape, s);
          PoolResult pr = maxpool2x2(sample);
          store_sample(out, s, pr.output);
          for (std::size_t j = 0; j < out_len; ++j) {
            cache.pool_index[i][s * out_len + j] =
                s * sample_len + pr.argmax[j];
          }
        }
        break;
      }
      case LayerKind::Flatten: {
        out = *x;
        out.shape = {n, st.out_shape[0]};
        break;
      }
      case LayerKind::Dense: {
        out = matmul(*x, st.weights);
        const std::size_t u = st.bias.numel();
        for (std::size_t s = 0; s < n; ++s) {
          float* row = out.data.data() + s * u;
          for (std::size_t j = 0; j < u; ++j) row[j] += st.bias[j];
        }
        break;
      }
      case LayerKind::Relu: {
        out = *x;
        for (auto& v : out.data) v = v > 0.0f ? v : 0.0f;
        break;
      }
      case LayerKind::Softmax:
        out = softmax_rows(*x);
        break;
      case LayerKind::Dropout: {
        if (mode == Mode::Train && spec.dropout_q > 0.0f) {
          auto [o, mask] = dropout_with_mask(*x, spec.dropout_q, rng);
          out = std::move(o);
          cache.dropout_mask[i] = std::move(mask);
        } else {
          out = *x;
        }
        break;
      }
    }
    try {
      ensure_finite(out, "activation");
    } catch (const NumericError&) {
      throw NumericError("layer " + std::to_string(i) + " (" +
                         layer_kind_name(spec.kind) +
                         "): non-finite activation");
    }
    cache.outputs[i] = std::move(out);
    x = &cache.outputs[i];
  }
  return cache;
}

const Tensor& Network::probabilities(const ForwardCache& cache) {
  if (cache.outputs.empty()) throw StateError("empty forward cache");
  return cache.outputs.back();
}

LossReport Network::loss_report(const ForwardCache& cache,
                                const std::vector<int>& labels) const {
  if (cache.outputs.size() != specs_.size()) {
    throw StateError("loss_report: cache does not match network");
  }
  if (specs_.back().kind != LayerKind::Softmax) {
    throw StateError("loss_report: network must end with softmax");
  }
  if (labels.size() != cache.batch) {
    throw DimensionError("loss_report: label count does not match batch");
  }
  const Tensor& probs = cache.outputs.back();
  const std::size_t classes = probs.shape[1];
  LossReport rep;
  double total = 0.0;
  for (std::size_t s = 0; s < labels.size(); ++s) {
    const int y = labels[s];
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw ArgumentError("loss_report: label " + std::to_string(y) +
                          " out of range");
    }
    const float* row = probs.data.data() + s * classes;
    total -= std::log(std::max<double>(row[y], 1e-12));
    std::size_t arg = 0;
    for (std::size_t j = 1; j < classes; ++j) {
      if (row[j] > row[arg]) arg = j;
    }
    if (arg == static_cast<std::size_t>(y)) ++rep.correct;
  }
  rep.loss = total / static_cast<double>(labels.size());
  return rep;
}

void Network::backward(const ForwardCache& cache,
                       const std::vector<int>& labels) {
  if (cache.outputs.size() != specs_.size() || cache.batch == 0) {
    throw StateError("backward: missing or mismatched forward cache");
  }
  if (labels.size() != cache.batch) {
    throw DimensionError("backward: label count does not match batch");
  }
  if (specs_.back().kind != LayerKind::Softmax) {
    throw StateError("backward: network must end with softmax");
  }
  const std::size_t n = cache.batch;

  for (auto& st : states_) {
    st.grad_weights.fill(0.0f);
    st.grad_bias.fill(0.0f);
  }

  // Fused softmax + mean cross-entropy: gradient at softmax input is
  // (probabilities - one-hot) / n.
  const Tensor& probs = cache.outputs.back();
  const std::size_t classes = probs.shape[1];
  Tensor delta = probs;
  const float inv_n = 1.0f / static_cast<float>(n);
  for (std::size_t s = 0; s < n; ++s) {
    const int y = labels[s];
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw ArgumentError("backward: label " + std::to_string(y) +
                          " out of range");
    }
    float* row = delta.data.data() + s * classes;
    row[y] -= 1.0f;
    for (std::size_t j = 0; j < classes; ++j) row[j] *= inv_n;
  }

  for (std::size_t ii = specs_.size() - 1; ii-- > 0;) {
    const std::size_t i = ii;  // layer producing cache.outputs[i]
    const LayerSpec& spec = specs_[i];
    LayerState& st = states_[i];
    const Tensor& x = i == 0 ? cache.input : cache.outputs[i - 1];
    const Tensor& out = cache.outputs[i];
    Tensor dx;
    switch (spec.kind) {
      case LayerKind::Dense: {
        st.grad_weights = matmul_tn(x, delta);
        const std::size_t u = st.bias.numel();
        for (std::size_t s = 0; s < n; ++s) {
          const float* row = delta.data.data() + s * u;
          for (std::size_t j = 0; j < u; ++j) st.grad_bias[j] += row[j];
        }
        dx = matmul_nt(delta, st.weights);
        break;
      }
      case LayerKind::Relu: {
        dx = delta;
        for (std::size_t j = 0; j < dx.numel(); ++j) {
          if (out.data[j] <= 0.0f) dx.data[j] = 0.0f;
        }
        break;
      }
      case LayerKind::Conv2d: {
        std::vector<std::size_t> in_shape(x.shape.begin() + 1,
                                          x.shape.end());
        const std::size_t h = in_shape[0], w = in_shape[1], c = in_shape[2];
        const std::size_t oh = out.shape[1], ow = out.shape[2],
                          f = out.shape[3];
        const long pad = spec.padding == Padding::Same ? 1 : 0;
        dx = Tensor(x.shape);
        const std::size_t in_len = h * w * c;
        const std::size_t out_len = oh * ow * f;
        for (std::size_t s = 0; s < n; ++s) {
          conv2d_backward_sample(
              x.data.data() + s * in_len, h, w, c, st.weights.data.data(), f,
              pad, delta.data.data() + s * out_len, oh, ow,
              st.grad_weights.data.data(), st.grad_bias.data.data(),
              dx.data.data() + s * in_len);
        }
        break;
      }
      case LayerKind::MaxPool2x2: {
        dx = Tensor(x.shape);
        const auto& index = cache.pool_index[i];
        for (std::size_t j = 0; j < delta.numel(); ++j) {
          dx.data[index[j]] += delta.data[j];
        }
        break;
      }
      case LayerKind::Flatten: {
        dx = delta;
        dx.shape = x.shape;
        break;
      }
      case LayerKind::Dropout: {
        const Tensor& mask = cache.dropout_mask[i];
        dx = delta;
        if (mask.numel() > 0) {
          for (std::size_t j = 0; j < dx.numel(); ++j) {
            dx.data[j] *= mask.data[j];
          }
        }
        break;
      }
      case LayerKind::Softmax: {
        // Non-terminal softmax: dx_j = p_j * (dy_j - sum_k dy_k p_k).
        const std::size_t k = out.shape[1];
        dx = Tensor(out.shape);
        for (std::size_t s = 0; s < n; ++s) {
          const float* p = out.data.data() + s * k;
          const float* dy = delta.data.data() + s * k;
          float* row = dx.data.data() + s * k;
          double dot = 0.0;
          for (std::size_t j = 0; j < k; ++j) dot += dy[j] * p[j];
          for (std::size_t j = 0; j < k; ++j) {
            row[j] = p[j] * (dy[j] - static_cast<float>(dot));
          }
        }
        break;
      }
    }
    delta = std::move(dx);
  }
  gradients_ready_ = true;
}

void Network::sgd_step(float lr) {
  if (lr < 0.0f) throw ArgumentError("sgd_step: negative learning rate");
  if (!gradients_ready_) {
    throw StateError("sgd_step: gradients not populated");
  }
  for (auto& st : states_) {
    for (std::size_t j = 0; j < st.weights.numel(); ++j) {
      st.weights.data[j] -= lr * st.grad_weights.data[j];
    }
    for (std::size_t j = 0; j < st.bias.numel(); ++j) {
      st.bias.data[j] -= lr * st.grad_bias.data[j];
    }
    st.grad_weights.fill(0.0f);
    st.grad_bias.fill(0.0f);
  }
  gradients_ready_ = false;
}

std::vector<LayerSpec> baseline_cnn_specs(float dropout_q) {
  std::vector<LayerSpec> specs;
  specs.push_back(LayerSpec::conv2d(32, Padding::Same));
  specs.push_back(LayerSpec::relu());
  specs.push_back(LayerSpec::conv2d(32, Padding::Valid));
  specs.push_back(LayerSpec::relu());
  specs.push_back(LayerSpec::maxpool());
  specs.push_back(LayerSpec::conv2d(64, Padding::Same));
  specs.push_back(LayerSpec::relu());
  specs.push_back(LayerSpec::conv2d(64, Padding::Valid));
  specs.push_back(LayerSpec::relu());
  specs.push_back(LayerSpec::maxpool());
  specs.push_back(LayerSpec::flatten());
  if (dropout_q > 0.0f) specs.push_back(LayerSpec::dropout(dropout_q));
  specs.push_back(LayerSpec::dense(512));
  specs.push_back(LayerSpec::relu());
  specs.push_back(LayerSpec::dense(10));
  specs.push_back(LayerSpec::softmax());
  return specs;
}

Network build_baseline_cnn(Rng& init_rng, float dropout_q) {
  return Network(baseline_cnn_specs(dropout_q), {32, 32, 3}, init_rng);
}

std::vector<LayerSpec> mlp_specs(const std::vector<std::size_t>& hidden,
                                 std::size_t classes, float dropout_q) {
  std::vector<LayerSpec> specs;
  specs.push_back(LayerSpec::flatten());
  if (dropout_q > 0.0f) specs.push_back(LayerSpec::dropout(dropout_q));
  for (std::size_t h : hidden) {
    specs.push_back(LayerSpec::dense(h));
    specs.push_back(LayerSpec::relu());
  }
  specs.push_back(LayerSpec::dense(classes));
  specs.push_back(LayerSpec::softmax());
  return specs;
}

}  // namespace annealprune
