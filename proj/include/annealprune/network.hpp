#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "annealprune/rng.hpp"
#include "annealprune/tensor.hpp"

namespace annealprune {

enum class LayerKind {
  Conv2d,
  MaxPool2x2,
  Flatten,
  Dense,
  Relu,
  Softmax,
  Dropout
};

const char* layer_kind_name(LayerKind k);

struct LayerSpec {
  LayerKind kind;
  std::size_t filters = 0;          // Conv2d
  Padding padding = Padding::Same;  // Conv2d
  std::size_t units = 0;            // Dense
  float dropout_q = 0.0f;           // Dropout, q in [0,1)

  static LayerSpec conv2d(std::size_t filters, Padding padding);
  static LayerSpec maxpool();
  static LayerSpec flatten();
  static LayerSpec dense(std::size_t units);
  static LayerSpec relu();
  static LayerSpec softmax();
  static LayerSpec dropout(float q);
};

enum class Mode { Train, Eval };

// Train-time inverted dropout: elements zeroed with probability q,
// survivors scaled by 1/(1-q). Eval mode is the identity.
Tensor dropout_forward(const Tensor& x, float q, Rng& rng, Mode mode);

// Parameter registry entry; pointers stay valid while the network lives
// and is not copied or moved.
struct ParamRef {
  std::size_t layer;
  std::string name;  // "weights" or "bias"
  Tensor* value;
  Tensor* grad;
};

struct LossReport {
  double loss = 0.0;        // mean cross-entropy, nats
  std::size_t correct = 0;  // argmax matches
};

// Every per-layer batched activation plus the bookkeeping backward needs.
struct ForwardCache {
  Mode mode = Mode::Eval;
  std::size_t batch = 0;
  Tensor input;
  std::vector<Tensor> outputs;                       // one per layer
  std::vector<std::vector<std::size_t>> pool_index;  // argmax, pool layers
  std::vector<Tensor> dropout_mask;                  // scaled, dropout layers
};

// An ordered layer stack with materialized parameters. Layer output
// shapes are composed and validated at build time. Single-owner while
// training; copying yields an independent network for read-only eval.
class Network {
 public:
  // input_shape is the per-sample shape, e.g. {32,32,3} or {784}.
  Network(std::vector<LayerSpec> specs, std::vector<std::size_t> input_shape,
          Rng& init_rng);

  const std::vector<LayerSpec>& specs() const { return specs_; }
  const std::vector<std::size_t>& input_shape() const { return input_shape_; }
  std::size_t layer_count() const { return specs_.size(); }

  // Per-sample output shape of layer i.
  const std::vector<std::size_t>& output_shape(std::size_t layer) const;

  std::size_t parameter_count() const;
  std::size_t layer_parameter_count(std::size_t layer) const;

  // Registry views. Order within a layer is weights then bias.
  std::vector<ParamRef> params();
  std::vector<ParamRef> params_of(std::size_t layer);

  // Index of the first Dense layer; throws StateError if none.
  std::size_t first_dense_layer() const;

  // Runs the batch through every layer, caching activations. batch shape
  // is {n, ...input_shape}. Dropout draws from rng in Train mode only.
  ForwardCache forward(const Tensor& batch, Mode mode, Rng& rng) const;

  // Output of the last layer (class probabilities when it is Softmax).
  static const Tensor& probabilities(const ForwardCache& cache);

  LossReport loss_report(const ForwardCache& cache,
                         const std::vector<int>& labels) const;

  // Fills every registered gradient from the cached forward pass. The
  // terminal Softmax + cross-entropy gradient is fused.
  void backward(const ForwardCache& cache, const std::vector<int>& labels);

  bool gradients_ready() const { return gradients_ready_; }

  // w -= lr * grad for every parameter, then clears gradients.
  void sgd_step(float lr);

 private:
  struct LayerState {
    Tensor weights;
    Tensor bias;
    Tensor grad_weights;
    Tensor grad_bias;
    std::vector<std::size_t> out_shape;
  };

  void init_params(Rng& init_rng);

  std::vector<LayerSpec> specs_;
  std::vector<std::size_t> input_shape_;
  std::vector<LayerState> states_;
  bool gradients_ready_ = false;
};

// The CIFAR-10 stack: conv32(same), conv32(valid), pool, conv64(same),
// conv64(valid), pool, flatten, dense 512, dense 10, with ReLU after every
// conv/dense except the last dense, which gets softmax. dropout_q > 0
// inserts a dropout layer on the features feeding the first dense layer.
std::vector<LayerSpec> baseline_cnn_specs(float dropout_q = 0.0f);
Network build_baseline_cnn(Rng& init_rng, float dropout_q = 0.0f);

// Flatten -> [dropout] -> dense(h)+relu per hidden width -> dense(classes)
// -> softmax.
std::vector<LayerSpec> mlp_specs(const std::vector<std::size_t>& hidden,
                                 std::size_t classes, float dropout_q = 0.0f);

}  // namespace annealprune
