#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "annealprune/network.hpp"
#include "annealprune/rng.hpp"

namespace annealprune {

// Largest targets the highest-magnitude weights each iteration; Smallest
// is the conventional keep-largest strategy used as the ablation arm.
enum class PruneMode { Largest, Smallest };

struct ApHyperparams {
  double keep_fraction = 0.1;  // final fraction of the layer left nonzero
  double mu = 1.0;             // annealing rate
  std::size_t start = 3;       // first pruning epoch
  std::size_t post = 3;        // post-pruning epochs
  double reentry_b0 = 0.5;     // initial reentry bound; 0 disables reentry
  PruneMode mode = PruneMode::Largest;

  void validate() const;
};

struct ScheduleParams {
  std::size_t total = 0;       // M, parameter count of the target layer
  std::size_t keep = 0;        // k = floor(p * M)
  std::size_t iterations = 0;  // n = N - post - start + 1
  double mu = 1.0;
};

// Derives the (M, k, n, mu) tuple for a run of N total epochs.
ScheduleParams make_schedule(std::size_t total, const ApHyperparams& hp,
                             std::size_t total_epochs);

// Scheduled number of nonzero weights at iteration i >= 1:
// k + floor((M - k) * max(0, (n - i) / (2*i*mu + n))). Equals k for i >= n.
std::size_t scheduled_nonzero(std::size_t i, const ScheduleParams& s);

// Per-run pruning state over one target layer's flattened parameters
// (weights first, then bias). mask[j] == 1 marks a parameter selected for
// pruning; once frozen the mask never changes and masked parameters stay
// exactly zero.
struct MaskState {
  ApHyperparams hp;
  std::size_t target_layer = 0;
  std::vector<std::uint8_t> mask;
  ScheduleParams schedule;
  bool frozen = false;
  Rng rng{0};
  std::size_t last_epoch = 0;  // protocol tracking, 0 before first call
  std::size_t total_epochs = 0;
  bool initialized = false;
};

MaskState make_mask_state(const ApHyperparams& hp, std::size_t target_layer,
                          Rng rng);

// Flattened read/write view over one layer's parameters, weights first
// then bias. Mask indices address this flat order.
class LayerParamView {
 public:
  LayerParamView(Network& net, std::size_t layer);

  std::size_t size() const { return size_; }
  std::vector<float> gather_values() const;
  void zero_where(const std::vector<std::uint8_t>& mask);
  void zero_grads_where(const std::vector<std::uint8_t>& mask);
  std::size_t count_nonzero() const;

 private:
  std::vector<ParamRef> refs_;
  std::size_t size_ = 0;
};

// Among currently-unmasked entries, marks all but `scheduled` of them:
// Largest masks the highest magnitudes, Smallest the lowest. Ties break
// by ascending flat index. Exactly `scheduled` entries stay unmasked.
void select_for_pruning(const std::vector<float>& values, MaskState& state,
                        std::size_t scheduled);

// Zeroes values[j] wherever mask[j] == 1.
void apply_mask(std::vector<float>& values,
                const std::vector<std::uint8_t>& mask);

// Draws a ~ U(0, b0 * (1 - i/n)) and unmasks floor(pruned_ct * a)
// uniformly-sampled masked entries. Returns how many were unmasked;
// always 0 at i == n.
std::size_t reentry(MaskState& state, std::size_t i);

// End-of-epoch callback. Epochs must arrive as 1, 2, ..., N exactly once
// each. Iteration i = e - start + 1; while 1 <= i <= n it runs
// scheduled_nonzero, select_for_pruning, apply_mask, reentry in that
// order, and at i == n freezes the mask permanently.
void ap_epoch_end(Network& net, MaskState& state, std::size_t e,
                  std::size_t total_epochs);

// Post-freeze training hooks: drop gradients of masked parameters and
// re-zero masked parameters after an optimizer step. No-ops until frozen.
void discard_masked_gradients(Network& net, const MaskState& state);
void enforce_frozen_zeros(Network& net, const MaskState& state);

// Fraction of the target layer's parameters that are exactly nonzero.
double nonzero_fraction(const MaskState& state, Network& net);
double nonzero_fraction(Network& net, std::size_t layer);

}  // namespace annealprune
