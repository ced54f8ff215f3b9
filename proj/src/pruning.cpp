#include "annealprune/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "annealprune/error.hpp"

namespace annealprune {

void ApHyperparams::validate() const {
  if (!(keep_fraction > 0.0 && keep_fraction < 1.0)) {
    throw ArgumentError("ap: keep fraction must be in (0,1)");
  }
  if (!(mu > 0.0)) throw ArgumentError("ap: mu must be positive");
  if (start < 1) throw ArgumentError("ap: start must be >= 1");
  if (!(reentry_b0 >= 0.0 && reentry_b0 < 1.0)) {
    throw ArgumentError("ap: reentry bound must be in [0,1)");
  }
}

ScheduleParams make_schedule(std::size_t total, const ApHyperparams& hp,
                             std::size_t total_epochs) {
  hp.validate();
  if (total == 0) throw ArgumentError("schedule: empty target layer");
  if (total_epochs < hp.start + hp.post) {
    throw ArgumentError("schedule: need at least start + post epochs");
  }
  ScheduleParams s;
  s.total = total;
  s.keep = static_cast<std::size_t>(
      std::floor(hp.keep_fraction * static_cast<double>(total)));
  s.iterations = total_epochs - hp.post - hp.start + 1;
  s.mu = hp.mu;
  if (s.keep == 0 || s.keep > s.total) {
    throw ArgumentError("schedule: keep count out of range");
  }
  return s;
}

std::size_t scheduled_nonzero(std::size_t i, const ScheduleParams& s) {
  if (i < 1) throw ArgumentError("scheduled_nonzero: iteration must be >= 1");
  if (i >= s.iterations) return s.keep;
  const double frac =
      (static_cast<double>(s.iterations) - static_cast<double>(i)) /
      (2.0 * static_cast<double>(i) * s.mu + static_cast<double>(s.iterations));
  const double extra =
      std::floor(static_cast<double>(s.total - s.keep) * std::max(0.0, frac));
  return s.keep + static_cast<std::size_t>(extra);
}

MaskState make_mask_state(const ApHyperparams& hp, std::size_t target_layer,
                          Rng rng) {
  hp.validate();
  MaskState st;
  st.hp = hp;
  st.target_layer = target_layer;
  st.rng = rng;
  return st;
}

LayerParamView::LayerParamView(Network& net, std::size_t layer)
    : refs_(net.params_of(layer)) {
  for (const auto& r : refs_) size_ += r.value->numel();
}

std::vector<float> LayerParamView::gather_values() const {
  std::vector<float> out;
  out.reserve(size_);
  for (const auto& r : refs_) {
    out.insert(out.end(), r.value->data.begin(), r.value->data.end());
  }
  return out;
}

void LayerParamView::zero_where(const std::vector<std::uint8_t>& mask) {
  if (mask.size() != size_) {
    throw DimensionError("mask length does not match layer parameter count");
  }
  std::size_t off = 0;
  for (const auto& r : refs_) {
    for (std::size_t j = 0; j < r.value->numel(); ++j) {
      if (mask[off + j]) r.value->data[j] = 0.0f;
    }
    off += r.value->numel();
  }
}

void LayerParamView::zero_grads_where(const std::vector<std::uint8_t>& mask) {
  if (mask.size() != size_) {
    throw DimensionError("mask length does not match layer parameter count");
  }
  std::size_t off = 0;
  for (const auto& r : refs_) {
    for (std::size_t j = 0; j < r.grad->numel(); ++j) {
      if (mask[off + j]) r.grad->data[j] = 0.0f;
    }
    off += r.grad->numel();
  }
}

std::size_t LayerParamView::count_nonzero() const {
  std::size_t n = 0;
  for (const auto& r : refs_) {
    for (float v : r.value->data) {
      if (v != 0.0f) ++n;
    }
  }
  return n;
}

void select_for_pruning(const std::vector<float>& values, MaskState& state,
                        std::size_t scheduled) {
  if (state.frozen) throw StateError("select_for_pruning: mask is frozen");
  if (values.size() != state.mask.size()) {
    throw DimensionError("select_for_pruning: value/mask length mismatch");
  }
  std::vector<std::size_t> candidates;
  candidates.reserve(values.size());
  for (std::size_t j = 0; j < values.size(); ++j) {
    if (!state.mask[j]) candidates.push_back(j);
  }
  if (scheduled > candidates.size()) {
    throw ScheduleError("select_for_pruning: scheduled count " +
                        std::to_string(scheduled) + " exceeds unpruned count " +
                        std::to_string(candidates.size()));
  }
  // Ascending magnitude, ties by ascending flat index (candidates are
  // already index-sorted, so a stable sort on magnitude suffices).
  std::stable_sort(candidates.begin(), candidates.end(),
                   [&](std::size_t a, std::size_t b) {
                     return std::fabs(values[a]) < std::fabs(values[b]);
                   });
  if (state.hp.mode == PruneMode::Largest) {
    // Keep the `scheduled` smallest magnitudes, mask the rest.
    for (std::size_t t = scheduled; t < candidates.size(); ++t) {
      state.mask[candidates[t]] = 1;
    }
  } else {
    // Keep the `scheduled` largest magnitudes, mask the smallest.
    const std::size_t to_mask = candidates.size() - scheduled;
    for (std::size_t t = 0; t < to_mask; ++t) {
      state.mask[candidates[t]] = 1;
    }
  }
}

void apply_mask(std::vector<float>& values,
                const std::vector<std::uint8_t>& mask) {
  if (values.size() != mask.size()) {
    throw DimensionError("apply_mask: value/mask length mismatch");
  }
  for (std::size_t j = 0; j < values.size(); ++j) {
    if (mask[j]) values[j] = 0.0f;
  }
}

std::size_t reentry(MaskState& state, std::size_t i) {
  if (state.frozen) throw StateError("reentry: mask is frozen");
  const double n = static_cast<double>(state.schedule.iterations);
  const double bound =
      state.hp.reentry_b0 * (1.0 - static_cast<double>(i) / n);
  const double a = state.rng.uniform(0.0, std::max(0.0, bound));

  std::vector<std::size_t> pruned;
  for (std::size_t j = 0; j < state.mask.size(); ++j) {
    if (state.mask[j]) pruned.push_back(j);
  }
  const std::size_t count = static_cast<std::size_t>(
      std::floor(static_cast<double>(pruned.size()) * a));
  // Partial Fisher-Yates: the first `count` entries become a uniform
  // sample without replacement.
  for (std::size_t t = 0; t < count; ++t) {
    const std::size_t r =
        t + state.rng.next_below(pruned.size() - t);
    std::swap(pruned[t], pruned[r]);
    state.mask[pruned[t]] = 0;
  }
  return count;
}

void ap_epoch_end(Network& net, MaskState& state, std::size_t e,
                  std::size_t total_epochs) {
  if (e < 1 || e > total_epochs) {
    throw ProtocolError("ap_epoch_end: epoch " + std::to_string(e) +
                        " outside [1," + std::to_string(total_epochs) + "]");
  }
  if (e != state.last_epoch + 1) {
    throw ProtocolError("ap_epoch_end: expected epoch " +
                        std::to_string(state.last_epoch + 1) + ", got " +
                        std::to_string(e));
  }
  if (state.initialized && state.total_epochs != total_epochs) {
    throw ProtocolError("ap_epoch_end: total epoch count changed mid-run");
  }
  if (!state.initialized) {
    const std::size_t total =
        net.layer_parameter_count(state.target_layer);
    state.schedule = make_schedule(total, state.hp, total_epochs);
    state.mask.assign(total, 0);
    state.total_epochs = total_epochs;
    state.initialized = true;
  }
  state.last_epoch = e;

  if (state.frozen) return;
  if (e < state.hp.start) return;
  const std::size_t i = e - state.hp.start + 1;
  if (i > state.schedule.iterations) return;

  LayerParamView view(net, state.target_layer);
  const std::size_t scheduled = scheduled_nonzero(i, state.schedule);
  std::vector<float> values = view.gather_values();
  select_for_pruning(values, state, scheduled);
  view.zero_where(state.mask);
  reentry(state, i);
  if (i == state.schedule.iterations) {
    state.frozen = true;
  }
}

void discard_masked_gradients(Network& net, const MaskState& state) {
  if (!state.frozen) return;
  LayerParamView view(net, state.target_layer);
  view.zero_grads_where(state.mask);
}

void enforce_frozen_zeros(Network& net, const MaskState& state) {
  if (!state.frozen) return;
  LayerParamView view(net, state.target_layer);
  view.zero_where(state.mask);
}

double nonzero_fraction(Network& net, std::size_t layer) {
  LayerParamView view(net, layer);
  return static_cast<double>(view.count_nonzero()) /
         static_cast<double>(view.size());
}

double nonzero_fraction(const MaskState& state, Network& net) {
  return nonzero_fraction(net, state.target_layer);
}

}  // namespace annealprune
