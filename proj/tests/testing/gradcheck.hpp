#pragma once

// Central-difference gradient checking against Network::backward. The
// same rng seed is used for every forward pass so dropout masks stay
// fixed while a parameter is probed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "annealprune/network.hpp"
#include "annealprune/rng.hpp"

namespace annealprune::testing {

inline double loss_at(Network& net, const Tensor& batch,
                      const std::vector<int>& labels,
                      std::uint64_t forward_seed) {
  Rng rng(forward_seed);
  const ForwardCache cache = net.forward(batch, Mode::Train, rng);
  return net.loss_report(cache, labels).loss;
}

struct GradCheckResult {
  std::size_t probes = 0;
  std::size_t failures = 0;
  double worst_rel = 0.0;    // |fd - an| / max(|fd|, |an|) at worst probe
  double worst_diff = 0.0;   // |fd - an| at worst probe
  double worst_fd = 0.0;
  double worst_an = 0.0;
};

// Probes up to max_probes parameters (0 = all, in registry order;
// otherwise uniformly sampled). A probe passes when
//   |fd - an| <= rtol * max(|fd|, |an|) + atol,
// the atol floor absorbing float rounding in the two loss evaluations.
inline GradCheckResult grad_check(Network& net, const Tensor& batch,
                                  const std::vector<int>& labels,
                                  double eps, double rtol, double atol,
                                  std::uint64_t forward_seed,
                                  std::size_t max_probes, Rng& pick_rng) {
  Rng rng(forward_seed);
  const ForwardCache cache = net.forward(batch, Mode::Train, rng);
  net.backward(cache, labels);

  std::vector<ParamRef> refs = net.params();
  std::vector<std::pair<std::size_t, std::size_t>> slots;  // (ref, index)
  for (std::size_t r = 0; r < refs.size(); ++r) {
    for (std::size_t j = 0; j < refs[r].value->numel(); ++j) {
      slots.push_back({r, j});
    }
  }
  std::vector<double> analytic(slots.size());
  for (std::size_t s = 0; s < slots.size(); ++s) {
    analytic[s] = refs[slots[s].first].grad->data[slots[s].second];
  }

  std::vector<std::size_t> order(slots.size());
  for (std::size_t s = 0; s < order.size(); ++s) order[s] = s;
  if (max_probes != 0 && max_probes < order.size()) {
    for (std::size_t t = 0; t < max_probes; ++t) {
      const std::size_t r = t + pick_rng.next_below(order.size() - t);
      std::swap(order[t], order[r]);
    }
    order.resize(max_probes);
  }

  GradCheckResult res;
  for (const std::size_t s : order) {
    float& w = refs[slots[s].first].value->data[slots[s].second];
    const float saved = w;
    w = static_cast<float>(saved + eps);
    const double lp = loss_at(net, batch, labels, forward_seed);
    w = static_cast<float>(saved - eps);
    const double lm = loss_at(net, batch, labels, forward_seed);
    w = saved;
    const double fd = (lp - lm) / (2.0 * eps);
    const double an = analytic[s];
    const double diff = std::fabs(fd - an);
    const double scale = std::max(std::fabs(fd), std::fabs(an));
    ++res.probes;
    if (diff > rtol * scale + atol) ++res.failures;
    const double rel = diff / std::max(scale, 1e-12);
    if (diff > res.worst_diff) {
      res.worst_diff = diff;
      res.worst_rel = rel;
      res.worst_fd = fd;
      res.worst_an = an;
    }
  }
  return res;
}

}  // namespace annealprune::testing
