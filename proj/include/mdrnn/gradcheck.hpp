#pragma once

// Central finite-difference checks of analytic gradients.

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mdrnn/network.hpp"

namespace mdrnn {

struct GradCheckOptions {
  double step = 1e-5;
  /// Total coordinates probed; every parameter tensor gets at least one.
  std::size_t coordinates = 40;
  /// Denominator floor of the relative error.
  double floor = 1e-6;
};

struct GradCheckEntry {
  std::string name;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
};

/// |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor = 1e-6);

/// (loss(x + h) - loss(x - h)) / 2h, restoring x afterwards.
double central_difference(const std::function<double()>& loss, double& x, double step);

/// CTC loss of `target` for the network on `image`, with dropout masks drawn
/// from a copy of `mask_rng` so every evaluation sees the same masks.
double network_ctc_loss(const Network& net, const FeatureGrid& image, std::span<const int> target,
                        const ForwardOptions& options, const Rng& mask_rng);

/// Compares backpropagated parameter gradients of network_ctc_loss against
/// central differences at coordinates chosen with `pick`.
GradCheckReport check_network_gradients(Network& net, const FeatureGrid& image,
                                        std::span<const int> target, const ForwardOptions& options,
                                        const Rng& mask_rng, Rng& pick,
                                        const GradCheckOptions& opts = {});

}  // namespace mdrnn
