#pragma once

// Connectionist temporal classification over per-column class posteriors.
// Class 0 is the blank. All recursions run in log space.

#include <span>
#include <stdexcept>
#include <vector>

#include "mdrnn/feature_grid.hpp"
#include "mdrnn/numerics.hpp"

namespace mdrnn {

/// Target too long for the number of frames.
class InfeasibleAlignment : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Blank-interleaved target: (blank, z1, blank, z2, ..., blank).
std::vector<int> ctc_augment(std::span<const int> target);

/// Fewest frames able to emit `target`: one per label plus one blank between
/// every pair of equal neighbours.
std::size_t ctc_min_frames(std::span<const int> target);

/// Forward/backward variables. log_alpha(t, s) covers frames 0..t including
/// the emission at t; log_beta(t, s) covers frames t+1..T-1, so that
/// sum_s alpha(t, s) * beta(t, s) is the total path probability for every t.
struct CtcLattice {
  Tensor log_alpha;  // T x S
  Tensor log_beta;   // T x S
  std::vector<int> augmented;
  double log_likelihood = kLogZero;
};

/// `log_probs` is T x K. Throws InfeasibleAlignment if T is too short.
CtcLattice ctc_lattice(const Tensor& log_probs, std::span<const int> target);

struct CtcResult {
  double loss = 0.0;  // negative log-likelihood
  FeatureGrid grad;   // same shape as the scored grid
};

/// NLL of `target` under 1 x T x K posteriors, with the gradient w.r.t. the
/// posteriors.
CtcResult ctc_nll(const FeatureGrid& posteriors, std::span<const int> target);

/// NLL under softmax(logits), with the fused gradient w.r.t. the logits
/// (posterior minus normalized label occupancy).
CtcResult ctc_nll_from_logits(const FeatureGrid& logits, std::span<const int> target);

/// Per-column argmax (lowest class wins ties), repeats merged, blanks removed.
std::vector<int> best_path_decode(const FeatureGrid& posteriors);

}  // namespace mdrnn
