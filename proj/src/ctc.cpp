#include "mdrnn/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mdrnn {

namespace {

constexpr int kBlank = 0;

Tensor log_of(const FeatureGrid& posteriors) {
  Tensor out({posteriors.width(), posteriors.depth()});
  auto src = posteriors.values();
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = std::log(src[i]);
  return out;
}

Tensor log_softmax(const FeatureGrid& logits) {
  const std::size_t T = logits.width(), K = logits.depth();
  Tensor out({T, K});
  for (std::size_t t = 0; t < T; ++t) {
    const double* x = logits.cell(0, t);
    const double lse = log_sum_exp({x, K});
    for (std::size_t k = 0; k < K; ++k) out[t * K + k] = x[k] - lse;
  }
  return out;
}

void require_collapsed(const FeatureGrid& g, const char* who) {
  if (g.height() != 1) throw std::invalid_argument(std::string(who) + ": grid must have height 1");
}

// log of sum over augmented positions s with label k of alpha(t,s) beta(t,s).
Tensor log_occupancy(const CtcLattice& lat, std::size_t T, std::size_t K) {
  const std::size_t S = lat.augmented.size();
  Tensor occ({T, K}, kLogZero);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t s = 0; s < S; ++s) {
      double& o = occ[t * K + static_cast<std::size_t>(lat.augmented[s])];
      o = log_add(o, lat.log_alpha[t * S + s] + lat.log_beta[t * S + s]);
    }
  return occ;
}

}  // namespace

std::vector<int> ctc_augment(std::span<const int> target) {
  std::vector<int> aug;
  aug.reserve(2 * target.size() + 1);
  aug.push_back(kBlank);
  for (int l : target) {
    if (l == kBlank) throw std::invalid_argument("CTC target must not contain the blank");
    aug.push_back(l);
    aug.push_back(kBlank);
  }
  return aug;
}

std::size_t ctc_min_frames(std::span<const int> target) {
  std::size_t n = target.size();
  for (std::size_t i = 1; i < target.size(); ++i)
    if (target[i] == target[i - 1]) ++n;
  return n;
}

CtcLattice ctc_lattice(const Tensor& log_probs, std::span<const int> target) {
  if (log_probs.rank() != 2) throw std::invalid_argument("ctc_lattice: log_probs must be T x K");
  const std::size_t T = log_probs.dim(0), K = log_probs.dim(1);
  if (T == 0) throw InfeasibleAlignment("ctc: no frames");
  for (int l : target)
    if (l <= 0 || static_cast<std::size_t>(l) >= K)
      throw std::invalid_argument("ctc: target label out of range");
  const std::size_t need = ctc_min_frames(target);
  if (T < need)
    throw InfeasibleAlignment("ctc: target needs " + std::to_string(need) + " frames, got " +
                              std::to_string(T));

  CtcLattice lat;
  lat.augmented = ctc_augment(target);
  const auto& z = lat.augmented;
  const std::size_t S = z.size();
  lat.log_alpha = Tensor({T, S}, kLogZero);
  lat.log_beta = Tensor({T, S}, kLogZero);
  auto lp = [&](std::size_t t, std::size_t s) {
    return log_probs[t * K + static_cast<std::size_t>(z[s])];
  };
  auto skip_allowed = [&](std::size_t s) {
    return s >= 2 && z[s] != kBlank && z[s] != z[s - 2];
  };

  double* alpha = lat.log_alpha.data();
  alpha[0] = lp(0, 0);
  if (S > 1) alpha[1] = lp(0, 1);
  for (std::size_t t = 1; t < T; ++t) {
    const double* prev = alpha + (t - 1) * S;
    double* cur = alpha + t * S;
    for (std::size_t s = 0; s < S; ++s) {
      double a = prev[s];
      if (s >= 1) a = log_add(a, prev[s - 1]);
      if (skip_allowed(s)) a = log_add(a, prev[s - 2]);
      cur[s] = a == kLogZero ? kLogZero : a + lp(t, s);
    }
  }

  double* beta = lat.log_beta.data();
  beta[(T - 1) * S + S - 1] = 0.0;
  if (S > 1) beta[(T - 1) * S + S - 2] = 0.0;
  for (std::size_t t = T - 1; t-- > 0;) {
    const double* next = beta + (t + 1) * S;
    double* cur = beta + t * S;
    for (std::size_t s = 0; s < S; ++s) {
      double b = next[s] + lp(t + 1, s);
      if (s + 1 < S) b = log_add(b, next[s + 1] + lp(t + 1, s + 1));
      if (s + 2 < S && skip_allowed(s + 2)) b = log_add(b, next[s + 2] + lp(t + 1, s + 2));
      cur[s] = b;
    }
  }

  const double* last = alpha + (T - 1) * S;
  lat.log_likelihood = S > 1 ? log_add(last[S - 1], last[S - 2]) : last[0];
  return lat;
}

CtcResult ctc_nll(const FeatureGrid& posteriors, std::span<const int> target) {
  require_collapsed(posteriors, "ctc_nll");
  const std::size_t T = posteriors.width(), K = posteriors.depth();
  const Tensor lp = log_of(posteriors);
  const CtcLattice lat = ctc_lattice(lp, target);
  if (lat.log_likelihood == kLogZero)
    throw NumericalError("ctc_nll: target has zero probability under the posteriors");
  const Tensor occ = log_occupancy(lat, T, K);
  CtcResult r{-lat.log_likelihood, FeatureGrid(1, T, K)};
  auto g = r.grad.values();
  for (std::size_t i = 0; i < T * K; ++i)
    g[i] = occ[i] == kLogZero ? 0.0 : -std::exp(occ[i] - lat.log_likelihood - lp[i]);
  return r;
}

CtcResult ctc_nll_from_logits(const FeatureGrid& logits, std::span<const int> target) {
  require_collapsed(logits, "ctc_nll_from_logits");
  const std::size_t T = logits.width(), K = logits.depth();
  const Tensor lp = log_softmax(logits);
  const CtcLattice lat = ctc_lattice(lp, target);
  if (lat.log_likelihood == kLogZero)
    throw NumericalError("ctc_nll_from_logits: target has zero probability");
  const Tensor occ = log_occupancy(lat, T, K);
  CtcResult r{-lat.log_likelihood, FeatureGrid(1, T, K)};
  auto g = r.grad.values();
  for (std::size_t i = 0; i < T * K; ++i)
    g[i] = std::exp(lp[i]) - (occ[i] == kLogZero ? 0.0 : std::exp(occ[i] - lat.log_likelihood));
  return r;
}

std::vector<int> best_path_decode(const FeatureGrid& posteriors) {
  require_collapsed(posteriors, "best_path_decode");
  std::vector<int> out;
  int prev = -1;
  for (std::size_t t = 0; t < posteriors.width(); ++t) {
    const double* col = posteriors.cell(0, t);
    const int best = static_cast<int>(std::max_element(col, col + posteriors.depth()) - col);
    if (best != prev && best != kBlank) out.push_back(best);
    prev = best;
  }
  return out;
}

}  // namespace mdrnn
