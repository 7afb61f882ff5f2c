#include "mdrnn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "mdrnn/ctc.hpp"

namespace mdrnn {

double relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

double central_difference(const std::function<double()>& loss, double& x, double step) {
  const double saved = x;
  x = saved + step;
  const double up = loss();
  x = saved - step;
  const double down = loss();
  x = saved;
  return (up - down) / (2.0 * step);
}

double network_ctc_loss(const Network& net, const FeatureGrid& image, std::span<const int> target,
                        const ForwardOptions& options, const Rng& mask_rng) {
  Rng rng = mask_rng;
  ForwardCache cache;
  net.forward(image, options, rng, &cache);
  return ctc_nll_from_logits(cache.logits, target).loss;
}

GradCheckReport check_network_gradients(Network& net, const FeatureGrid& image,
                                        std::span<const int> target, const ForwardOptions& options,
                                        const Rng& mask_rng, Rng& pick,
                                        const GradCheckOptions& opts) {
  net.zero_grad();
  {
    Rng rng = mask_rng;
    ForwardCache cache;
    net.forward(image, options, rng, &cache);
    net.backward_from_logits(cache, ctc_nll_from_logits(cache.logits, target).grad);
  }

  struct Slot {
    std::string name;
    Param* param;
  };
  std::vector<Slot> slots;
  std::size_t total = 0;
  net.mutable_params().visit([&](const std::string& name, Param& p) {
    slots.push_back({name, &p});
    total += p.value.size();
  });

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t s = 0; s < slots.size(); ++s)
    coords.emplace_back(s, pick.below(slots[s].param->value.size()));
  while (coords.size() < opts.coordinates) {
    std::size_t flat = pick.below(total);
    std::size_t s = 0;
    while (flat >= slots[s].param->value.size()) flat -= slots[s++].param->value.size();
    coords.emplace_back(s, flat);
  }

  GradCheckReport report;
  const auto loss = [&] { return network_ctc_loss(net, image, target, options, mask_rng); };
  for (const auto& [s, i] : coords) {
    Param& p = *slots[s].param;
    GradCheckEntry e{slots[s].name, i, p.grad[i], 0.0, 0.0};
    e.numeric = central_difference(loss, p.value[i], opts.step);
    e.rel_error = relative_error(e.analytic, e.numeric, opts.floor);
    report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
    report.entries.push_back(std::move(e));
  }
  return report;
}

}  // namespace mdrnn
