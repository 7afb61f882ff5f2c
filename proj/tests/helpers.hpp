#pragma once

#include <functional>
#include <vector>

#include "mdrnn/feature_grid.hpp"
#include "mdrnn/gradcheck.hpp"
#include "mdrnn/layers.hpp"
#include "mdrnn/numerics.hpp"
#include "oracles.hpp"

namespace testing {

inline mdrnn::FeatureGrid random_grid(std::size_t h, std::size_t w, std::size_t d,
                                      mdrnn::Rng& rng, double scale = 1.0) {
  mdrnn::FeatureGrid g(h, w, d);
  for (double& v : g.values()) v = scale * (2.0 * rng.uniform() - 1.0);
  return g;
}

inline void randomize(mdrnn::Tensor& t, mdrnn::Rng& rng, double scale = 0.5) {
  for (double& v : t.values()) v = scale * (2.0 * rng.uniform() - 1.0);
}

inline double dot(const mdrnn::FeatureGrid& a, const mdrnn::FeatureGrid& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.values().size(); ++i) s += a.values()[i] * b.values()[i];
  return s;
}

inline std::vector<double> as_vector(const mdrnn::Tensor& t) {
  return {t.values().begin(), t.values().end()};
}

inline oracle::Lstm to_oracle(const mdrnn::MdLstmParams& p) {
  oracle::Lstm o;
  o.D = p.inputs;
  o.U = p.units;
  o.input = as_vector(p.input.value);
  o.rec_v = as_vector(p.rec_v.value);
  o.rec_h = as_vector(p.rec_h.value);
  o.bias = as_vector(p.bias.value);
  if (p.peephole) o.peep = as_vector(p.peephole->value);
  return o;
}

/// Checks a layer whose scalar loss is <r, forward(x)> for a fixed random r.
/// `forward` maps the (possibly perturbed) input to the output; `backward`
/// runs the layer backward pass on grad r and returns the input gradient,
/// accumulating parameter gradients. `params` are probed as well.
struct LayerCheck {
  double max_input_error = 0.0;
  double max_param_error = 0.0;
  std::size_t input_coords = 0;
  std::size_t param_coords = 0;
};

inline LayerCheck check_layer(mdrnn::FeatureGrid& x,
                              const std::function<mdrnn::FeatureGrid(const mdrnn::FeatureGrid&)>& forward,
                              const std::function<mdrnn::FeatureGrid(const mdrnn::FeatureGrid&)>& backward,
                              std::vector<mdrnn::Param*> params, mdrnn::Rng& rng,
                              std::size_t coords = 20) {
  const mdrnn::FeatureGrid y = forward(x);
  const mdrnn::FeatureGrid r = random_grid(y.height(), y.width(), y.depth(), rng);
  for (auto* p : params) p->zero_grad();
  const mdrnn::FeatureGrid dx = backward(r);
  const auto loss = [&] { return dot(r, forward(x)); };

  LayerCheck out;
  for (std::size_t n = 0; n < coords; ++n) {
    const std::size_t i = rng.below(x.values().size());
    const double num = mdrnn::central_difference(loss, x.values()[i], 1e-5);
    out.max_input_error = std::max(out.max_input_error, mdrnn::relative_error(dx.values()[i], num));
    ++out.input_coords;
  }
  std::size_t total = 0;
  for (auto* p : params) total += p->value.size();
  for (std::size_t n = 0; total > 0 && n < coords; ++n) {
    std::size_t flat = rng.below(total);
    std::size_t k = 0;
    while (flat >= params[k]->value.size()) flat -= params[k++]->value.size();
    const double num = mdrnn::central_difference(loss, params[k]->value[flat], 1e-5);
    out.max_param_error =
        std::max(out.max_param_error, mdrnn::relative_error(params[k]->grad[flat], num));
    ++out.param_coords;
  }
  return out;
}

}  // namespace testing
