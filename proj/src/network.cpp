#include "mdrnn/network.hpp"

#include <cmath>
#include <exception>
#include <mutex>
#include <stdexcept>

#include "mdrnn/errors.hpp"

namespace mdrnn {

namespace {

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

// Runs f(d) for the four scan directions in parallel and rethrows the first
// failure on the calling thread.
template <class F>
void for_each_direction(F&& f) {
  std::exception_ptr error;
  std::mutex error_mutex;
#pragma omp parallel for schedule(static, 1)
  for (int d = 0; d < 4; ++d) {
    try {
      f(static_cast<std::size_t>(d));
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mutex);
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

FeatureGrid sum_in_order(std::array<FeatureGrid, 4>& grids) {
  return sum_grids(std::span<const FeatureGrid>(grids.data(), grids.size()));
}

DropoutState make_dropout(double p, const ForwardOptions& options) {
  DropoutState s;
  s.p = p;
  s.mode = options.mode;
  s.source = options.masks;
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// ArchitectureSpec

ArchitectureSpec ArchitectureSpec::baseline() {
  ArchitectureSpec spec;
  spec.stages = {StageSpec{2, 2, 4, 6, false}, StageSpec{10, 2, 4, 20, false}};
  spec.top = TopSpec{50, false};
  return spec;
}

std::vector<std::size_t> ArchitectureSpec::lstm_units() const {
  std::vector<std::size_t> units;
  for (const auto& s : stages) units.push_back(s.lstm_units);
  units.push_back(top.lstm_units);
  return units;
}

std::size_t ArchitectureSpec::dropout_layer_count() const {
  std::size_t n = top.dropout ? 1 : 0;
  for (const auto& s : stages) n += s.dropout ? 1 : 0;
  return n;
}

void ArchitectureSpec::validate() const {
  if (block_h == 0 || block_w == 0) throw ConfigError("architecture: block size must be >= 1");
  for (std::size_t k = 0; k < stages.size(); ++k) {
    const auto& s = stages[k];
    const std::string where = "architecture: stage " + std::to_string(k);
    if (s.lstm_units == 0) throw ConfigError(where + ": lstm_units must be >= 1");
    if (s.filter_h == 0 || s.filter_w == 0) throw ConfigError(where + ": filter must be >= 1x1");
    if (s.features == 0) throw ConfigError(where + ": features must be >= 1");
  }
  if (top.lstm_units == 0) throw ConfigError("architecture: top lstm_units must be >= 1");
  if (!(dropout_p > 0.0 && dropout_p <= 1.0))
    throw ConfigError("architecture: dropout_p must lie in (0, 1]");
  if (!(init_std > 0.0) || !std::isfinite(init_std))
    throw ConfigError("architecture: init_std must be positive");
}

std::size_t ArchitectureSpec::horizontal_subsampling() const {
  std::size_t f = block_w;
  for (const auto& s : stages) f *= s.filter_w;
  return f;
}

std::size_t ArchitectureSpec::vertical_subsampling() const {
  std::size_t f = block_h;
  for (const auto& s : stages) f *= s.filter_h;
  return f;
}

std::size_t ArchitectureSpec::output_frames(std::size_t image_width) const {
  if (image_width == 0) return 0;
  std::size_t w = ceil_div(image_width, block_w);
  for (const auto& s : stages) w = ceil_div(w, s.filter_w);
  return w;
}

ArchitectureSpec with_dropout(ArchitectureSpec spec, DropoutPlacement placement,
                              bool double_units) {
  std::size_t k = 0;
  switch (placement) {
    case DropoutPlacement::None: k = 0; break;
    case DropoutPlacement::Topmost: k = 1; break;
    case DropoutPlacement::TopTwo: k = 2; break;
    case DropoutPlacement::All: k = spec.stages.size() + 1; break;
  }
  const std::size_t layers = spec.stages.size() + 1;
  if (k > layers) throw ConfigError("dropout placement needs more LSTM layers than the spec has");
  // Layer index l counts from the bottom; the top LSTM is layers - 1.
  for (std::size_t l = 0; l < layers; ++l) {
    const bool on = l + k >= layers;
    if (l + 1 == layers) {
      spec.top.dropout = on;
      if (on && double_units) spec.top.lstm_units *= 2;
    } else {
      spec.stages[l].dropout = on;
      if (on && double_units) spec.stages[l].lstm_units *= 2;
    }
  }
  return spec;
}

std::string to_string(DropoutPlacement p) {
  switch (p) {
    case DropoutPlacement::None: return "none";
    case DropoutPlacement::Topmost: return "topmost";
    case DropoutPlacement::TopTwo: return "top-two";
    case DropoutPlacement::All: return "all";
  }
  throw std::logic_error("bad dropout placement");
}

DropoutPlacement parse_dropout_placement(const std::string& s) {
  for (auto p : {DropoutPlacement::None, DropoutPlacement::Topmost, DropoutPlacement::TopTwo,
                 DropoutPlacement::All})
    if (to_string(p) == s) return p;
  throw ConfigError("unknown dropout placement '" + s + "' (none, topmost, top-two, all)");
}

void to_json(nlohmann::json& j, const ArchitectureSpec& spec) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : spec.stages)
    stages.push_back({{"lstm_units", s.lstm_units},
                      {"filter", {s.filter_h, s.filter_w}},
                      {"features", s.features},
                      {"dropout", s.dropout}});
  j = {{"block", {spec.block_h, spec.block_w}},
       {"stages", stages},
       {"top", {{"lstm_units", spec.top.lstm_units}, {"dropout", spec.top.dropout}}},
       {"peepholes", spec.peepholes},
       {"dropout_p", spec.dropout_p},
       {"init_std", spec.init_std}};
}

void from_json(const nlohmann::json& j, ArchitectureSpec& spec) {
  try {
    spec = ArchitectureSpec::baseline();
    if (j.contains("block")) {
      spec.block_h = j.at("block").at(0).get<std::size_t>();
      spec.block_w = j.at("block").at(1).get<std::size_t>();
    }
    if (j.contains("stages")) {
      spec.stages.clear();
      for (const auto& js : j.at("stages")) {
        StageSpec s;
        s.lstm_units = js.value("lstm_units", s.lstm_units);
        if (js.contains("filter")) {
          s.filter_h = js.at("filter").at(0).get<std::size_t>();
          s.filter_w = js.at("filter").at(1).get<std::size_t>();
        }
        s.features = js.value("features", s.features);
        s.dropout = js.value("dropout", s.dropout);
        spec.stages.push_back(s);
      }
    }
    if (j.contains("top")) {
      spec.top.lstm_units = j.at("top").value("lstm_units", spec.top.lstm_units);
      spec.top.dropout = j.at("top").value("dropout", spec.top.dropout);
    }
    spec.peepholes = j.value("peepholes", spec.peepholes);
    spec.dropout_p = j.value("dropout_p", spec.dropout_p);
    spec.init_std = j.value("init_std", spec.init_std);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("architecture: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// NetworkParams

NetworkParams::NetworkParams(const ArchitectureSpec& spec, std::size_t classes) {
  spec.validate();
  if (classes < 2) throw ConfigError("network needs at least 2 classes (one label plus blank)");
  std::size_t in = spec.block_h * spec.block_w;
  for (const auto& s : spec.stages) {
    StageParams sp;
    for (std::size_t d = 0; d < 4; ++d) {
      sp.lstm[d] = MdLstmParams(in, s.lstm_units, spec.peepholes);
      sp.conv[d] = ConvParams(s.filter_h, s.filter_w, s.lstm_units, s.features);
    }
    stages.push_back(std::move(sp));
    in = s.features;
  }
  for (std::size_t d = 0; d < 4; ++d) {
    top.lstm[d] = MdLstmParams(in, spec.top.lstm_units, spec.peepholes);
    top.fc[d] = LinearParams(spec.top.lstm_units, classes);
  }
}

std::size_t NetworkParams::parameter_count() const {
  std::size_t n = 0;
  visit([&](const std::string&, const Param& p) { n += p.value.size(); });
  return n;
}

void NetworkParams::zero_grad() {
  visit([](const std::string&, Param& p) { p.zero_grad(); });
}

// ---------------------------------------------------------------------------
// Network

Network::Network(ArchitectureSpec spec, std::size_t classes)
    : spec_(std::move(spec)), classes_(classes), params_(spec_, classes) {}

Network Network::build(const ArchitectureSpec& spec, std::size_t classes, Rng& rng) {
  Network net(spec, classes);
  net.params_.visit([&](const std::string& name, Param& p) {
    if (name.ends_with(".bias")) return;
    gaussian_fill(p.value, 0.0, spec.init_std, rng);
  });
  return net;
}

FeatureGrid Network::forward(const FeatureGrid& image, const ForwardOptions& options, Rng& rng,
                             ForwardCache* cache) const {
  if (image.empty()) throw std::invalid_argument("forward: empty image");
  if (image.depth() != 1) throw std::invalid_argument("forward: image must be single-channel");
  const bool keep = cache != nullptr;
  if (keep) {
    cache->valid = false;
    cache->stages.assign(spec_.stages.size(), StageCache{});
  }

  FeatureGrid x = block_input(image, spec_.block_h, spec_.block_w);
  for (std::size_t k = 0; k < spec_.stages.size(); ++k) {
    const StageSpec& s = spec_.stages[k];
    const StageParams& sp = params_.stages[k];
    std::array<DropoutState, 4> drop;
    if (s.dropout) {
      for (std::size_t d = 0; d < 4; ++d) {
        drop[d] = make_dropout(spec_.dropout_p, options);
        dropout_prepare(drop[d], {x.height(), x.width(), s.lstm_units}, rng);
      }
    }
    std::array<FeatureGrid, 4> conv_out;
    StageCache* sc = keep ? &cache->stages[k] : nullptr;
    for_each_direction([&](std::size_t d) {
      FeatureGrid h = mdlstm_forward(x, sp.lstm[d], kScanDirections[d], sc ? &sc->lstm[d] : nullptr);
      if (s.dropout) h = dropout_apply(h, drop[d]);
      conv_out[d] = conv_forward(h, sp.conv[d], sc ? &sc->conv[d] : nullptr);
    });
    x = sum_tanh_combine(std::span<const FeatureGrid>(conv_out.data(), 4));
    if (sc) {
      sc->dropout = std::move(drop);
      sc->output = x;
    }
  }

  std::array<DropoutState, 4> drop;
  if (spec_.top.dropout) {
    for (std::size_t d = 0; d < 4; ++d) {
      drop[d] = make_dropout(spec_.dropout_p, options);
      dropout_prepare(drop[d], {x.height(), x.width(), spec_.top.lstm_units}, rng);
    }
  }
  std::array<FeatureGrid, 4> fc_out;
  for_each_direction([&](std::size_t d) {
    FeatureGrid h = mdlstm_forward(x, params_.top.lstm[d], kScanDirections[d],
                                   keep ? &cache->top_lstm[d] : nullptr);
    if (spec_.top.dropout) h = dropout_apply(h, drop[d]);
    fc_out[d] = linear_forward(h, params_.top.fc[d], keep ? &cache->top_fc[d] : nullptr);
  });
  FeatureGrid logits = collapse_vertical(sum_in_order(fc_out));
  FeatureGrid posteriors = softmax_forward(logits);
  ensure_finite(posteriors.values(), "network posteriors");

  if (keep) {
    cache->top_dropout = std::move(drop);
    cache->top_height = x.height();
    cache->logits = std::move(logits);
    cache->posteriors = posteriors;
    cache->params_version = version_;
    cache->valid = true;
  }
  return posteriors;
}

void Network::backward_from_logits(const ForwardCache& cache, const FeatureGrid& grad_logits) {
  if (!cache.valid) throw std::logic_error("backward: no matching forward pass");
  if (cache.params_version != version_)
    throw std::logic_error("backward: stale forward cache (parameters changed since forward)");
  if (!grad_logits.same_shape(cache.logits))
    throw std::invalid_argument("backward: gradient shape does not match the logits");
  if (cache.stages.size() != spec_.stages.size())
    throw std::logic_error("backward: cache from a different architecture");

  const FeatureGrid g = collapse_vertical_backward(grad_logits, cache.top_height);
  std::array<FeatureGrid, 4> dx;
  for_each_direction([&](std::size_t d) {
    FeatureGrid dh = linear_backward(g, params_.top.fc[d], cache.top_fc[d]);
    if (spec_.top.dropout) dh = dropout_backward(dh, cache.top_dropout[d]);
    dx[d] = mdlstm_backward(dh, params_.top.lstm[d], cache.top_lstm[d]);
  });

  for (std::size_t k = spec_.stages.size(); k-- > 0;) {
    const StageCache& sc = cache.stages[k];
    StageParams& sp = params_.stages[k];
    const bool dropout = spec_.stages[k].dropout;
    const FeatureGrid gs = sum_tanh_backward(sum_in_order(dx), sc.output);
    for_each_direction([&](std::size_t d) {
      FeatureGrid dh = conv_backward(gs, sp.conv[d], sc.conv[d]);
      if (dropout) dh = dropout_backward(dh, sc.dropout[d]);
      dx[d] = mdlstm_backward(dh, sp.lstm[d], sc.lstm[d]);
    });
  }
}

void Network::backward(const ForwardCache& cache, const FeatureGrid& grad_posteriors) {
  if (!cache.valid) throw std::logic_error("backward: no matching forward pass");
  backward_from_logits(cache, softmax_backward(grad_posteriors, cache.posteriors));
}

void Network::sgd_step(double learning_rate) {
  ++version_;
  params_.visit([&](const std::string&, Param& p) {
    auto w = p.value.values();
    auto g = p.grad.values();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= learning_rate * g[i];
  });
}

LayerGraph Network::graph() const {
  LayerGraph g;
  auto add = [&](std::string name, NodeKind kind) {
    g.nodes.push_back({std::move(name), kind});
    return g.nodes.size() - 1;
  };
  auto link = [&](std::size_t from, std::size_t to, EdgeKind kind = EdgeKind::FeedForward) {
    g.edges.push_back({from, to, kind});
  };
  auto add_lstm = [&](const std::string& name, std::size_t from) {
    const std::size_t n = add(name, NodeKind::MdLstm);
    link(from, n);
    link(n, n, EdgeKind::Recurrent);  // vertical predecessor
    link(n, n, EdgeKind::Recurrent);  // horizontal predecessor
    return n;
  };

  const std::size_t input = add("input", NodeKind::Input);
  std::size_t prev = add("block", NodeKind::Block);
  link(input, prev);
  for (std::size_t k = 0; k < spec_.stages.size(); ++k) {
    const std::string prefix = "stage" + std::to_string(k) + ".";
    const std::size_t merge = add(prefix + "sum_tanh", NodeKind::SumTanh);
    for (auto dir : kScanDirections) {
      const std::string d(to_string(dir));
      std::size_t n = add_lstm(prefix + "lstm." + d, prev);
      if (spec_.stages[k].dropout) {
        const std::size_t drop = add(prefix + "dropout." + d, NodeKind::Dropout);
        link(n, drop);
        n = drop;
      }
      const std::size_t conv = add(prefix + "conv." + d, NodeKind::Conv);
      link(n, conv);
      link(conv, merge);
    }
    prev = merge;
  }
  const std::size_t sum = add("top.sum", NodeKind::Sum);
  for (auto dir : kScanDirections) {
    const std::string d(to_string(dir));
    std::size_t n = add_lstm("top.lstm." + d, prev);
    if (spec_.top.dropout) {
      const std::size_t drop = add("top.dropout." + d, NodeKind::Dropout);
      link(n, drop);
      n = drop;
    }
    const std::size_t fc = add("top.fc." + d, NodeKind::Linear);
    link(n, fc);
    link(fc, sum);
  }
  const std::size_t collapse = add("collapse", NodeKind::Collapse);
  link(sum, collapse);
  link(collapse, add("softmax", NodeKind::Softmax));
  return g;
}

// ---------------------------------------------------------------------------
// Weight norms

NormStat tensor_norms(std::span<const Tensor* const> tensors) {
  NormStat s;
  double abs_sum = 0.0;
  double sq_sum = 0.0;
  for (const Tensor* t : tensors)
    for (double v : t->values()) {
      abs_sum += std::abs(v);
      sq_sum += v * v;
      ++s.count;
    }
  if (s.count > 0) {
    s.l1 = abs_sum / static_cast<double>(s.count);
    s.l2 = std::sqrt(sq_sum / static_cast<double>(s.count));
  }
  return s;
}

WeightNorms weight_norms(const NetworkParams& params) {
  std::vector<const Tensor*> lstm;
  std::vector<const Tensor*> fc;
  for (std::size_t d = 0; d < 4; ++d) {
    const MdLstmParams& p = params.top.lstm[d];
    lstm.push_back(&p.input.value);
    lstm.push_back(&p.rec_v.value);
    lstm.push_back(&p.rec_h.value);
    fc.push_back(&params.top.fc[d].weights.value);
  }
  return {tensor_norms(lstm), tensor_norms(fc)};
}

}  // namespace mdrnn
