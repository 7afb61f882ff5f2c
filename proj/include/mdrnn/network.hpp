#pragma once

// The full recognizer:
//
//   image -> 2x2 blocks
//         -> [ 4 x MDLSTM -> (dropout) -> 4 x conv -> sum + tanh ] per stage
//         -> 4 x MDLSTM -> (dropout) -> 4 x fully-connected -> sum
//         -> vertical collapse -> softmax
//
// Dropout only ever sits between an LSTM layer's output and the next
// feed-forward layer; recurrent state inside the LSTM is never masked.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "mdrnn/feature_grid.hpp"
#include "mdrnn/layers.hpp"
#include "mdrnn/numerics.hpp"

namespace mdrnn {

struct StageSpec {
  std::size_t lstm_units = 2;
  std::size_t filter_h = 2;
  std::size_t filter_w = 4;
  std::size_t features = 6;
  bool dropout = false;

  friend bool operator==(const StageSpec&, const StageSpec&) = default;
};

struct TopSpec {
  std::size_t lstm_units = 50;
  bool dropout = false;

  friend bool operator==(const TopSpec&, const TopSpec&) = default;
};

enum class DropoutPlacement { None, Topmost, TopTwo, All };

struct ArchitectureSpec {
  std::size_t block_h = 2;
  std::size_t block_w = 2;
  std::vector<StageSpec> stages;
  TopSpec top;
  bool peepholes = false;
  double dropout_p = 0.5;
  double init_std = 1e-2;

  /// LSTM units (2, 10, 50); conv stages of 6 and 20 features, 2x4 filters.
  static ArchitectureSpec baseline();

  /// Units of every LSTM layer, bottom to top.
  std::vector<std::size_t> lstm_units() const;
  std::size_t dropout_layer_count() const;
  /// Throws ConfigError on inconsistent dimensions.
  void validate() const;

  std::size_t horizontal_subsampling() const;
  std::size_t vertical_subsampling() const;
  /// Number of output frames for an image of the given width.
  std::size_t output_frames(std::size_t image_width) const;

  friend bool operator==(const ArchitectureSpec&, const ArchitectureSpec&) = default;
};

/// Turns dropout on for the topmost k LSTM layers (k = 0..3) and off
/// elsewhere; optionally doubles the units of every layer that gets dropout.
ArchitectureSpec with_dropout(ArchitectureSpec spec, DropoutPlacement placement,
                              bool double_units = false);
std::string to_string(DropoutPlacement p);
DropoutPlacement parse_dropout_placement(const std::string& s);

void to_json(nlohmann::json& j, const ArchitectureSpec& spec);
void from_json(const nlohmann::json& j, ArchitectureSpec& spec);

struct StageParams {
  std::array<MdLstmParams, 4> lstm;
  std::array<ConvParams, 4> conv;
};

struct TopParams {
  std::array<MdLstmParams, 4> lstm;
  std::array<LinearParams, 4> fc;
};

/// Every trainable tensor of the network, visited in a fixed order that
/// defines initialization draws and the checkpoint layout.
struct NetworkParams {
  std::vector<StageParams> stages;
  TopParams top;

  NetworkParams() = default;
  NetworkParams(const ArchitectureSpec& spec, std::size_t classes);

  template <class F>
  void visit(F&& f) { visit_params(*this, f); }
  template <class F>
  void visit(F&& f) const { visit_params(*this, f); }

  std::size_t parameter_count() const;
  void zero_grad();

 private:
  template <class Self, class F>
  static void visit_params(Self& self, F& f) {
    for (std::size_t k = 0; k < self.stages.size(); ++k) {
      const std::string prefix = "stage" + std::to_string(k) + ".";
      for (std::size_t d = 0; d < 4; ++d) {
        const std::string dir(to_string(kScanDirections[d]));
        self.stages[k].lstm[d].visit(
            [&](const char* name, auto& p) { f(prefix + "lstm." + dir + "." + name, p); });
        f(prefix + "conv." + dir + ".weights", self.stages[k].conv[d].weights);
      }
    }
    for (std::size_t d = 0; d < 4; ++d) {
      const std::string dir(to_string(kScanDirections[d]));
      self.top.lstm[d].visit(
          [&](const char* name, auto& p) { f("top.lstm." + dir + "." + name, p); });
      f("top.fc." + dir + ".weights", self.top.fc[d].weights);
      f("top.fc." + dir + ".bias", self.top.fc[d].bias);
    }
  }
};

struct ForwardOptions {
  Mode mode = Mode::Testing;
  MaskSource masks = MaskSource::Sample;
};

struct StageCache {
  std::array<MdLstmCache, 4> lstm;
  std::array<DropoutState, 4> dropout;
  std::array<ConvCache, 4> conv;
  FeatureGrid output;  // after sum + tanh
};

struct ForwardCache {
  std::vector<StageCache> stages;
  std::array<MdLstmCache, 4> top_lstm;
  std::array<DropoutState, 4> top_dropout;
  std::array<LinearCache, 4> top_fc;
  std::size_t top_height = 0;
  FeatureGrid logits;      // 1 x T x classes, pre-softmax
  FeatureGrid posteriors;  // 1 x T x classes
  std::uint64_t params_version = 0;
  bool valid = false;
};

enum class NodeKind { Input, Block, MdLstm, Dropout, Conv, SumTanh, Linear, Sum, Collapse, Softmax };
enum class EdgeKind { FeedForward, Recurrent };

struct GraphNode {
  std::string name;
  NodeKind kind;
};
struct GraphEdge {
  std::size_t from;
  std::size_t to;
  EdgeKind kind;
};
struct LayerGraph {
  std::vector<GraphNode> nodes;
  std::vector<GraphEdge> edges;
};

class Network {
 public:
  Network() = default;
  /// Zero-initialized parameters.
  Network(ArchitectureSpec spec, std::size_t classes);

  /// Weights ~ Normal(0, spec.init_std^2), biases zero.
  static Network build(const ArchitectureSpec& spec, std::size_t classes, Rng& rng);

  const ArchitectureSpec& spec() const { return spec_; }
  std::size_t classes() const { return classes_; }
  const NetworkParams& params() const { return params_; }
  /// Mutable access invalidates outstanding forward caches.
  NetworkParams& mutable_params() {
    ++version_;
    return params_;
  }
  std::uint64_t version() const { return version_; }

  /// Per-column posteriors (1 x T x classes). Dropout masks, when sampled, are
  /// drawn from `rng` in a fixed order (stage, then direction).
  FeatureGrid forward(const FeatureGrid& image, const ForwardOptions& options, Rng& rng,
                      ForwardCache* cache = nullptr) const;

  /// Accumulates parameter gradients from d(loss)/d(logits).
  void backward_from_logits(const ForwardCache& cache, const FeatureGrid& grad_logits);
  /// Accumulates parameter gradients from d(loss)/d(posteriors).
  void backward(const ForwardCache& cache, const FeatureGrid& grad_posteriors);

  void zero_grad() { params_.zero_grad(); }
  /// w <- w - lr * grad over every parameter.
  void sgd_step(double learning_rate);

  LayerGraph graph() const;

 private:
  ArchitectureSpec spec_;
  std::size_t classes_ = 0;
  NetworkParams params_;
  std::uint64_t version_ = 0;
};

struct NormStat {
  double l1 = 0.0;  // mean absolute value
  double l2 = 0.0;  // root mean square
  std::size_t count = 0;
};

NormStat tensor_norms(std::span<const Tensor* const> tensors);

/// Norms of the topmost LSTM gate/cell weight matrices and of the
/// classification (topmost linear) weights. Biases are excluded.
struct WeightNorms {
  NormStat lstm;
  NormStat classification;
};

WeightNorms weight_norms(const NetworkParams& params);

}  // namespace mdrnn
