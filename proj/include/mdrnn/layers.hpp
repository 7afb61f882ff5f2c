#pragma once

// Layer kernels for the MDLSTM recognizer: input blocking, four-direction 2-D
// LSTM, non-overlapping bias-free convolution, sum+tanh direction merging,
// vertical collapse, softmax and the dropout layer. Every layer has a forward
// pass that optionally fills a cache, and a backward pass that consumes it,
// accumulates parameter gradients and returns the input gradient.

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "mdrnn/feature_grid.hpp"
#include "mdrnn/numerics.hpp"

namespace mdrnn {

enum class Mode { Training, Testing };

/// A trainable tensor with its same-shaped gradient buffer.
struct Param {
  Tensor value;
  Tensor grad;

  Param() = default;
  explicit Param(std::vector<std::size_t> shape) : value(shape), grad(shape) {}
  void zero_grad() { grad.fill(0.0); }
};

// ---------------------------------------------------------------------------
// Blocking

/// Cuts `in` into non-overlapping bh x bw blocks; each output cell holds its
/// block's feature vectors concatenated in row-major order. Right and bottom
/// remainders are filled with `pad`.
FeatureGrid to_blocks(const FeatureGrid& in, std::size_t bh, std::size_t bw, double pad = 0.0);

/// Inverse of to_blocks for gradients: scatters block features back to a
/// height x width grid and drops padding.
FeatureGrid from_blocks(const FeatureGrid& blocks, std::size_t bh, std::size_t bw,
                        std::size_t height, std::size_t width);

/// to_blocks for a single-channel image.
FeatureGrid block_input(const FeatureGrid& image, std::size_t bh, std::size_t bw, double pad = 0.0);

// ---------------------------------------------------------------------------
// Multidimensional LSTM

/// Corner the scan starts from. The cell at (i, j) receives recurrent input
/// from its predecessor along each axis in scan order.
enum class ScanDirection { TopLeft, TopRight, BottomLeft, BottomRight };

inline constexpr std::array<ScanDirection, 4> kScanDirections{
    ScanDirection::TopLeft, ScanDirection::TopRight, ScanDirection::BottomLeft,
    ScanDirection::BottomRight};

std::string_view to_string(ScanDirection d);

/// Gate blocks inside the 5*units pre-activation vector.
enum LstmGate : std::size_t {
  kGateInput = 0,
  kGateForgetV = 1,  // forgets the vertical predecessor's cell
  kGateForgetH = 2,  // forgets the horizontal predecessor's cell
  kGateOutput = 3,
  kGateCell = 4,
};
inline constexpr std::size_t kLstmGates = 5;

/// Rows of the optional diagonal peephole matrix.
enum LstmPeephole : std::size_t {
  kPeepInputV = 0,
  kPeepInputH = 1,
  kPeepForgetV = 2,
  kPeepForgetH = 3,
  kPeepOutput = 4,
};

/// One scan direction's weights.
///
/// Cell equations, with (hv, cv) and (hh, ch) the vertical and horizontal
/// predecessor states (zero at the border):
///
///   a  = b + W x + Uv hv + Uh hh           (+ diagonal peepholes)
///   i, fv, fh, o = sigmoid(a_*),  g = tanh(a_cell)
///   c  = i g + fv cv + fh ch
///   h  = o tanh(c)
///
/// With peepholes, a_in sees cv and ch, a_fv sees cv, a_fh sees ch and a_out
/// sees the new c.
struct MdLstmParams {
  std::size_t inputs = 0;
  std::size_t units = 0;
  Param input;  // inputs x 5*units
  Param rec_v;  // units x 5*units
  Param rec_h;  // units x 5*units
  Param bias;   // 5*units
  std::optional<Param> peephole;  // 5 x units

  MdLstmParams() = default;
  MdLstmParams(std::size_t inputs, std::size_t units, bool peepholes = false);

  template <class F>
  void visit(F&& f) { visit_params(*this, f); }
  template <class F>
  void visit(F&& f) const { visit_params(*this, f); }

 private:
  template <class Self, class F>
  static void visit_params(Self& self, F& f) {
    f("input", self.input);
    f("rec_v", self.rec_v);
    f("rec_h", self.rec_h);
    f("bias", self.bias);
    if (self.peephole) f("peephole", *self.peephole);
  }
};

struct MdLstmCache {
  ScanDirection direction = ScanDirection::TopLeft;
  FeatureGrid input;
  Tensor gates;      // cells x 5*units, after the nonlinearities
  Tensor cell;       // cells x units
  Tensor cell_tanh;  // cells x units
  FeatureGrid output;
};

FeatureGrid mdlstm_forward(const FeatureGrid& input, const MdLstmParams& params,
                           ScanDirection direction, MdLstmCache* cache = nullptr);

/// Backpropagation through the 2-D recurrence in reverse scan order.
FeatureGrid mdlstm_backward(const FeatureGrid& grad_output, MdLstmParams& params,
                            const MdLstmCache& cache);

// ---------------------------------------------------------------------------
// Convolution and fully-connected

/// Non-overlapping convolution (stride == filter size) without bias.
struct ConvParams {
  std::size_t filter_h = 0;
  std::size_t filter_w = 0;
  std::size_t in_features = 0;
  std::size_t out_features = 0;
  Param weights;  // filter_h x filter_w x in x out

  ConvParams() = default;
  ConvParams(std::size_t fh, std::size_t fw, std::size_t in, std::size_t out);
};

struct ConvCache {
  std::size_t in_height = 0;
  std::size_t in_width = 0;
  FeatureGrid patches;
};

/// Inputs whose extents are not multiples of the filter are zero-padded on
/// the right and bottom.
FeatureGrid conv_forward(const FeatureGrid& input, const ConvParams& params,
                         ConvCache* cache = nullptr);
FeatureGrid conv_backward(const FeatureGrid& grad_output, ConvParams& params,
                          const ConvCache& cache);

/// Per-cell affine map (a 1x1 convolution with bias).
struct LinearParams {
  std::size_t in_features = 0;
  std::size_t out_features = 0;
  Param weights;  // in x out
  Param bias;     // out

  LinearParams() = default;
  LinearParams(std::size_t in, std::size_t out);
};

struct LinearCache {
  FeatureGrid input;
};

FeatureGrid linear_forward(const FeatureGrid& input, const LinearParams& params,
                           LinearCache* cache = nullptr);
FeatureGrid linear_backward(const FeatureGrid& grad_output, LinearParams& params,
                            const LinearCache& cache);

// ---------------------------------------------------------------------------
// Direction merging, collapse, softmax

/// tanh of the element-wise sum of same-shaped grids.
FeatureGrid sum_tanh_combine(std::span<const FeatureGrid> inputs);
/// Gradient w.r.t. each summand (they all receive the same one).
FeatureGrid sum_tanh_backward(const FeatureGrid& grad_output, const FeatureGrid& output);

FeatureGrid sum_grids(std::span<const FeatureGrid> inputs);

/// Sums over rows: H x W x D -> 1 x W x D.
FeatureGrid collapse_vertical(const FeatureGrid& input);
FeatureGrid collapse_vertical_backward(const FeatureGrid& grad_output, std::size_t height);

/// Per-column softmax of a collapsed (height 1) grid.
FeatureGrid softmax_forward(const FeatureGrid& input);
FeatureGrid softmax_backward(const FeatureGrid& grad_output, const FeatureGrid& output);

// ---------------------------------------------------------------------------
// Dropout

enum class MaskSource { Sample, AllOnes };

/// Training: out = m * in with m ~ Bernoulli(p). Testing: out = p * in.
struct DropoutState {
  double p = 0.5;
  Mode mode = Mode::Testing;
  MaskSource source = MaskSource::Sample;
  std::optional<Tensor> mask;  // set by a training-mode forward pass
};

FeatureGrid dropout_forward(const FeatureGrid& input, DropoutState& state, Rng& rng);

/// The two halves of dropout_forward: draw (or clear) the mask for an input
/// of the given shape, then apply the state to an input.
void dropout_prepare(DropoutState& state, const std::vector<std::size_t>& shape, Rng& rng);
FeatureGrid dropout_apply(const FeatureGrid& input, const DropoutState& state);
FeatureGrid dropout_backward(const FeatureGrid& grad_output, const DropoutState& state);

}  // namespace mdrnn
