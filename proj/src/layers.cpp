#include "mdrnn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "mdrnn/kernels.hpp"

namespace mdrnn {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

struct ScanSteps {
  bool down;   // rows visited top to bottom
  bool right;  // columns visited left to right
};

ScanSteps steps(ScanDirection d) {
  switch (d) {
    case ScanDirection::TopLeft: return {true, true};
    case ScanDirection::TopRight: return {true, false};
    case ScanDirection::BottomLeft: return {false, true};
    case ScanDirection::BottomRight: return {false, false};
  }
  throw std::logic_error("bad scan direction");
}

// Maps the k-th visited row/column to a grid index.
std::size_t visit_index(std::size_t k, std::size_t extent, bool forward) {
  return forward ? k : extent - 1 - k;
}

kernels::ConstMat cmat(const Tensor& t, std::size_t rows, std::size_t cols) {
  return {t.data(), rows, cols};
}
kernels::Mat mat(Tensor& t, std::size_t rows, std::size_t cols) {
  return {t.data(), rows, cols};
}

}  // namespace

// ---------------------------------------------------------------------------

FeatureGrid to_blocks(const FeatureGrid& in, std::size_t bh, std::size_t bw, double pad) {
  if (in.empty()) throw std::invalid_argument("to_blocks: empty input");
  if (bh == 0 || bw == 0) throw std::invalid_argument("to_blocks: block extents must be >= 1");
  const std::size_t depth = in.depth();
  FeatureGrid out(ceil_div(in.height(), bh), ceil_div(in.width(), bw), bh * bw * depth, pad);
  for (std::size_t i = 0; i < out.height(); ++i) {
    for (std::size_t j = 0; j < out.width(); ++j) {
      double* dst = out.cell(i, j);
      for (std::size_t a = 0; a < bh; ++a) {
        const std::size_t r = i * bh + a;
        if (r >= in.height()) break;
        for (std::size_t b = 0; b < bw; ++b) {
          const std::size_t c = j * bw + b;
          if (c >= in.width()) break;
          const double* src = in.cell(r, c);
          for (std::size_t d = 0; d < depth; ++d) dst[(a * bw + b) * depth + d] = src[d];
        }
      }
    }
  }
  return out;
}

FeatureGrid from_blocks(const FeatureGrid& blocks, std::size_t bh, std::size_t bw,
                        std::size_t height, std::size_t width) {
  if (blocks.depth() % (bh * bw) != 0)
    throw std::invalid_argument("from_blocks: depth is not a multiple of the block size");
  const std::size_t depth = blocks.depth() / (bh * bw);
  if (blocks.height() != ceil_div(height, bh) || blocks.width() != ceil_div(width, bw))
    throw std::invalid_argument("from_blocks: block grid does not match target extents");
  FeatureGrid out(height, width, depth);
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      const double* src = blocks.cell(r / bh, c / bw) + ((r % bh) * bw + (c % bw)) * depth;
      double* dst = out.cell(r, c);
      for (std::size_t d = 0; d < depth; ++d) dst[d] = src[d];
    }
  }
  return out;
}

FeatureGrid block_input(const FeatureGrid& image, std::size_t bh, std::size_t bw, double pad) {
  if (image.empty()) throw std::invalid_argument("block_input: empty image");
  if (image.depth() != 1) throw std::invalid_argument("block_input: image must be single-channel");
  return to_blocks(image, bh, bw, pad);
}

// ---------------------------------------------------------------------------

std::string_view to_string(ScanDirection d) {
  switch (d) {
    case ScanDirection::TopLeft: return "tl";
    case ScanDirection::TopRight: return "tr";
    case ScanDirection::BottomLeft: return "bl";
    case ScanDirection::BottomRight: return "br";
  }
  return "?";
}

MdLstmParams::MdLstmParams(std::size_t inputs_, std::size_t units_, bool peepholes)
    : inputs(inputs_),
      units(units_),
      input({inputs_, kLstmGates * units_}),
      rec_v({units_, kLstmGates * units_}),
      rec_h({units_, kLstmGates * units_}),
      bias({kLstmGates * units_}) {
  if (inputs_ == 0 || units_ == 0) throw std::invalid_argument("MdLstmParams: zero size");
  if (peepholes) peephole.emplace(std::vector<std::size_t>{5, units_});
}

FeatureGrid mdlstm_forward(const FeatureGrid& x, const MdLstmParams& p, ScanDirection dir,
                           MdLstmCache* cache) {
  if (x.depth() != p.inputs)
    throw std::invalid_argument("mdlstm_forward: input depth " + std::to_string(x.depth()) +
                                " != " + std::to_string(p.inputs));
  const std::size_t H = x.height(), W = x.width(), N = x.cells(), U = p.units;
  const std::size_t G = kLstmGates * U;

  Tensor pre({N, G});
  kernels::add_row_bias(p.bias.value.values(), mat(pre, N, G));
  kernels::gemm_acc(x.matrix(), cmat(p.input.value, p.inputs, G), mat(pre, N, G));

  Tensor gates({N, G});
  Tensor cell({N, U});
  Tensor cell_tanh({N, U});
  FeatureGrid out(H, W, U);
  const double* peep = p.peephole ? p.peephole->value.data() : nullptr;
  const auto s = steps(dir);

  for (std::size_t ii = 0; ii < H; ++ii) {
    const std::size_t i = visit_index(ii, H, s.down);
    for (std::size_t jj = 0; jj < W; ++jj) {
      const std::size_t j = visit_index(jj, W, s.right);
      const std::size_t n = i * W + j;
      double* a = pre.data() + n * G;
      const double* hv = nullptr;
      const double* cv = nullptr;
      const double* hh = nullptr;
      const double* ch = nullptr;
      if (ii > 0) {
        const std::size_t vi = s.down ? i - 1 : i + 1;
        hv = out.cell(vi, j);
        cv = cell.data() + (vi * W + j) * U;
        kernels::gemm_acc({hv, 1, U}, cmat(p.rec_v.value, U, G), {a, 1, G});
      }
      if (jj > 0) {
        const std::size_t hj = s.right ? j - 1 : j + 1;
        hh = out.cell(i, hj);
        ch = cell.data() + (i * W + hj) * U;
        kernels::gemm_acc({hh, 1, U}, cmat(p.rec_h.value, U, G), {a, 1, G});
      }
      double* g = gates.data() + n * G;
      double* c = cell.data() + n * U;
      double* tc = cell_tanh.data() + n * U;
      double* h = out.cell(i, j);
      for (std::size_t k = 0; k < U; ++k) {
        const double cvk = cv ? cv[k] : 0.0;
        const double chk = ch ? ch[k] : 0.0;
        double ai = a[kGateInput * U + k];
        double afv = a[kGateForgetV * U + k];
        double afh = a[kGateForgetH * U + k];
        if (peep) {
          ai += peep[kPeepInputV * U + k] * cvk + peep[kPeepInputH * U + k] * chk;
          afv += peep[kPeepForgetV * U + k] * cvk;
          afh += peep[kPeepForgetH * U + k] * chk;
        }
        const double ig = sigmoid(ai);
        const double fv = sigmoid(afv);
        const double fh = sigmoid(afh);
        const double cg = std::tanh(a[kGateCell * U + k]);
        const double ck = ig * cg + fv * cvk + fh * chk;
        double ao = a[kGateOutput * U + k];
        if (peep) ao += peep[kPeepOutput * U + k] * ck;
        const double og = sigmoid(ao);
        g[kGateInput * U + k] = ig;
        g[kGateForgetV * U + k] = fv;
        g[kGateForgetH * U + k] = fh;
        g[kGateOutput * U + k] = og;
        g[kGateCell * U + k] = cg;
        c[k] = ck;
        tc[k] = std::tanh(ck);
        h[k] = og * tc[k];
      }
    }
  }

  if (cache) {
    cache->direction = dir;
    cache->input = x;
    cache->gates = std::move(gates);
    cache->cell = std::move(cell);
    cache->cell_tanh = std::move(cell_tanh);
    cache->output = out;
  }
  return out;
}

FeatureGrid mdlstm_backward(const FeatureGrid& grad_output, MdLstmParams& p,
                            const MdLstmCache& cache) {
  if (cache.output.empty() || !grad_output.same_shape(cache.output) ||
      cache.input.depth() != p.inputs || cache.output.depth() != p.units)
    throw std::logic_error("mdlstm_backward: no matching forward pass");

  const FeatureGrid& x = cache.input;
  const std::size_t H = x.height(), W = x.width(), N = x.cells(), U = p.units;
  const std::size_t G = kLstmGates * U;

  Tensor dh({N, U}, std::vector<double>(grad_output.values().begin(), grad_output.values().end()));
  Tensor dc({N, U});
  Tensor dpre({N, G});
  // Predecessor hidden states per cell (zero at the border), for the
  // recurrent weight gradients.
  Tensor prev_v({N, U});
  Tensor prev_h({N, U});

  const double* peep = p.peephole ? p.peephole->value.data() : nullptr;
  double* dpeep = p.peephole ? p.peephole->grad.data() : nullptr;
  const auto s = steps(cache.direction);

  for (std::size_t ii = H; ii-- > 0;) {
    const std::size_t i = visit_index(ii, H, s.down);
    for (std::size_t jj = W; jj-- > 0;) {
      const std::size_t j = visit_index(jj, W, s.right);
      const std::size_t n = i * W + j;
      const double* g = cache.gates.data() + n * G;
      const double* c = cache.cell.data() + n * U;
      const double* tc = cache.cell_tanh.data() + n * U;
      const double* dhn = dh.data() + n * U;
      double* dcn = dc.data() + n * U;
      double* da = dpre.data() + n * G;

      std::size_t vn = N, hn = N;
      if (ii > 0) vn = (s.down ? i - 1 : i + 1) * W + j;
      if (jj > 0) hn = i * W + (s.right ? j - 1 : j + 1);
      const double* cv = vn < N ? cache.cell.data() + vn * U : nullptr;
      const double* ch = hn < N ? cache.cell.data() + hn * U : nullptr;

      for (std::size_t k = 0; k < U; ++k) {
        const double ig = g[kGateInput * U + k];
        const double fv = g[kGateForgetV * U + k];
        const double fh = g[kGateForgetH * U + k];
        const double og = g[kGateOutput * U + k];
        const double cg = g[kGateCell * U + k];
        const double cvk = cv ? cv[k] : 0.0;
        const double chk = ch ? ch[k] : 0.0;

        const double dao = dhn[k] * tc[k] * og * (1.0 - og);
        double dck = dcn[k] + dhn[k] * og * (1.0 - tc[k] * tc[k]);
        if (peep) dck += dao * peep[kPeepOutput * U + k];
        const double dai = dck * cg * ig * (1.0 - ig);
        const double dag = dck * ig * (1.0 - cg * cg);
        const double dafv = dck * cvk * fv * (1.0 - fv);
        const double dafh = dck * chk * fh * (1.0 - fh);
        da[kGateInput * U + k] = dai;
        da[kGateForgetV * U + k] = dafv;
        da[kGateForgetH * U + k] = dafh;
        da[kGateOutput * U + k] = dao;
        da[kGateCell * U + k] = dag;

        if (cv) {
          double d = dck * fv;
          if (peep) d += dai * peep[kPeepInputV * U + k] + dafv * peep[kPeepForgetV * U + k];
          dc[vn * U + k] += d;
        }
        if (ch) {
          double d = dck * fh;
          if (peep) d += dai * peep[kPeepInputH * U + k] + dafh * peep[kPeepForgetH * U + k];
          dc[hn * U + k] += d;
        }
        if (dpeep) {
          dpeep[kPeepInputV * U + k] += dai * cvk;
          dpeep[kPeepInputH * U + k] += dai * chk;
          dpeep[kPeepForgetV * U + k] += dafv * cvk;
          dpeep[kPeepForgetH * U + k] += dafh * chk;
          dpeep[kPeepOutput * U + k] += dao * c[k];
        }
      }
      if (vn < N) {
        kernels::gemm_bt_acc({da, 1, G}, cmat(p.rec_v.value, U, G), {dh.data() + vn * U, 1, U});
        const double* hv = cache.output.values().data() + vn * U;
        std::copy(hv, hv + U, prev_v.data() + n * U);
      }
      if (hn < N) {
        kernels::gemm_bt_acc({da, 1, G}, cmat(p.rec_h.value, U, G), {dh.data() + hn * U, 1, U});
        const double* hh = cache.output.values().data() + hn * U;
        std::copy(hh, hh + U, prev_h.data() + n * U);
      }
    }
  }

  kernels::gemm_at_acc(x.matrix(), cmat(dpre, N, G), mat(p.input.grad, p.inputs, G));
  kernels::gemm_at_acc(cmat(prev_v, N, U), cmat(dpre, N, G), mat(p.rec_v.grad, U, G));
  kernels::gemm_at_acc(cmat(prev_h, N, U), cmat(dpre, N, G), mat(p.rec_h.grad, U, G));
  kernels::column_sums_acc(cmat(dpre, N, G), p.bias.grad.values());

  FeatureGrid dx(H, W, p.inputs);
  kernels::gemm_bt_acc(cmat(dpre, N, G), cmat(p.input.value, p.inputs, G), dx.matrix());
  return dx;
}

// ---------------------------------------------------------------------------

ConvParams::ConvParams(std::size_t fh, std::size_t fw, std::size_t in, std::size_t out)
    : filter_h(fh), filter_w(fw), in_features(in), out_features(out), weights({fh, fw, in, out}) {
  if (fh == 0 || fw == 0 || in == 0 || out == 0)
    throw std::invalid_argument("ConvParams: zero size");
}

FeatureGrid conv_forward(const FeatureGrid& input, const ConvParams& p, ConvCache* cache) {
  if (input.depth() != p.in_features)
    throw std::invalid_argument("conv_forward: input depth " + std::to_string(input.depth()) +
                                " != " + std::to_string(p.in_features));
  FeatureGrid patches = to_blocks(input, p.filter_h, p.filter_w, 0.0);
  FeatureGrid out(patches.height(), patches.width(), p.out_features);
  kernels::gemm_acc(patches.matrix(), cmat(p.weights.value, patches.depth(), p.out_features),
                    out.matrix());
  if (cache) {
    cache->in_height = input.height();
    cache->in_width = input.width();
    cache->patches = std::move(patches);
  }
  return out;
}

FeatureGrid conv_backward(const FeatureGrid& grad_output, ConvParams& p, const ConvCache& cache) {
  const FeatureGrid& patches = cache.patches;
  if (patches.empty() || grad_output.height() != patches.height() ||
      grad_output.width() != patches.width() || grad_output.depth() != p.out_features ||
      patches.depth() != p.filter_h * p.filter_w * p.in_features)
    throw std::logic_error("conv_backward: no matching forward pass");
  const std::size_t K = patches.depth();
  kernels::gemm_at_acc(patches.matrix(), grad_output.matrix(),
                       mat(p.weights.grad, K, p.out_features));
  FeatureGrid dpatches(patches.height(), patches.width(), K);
  kernels::gemm_bt_acc(grad_output.matrix(), cmat(p.weights.value, K, p.out_features),
                       dpatches.matrix());
  return from_blocks(dpatches, p.filter_h, p.filter_w, cache.in_height, cache.in_width);
}

LinearParams::LinearParams(std::size_t in, std::size_t out)
    : in_features(in), out_features(out), weights({in, out}), bias({out}) {
  if (in == 0 || out == 0) throw std::invalid_argument("LinearParams: zero size");
}

FeatureGrid linear_forward(const FeatureGrid& input, const LinearParams& p, LinearCache* cache) {
  if (input.depth() != p.in_features)
    throw std::invalid_argument("linear_forward: input depth mismatch");
  FeatureGrid out(input.height(), input.width(), p.out_features);
  kernels::add_row_bias(p.bias.value.values(), out.matrix());
  kernels::gemm_acc(input.matrix(), cmat(p.weights.value, p.in_features, p.out_features),
                    out.matrix());
  if (cache) cache->input = input;
  return out;
}

FeatureGrid linear_backward(const FeatureGrid& grad_output, LinearParams& p,
                            const LinearCache& cache) {
  if (cache.input.empty() || grad_output.cells() != cache.input.cells() ||
      grad_output.depth() != p.out_features)
    throw std::logic_error("linear_backward: no matching forward pass");
  kernels::gemm_at_acc(cache.input.matrix(), grad_output.matrix(),
                       mat(p.weights.grad, p.in_features, p.out_features));
  kernels::column_sums_acc(grad_output.matrix(), p.bias.grad.values());
  FeatureGrid dx(cache.input.height(), cache.input.width(), p.in_features);
  kernels::gemm_bt_acc(grad_output.matrix(), cmat(p.weights.value, p.in_features, p.out_features),
                       dx.matrix());
  return dx;
}

// ---------------------------------------------------------------------------

namespace {
void require_same_shapes(std::span<const FeatureGrid> inputs, const char* who) {
  if (inputs.empty()) throw std::invalid_argument(std::string(who) + ": no inputs");
  for (const auto& g : inputs)
    if (!g.same_shape(inputs.front()))
      throw std::invalid_argument(std::string(who) + ": shape mismatch");
}
}  // namespace

FeatureGrid sum_tanh_combine(std::span<const FeatureGrid> inputs) {
  require_same_shapes(inputs, "sum_tanh_combine");
  const auto& f = inputs.front();
  FeatureGrid out(f.height(), f.width(), f.depth());
  std::vector<const double*> ptrs;
  for (const auto& g : inputs) ptrs.push_back(g.values().data());
  kernels::sum_tanh(ptrs, out.values());
  return out;
}

FeatureGrid sum_tanh_backward(const FeatureGrid& grad_output, const FeatureGrid& output) {
  if (!grad_output.same_shape(output))
    throw std::logic_error("sum_tanh_backward: shape mismatch");
  FeatureGrid dx(output.height(), output.width(), output.depth());
  auto y = output.values();
  auto dy = grad_output.values();
  auto d = dx.values();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = dy[i] * (1.0 - y[i] * y[i]);
  return dx;
}

FeatureGrid sum_grids(std::span<const FeatureGrid> inputs) {
  require_same_shapes(inputs, "sum_grids");
  FeatureGrid out = inputs.front();
  for (std::size_t k = 1; k < inputs.size(); ++k) {
    auto o = out.values();
    auto v = inputs[k].values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += v[i];
  }
  return out;
}

FeatureGrid collapse_vertical(const FeatureGrid& input) {
  if (input.empty()) throw std::invalid_argument("collapse_vertical: empty input");
  FeatureGrid out(1, input.width(), input.depth());
  for (std::size_t i = 0; i < input.height(); ++i)
    for (std::size_t j = 0; j < input.width(); ++j) {
      const double* src = input.cell(i, j);
      double* dst = out.cell(0, j);
      for (std::size_t d = 0; d < input.depth(); ++d) dst[d] += src[d];
    }
  return out;
}

FeatureGrid collapse_vertical_backward(const FeatureGrid& grad_output, std::size_t height) {
  if (grad_output.height() != 1) throw std::logic_error("collapse_vertical_backward: height != 1");
  FeatureGrid dx(height, grad_output.width(), grad_output.depth());
  for (std::size_t i = 0; i < height; ++i)
    for (std::size_t j = 0; j < grad_output.width(); ++j) {
      const double* src = grad_output.cell(0, j);
      double* dst = dx.cell(i, j);
      for (std::size_t d = 0; d < grad_output.depth(); ++d) dst[d] = src[d];
    }
  return dx;
}

FeatureGrid softmax_forward(const FeatureGrid& input) {
  if (input.height() != 1) throw std::invalid_argument("softmax_forward: grid must be collapsed");
  FeatureGrid out(1, input.width(), input.depth());
  kernels::softmax_rows(input.matrix(), out.matrix());
  return out;
}

FeatureGrid softmax_backward(const FeatureGrid& grad_output, const FeatureGrid& output) {
  if (!grad_output.same_shape(output)) throw std::logic_error("softmax_backward: shape mismatch");
  FeatureGrid dx(output.height(), output.width(), output.depth());
  const std::size_t D = output.depth();
  for (std::size_t j = 0; j < output.width(); ++j) {
    const double* y = output.cell(0, j);
    const double* dy = grad_output.cell(0, j);
    double dot = 0.0;
    for (std::size_t d = 0; d < D; ++d) dot += dy[d] * y[d];
    double* out = dx.cell(0, j);
    for (std::size_t d = 0; d < D; ++d) out[d] = y[d] * (dy[d] - dot);
  }
  return dx;
}

// ---------------------------------------------------------------------------

namespace {
void check_p(double p) {
  if (!(p > 0.0 && p <= 1.0)) throw std::invalid_argument("dropout: p must lie in (0, 1]");
}
}  // namespace

void dropout_prepare(DropoutState& state, const std::vector<std::size_t>& shape, Rng& rng) {
  check_p(state.p);
  if (state.mode == Mode::Testing) {
    state.mask.reset();
  } else if (state.source == MaskSource::AllOnes) {
    state.mask = Tensor(shape, 1.0);
  } else {
    state.mask = bernoulli_mask(shape, state.p, rng);
  }
}

FeatureGrid dropout_apply(const FeatureGrid& input, const DropoutState& state) {
  check_p(state.p);
  FeatureGrid out(input.height(), input.width(), input.depth());
  if (state.mode == Mode::Testing) {
    kernels::scale(input.values(), state.p, out.values());
    return out;
  }
  if (!state.mask || state.mask->shape() != input.tensor().shape())
    throw std::logic_error("dropout_apply: mask missing or of the wrong shape");
  kernels::multiply(input.values(), state.mask->values(), out.values());
  return out;
}

FeatureGrid dropout_forward(const FeatureGrid& input, DropoutState& state, Rng& rng) {
  dropout_prepare(state, input.tensor().shape(), rng);
  return dropout_apply(input, state);
}

FeatureGrid dropout_backward(const FeatureGrid& grad_output, const DropoutState& state) {
  check_p(state.p);
  FeatureGrid dx(grad_output.height(), grad_output.width(), grad_output.depth());
  if (state.mode == Mode::Testing) {
    kernels::scale(grad_output.values(), state.p, dx.values());
    return dx;
  }
  if (!state.mask || state.mask->shape() != grad_output.tensor().shape())
    throw std::logic_error("dropout_backward: no matching training-mode forward pass");
  kernels::multiply(grad_output.values(), state.mask->values(), dx.values());
  return dx;
}

}  // namespace mdrnn
