#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "mdrnn/layers.hpp"

using namespace mdrnn;
using testing::check_layer;
using testing::random_grid;
using testing::randomize;

namespace {

bool down(ScanDirection d) { return d == ScanDirection::TopLeft || d == ScanDirection::TopRight; }
bool right(ScanDirection d) {
  return d == ScanDirection::TopLeft || d == ScanDirection::BottomLeft;
}

MdLstmParams random_lstm(std::size_t in, std::size_t units, bool peep, Rng& rng) {
  MdLstmParams p(in, units, peep);
  p.visit([&](const char*, Param& q) { randomize(q.value, rng); });
  return p;
}

std::vector<Param*> lstm_params(MdLstmParams& p) {
  std::vector<Param*> out;
  p.visit([&](const char*, Param& q) { out.push_back(&q); });
  return out;
}

constexpr double kTol = 1e-4;

}  // namespace

TEST_CASE("block_input shapes and padding") {
  Rng rng(1);
  const FeatureGrid img = random_grid(4, 6, 1, rng);
  const FeatureGrid b = block_input(img, 2, 2);
  CHECK(b.height() == 2);
  CHECK(b.width() == 3);
  CHECK(b.depth() == 4);
  CHECK(b.at(1, 2, 0) == img.at(2, 4, 0));
  CHECK(b.at(1, 2, 1) == img.at(2, 5, 0));
  CHECK(b.at(1, 2, 2) == img.at(3, 4, 0));
  CHECK(b.at(1, 2, 3) == img.at(3, 5, 0));

  FeatureGrid one(1, 1, 1, 0.7);
  const FeatureGrid p = block_input(one, 2, 2);
  CHECK(p.values().size() == 4);
  CHECK(p.at(0, 0, 0) == 0.7);
  CHECK(p.at(0, 0, 1) == 0.0);
  CHECK(p.at(0, 0, 2) == 0.0);
  CHECK(p.at(0, 0, 3) == 0.0);
  CHECK(block_input(one, 2, 2, 0.25).at(0, 0, 3) == 0.25);

  const FeatureGrid c = block_input(FeatureGrid(4, 4, 1, 0.3), 2, 2);
  for (double v : c.values()) CHECK(v == 0.3);
  CHECK_THROWS_AS(block_input(FeatureGrid(), 2, 2), std::invalid_argument);
}

TEST_CASE("from_blocks is the adjoint of to_blocks") {
  Rng rng(2);
  const FeatureGrid x = random_grid(5, 7, 3, rng);
  const FeatureGrid bx = to_blocks(x, 2, 3);
  const FeatureGrid y = random_grid(bx.height(), bx.width(), bx.depth(), rng);
  CHECK(testing::dot(bx, y) ==
        doctest::Approx(testing::dot(x, from_blocks(y, 2, 3, 5, 7))).epsilon(1e-13));
}

TEST_CASE("mdlstm: zero parameters give zero output") {
  Rng rng(3);
  MdLstmParams p(3, 4);
  const FeatureGrid x = random_grid(3, 5, 3, rng);
  for (auto d : kScanDirections)
    {
      const FeatureGrid result = mdlstm_forward(x, p, d);
      for (double v : result.values()) CHECK(v == 0.0);
    }
}

TEST_CASE("mdlstm: a single cell does not depend on the scan direction") {
  Rng rng(4);
  const MdLstmParams p = random_lstm(3, 4, true, rng);
  const FeatureGrid x = random_grid(1, 1, 3, rng);
  const FeatureGrid ref = mdlstm_forward(x, p, ScanDirection::TopLeft);
  for (auto d : kScanDirections) CHECK(mdlstm_forward(x, p, d) == ref);
}

TEST_CASE("mdlstm matches the scalar reference recurrence") {
  Rng rng(5);
  struct Case {
    std::size_t h, w, in, units;
    bool peep;
  };
  for (const Case c : {Case{2, 2, 1, 1, false}, Case{3, 4, 2, 3, false}, Case{3, 4, 2, 3, true},
                       Case{4, 2, 5, 2, true}}) {
    const MdLstmParams p = random_lstm(c.in, c.units, c.peep, rng);
    const FeatureGrid x = random_grid(c.h, c.w, c.in, rng);
    for (auto d : kScanDirections) {
      const FeatureGrid y = mdlstm_forward(x, p, d);
      const auto expect = oracle::mdlstm(testing::as_vector(x.tensor()), c.h, c.w,
                                         testing::to_oracle(p), down(d), right(d));
      REQUIRE(y.values().size() == expect.size());
      for (std::size_t i = 0; i < expect.size(); ++i)
        CHECK(y.values()[i] == doctest::Approx(expect[i]).epsilon(1e-13));
    }
  }
}

TEST_CASE("mdlstm over one row reduces to a standard 1-D LSTM") {
  Rng rng(6);
  const std::size_t T = 6, D = 3, U = 2;
  std::vector<double> Wx(D * 4 * U), R(U * 4 * U), b(4 * U);
  for (auto* v : {&Wx, &R, &b})
    for (double& w : *v) w = rng.uniform() - 0.5;

  MdLstmParams p(D, U);
  // 1-D gate g in (i, f, o, cell) maps to the MDLSTM gate slot below; the
  // horizontal forget gate plays the role of f.
  const std::size_t slot[4] = {kGateInput, kGateForgetH, kGateOutput, kGateCell};
  for (std::size_t g = 0; g < 4; ++g)
    for (std::size_t k = 0; k < U; ++k) {
      for (std::size_t d = 0; d < D; ++d) p.input.value[d * 5 * U + slot[g] * U + k] = Wx[d * 4 * U + g * U + k];
      for (std::size_t u = 0; u < U; ++u) p.rec_h.value[u * 5 * U + slot[g] * U + k] = R[u * 4 * U + g * U + k];
      p.bias.value[slot[g] * U + k] = b[g * U + k];
    }
  // rec_v stays zero.
  const FeatureGrid x = random_grid(1, T, D, rng);
  const FeatureGrid y = mdlstm_forward(x, p, ScanDirection::TopLeft);
  const auto expect = oracle::lstm1d(testing::as_vector(x.tensor()), T, D, U, Wx, R, b);
  for (std::size_t i = 0; i < expect.size(); ++i)
    CHECK(y.values()[i] == doctest::Approx(expect[i]).epsilon(1e-13));
}

TEST_CASE("mdlstm gradients match finite differences") {
  Rng rng(7);
  for (bool peep : {false, true})
    for (auto d : kScanDirections) {
      MdLstmParams p = random_lstm(3, 2, peep, rng);
      FeatureGrid x = random_grid(3, 4, 3, rng);
      MdLstmCache cache;
      const auto r = check_layer(
          x, [&](const FeatureGrid& in) { return mdlstm_forward(in, p, d, &cache); },
          [&](const FeatureGrid& g) { return mdlstm_backward(g, p, cache); }, lstm_params(p), rng);
      CHECK(r.max_input_error < kTol);
      CHECK(r.max_param_error < kTol);
      CHECK(r.param_coords >= 20);
    }
}

TEST_CASE("mdlstm rejects mismatched input and stray backward") {
  MdLstmParams p(3, 2);
  CHECK_THROWS_AS(mdlstm_forward(FeatureGrid(2, 2, 4), p, ScanDirection::TopLeft),
                  std::invalid_argument);
  CHECK_THROWS_AS(mdlstm_backward(FeatureGrid(2, 2, 2), p, MdLstmCache{}), std::logic_error);
}

TEST_CASE("conv forward examples") {
  Rng rng(8);
  ConvParams id(1, 1, 3, 3);
  for (std::size_t c = 0; c < 3; ++c) id.weights.value[c * 3 + c] = 1.0;
  const FeatureGrid x = random_grid(3, 5, 3, rng);
  CHECK(conv_forward(x, id) == x);

  ConvParams p(2, 4, 6, 20);
  const FeatureGrid y = conv_forward(random_grid(4, 8, 6, rng), p);
  CHECK(y.height() == 2);
  CHECK(y.width() == 2);
  CHECK(y.depth() == 20);

  ConvParams ones(2, 4, 1, 1);
  ones.weights.value.fill(1.0);
  const FeatureGrid z = random_grid(2, 4, 1, rng);
  double sum = 0.0;
  for (double v : z.values()) sum += v;
  const FeatureGrid s = conv_forward(z, ones);
  CHECK(s.values().size() == 1);
  CHECK(s.values()[0] == doctest::Approx(sum).epsilon(1e-14));

  CHECK_THROWS_AS(conv_forward(random_grid(2, 4, 2, rng), ones), std::invalid_argument);
}

TEST_CASE("conv is homogeneous (no bias) and pads with zeros") {
  Rng rng(9);
  ConvParams p(2, 3, 2, 4);
  randomize(p.weights.value, rng);
  const FeatureGrid x = random_grid(3, 5, 2, rng);
  FeatureGrid x2 = x;
  for (double& v : x2.values()) v *= 2.5;
  const FeatureGrid y = conv_forward(x, p);
  const FeatureGrid y2 = conv_forward(x2, p);
  for (std::size_t i = 0; i < y.values().size(); ++i)
    CHECK(y2.values()[i] == doctest::Approx(2.5 * y.values()[i]).epsilon(1e-13));
  {
    const FeatureGrid result = conv_forward(FeatureGrid(3, 5, 2), p);
    for (double v : result.values()) CHECK(v == 0.0);
  }
  CHECK(y.height() == 2);
  CHECK(y.width() == 2);
}

TEST_CASE("conv gradients match finite differences") {
  Rng rng(10);
  ConvParams p(2, 3, 3, 4);
  randomize(p.weights.value, rng);
  FeatureGrid x = random_grid(3, 7, 3, rng);
  ConvCache cache;
  const auto r = check_layer(
      x, [&](const FeatureGrid& in) { return conv_forward(in, p, &cache); },
      [&](const FeatureGrid& g) { return conv_backward(g, p, cache); }, {&p.weights}, rng);
  CHECK(r.max_input_error < kTol);
  CHECK(r.max_param_error < kTol);

  ConvParams id(1, 1, 2, 2);
  id.weights.value[0] = id.weights.value[3] = 1.0;
  ConvCache c2;
  const FeatureGrid in = random_grid(2, 3, 2, rng);
  conv_forward(in, id, &c2);
  const FeatureGrid g = random_grid(2, 3, 2, rng);
  CHECK(conv_backward(g, id, c2) == g);
}

TEST_CASE("linear gradients match finite differences") {
  Rng rng(11);
  LinearParams p(4, 3);
  randomize(p.weights.value, rng);
  randomize(p.bias.value, rng);
  FeatureGrid x = random_grid(2, 5, 4, rng);
  LinearCache cache;
  const auto r = check_layer(
      x, [&](const FeatureGrid& in) { return linear_forward(in, p, &cache); },
      [&](const FeatureGrid& g) { return linear_backward(g, p, cache); }, {&p.weights, &p.bias},
      rng);
  CHECK(r.max_input_error < kTol);
  CHECK(r.max_param_error < kTol);
}

TEST_CASE("sum_tanh_combine examples and gradient") {
  Rng rng(12);
  std::array<FeatureGrid, 4> zero{FeatureGrid(2, 2, 3), FeatureGrid(2, 2, 3), FeatureGrid(2, 2, 3),
                                  FeatureGrid(2, 2, 3)};
  {
    const FeatureGrid result = sum_tanh_combine(zero);
    for (double v : result.values()) CHECK(v == 0.0);
  }

  auto big = zero;
  for (auto& g : big) g.values()[0] = 25.0;
  CHECK(std::abs(sum_tanh_combine(big).values()[0] - 1.0) <= 1e-15);

  auto single = zero;
  single[2].values()[5] = 0.3;
  CHECK(sum_tanh_combine(single).values()[5] == std::tanh(0.3));

  auto bad = zero;
  bad[1] = FeatureGrid(2, 3, 3);
  CHECK_THROWS_AS(sum_tanh_combine(bad), std::invalid_argument);

  // Gradient w.r.t. one summand with the others held fixed.
  std::array<FeatureGrid, 4> in{random_grid(2, 3, 2, rng), random_grid(2, 3, 2, rng),
                                random_grid(2, 3, 2, rng), random_grid(2, 3, 2, rng)};
  FeatureGrid out;
  const auto r = check_layer(
      in[1],
      [&](const FeatureGrid&) {
        out = sum_tanh_combine(in);
        return out;
      },
      [&](const FeatureGrid& g) { return sum_tanh_backward(g, out); }, {}, rng);
  CHECK(r.max_input_error < kTol);
}

TEST_CASE("collapse_vertical examples and gradient") {
  Rng rng(13);
  const FeatureGrid row = random_grid(1, 4, 2, rng);
  CHECK(collapse_vertical(row) == row);
  FeatureGrid ab(2, 1, 1);
  ab.values()[0] = 1.5;
  ab.values()[1] = -0.25;
  CHECK(collapse_vertical(ab).values()[0] == 1.25);
  {
    const FeatureGrid result = collapse_vertical(FeatureGrid(5, 3, 2, 1.0));
    for (double v : result.values()) CHECK(v == 5.0);
  }

  FeatureGrid x = random_grid(3, 4, 2, rng);
  const auto r = check_layer(
      x, [&](const FeatureGrid& in) { return collapse_vertical(in); },
      [&](const FeatureGrid& g) { return collapse_vertical_backward(g, 3); }, {}, rng);
  CHECK(r.max_input_error < kTol);
}

TEST_CASE("softmax examples and gradient") {
  const FeatureGrid u = softmax_forward(FeatureGrid(1, 3, 4, 0.7));
  for (double v : u.values()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));

  FeatureGrid big(1, 1, 2);
  big.values()[0] = 1000.0;
  const FeatureGrid s = softmax_forward(big);
  CHECK(std::abs(s.values()[0] - 1.0) < 1e-12);
  CHECK(std::abs(s.values()[1]) < 1e-12);

  Rng rng(14);
  const FeatureGrid y = softmax_forward(random_grid(1, 9, 5, rng, 20.0));
  for (std::size_t t = 0; t < 9; ++t) {
    double total = 0.0;
    for (std::size_t k = 0; k < 5; ++k) total += y.at(0, t, k);
    CHECK(std::abs(total - 1.0) <= 1e-12);
  }
  CHECK_THROWS_AS(softmax_forward(FeatureGrid(2, 2, 2)), std::invalid_argument);

  FeatureGrid x = random_grid(1, 5, 4, rng);
  FeatureGrid out;
  const auto r = check_layer(
      x,
      [&](const FeatureGrid& in) {
        out = softmax_forward(in);
        return out;
      },
      [&](const FeatureGrid& g) { return softmax_backward(g, out); }, {}, rng);
  CHECK(r.max_input_error < kTol);
}

TEST_CASE("dropout testing mode scales by p exactly") {
  Rng rng(15);
  DropoutState s{0.5, Mode::Testing, MaskSource::Sample, {}};
  FeatureGrid x(1, 2, 1);
  x.values()[0] = 2.0;
  x.values()[1] = 4.0;
  const FeatureGrid y = dropout_forward(x, s, rng);
  CHECK(y.values()[0] == 1.0);
  CHECK(y.values()[1] == 2.0);
  CHECK(!s.mask);

  s.p = 0.3;
  const FeatureGrid r = random_grid(3, 4, 5, rng);
  const FeatureGrid z = dropout_forward(r, s, rng);
  for (std::size_t i = 0; i < r.values().size(); ++i) CHECK(z.values()[i] == 0.3 * r.values()[i]);
}

TEST_CASE("dropout training mode") {
  Rng rng(16);
  const FeatureGrid x = random_grid(3, 4, 2, rng);
  DropoutState ones{0.5, Mode::Training, MaskSource::AllOnes, {}};
  CHECK(dropout_forward(x, ones, rng) == x);
  const FeatureGrid g = random_grid(3, 4, 2, rng);
  CHECK(dropout_backward(g, ones) == g);

  DropoutState s{0.5, Mode::Training, MaskSource::Sample, {}};
  const FeatureGrid y = dropout_forward(FeatureGrid(1, 100000, 1, 1.0), s, rng);
  double mean = 0.0;
  for (double v : y.values()) {
    CHECK((v == 0.0 || v == 1.0));
    mean += v;
  }
  mean /= 1e5;
  CHECK(mean >= 0.49);
  CHECK(mean <= 0.51);

  // Gradient passes only through kept units.
  DropoutState t{0.5, Mode::Training, MaskSource::Sample, {}};
  FeatureGrid in = random_grid(2, 3, 4, rng);
  Rng fixed = rng;
  const auto r = check_layer(
      in,
      [&](const FeatureGrid& v) {
        Rng copy = fixed;
        return dropout_forward(v, t, copy);
      },
      [&](const FeatureGrid& gr) { return dropout_backward(gr, t); }, {}, rng);
  CHECK(r.max_input_error < kTol);
}

TEST_CASE("dropout errors") {
  Rng rng(17);
  DropoutState bad{0.0, Mode::Testing, MaskSource::Sample, {}};
  CHECK_THROWS_AS(dropout_forward(FeatureGrid(1, 1, 1), bad, rng), std::invalid_argument);
  bad.p = 1.2;
  CHECK_THROWS_AS(dropout_forward(FeatureGrid(1, 1, 1), bad, rng), std::invalid_argument);
  DropoutState fresh{0.5, Mode::Training, MaskSource::Sample, {}};
  CHECK_THROWS_AS(dropout_backward(FeatureGrid(1, 1, 1), fresh), std::logic_error);
}
