#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "test_util.hpp"
#include "xcorner/grid.hpp"

using namespace xcorner;

namespace {

// Quadruple loop, written independently of the library's shifted-row kernel.
ValueGrid conv_oracle(const ValueGrid& in, const ConvLayer& layer) {
  const int r = layer.kernel_size / 2;
  ValueGrid out(layer.out_channels, in.height(), in.width());
  for (int o = 0; o < layer.out_channels; ++o) {
    for (int y = 0; y < in.height(); ++y) {
      for (int x = 0; x < in.width(); ++x) {
        double acc = layer.biases[o];
        for (int i = 0; i < layer.in_channels; ++i) {
          for (int ky = 0; ky < layer.kernel_size; ++ky) {
            for (int kx = 0; kx < layer.kernel_size; ++kx) {
              const int sy = y + ky - r, sx = x + kx - r;
              if (sy < 0 || sx < 0 || sy >= in.height() || sx >= in.width()) continue;
              acc += layer.weight(o, i, ky, kx) * in(i, sy, sx);
            }
          }
        }
        if (layer.activation == Activation::kRelu) acc = std::max(0.0, acc);
        out(o, y, x) = acc;
      }
    }
  }
  return out;
}

ConvLayer random_layer(int k, int in, int out, Activation act, std::mt19937_64& rng) {
  ConvLayer l(k, in, out, act);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (double& w : l.kernels) w = u(rng);
  for (double& b : l.biases) b = u(rng);
  return l;
}

}  // namespace

TEST(Conv2d, ScalingIdentity) {
  ConvLayer l(1, 1, 1, Activation::kLinear);
  l.kernels[0] = 2.0;
  std::mt19937_64 rng(3);
  const ValueGrid in = testutil::random_grid(1, 5, 7, rng);
  const ValueGrid out = conv2d(in, l);
  for (std::size_t i = 0; i < in.size(); ++i) EXPECT_DOUBLE_EQ(out.values()[i], 2.0 * in.values()[i]);
}

TEST(Conv2d, AllOnesCenterIs45) {
  ValueGrid in(1, 3, 3);
  for (int i = 0; i < 9; ++i) in.values()[i] = i + 1;
  ConvLayer l(3, 1, 1, Activation::kLinear);
  std::fill(l.kernels.begin(), l.kernels.end(), 1.0);
  EXPECT_DOUBLE_EQ(conv2d(in, l).at(1, 1), 45.0);
  // Corner sees only the 2x2 overlap: 1+2+4+5.
  EXPECT_DOUBLE_EQ(conv2d(in, l).at(0, 0), 12.0);
}

TEST(Conv2d, IdentityKernel) {
  ConvLayer l(3, 1, 1, Activation::kLinear);
  l.weight(0, 0, 1, 1) = 1.0;
  std::mt19937_64 rng(4);
  const ValueGrid in = testutil::random_grid(1, 6, 4, rng);
  EXPECT_EQ(conv2d(in, l), in);
}

TEST(Conv2d, ChannelMismatchThrows) {
  ConvLayer l(3, 2, 1, Activation::kLinear);
  EXPECT_THROW(conv2d(ValueGrid(1, 4, 4), l), DimensionError);
}

TEST(Conv2d, EvenKernelRejected) {
  EXPECT_THROW(ConvLayer(2, 1, 1, Activation::kLinear), ParameterError);
  EXPECT_THROW(ConvLayer(0, 1, 1, Activation::kLinear), ParameterError);
}

TEST(Conv2d, MatchesNestedLoopOracle) {
  std::mt19937_64 rng(11);
  const int ks[] = {1, 3, 5, 7, 13};
  for (int trial = 0; trial < 60; ++trial) {
    const int k = ks[trial % 5];
    const int in = 1 + static_cast<int>(rng() % 4), out = 1 + static_cast<int>(rng() % 4);
    const int h = 1 + static_cast<int>(rng() % 16), w = 1 + static_cast<int>(rng() % 16);
    const Activation act = rng() % 2 ? Activation::kRelu : Activation::kLinear;
    const ConvLayer l = random_layer(k, in, out, act, rng);
    const ValueGrid x = testutil::random_grid(in, h, w, rng);
    const ValueGrid got = conv2d(x, l), want = conv_oracle(x, l);
    ASSERT_EQ(got.channels(), out);
    ASSERT_EQ(got.height(), h);
    ASSERT_EQ(got.width(), w);
    for (std::size_t i = 0; i < got.size(); ++i) {
      ASSERT_LE(testutil::rel_err(got.values()[i], want.values()[i], 1e-9), 1e-6);
    }
  }
}

TEST(Conv2dBackward, MatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  const ConvLayer base = random_layer(3, 2, 3, Activation::kLinear, rng);
  const ValueGrid x = testutil::random_grid(2, 5, 6, rng);
  const ValueGrid weights = testutil::random_grid(3, 5, 6, rng);
  auto objective = [&](const ConvLayer& l, const ValueGrid& in) {
    const ValueGrid y = conv2d(in, l);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y.values()[i] * weights.values()[i];
    return s;
  };
  std::vector<double> kg(base.kernels.size(), 0.0), bg(base.biases.size(), 0.0);
  ValueGrid ig;
  conv2d_backward(x, base, weights, kg, bg, &ig);

  const double h = 1e-5;
  for (std::size_t i = 0; i < base.kernels.size(); ++i) {
    ConvLayer p = base, m = base;
    p.kernels[i] += h;
    m.kernels[i] -= h;
    EXPECT_NEAR(kg[i], (objective(p, x) - objective(m, x)) / (2 * h), 1e-6);
  }
  for (std::size_t i = 0; i < base.biases.size(); ++i) {
    ConvLayer p = base, m = base;
    p.biases[i] += h;
    m.biases[i] -= h;
    EXPECT_NEAR(bg[i], (objective(p, x) - objective(m, x)) / (2 * h), 1e-6);
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    ValueGrid p = x, m = x;
    p.values()[i] += h;
    m.values()[i] -= h;
    EXPECT_NEAR(ig.values()[i], (objective(base, p) - objective(base, m)) / (2 * h), 1e-6);
  }
}

TEST(Relu, Examples) {
  ValueGrid g(1, 1, 2);
  g.values()[0] = -0.5;
  g.values()[1] = 0.5;
  const ValueGrid r = relu(g);
  EXPECT_EQ(r.values()[0], 0.0);
  EXPECT_EQ(r.values()[1], 0.5);
  EXPECT_EQ(relu(r), r);
  std::mt19937_64 rng(1);
  const ValueGrid neg = testutil::random_grid(2, 3, 3, rng, -2.0, -0.1);
  const ValueGrid rn = relu(neg);
  for (double v : rn.values()) EXPECT_EQ(v, 0.0);
  const ValueGrid pos = testutil::random_grid(2, 3, 3, rng, 0.0, 2.0);
  EXPECT_EQ(relu(pos), pos);
}

TEST(GaussianBlur3x3, KernelAndImpulse) {
  const auto k = gaussian_kernel_3x3(0.675);
  double sum = 0.0;
  for (double v : k) sum += v;
  EXPECT_NEAR(sum, 1.0, 1e-15);
  const double e1 = std::exp(-1.0 / 1.35), e2 = std::exp(-2.0 / 1.35);
  const double center = 1.0 / (1.0 + 4.0 * e1 + 4.0 * e2);
  EXPECT_NEAR(k[4], center, 1e-15);
  EXPECT_NEAR(center, 0.262, 5e-4);

  ValueGrid impulse(1, 5, 5);
  impulse.at(2, 2) = 1.0;
  const ValueGrid b = gaussian_blur_3x3(impulse, 0.675);
  EXPECT_NEAR(b.at(2, 2), center, 1e-15);
  double total = 0.0;
  for (double v : b.values()) total += v;
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(GaussianBlur3x3, ConstantAndRangeProperties) {
  ValueGrid c(1, 4, 6, 0.37);
  const ValueGrid bc = gaussian_blur_3x3(c, 1.3);
  for (double v : bc.values()) EXPECT_NEAR(v, 0.37, 1e-15);

  std::mt19937_64 rng(8);
  for (int t = 0; t < 20; ++t) {
    const ValueGrid g = testutil::random_grid(1, 7, 9, rng);
    const ValueGrid b = gaussian_blur_3x3(g, 0.2 + 0.1 * t);
    const auto [lo, hi] = std::minmax_element(g.values().begin(), g.values().end());
    for (double v : b.values()) {
      EXPECT_LE(v, *hi + 1e-15);
      EXPECT_GE(v, *lo - 1e-15);
    }
  }
  EXPECT_THROW(gaussian_blur_3x3(c, 0.0), ParameterError);
  EXPECT_THROW(gaussian_blur_3x3(c, -1.0), ParameterError);
  EXPECT_THROW(gaussian_blur_3x3(ValueGrid(2, 3, 3), 0.5), DimensionError);
}

TEST(GrayIo, RoundTripAndByteMapping) {
  const auto dir = testutil::temp_dir("grayio");
  std::mt19937_64 rng(2);
  const ValueGrid g = testutil::random_grid(1, 9, 13, rng, 0.0, 1.0);
  save_gray(dir / "a.pgm", g);
  const ValueGrid back = load_gray(dir / "a.pgm");
  ASSERT_EQ(back.height(), 9);
  ASSERT_EQ(back.width(), 13);
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_LE(std::abs(back.values()[i] - g.values()[i]), 1.0 / 255);

  {
    std::ofstream out(dir / "b.pgm", std::ios::binary);
    out << "P5\n3 1\n255\n";
    out.put(static_cast<char>(0));
    out.put(static_cast<char>(128));
    out.put(static_cast<char>(255));
  }
  const ValueGrid b = load_gray(dir / "b.pgm");
  EXPECT_EQ(b.values()[0], 0.0);
  EXPECT_NEAR(b.values()[1], 0.50196, 1e-5);
  EXPECT_EQ(b.values()[2], 1.0);

  // Half-up rounding and clamping on save.
  ValueGrid h(1, 1, 3);
  h.values()[0] = 127.5 / 255.0;
  h.values()[1] = -0.2;
  h.values()[2] = 1.7;
  save_gray(dir / "c.pgm", h);
  const std::string bytes = testutil::slurp(dir / "c.pgm");
  ASSERT_GE(bytes.size(), 3u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[bytes.size() - 3]), 128);
  EXPECT_EQ(static_cast<unsigned char>(bytes[bytes.size() - 2]), 0);
  EXPECT_EQ(static_cast<unsigned char>(bytes[bytes.size() - 1]), 255);
}

TEST(GrayIo, RejectsMalformedFiles) {
  const auto dir = testutil::temp_dir("grayio_bad");
  {
    std::ofstream out(dir / "magic.pgm", std::ios::binary);
    out << "P2\n1 1\n255\n0\n";
  }
  {
    std::ofstream out(dir / "short.pgm", std::ios::binary);
    out << "P5\n4 4\n255\n";
    out.put('a');
  }
  EXPECT_THROW(load_gray(dir / "magic.pgm"), FormatError);
  EXPECT_THROW(load_gray(dir / "short.pgm"), FormatError);
  EXPECT_THROW(save_gray(dir / "x.pgm", ValueGrid(2, 2, 2)), DimensionError);
}

TEST(GridDump, RoundTripIsFloat32) {
  const auto dir = testutil::temp_dir("dump");
  std::mt19937_64 rng(6);
  const ValueGrid g = testutil::random_grid(2, 3, 4, rng);
  save_grid_dump(dir / "g.grid", g);
  const ValueGrid back = load_grid_dump(dir / "g.grid");
  ASSERT_EQ(back.channels(), 2);
  for (std::size_t i = 0; i < g.size(); ++i) {
    EXPECT_EQ(back.values()[i], static_cast<double>(static_cast<float>(g.values()[i])));
  }
  const std::string bytes = testutil::slurp(dir / "g.grid");
  EXPECT_EQ(bytes.rfind("GRID 2 3 4\n", 0), 0u);
  {
    std::ofstream out(dir / "t.grid", std::ios::binary);
    out << bytes.substr(0, bytes.size() - 2);
  }
  EXPECT_THROW(load_grid_dump(dir / "t.grid"), FormatError);
}
