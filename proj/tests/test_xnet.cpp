#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "test_util.hpp"
#include "xcorner/synthgen.hpp"
#include "xcorner/xnet.hpp"

using namespace xcorner;

namespace {

std::size_t closed_form_count(const NetworkConfig& c) {
  std::size_t n = 0;
  int in = 1;
  for (const auto& l : c.layers) {
    n += static_cast<std::size_t>(l.kernel_size) * l.kernel_size * in * l.out_channels + l.out_channels;
    in = l.out_channels;
  }
  return n;
}

TrainingSample random_sample(int h, int w, std::mt19937_64& rng, int positives) {
  ValueGrid img = testutil::random_grid(1, h, w, rng, 0.0, 1.0);
  std::vector<Pixel> pos;
  for (int i = 0; i < positives; ++i) {
    pos.push_back({static_cast<int>(rng() % w), static_cast<int>(rng() % h)});
  }
  return {std::move(img), LabelMask(h, w, pos)};
}

}  // namespace

TEST(NetworkConfig, TableLayouts) {
  const NetworkConfig f = network_config(ConfigId::kF);
  ASSERT_EQ(f.layers.size(), 6u);
  const int ks[] = {13, 3, 3, 3, 1, 1};
  for (int i = 0; i < 6; ++i) EXPECT_EQ(f.layers[i].kernel_size, ks[i]);
  EXPECT_EQ(f.layers.back().out_channels, 1);
  EXPECT_EQ(f.layers.back().activation, Activation::kLinear);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(f.layers[i].activation, Activation::kRelu);
  EXPECT_EQ(network_config(ConfigId::kA).layers.size(), 3u);
  EXPECT_EQ(network_config(ConfigId::kH).layers.size(), 7u);
}

TEST(NetworkConfig, ParameterCountsMatchClosedForm) {
  for (ConfigId id : all_config_ids()) {
    const NetworkConfig c = network_config(id);
    EXPECT_EQ(parameter_count(c), closed_form_count(c)) << to_string(id);
    EXPECT_EQ(build_network(c, 1).parameter_count(), closed_form_count(c));
  }
  // 13*13*1*16+16 + 1*1*16*8+8 + 3*3*8*1+1
  EXPECT_EQ(parameter_count(network_config(ConfigId::kA)), 2704u + 16 + 128 + 8 + 72 + 1);
}

TEST(NetworkConfig, ParseIds) {
  EXPECT_EQ(parse_config_id("D"), ConfigId::kD1);
  EXPECT_EQ(parse_config_id("E"), ConfigId::kE32);
  EXPECT_EQ(parse_config_id("G"), ConfigId::kG);
  EXPECT_THROW(parse_config_id("Z"), ParameterError);
  for (ConfigId id : all_config_ids()) EXPECT_EQ(parse_config_id(to_string(id)), id);
}

TEST(BuildNetwork, XavierBoundsBiasesAndDeterminism) {
  const DetectorModel a = build_network(ConfigId::kB, 7);
  EXPECT_EQ(a, build_network(ConfigId::kB, 7));
  EXPECT_NE(a, build_network(ConfigId::kB, 8));
  for (const auto& l : a.layers) {
    const double fan_in = l.kernel_size * l.kernel_size * l.in_channels;
    const double fan_out = l.kernel_size * l.kernel_size * l.out_channels;
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (double w : l.kernels) EXPECT_LE(std::abs(w), bound);
    for (double b : l.biases) EXPECT_EQ(b, 0.1);
  }
}

TEST(Forward, ShapeAndConstantChain) {
  DetectorModel m = build_network(ConfigId::kA, 1);
  for (auto& l : m.layers) std::fill(l.kernels.begin(), l.kernels.end(), 0.0);
  const ValueGrid out = forward(m, ValueGrid(1, 11, 17, 0.3));
  EXPECT_EQ(out.channels(), 1);
  EXPECT_EQ(out.height(), 11);
  EXPECT_EQ(out.width(), 17);
  for (double v : out.values()) EXPECT_DOUBLE_EQ(v, 0.1);

  for (auto& l : m.layers) std::fill(l.kernels.begin(), l.kernels.end(), 0.01);
  const ValueGrid c = forward(m, ValueGrid(1, 31, 31, 1.0));
  const double l1 = 0.1 + 169 * 0.01;
  const double l2 = 0.1 + 16 * 0.01 * l1;
  const double l3 = 0.1 + 72 * 0.01 * l2;
  EXPECT_NEAR(c.at(15, 15), l3, 1e-12);
}

TEST(Forward, ComposesConvLayers) {
  std::mt19937_64 rng(3);
  const DetectorModel m = build_network(ConfigId::kC, 3);
  const ValueGrid img = testutil::random_grid(1, 20, 15, rng, 0.0, 1.0);
  ValueGrid x = img;
  for (const auto& l : m.layers) x = conv2d(x, l);
  EXPECT_EQ(forward(m, img), x);
}

TEST(Forward, TranslationEquivariantInInterior) {
  std::mt19937_64 rng(4);
  const DetectorModel m = build_network(ConfigId::kA, 4);
  const ValueGrid img = testutil::random_grid(1, 48, 48, rng, 0.0, 1.0);
  ValueGrid shifted(1, 48, 48);
  const int dx = 3, dy = 2;
  for (int y = 0; y < 48; ++y) {
    for (int x = 0; x < 48; ++x) {
      const int sx = x - dx, sy = y - dy;
      shifted.at(y, x) = (sx >= 0 && sy >= 0) ? img.at(sy, sx) : 0.0;
    }
  }
  const ValueGrid a = forward(m, img), b = forward(m, shifted);
  for (int y = 13; y < 48 - 13; ++y) {
    for (int x = 13; x < 48 - 13; ++x) EXPECT_NEAR(b.at(y + dy, x + dx), a.at(y, x), 1e-12);
  }
}

TEST(ClipActivation, Examples) {
  EXPECT_EQ(clip_activation(2.0, true), 1.0);
  EXPECT_EQ(clip_activation(-0.3, false), 0.0);
  EXPECT_EQ(clip_activation(0.0, true), 1e-6);
  EXPECT_EQ(clip_activation(2.0, false), 1.0 - 1e-6);
  EXPECT_EQ(clip_activation(0.4, true), 0.4);
}

TEST(Loss, DataTermExamples) {
  ValueGrid r(1, 4, 4, 0.0);
  LabelMask one(4, 4, {{1, 2}});
  r.at(2, 1) = 1.0;
  EXPECT_EQ(data_loss(r, one), 0.0);

  r.at(2, 1) = 0.0;  // clipped to 1e-6
  const double expected = -(1.0 - 1e-6) * std::log(1e-6);
  EXPECT_NEAR(data_loss(r, one), expected, 1e-9);
  EXPECT_NEAR(expected, 13.8155, 1e-4);

  // One of four positives at the floor contributes 13.8155 / 4.
  LabelMask four(4, 4, {{0, 0}, {1, 1}, {2, 2}, {3, 3}});
  ValueGrid r4(1, 4, 4, 0.0);
  r4.at(1, 1) = r4.at(2, 2) = r4.at(3, 3) = 1.0;
  EXPECT_NEAR(data_loss(r4, four), expected / 4.0, 1e-3);
}

TEST(Loss, RegularizerOnly) {
  DetectorModel m = build_network(ConfigId::kA, 1);
  for (auto& l : m.layers) {
    std::fill(l.kernels.begin(), l.kernels.end(), 0.0);
    std::fill(l.biases.begin(), l.biases.end(), 0.0);
  }
  m.layers[0].kernels[0] = 1.0;
  m.layers[0].kernels[1] = -1.0;
  m.layers[0].kernels[2] = 1.0;
  m.layers[1].biases[0] = 1.0;
  ASSERT_DOUBLE_EQ(m.squared_norm(), 4.0);
  // Last layer is all zero, so the output is 0 and no positives means no data term.
  const LabelMask mask(6, 6, {});
  std::mt19937_64 rng(1);
  const ValueGrid img = testutil::random_grid(1, 6, 6, rng, 0.0, 1.0);
  EXPECT_NEAR(loss(m, img, mask, 0.01), 0.02, 1e-15);
}

TEST(Loss, NeverBelowRegularizerAndAlwaysFinite) {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 30; ++t) {
    const DetectorModel m = build_network(ConfigId::kA, rng());
    const TrainingSample s = random_sample(12, 12, rng, 3);
    const double reg = 0.5 * 0.01 * m.squared_norm();
    EXPECT_GE(loss(m, s.image, s.mask, 0.01), reg);
  }
  DetectorModel m = build_network(ConfigId::kA, 2);
  std::mt19937_64 r2(1);
  const TrainingSample s = random_sample(10, 10, r2, 2);
  for (double raw : {1e6, -1e6}) {
    m.layers.back().biases[0] = raw;
    EXPECT_TRUE(std::isfinite(loss(m, s.image, s.mask, 0.01)));
  }
}

TEST(LossGradients, SaturatedGivesPureRegularizer) {
  DetectorModel m = build_network(ConfigId::kA, 9);
  for (auto& l : m.layers) std::fill(l.kernels.begin(), l.kernels.end(), 0.0);
  m.layers.back().biases[0] = -5.0;  // positives clip at 1e-6, negatives at 0
  std::mt19937_64 rng(1);
  const TrainingSample s = random_sample(9, 9, rng, 2);
  const LossGradient g = loss_gradients(m, std::span(&s, 1), 0.01);
  const auto w = m.parameters();
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(g.gradient[i], 0.01 * w[i], 1e-15);
}

TEST(LossGradients, RegularizerComponentIsLinearInLambda) {
  std::mt19937_64 rng(2);
  const DetectorModel m = build_network(ConfigId::kA, 2);
  const TrainingSample s = random_sample(8, 8, rng, 2);
  const auto g1 = loss_gradients(m, std::span(&s, 1), 0.01).gradient;
  const auto g2 = loss_gradients(m, std::span(&s, 1), 0.02).gradient;
  const auto g0 = loss_gradients(m, std::span(&s, 1), 0.0).gradient;
  for (std::size_t i = 0; i < g1.size(); ++i) {
    EXPECT_NEAR(g2[i] - g0[i], 2.0 * (g1[i] - g0[i]), 1e-12);
  }
}

TEST(LossGradients, BatchIsMeanOfImages) {
  std::mt19937_64 rng(3);
  const DetectorModel m = build_network(ConfigId::kA, 5);
  const std::vector<TrainingSample> batch = {random_sample(8, 8, rng, 1), random_sample(8, 8, rng, 2)};
  const auto both = loss_gradients(m, batch, 0.01);
  const auto a = loss_gradients(m, std::span(batch.data(), 1), 0.01);
  const auto b = loss_gradients(m, std::span(batch.data() + 1, 1), 0.01);
  EXPECT_NEAR(both.loss, 0.5 * (a.loss + b.loss), 1e-12);
  for (std::size_t i = 0; i < a.gradient.size(); ++i) {
    EXPECT_NEAR(both.gradient[i], 0.5 * (a.gradient[i] + b.gradient[i]), 1e-12);
  }
}

TEST(LossGradients, MatchFiniteDifferencesOnShrunkA) {
  std::mt19937_64 rng(17);
  DetectorModel m = build_network(reduced_width(network_config(ConfigId::kA), 4), 17);
  // Keep every output inside (0, 1) so no clip kink lies within the step.
  m.layers.back().biases[0] = 0.5;
  const double h = 1e-4;
  TrainingSample s = random_sample(8, 8, rng, 2);
  while (testutil::relu_margin(m, s.image) < 10 * h) s = random_sample(8, 8, rng, 2);
  const LossGradient g = loss_gradients(m, std::span(&s, 1), 0.01);
  const auto w = m.parameters();
  int checked = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    auto wp = w, wm = w;
    wp[i] += h;
    wm[i] -= h;
    DetectorModel mp = m, mm = m;
    mp.set_parameters(wp);
    mm.set_parameters(wm);
    const double fd = (loss(mp, s.image, s.mask, 0.01) - loss(mm, s.image, s.mask, 0.01)) / (2 * h);
    EXPECT_LE(testutil::rel_err(g.gradient[i], fd, 1e-6), 1e-3) << "parameter " << i;
    ++checked;
  }
  EXPECT_EQ(checked, static_cast<int>(m.parameter_count()));
}

TEST(SgdStep, ClassicalMomentum) {
  DetectorModel m = build_network(ConfigId::kA, 1);
  const auto w0 = m.parameters();
  std::vector<double> g(w0.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = 0.001 * static_cast<double>(i % 7) - 0.002;
  MomentumState st;
  sgd_step(m, g, st, 0.01, 0.9);
  auto w1 = m.parameters();
  for (std::size_t i = 0; i < w0.size(); ++i) EXPECT_NEAR(w1[i], w0[i] - 0.01 * g[i], 1e-15);

  const std::vector<double> zero(w0.size(), 0.0);
  const auto v0 = st.velocity;
  sgd_step(m, zero, st, 0.01, 0.9);
  for (std::size_t i = 0; i < v0.size(); ++i) EXPECT_NEAR(st.velocity[i], 0.9 * v0[i], 1e-18);
  EXPECT_THROW(sgd_step(m, std::vector<double>(3), st, 0.01, 0.9), DimensionError);
}

TEST(ClipGradientNorm, RescalesOnlyAboveCap) {
  std::vector<double> g = {3.0, 4.0};
  clip_gradient_norm(g, 10.0);
  EXPECT_EQ(g, (std::vector<double>{3.0, 4.0}));
  clip_gradient_norm(g, 1.0);
  EXPECT_NEAR(g[0], 0.6, 1e-15);
  EXPECT_NEAR(g[1], 0.8, 1e-15);
  std::vector<double> h = {30.0, 40.0};
  clip_gradient_norm(h, 0.0);
  EXPECT_EQ(h[0], 30.0);
}

TEST(LrAt, Schedule) {
  TrainConfig cfg;
  EXPECT_DOUBLE_EQ(lr_at(0, cfg), 0.01);
  EXPECT_NEAR(lr_at(100, cfg), 0.01 * std::exp(-1.0), 1e-15);
  EXPECT_NEAR(lr_at(100, cfg), 0.003679, 1e-6);
  cfg.decay_rate = 0.0;
  EXPECT_DOUBLE_EQ(lr_at(37, cfg), 0.01);
}

TEST(Train, ZeroEpochsReturnsInitialModel) {
  std::mt19937_64 rng(1);
  const std::vector<TrainingSample> data = {random_sample(16, 16, rng, 1)};
  TrainConfig cfg;
  cfg.epochs = 0;
  cfg.seed = 5;
  const TrainResult r = train(data, ConfigId::kA, cfg);
  EXPECT_EQ(r.model, build_network(ConfigId::kA, 5));
  EXPECT_TRUE(r.epoch_loss.empty());
  EXPECT_THROW(train(std::vector<TrainingSample>{}, ConfigId::kA, cfg), ParameterError);
}

TEST(Train, LossDecreasesOnToyBoardsAndIsDeterministic) {
  BoardDistribution dist;
  std::vector<TrainingSample> data;
  for (int i = 0; i < 50; ++i) {
    GeneratedBoard b = generate_board(dist, 42, i);
    data.push_back({std::move(b.render.image), std::move(b.render.truth.mask)});
  }
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.seed = 3;
  const TrainResult r = train(data, ConfigId::kA, cfg);
  ASSERT_EQ(r.epoch_loss.size(), 5u);
  EXPECT_LT(r.epoch_loss.back(), r.epoch_loss.front());

  cfg.epochs = 1;
  const std::vector<TrainingSample> small(data.begin(), data.begin() + 10);
  const TrainResult a = train(small, ConfigId::kA, cfg), b = train(small, ConfigId::kA, cfg);
  EXPECT_EQ(a.epoch_loss, b.epoch_loss);
  EXPECT_EQ(a.model, b.model);
}

TEST(ModelIo, RoundTripIsByteExact) {
  const auto dir = testutil::temp_dir("model");
  DetectorModel m = build_network(ConfigId::kF, 2);
  save_model(dir / "f.model", m);
  const DetectorModel back = load_model(dir / "f.model");
  EXPECT_EQ(back.layers.size(), 6u);
  EXPECT_EQ(back.config.id, ConfigId::kF);
  save_model(dir / "f2.model", back);
  EXPECT_EQ(testutil::slurp(dir / "f.model"), testutil::slurp(dir / "f2.model"));
  const std::string bytes = testutil::slurp(dir / "f.model");
  EXPECT_EQ(bytes.rfind("RCDN1 F 6\nconv 13 1 32 relu\n", 0), 0u);
  // Parameters are stored as float32.
  const auto wp = m.parameters(), bp = back.parameters();
  for (std::size_t i = 0; i < wp.size(); ++i) EXPECT_EQ(bp[i], static_cast<double>(static_cast<float>(wp[i])));
}

TEST(ModelIo, RejectsBadFiles) {
  const auto dir = testutil::temp_dir("model_bad");
  save_model(dir / "a.model", build_network(ConfigId::kA, 1));
  const std::string bytes = testutil::slurp(dir / "a.model");
  {
    std::ofstream out(dir / "magic.model", std::ios::binary);
    out << "XXXX1" << bytes.substr(5);
  }
  {
    std::ofstream out(dir / "short.model", std::ios::binary);
    out << bytes.substr(0, bytes.size() - 10);
  }
  {
    std::ofstream out(dir / "chain.model", std::ios::binary);
    std::string broken = bytes;
    const auto pos = broken.find("conv 1 16 8");
    broken.replace(pos, 11, "conv 1 15 8");
    out << broken;
  }
  EXPECT_THROW(load_model(dir / "magic.model"), FormatError);
  EXPECT_THROW(load_model(dir / "short.model"), FormatError);
  EXPECT_THROW(load_model(dir / "chain.model"), FormatError);
}
