#include "ftn/neural.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace ftn;
using namespace ftn::neural;

namespace {

template <class T>
Tensor<T> random_tensor(int b, int l, int c, std::uint64_t seed, double scale = 1.0) {
  Tensor<T> t(b, l, c);
  rng::Sequence rng(rng::Stream::derive(seed, 0, 0, 99));
  for (auto& v : t.data) v = static_cast<T>(scale * rng.next_gauss());
  return t;
}

template <class T>
Tensor<T> random_labels(int b, int l, int c, std::uint64_t seed) {
  Tensor<T> t(b, l, c);
  rng::Sequence rng(rng::Stream::derive(seed, 1, 0, 99));
  for (auto& v : t.data) v = static_cast<T>(rng.next_bit());
  return t;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST(Tensor, ShapeAndFiniteChecks) {
  EXPECT_THROW(Tensor<double>(0, 3, 2), param_error);
  Tensor<double> t(2, 3, 1);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_NO_THROW(t.check_finite("t"));
  t.at(1, 2, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(t.check_finite("t"), numerical_error);
}

TEST(Tensor, CropAndEmbedAreAdjoint) {
  const auto x = random_tensor<double>(2, 10, 3, 5);
  const auto mid = crop_length(x, 3, 4);
  EXPECT_EQ(mid.length, 4);
  EXPECT_EQ(mid.at(1, 0, 2), x.at(1, 3, 2));
  const auto back = embed_length(mid, 3, 10);
  EXPECT_EQ(back.length, 10);
  EXPECT_EQ(back.at(1, 5, 2), x.at(1, 5, 2));
  EXPECT_EQ(back.at(0, 0, 0), 0.0);
  EXPECT_THROW(crop_length(x, 8, 4), param_error);
  EXPECT_THROW(embed_length(mid, 8, 10), param_error);
}

TEST(Conv1d, DeltaKernelSumsChannels) {
  // one filter, centered delta across both input channels: output =
  // channel sum + bias
  Model<double> m = build_model<double>({LayerSpec::conv(1, 3)}, 2);
  auto& c = std::get<Conv1d<double>>(m.layers[0]);
  c.wt(0, 0, 1) = 1.0;
  c.wt(0, 1, 1) = 1.0;
  c.b[0] = 0.25;
  const auto x = random_tensor<double>(2, 6, 2, 7);
  m.mode = Mode::infer;
  const auto y = m.forward(x);
  ASSERT_EQ(y.channels, 1);
  ASSERT_EQ(y.length, 6);
  for (int b = 0; b < 2; ++b)
    for (int l = 0; l < 6; ++l)
      EXPECT_NEAR(y.at(b, l, 0), x.at(b, l, 0) + x.at(b, l, 1) + 0.25, 1e-12);
}

TEST(Conv1d, ZeroInputGivesBiasBroadcast) {
  Model<double> m = build_model<double>({LayerSpec::conv(3, 5)}, 2);
  auto& c = std::get<Conv1d<double>>(m.layers[0]);
  rng::Sequence rng(rng::Stream::derive(8, 0, 0, 99));
  for (auto& w : c.w) w = rng.next_gauss();
  c.b = {1.0, -2.0, 0.5};
  Tensor<double> x(2, 7, 2);
  m.mode = Mode::infer;
  const auto y = m.forward(x);
  for (int b = 0; b < 2; ++b)
    for (int l = 0; l < 7; ++l)
      for (int n = 0; n < 3; ++n) EXPECT_EQ(y.at(b, l, n), c.b[n]);
}

TEST(Conv1d, GradientsMatchFiniteDifferences) {
  Model<double> m = build_model<double>({LayerSpec::conv(5, 3)}, 2);
  init_params(m, 11);
  const auto x = random_tensor<double>(4, 8, 2, 12);
  const auto labels = random_labels<double>(4, 8, 5, 13);
  const auto rep = gradcheck(
      m, x, labels, [](const Tensor<double>& o, const Tensor<double>& t) {
        return lbce_loss(o, t);
      });
  EXPECT_TRUE(rep.pass) << rep.worst << " rel err " << rep.max_rel_err;
  EXPECT_LT(rep.max_rel_err, 1e-5);
}

TEST(Conv1d, ExplicitPaddingShapes) {
  Model<double> m =
      build_model<double>({LayerSpec::conv(2, 4, false, 0)}, 1);
  const auto x = random_tensor<double>(1, 9, 1, 14);
  m.mode = Mode::infer;
  const auto y = m.forward(x);
  EXPECT_EQ(y.length, 6);  // 9 - 4 + 1
  EXPECT_THROW(build_model<double>({LayerSpec::conv(2, 4, true)}, 1),
               param_error);  // same padding needs odd width
}

TEST(BatchNorm, StandardizedInputPassesThrough) {
  Model<double> m = build_model<double>({LayerSpec::bn()}, 1);
  // construct a channel that is exactly zero-mean unit-variance
  Tensor<double> x(2, 2, 1);
  x.at(0, 0, 0) = 1.0;
  x.at(0, 1, 0) = -1.0;
  x.at(1, 0, 0) = 1.0;
  x.at(1, 1, 0) = -1.0;
  m.mode = Mode::train;
  const auto y = m.forward(x);
  for (std::size_t i = 0; i < y.data.size(); ++i)
    EXPECT_NEAR(y.data[i], x.data[i], 1e-4);  // within the epsilon effect
}

TEST(BatchNorm, InferenceUsesRunningStats) {
  Model<double> m = build_model<double>({LayerSpec::bn()}, 2);
  auto& bn = std::get<BatchNorm<double>>(m.layers[0]);
  bn.gamma = {2.0, 2.0};
  bn.beta = {3.0, 3.0};
  const auto x = random_tensor<double>(2, 4, 2, 16);
  m.mode = Mode::infer;
  const auto y = m.forward(x);
  for (std::size_t i = 0; i < y.data.size(); ++i)
    EXPECT_NEAR(y.data[i], 2.0 * x.data[i] + 3.0, 1e-4 * (1.0 + std::abs(x.data[i])));
}

TEST(BatchNorm, SingleExampleTrainRejected) {
  Model<double> m = build_model<double>({LayerSpec::bn()}, 1);
  const auto x = random_tensor<double>(1, 4, 1, 17);
  m.mode = Mode::train;
  EXPECT_THROW(m.forward(x), param_error);
}

TEST(BatchNorm, GradientsMatchFiniteDifferences) {
  Model<double> m = build_model<double>({LayerSpec::bn()}, 3);
  auto& bn = std::get<BatchNorm<double>>(m.layers[0]);
  rng::Sequence rng(rng::Stream::derive(18, 0, 0, 99));
  for (auto& g : bn.gamma) g = 1.0 + 0.3 * rng.next_gauss();
  for (auto& b : bn.beta) b = 0.2 * rng.next_gauss();
  const auto x = random_tensor<double>(3, 5, 3, 19);
  const auto labels = random_labels<double>(3, 5, 3, 20);
  const auto rep = gradcheck(
      m, x, labels, [](const Tensor<double>& o, const Tensor<double>& t) {
        return lbce_loss(o, t);
      });
  EXPECT_TRUE(rep.pass) << rep.worst << " rel err " << rep.max_rel_err;
}

TEST(Lrelu, SpotValuesAndIdentity) {
  Model<double> m = build_model<double>({LayerSpec::lrelu(0.1)}, 1);
  Tensor<double> x(1, 3, 1);
  x.data = {-1.0, 0.0, 2.0};
  m.mode = Mode::infer;
  const auto y = m.forward(x);
  EXPECT_DOUBLE_EQ(y.data[0], -0.1);
  EXPECT_DOUBLE_EQ(y.data[1], 0.0);
  EXPECT_DOUBLE_EQ(y.data[2], 2.0);

  Model<double> ident = build_model<double>({LayerSpec::lrelu(1.0)}, 1);
  ident.mode = Mode::infer;
  const auto x2 = random_tensor<double>(2, 5, 1, 21);
  const auto y2 = ident.forward(x2);
  for (std::size_t i = 0; i < y2.data.size(); ++i)
    EXPECT_EQ(y2.data[i], x2.data[i]);
}

TEST(Lrelu, GradientAwayFromKink) {
  Model<double> m = build_model<double>({LayerSpec::lrelu(0.01)}, 2);
  auto x = random_tensor<double>(3, 4, 2, 22);
  for (auto& v : x.data)
    if (std::abs(v) < 0.05) v += 0.1;  // keep probes away from the kink
  const auto labels = random_labels<double>(3, 4, 2, 23);
  const auto rep = gradcheck(
      m, x, labels,
      [](const Tensor<double>& o, const Tensor<double>& t) {
        return lbce_loss(o, t);
      },
      1e-6, 1e-6);
  EXPECT_TRUE(rep.pass) << rep.worst << " rel err " << rep.max_rel_err;
}

TEST(Residual, ZeroBlockIsIdentity) {
  // conv inside the block has zero weights, so the skip carries everything
  Model<double> m = build_model<double>(
      {LayerSpec::residual_begin(), LayerSpec::conv(2, 3),
       LayerSpec::residual_end()},
      2);
  const auto x = random_tensor<double>(2, 6, 2, 24);
  m.mode = Mode::infer;
  const auto y = m.forward(x);
  for (std::size_t i = 0; i < y.data.size(); ++i)
    EXPECT_DOUBLE_EQ(y.data[i], x.data[i]);
  Tensor<double> zeros(2, 6, 2);
  const auto y0 = m.forward(zeros);
  for (double v : y0.data) EXPECT_EQ(v, 0.0);
}

TEST(Residual, ProjectionBridgesChannelMismatch) {
  Model<double> m = build_model<double>(
      {LayerSpec::residual_begin(), LayerSpec::conv(4, 3),
       LayerSpec::residual_end()},
      2);
  auto& e = std::get<ResidualEnd<double>>(m.layers[2]);
  EXPECT_TRUE(e.has_proj);
  EXPECT_EQ(e.proj.d_in, 2);
  EXPECT_EQ(e.proj.d_out, 4);
  init_params(m, 25);
  const auto x = random_tensor<double>(3, 5, 2, 26);
  const auto labels = random_labels<double>(3, 5, 4, 27);
  const auto rep = gradcheck(
      m, x, labels, [](const Tensor<double>& o, const Tensor<double>& t) {
        return lbce_loss(o, t);
      });
  EXPECT_TRUE(rep.pass) << rep.worst << " rel err " << rep.max_rel_err;
}

TEST(Residual, MalformedNestingRejected) {
  EXPECT_THROW(build_model<double>({LayerSpec::residual_end()}, 2), param_error);
  EXPECT_THROW(build_model<double>({LayerSpec::residual_begin()}, 2), param_error);
}

TEST(Lbce, SpotValues) {
  Tensor<double> l(1, 1, 1), b(1, 1, 1);
  l.data[0] = 0.0;
  b.data[0] = 0.0;
  EXPECT_NEAR(lbce_loss(l, b).first, std::log(2.0), 1e-12);
  b.data[0] = 1.0;
  EXPECT_NEAR(lbce_loss(l, b).first, std::log(2.0), 1e-12);

  l.data[0] = -50.0;  // confident bit 1
  EXPECT_NEAR(lbce_loss(l, b).first, 0.0, 1e-12);
  l.data[0] = 30.0;  // confidently wrong by 30 nats, no overflow
  EXPECT_NEAR(lbce_loss(l, b).first, 30.0, 1e-9);
  b.data[0] = 0.0;
  l.data[0] = 50.0;  // confident bit 0, correct
  EXPECT_NEAR(lbce_loss(l, b).first, 0.0, 1e-12);
}

TEST(Lbce, MatchesExtendedPrecisionReference) {
  // sigmoid-then-BCE in long double: p(bit 0) = sigmoid(llr)
  auto ref = [](long double lam, int bit) -> double {
    const long double p_correct =
        1.0L / (1.0L + expl(bit == 0 ? -lam : lam));
    return static_cast<double>(-logl(p_correct));
  };
  for (double lam = -30.0; lam <= 30.0; lam += 0.37) {
    for (int bit : {0, 1}) {
      Tensor<double> l(1, 1, 1), b(1, 1, 1);
      l.data[0] = lam;
      b.data[0] = bit;
      EXPECT_NEAR(lbce_loss(l, b).first, ref(lam, bit), 1e-9)
          << "lambda " << lam << " bit " << bit;
    }
  }
}

TEST(Lbce, GradientMatchesFiniteDifferences) {
  auto l = random_tensor<double>(2, 3, 2, 28, 3.0);
  const auto b = random_labels<double>(2, 3, 2, 29);
  const auto [loss, grad] = lbce_loss(l, b);
  const double h = 1e-6;
  for (std::size_t i = 0; i < l.data.size(); ++i) {
    const double keep = l.data[i];
    l.data[i] = keep + h;
    const double up = lbce_loss(l, b).first;
    l.data[i] = keep - h;
    const double down = lbce_loss(l, b).first;
    l.data[i] = keep;
    EXPECT_NEAR(grad.data[i], (up - down) / (2.0 * h), 1e-7);
  }
}

TEST(Mse, ValueAndGradient) {
  Tensor<double> p(1, 2, 1), t(1, 2, 1);
  p.data = {1.0, 3.0};
  t.data = {0.0, 1.0};
  const auto [loss, grad] = mse_loss(p, t);
  EXPECT_DOUBLE_EQ(loss, (1.0 + 4.0) / 2.0);
  EXPECT_DOUBLE_EQ(grad.data[0], 2.0 * 1.0 / 2.0);
  EXPECT_DOUBLE_EQ(grad.data[1], 2.0 * 2.0 / 2.0);
}

TEST(ZeroHead, RandomLabelsGiveLogTwo) {
  Model<double> m = build_model<double>(
      {LayerSpec::conv(4, 3), LayerSpec::bn(), LayerSpec::lrelu(),
       LayerSpec::conv(2, 1)},
      2);
  init_params(m, 30);
  zero_final_layer(m);
  m.mode = Mode::train;
  const auto x = random_tensor<double>(4, 6, 2, 31);
  const auto labels = random_labels<double>(4, 6, 2, 32);
  const auto out = m.forward(x);
  EXPECT_NEAR(lbce_loss(out, labels).first, std::log(2.0), 1e-6);
}

TEST(Adam, ZeroGradientKeepsParameters) {
  Model<float> m = build_model<float>({LayerSpec::conv(2, 3)}, 1);
  init_params(m, 33);
  const auto before = std::get<Conv1d<float>>(m.layers[0]).w;
  m.zero_grads();
  Adam<float> opt;
  opt.step(m.params(), 0.01, 0.0);
  EXPECT_EQ(std::get<Conv1d<float>>(m.layers[0]).w, before);
}

TEST(Adam, FirstStepIsUnitScale) {
  Model<double> m = build_model<double>({LayerSpec::conv(1, 1)}, 1);
  auto& c = std::get<Conv1d<double>>(m.layers[0]);
  c.w[0] = 0.7;
  c.gw[0] = 1.0;
  c.gb[0] = 0.0;
  Adam<double> opt;
  opt.step(m.params(), 0.01, 0.0);
  EXPECT_NEAR(c.w[0], 0.7 - 0.01, 1e-9);
}

TEST(Adam, DeterministicAcrossRuns) {
  auto run = [] {
    Model<float> m = build_model<float>(
        {LayerSpec::conv(3, 3), LayerSpec::lrelu(), LayerSpec::conv(1, 3)}, 1);
    init_params(m, 34);
    m.mode = Mode::train;
    Adam<float> opt;
    for (int e = 0; e < 5; ++e) {
      const auto x = random_tensor<float>(3, 8, 1, 35 + e);
      const auto t = random_labels<float>(3, 8, 1, 40 + e);
      auto out = m.forward(x);
      auto [loss, g] = lbce_loss(out, t);
      (void)loss;
      m.zero_grads();
      m.backward(g);
      opt.step(m.params(), 0.01, 1e-4);
    }
    return std::get<Conv1d<float>>(m.layers[0]).w;
  };
  EXPECT_EQ(run(), run());
}

TEST(Scheduler, DecreasingLossesAlwaysContinue) {
  TrainConfig cfg;
  cfg.lr_patience = 3;
  cfg.early_stop_patience = 5;
  PlateauScheduler s(cfg);
  double loss = 10.0;
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(s.observe(loss), PlateauScheduler::Action::keep_going);
    loss *= 0.99;
  }
  EXPECT_DOUBLE_EQ(s.lr(), cfg.lr_init);
}

TEST(Scheduler, FlatLossDecaysThenStops) {
  TrainConfig cfg;  // patience 50 / 150, factor 10
  PlateauScheduler s(cfg);
  EXPECT_EQ(s.observe(1.0), PlateauScheduler::Action::keep_going);  // baseline
  int decays = 0, epochs_to_stop = 0;
  for (int i = 1; i <= 400; ++i) {
    const auto a = s.observe(1.0);
    if (a == PlateauScheduler::Action::decayed) {
      ++decays;
      if (decays == 1) EXPECT_EQ(i, 50);  // 50 flat epochs trigger the decay
    }
    if (a == PlateauScheduler::Action::stopped) {
      epochs_to_stop = i;
      break;
    }
  }
  EXPECT_EQ(epochs_to_stop, 150);  // 150 flat epochs trigger the stop
  EXPECT_EQ(decays, 2);            // at 50 and 100
  EXPECT_NEAR(s.lr(), 0.01 / 100.0, 1e-12);
}

TEST(Scheduler, RelativeImprovementThreshold) {
  TrainConfig cfg;
  cfg.lr_patience = 2;
  cfg.early_stop_patience = 4;
  PlateauScheduler s(cfg);
  s.observe(1.0);
  // 5e-5 relative is below the 1e-4 threshold: counts as stall
  EXPECT_EQ(s.observe(1.0 - 5e-5), PlateauScheduler::Action::keep_going);
  EXPECT_EQ(s.observe(1.0 - 6e-5), PlateauScheduler::Action::decayed);
  // a real improvement resets the counters
  EXPECT_EQ(s.observe(0.9), PlateauScheduler::Action::keep_going);
  EXPECT_TRUE(s.improved());
}

namespace {

// tiny training task: learn to pass through the sign of a 1-channel input
template <class T>
std::pair<Tensor<T>, Tensor<T>> toy_batch(long epoch, std::uint64_t seed, int batch) {
  rng::Sequence rng(rng::Stream::derive(seed, static_cast<std::uint64_t>(epoch), 0,
                                        rng::purpose::train_data));
  Tensor<T> x(batch, 6, 1), y(batch, 6, 1);
  for (int b = 0; b < batch; ++b)
    for (int l = 0; l < 6; ++l) {
      const double v = rng.next_gauss();
      x.at(b, l, 0) = static_cast<T>(v);
      y.at(b, l, 0) = static_cast<T>(v < 0.0 ? 1 : 0);
    }
  return {std::move(x), std::move(y)};
}

std::vector<LayerSpec> toy_arch() {
  return {LayerSpec::conv(4, 3), LayerSpec::lrelu(), LayerSpec::conv(1, 3)};
}

}  // namespace

TEST(Train, ZeroLearningRateKeepsTrainableParameters) {
  Model<float> m = build_model<float>(toy_arch(), 1);
  init_params(m, 50);
  const auto before = std::get<Conv1d<float>>(m.layers[0]).w;
  TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.lr_init = 0.0;
  cfg.max_epochs = 20;
  cfg.seed = 51;
  train(
      m, [&](long e) { return toy_batch<float>(e, cfg.seed, cfg.batch_size); },
      [](const Tensor<float>& o, const Tensor<float>& t) { return lbce_loss(o, t); },
      cfg);
  EXPECT_EQ(std::get<Conv1d<float>>(m.layers[0]).w, before);
}

TEST(Train, SmokeRunReducesLoss) {
  Model<float> m = build_model<float>(toy_arch(), 1);
  init_params(m, 52);
  TrainConfig cfg;
  cfg.batch_size = 64;
  cfg.max_epochs = 200;
  cfg.seed = 53;
  const auto res = train(
      m, [&](long e) { return toy_batch<float>(e, cfg.seed, cfg.batch_size); },
      [](const Tensor<float>& o, const Tensor<float>& t) { return lbce_loss(o, t); },
      cfg);
  ASSERT_GE(res.loss_history.size(), 2u);
  EXPECT_LT(res.loss_history.back(), res.loss_history.front());
  EXPECT_LT(res.best_loss, res.loss_history.front());
  EXPECT_GE(res.best_epoch, 1);
}

TEST(Train, SeededRunsAreIdentical) {
  auto run = [] {
    Model<float> m = build_model<float>(toy_arch(), 1);
    init_params(m, 54);
    TrainConfig cfg;
    cfg.batch_size = 32;
    cfg.max_epochs = 30;
    cfg.seed = 55;
    return train(
               m,
               [&](long e) { return toy_batch<float>(e, cfg.seed, cfg.batch_size); },
               [](const Tensor<float>& o, const Tensor<float>& t) {
                 return lbce_loss(o, t);
               },
               cfg)
        .loss_history;
  };
  const auto h1 = run(), h2 = run();
  EXPECT_EQ(h1, h2);
}

TEST(Train, ConfigValidation) {
  TrainConfig cfg;
  cfg.lr_patience = 200;  // must stay below early stop patience
  EXPECT_THROW(cfg.validate(), param_error);
  cfg = TrainConfig{};
  cfg.batch_size = 1;
  EXPECT_THROW(cfg.validate(), param_error);
  cfg = TrainConfig{};
  cfg.lr_decay_factor = 1.0;
  EXPECT_THROW(cfg.validate(), param_error);
}

TEST(MacCount, FormulaCases) {
  Model<double> empty;
  empty.in_channels = 2;
  EXPECT_EQ(mac_count(empty, 74), 0);

  Model<double> single = build_model<double>({LayerSpec::conv(32, 9)}, 2);
  EXPECT_EQ(mac_count(single, 74), 74L * 2 * 9 * 32);
  EXPECT_EQ(mac_count(single, 74), 42624);

  Model<double> dense = build_model<double>({LayerSpec::dense(10)}, 2, 8);
  EXPECT_EQ(mac_count(dense, 8), 16L * 10);

  // BN and activations are free; projection convs are counted
  Model<double> res = build_model<double>(
      {LayerSpec::residual_begin(), LayerSpec::conv(4, 3), LayerSpec::bn(),
       LayerSpec::lrelu(), LayerSpec::residual_end()},
      2);
  EXPECT_EQ(mac_count(res, 10), 10L * 2 * 3 * 4 + 10L * 2 * 4);
}

TEST(ModelFile, RoundtripIsBitExact) {
  Model<float> m = build_model<float>(
      {LayerSpec::conv(4, 3), LayerSpec::bn(), LayerSpec::lrelu(0.02),
       LayerSpec::residual_begin(), LayerSpec::conv(6, 3), LayerSpec::bn(),
       LayerSpec::residual_end(), LayerSpec::lrelu(), LayerSpec::conv(2, 1)},
      2);
  init_params(m, 60);
  // make running stats nontrivial
  m.mode = Mode::train;
  const auto warm = random_tensor<float>(4, 10, 2, 61);
  m.forward(warm);
  m.drop_caches();
  m.mode = Mode::infer;

  const std::string path = temp_path("model_roundtrip.ftnm");
  save_model(m, path);
  Model<float> loaded = load_model(path);

  const auto x = random_tensor<float>(3, 10, 2, 62);
  auto y1 = m.forward(x);
  auto y2 = loaded.forward(x);
  ASSERT_TRUE(y1.same_shape(y2));
  for (std::size_t i = 0; i < y1.data.size(); ++i)
    EXPECT_EQ(y1.data[i], y2.data[i]);

  auto p1 = m.params(), p2 = loaded.params();
  ASSERT_EQ(p1.size(), p2.size());
  for (std::size_t i = 0; i < p1.size(); ++i) EXPECT_EQ(*p1[i].value, *p2[i].value);
  std::filesystem::remove(path);
}

TEST(ModelFile, DenseModelRoundtrip) {
  Model<float> m = build_model<float>(
      {LayerSpec::dense(12), LayerSpec::lrelu(), LayerSpec::dense(4)}, 2, 8);
  init_params(m, 63);
  const std::string path = temp_path("model_dense.ftnm");
  save_model(m, path);
  Model<float> loaded = load_model(path);
  const auto x = random_tensor<float>(2, 8, 2, 64);
  auto y1 = m.forward(x), y2 = loaded.forward(x);
  for (std::size_t i = 0; i < y1.data.size(); ++i)
    EXPECT_EQ(y1.data[i], y2.data[i]);
  std::filesystem::remove(path);
}

TEST(ModelFile, TruncatedFileRejected) {
  Model<float> m = build_model<float>({LayerSpec::conv(2, 3)}, 1);
  init_params(m, 65);
  const std::string path = temp_path("model_trunc.ftnm");
  save_model(m, path);
  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 5);
  EXPECT_THROW(load_model(path), format_error);
  std::filesystem::remove(path);
}

TEST(ModelFile, WrongVersionRejectedExplicitly) {
  Model<float> m = build_model<float>({LayerSpec::conv(2, 3)}, 1);
  init_params(m, 66);
  const std::string path = temp_path("model_ver.ftnm");
  save_model(m, path);
  {
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(4);
    const std::uint32_t bad = 2;
    f.write(reinterpret_cast<const char*>(&bad), sizeof bad);
  }
  try {
    load_model(path);
    FAIL() << "expected format_error";
  } catch (const format_error& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
  std::filesystem::remove(path);
}

TEST(ModelFile, MissingFileReported) {
  EXPECT_THROW(load_model(temp_path("no_such_model.ftnm")), missing_artifact_error);
}

TEST(FullModel, EndToEndGradcheckOnCnnStack) {
  // miniature version of the demapper topology: stem, residual block,
  // 1-wide head
  Model<double> m = build_model<double>(
      {LayerSpec::conv(4, 3), LayerSpec::bn(), LayerSpec::lrelu(),
       LayerSpec::residual_begin(), LayerSpec::conv(4, 3), LayerSpec::bn(),
       LayerSpec::lrelu(), LayerSpec::conv(4, 3), LayerSpec::bn(),
       LayerSpec::residual_end(), LayerSpec::lrelu(), LayerSpec::conv(2, 1)},
      2);
  init_params(m, 70);
  const auto x = random_tensor<double>(3, 8, 2, 71);
  const auto labels = random_labels<double>(3, 4, 2, 72);
  // crop-aware loss: evaluate only the middle 4 positions
  auto loss = [](const Tensor<double>& out, const Tensor<double>& t) {
    const auto mid = crop_length(out, 2, 4);
    auto [value, g] = lbce_loss(mid, t);
    return std::make_pair(value, embed_length(g, 2, out.length));
  };
  const auto rep = gradcheck(m, x, labels, loss);
  EXPECT_TRUE(rep.pass) << rep.worst << " rel err " << rep.max_rel_err;
  EXPECT_EQ(rep.entries, 214);  // 166 parameters + 48 input entries
}

TEST(FullModel, EndToEndGradcheckOnMlpStack) {
  Model<double> m = build_model<double>(
      {LayerSpec::dense(10), LayerSpec::lrelu(), LayerSpec::dense(10),
       LayerSpec::lrelu(), LayerSpec::dense(4)},
      2, 6);
  init_params(m, 73);
  const auto x = random_tensor<double>(3, 6, 2, 74);
  auto target = random_tensor<double>(3, 4, 1, 75);
  const auto rep = gradcheck(
      m, x, target, [](const Tensor<double>& o, const Tensor<double>& t) {
        return mse_loss(o, t);
      });
  EXPECT_TRUE(rep.pass) << rep.worst << " rel err " << rep.max_rel_err;
}
