// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ta2n/engine.hpp"
#include "ta2n/error.hpp"

namespace ta2n {
namespace {

ModelConfig small_config(ModuleToggles toggles = {}) {
  ModelConfig c;
  c.channels = 3;
  c.frames = 4;
  c.height = c.width = 5;
  c.toggles = toggles;
  c.proj_dim = 3;
  c.loc_hidden = 4;
  c.sc_hidden = 2;
  c.sc_pointwise = 3;
  c.seed = 3;
  return c;
}

Dataset small_dataset(std::size_t classes = 16) {
  GeneratorOptions o;
  o.num_classes = classes;
  o.videos_per_class = 6;
  o.dims = {3, 4, 5, 5};
  o.config.duration_jitter = 0.3;
  o.seed = 4;
  return generate_dataset(o);
}

TrainConfig small_train() {
  TrainConfig c;
  c.learning_rate = 1e-3;
  c.epochs = 2;
  c.episodes_per_epoch = 3;
  c.way = 3;
  c.query = 2;
  c.seed = 8;
  return c;
}

TEST(Sgd, MomentumOnAQuadratic) {
  // loss = θ²/2, θ0 = 1, lr 0.1, μ 0.9: θ = 0.9, 0.72, 0.486.
  Parameter p("p", Tensor::scalar(1.0));
  SgdMomentum opt({&p}, 0.9);
  for (double expected : {0.9, 0.72, 0.486}) {
    opt.zero_grad();
    Tape t;
    const Var v = t.parameter(p);
    t.backward(ops::scale(t, ops::mul(t, v, v), 0.5));
    accumulate_gradients(t, {&p});
    opt.step(0.1);
    EXPECT_NEAR(p.value.item(), expected, 1e-15);
  }
}

TEST(Train, LearningRateSchedule) {
  TrainConfig c;
  c.learning_rate = 0.1;
  c.decay_factor = 0.5;
  c.decay_interval = 3;
  EXPECT_DOUBLE_EQ(c.learning_rate_at(0), 0.1);
  EXPECT_DOUBLE_EQ(c.learning_rate_at(2), 0.1);
  EXPECT_DOUBLE_EQ(c.learning_rate_at(3), 0.05);
  EXPECT_DOUBLE_EQ(c.learning_rate_at(7), 0.025);
  c.decay_interval = 0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Train, ZeroLearningRateLeavesParameters) {
  const Dataset ds = small_dataset();
  Ta2nModel m(small_config());
  const Ta2nModel fresh(small_config());
  TrainConfig c = small_train();
  c.learning_rate = 0.0;
  const auto log = train(m, ds, c);
  EXPECT_EQ(log.size(), 2u);
  const auto a = m.parameters();
  const auto b = fresh.parameters();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i]->value, b[i]->value) << a[i]->name;
}

TEST(Train, LogsAreDeterministicAndCumulative) {
  const Dataset ds = small_dataset();
  Ta2nModel a(small_config()), b(small_config());
  std::vector<EpochLog> streamed;
  const auto la = train(a, ds, small_train(), [&](const EpochLog& l) { streamed.push_back(l); });
  const auto lb = train(b, ds, small_train());
  EXPECT_EQ(metrics_csv(la), metrics_csv(lb));
  EXPECT_EQ(metrics_csv(la), metrics_csv(streamed));
  EXPECT_EQ(la[0].episodes, 3u);
  EXPECT_EQ(la[1].episodes, 6u);
  for (const auto& l : la) {
    EXPECT_TRUE(std::isfinite(l.loss));
    EXPECT_GE(l.train_accuracy, 0.0);
    EXPECT_LE(l.train_accuracy, 1.0);
  }
  const std::string csv = metrics_csv(la);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,episode,loss,train_acc,lr");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

TEST(Train, DivergenceIsReported) {
  const Dataset ds = small_dataset();
  Ta2nModel m(small_config({false, true, false}));
  TrainConfig c = small_train();
  c.learning_rate = 1e300;
  c.epochs = 5;
  try {
    train(m, ds, c);
    FAIL() << "expected divergence";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNumerical);
  }
}

TEST(Evaluate, ReportStatistics) {
  const Dataset ds = small_dataset();
  const Ta2nModel m(small_config());
  EvalConfig c;
  c.episodes = 6;
  c.way = 3;
  c.query = 2;
  const EvalReport r = evaluate(m, ds, c);
  ASSERT_EQ(r.episode_accuracy.size(), 6u);
  const double n = 6.0;
  const double mean = std::accumulate(r.episode_accuracy.begin(), r.episode_accuracy.end(), 0.0) / n;
  double ss = 0;
  for (double a : r.episode_accuracy) ss += (a - mean) * (a - mean);
  EXPECT_NEAR(r.accuracy, mean, 1e-15);
  EXPECT_NEAR(r.ci, 1.96 * std::sqrt(ss / (n - 1.0)) / std::sqrt(n), 1e-15);
  EXPECT_TRUE(r.ci_defined);
  std::size_t total = 0;
  for (const auto& [cls, tally] : r.per_class) {
    total += tally.total;
    EXPECT_TRUE(std::find(ds.classes.test.begin(), ds.classes.test.end(), cls) != ds.classes.test.end());
  }
  EXPECT_EQ(total, 6u * 3u * 2u);
  c.episodes = 1;
  const EvalReport one = evaluate(m, ds, c);
  EXPECT_FALSE(one.ci_defined);
  EXPECT_EQ(one.ci, 0.0);
}

TEST(Evaluate, UntrainedModelIsAtChanceOnClassFreeFeatures) {
  // With labels carrying no signal, 5-way accuracy must sit near 1/5.
  Dataset ds = small_dataset(20);
  Rng rng(12);
  for (auto& v : ds.videos)
    for (auto& x : v.feature.data()) x = rng.normal();
  ModelConfig mc = small_config();
  EvalConfig ec;
  ec.episodes = 400;
  ec.way = 5;
  ec.query = 1;
  ec.seed = 13;
  const EvalReport r = evaluate(Ta2nModel(mc), ds, ec);
  EXPECT_NEAR(r.accuracy, 0.2, 2.0 * r.ci);
  EXPECT_LT(r.ci, 0.05);
}

TEST(Evaluate, WorkersDoNotChangeTheReport) {
  const Dataset ds = small_dataset();
  const Ta2nModel m(small_config());
  EvalConfig c;
  c.episodes = 7;
  c.way = 3;
  c.query = 1;
  c.seed = 9;
  const EvalReport serial = evaluate(m, ds, c);
  c.workers = 4;
  const EvalReport parallel = evaluate(m, ds, c);
  EXPECT_EQ(serial.episode_accuracy, parallel.episode_accuracy);
  EXPECT_EQ(eval_csv("x", serial), eval_csv("x", parallel));
  c.way = 40;
  EXPECT_THROW(evaluate(m, ds, c), Error);
}

TEST(Evaluate, PerClassDeltas) {
  EvalReport a, b;
  a.per_class[3] = {1, 4};
  a.per_class[5] = {2, 2};
  b.per_class[3] = {3, 4};
  b.per_class[5] = {1, 2};
  const auto d = per_class_deltas(a, b);
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d[0].class_id, 3u);
  EXPECT_DOUBLE_EQ(d[0].delta, 0.5);
  EXPECT_DOUBLE_EQ(d[1].delta, -0.5);
}

TEST(Ablation, SevenVariantsOnTheSameEpisodes) {
  const auto variants = ablation_variants();
  ASSERT_EQ(variants.size(), 7u);
  EXPECT_EQ(variants.front().toggles, (ModuleToggles{false, false, false}));
  EXPECT_EQ(variants[4].toggles, (ModuleToggles{true, true, true}));
  const Dataset ds = small_dataset();
  TrainConfig t = small_train();
  t.epochs = 1;
  t.episodes_per_epoch = 1;
  EvalConfig e;
  e.episodes = 2;
  e.way = 3;
  e.query = 1;
  std::size_t streamed = 0;
  const auto rows = ablation_run(ds, small_config(), t, e, [&](const AblationRow&) { ++streamed; });
  EXPECT_EQ(streamed, 7u);
  const std::string csv = ablation_csv(rows);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "variant,ttm,tc,sc,accuracy,ci,episodes");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 8);
}

}  // namespace
}  // namespace ta2n
