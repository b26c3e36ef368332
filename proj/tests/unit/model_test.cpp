// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>

#include <unistd.h>

#include "test_util.hpp"
#include "ta2n/error.hpp"
#include "ta2n/io.hpp"
#include "ta2n/metric.hpp"
#include "ta2n/model.hpp"

namespace ta2n {
namespace {

using testing::random_tensor;

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
  c.perturb.interval = 2;
  c.seed = 3;
  return c;
}

Dataset small_dataset() {
  GeneratorOptions o;
  o.num_classes = 12;
  o.videos_per_class = 4;
  o.dims = {3, 4, 5, 5};
  o.config.duration_jitter = 0.3;
  o.config.spatial_jitter = 1.0;
  o.seed = 2;
  return generate_dataset(o);
}

Episode episode(const Dataset& ds, std::size_t way, std::size_t shot, std::size_t query, std::uint64_t seed) {
  return sample_episode(ds, Split::kTrain, way, shot, query, seed);
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("ta2n_model_" + name + "_" + std::to_string(::getpid()));
}

// Moves the identity-initialised heads into their interior so no clamp sits on a kink.
void perturb_heads(Ta2nModel& m, std::uint64_t seed) {
  Rng rng(seed);
  for (Parameter* p : m.parameters()) {
    if (p->name == "ttm.out.weight" || p->name == "sc.pw2.weight") p->value = random_tensor(p->value.shape(), rng, 0.1);
    if (p->name == "ttm.out.bias") p->value = Tensor({2}, {-0.4, 0.2});
  }
}

TEST(Model, ForwardShapes) {
  const Dataset ds = small_dataset();
  const Ta2nModel m(small_config());
  Tape t(false);
  ForwardOptions fo;
  fo.diagnostics = true;
  const auto r = m.forward(t, episode(ds, 3, 2, 2, 1), fo);
  EXPECT_EQ(r.distances.shape(), (Shape{6, 3}));
  EXPECT_EQ(r.predictions.size(), 6u);
  EXPECT_LE(r.correct, 6u);
  EXPECT_EQ(r.correlations.size(), 18u);
  EXPECT_EQ(r.offsets.size(), 18u);
  EXPECT_EQ(r.query_warps.size(), 6u);
  EXPECT_EQ(r.support_warps.size(), 6u);
  EXPECT_FALSE(r.bn_stats.has_value());
  EXPECT_TRUE(std::isfinite(t.value(r.loss).item()));
}

TEST(Model, FreshBaselineTracksThePlainMetric) {
  // Identity embedding and no alignment: distances are the cosine metric on the raw features.
  const Dataset ds = small_dataset();
  const Ta2nModel m(small_config({false, false, false}));
  const Episode ep = episode(ds, 3, 1, 1, 4);
  Tape t(false);
  const auto r = m.forward(t, ep, {});
  for (std::size_t q = 0; q < 3; ++q)
    for (std::size_t c = 0; c < 3; ++c) {
      const Tensor a = ep.queries[q], b = ep.support[c];
      Tensor pa({3, 4}), pb({3, 4});
      for (std::size_t i = 0; i < 12; ++i)
        for (std::size_t s = 0; s < 25; ++s) {
          pa[i] += a[i * 25 + s] / 25.0;
          pb[i] += b[i * 25 + s] / 25.0;
        }
      EXPECT_NEAR(r.distances[q * 3 + c], frame_distance(pa, pb), 1e-9);
    }
}

TEST(Model, EvaluationIgnoresThePerturbation) {
  const Dataset ds = small_dataset();
  ModelConfig with = small_config(), without = small_config();
  without.perturb_enabled = false;
  const Ta2nModel a(with), b(without);
  const Episode ep = episode(ds, 3, 1, 2, 5);
  Tape t1(false), t2(false);
  EXPECT_EQ(a.forward(t1, ep, {}).distances, b.forward(t2, ep, {}).distances);
  ForwardOptions train;
  train.training = true;
  Tape t3(false), t4(false);
  EXPECT_NE(a.forward(t3, ep, train).distances, b.forward(t4, ep, train).distances);
}

TEST(Model, TogglesControlTheParameters) {
  std::set<std::string> prefixes;
  for (const Parameter* p : Ta2nModel(small_config({false, false, false})).parameters())
    prefixes.insert(p->name.substr(0, p->name.find('.')));
  EXPECT_EQ(prefixes, (std::set<std::string>{"embed"}));
  prefixes.clear();
  for (const Parameter* p : Ta2nModel(small_config()).parameters()) prefixes.insert(p->name.substr(0, p->name.find('.')));
  EXPECT_EQ(prefixes, (std::set<std::string>{"embed", "ttm", "tc", "sc"}));
}

TEST(Model, ConfigValidation) {
  ModelConfig c = small_config();
  c.proj_dim = 0;
  EXPECT_THROW(Ta2nModel{c}, Error);
  c = small_config();
  c.frames = 1;
  EXPECT_THROW(Ta2nModel{c}, Error);
  c = small_config();
  c.mask.gamma = -1.0;
  EXPECT_THROW(Ta2nModel{c}, Error);
  const Dataset ds = small_dataset();
  c = small_config();
  c.channels = 4;
  Tape t(false);
  EXPECT_THROW(Ta2nModel(c).forward(t, episode(ds, 2, 1, 1, 1), {}), Error);
}

TEST(Model, FullEpisodeGradient) {
  const Dataset ds = small_dataset();
  for (std::uint64_t seed = 0; seed < 2; ++seed) {
    Ta2nModel m(small_config());
    perturb_heads(m, seed);
    const Episode ep = episode(ds, 2, 2, 1, seed + 10);
    ForwardOptions fo;
    fo.training = true;
    fo.epoch = 1;
    fo.seed = seed;
    auto fn = [&](Tape& t) { return m.forward(t, ep, fo).loss; };
    GradcheckOptions opt;
    opt.seed = seed;
    const auto report = finite_diff_gradcheck(fn, m.parameters(), opt);
    EXPECT_TRUE(report.passed) << "max err " << report.max_error << " rejected " << report.rejected << " unresolved " << report.unresolved;
    EXPECT_GE(report.entries.size(), 100u);
  }
}

TEST(Checkpoint, RoundTripReproducesTheModel) {
  const Dataset ds = small_dataset();
  Ta2nModel m(small_config());
  perturb_heads(m, 1);
  m.sc()->running[0].mean = Tensor({2}, {0.5, -0.25});
  const auto path = temp_path("ckpt");
  save_checkpoint(m, path);
  const Ta2nModel back = load_checkpoint(path);
  EXPECT_EQ(back.config().seed, m.config().seed);
  EXPECT_EQ(back.config().toggles, m.config().toggles);
  const auto pa = m.parameters();
  const auto pb = back.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i]->name, pb[i]->name);
    EXPECT_EQ(pa[i]->value, pb[i]->value);
  }
  EXPECT_EQ(back.sc()->running[0].mean, m.sc()->running[0].mean);
  const Episode ep = episode(ds, 3, 1, 1, 2);
  Tape t1(false), t2(false);
  EXPECT_EQ(m.forward(t1, ep, {}).distances, back.forward(t2, ep, {}).distances);
  std::filesystem::remove(path);
}

TEST(Checkpoint, CorruptFilesAreRejected) {
  const Ta2nModel m(small_config({true, false, false}));
  const auto path = temp_path("bad");
  save_checkpoint(m, path);
  const std::string good = io::read_file(path);
  auto code_of = [&](const std::string& bytes) -> std::optional<ErrorCode> {
    io::write_file_atomic(path, bytes);
    try {
      load_checkpoint(path);
    } catch (const Error& e) {
      return e.code();
    }
    return std::nullopt;
  };
  std::string bad = good;
  bad[0] = 'X';
  EXPECT_EQ(code_of(bad), ErrorCode::kBadMagic);
  bad = good;
  bad[4] = 9;
  EXPECT_EQ(code_of(bad), ErrorCode::kUnsupportedVersion);
  EXPECT_EQ(code_of(good.substr(0, good.size() - 3)), ErrorCode::kTruncated);
  EXPECT_EQ(code_of(good + "x"), ErrorCode::kIo);
  EXPECT_FALSE(code_of(good).has_value());
  std::filesystem::remove(path);
  try {
    load_checkpoint(path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIo);
  }
}

}  // namespace
}  // namespace ta2n
