// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>

#include "test_util.hpp"
#include "ta2n/error.hpp"
#include "ta2n/ops.hpp"
#include "ta2n/ttm.hpp"

namespace ta2n {
namespace {

using testing::probe;
using testing::random_tensor;

Tensor warp_values(const Tensor& f, double a, double b) {
  Tape t(false);
  return t.value(ops::temporal_affine_warp(t, t.constant(f), t.constant(Tensor::scalar(a)),
                                           t.constant(Tensor::scalar(b))));
}

Tensor ramp(std::size_t len) {
  Tensor f({1, len, 1, 1});
  for (std::size_t i = 0; i < len; ++i) f[i] = static_cast<double>(i);
  return f;
}

TEST(Localize, FreshNetPredictsIdentity) {
  Rng rng(1);
  LocalizationNet net(6, 32, rng);
  for (int trial = 0; trial < 10; ++trial) {
    Tape t(false);
    const WarpVars w = net.localize(t, t.constant(random_tensor({6, 8, 5, 5}, rng, 3.0)));
    EXPECT_EQ(w.values(t).a, 1.0);
    EXPECT_EQ(w.values(t).b, 0.0);
  }
}

TEST(Localize, RawOutputsMapIntoTheWindow) {
  Tape t(false);
  const WarpParams half = warp_from_raw(t, t.constant(Tensor({2}, {-0.5, 0.0}))).values(t);
  EXPECT_DOUBLE_EQ(half.a, 0.5);
  EXPECT_DOUBLE_EQ(half.b, 0.25);
  EXPECT_DOUBLE_EQ(warp_from_raw(-10.0, 0.0).a, 0.25);
  EXPECT_DOUBLE_EQ(warp_from_raw(3.0, 5.0).a, 1.0);
  EXPECT_DOUBLE_EQ(warp_from_raw(3.0, 5.0).b, 0.0);
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const WarpParams w = warp_from_raw(rng.uniform(-3, 3), rng.uniform(-10, 10));
    EXPECT_GE(w.a, kMinWarpScale);
    EXPECT_LE(w.a, 1.0);
    EXPECT_GE(w.b, 0.0);
    EXPECT_LE(w.a + w.b, 1.0 + 1e-15);
  }
}

TEST(Localize, RejectsWrongRank) {
  Rng rng(3);
  LocalizationNet net(4, 8, rng);
  Tape t(false);
  EXPECT_THROW(net.localize(t, t.constant(Tensor({4, 8}))), Error);
}

TEST(Warp, HandExamples) {
  const Tensor f = ramp(4);
  EXPECT_EQ(warp_values(f, 0.5, 0.0).reshaped({4}), Tensor({4}, {0.0, 0.5, 1.0, 1.5}));
  EXPECT_EQ(warp_values(f, 0.5, 0.5).reshaped({4}), Tensor({4}, {1.5, 2.0, 2.5, 3.0}));
}

TEST(Warp, IdentityIsBitExact) {
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    const Tensor f = random_tensor({3, 2 + static_cast<std::size_t>(i % 9), 2, 3}, rng);
    EXPECT_EQ(warp_values(f, 1.0, 0.0), f);
  }
}

TEST(Warp, StaysInsideConvexHull) {
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    const Tensor f = random_tensor({2, 6, 2, 2}, rng);
    const double a = rng.uniform(0.25, 1.0), b = rng.uniform(0.0, 1.0 - a);
    const Tensor out = warp_values(f, a, b);
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t s = 0; s < 4; ++s) {
        double lo = 1e300, hi = -1e300;
        for (std::size_t k = 0; k < 6; ++k) {
          lo = std::min(lo, f[(c * 6 + k) * 4 + s]);
          hi = std::max(hi, f[(c * 6 + k) * 4 + s]);
        }
        for (std::size_t k = 0; k < 6; ++k) {
          EXPECT_GE(out[(c * 6 + k) * 4 + s], lo - 1e-12);
          EXPECT_LE(out[(c * 6 + k) * 4 + s], hi + 1e-12);
        }
      }
  }
}

TEST(Warp, ComposesLikeWindowsWithinWindows) {
  Rng rng(6);
  for (int i = 0; i < 200; ++i) {
    // Content linear in time, so interpolation error cannot mask a composition error.
    Tensor f({2, 8, 2, 1});
    const double slope = rng.normal(), offset = rng.normal();
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t k = 0; k < 8; ++k)
        for (std::size_t s = 0; s < 2; ++s) f[(c * 8 + k) * 2 + s] = offset + slope * (c + 1) * (k + s);
    const double a1 = rng.uniform(0.3, 1.0), b1 = rng.uniform(0.0, 1.0 - a1);
    const double a2 = rng.uniform(0.3, 1.0), b2 = rng.uniform(0.0, 1.0 - a2);
    const Tensor twice = warp_values(warp_values(f, a1, b1), a2, b2);
    const Tensor once = warp_values(f, a1 * a2, b1 + a1 * b2);
    EXPECT_LT(max_abs_diff(twice, once), 1e-6);
  }
}

TEST(Warp, RejectsWindowsOutsideTheClip) {
  const Tensor f = ramp(4);
  EXPECT_THROW(warp_values(f, 0.0, 0.0), Error);
  EXPECT_THROW(warp_values(f, 1.2, 0.0), Error);
  EXPECT_THROW(warp_values(f, 0.5, -0.1), Error);
  EXPECT_THROW(warp_values(f, 0.5, 0.6), Error);
  EXPECT_THROW(warp_values(Tensor({1, 1, 1, 1}), 1.0, 0.0), Error);
}

TEST(Warp, GradientInWindowParameters) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed + 40);
    Parameter f("f", random_tensor({2, 6, 2, 2}, rng));
    Parameter a("a", Tensor::scalar(rng.uniform(0.4, 0.8)));
    Parameter b("b", Tensor::scalar(rng.uniform(0.0, 0.15)));
    auto fn = [&](Tape& t) {
      return probe(t, ops::temporal_affine_warp(t, t.parameter(f), t.parameter(a), t.parameter(b)), seed);
    };
    GradcheckOptions opt;
    opt.seed = seed;
    const auto report = finite_diff_gradcheck(fn, {&f, &a, &b}, opt);
    EXPECT_TRUE(report.passed) << "max err " << report.max_error;
  }
}

TEST(Localize, GradientThroughTheWholeStage) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    Rng rng(seed + 50);
    LocalizationNet net(3, 4, rng);
    // Move away from the identity so the clamp and the window are interior.
    net.out_w.value = random_tensor({4, 2}, rng, 0.1);
    net.out_b.value = Tensor({2}, {-0.4, 0.2});
    Parameter f("f", random_tensor({3, 5, 4, 4}, rng));
    std::vector<Parameter*> params = net.parameters();
    params.push_back(&f);
    auto fn = [&](Tape& t) { return probe(t, net.align(t, t.parameter(f)), seed); };
    GradcheckOptions opt;
    opt.seed = seed;
    const auto report = finite_diff_gradcheck(fn, params, opt);
    EXPECT_TRUE(report.passed) << "max err " << report.max_error << " rejected " << report.rejected;
    EXPECT_GE(report.entries.size(), 100u);
  }
}

}  // namespace
}  // namespace ta2n
