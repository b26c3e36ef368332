// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "harness.hpp"
#include "ta2n/acm.hpp"
#include "ta2n/metric.hpp"
#include "ta2n/ops.hpp"

namespace ta2n::acceptance {
namespace {

constexpr int kCases = 1000;

Tensor normal_tensor(const Shape& shape, Rng& rng, double scale = 1.0) {
  Tensor t(shape);
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

Outcome summary(const Notes& n, const std::string& what) {
  return {n.ok(), std::to_string(kCases) + " cases: " + (n.ok() ? what : n.failures())};
}

Outcome softmax_rows() {
  Rng rng(101);
  Notes n;
  double worst = 0.0;
  for (int i = 0; i < kCases; ++i) {
    const std::size_t rows = 1 + rng.index(6), cols = 1 + rng.index(12);
    // Logit spreads from tiny to hundreds exercise the max-shift.
    const double spread = std::exp(rng.uniform(-3.0, 6.0));
    Tape t(false);
    const Tensor p = t.value(ops::softmax(t, t.constant(normal_tensor({rows, cols}, rng, spread)), 1));
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        const double v = p[r * cols + c];
        if (!(v >= 0.0 && v <= 1.0)) n.fail("entry outside [0,1]");
        s += v;
      }
      worst = std::max(worst, std::abs(s - 1.0));
    }
  }
  if (worst > 1e-9) n.fail("row sum off by " + std::to_string(worst));
  char buf[64];
  std::snprintf(buf, sizeof buf, "max |row sum - 1| = %.1e (<= 1e-9)", worst);
  return summary(n, buf);
}

Tensor warp(const Tensor& f, double a, double b) {
  Tape t(false);
  return t.value(ops::temporal_affine_warp(t, t.constant(f), t.constant(Tensor::scalar(a)),
                                           t.constant(Tensor::scalar(b))));
}

Outcome identity_warp() {
  Rng rng(102);
  Notes n;
  for (int i = 0; i < kCases; ++i) {
    const Tensor f = normal_tensor({1 + rng.index(4), 2 + rng.index(10), 1 + rng.index(4), 1 + rng.index(4)}, rng,
                                   std::exp(rng.uniform(-5, 5)));
    if (!(warp(f, 1.0, 0.0) == f)) n.fail("case " + std::to_string(i) + " not bit-identical");
  }
  return summary(n, "(a, b) = (1, 0) reproduces the input bit for bit");
}

Outcome warp_hull() {
  Rng rng(103);
  Notes n;
  for (int i = 0; i < kCases; ++i) {
    const std::size_t ch = 1 + rng.index(3), len = 2 + rng.index(9), hw = 1 + rng.index(4);
    const Tensor f = normal_tensor({ch, len, hw, 1}, rng);
    const double a = rng.uniform(0.25, 1.0), b = rng.uniform(0.0, 1.0 - a);
    const Tensor out = warp(f, a, b);
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t s = 0; s < hw; ++s) {
        double lo = INFINITY, hi = -INFINITY;
        for (std::size_t k = 0; k < len; ++k) {
          lo = std::min(lo, f[(c * len + k) * hw + s]);
          hi = std::max(hi, f[(c * len + k) * hw + s]);
        }
        for (std::size_t k = 0; k < len; ++k) {
          const double v = out[(c * len + k) * hw + s];
          if (v < lo - 1e-12 || v > hi + 1e-12) n.fail("case " + std::to_string(i) + " leaves the hull");
        }
      }
  }
  return summary(n, "warped values stay within each series' [min, max]");
}

// Slope-gamma soft window: 1 inside distance 1 of the centre, linear to 0 at 1 + 1/gamma.
double window(double coord, double centre, double gamma) {
  const double d = std::abs(coord - centre);
  return std::clamp(1.0 - gamma * (d - 1.0), 0.0, 1.0);
}

Outcome mask_values() {
  Rng rng(104);
  Notes n;
  const double gamma = 3.0;
  std::size_t plateau = 0, zero = 0, slope = 0;
  double worst = 0.0;
  for (int i = 0; i < kCases; ++i) {
    const std::size_t h = 4 + rng.index(6), w = 4 + rng.index(6);
    const double ox = rng.uniform(-0.5, 0.5) * w, oy = rng.uniform(-0.5, 0.5) * h;
    const Tensor m = offset_mask_values(ox, oy, h, w, gamma);
    const double cx = (w - 1) / 2.0 + ox, cy = (h - 1) / 2.0 + oy;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double v = m[y * w + x];
        const double dx = std::abs(x - cx), dy = std::abs(y - cy);
        if (!(v >= 0.0 && v <= 1.0)) n.fail("value outside [0,1]");
        if (dx < 1.0 && dy < 1.0) {
          ++plateau;
          if (v != 1.0) n.fail("plateau value " + std::to_string(v));
        } else if (dx >= 1.0 + 1.0 / gamma || dy >= 1.0 + 1.0 / gamma) {
          ++zero;
          if (v != 0.0) n.fail("zero-region value " + std::to_string(v));
        } else {
          ++slope;
        }
        worst = std::max(worst, std::abs(v - window(x, cx, gamma) * window(y, cy, gamma)));
      }
  }
  if (worst > 1e-12) n.fail("piecewise-linear value off by " + std::to_string(worst));
  if (plateau == 0 || zero == 0 || slope == 0) n.fail("a mask region was never sampled");
  char buf[128];
  std::snprintf(buf, sizeof buf, "%zu plateau, %zu zero, %zu slope cells; max dev from the window %.1e", plateau,
                zero, slope, worst);
  return summary(n, buf);
}

Outcome mask_symmetry() {
  Rng rng(105);
  Notes n;
  double worst = 0.0;
  for (int i = 0; i < kCases; ++i) {
    const std::size_t h = 4 + rng.index(6), w = 4 + rng.index(6);
    const double ox = rng.uniform(-0.5, 0.5) * w, oy = rng.uniform(-0.5, 0.5) * h;
    const Tensor a = offset_mask_values(ox, oy, h, w), b = offset_mask_values(-ox, -oy, h, w);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        worst = std::max(worst, std::abs(b[y * w + x] - a[(h - 1 - y) * w + (w - 1 - x)]));
  }
  if (worst > 1e-9) n.fail("reflection off by " + std::to_string(worst));
  char buf[96];
  std::snprintf(buf, sizeof buf, "mask(-o) vs reflected mask(o): max dev %.1e (<= 1e-9)", worst);
  return summary(n, buf);
}

double cosine_distance_sum(const Tensor& f, const Tensor& p) {
  const std::size_t d = f.dim(0), len = f.dim(1);
  double total = 0.0;
  for (std::size_t t = 0; t < len; ++t) {
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      ab += f[c * len + t] * p[c * len + t];
      aa += f[c * len + t] * f[c * len + t];
      bb += p[c * len + t] * p[c * len + t];
    }
    total += 1.0 - ab / std::sqrt(aa * bb);
  }
  return total;
}

Outcome cosine_scale() {
  Rng rng(106);
  Notes n;
  double worst = 0.0, worst_ref = 0.0;
  for (int i = 0; i < kCases; ++i) {
    const std::size_t d = 2 + rng.index(8), len = 1 + rng.index(8);
    const Tensor f = normal_tensor({d, len}, rng), p = normal_tensor({d, len}, rng);
    Tensor fs = f, ps = p;
    // Independent positive scale per frame on each side.
    for (std::size_t t = 0; t < len; ++t) {
      const double sf = std::exp(rng.uniform(-6, 6)), sp = std::exp(rng.uniform(-6, 6));
      for (std::size_t c = 0; c < d; ++c) {
        fs[c * len + t] *= sf;
        ps[c * len + t] *= sp;
      }
    }
    const double base = frame_distance(f, p);
    worst = std::max(worst, std::abs(frame_distance(fs, ps) - base));
    worst_ref = std::max(worst_ref, std::abs(base - cosine_distance_sum(f, p)));
  }
  if (worst > 1e-9) n.fail("scaled distance off by " + std::to_string(worst));
  if (worst_ref > 1e-9) n.fail("distance differs from reference by " + std::to_string(worst_ref));
  char buf[128];
  std::snprintf(buf, sizeof buf, "max change under per-frame scaling %.1e, max dev from reference %.1e", worst,
                worst_ref);
  return summary(n, buf);
}

Outcome probability_normalisation() {
  Rng rng(107);
  Notes n;
  double worst_sum = 0.0, worst_ref = 0.0;
  for (int i = 0; i < kCases; ++i) {
    const std::size_t way = 2 + rng.index(9), d = 2 + rng.index(6), len = 1 + rng.index(8);
    const Tensor q = normal_tensor({d, len}, rng);
    std::vector<Tensor> protos;
    std::vector<double> ref(way);
    for (std::size_t c = 0; c < way; ++c) {
      protos.push_back(normal_tensor({d, len}, rng));
      ref[c] = -cosine_distance_sum(q, protos.back());
    }
    const double top = *std::max_element(ref.begin(), ref.end());
    double z = 0.0;
    for (double& r : ref) z += (r = std::exp(r - top));
    const EpisodeLogits out = classify(q, protos);
    const double s = std::accumulate(out.probabilities.begin(), out.probabilities.end(), 0.0);
    worst_sum = std::max(worst_sum, std::abs(s - 1.0));
    for (std::size_t c = 0; c < way; ++c) {
      if (!(out.probabilities[c] >= 0.0 && out.probabilities[c] <= 1.0)) n.fail("probability outside [0,1]");
      worst_ref = std::max(worst_ref, std::abs(out.probabilities[c] - ref[c] / z));
    }
    if (out.predicted != static_cast<std::size_t>(std::max_element(ref.begin(), ref.end()) - ref.begin()))
      n.fail("prediction is not the nearest prototype");
  }
  if (worst_sum > 1e-9) n.fail("sum off by " + std::to_string(worst_sum));
  if (worst_ref > 1e-9) n.fail("probability differs from reference by " + std::to_string(worst_ref));
  char buf[128];
  std::snprintf(buf, sizeof buf, "max |sum - 1| %.1e, max dev from softmax(-distance) %.1e", worst_sum, worst_ref);
  return summary(n, buf);
}

Outcome algebraic_invariants() {
  const std::vector<std::pair<const char*, Outcome (*)()>> props{
      {"softmax rows", softmax_rows},          {"identity warp", identity_warp},
      {"warp convex hull", warp_hull},         {"mask values", mask_values},
      {"mask point reflection", mask_symmetry}, {"cosine scale invariance", cosine_scale},
      {"probability normalisation", probability_normalisation}};
  std::size_t passed = 0;
  std::string failed;
  for (const auto& [name, fn] : props) {
    const Outcome o = fn();
    std::printf("      %s %-26s %s\n", o.passed ? "ok  " : "FAIL", name, o.detail.c_str());
    if (o.passed)
      ++passed;
    else
      failed += std::string(failed.empty() ? ": failed " : ", ") + name;
  }
  return {passed == props.size(),
          std::to_string(passed) + "/" + std::to_string(props.size()) + " properties hold over " +
              std::to_string(kCases) + " randomized cases each" + failed};
}

}  // namespace

std::vector<Criterion> invariant_criteria() {
  return {{"algebraic-invariants", "softmax, warp, mask, cosine and probability properties", algebraic_invariants}};
}

}  // namespace ta2n::acceptance
