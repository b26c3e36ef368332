// SPDX-License-Identifier: Apache-2.0
#include "ta2n/ttm.hpp"

#include <algorithm>
#include <cmath>

#include "ta2n/error.hpp"
#include "ta2n/init.hpp"
#include "ta2n/ops.hpp"

namespace ta2n {

WarpVars warp_from_raw(Tape& t, Var raw) {
  const Var alpha = ops::select(t, raw, 0);
  const Var beta = ops::select(t, raw, 1);
  const Var a = ops::clamp(t, ops::add_constant(t, alpha, Tensor::scalar(1.0)), kMinWarpScale, 1.0);
  const Var room = ops::add_constant(t, ops::scale(t, a, -1.0), Tensor::scalar(1.0));
  return {a, ops::mul(t, ops::sigmoid(t, beta), room)};
}

WarpParams warp_from_raw(double alpha, double beta) {
  const double a = std::clamp(1.0 + alpha, kMinWarpScale, 1.0);
  return {a, (1.0 - a) / (1.0 + std::exp(-beta))};
}

LocalizationNet::LocalizationNet(std::size_t channels, std::size_t hidden, Rng& rng)
    : conv_w("ttm.conv.weight", init::xavier({hidden, channels, 3}, 3 * channels, 3 * hidden, rng)),
      conv_b("ttm.conv.bias", Tensor({hidden})),
      out_w("ttm.out.weight", Tensor({hidden, 2})),
      out_b("ttm.out.bias", Tensor({2})) {}

Var LocalizationNet::raw(Tape& t, Var f) const {
  const Tensor& x = t.value(f);
  require(x.rank() == 4, ErrorCode::kShapeMismatch, "localize expects C×T×H×W, got " + shape_string(x.shape()));
  const Var pooled = ops::reshape(t, ops::global_avg_pool_spatial(t, f), {x.dim(0), x.dim(1)});
  const Var h = ops::relu(t, ops::temporal_conv1d(t, pooled, t.parameter(conv_w), t.parameter(conv_b)));
  const Var summary = ops::mean_axis(t, h, 1);
  return ops::linear_project(t, summary, t.parameter(out_w), t.parameter(out_b));
}

WarpVars LocalizationNet::localize(Tape& t, Var f) const { return warp_from_raw(t, raw(t, f)); }

Var LocalizationNet::align(Tape& t, Var f, WarpParams* predicted) const {
  const WarpVars w = localize(t, f);
  if (predicted) *predicted = w.values(t);
  return ops::temporal_affine_warp(t, f, w.a, w.b);
}

std::vector<Parameter*> LocalizationNet::parameters() { return {&conv_w, &conv_b, &out_w, &out_b}; }
std::vector<const Parameter*> LocalizationNet::parameters() const { return {&conv_w, &conv_b, &out_w, &out_b}; }

}  // namespace ta2n
