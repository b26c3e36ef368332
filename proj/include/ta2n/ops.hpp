// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "ta2n/autograd.hpp"

// Differentiable primitives. Every function records exactly one node on the
// tape, never mutates its inputs, and validates shapes before computing.
namespace ta2n::ops {

// Elementwise (identical shapes).
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double factor);
Var add_constant(Tape& t, Var a, const Tensor& c);
Var relu(Tape& t, Var a);
Var tanh(Tape& t, Var a);
Var sigmoid(Tape& t, Var a);
// Zero gradient strictly outside [lo, hi]; the closed interval passes it.
Var clamp(Tape& t, Var a, double lo, double hi);

// Reductions and shape plumbing.
Var sum(Tape& t, Var a);
Var mean_axis(Tape& t, Var a, std::size_t axis);  // removes axis
Var reshape(Tape& t, Var a, Shape shape);
Var slice(Tape& t, Var a, std::size_t axis, std::size_t start, std::size_t length);
Var concat(Tape& t, Var a, Var b, std::size_t axis);
Var concat_channels(Tape& t, Var a, Var b);  // axis 0 of C×T×H×W maps
Var stack(Tape& t, const std::vector<Var>& items);  // new leading axis
Var select(Tape& t, Var a, std::size_t flat_index);  // scalar {1}
Var transpose(Tape& t, Var a);                       // 2-D
Var matmul(Tape& t, Var a, Var b);                   // 2-D

Var softmax(Tape& t, Var logits, std::size_t axis);
Var log_softmax(Tape& t, Var logits, std::size_t axis);
// -log softmax(logits)[label] for a 1-D logit vector.
Var cross_entropy(Tape& t, Var logits, std::size_t label);

// C×T×H×W -> C×T×1×1.
Var global_avg_pool_spatial(Tape& t, Var f);
// [..., H, W] -> [..., H/2, W/2] (floor), 2×2 window stride 2, first maximum wins.
Var max_pool_spatial2(Tape& t, Var f);
// [..., H, W] -> [...], first maximum wins.
Var global_max_pool_spatial(Tape& t, Var f);

// Affine map along `axis` (default: last). weights C_in×C_out, bias C_out.
Var linear_project(Tape& t, Var x, Var weights, Var bias);
Var linear_project(Tape& t, Var x, Var weights, Var bias, std::size_t axis);

// x: C_in×T, weights: C_out×C_in×3, bias: C_out. Zero padding 1.
Var temporal_conv1d(Tape& t, Var x, Var weights, Var bias);
// x: B×C_in×T×H×W, weights: C_out×C_in×3×3×3, bias: C_out. Zero padding 1.
Var conv3d(Tape& t, Var x, Var weights, Var bias);

struct BatchNormStats {
  Tensor mean;      // per channel
  Tensor variance;  // biased, per channel
};

// x: B×C×... normalized per channel over every other axis.
// Training: batch statistics, written to *batch_stats when non-null.
// Evaluation: the supplied running statistics are used as constants.
Var batch_norm(Tape& t, Var x, Var gamma, Var beta, bool training, const BatchNormStats& running,
               BatchNormStats* batch_stats, double eps = 1e-5);

// Output frame i samples source index b·(T-1) + a·i with linear interpolation.
// f: C×T×H×W (any trailing dims), a and b: scalars {1}.
Var temporal_affine_warp(Tape& t, Var f, Var a, Var b);

// out[c, t, ...] = sum_t' mix[t, t'] · v[c, t', ...]. mix: T×T', v: C×T'×...
Var mix_time(Tape& t, Var mix, Var v);

// offsets: T×2 (x, y) in grid cells relative to the grid centre.
// Returns T×H×W piecewise-linear soft windows with plateau half-width 1.
Var offset_mask(Tape& t, Var offsets, std::size_t height, std::size_t width, double gamma);

// f: d×T×H×W, mask: T×H×W. Returns d×T weighted means, weights = mask + floor.
Var masked_spatial_average(Tape& t, Var f, Var mask, double floor);

// Sum over frames of (1 - cos(f_t, p_t)); f and p: d×T. Returns scalar {1}.
Var frame_cosine_distance(Tape& t, Var f, Var p);

}  // namespace ta2n::ops
