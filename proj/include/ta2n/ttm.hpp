// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "ta2n/autograd.hpp"
#include "ta2n/rng.hpp"

namespace ta2n {

inline constexpr double kMinWarpScale = 0.25;

// Output time tau samples source time b + a·tau, so [b, b + a] is the window kept.
struct WarpParams {
  double a = 1.0;
  double b = 0.0;
};

struct WarpVars {
  Var a, b;
  WarpParams values(const Tape& t) const { return {t.value(a).item(), t.value(b).item()}; }
};

// a = clamp(1 + raw[0], 0.25, 1), b = sigmoid(raw[1])·(1 - a).
WarpVars warp_from_raw(Tape& t, Var raw);
WarpParams warp_from_raw(double alpha, double beta);

// Spatial average pool, temporal conv k3, ReLU, temporal mean, linear to (alpha, beta).
// The output layer starts at zero so a fresh net predicts the identity warp.
class LocalizationNet {
 public:
  LocalizationNet(std::size_t channels, std::size_t hidden, Rng& rng);

  Var raw(Tape& t, Var f) const;  // f: C×T×H×W -> {2}
  WarpVars localize(Tape& t, Var f) const;
  // Localize then warp f onto the predicted window.
  Var align(Tape& t, Var f, WarpParams* predicted = nullptr) const;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

  Parameter conv_w, conv_b, out_w, out_b;
};

}  // namespace ta2n
