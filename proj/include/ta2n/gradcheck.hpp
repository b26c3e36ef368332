// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ta2n/autograd.hpp"

namespace ta2n {

struct GradcheckOptions {
  double step = 1e-3;
  double tolerance = 1e-4;
  // Coordinates to compare; every coordinate is checked when this exceeds the total.
  std::size_t samples = 100;
  std::uint64_t seed = 0;
  // Below this magnitude the absolute error is reported instead of the relative one.
  double absolute_floor = 1e-8;
  // Attempts per accepted sample before giving up on finding smooth coordinates.
  std::size_t max_attempts_per_sample = 50;
  // Also redraw coordinates where the step-h difference cannot resolve the
  // gradient to the tolerance (estimated from a second difference at h/2).
  bool convergence_screen = true;
};

struct GradcheckEntry {
  std::string parameter;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double error = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  std::size_t rejected = 0;    // coordinates whose ±step straddled a kink
  std::size_t unresolved = 0;  // smooth, but curved too sharply for the step
  double max_error = 0.0;
  bool passed = false;
};

// Builds the scalar loss on the tape from the parameters' current values.
using LossFn = std::function<Var(Tape&)>;

// Compares reverse-mode gradients against central differences
// (fn(θ+h) - fn(θ-h)) / 2h. A sampled coordinate is rejected and redrawn when
// the perturbed evaluations take different non-smooth branches than the base
// point, or when the difference has not converged at step h. Throws kNumerical
// on a non-finite loss.
GradcheckReport finite_diff_gradcheck(const LossFn& fn, const std::vector<Parameter*>& params,
                                      const GradcheckOptions& options = {});

}  // namespace ta2n
