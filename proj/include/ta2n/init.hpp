// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "ta2n/rng.hpp"
#include "ta2n/tensor.hpp"

namespace ta2n::init {

// Uniform Glorot bounds for the given fan sizes.
Tensor xavier(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);
// n×m matrix with ones on the diagonal plus N(0, noise²) entries.
Tensor near_identity(std::size_t n, std::size_t m, double noise, Rng& rng);
// Identity when square, Glorot otherwise.
Tensor projection(std::size_t in, std::size_t out, double noise, Rng& rng);

}  // namespace ta2n::init
