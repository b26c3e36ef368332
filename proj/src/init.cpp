// SPDX-License-Identifier: Apache-2.0
#include "ta2n/init.hpp"

#include <cmath>

namespace ta2n::init {

Tensor xavier(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  Tensor out(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : out.data()) v = rng.uniform(-bound, bound);
  return out;
}

Tensor near_identity(std::size_t n, std::size_t m, double noise, Rng& rng) {
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = (i == j ? 1.0 : 0.0) + noise * rng.normal();
  return out;
}

Tensor projection(std::size_t in, std::size_t out, double noise, Rng& rng) {
  return in == out ? near_identity(in, out, noise, rng) : xavier({in, out}, in, out, rng);
}

}  // namespace ta2n::init
