// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "ta2n/acm.hpp"
#include "ta2n/autograd.hpp"

namespace ta2n {

// Sum over frames of 1 - cos(f_t, p_t); f, p: d×T.
Var frame_distance(Tape& t, Var f, Var p);
double frame_distance(const Tensor& f, const Tensor& p);

// K = 1 returns the feature itself. For K > 1 a seeded reference is drawn and,
// when tc is given, every feature is rearranged in time towards it before the
// mean; without tc the features are averaged directly.
Var build_prototype(Tape& t, const std::vector<Var>& supports, const TemporalCoordination* tc, std::uint64_t seed,
                    std::size_t* reference = nullptr);

// Negative distances as a {N} logit vector.
Var logits_from_distances(Tape& t, const std::vector<Var>& distances);

struct EpisodeLogits {
  std::vector<double> distances;
  std::vector<double> probabilities;
  std::size_t predicted = 0;
};

// Softmax over negative distances to each prototype; needs at least two.
EpisodeLogits classify(const Tensor& query, const std::vector<Tensor>& prototypes);

// Sum over queries of -log P(true class).
Var cross_entropy_loss(Tape& t, const std::vector<Var>& logits, const std::vector<std::size_t>& labels);

}  // namespace ta2n
