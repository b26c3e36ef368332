// SPDX-License-Identifier: Apache-2.0
#include "ta2n/metric.hpp"

#include "ta2n/error.hpp"
#include "ta2n/ops.hpp"

namespace ta2n {

Var frame_distance(Tape& t, Var f, Var p) { return ops::frame_cosine_distance(t, f, p); }

double frame_distance(const Tensor& f, const Tensor& p) {
  Tape t(false);
  return t.value(frame_distance(t, t.constant(f), t.constant(p))).item();
}

Var build_prototype(Tape& t, const std::vector<Var>& supports, const TemporalCoordination* tc, std::uint64_t seed,
                    std::size_t* reference) {
  require(!supports.empty(), ErrorCode::kInvalidArgument, "prototype needs at least one support feature");
  if (supports.size() == 1) {
    if (reference) *reference = 0;
    return supports[0];
  }
  Rng rng(seed);
  const std::size_t ref = rng.index(supports.size());
  if (reference) *reference = ref;
  Var total;
  for (std::size_t i = 0; i < supports.size(); ++i) {
    Var aligned = supports[i];
    if (tc) aligned = ops::mix_time(t, tc->correlation(t, supports[ref], supports[i]), supports[i]);
    total = i == 0 ? aligned : ops::add(t, total, aligned);
  }
  return ops::scale(t, total, 1.0 / static_cast<double>(supports.size()));
}

Var logits_from_distances(Tape& t, const std::vector<Var>& distances) {
  require(!distances.empty(), ErrorCode::kInvalidArgument, "no distances to classify");
  const Var stacked = ops::reshape(t, ops::stack(t, distances), {distances.size()});
  return ops::scale(t, stacked, -1.0);
}

EpisodeLogits classify(const Tensor& query, const std::vector<Tensor>& prototypes) {
  require(prototypes.size() >= 2, ErrorCode::kInvalidArgument, "classification needs at least two prototypes");
  Tape t(false);
  const Var q = t.constant(query);
  std::vector<Var> d;
  for (const auto& p : prototypes) d.push_back(frame_distance(t, q, t.constant(p)));
  const Var probs = ops::softmax(t, logits_from_distances(t, d), 0);
  EpisodeLogits out;
  for (Var v : d) out.distances.push_back(t.value(v).item());
  const auto pv = t.value(probs).data();
  out.probabilities.assign(pv.begin(), pv.end());
  for (std::size_t i = 1; i < out.probabilities.size(); ++i)
    if (out.probabilities[i] > out.probabilities[out.predicted]) out.predicted = i;
  return out;
}

Var cross_entropy_loss(Tape& t, const std::vector<Var>& logits, const std::vector<std::size_t>& labels) {
  require(!logits.empty() && logits.size() == labels.size(), ErrorCode::kShapeMismatch,
          "one label per query is required");
  Var total;
  for (std::size_t q = 0; q < logits.size(); ++q) {
    const Var ce = ops::cross_entropy(t, logits[q], labels[q]);
    total = q == 0 ? ce : ops::add(t, total, ce);
  }
  return total;
}

}  // namespace ta2n
