// SPDX-License-Identifier: Apache-2.0
#include "ta2n/acm.hpp"

#include <cmath>
#include <cstdlib>
#include <limits>
#include <numbers>
#include <tuple>
#include <algorithm>

#include "ta2n/error.hpp"
#include "ta2n/init.hpp"

namespace ta2n {

namespace {

Var pooled_frames(Tape& t, Var f) {
  const Tensor& x = t.value(f);
  require(x.rank() == 4, ErrorCode::kShapeMismatch, "temporal coordination expects C×T×H×W");
  const Var pooled = ops::reshape(t, ops::global_avg_pool_spatial(t, f), {x.dim(0), x.dim(1)});
  return ops::transpose(t, pooled);  // T×C
}

Var zero_bias(Tape& t, std::size_t n) { return t.constant(Tensor({n})); }

}  // namespace

TemporalCoordination::TemporalCoordination(std::size_t channels, std::size_t dim, Rng& rng, double init_noise,
                                           double key_gain)
    : wk("tc.key", init::projection(channels, dim, init_noise, rng)),
      wq("tc.query", init::projection(channels, dim, init_noise, rng)),
      wv("tc.value", init::projection(channels, dim, init_noise, rng)) {
  for (auto& v : wk.value.data()) v *= key_gain;
  for (auto& v : wq.value.data()) v *= key_gain;
}

Var TemporalCoordination::keys(Tape& t, Var support) const {
  return ops::linear_project(t, pooled_frames(t, support), t.parameter(wk), zero_bias(t, dim()));
}

Var TemporalCoordination::queries(Tape& t, Var query) const {
  return ops::linear_project(t, pooled_frames(t, query), t.parameter(wq), zero_bias(t, dim()));
}

Var correlation_from(Tape& t, Var keys, Var queries) {
  const Tensor& k = t.value(keys);
  require(k.rank() == 2 && k.shape() == t.value(queries).shape(), ErrorCode::kShapeMismatch,
          "correlation: keys and queries must both be T×d");
  const double scale = 1.0 / std::sqrt(static_cast<double>(k.dim(1)));
  const Var logits = ops::matmul(t, keys, ops::transpose(t, queries));
  return ops::softmax(t, ops::scale(t, logits, scale), 1);
}

Var TemporalCoordination::correlation(Tape& t, Var support, Var query) const {
  require(t.value(support).shape() == t.value(query).shape(), ErrorCode::kShapeMismatch,
          "temporal coordination: support " + shape_string(t.value(support).shape()) + " vs query " +
              shape_string(t.value(query).shape()));
  return correlation_from(t, keys(t, support), queries(t, query));
}

Var TemporalCoordination::project(Tape& t, Var f) const {
  return ops::linear_project(t, f, t.parameter(wv), zero_bias(t, dim()), 0);
}

TemporalCoordination::Output TemporalCoordination::coordinate(Tape& t, Var support, Var query) const {
  const Var m = correlation(t, support, query);
  return {project(t, support), ops::mix_time(t, m, project(t, query)), m};
}

std::vector<Parameter*> TemporalCoordination::parameters() { return {&wk, &wq, &wv}; }
std::vector<const Parameter*> TemporalCoordination::parameters() const { return {&wk, &wq, &wv}; }

OffsetPredictor::OffsetPredictor(const OffsetPredictorConfig& c, Rng& rng)
    : conv1_w("sc.conv1.weight", init::xavier({c.hidden, c.in_channels, 3, 3, 3}, 27 * c.in_channels, 27 * c.hidden, rng)),
      conv1_b("sc.conv1.bias", Tensor({c.hidden})),
      bn1_g("sc.bn1.weight", Tensor({c.hidden}, 1.0)),
      bn1_b("sc.bn1.bias", Tensor({c.hidden})),
      conv2_w("sc.conv2.weight", init::xavier({c.hidden, c.hidden, 3, 3, 3}, 27 * c.hidden, 27 * c.hidden, rng)),
      conv2_b("sc.conv2.bias", Tensor({c.hidden})),
      bn2_g("sc.bn2.weight", Tensor({c.hidden}, 1.0)),
      bn2_b("sc.bn2.bias", Tensor({c.hidden})),
      pw1_w("sc.pw1.weight", init::xavier({c.hidden, c.pointwise}, c.hidden, c.pointwise, rng)),
      pw1_b("sc.pw1.bias", Tensor({c.pointwise})),
      pw2_w("sc.pw2.weight", Tensor({c.pointwise, 2})),
      pw2_b("sc.pw2.bias", Tensor({2})),
      config_(c) {
  require(c.height >= 4 && c.width >= 4, ErrorCode::kInvalidArgument,
          "offset predictor needs H, W >= 4 for two 2x2 pools");
  require(c.in_channels > 0 && c.hidden > 0 && c.pointwise > 0, ErrorCode::kInvalidArgument,
          "offset predictor widths must be positive");
  for (auto& s : running) s = {Tensor({c.hidden}), Tensor({c.hidden}, 1.0)};
}

Var OffsetPredictor::forward(Tape& t, Var pairs, bool training, OffsetBatchStats* batch_stats) const {
  const Tensor& x = t.value(pairs);
  require(x.rank() == 5 && x.dim(1) == config_.in_channels && x.dim(3) == config_.height &&
              x.dim(4) == config_.width,
          ErrorCode::kShapeMismatch, "offset predictor input " + shape_string(x.shape()));
  const std::size_t batch = x.dim(0), len = x.dim(2);
  auto block = [&](Var in, const Parameter& w, const Parameter& b, const Parameter& g, const Parameter& beta,
                   std::size_t i) {
    Var h = ops::conv3d(t, in, t.parameter(w), t.parameter(b));
    h = ops::batch_norm(t, h, t.parameter(g), t.parameter(beta), training, running[i],
                        batch_stats ? &(*batch_stats)[i] : nullptr);
    return ops::relu(t, ops::max_pool_spatial2(t, h));
  };
  Var h = block(pairs, conv1_w, conv1_b, bn1_g, bn1_b, 0);
  h = block(h, conv2_w, conv2_b, bn2_g, bn2_b, 1);
  h = ops::global_max_pool_spatial(t, h);  // B×hidden×T
  h = ops::relu(t, ops::linear_project(t, h, t.parameter(pw1_w), t.parameter(pw1_b), 1));
  h = ops::tanh(t, ops::linear_project(t, h, t.parameter(pw2_w), t.parameter(pw2_b), 1));
  Tensor extent({batch, 2, len});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < len; ++i) {
      extent[(b * 2) * len + i] = (static_cast<double>(config_.width) - 1.0) / 2.0;
      extent[(b * 2 + 1) * len + i] = (static_cast<double>(config_.height) - 1.0) / 2.0;
    }
  return ops::mul(t, h, t.constant(std::move(extent)));
}

Var OffsetPredictor::pair_offsets(Tape& t, Var batch_offsets, std::size_t b) {
  const std::size_t len = t.value(batch_offsets).dim(2);
  return ops::transpose(t, ops::reshape(t, ops::slice(t, batch_offsets, 0, b, 1), {2, len}));
}

void OffsetPredictor::update_running(const OffsetBatchStats& batch, double momentum) {
  for (std::size_t i = 0; i < running.size(); ++i) {
    for (std::size_t c = 0; c < running[i].mean.size(); ++c) {
      running[i].mean[c] = (1.0 - momentum) * running[i].mean[c] + momentum * batch[i].mean.data()[c];
      running[i].variance[c] = (1.0 - momentum) * running[i].variance[c] + momentum * batch[i].variance.data()[c];
    }
  }
}

std::vector<Parameter*> OffsetPredictor::parameters() {
  return {&conv1_w, &conv1_b, &bn1_g, &bn1_b, &conv2_w, &conv2_b, &bn2_g, &bn2_b, &pw1_w, &pw1_b, &pw2_w, &pw2_b};
}
std::vector<const Parameter*> OffsetPredictor::parameters() const {
  return {&conv1_w, &conv1_b, &bn1_g, &bn1_b, &conv2_w, &conv2_b, &bn2_g, &bn2_b, &pw1_w, &pw1_b, &pw2_w, &pw2_b};
}

double PerturbSchedule::amplitude_at(std::size_t epoch) const {
  const std::size_t steps = interval == 0 ? 0 : epoch / interval;
  return amplitude * std::pow(decay, static_cast<double>(steps));
}

std::vector<Tensor> perturbation_displacements(std::size_t frames, std::size_t epoch,
                                               const PerturbSchedule& schedule) {
  const double amp = schedule.amplitude_at(epoch);
  std::vector<Tensor> out{Tensor({frames, 2})};
  for (int k = 0; k < 8; ++k) {
    const double angle = k * std::numbers::pi / 4.0;
    Tensor d({frames, 2});
    for (std::size_t i = 0; i < frames; ++i) {
      d[2 * i] = amp * std::cos(angle);
      d[2 * i + 1] = amp * std::sin(angle);
    }
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<Tensor> perturb_offsets(const Tensor& offsets, std::size_t epoch, const PerturbSchedule& schedule,
                                    bool training) {
  require(training, ErrorCode::kInvalidArgument, "offset perturbation is disabled in evaluation");
  require(offsets.rank() == 2 && offsets.dim(1) == 2, ErrorCode::kShapeMismatch, "offsets must be T×2");
  auto out = perturbation_displacements(offsets.dim(0), epoch, schedule);
  for (auto& d : out) add_inplace(d, offsets);
  return out;
}

Tensor offset_mask_values(double ox, double oy, std::size_t height, std::size_t width, double gamma) {
  Tape t(false);
  const Var m = ops::offset_mask(t, t.constant(Tensor({1, 2}, {ox, oy})), height, width, gamma);
  return t.value(m).reshaped({height, width});
}

SpatialOutput spatial_coordinate(Tape& t, Var support, Var query, Var offsets, const MaskOptions& mask,
                                 const std::vector<Tensor>& displacements) {
  const Tensor& s = t.value(support);
  require(s.rank() == 4 && s.shape() == t.value(query).shape(), ErrorCode::kShapeMismatch,
          "spatial coordination: support and query must share a d×T×H×W shape");
  const std::size_t h = s.dim(2), w = s.dim(3);
  auto masks_for = [&](Var o) {
    return std::pair{ops::offset_mask(t, o, h, w, mask.gamma),
                     ops::offset_mask(t, ops::scale(t, o, -1.0), h, w, mask.gamma)};
  };
  Var ms, mq;
  if (displacements.empty()) {
    std::tie(ms, mq) = masks_for(offsets);
  } else {
    for (std::size_t k = 0; k < displacements.size(); ++k) {
      auto [a, b] = masks_for(ops::add_constant(t, offsets, displacements[k]));
      ms = k == 0 ? a : ops::add(t, ms, a);
      mq = k == 0 ? b : ops::add(t, mq, b);
    }
    const double inv = 1.0 / static_cast<double>(displacements.size());
    ms = ops::scale(t, ms, inv);
    mq = ops::scale(t, mq, inv);
  }
  return {ops::masked_spatial_average(t, support, ms, mask.floor),
          ops::masked_spatial_average(t, query, mq, mask.floor)};
}

OracleResult sc_enumerate_oracle(const Tensor& support, const Tensor& query, OracleMetric metric, int max_shift) {
  require(support.rank() == 4 && support.shape() == query.shape(), ErrorCode::kShapeMismatch,
          "oracle expects matching d×T×H×W maps");
  const std::size_t ch = support.dim(0), len = support.dim(1);
  const int h = static_cast<int>(support.dim(2)), w = static_cast<int>(support.dim(3));
  const int reach = max_shift < 0 ? std::max(h, w) - 1 : max_shift;
  OracleResult result;
  std::vector<double> ms(ch), mq(ch);
  for (std::size_t i = 0; i < len; ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::array<int, 2> best_shift{0, 0};
    for (int dy = -reach; dy <= reach; ++dy)
      for (int dx = -reach; dx <= reach; ++dx) {
        const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
        const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
        if (x0 >= x1 || y0 >= y1) continue;
        const double count = static_cast<double>((x1 - x0) * (y1 - y0));
        for (std::size_t c = 0; c < ch; ++c) {
          double a = 0.0, b = 0.0;
          for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) {
              a += support.at({c, i, static_cast<std::size_t>(y), static_cast<std::size_t>(x)});
              b += query.at({c, i, static_cast<std::size_t>(y + dy), static_cast<std::size_t>(x + dx)});
            }
          ms[c] = a / count;
          mq[c] = b / count;
        }
        double d = 0.0;
        if (metric == OracleMetric::kEuclidean) {
          for (std::size_t c = 0; c < ch; ++c) d += (ms[c] - mq[c]) * (ms[c] - mq[c]);
          d = std::sqrt(d);
        } else {
          double ab = 0.0, aa = 0.0, bb = 0.0;
          for (std::size_t c = 0; c < ch; ++c) {
            ab += ms[c] * mq[c];
            aa += ms[c] * ms[c];
            bb += mq[c] * mq[c];
          }
          d = 1.0 - ab / (std::sqrt(aa + 1e-24) * std::sqrt(bb + 1e-24));
        }
        const bool closer = d < best - 1e-12;
        const bool tie_but_smaller = std::abs(d - best) <= 1e-12 &&
                                     std::abs(dx) + std::abs(dy) < std::abs(best_shift[0]) + std::abs(best_shift[1]);
        if (closer || tie_but_smaller) {
          best = d;
          best_shift = {dx, dy};
        }
      }
    result.shift.push_back(best_shift);
    result.distance.push_back(best);
  }
  return result;
}

}  // namespace ta2n
