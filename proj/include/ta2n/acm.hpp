// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "ta2n/autograd.hpp"
#include "ta2n/ops.hpp"
#include "ta2n/rng.hpp"

namespace ta2n {

// Attention over time. Rows of M index support steps, columns query steps.
class TemporalCoordination {
 public:
  // key_gain scales the initial key and query maps, sharpening the initial attention.
  TemporalCoordination(std::size_t channels, std::size_t dim, Rng& rng, double init_noise = 0.01,
                       double key_gain = 1.0);

  std::size_t dim() const { return wv.value.dim(1); }
  Var keys(Tape& t, Var support) const;     // T×d from the pooled support
  Var queries(Tape& t, Var query) const;    // T×d from the pooled query
  Var correlation(Tape& t, Var support, Var query) const;  // T×T, rows sum to 1
  Var project(Tape& t, Var f) const;        // W_v at every location: d×T×H×W

  struct Output {
    Var support, query, correlation;
  };
  Output coordinate(Tape& t, Var support, Var query) const;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

  Parameter wk, wq, wv;
};

// Row-stochastic T×T correlation from T×d keys and queries.
Var correlation_from(Tape& t, Var keys, Var queries);

struct OffsetPredictorConfig {
  std::size_t in_channels = 32;
  std::size_t hidden = 128;
  std::size_t pointwise = 64;
  std::size_t height = 7;
  std::size_t width = 7;
};

using OffsetBatchStats = std::array<ops::BatchNormStats, 2>;

// Two {conv3d, batch norm, 2×2 max pool, ReLU} blocks, spatial max, then two
// per-frame layers ending in tanh scaled to half the grid.
class OffsetPredictor {
 public:
  OffsetPredictor(const OffsetPredictorConfig& config, Rng& rng);

  const OffsetPredictorConfig& config() const { return config_; }
  // pairs: B×2d×T×H×W. Returns B×2×T offsets (x row, then y row) in grid cells.
  Var forward(Tape& t, Var pairs, bool training, OffsetBatchStats* batch_stats = nullptr) const;
  // T×2 offsets of pair b from forward()'s output.
  static Var pair_offsets(Tape& t, Var batch_offsets, std::size_t b);
  void update_running(const OffsetBatchStats& batch, double momentum);

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

  Parameter conv1_w, conv1_b, bn1_g, bn1_b, conv2_w, conv2_b, bn2_g, bn2_b;
  Parameter pw1_w, pw1_b, pw2_w, pw2_b;
  OffsetBatchStats running;

 private:
  OffsetPredictorConfig config_;
};

struct PerturbSchedule {
  double amplitude = 1.0;
  double decay = 0.5;
  std::size_t interval = 40;
  double amplitude_at(std::size_t epoch) const;
};

// Original offset followed by 8 displacements of the scheduled amplitude along
// angles k·pi/4. Evaluation mode is rejected.
std::vector<Tensor> perturb_offsets(const Tensor& offsets, std::size_t epoch, const PerturbSchedule& schedule,
                                    bool training);
// The 9 displacements alone (first is zero), each T×2.
std::vector<Tensor> perturbation_displacements(std::size_t frames, std::size_t epoch,
                                               const PerturbSchedule& schedule);

struct MaskOptions {
  double gamma = 3.0;
  double floor = 1e-6;
};

// Plain-value mask for offset (ox, oy): H×W.
Tensor offset_mask_values(double ox, double oy, std::size_t height, std::size_t width, double gamma = 3.0);

struct SpatialOutput {
  Var support, query;  // d×T each
};

// Support is averaged under masks at +O, the query under masks at -O. With
// displacements, masks of every displaced offset are averaged first.
SpatialOutput spatial_coordinate(Tape& t, Var support, Var query, Var offsets, const MaskOptions& mask,
                                 const std::vector<Tensor>& displacements = {});

enum class OracleMetric { kCosine, kEuclidean };

struct OracleResult {
  std::vector<std::array<int, 2>> shift;  // per frame (dx, dy): query(x + shift) ~ support(x)
  std::vector<double> distance;           // per frame, at the minimiser
};

// Exhaustive search over integer shifts comparing the means of the overlapping
// sub-grids. max_shift bounds |dx| and |dy| (default: the whole grid).
OracleResult sc_enumerate_oracle(const Tensor& support, const Tensor& query, OracleMetric metric,
                                 int max_shift = -1);

}  // namespace ta2n
