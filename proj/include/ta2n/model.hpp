// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ta2n/acm.hpp"
#include "ta2n/autograd.hpp"
#include "ta2n/synthetic.hpp"
#include "ta2n/ttm.hpp"

namespace ta2n {

struct ModuleToggles {
  bool ttm = true;
  bool tc = true;
  bool sc = true;
  bool operator==(const ModuleToggles&) const = default;
};

struct ModelConfig {
  std::size_t channels = 16;
  std::size_t frames = 8;
  std::size_t height = 7;
  std::size_t width = 7;
  ModuleToggles toggles;
  std::size_t proj_dim = 16;
  std::size_t loc_hidden = 32;
  std::size_t sc_hidden = 128;
  std::size_t sc_pointwise = 64;
  double init_noise = 0.01;
  double tc_key_gain = 1.0;
  MaskOptions mask;
  PerturbSchedule perturb;
  bool perturb_enabled = true;
  std::uint64_t seed = 0;

  void validate() const;
  // Channels reaching the metric: d with TC, C without.
  std::size_t aligned_channels() const { return toggles.tc ? proj_dim : channels; }
};

struct ForwardOptions {
  bool training = false;
  std::size_t epoch = 0;      // drives the perturbation amplitude
  std::uint64_t seed = 0;     // prototype reference draws
  bool diagnostics = false;   // keep per-pair correlations and offsets
};

struct EpisodeResult {
  Var loss;                                  // sum over queries
  Tensor distances;                          // queries × way
  std::vector<std::size_t> predictions;
  std::size_t correct = 0;
  std::vector<WarpParams> support_warps, query_warps;
  std::vector<Tensor> correlations;          // query-major over classes
  std::vector<Tensor> offsets;
  std::optional<OffsetBatchStats> bn_stats;  // training with SC only
};

// Per-location linear embedder, then TTM, TC and SC as toggled, then the
// frame-wise cosine metric against class prototypes.
class Ta2nModel {
 public:
  explicit Ta2nModel(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  EpisodeResult forward(Tape& t, const Episode& episode, const ForwardOptions& options) const;

  // Stage outputs, exposed for tests and tools.
  Var embed(Tape& t, Var f) const;
  const LocalizationNet* ttm() const { return ttm_ ? &*ttm_ : nullptr; }
  const TemporalCoordination* tc() const { return tc_ ? &*tc_ : nullptr; }
  const OffsetPredictor* sc() const { return sc_ ? &*sc_ : nullptr; }
  OffsetPredictor* sc() { return sc_ ? &*sc_ : nullptr; }

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

 private:
  ModelConfig config_;
  Parameter embed_w_, embed_b_;
  std::optional<LocalizationNet> ttm_;
  std::optional<TemporalCoordination> tc_;
  std::optional<OffsetPredictor> sc_;
};

inline constexpr std::uint16_t kCheckpointFormatVersion = 1;

void save_checkpoint(const Ta2nModel& model, const std::filesystem::path& path);
Ta2nModel load_checkpoint(const std::filesystem::path& path);

}  // namespace ta2n
