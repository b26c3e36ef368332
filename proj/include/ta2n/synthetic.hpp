// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "ta2n/rng.hpp"
#include "ta2n/tensor.hpp"

namespace ta2n {

struct VideoDims {
  std::size_t channels = 16;
  std::size_t frames = 8;
  std::size_t height = 7;
  std::size_t width = 7;

  Shape shape() const { return {channels, frames, height, width}; }
  bool operator==(const VideoDims&) const = default;
};

// Strength of the two misalignment axes injected into generated videos.
struct MisalignmentConfig {
  double duration_jitter = 0.0;     // [0, 1]: spread of action start and length
  double evolution_severity = 0.0;  // >= 0: slope bound of the monotone time warp
  double spatial_jitter = 0.0;      // grid cells
  double background_noise = 1.0;

  void validate() const;
  bool operator==(const MisalignmentConfig&) const = default;
};

// Monotone piecewise-linear bijection of [0, 1] with knots at 1/4, 1/2, 3/4.
struct EvolutionWarp {
  std::array<double, 3> knots{0.25, 0.5, 0.75};

  double operator()(double phase) const;
  // Warp evaluated at k/(n-1), k = 0..n-1.
  std::vector<double> curve(std::size_t n) const;
  bool operator==(const EvolutionWarp&) const = default;
};

// Random warp whose segment slopes lie in [1/(1+s), 1+s].
EvolutionWarp random_evolution_warp(double severity, Rng& rng);

struct VideoAnnotation {
  double start = 0.0;
  double end = 1.0;
  std::vector<double> centers;  // frames × (x, y), grid cells
  EvolutionWarp evolution;
  bool operator==(const VideoAnnotation&) const = default;
};

struct VideoFeature {
  Tensor feature;  // C×T×H×W
  std::size_t label = 0;
  VideoAnnotation truth;
  bool operator==(const VideoFeature&) const = default;
};

struct ClassSignature {
  std::size_t label = 0;
  Tensor signature;  // C×P temporal evolution curve
  Tensor actor;      // C×h×w spatial template
};

enum class Split { kTrain, kVal, kTest };

struct ClassPartition {
  std::vector<std::size_t> train, val, test;
  const std::vector<std::size_t>& of(Split split) const;
  bool operator==(const ClassPartition&) const = default;
};

struct Dataset {
  VideoDims dims;
  std::size_t raw_frames = 0;  // length before segment sampling
  std::size_t num_classes = 0;
  ClassPartition classes;
  std::vector<VideoFeature> videos;
  std::uint64_t seed = 0;
  MisalignmentConfig config;

  std::vector<std::size_t> videos_of_class(std::size_t label) const;
  // Normalised time in [0, 1] of each stored frame.
  std::vector<double> frame_times() const;
  bool operator==(const Dataset&) const = default;
};

struct GeneratorOptions {
  std::size_t num_classes = 30;
  std::size_t videos_per_class = 20;
  VideoDims dims;
  MisalignmentConfig config;
  std::uint64_t seed = 0;
  std::size_t raw_frames = 16;        // 0: same as dims.frames
  std::size_t signature_frames = 8;   // P
  std::size_t actor_size = 3;         // h = w
  double actor_spread = 0.5;          // template values drawn from 1 ± spread
  double similarity_ceiling = 0.3;
  // Explicit split sizes; when unset, test = max(5, n/4), val = (n - test)/5.
  std::optional<std::array<std::size_t, 3>> split_sizes;
};

ClassPartition default_partition(std::size_t num_classes);
std::vector<ClassSignature> generate_signatures(const GeneratorOptions& options);
Dataset generate_dataset(const GeneratorOptions& options);

// Noise-free rendering of one class at the given frame times.
Tensor render_clean(const ClassSignature& signature, const VideoAnnotation& truth, const VideoDims& dims,
                    const std::vector<double>& frame_times);

enum class SampleMode { kDeterministic, kStochastic };

// One frame per segment of T near-equal contiguous segments.
std::vector<std::size_t> tsn_indices(std::size_t raw_frames, std::size_t frames, SampleMode mode,
                                     std::uint64_t seed = 0);
Tensor tsn_sample(const Tensor& frames, std::size_t count, SampleMode mode, std::uint64_t seed = 0);

struct Episode {
  std::size_t way = 0, shot = 0, query = 0;
  std::vector<std::size_t> classes;  // global label of each episode label
  std::vector<Tensor> support;       // class-major, `shot` per class
  std::vector<std::size_t> support_labels;
  std::vector<std::size_t> support_videos;
  std::vector<Tensor> queries;
  std::vector<std::size_t> query_labels;
  std::vector<std::size_t> query_videos;
};

Episode sample_episode(const Dataset& dataset, Split split, std::size_t way, std::size_t shot, std::size_t query,
                       std::uint64_t seed);

inline constexpr std::uint16_t kDatasetFormatVersion = 1;

void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace ta2n
