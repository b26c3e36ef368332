// SPDX-License-Identifier: Apache-2.0
#include "ta2n/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "ta2n/error.hpp"
#include "ta2n/io.hpp"

namespace ta2n {

void MisalignmentConfig::validate() const {
  require(duration_jitter >= 0.0 && duration_jitter <= 1.0, ErrorCode::kInvalidArgument,
          "duration_jitter must lie in [0, 1]");
  require(evolution_severity >= 0.0, ErrorCode::kInvalidArgument, "evolution_severity must be non-negative");
  require(spatial_jitter >= 0.0, ErrorCode::kInvalidArgument, "spatial_jitter must be non-negative");
  require(background_noise >= 0.0, ErrorCode::kInvalidArgument, "background_noise must be non-negative");
}

double EvolutionWarp::operator()(double phase) const {
  const std::array<double, 5> values{0.0, knots[0], knots[1], knots[2], 1.0};
  const double p = std::clamp(phase, 0.0, 1.0) * 4.0;
  const std::size_t seg = std::min<std::size_t>(static_cast<std::size_t>(p), 3);
  const double frac = p - static_cast<double>(seg);
  return values[seg] + frac * (values[seg + 1] - values[seg]);
}

std::vector<double> EvolutionWarp::curve(std::size_t n) const {
  std::vector<double> out(n);
  for (std::size_t k = 0; k < n; ++k) out[k] = (*this)(n == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(n - 1));
  return out;
}

EvolutionWarp random_evolution_warp(double severity, Rng& rng) {
  // Log-slopes within ±log(1+s)/2 keep the normalised slopes inside [1/(1+s), 1+s].
  const double spread = 0.5 * std::log1p(severity);
  std::array<double, 4> slope{};
  double mean = 0.0;
  for (auto& r : slope) {
    r = std::exp(rng.uniform(-1.0, 1.0) * spread);
    mean += r / 4.0;
  }
  EvolutionWarp w;
  double acc = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    acc += 0.25 * slope[i] / mean;
    w.knots[i] = acc;
  }
  return w;
}

const std::vector<std::size_t>& ClassPartition::of(Split split) const {
  switch (split) {
    case Split::kTrain: return train;
    case Split::kVal: return val;
    case Split::kTest: return test;
  }
  return test;
}

std::vector<std::size_t> Dataset::videos_of_class(std::size_t label) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < videos.size(); ++i)
    if (videos[i].label == label) out.push_back(i);
  return out;
}

std::vector<double> Dataset::frame_times() const {
  const std::size_t raw = raw_frames == 0 ? dims.frames : raw_frames;
  const auto idx = tsn_indices(raw, dims.frames, SampleMode::kDeterministic);
  std::vector<double> times(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k)
    times[k] = raw == 1 ? 0.0 : static_cast<double>(idx[k]) / static_cast<double>(raw - 1);
  return times;
}

ClassPartition default_partition(std::size_t num_classes) {
  const std::size_t test = std::max<std::size_t>(5, num_classes / 4);
  require(num_classes > test, ErrorCode::kInvalidArgument, "need at least 6 classes for a 5-way test split");
  const std::size_t val = (num_classes - test) / 5;
  ClassPartition p;
  const std::size_t train = num_classes - test - val;
  for (std::size_t c = 0; c < num_classes; ++c) (c < train ? p.train : c < train + val ? p.val : p.test).push_back(c);
  return p;
}

namespace {

ClassPartition partition_for(const GeneratorOptions& o) {
  if (!o.split_sizes) return default_partition(o.num_classes);
  const auto [tr, va, te] = *o.split_sizes;
  require(tr + va + te == o.num_classes && tr > 0 && te > 0, ErrorCode::kInvalidArgument,
          "split sizes must be positive for train/test and sum to num_classes");
  ClassPartition p;
  for (std::size_t c = 0; c < o.num_classes; ++c) (c < tr ? p.train : c < tr + va ? p.val : p.test).push_back(c);
  return p;
}

double cosine(const Tensor& a, const Tensor& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

void validate_options(const GeneratorOptions& o) {
  o.config.validate();
  require(o.num_classes >= 6, ErrorCode::kInvalidArgument, "num_classes must be at least 6");
  require(o.videos_per_class >= 1, ErrorCode::kInvalidArgument, "videos_per_class must be positive");
  const VideoDims& d = o.dims;
  require(d.channels > 0 && d.frames >= 2 && d.height > 0 && d.width > 0, ErrorCode::kInvalidArgument,
          "dims must be positive with at least 2 frames");
  require(o.raw_frames == 0 || o.raw_frames >= d.frames, ErrorCode::kInvalidArgument,
          "raw_frames must be at least frames");
  require(o.signature_frames >= 2, ErrorCode::kInvalidArgument, "signature_frames must be at least 2");
  require(o.actor_size >= 1 && o.actor_size % 2 == 1, ErrorCode::kInvalidArgument, "actor_size must be odd");
  require(o.actor_size <= d.height && o.actor_size <= d.width, ErrorCode::kInvalidArgument,
          "actor template larger than the feature grid");
  require(o.actor_spread >= 0.0 && o.actor_spread <= 1.0, ErrorCode::kInvalidArgument, "actor_spread must lie in [0, 1]");
}

}  // namespace

std::vector<ClassSignature> generate_signatures(const GeneratorOptions& o) {
  validate_options(o);
  const std::size_t C = o.dims.channels, P = o.signature_frames, A = o.actor_size;
  std::vector<ClassSignature> out;
  out.reserve(o.num_classes);
  for (std::size_t c = 0; c < o.num_classes; ++c) {
    Rng rng(mix_seed(o.seed, 0x5167'0000 + c));
    ClassSignature s{c, Tensor({C, P}), Tensor({C, A, A})};
    bool accepted = false;
    for (int attempt = 0; attempt < 1000 && !accepted; ++attempt) {
      for (auto& v : s.signature.data()) v = rng.normal();
      accepted = std::all_of(out.begin(), out.end(), [&](const ClassSignature& prev) {
        return cosine(prev.signature, s.signature) < o.similarity_ceiling;
      });
    }
    require(accepted, ErrorCode::kInvalidArgument, "could not draw signatures below the similarity ceiling");
    for (auto& v : s.actor.data()) v = rng.uniform(1.0 - o.actor_spread, 1.0 + o.actor_spread);
    out.push_back(std::move(s));
  }
  return out;
}

Tensor render_clean(const ClassSignature& sig, const VideoAnnotation& truth, const VideoDims& dims,
                    const std::vector<double>& frame_times) {
  const std::size_t C = dims.channels, T = dims.frames, H = dims.height, W = dims.width;
  const std::size_t P = sig.signature.dim(1), A = sig.actor.dim(1), r = A / 2;
  require(frame_times.size() == T && truth.centers.size() == 2 * T, ErrorCode::kShapeMismatch,
          "render_clean: annotation does not match dims");
  Tensor out({C, T, H, W});
  const double length = truth.end - truth.start;
  for (std::size_t k = 0; k < T; ++k) {
    const double u = frame_times[k];
    if (u < truth.start || u > truth.end || length <= 0.0) continue;
    const double pos = truth.evolution((u - truth.start) / length) * static_cast<double>(P - 1);
    const std::size_t lo = std::min(static_cast<std::size_t>(pos), P - 2);
    const double frac = pos - static_cast<double>(lo);
    const auto cx = static_cast<std::size_t>(truth.centers[2 * k]);
    const auto cy = static_cast<std::size_t>(truth.centers[2 * k + 1]);
    for (std::size_t c = 0; c < C; ++c) {
      const double level = (1.0 - frac) * sig.signature[c * P + lo] + frac * sig.signature[c * P + lo + 1];
      for (std::size_t dy = 0; dy < A; ++dy)
        for (std::size_t dx = 0; dx < A; ++dx)
          out.at({c, k, cy + dy - r, cx + dx - r}) = level * sig.actor[(c * A + dy) * A + dx];
    }
  }
  return out;
}

Dataset generate_dataset(const GeneratorOptions& o) {
  const auto signatures = generate_signatures(o);
  Dataset ds;
  ds.dims = o.dims;
  ds.raw_frames = o.raw_frames == 0 ? o.dims.frames : o.raw_frames;
  ds.num_classes = o.num_classes;
  ds.classes = partition_for(o);
  ds.seed = o.seed;
  ds.config = o.config;
  const auto times = ds.frame_times();
  const MisalignmentConfig& m = o.config;
  const std::size_t T = o.dims.frames, r = o.actor_size / 2;
  const double cx0 = (static_cast<double>(o.dims.width) - 1.0) / 2.0;
  const double cy0 = (static_cast<double>(o.dims.height) - 1.0) / 2.0;
  auto place = [r](double centre, std::size_t extent) {
    return std::clamp(std::round(centre), static_cast<double>(r), static_cast<double>(extent - 1 - r));
  };

  for (std::size_t c = 0; c < o.num_classes; ++c)
    for (std::size_t v = 0; v < o.videos_per_class; ++v) {
      // Every draw happens regardless of the config so that datasets differing
      // only in severity share their random stream.
      Rng rng(mix_seed(o.seed, mix_seed(c, v) + 2));
      VideoFeature video;
      video.label = c;
      const double length = 1.0 - 0.75 * m.duration_jitter * rng.uniform();
      video.truth.start = rng.uniform() * (1.0 - length);
      video.truth.end = video.truth.start + length;
      video.truth.evolution = random_evolution_warp(m.evolution_severity, rng);
      const double ox = rng.uniform(-1.0, 1.0) * m.spatial_jitter;
      const double oy = rng.uniform(-1.0, 1.0) * m.spatial_jitter;
      video.truth.centers.resize(2 * T);
      for (std::size_t k = 0; k < T; ++k) {
        const double jx = rng.uniform(-0.25, 0.25) * m.spatial_jitter;
        const double jy = rng.uniform(-0.25, 0.25) * m.spatial_jitter;
        video.truth.centers[2 * k] = place(cx0 + ox + jx, o.dims.width);
        video.truth.centers[2 * k + 1] = place(cy0 + oy + jy, o.dims.height);
      }
      video.feature = render_clean(signatures[c], video.truth, o.dims, times);
      for (auto& x : video.feature.data()) x += m.background_noise * rng.normal();
      ds.videos.push_back(std::move(video));
    }
  return ds;
}

std::vector<std::size_t> tsn_indices(std::size_t raw_frames, std::size_t frames, SampleMode mode,
                                     std::uint64_t seed) {
  require(frames >= 1, ErrorCode::kInvalidArgument, "tsn: frame count must be positive");
  require(raw_frames >= frames, ErrorCode::kInvalidArgument,
          "tsn: " + std::to_string(raw_frames) + " raw frames cannot yield " + std::to_string(frames));
  Rng rng(seed);
  std::vector<std::size_t> out(frames);
  for (std::size_t k = 0; k < frames; ++k) {
    const std::size_t begin = k * raw_frames / frames;
    const std::size_t end = (k + 1) * raw_frames / frames;
    const std::size_t len = end - begin;
    out[k] = begin + (mode == SampleMode::kDeterministic ? len / 2 : rng.index(len));
  }
  return out;
}

Tensor tsn_sample(const Tensor& frames, std::size_t count, SampleMode mode, std::uint64_t seed) {
  require(frames.rank() >= 2, ErrorCode::kShapeMismatch, "tsn_sample expects C×T×...");
  const std::size_t raw = frames.dim(1);
  const auto idx = tsn_indices(raw, count, mode, seed);
  Shape shape = frames.shape();
  shape[1] = count;
  Tensor out(shape);
  const std::size_t inner = frames.size() / (frames.dim(0) * raw);
  for (std::size_t c = 0; c < frames.dim(0); ++c)
    for (std::size_t k = 0; k < count; ++k)
      std::copy_n(&frames[(c * raw + idx[k]) * inner], inner, &out[(c * count + k) * inner]);
  return out;
}

Episode sample_episode(const Dataset& ds, Split split, std::size_t way, std::size_t shot, std::size_t query,
                       std::uint64_t seed) {
  require(way >= 1 && shot >= 1 && query >= 1, ErrorCode::kInvalidArgument, "episode sizes must be positive");
  const auto& pool = ds.classes.of(split);
  require(pool.size() >= way, ErrorCode::kInsufficientData,
          "split has " + std::to_string(pool.size()) + " classes, episode needs " + std::to_string(way));
  Rng rng(seed);
  Episode ep;
  ep.way = way;
  ep.shot = shot;
  ep.query = query;
  for (std::size_t pick : rng.choose(pool.size(), way)) ep.classes.push_back(pool[pick]);
  for (std::size_t label = 0; label < way; ++label) {
    const auto members = ds.videos_of_class(ep.classes[label]);
    require(members.size() >= shot + query, ErrorCode::kInsufficientData,
            "class " + std::to_string(ep.classes[label]) + " has too few videos for the episode");
    const auto chosen = rng.choose(members.size(), shot + query);
    for (std::size_t i = 0; i < shot + query; ++i) {
      const std::size_t vid = members[chosen[i]];
      if (i < shot) {
        ep.support.push_back(ds.videos[vid].feature);
        ep.support_labels.push_back(label);
        ep.support_videos.push_back(vid);
      } else {
        ep.queries.push_back(ds.videos[vid].feature);
        ep.query_labels.push_back(label);
        ep.query_videos.push_back(vid);
      }
    }
  }
  return ep;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  io::ByteWriter w;
  w.bytes("TA2N");
  w.u16(kDatasetFormatVersion);
  const VideoDims& d = ds.dims;
  for (std::size_t v : {ds.videos.size(), ds.num_classes, d.channels, d.frames, d.height, d.width, ds.raw_frames,
                        ds.classes.train.size(), ds.classes.val.size(), ds.classes.test.size()})
    w.u32(static_cast<std::uint32_t>(v));
  w.u64(ds.seed);
  w.f64(ds.config.duration_jitter);
  w.f64(ds.config.evolution_severity);
  w.f64(ds.config.spatial_jitter);
  w.f64(ds.config.background_noise);
  for (const auto& v : ds.videos) {
    w.u32(static_cast<std::uint32_t>(v.label));
    w.f64(v.truth.start);
    w.f64(v.truth.end);
    for (double c : v.truth.centers) w.f64(c);
    for (double x : v.feature.data()) w.f64(x);
  }
  for (const auto& v : ds.videos)
    for (double k : v.truth.evolution.knots) w.f64(k);
  io::write_file_atomic(path, w.str());
}

Dataset load_dataset(const std::filesystem::path& path) {
  const std::string raw = io::read_file(path);
  io::ByteReader r(raw);
  require(r.remaining() >= 4 && r.bytes(4) == "TA2N", ErrorCode::kBadMagic, path.string() + " is not a dataset file");
  const std::uint16_t version = r.u16();
  require(version == kDatasetFormatVersion, ErrorCode::kUnsupportedVersion,
          "dataset format version " + std::to_string(version));
  Dataset ds;
  const std::size_t n_videos = r.u32();
  ds.num_classes = r.u32();
  ds.dims.channels = r.u32();
  ds.dims.frames = r.u32();
  ds.dims.height = r.u32();
  ds.dims.width = r.u32();
  ds.raw_frames = r.u32();
  const std::size_t n_train = r.u32(), n_val = r.u32(), n_test = r.u32();
  require(n_train + n_val + n_test == ds.num_classes, ErrorCode::kInvalidArgument, "inconsistent class partition");
  require(ds.dims.channels > 0 && ds.dims.frames > 0 && ds.dims.height > 0 && ds.dims.width > 0,
          ErrorCode::kInvalidArgument, "zero dimension in dataset header");
  for (std::size_t c = 0; c < ds.num_classes; ++c)
    (c < n_train ? ds.classes.train : c < n_train + n_val ? ds.classes.val : ds.classes.test).push_back(c);
  ds.seed = r.u64();
  ds.config.duration_jitter = r.f64();
  ds.config.evolution_severity = r.f64();
  ds.config.spatial_jitter = r.f64();
  ds.config.background_noise = r.f64();
  const std::size_t T = ds.dims.frames;
  const std::size_t record = 4 + 8 * (2 + 2 * T + shape_numel(ds.dims.shape()));
  require(r.remaining() / record >= n_videos, ErrorCode::kTruncated, "dataset records cut short");
  ds.videos.resize(n_videos);
  for (auto& v : ds.videos) {
    v.label = r.u32();
    v.truth.start = r.f64();
    v.truth.end = r.f64();
    v.truth.centers.resize(2 * T);
    for (auto& c : v.truth.centers) c = r.f64();
    std::vector<double> data(shape_numel(ds.dims.shape()));
    for (auto& x : data) x = r.f64();
    v.feature = Tensor(ds.dims.shape(), std::move(data));
  }
  for (auto& v : ds.videos)
    for (auto& k : v.truth.evolution.knots) k = r.f64();
  require(r.remaining() == 0, ErrorCode::kIo, "trailing bytes after dataset");
  return ds;
}

}  // namespace ta2n
