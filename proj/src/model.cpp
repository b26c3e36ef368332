// SPDX-License-Identifier: Apache-2.0
#include "ta2n/model.hpp"

#include "ta2n/error.hpp"
#include "ta2n/init.hpp"
#include "ta2n/io.hpp"
#include "ta2n/metric.hpp"
#include "ta2n/ops.hpp"

namespace ta2n {

void ModelConfig::validate() const {
  require(channels > 0 && frames >= 2 && height > 0 && width > 0, ErrorCode::kConfig,
          "model dims must be positive with at least 2 frames");
  require(proj_dim > 0 && loc_hidden > 0 && sc_hidden > 0 && sc_pointwise > 0, ErrorCode::kConfig,
          "model widths must be positive");
  require(tc_key_gain > 0.0, ErrorCode::kConfig, "tc key gain must be positive");
  require(mask.gamma > 0.0 && mask.floor > 0.0, ErrorCode::kConfig, "mask gamma and floor must be positive");
  require(perturb.amplitude >= 0.0 && perturb.decay > 0.0 && perturb.decay <= 1.0, ErrorCode::kConfig,
          "perturbation amplitude must be >= 0 and decay in (0, 1]");
  require(!toggles.sc || (height >= 4 && width >= 4), ErrorCode::kConfig, "spatial coordination needs H, W >= 4");
}

namespace {

Rng module_rng(std::uint64_t seed, std::uint64_t stream) { return Rng(mix_seed(seed, stream)); }

}  // namespace

Ta2nModel::Ta2nModel(const ModelConfig& config)
    : config_(config), embed_w_("embed.weight", Tensor({1})), embed_b_("embed.bias", Tensor({config.channels})) {
  config_.validate();
  Rng erng = module_rng(config_.seed, 1);
  embed_w_.value = init::near_identity(config_.channels, config_.channels, 0.0, erng);
  embed_w_.zero_grad();
  embed_b_.zero_grad();
  if (config_.toggles.ttm) {
    Rng r = module_rng(config_.seed, 2);
    ttm_.emplace(config_.channels, config_.loc_hidden, r);
  }
  if (config_.toggles.tc) {
    Rng r = module_rng(config_.seed, 3);
    tc_.emplace(config_.channels, config_.proj_dim, r, config_.init_noise, config_.tc_key_gain);
  }
  if (config_.toggles.sc) {
    Rng r = module_rng(config_.seed, 4);
    OffsetPredictorConfig oc;
    oc.in_channels = 2 * config_.aligned_channels();
    oc.hidden = config_.sc_hidden;
    oc.pointwise = config_.sc_pointwise;
    oc.height = config_.height;
    oc.width = config_.width;
    sc_.emplace(oc, r);
  }
  for (Parameter* p : parameters()) p->zero_grad();
}

Var Ta2nModel::embed(Tape& t, Var f) const {
  return ops::linear_project(t, f, t.parameter(embed_w_), t.parameter(embed_b_), 0);
}

EpisodeResult Ta2nModel::forward(Tape& t, const Episode& ep, const ForwardOptions& options) const {
  require(ep.way >= 2, ErrorCode::kInvalidArgument, "an episode needs at least two classes");
  require(ep.support.size() == ep.way * ep.shot && ep.queries.size() == ep.query_labels.size(),
          ErrorCode::kShapeMismatch, "malformed episode");
  const Shape expected{config_.channels, config_.frames, config_.height, config_.width};
  EpisodeResult res;

  auto prepare = [&](const Tensor& x, std::vector<WarpParams>& warps) {
    require(x.shape() == expected, ErrorCode::kShapeMismatch,
            "video " + shape_string(x.shape()) + " does not match model " + shape_string(expected));
    Var f = embed(t, t.constant(x));
    WarpParams w;
    if (ttm_) f = ttm_->align(t, f, &w);
    warps.push_back(w);
    return f;
  };

  std::vector<Var> prototypes;
  for (std::size_t c = 0; c < ep.way; ++c) {
    std::vector<Var> group;
    for (std::size_t k = 0; k < ep.shot; ++k) group.push_back(prepare(ep.support[c * ep.shot + k], res.support_warps));
    prototypes.push_back(build_prototype(t, group, tc(), mix_seed(options.seed, c)));
  }
  std::vector<Var> queries;
  for (const auto& q : ep.queries) queries.push_back(prepare(q, res.query_warps));

  // Pair (q, c) sits at index q·way + c.
  const std::size_t nq = queries.size(), way = ep.way, pairs = nq * way;
  std::vector<Var> pair_support(pairs), pair_query(pairs);
  if (tc_) {
    std::vector<Var> proto_v, proto_k, query_v, query_q;
    for (Var p : prototypes) {
      proto_v.push_back(tc_->project(t, p));
      proto_k.push_back(tc_->keys(t, p));
    }
    for (Var q : queries) {
      query_v.push_back(tc_->project(t, q));
      query_q.push_back(tc_->queries(t, q));
    }
    for (std::size_t q = 0; q < nq; ++q)
      for (std::size_t c = 0; c < way; ++c) {
        const Var m = correlation_from(t, proto_k[c], query_q[q]);
        if (options.diagnostics) res.correlations.push_back(t.value(m));
        pair_support[q * way + c] = proto_v[c];
        pair_query[q * way + c] = ops::mix_time(t, m, query_v[q]);
      }
  } else {
    for (std::size_t q = 0; q < nq; ++q)
      for (std::size_t c = 0; c < way; ++c) {
        pair_support[q * way + c] = prototypes[c];
        pair_query[q * way + c] = queries[q];
      }
  }

  const std::size_t d = config_.aligned_channels(), len = config_.frames;
  std::vector<Var> pooled_support(pairs), pooled_query(pairs);
  if (sc_) {
    std::vector<Var> stacked;
    for (std::size_t i = 0; i < pairs; ++i) stacked.push_back(ops::concat_channels(t, pair_support[i], pair_query[i]));
    OffsetBatchStats stats;
    const Var offsets = sc_->forward(t, ops::stack(t, stacked), options.training, options.training ? &stats : nullptr);
    if (options.training) res.bn_stats = stats;
    std::vector<Tensor> displacements;
    if (options.training && config_.perturb_enabled)
      displacements = perturbation_displacements(len, options.epoch, config_.perturb);
    for (std::size_t i = 0; i < pairs; ++i) {
      const Var o = OffsetPredictor::pair_offsets(t, offsets, i);
      if (options.diagnostics) res.offsets.push_back(t.value(o));
      const SpatialOutput s = spatial_coordinate(t, pair_support[i], pair_query[i], o, config_.mask, displacements);
      pooled_support[i] = s.support;
      pooled_query[i] = s.query;
    }
  } else {
    auto pool = [&](Var f) { return ops::reshape(t, ops::global_avg_pool_spatial(t, f), {d, len}); };
    std::vector<Var> pooled_proto(way, Var{});
    for (std::size_t i = 0; i < pairs; ++i) {
      const std::size_t c = i % way;
      // Without TC the support side depends on the class alone.
      if (!tc_) {
        if (i < way) pooled_proto[c] = pool(pair_support[i]);
        pooled_support[i] = pooled_proto[c];
      } else {
        pooled_support[i] = pool(pair_support[i]);
      }
      pooled_query[i] = pool(pair_query[i]);
    }
  }

  std::vector<Var> logits;
  res.distances = Tensor({nq, way});
  for (std::size_t q = 0; q < nq; ++q) {
    std::vector<Var> dist;
    for (std::size_t c = 0; c < way; ++c) {
      const Var dv = frame_distance(t, pooled_query[q * way + c], pooled_support[q * way + c]);
      res.distances[q * way + c] = t.value(dv).item();
      dist.push_back(dv);
    }
    logits.push_back(logits_from_distances(t, dist));
    std::size_t best = 0;
    for (std::size_t c = 1; c < way; ++c)
      if (res.distances[q * way + c] < res.distances[q * way + best]) best = c;
    res.predictions.push_back(best);
    res.correct += best == ep.query_labels[q];
  }
  res.loss = cross_entropy_loss(t, logits, ep.query_labels);
  return res;
}

std::vector<Parameter*> Ta2nModel::parameters() {
  std::vector<Parameter*> out{&embed_w_, &embed_b_};
  if (ttm_) for (auto* p : ttm_->parameters()) out.push_back(p);
  if (tc_) for (auto* p : tc_->parameters()) out.push_back(p);
  if (sc_) for (auto* p : sc_->parameters()) out.push_back(p);
  return out;
}

std::vector<const Parameter*> Ta2nModel::parameters() const {
  std::vector<const Parameter*> out;
  for (auto* p : const_cast<Ta2nModel*>(this)->parameters()) out.push_back(p);
  return out;
}

namespace {

constexpr std::string_view kCheckpointMagic = "TA2C";

void write_tensor(io::ByteWriter& w, const Tensor& t) {
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
  for (double v : t.data()) w.f64(v);
}

Tensor read_tensor(io::ByteReader& r) {
  const std::size_t rank = r.u32();
  require(rank >= 1 && rank <= 8, ErrorCode::kTruncated, "implausible tensor rank in checkpoint");
  Shape shape(rank);
  for (auto& d : shape) d = r.u32();
  const std::size_t n = shape_numel(shape);
  require(r.remaining() / 8 >= n, ErrorCode::kTruncated, "checkpoint tensor cut short");
  std::vector<double> data(n);
  for (auto& v : data) v = r.f64();
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace

void save_checkpoint(const Ta2nModel& model, const std::filesystem::path& path) {
  const ModelConfig& c = model.config();
  io::ByteWriter w;
  w.bytes(kCheckpointMagic);
  w.u16(kCheckpointFormatVersion);
  for (std::size_t v : {c.channels, c.frames, c.height, c.width, c.proj_dim, c.loc_hidden, c.sc_hidden,
                        c.sc_pointwise, c.perturb.interval})
    w.u32(static_cast<std::uint32_t>(v));
  w.u32((c.toggles.ttm ? 1u : 0u) | (c.toggles.tc ? 2u : 0u) | (c.toggles.sc ? 4u : 0u) |
        (c.perturb_enabled ? 8u : 0u));
  for (double v : {c.init_noise, c.tc_key_gain, c.mask.gamma, c.mask.floor, c.perturb.amplitude, c.perturb.decay}) w.f64(v);
  w.u64(c.seed);
  const auto params = model.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const Parameter* p : params) {
    w.u32(static_cast<std::uint32_t>(p->name.size()));
    w.bytes(p->name);
    write_tensor(w, p->value);
  }
  if (const OffsetPredictor* sc = model.sc())
    for (const auto& s : sc->running) {
      write_tensor(w, s.mean);
      write_tensor(w, s.variance);
    }
  io::write_file_atomic(path, w.str());
}

Ta2nModel load_checkpoint(const std::filesystem::path& path) {
  const std::string raw = io::read_file(path);
  io::ByteReader r(raw);
  require(r.remaining() >= 4 && r.bytes(4) == kCheckpointMagic, ErrorCode::kBadMagic,
          path.string() + " is not a checkpoint");
  const std::uint16_t version = r.u16();
  require(version == kCheckpointFormatVersion, ErrorCode::kUnsupportedVersion,
          "checkpoint format version " + std::to_string(version));
  ModelConfig c;
  for (std::size_t* v : {&c.channels, &c.frames, &c.height, &c.width, &c.proj_dim, &c.loc_hidden, &c.sc_hidden,
                         &c.sc_pointwise, &c.perturb.interval})
    *v = r.u32();
  const std::uint32_t flags = r.u32();
  c.toggles = {(flags & 1u) != 0, (flags & 2u) != 0, (flags & 4u) != 0};
  c.perturb_enabled = (flags & 8u) != 0;
  for (double* v : {&c.init_noise, &c.tc_key_gain, &c.mask.gamma, &c.mask.floor, &c.perturb.amplitude, &c.perturb.decay}) *v = r.f64();
  c.seed = r.u64();
  Ta2nModel model(c);
  auto params = model.parameters();
  const std::size_t count = r.u32();
  require(count == params.size(), ErrorCode::kInvalidArgument, "checkpoint parameter count mismatch");
  for (Parameter* p : params) {
    const std::size_t len = r.u32();
    const std::string name(r.bytes(len));
    require(name == p->name, ErrorCode::kInvalidArgument, "checkpoint has '" + name + "' where '" + p->name + "' belongs");
    Tensor v = read_tensor(r);
    require(v.shape() == p->value.shape(), ErrorCode::kShapeMismatch, "checkpoint shape mismatch for " + name);
    p->value = std::move(v);
  }
  if (OffsetPredictor* sc = model.sc())
    for (auto& s : sc->running) {
      s.mean = read_tensor(r);
      s.variance = read_tensor(r);
    }
  require(r.remaining() == 0, ErrorCode::kIo, "trailing bytes after checkpoint");
  return model;
}

}  // namespace ta2n
