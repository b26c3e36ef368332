// SPDX-License-Identifier: Apache-2.0
#include "config.hpp"

#include <yaml-cpp/yaml.h>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>

#include "ta2n/error.hpp"

namespace ta2n::cli {
namespace {

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::uint64_t parse_unsigned(const std::string& key, const std::string& text) {
  std::uint64_t v = 0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  require(ec == std::errc{} && end == text.data() + text.size(), ErrorCode::kConfig,
          key + ": expected a non-negative integer, got '" + text + "'");
  return v;
}

double parse_real(const std::string& key, const std::string& text) {
  double v = 0.0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  require(ec == std::errc{} && end == text.data() + text.size() && std::isfinite(v), ErrorCode::kConfig,
          key + ": expected a finite number, got '" + text + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  fail(ErrorCode::kConfig, key + ": expected true or false, got '" + text + "'");
}

Split parse_split(const std::string& key, const std::string& text) {
  if (text == "train") return Split::kTrain;
  if (text == "val") return Split::kVal;
  if (text == "test") return Split::kTest;
  fail(ErrorCode::kConfig, key + ": expected train, val or test, got '" + text + "'");
}

const char* split_name(Split s) { return s == Split::kTrain ? "train" : s == Split::kVal ? "val" : "test"; }

struct Accessor {
  ValueKind kind;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class Get>
Accessor size_field(Get get) {
  return {ValueKind::kUnsigned,
          [get](RunConfig& c, const std::string& k, const std::string& v) {
            get(c) = static_cast<std::size_t>(parse_unsigned(k, v));
          },
          [get](const RunConfig& c) { return std::to_string(get(const_cast<RunConfig&>(c))); }};
}

template <class Get>
Accessor real_field(Get get) {
  return {ValueKind::kReal, [get](RunConfig& c, const std::string& k, const std::string& v) { get(c) = parse_real(k, v); },
          [get](const RunConfig& c) { return format_real(get(const_cast<RunConfig&>(c))); }};
}

template <class Get>
Accessor bool_field(Get get) {
  return {ValueKind::kBool, [get](RunConfig& c, const std::string& k, const std::string& v) { get(c) = parse_bool(k, v); },
          [get](const RunConfig& c) { return std::string(get(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

// Split sizes live in an optional triple; any non-zero entry switches to explicit sizes.
Accessor split_size(std::size_t index) {
  return {ValueKind::kUnsigned,
          [index](RunConfig& c, const std::string& k, const std::string& v) {
            auto sizes = c.data.split_sizes.value_or(std::array<std::size_t, 3>{0, 0, 0});
            sizes[index] = static_cast<std::size_t>(parse_unsigned(k, v));
            if (sizes == std::array<std::size_t, 3>{0, 0, 0})
              c.data.split_sizes.reset();
            else
              c.data.split_sizes = sizes;
          },
          [index](const RunConfig& c) {
            return std::to_string(c.data.split_sizes ? (*c.data.split_sizes)[index] : 0);
          }};
}

#define TA2N_FIELD(kind, expr) kind##_field([](RunConfig& c) -> auto& { return expr; })

const std::map<std::string, Accessor>& registry() {
  static const std::map<std::string, Accessor> r = {
      {"seed",
       {ValueKind::kUnsigned, [](RunConfig& c, const std::string& k, const std::string& v) { c.seed = parse_unsigned(k, v); },
        [](const RunConfig& c) { return std::to_string(c.seed); }}},
      {"data.num_classes", TA2N_FIELD(size, c.data.num_classes)},
      {"data.videos_per_class", TA2N_FIELD(size, c.data.videos_per_class)},
      {"data.channels", TA2N_FIELD(size, c.data.dims.channels)},
      {"data.frames", TA2N_FIELD(size, c.data.dims.frames)},
      {"data.height", TA2N_FIELD(size, c.data.dims.height)},
      {"data.width", TA2N_FIELD(size, c.data.dims.width)},
      {"data.raw_frames", TA2N_FIELD(size, c.data.raw_frames)},
      {"data.signature_frames", TA2N_FIELD(size, c.data.signature_frames)},
      {"data.actor_size", TA2N_FIELD(size, c.data.actor_size)},
      {"data.actor_spread", TA2N_FIELD(real, c.data.actor_spread)},
      {"data.similarity_ceiling", TA2N_FIELD(real, c.data.similarity_ceiling)},
      {"data.duration_jitter", TA2N_FIELD(real, c.data.config.duration_jitter)},
      {"data.evolution_severity", TA2N_FIELD(real, c.data.config.evolution_severity)},
      {"data.spatial_jitter", TA2N_FIELD(real, c.data.config.spatial_jitter)},
      {"data.background_noise", TA2N_FIELD(real, c.data.config.background_noise)},
      {"data.split_train", split_size(0)},
      {"data.split_val", split_size(1)},
      {"data.split_test", split_size(2)},
      {"model.ttm", TA2N_FIELD(bool, c.model.toggles.ttm)},
      {"model.tc", TA2N_FIELD(bool, c.model.toggles.tc)},
      {"model.sc", TA2N_FIELD(bool, c.model.toggles.sc)},
      {"model.proj_dim", TA2N_FIELD(size, c.model.proj_dim)},
      {"model.loc_hidden", TA2N_FIELD(size, c.model.loc_hidden)},
      {"model.sc_hidden", TA2N_FIELD(size, c.model.sc_hidden)},
      {"model.sc_pointwise", TA2N_FIELD(size, c.model.sc_pointwise)},
      {"model.init_noise", TA2N_FIELD(real, c.model.init_noise)},
      {"model.tc_key_gain", TA2N_FIELD(real, c.model.tc_key_gain)},
      {"model.mask_gamma", TA2N_FIELD(real, c.model.mask.gamma)},
      {"model.mask_floor", TA2N_FIELD(real, c.model.mask.floor)},
      {"model.perturb", TA2N_FIELD(bool, c.model.perturb_enabled)},
      {"model.perturb_amplitude", TA2N_FIELD(real, c.model.perturb.amplitude)},
      {"model.perturb_decay", TA2N_FIELD(real, c.model.perturb.decay)},
      {"model.perturb_interval", TA2N_FIELD(size, c.model.perturb.interval)},
      {"train.learning_rate", TA2N_FIELD(real, c.train.learning_rate)},
      {"train.momentum", TA2N_FIELD(real, c.train.momentum)},
      {"train.decay_factor", TA2N_FIELD(real, c.train.decay_factor)},
      {"train.decay_interval", TA2N_FIELD(size, c.train.decay_interval)},
      {"train.epochs", TA2N_FIELD(size, c.train.epochs)},
      {"train.episodes_per_epoch", TA2N_FIELD(size, c.train.episodes_per_epoch)},
      {"train.way", TA2N_FIELD(size, c.train.way)},
      {"train.shot", TA2N_FIELD(size, c.train.shot)},
      {"train.query", TA2N_FIELD(size, c.train.query)},
      {"train.bn_momentum", TA2N_FIELD(real, c.train.bn_momentum)},
      {"eval.episodes", TA2N_FIELD(size, c.eval.episodes)},
      {"eval.way", TA2N_FIELD(size, c.eval.way)},
      {"eval.shot", TA2N_FIELD(size, c.eval.shot)},
      {"eval.query", TA2N_FIELD(size, c.eval.query)},
      {"eval.split",
       {ValueKind::kText, [](RunConfig& c, const std::string& k, const std::string& v) { c.eval.split = parse_split(k, v); },
        [](const RunConfig& c) { return std::string(split_name(c.eval.split)); }}},
  };
  return r;
}

#undef TA2N_FIELD

const Accessor& accessor(const std::string& key) {
  const auto it = registry().find(key);
  require(it != registry().end(), ErrorCode::kConfig, "unknown config key '" + key + "'");
  return it->second;
}

void flatten(RunConfig& config, const YAML::Node& node, const std::string& prefix) {
  if (node.IsNull()) return;
  require(node.IsMap(), ErrorCode::kConfig,
          prefix.empty() ? "config file must be a mapping" : "config key '" + prefix + "' must be a scalar or mapping");
  for (const auto& kv : node) {
    const std::string key = (prefix.empty() ? "" : prefix + ".") + kv.first.as<std::string>();
    if (kv.second.IsMap())
      flatten(config, kv.second, key);
    else if (kv.second.IsScalar())
      set_config_value(config, key, kv.second.Scalar());
    else
      fail(ErrorCode::kConfig, "config key '" + key + "' must be a scalar or mapping");
  }
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, _] : registry()) k.push_back(name);
    return k;
  }();
  return keys;
}

void set_config_value(RunConfig& config, const std::string& key, const std::string& value) {
  accessor(key).set(config, key, value);
}

std::string get_config_value(const RunConfig& config, const std::string& key) { return accessor(key).get(config); }

std::vector<ConfigEntry> resolved_entries(const RunConfig& config) {
  std::vector<ConfigEntry> out;
  for (const auto& [key, acc] : registry()) out.push_back({key, acc.kind, acc.get(config)});
  return out;
}

void apply_yaml(RunConfig& config, const std::string& yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    fail(ErrorCode::kConfig, std::string("config file is not valid YAML: ") + e.what());
  }
  flatten(config, root, "");
}

void apply_override(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  require(eq != std::string::npos && eq > 0, ErrorCode::kConfig, "override '" + assignment + "' is not key=value");
  set_config_value(config, assignment.substr(0, eq), assignment.substr(eq + 1));
}

RunConfig finalized(RunConfig c) {
  c.data.seed = c.seed;
  c.model.seed = c.seed;
  c.train.seed = c.seed;
  c.eval.seed = c.seed;
  c.model.channels = c.data.dims.channels;
  c.model.frames = c.data.dims.frames;
  c.model.height = c.data.dims.height;
  c.model.width = c.data.dims.width;
  return c;
}

}  // namespace ta2n::cli
