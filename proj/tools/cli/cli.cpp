// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <optional>

#include "config.hpp"
#include "ta2n/engine.hpp"
#include "ta2n/gradcheck.hpp"
#include "ta2n/io.hpp"
#include "ta2n/metric.hpp"
#include "ta2n/misalign.hpp"
#include "ta2n/ops.hpp"

namespace ta2n::cli {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNumerical:
      return kExitNumerical;
    case ErrorCode::kIo:
    case ErrorCode::kBadMagic:
    case ErrorCode::kUnsupportedVersion:
    case ErrorCode::kTruncated:
      return kExitIo;
    default:
      return kExitUsage;
  }
}

namespace {

constexpr const char* kToolVersion = "1.0.0";

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string seed_source = "default";  // filled by resolve()
};

void add_common(CLI::App* sub, Common& c, bool with_output) {
  sub->add_option("-c,--config", c.config_path, "YAML config (nested or dotted keys)");
  sub->add_option("--set", c.overrides, "Override a config key, key=value (repeatable)");
  sub->add_option("--seed", c.seed, "Global seed (default: config, then $TA2N_SEED, then 0)");
  if (with_output) sub->add_option("-o,--out", c.out_dir, "Existing output directory")->required();
}

RunConfig resolve(Common& c) {
  RunConfig cfg;
  std::string& seed_source = c.seed_source;
  seed_source = "default";
  if (const char* env = std::getenv("TA2N_SEED")) {
    set_config_value(cfg, "seed", env);
    seed_source = "env";
  }
  if (!c.config_path.empty()) {
    const std::string before = get_config_value(cfg, "seed");
    apply_yaml(cfg, io::read_file(c.config_path));
    if (get_config_value(cfg, "seed") != before) seed_source = "config";
  }
  for (const auto& o : c.overrides) {
    apply_override(cfg, o);
    if (o.rfind("seed=", 0) == 0) seed_source = "override";
  }
  if (c.seed) {
    cfg.seed = *c.seed;
    seed_source = "flag";
  }
  return finalized(cfg);
}

fs::path output_dir(const Common& c) {
  const fs::path dir(c.out_dir);
  require(fs::is_directory(dir), ErrorCode::kIo, "output directory '" + c.out_dir + "' does not exist");
  return dir;
}

Json config_json(const RunConfig& cfg) {
  Json j = Json::object();
  for (const auto& e : resolved_entries(cfg)) {
    switch (e.kind) {
      case ValueKind::kUnsigned:
        j[e.key] = std::stoull(e.value);
        break;
      case ValueKind::kReal:
        j[e.key] = std::stod(e.value);
        break;
      case ValueKind::kBool:
        j[e.key] = e.value == "true";
        break;
      case ValueKind::kText:
        j[e.key] = e.value;
        break;
    }
  }
  return j;
}

void write_manifest(const fs::path& dir, const std::string& command, const std::vector<std::string>& args,
                    const Common& common, const RunConfig& cfg, Json inputs, const std::vector<std::string>& outputs, Json extra = {}) {
  Json m;
  m["tool"] = "ta2n";
  m["version"] = kToolVersion;
  m["command"] = command;
  m["argv"] = args;
  m["seed"] = cfg.seed;
  m["seed_source"] = common.seed_source;
  m["config"] = config_json(cfg);
  m["inputs"] = std::move(inputs);
  m["outputs"] = outputs;
  if (!extra.is_null()) m["details"] = std::move(extra);
  io::write_file_atomic(dir / "manifest.json", m.dump(2) + "\n");
}

// Model dims always come from the data the model will see.
ModelConfig model_for(const RunConfig& cfg, const Dataset& ds) {
  ModelConfig mc = cfg.model;
  mc.channels = ds.dims.channels;
  mc.frames = ds.dims.frames;
  mc.height = ds.dims.height;
  mc.width = ds.dims.width;
  return mc;
}

void check_compatible(const Ta2nModel& m, const Dataset& ds, const std::string& what) {
  const auto& c = m.config();
  require(c.channels == ds.dims.channels && c.frames == ds.dims.frames && c.height == ds.dims.height &&
              c.width == ds.dims.width,
          ErrorCode::kShapeMismatch,
          what + " expects " + std::to_string(c.channels) + "×" + std::to_string(c.frames) + "×" +
              std::to_string(c.height) + "×" + std::to_string(c.width) + " features, dataset has " +
              shape_string(ds.dims.shape()));
}

// ---- gradcheck ---------------------------------------------------------------

Tensor random_tensor(const Shape& shape, Rng& rng, double scale = 1.0) {
  Tensor t(shape);
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

// sum(w ⊙ out) with fixed weights, so every output element matters.
Var probe(Tape& t, Var out, std::uint64_t seed) {
  Rng rng(seed);
  return ops::sum(t, ops::mul(t, out, t.constant(random_tensor(t.value(out).shape(), rng))));
}

struct GradcheckCase {
  std::string module;
  GradcheckReport report;
};

std::vector<std::string> gradcheck_modules() { return {"embed", "ttm", "tc", "sc", "metric", "all"}; }

GradcheckCase gradcheck_module(const std::string& module, std::uint64_t seed) {
  ModelConfig mc;
  mc.channels = 3;
  mc.frames = 4;
  mc.height = mc.width = 5;
  mc.proj_dim = 3;
  mc.loc_hidden = 4;
  mc.sc_hidden = 2;
  mc.sc_pointwise = 3;
  mc.seed = seed;
  Ta2nModel model(mc);
  Rng rng(mix_seed(seed, 99));
  Parameter a("input.support", random_tensor({3, 4, 5, 5}, rng));
  Parameter b("input.query", random_tensor({3, 4, 5, 5}, rng));
  std::vector<Parameter*> params;
  auto take = [&](std::vector<Parameter*> ps) { params.insert(params.end(), ps.begin(), ps.end()); };
  LossFn fn;
  auto model_params = [&](const std::string& prefix) {
    std::vector<Parameter*> out;
    for (Parameter* p : model.parameters())
      if (p->name.rfind(prefix, 0) == 0) out.push_back(p);
    return out;
  };

  GeneratorOptions g;
  g.num_classes = 12;
  g.videos_per_class = 4;
  g.dims = {3, 4, 5, 5};
  g.config = {0.3, 0.5, 1.0, 1.0};
  g.seed = seed;
  const Dataset ds = generate_dataset(g);
  const Episode ep = sample_episode(ds, Split::kTrain, 2, 2, 1, seed);

  if (module == "embed") {
    take(model_params("embed."));
    take({&a});
    fn = [&](Tape& t) { return probe(t, model.embed(t, t.parameter(a)), seed); };
  } else if (module == "ttm") {
    take(model_params("ttm."));
    take({&a});
    fn = [&](Tape& t) { return probe(t, model.ttm()->align(t, t.parameter(a)), seed); };
  } else if (module == "tc") {
    take(model_params("tc."));
    take({&a, &b});
    fn = [&](Tape& t) {
      const auto o = model.tc()->coordinate(t, t.parameter(a), t.parameter(b));
      return ops::add(t, probe(t, o.support, seed), probe(t, o.query, seed + 1));
    };
  } else if (module == "sc") {
    take(model_params("sc."));
    take({&a, &b});
    fn = [&](Tape& t) {
      const Var s = t.parameter(a), q = t.parameter(b);
      const Var pair = ops::reshape(t, ops::concat_channels(t, s, q), {1, 6, 4, 5, 5});
      // Input width is 2·d with d = proj_dim = channels here.
      const Var o = OffsetPredictor::pair_offsets(t, model.sc()->forward(t, pair, true, nullptr), 0);
      const auto out = spatial_coordinate(t, s, q, o, mc.mask);
      return ops::add(t, probe(t, out.support, seed), probe(t, out.query, seed + 1));
    };
  } else if (module == "metric") {
    take({&a, &b});
    fn = [&](Tape& t) {
      auto pooled = [&](Var f) { return ops::reshape(t, ops::global_avg_pool_spatial(t, f), {3, 4}); };
      const Var sa = pooled(t.parameter(a));
      const Var sb = pooled(t.parameter(b));
      const Var q = pooled(ops::add(t, t.parameter(a), ops::scale(t, t.parameter(b), 0.5)));
      const Var logits = logits_from_distances(t, {frame_distance(t, q, sa), frame_distance(t, q, sb)});
      return cross_entropy_loss(t, {logits}, {seed % 2});
    };
  } else if (module == "all") {
    take(model.parameters());
    fn = [&](Tape& t) {
      ForwardOptions fo;
      fo.training = true;
      fo.epoch = 1;
      fo.seed = seed;
      return model.forward(t, ep, fo).loss;
    };
  } else {
    fail(ErrorCode::kConfig, "unknown module '" + module + "'");
  }
  GradcheckOptions opt;
  opt.seed = seed;
  return {module, finite_diff_gradcheck(fn, params, opt)};
}

// ---- commands ------------------------------------------------------------------

struct Context {
  const std::vector<std::string>& args;
  std::ostream& out;
  std::ostream& err;
};

int cmd_synth(const Context& ctx, Common& common) {
  const RunConfig cfg = resolve(common);
  const fs::path dir = output_dir(common);
  const Dataset ds = generate_dataset(cfg.data);
  save_dataset(ds, dir / "dataset.ta2n");
  write_manifest(dir, "synth", ctx.args, common, cfg, Json::object(), {"dataset.ta2n"});
  ctx.out << "dataset.ta2n: " << ds.videos.size() << " videos, " << ds.num_classes << " classes ("
          << ds.classes.train.size() << " train / " << ds.classes.val.size() << " val / " << ds.classes.test.size()
          << " test)\n";
  return kExitOk;
}

int cmd_train(const Context& ctx, Common& common, const std::string& data, bool resume) {
  require(!resume, ErrorCode::kConfig, "--resume is not supported: training always starts from initialization");
  const RunConfig cfg = resolve(common);
  const fs::path dir = output_dir(common);
  const Dataset ds = load_dataset(data);
  Ta2nModel model(model_for(cfg, ds));
  const auto log = train(model, ds, cfg.train, [&](const EpochLog& e) {
    ctx.err << "epoch " << e.epoch + 1 << "/" << cfg.train.epochs << "  loss " << e.loss << "  acc "
            << e.train_accuracy << "  lr " << e.learning_rate << "\n";
  });
  save_checkpoint(model, dir / "checkpoint.ta2c");
  io::write_file_atomic(dir / "metrics.csv", metrics_csv(log));
  write_manifest(dir, "train", ctx.args, common, cfg, {{"data", data}}, {"checkpoint.ta2c", "metrics.csv"});
  ctx.out << "checkpoint.ta2c, metrics.csv: " << log.size() << " epochs\n";
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint, data, baseline;
  std::size_t workers = 1;
  std::size_t export_alignment = 0;
  std::optional<std::size_t> way, shot, query, episodes;
};

int cmd_eval(const Context& ctx, Common& common, const EvalArgs& a) {
  RunConfig cfg = resolve(common);
  if (a.way) cfg.eval.way = *a.way;
  if (a.shot) cfg.eval.shot = *a.shot;
  if (a.query) cfg.eval.query = *a.query;
  if (a.episodes) cfg.eval.episodes = *a.episodes;
  const fs::path dir = output_dir(common);
  const Ta2nModel model = load_checkpoint(a.checkpoint);
  const Dataset ds = load_dataset(a.data);
  check_compatible(model, ds, "checkpoint");
  EvalConfig ec = cfg.eval;
  ec.workers = a.workers;
  const EvalReport report = evaluate(model, ds, ec);
  std::vector<std::pair<std::string, EvalReport>> rows{{"model", report}};
  std::vector<std::string> outputs{"eval.csv"};
  Json inputs{{"checkpoint", a.checkpoint}, {"data", a.data}};
  if (!a.baseline.empty()) {
    const Ta2nModel base = load_checkpoint(a.baseline);
    check_compatible(base, ds, "baseline checkpoint");
    const EvalReport base_report = evaluate(base, ds, ec);
    rows.emplace_back("baseline", base_report);
    io::write_file_atomic(dir / "class_delta.csv", class_delta_csv(per_class_deltas(base_report, report)));
    outputs.push_back("class_delta.csv");
    inputs["baseline"] = a.baseline;
  }
  if (a.export_alignment > 0) {
    std::vector<std::pair<std::size_t, EpisodeResult>> episodes;
    for (std::size_t i = 0; i < std::min(a.export_alignment, ec.episodes); ++i) {
      Tape tape(false);
      episodes.emplace_back(i, replay_eval_episode(model, ds, ec, i, tape, true).result);
    }
    io::write_file_atomic(dir / "alignment.csv", alignment_csv(episodes));
    outputs.push_back("alignment.csv");
  }
  io::write_file_atomic(dir / "eval.csv", eval_csv(rows));
  write_manifest(dir, "eval", ctx.args, common, cfg, inputs, outputs, {{"workers", a.workers}});
  for (const auto& [name, r] : rows)
    ctx.out << name << ": accuracy " << r.accuracy << " ± " << r.ci << " over " << r.episodes << " episodes\n";
  return kExitOk;
}

int cmd_ablate(const Context& ctx, Common& common, const std::string& data, std::size_t workers) {
  const RunConfig cfg = resolve(common);
  const fs::path dir = output_dir(common);
  const Dataset ds = load_dataset(data);
  EvalConfig ec = cfg.eval;
  ec.workers = workers;
  const auto rows = ablation_run(ds, model_for(cfg, ds), cfg.train, ec, [&](const AblationRow& r) {
    ctx.err << r.variant.name << ": " << r.report.accuracy << " ± " << r.report.ci << "\n";
  });
  io::write_file_atomic(dir / "ablation.csv", ablation_csv(rows));
  write_manifest(dir, "ablate", ctx.args, common, cfg, {{"data", data}}, {"ablation.csv"}, {{"workers", workers}});
  ctx.out << "ablation.csv: " << rows.size() << " variants\n";
  return kExitOk;
}

struct AnalyzeArgs {
  std::string input, data, metric, mode = "pair-mean";
  bool distances = false;
};

int cmd_analyze(const Context& ctx, Common& common, const AnalyzeArgs& a) {
  require(a.input.empty() != a.data.empty(), ErrorCode::kConfig, "analyze needs exactly one of --input or --data");
  const RunConfig cfg = resolve(common);
  const fs::path dir = output_dir(common);
  const AemMode mode = parse_aem_mode(a.mode);
  std::vector<ClassProbSequence> seqs;
  if (!a.input.empty()) {
    seqs = parse_sequences_csv(io::read_file(a.input));
  } else {
    const Dataset ds = load_dataset(a.data);
    seqs = a.metric == "adm" ? presence_sequences(ds) : evolution_sequences(ds);
  }
  std::vector<std::string> outputs;
  Json details;
  if (a.metric == "adm") {
    const StartHistogram h = start_time_histogram(seqs);
    io::write_file_atomic(dir / "adm.csv", histogram_csv(h));
    outputs.push_back("adm.csv");
    details = {{"sequences", seqs.size()}, {"onsets", h.total()}, {"none", h.none}};
    ctx.out << "adm.csv: " << h.total() << " onsets, " << h.none << " without onset\n";
  } else {
    const AemReport r = aem_score(seqs, mode);
    if (r.excluded > 0) ctx.err << "warning: " << r.excluded << " zero-norm sequence(s) excluded from AEM\n";
    io::write_file_atomic(dir / "aem.csv", aem_csv(r));
    outputs.push_back("aem.csv");
    details = {{"sequences", seqs.size()}, {"excluded", r.excluded}, {"mode", to_string(mode)}};
    ctx.out << "aem.csv: AEM " << r.score << " (" << to_string(mode) << ", " << r.pairs << " pairs)\n";
  }
  if (a.distances) {
    io::write_file_atomic(dir / "distances.csv", distance_matrix_csv(seqs));
    outputs.push_back("distances.csv");
  }
  Json inputs = a.input.empty() ? Json{{"data", a.data}} : Json{{"input", a.input}};
  details["metric"] = a.metric;
  write_manifest(dir, "analyze", ctx.args, common, cfg, inputs, outputs, details);
  return kExitOk;
}

int cmd_gradcheck(const Context& ctx, Common& common, const std::string& module) {
  const RunConfig cfg = resolve(common);
  std::vector<std::string> modules = module == "all-modules" ? gradcheck_modules() : std::vector<std::string>{module};
  bool ok = true;
  std::ostringstream csv;
  csv << "module,samples,max_rel_error,rejected,unresolved,passed\n";
  for (const auto& m : modules) {
    const GradcheckCase c = gradcheck_module(m, cfg.seed);
    ok = ok && c.report.passed;
    ctx.out << (c.report.passed ? "PASS " : "FAIL ") << m << ": " << c.report.entries.size()
            << " coordinates, max rel. error " << c.report.max_error << ", " << c.report.rejected
            << " kink rejections, " << c.report.unresolved << " unresolved\n";
    csv << m << ',' << c.report.entries.size() << ',' << c.report.max_error << ',' << c.report.rejected << ','
        << c.report.unresolved << ',' << c.report.passed << '\n';
  }
  if (!common.out_dir.empty()) {
    const fs::path dir = output_dir(common);
    io::write_file_atomic(dir / "gradcheck.csv", csv.str());
    write_manifest(dir, "gradcheck", ctx.args, common, cfg, Json::object(), {"gradcheck.csv"}, {{"module", module}});
  }
  return ok ? kExitOk : kExitNumerical;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"TA2N few-shot action alignment: synthetic data, training, evaluation and analysis"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  Common synth_c, train_c, eval_c, ablate_c, analyze_c, grad_c;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic misaligned-action dataset");
  add_common(synth, synth_c, true);

  std::string train_data;
  bool resume = false;
  auto* train_cmd = app.add_subcommand("train", "Episodic training; writes a checkpoint and metrics CSV");
  add_common(train_cmd, train_c, true);
  train_cmd->add_option("-d,--data", train_data, "Dataset file")->required();
  train_cmd->add_flag("--resume", resume, "Not supported; rejected");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint over seeded test episodes");
  add_common(eval_cmd, eval_c, true);
  eval_cmd->add_option("-m,--checkpoint", ea.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("-d,--data", ea.data, "Dataset file")->required();
  eval_cmd->add_option("-b,--baseline", ea.baseline, "Baseline checkpoint for per-class deltas");
  eval_cmd->add_option("-w,--workers", ea.workers, "Evaluation threads (output does not depend on it)")
      ->check(CLI::PositiveNumber);
  eval_cmd->add_option("-N,--way", ea.way, "Classes per episode");
  eval_cmd->add_option("-K,--shot", ea.shot, "Support videos per class");
  eval_cmd->add_option("-Q,--query", ea.query, "Query videos per class");
  eval_cmd->add_option("-e,--episodes", ea.episodes, "Episodes");
  eval_cmd->add_option("--export-alignment", ea.export_alignment,
                       "Write correlation matrices and offsets of the first n episodes");

  std::string ablate_data;
  std::size_t ablate_workers = 1;
  auto* ablate = app.add_subcommand("ablate", "Train and evaluate the seven module combinations");
  add_common(ablate, ablate_c, true);
  ablate->add_option("-d,--data", ablate_data, "Dataset file")->required();
  ablate->add_option("-w,--workers", ablate_workers, "Evaluation threads")->check(CLI::PositiveNumber);

  AnalyzeArgs aa;
  auto* analyze = app.add_subcommand("analyze", "Action duration (adm) or evolution (aem) misalignment report");
  add_common(analyze, analyze_c, true);
  analyze->add_option("-i,--input", aa.input, "Probability CSV: video_id,class_id,p_1..p_T");
  analyze->add_option("-d,--data", aa.data, "Dataset file (ground-truth sequences)");
  analyze->add_option("--metric", aa.metric, "adm or aem")->required()->check(CLI::IsMember({"adm", "aem"}));
  analyze->add_option("--mode", aa.mode, "AEM normalization")->check(CLI::IsMember({"pair-mean", "paper-literal"}));
  analyze->add_flag("--distances", aa.distances, "Also export the pairwise 1 - cos matrix");

  std::string grad_module;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of a module's gradients");
  add_common(grad, grad_c, false);
  grad->add_option("-o,--out", grad_c.out_dir, "Optional output directory for gradcheck.csv");
  std::vector<std::string> choices = gradcheck_modules();
  choices.push_back("all-modules");
  grad->add_option("module", grad_module, "embed, ttm, tc, sc, metric, all (full episode) or all-modules")
      ->required()
      ->check(CLI::IsMember(choices));

  std::vector<std::string> rest(args.begin() + (args.empty() ? 0 : 1), args.end());
  std::reverse(rest.begin(), rest.end());
  try {
    app.parse(rest);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  const Context ctx{args, out, err};
  try {
    if (*synth) return cmd_synth(ctx, synth_c);
    if (*train_cmd) return cmd_train(ctx, train_c, train_data, resume);
    if (*eval_cmd) return cmd_eval(ctx, eval_c, ea);
    if (*ablate) return cmd_ablate(ctx, ablate_c, ablate_data, ablate_workers);
    if (*analyze) return cmd_analyze(ctx, analyze_c, aa);
    if (*grad) return cmd_gradcheck(ctx, grad_c, grad_module);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitUsage;
}

}  // namespace ta2n::cli
