// SPDX-License-Identifier: Apache-2.0
#include "ta2n/engine.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>
#include <thread>

#include "ta2n/error.hpp"

namespace ta2n {

SgdMomentum::SgdMomentum(std::vector<Parameter*> params, double momentum)
    : params_(std::move(params)), momentum_(momentum) {
  for (const Parameter* p : params_) velocity_.push_back(Tensor::zeros_like(p->value));
}

void SgdMomentum::step(double lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    Tensor& v = velocity_[i];
    for (std::size_t k = 0; k < v.size(); ++k) {
      v[k] = momentum_ * v[k] - lr * p.grad[k];
      p.value[k] += v[k];
    }
  }
}

void SgdMomentum::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

void TrainConfig::validate() const {
  require(learning_rate >= 0.0 && std::isfinite(learning_rate), ErrorCode::kConfig, "learning rate must be >= 0");
  require(momentum >= 0.0 && momentum < 1.0, ErrorCode::kConfig, "momentum must lie in [0, 1)");
  require(decay_factor > 0.0 && decay_factor <= 1.0, ErrorCode::kConfig, "decay factor must lie in (0, 1]");
  require(decay_interval > 0, ErrorCode::kConfig, "decay interval must be positive");
  require(way >= 2 && shot >= 1 && query >= 1, ErrorCode::kConfig, "episode sizes: way >= 2, shot and query >= 1");
  require(bn_momentum > 0.0 && bn_momentum <= 1.0, ErrorCode::kConfig, "bn momentum must lie in (0, 1]");
}

double TrainConfig::learning_rate_at(std::size_t epoch) const {
  return learning_rate * std::pow(decay_factor, static_cast<double>(epoch / decay_interval));
}

std::vector<EpochLog> train(Ta2nModel& model, const Dataset& dataset, const TrainConfig& config,
                            const EpochCallback& on_epoch) {
  config.validate();
  require(!dataset.classes.train.empty(), ErrorCode::kInsufficientData, "training split is empty");
  auto params = model.parameters();
  SgdMomentum opt(params, config.momentum);
  std::vector<EpochLog> log;
  std::size_t done = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = config.learning_rate_at(epoch);
    double loss_sum = 0.0;
    std::size_t correct = 0, seen = 0;
    for (std::size_t e = 0; e < config.episodes_per_epoch; ++e, ++done) {
      const std::uint64_t seed = mix_seed(config.seed, done);
      const Episode ep = sample_episode(dataset, Split::kTrain, config.way, config.shot, config.query, seed);
      Tape tape;
      ForwardOptions fo;
      fo.training = true;
      fo.epoch = epoch;
      fo.seed = seed;
      const EpisodeResult r = model.forward(tape, ep, fo);
      const double loss = tape.value(r.loss).item();
      require(std::isfinite(loss), ErrorCode::kNumerical,
              "training diverged: non-finite loss at epoch " + std::to_string(epoch) + ", episode " +
                  std::to_string(e) + " (learning rate " + std::to_string(lr) + ")");
      tape.backward(r.loss);
      opt.zero_grad();
      accumulate_gradients(tape, params);
      opt.step(lr);
      if (r.bn_stats) model.sc()->update_running(*r.bn_stats, config.bn_momentum);
      loss_sum += loss;
      correct += r.correct;
      seen += ep.queries.size();
    }
    EpochLog entry{epoch, done, seen ? loss_sum / static_cast<double>(seen) : 0.0,
                   seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0, lr};
    for (const Parameter* p : params)
      require(p->value.all_finite(), ErrorCode::kNumerical, "training diverged: parameter " + p->name + " non-finite");
    log.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  return log;
}

namespace {

struct EpisodeOutcome {
  std::size_t correct = 0, total = 0;
  std::vector<std::pair<std::size_t, bool>> hits;  // global class, right?
};

EpisodeOutcome run_eval_episode(const Ta2nModel& model, const Dataset& dataset, const EvalConfig& config,
                                std::size_t index) {
  Tape tape(false);
  const EvalEpisode e = replay_eval_episode(model, dataset, config, index, tape, false);
  require(e.result.distances.all_finite(), ErrorCode::kNumerical, "non-finite distance during evaluation");
  EpisodeOutcome out{e.result.correct, e.episode.queries.size(), {}};
  for (std::size_t q = 0; q < e.episode.queries.size(); ++q)
    out.hits.emplace_back(e.episode.classes[e.episode.query_labels[q]],
                          e.result.predictions[q] == e.episode.query_labels[q]);
  return out;
}

}  // namespace

EvalEpisode replay_eval_episode(const Ta2nModel& model, const Dataset& dataset, const EvalConfig& config,
                                std::size_t index, Tape& tape, bool diagnostics) {
  const std::uint64_t seed = mix_seed(config.seed, index);
  EvalEpisode e{sample_episode(dataset, config.split, config.way, config.shot, config.query, seed), {}};
  ForwardOptions fo;
  fo.seed = seed;
  fo.diagnostics = diagnostics;
  e.result = model.forward(tape, e.episode, fo);
  return e;
}

EvalReport evaluate(const Ta2nModel& model, const Dataset& dataset, const EvalConfig& config) {
  require(config.episodes >= 1, ErrorCode::kConfig, "evaluation needs at least one episode");
  require(config.workers >= 1, ErrorCode::kConfig, "workers must be at least 1");
  // Fail early, on the calling thread, when the split cannot host an episode.
  sample_episode(dataset, config.split, config.way, config.shot, config.query, mix_seed(config.seed, 0));

  std::vector<EpisodeOutcome> outcomes(config.episodes);
  const std::size_t workers = std::min(config.workers, config.episodes);
  if (workers == 1) {
    for (std::size_t i = 0; i < config.episodes; ++i) outcomes[i] = run_eval_episode(model, dataset, config, i);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < config.episodes; i += workers)
            outcomes[i] = run_eval_episode(model, dataset, config, i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  EvalReport rep;
  rep.episodes = config.episodes;
  for (const auto& o : outcomes) {
    rep.episode_accuracy.push_back(static_cast<double>(o.correct) / static_cast<double>(o.total));
    for (auto [cls, hit] : o.hits) {
      rep.per_class[cls].total += 1;
      rep.per_class[cls].correct += hit ? 1 : 0;
    }
  }
  const double n = static_cast<double>(rep.episodes);
  for (double a : rep.episode_accuracy) rep.accuracy += a / n;
  if (rep.episodes > 1) {
    double ss = 0.0;
    for (double a : rep.episode_accuracy) ss += (a - rep.accuracy) * (a - rep.accuracy);
    rep.ci = 1.96 * std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
    rep.ci_defined = true;
  }
  return rep;
}

std::vector<ClassDelta> per_class_deltas(const EvalReport& baseline, const EvalReport& model) {
  std::vector<ClassDelta> out;
  for (const auto& [cls, tally] : model.per_class) {
    const auto it = baseline.per_class.find(cls);
    const double base = it == baseline.per_class.end() ? 0.0 : it->second.accuracy();
    out.push_back({cls, base, tally.accuracy(), tally.accuracy() - base});
  }
  return out;
}

std::vector<AblationVariant> ablation_variants() {
  return {{"baseline", {false, false, false}}, {"ttm", {true, false, false}},  {"ttm+tc", {true, true, false}},
          {"ttm+sc", {true, false, true}},     {"ttm+tc+sc", {true, true, true}}, {"tc", {false, true, false}},
          {"tc+sc", {false, true, true}}};
}

std::vector<AblationRow> ablation_run(const Dataset& dataset, const ModelConfig& base, const TrainConfig& train_cfg,
                                      const EvalConfig& eval_cfg,
                                      const std::function<void(const AblationRow&)>& on_row) {
  std::vector<AblationRow> rows;
  for (const auto& variant : ablation_variants()) {
    ModelConfig mc = base;
    mc.toggles = variant.toggles;
    Ta2nModel model(mc);
    train(model, dataset, train_cfg);
    rows.push_back({variant, evaluate(model, dataset, eval_cfg)});
    if (on_row) on_row(rows.back());
  }
  return rows;
}

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "variant,ttm,tc,sc,accuracy,ci,episodes\n";
  for (const auto& r : rows)
    os << r.variant.name << ',' << r.variant.toggles.ttm << ',' << r.variant.toggles.tc << ',' << r.variant.toggles.sc
       << ',' << fmt(r.report.accuracy) << ',' << fmt(r.report.ci) << ',' << r.report.episodes << '\n';
  return os.str();
}

std::string metrics_csv(const std::vector<EpochLog>& log) {
  std::ostringstream os;
  os << "epoch,episode,loss,train_acc,lr\n";
  for (const auto& e : log)
    os << e.epoch << ',' << e.episodes << ',' << fmt(e.loss) << ',' << fmt(e.train_accuracy) << ','
       << fmt(e.learning_rate) << '\n';
  return os.str();
}

std::string eval_csv(const std::vector<std::pair<std::string, EvalReport>>& rows) {
  std::ostringstream os;
  os << "variant,accuracy,ci,episodes,ci_defined\n";
  for (const auto& [variant, report] : rows)
    os << variant << ',' << fmt(report.accuracy) << ',' << fmt(report.ci) << ',' << report.episodes << ','
       << report.ci_defined << '\n';
  return os.str();
}

std::string eval_csv(const std::string& variant, const EvalReport& report) { return eval_csv({{variant, report}}); }

std::string alignment_csv(const std::vector<std::pair<std::size_t, EpisodeResult>>& episodes) {
  std::ostringstream os;
  os << "episode,query,class,kind,row,col,value\n";
  for (const auto& [index, r] : episodes) {
    const std::size_t way = r.distances.dim(1);
    auto emit = [&](const std::vector<Tensor>& mats, const char* kind) {
      for (std::size_t p = 0; p < mats.size(); ++p) {
        const Tensor& m = mats[p];
        const std::size_t cols = m.dim(1);
        for (std::size_t i = 0; i < m.dim(0); ++i)
          for (std::size_t j = 0; j < cols; ++j)
            os << index << ',' << p / way << ',' << p % way << ',' << kind << ',' << i << ',' << j << ','
               << fmt(m[i * cols + j]) << '\n';
      }
    };
    emit(r.correlations, "correlation");
    emit(r.offsets, "offset");
  }
  return os.str();
}

std::string class_delta_csv(const std::vector<ClassDelta>& deltas) {
  std::ostringstream os;
  os << "class_id,baseline_acc,model_acc,delta\n";
  for (const auto& d : deltas)
    os << d.class_id << ',' << fmt(d.baseline) << ',' << fmt(d.model) << ',' << fmt(d.delta) << '\n';
  return os.str();
}

}  // namespace ta2n
