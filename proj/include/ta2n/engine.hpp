// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "ta2n/model.hpp"
#include "ta2n/synthetic.hpp"

namespace ta2n {

// v <- mu·v - lr·grad, theta <- theta + v.
class SgdMomentum {
 public:
  SgdMomentum(std::vector<Parameter*> params, double momentum);
  void step(double lr);
  void zero_grad();

 private:
  std::vector<Parameter*> params_;
  std::vector<Tensor> velocity_;
  double momentum_;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double decay_factor = 1.0;
  std::size_t decay_interval = 10;  // epochs
  std::size_t epochs = 30;
  std::size_t episodes_per_epoch = 200;
  std::size_t way = 5, shot = 1, query = 5;
  double bn_momentum = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
  // lr0 · factor^floor(epoch / interval).
  double learning_rate_at(std::size_t epoch) const;
};

struct EpochLog {
  std::size_t epoch = 0;
  std::size_t episodes = 0;  // cumulative
  double loss = 0.0;         // mean per-query loss over the epoch
  double train_accuracy = 0.0;
  double learning_rate = 0.0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// One optimisation step per episode. A non-finite loss aborts with kNumerical.
std::vector<EpochLog> train(Ta2nModel& model, const Dataset& dataset, const TrainConfig& config,
                            const EpochCallback& on_epoch = {});

struct EvalConfig {
  std::size_t episodes = 500;
  std::size_t way = 5, shot = 1, query = 5;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  Split split = Split::kTest;
};

struct ClassTally {
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy() const { return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total); }
};

struct EvalReport {
  double accuracy = 0.0;
  double ci = 0.0;          // 95% half-width, 1.96·sd/sqrt(n)
  bool ci_defined = false;  // false with a single episode
  std::size_t episodes = 0;
  std::vector<double> episode_accuracy;
  std::map<std::size_t, ClassTally> per_class;  // by global class id
};

// Episode i uses seed mix_seed(config.seed, i), so any worker count gives the same report.
EvalReport evaluate(const Ta2nModel& model, const Dataset& dataset, const EvalConfig& config);

struct EvalEpisode {
  Episode episode;
  EpisodeResult result;
};

// Rebuilds evaluation episode `index` exactly as evaluate() runs it.
EvalEpisode replay_eval_episode(const Ta2nModel& model, const Dataset& dataset, const EvalConfig& config,
                                std::size_t index, Tape& tape, bool diagnostics);

struct ClassDelta {
  std::size_t class_id = 0;
  double baseline = 0.0, model = 0.0, delta = 0.0;
};
std::vector<ClassDelta> per_class_deltas(const EvalReport& baseline, const EvalReport& model);

struct AblationVariant {
  std::string name;
  ModuleToggles toggles;
};
// baseline, TTM, TTM+TC, TTM+SC, TTM+TC+SC, TC, TC+SC.
std::vector<AblationVariant> ablation_variants();

struct AblationRow {
  AblationVariant variant;
  EvalReport report;
};

// Trains and evaluates every variant with the same seeds and episode streams.
std::vector<AblationRow> ablation_run(const Dataset& dataset, const ModelConfig& model, const TrainConfig& train,
                                      const EvalConfig& eval,
                                      const std::function<void(const AblationRow&)>& on_row = {});

std::string ablation_csv(const std::vector<AblationRow>& rows);
std::string metrics_csv(const std::vector<EpochLog>& log);
std::string eval_csv(const std::string& variant, const EvalReport& report);
std::string eval_csv(const std::vector<std::pair<std::string, EvalReport>>& rows);
std::string class_delta_csv(const std::vector<ClassDelta>& deltas);
// Per-pair correlation matrices (row = support step, col = query step) and offsets (col 0 = x, 1 = y),
// keyed by evaluation episode index; pairs are query-major over classes.
std::string alignment_csv(const std::vector<std::pair<std::size_t, EpisodeResult>>& episodes);

}  // namespace ta2n
