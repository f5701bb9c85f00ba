// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "optmsm/adam.hpp"
#include "optmsm/dataset.hpp"
#include "optmsm/metrics.hpp"
#include "optmsm/model.hpp"

namespace optmsm {

// ------------------------------------------------------------------ config

/// Optimization settings plus the switches that pick the model configuration
/// under test.  The ablation flags leave everything else untouched so paired
/// runs differ by exactly one mechanism.
struct TrainConfig {
  double learning_rate = 1e-3;
  double l2_weight = 0.0;
  double dropout_rate = 0.0;
  int batch_size = 256;
  double lambda = 0.02;  ///< orthogonality weight before ablation
  int epochs = 40;
  int patience = 6;  ///< consecutive non-improving epochs before stopping
  std::uint64_t seed = 0;
  TransferVariant variant = TransferVariant::kFcn;
  BaselineMode baseline = BaselineMode::kOptmsm;
  bool no_priors = false;
  bool no_constraint = false;
  bool no_hypernetwork = false;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (l2_weight < 0.0) throw ConfigError("l2_weight must be >= 0");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
      throw ConfigError("dropout_rate must be in [0, 1)");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (lambda < 0.0) throw ConfigError("lambda must be >= 0");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (patience < 1) throw ConfigError("patience must be >= 1");
  }

  /// Weight actually applied to the orthogonality term.
  double lambda_effective() const { return no_constraint ? 0.0 : lambda; }

  /// Project the switches onto a base model configuration.
  ModelConfig apply(ModelConfig base) const {
    base.baseline = baseline;
    base.variant = variant;
    base.use_priors = !no_priors;
    base.use_hypernetwork = !no_hypernetwork;
    return base;
  }
};

// ----------------------------------------------------------------- records

/// Quality of one scenario on one split.  AUC stays undefined when the
/// scenario's slice contains a single label class (or no rows at all).
struct ScenarioMetrics {
  int scenario = 0;
  AucResult auc;
  double logloss = 0.0;
  long samples = 0;
};

/// One metrics line: phase is "epoch" for per-epoch validation and "final"
/// for the post-restore evaluation of the returned parameters.
struct MetricsRecord {
  std::string phase;
  int epoch = 0;  ///< 0 marks the pre-training baseline
  std::string split;
  ScenarioMetrics metrics;
};

/// Per-epoch training losses.  seconds is wall clock for the batch loop only
/// and is deliberately kept out of the metrics file, which must be a pure
/// function of (config, data, seed).
struct EpochStats {
  int epoch = 0;
  double loss_msm = 0.0;   ///< mean per-batch click loss
  double loss_orth = 0.0;  ///< mean per-batch orthogonality penalty (unweighted)
  double seconds = 0.0;
};

struct TrainResult {
  ParameterStore params;  ///< best-validation parameters
  std::vector<MetricsRecord> history;
  std::vector<EpochStats> epochs;
  int best_epoch = 0;
  double best_valid_auc = 0.0;
  bool diverged = false;
  std::string divergence_note;
};

// -------------------------------------------------------------- evaluation

/// Score a split in natural order and fold predictions per scenario.
inline std::vector<ScenarioMetrics> evaluate(const Model& model, ParameterStore& store,
                                             const Split& split, int batch_size) {
  const int scenario_count = model.scenario_count();
  std::vector<std::vector<double>> scores(scenario_count);
  std::vector<std::vector<int>> labels(scenario_count);
  for (const Batch& batch : make_batches(split, batch_size, 0, false)) {
    Tape tape;
    const ForwardResult fwd = model.forward(tape, store, batch);
    const Tensor& pred = tape.val(fwd.predictions);
    for (int i = 0; i < batch.size(); ++i) {
      const Instance& ins = *batch.items[i];
      scores[ins.scenario - 1].push_back(pred.at(i, 0));
      labels[ins.scenario - 1].push_back(ins.label);
    }
  }
  std::vector<ScenarioMetrics> out(scenario_count);
  for (int m = 0; m < scenario_count; ++m) {
    out[m].scenario = m + 1;
    out[m].samples = static_cast<long>(scores[m].size());
    if (!scores[m].empty()) {
      out[m].auc = auc(scores[m], labels[m]);
      out[m].logloss = logloss(scores[m], labels[m]);
    }
  }
  return out;
}

/// Mean AUC over the scenarios where it is defined; 0 when none are.
inline double mean_defined_auc(const std::vector<ScenarioMetrics>& per_scenario) {
  double sum = 0.0;
  int n = 0;
  for (const ScenarioMetrics& sm : per_scenario) {
    if (sm.auc.defined) {
      sum += sm.auc.value;
      ++n;
    }
  }
  return n > 0 ? sum / n : 0.0;
}

// ---------------------------------------------------------------- training

/// Full training loop: Adam on L_msm + lambda * L_orth, per-epoch validation,
/// early stopping on mean validation AUC with a patience window, and
/// best-checkpoint restore.  A non-finite loss or gradient aborts the loop
/// and falls back to the best checkpoint seen so far, with diverged set.
inline TrainResult train(const Dataset& data, const FeatureSchema& schema,
                         const ModelConfig& base_model, const TrainConfig& cfg) {
  cfg.validate();
  const Model model(schema, cfg.apply(base_model));

  TrainResult result;
  Rng init_rng = Rng(cfg.seed).fork(0x11);
  model.init_params(result.params, init_rng);
  Rng dropout_rng = Rng(cfg.seed).fork(0x22);

  AdamConfig adam;
  adam.learning_rate = cfg.learning_rate;
  adam.l2_weight = cfg.l2_weight;

  auto eval_and_log = [&](const char* phase, int epoch, const char* split_name,
                          const Split& split) {
    const std::vector<ScenarioMetrics> per_scenario =
        evaluate(model, result.params, split, cfg.batch_size);
    for (const ScenarioMetrics& sm : per_scenario)
      result.history.push_back({phase, epoch, split_name, sm});
    return mean_defined_auc(per_scenario);
  };

  // Epoch 0: the untrained model is the first early-stopping candidate, so a
  // run with epochs=0 still returns coherent parameters and metrics.
  ParameterStore best_params = result.params;
  double best_auc = eval_and_log("epoch", 0, "valid", data.valid);
  int best_epoch = 0;
  int stale = 0;
  long step = 0;

  const double lambda = cfg.lambda_effective();
  for (int epoch = 1; epoch <= cfg.epochs && !result.diverged; ++epoch) {
    const std::uint64_t shuffle_seed = Rng(cfg.seed).fork(0x33).fork(epoch).next_u64();
    const std::vector<Batch> batches = make_batches(data.train, cfg.batch_size, shuffle_seed);
    double sum_msm = 0.0;
    double sum_orth = 0.0;
    long batch_count = 0;

    const auto t0 = std::chrono::steady_clock::now();
    for (const Batch& batch : batches) {
      Tape tape;
      ForwardOptions opt;
      opt.training = true;
      opt.dropout_rate = cfg.dropout_rate;
      opt.rng = &dropout_rng;
      const ForwardResult fwd = model.forward(tape, result.params, batch, opt);

      std::vector<double> batch_labels(batch.items.size());
      for (std::size_t i = 0; i < batch.items.size(); ++i)
        batch_labels[i] = batch.items[i]->label;
      const NodeId loss_msm = tape.bce(fwd.predictions, batch_labels);
      const NodeId loss = tape.add(loss_msm, tape.scale(fwd.orth, lambda));

      const double loss_value = tape.val(loss).item();
      if (!std::isfinite(loss_value)) {
        result.diverged = true;
        result.divergence_note =
            "non-finite loss at epoch " + std::to_string(epoch) + "; restored best checkpoint";
        break;
      }
      sum_msm += tape.val(loss_msm).item();
      sum_orth += tape.val(fwd.orth).item();
      ++batch_count;

      result.params.zero_grads();
      tape.backward(loss);
      try {
        adam_step(result.params, adam, ++step);
      } catch (const NumericError& err) {
        result.diverged = true;
        result.divergence_note = std::string(err.what()) + "; restored best checkpoint";
        break;
      }
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (batch_count > 0)
      result.epochs.push_back(
          {epoch, sum_msm / batch_count, sum_orth / batch_count, seconds});
    if (result.diverged) break;

    const double valid_auc = eval_and_log("epoch", epoch, "valid", data.valid);
    if (valid_auc > best_auc) {
      best_auc = valid_auc;
      best_epoch = epoch;
      best_params = result.params;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }

  result.params = best_params;
  result.best_epoch = best_epoch;
  result.best_valid_auc = best_auc;
  eval_and_log("final", best_epoch, "train", data.train);
  eval_and_log("final", best_epoch, "valid", data.valid);
  eval_and_log("final", best_epoch, "test", data.test);
  return result;
}

// ------------------------------------------------------------ metrics file

/// One JSON object per line: loss lines first (chronological), then metric
/// lines in the order they were recorded.  Timing never lands here so two
/// runs with the same config and seed produce byte-identical files.
inline void write_metrics(const TrainResult& result, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path);
  for (const EpochStats& e : result.epochs) {
    nlohmann::json line{{"phase", "loss"},
                        {"epoch", e.epoch},
                        {"loss_msm", e.loss_msm},
                        {"loss_orth", e.loss_orth}};
    out << line.dump() << "\n";
  }
  for (const MetricsRecord& rec : result.history) {
    nlohmann::json line;
    line["phase"] = rec.phase;
    line["epoch"] = rec.epoch;
    line["split"] = rec.split;
    line["scenario"] = rec.metrics.scenario;
    if (rec.metrics.auc.defined)
      line["auc"] = rec.metrics.auc.value;
    else
      line["auc"] = nullptr;
    line["logloss"] = rec.metrics.logloss;
    line["samples"] = rec.metrics.samples;
    out << line.dump() << "\n";
  }
  if (!out) throw ParseError("write failed: " + path);
}

/// Wall-clock per-epoch seconds, kept separate from the metrics file.
inline void write_timing(const TrainResult& result, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path);
  for (const EpochStats& e : result.epochs)
    out << "epoch " << e.epoch << " seconds " << e.seconds << "\n";
}

// ---------------------------------------------------------------- overhead

struct OverheadResult {
  double base_seconds = 0.0;  ///< fastest per-epoch wall clock, stripped model
  double full_seconds = 0.0;  ///< fastest per-epoch wall clock, full model
  double ratio = 0.0;         ///< (full - base) / base
};

/// Train both configurations for a fixed epoch count several times and
/// compare the fastest per-epoch wall clock of the batch loops. The minimum
/// is the standard estimator for compute cost under shared-machine noise:
/// interference only ever adds time, so the fastest epoch is the closest
/// observation of the true cost.
inline OverheadResult measure_overhead(const Dataset& data, const FeatureSchema& schema,
                                       const ModelConfig& base_model,
                                       const TrainConfig& base_cfg, const TrainConfig& full_cfg,
                                       int epochs, int runs = 3) {
  if (epochs < 1) throw ConfigError("measure_overhead: epochs must be >= 1");
  if (runs < 1) throw ConfigError("measure_overhead: runs must be >= 1");
  auto min_epoch_seconds = [&](TrainConfig cfg) {
    cfg.epochs = epochs;
    cfg.patience = epochs + 1;  // never stop early: equal work per run
    double best = std::numeric_limits<double>::infinity();
    for (int r = 0; r < runs; ++r) {
      TrainConfig run_cfg = cfg;
      run_cfg.seed = cfg.seed + static_cast<std::uint64_t>(r);
      const TrainResult res = train(data, schema, base_model, run_cfg);
      for (const EpochStats& e : res.epochs) best = std::min(best, e.seconds);
    }
    return best;
  };
  OverheadResult out;
  out.base_seconds = min_epoch_seconds(base_cfg);
  out.full_seconds = min_epoch_seconds(full_cfg);
  if (!(out.base_seconds > 0.0)) throw NumericError("measure_overhead: zero base time");
  out.ratio = (out.full_seconds - out.base_seconds) / out.base_seconds;
  return out;
}

}  // namespace optmsm
