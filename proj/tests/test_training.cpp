// SPDX-License-Identifier: Apache-2.0
//
// Training-loop suite: metric functions against brute-force oracles, Adam
// against a scalar reference, and end-to-end train() behavior (convergence,
// determinism, early stopping, divergence handling, comparison tables).

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "optmsm/compare.hpp"
#include "optmsm/trainer.hpp"

using namespace optmsm;

namespace {

// ------------------------------------------------------------------ helpers

FeatureSchema toy_schema() {
  FeatureSchema s;
  s.scenario_count = 2;
  s.fields = {{"query", FieldCategory::kShared, 3, 4},
              {"slot", FieldCategory::kSpecific, 4, 2}};
  s.validate();
  return s;
}

ModelConfig toy_model() {
  ModelConfig m;
  m.transfer_widths = {8, 6};
  m.tower_widths = {6};
  m.hyper_hidden = 4;
  return m;
}

// Labels are a deterministic function of the `query` feature, so the task is
// exactly learnable and train AUC should approach 1.
Dataset separable_data(int train_n, int eval_n) {
  auto build = [](int n, int salt) {
    Split rows;
    for (int i = 0; i < n; ++i) {
      Instance ins;
      const int query = 1 + (i / 2 + salt) % 2;  // alternates within each scenario
      ins.feature_indices = {query, 1 + (i * 7 + salt) % 3};
      ins.label = query == 2 ? 1 : 0;
      ins.scenario = 1 + i % 2;
      rows.push_back(ins);
    }
    return rows;
  };
  Dataset d;
  d.train = build(train_n, 0);
  d.valid = build(eval_n, 1);
  d.test = build(eval_n, 2);
  return d;
}

// Labels are independent coin flips: nothing to learn, so validation AUC
// hovers near chance and the patience rule must fire.
Dataset noise_data(int train_n, int eval_n, std::uint64_t seed) {
  Rng rng(seed);
  auto build = [&](int n) {
    Split rows;
    for (int i = 0; i < n; ++i) {
      Instance ins;
      ins.feature_indices = {1 + static_cast<int>(rng.below(2)),
                             1 + static_cast<int>(rng.below(3))};
      ins.label = rng.bernoulli(0.5) ? 1 : 0;
      ins.scenario = 1 + i % 2;
      rows.push_back(ins);
    }
    return rows;
  };
  Dataset d;
  d.train = build(train_n);
  d.valid = build(eval_n);
  d.test = build(eval_n);
  return d;
}

TrainConfig toy_train() {
  TrainConfig c;
  c.learning_rate = 0.05;
  c.batch_size = 32;
  c.lambda = 0.1;
  c.epochs = 20;
  c.patience = 20;
  c.seed = 1;
  return c;
}

// O(P*N) pair-counting AUC: the definition, as slow as it is unambiguous.
double auc_quadratic(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0.0;
  long pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j])
        wins += 1.0;
      else if (scores[i] == scores[j])
        wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

bool stores_equal(const ParameterStore& a, const ParameterStore& b) {
  if (a.names() != b.names()) return false;
  for (const std::string& name : a.names()) {
    const Tensor& x = a.value(name);
    const Tensor& y = b.value(name);
    if (x.rows != y.rows || x.cols != y.cols) return false;
    for (int i = 0; i < x.numel(); ++i)
      if (x.v[i] != y.v[i]) return false;
  }
  return true;
}

double mean_epoch_auc(const std::vector<MetricsRecord>& history, int epoch) {
  double sum = 0.0;
  int n = 0;
  for (const MetricsRecord& r : history) {
    if (r.phase != "epoch" || r.epoch != epoch) continue;
    if (r.metrics.auc.defined) {
      sum += r.metrics.auc.value;
      ++n;
    }
  }
  return n > 0 ? sum / n : 0.0;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

// ---------------------------------------------------------------------- AUC

TEST_CASE("auc worked examples") {
  REQUIRE(auc({0.2, 0.8}, {0, 1}).defined);
  REQUIRE(auc({0.2, 0.8}, {0, 1}).value == 1.0);
  REQUIRE(auc({0.8, 0.2}, {0, 1}).value == 0.0);
  // pos {0.35, 0.8} vs neg {0.1, 0.4}: three of four pairs ranked correctly
  REQUIRE(auc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}).value == 0.75);
  // all-tied scores carry no information
  REQUIRE(auc({0.5, 0.5, 0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1, 1, 0}).value == 0.5);
  // tie across classes counts half
  REQUIRE(auc({0.3, 0.3, 0.7}, {0, 1, 1}).value == 0.75);
}

TEST_CASE("auc undefined for single-class slices") {
  REQUIRE_FALSE(auc({0.1, 0.9}, {1, 1}).defined);
  REQUIRE_FALSE(auc({0.1, 0.9}, {0, 0}).defined);
  REQUIRE_FALSE(auc({}, {}).defined);
  REQUIRE(auc({0.1, 0.9}, {1, 1}).value == 0.0);
}

TEST_CASE("auc matches quadratic pair counting with heavy ties") {
  Rng rng(77);
  const int levels_options[] = {2, 5, 10, 1000};
  const double p_options[] = {0.1, 0.5, 0.9};
  int checked = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(399));
    const int levels = levels_options[rng.below(4)];
    const double p = p_options[rng.below(3)];
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    bool has_pos = false, has_neg = false;
    for (int i = 0; i < n; ++i) {
      scores[i] = static_cast<double>(rng.below(levels)) / levels;
      labels[i] = rng.bernoulli(p) ? 1 : 0;
      (labels[i] ? has_pos : has_neg) = true;
    }
    const AucResult fast = auc(scores, labels);
    if (!has_pos || !has_neg) {
      REQUIRE_FALSE(fast.defined);
      continue;
    }
    REQUIRE(fast.defined);
    REQUIRE_THAT(fast.value, Catch::Matchers::WithinAbs(auc_quadratic(scores, labels), 1e-12));
    ++checked;
  }
  REQUIRE(checked >= 40);  // the generator must actually exercise the fast path
}

TEST_CASE("logloss worked examples") {
  REQUIRE_THAT(logloss({0.5}, {1}), Catch::Matchers::WithinAbs(std::log(2.0), 1e-15));
  REQUIRE_THAT(logloss({0.5}, {0}), Catch::Matchers::WithinAbs(std::log(2.0), 1e-15));
  // clamp keeps confident mistakes finite
  REQUIRE_THAT(logloss({1.0}, {0}), Catch::Matchers::WithinAbs(-std::log(1e-12), 1e-3));
  REQUIRE_THAT(logloss({0.0}, {1}), Catch::Matchers::WithinAbs(-std::log(1e-12), 1e-3));
}

TEST_CASE("logloss matches a long-double scalar recomputation") {
  Rng rng(31);
  std::vector<double> scores;
  std::vector<int> labels;
  for (int i = 0; i < 200; ++i) {
    scores.push_back(0.01 + 0.98 * rng.uniform());
    labels.push_back(rng.bernoulli(0.4) ? 1 : 0);
  }
  long double acc = 0.0L;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const long double p = scores[i];
    acc -= labels[i] == 1 ? std::log(p) : std::log(1.0L - p);
  }
  const double expected = static_cast<double>(acc / scores.size());
  REQUIRE_THAT(logloss(scores, labels), Catch::Matchers::WithinAbs(expected, 1e-13));
}

// --------------------------------------------------------------------- Adam

TEST_CASE("adam first step moves by the learning rate") {
  ParameterStore store;
  store.create("w", Tensor::zeros(1, 1));
  store.slot("w").grad.v[0] = 1.0;
  AdamConfig cfg;
  cfg.learning_rate = 0.1;
  adam_step(store, cfg, 1);
  REQUIRE_THAT(store.value("w").v[0], Catch::Matchers::WithinAbs(-0.1, 1e-8));
}

TEST_CASE("adam zero gradient leaves parameters untouched") {
  ParameterStore store;
  store.create("w", Tensor::full(2, 2, 0.7));
  AdamConfig cfg;
  adam_step(store, cfg, 1);
  for (int i = 0; i < 4; ++i) REQUIRE(store.value("w").v[i] == 0.7);
}

TEST_CASE("adam matches a scalar reference over ten noisy steps") {
  ParameterStore store;
  Rng init(5);
  store.create("w", random_gaussian(2, 3, init));
  AdamConfig cfg;
  cfg.learning_rate = 0.01;
  cfg.l2_weight = 0.05;

  // mirror of the update rule, element by element
  std::vector<double> theta(store.value("w").v);
  std::vector<double> m(6, 0.0), v(6, 0.0);
  Rng grads(6);
  for (long t = 1; t <= 10; ++t) {
    Tensor g = random_gaussian(2, 3, grads);
    store.slot("w").grad = g;
    adam_step(store, cfg, t);
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (int i = 0; i < 6; ++i) {
      const double gi = g.v[i] + cfg.l2_weight * theta[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      theta[i] -= cfg.learning_rate * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.eps);
    }
  }
  for (int i = 0; i < 6; ++i)
    REQUIRE_THAT(store.value("w").v[i], Catch::Matchers::WithinAbs(theta[i], 1e-14));
}

TEST_CASE("adam l2 pulls an unused parameter toward zero") {
  ParameterStore store;
  store.create("w", Tensor::full(1, 1, 1.0));
  AdamConfig cfg;
  cfg.learning_rate = 0.01;
  cfg.l2_weight = 0.5;
  for (long t = 1; t <= 50; ++t) adam_step(store, cfg, t);
  REQUIRE(store.value("w").v[0] < 1.0);
  REQUIRE(store.value("w").v[0] > 0.0);
}

TEST_CASE("adam rejects non-finite gradients by name") {
  ParameterStore store;
  store.create("tower/s1/l0/W", Tensor::zeros(1, 2));
  store.slot("tower/s1/l0/W").grad.v[1] = std::numeric_limits<double>::infinity();
  AdamConfig cfg;
  REQUIRE_THROWS_WITH(adam_step(store, cfg, 1),
                      Catch::Matchers::ContainsSubstring("tower/s1/l0/W") &&
                          Catch::Matchers::ContainsSubstring("entry 1"));
  REQUIRE_THROWS_AS(adam_step(store, cfg, 0), ConfigError);
}

// ----------------------------------------------------------------- evaluate

TEST_CASE("evaluate folds predictions per scenario in natural order") {
  const FeatureSchema schema = toy_schema();
  const Model model(schema, toy_model());
  ParameterStore store;
  Rng rng(3);
  model.init_params(store, rng);

  const Dataset data = separable_data(64, 40);
  const auto per_scenario = evaluate(model, store, data.valid, 7);
  REQUIRE(per_scenario.size() == 2);
  REQUIRE(per_scenario[0].scenario == 1);
  REQUIRE(per_scenario[1].scenario == 2);
  REQUIRE(per_scenario[0].samples == 20);
  REQUIRE(per_scenario[1].samples == 20);
  for (const ScenarioMetrics& sm : per_scenario) {
    REQUIRE(sm.auc.defined);
    REQUIRE(sm.logloss > 0.0);
  }

  // batch size must not change the pooled metrics
  const auto again = evaluate(model, store, data.valid, 40);
  for (int m = 0; m < 2; ++m) {
    REQUIRE(per_scenario[m].auc.value == again[m].auc.value);
    REQUIRE(per_scenario[m].logloss == again[m].logloss);
  }
}

TEST_CASE("evaluate reports empty and single-class scenarios as undefined") {
  const FeatureSchema schema = toy_schema();
  const Model model(schema, toy_model());
  ParameterStore store;
  Rng rng(3);
  model.init_params(store, rng);

  Split rows;
  for (int i = 0; i < 6; ++i) {
    Instance ins;
    ins.feature_indices = {1, 1};
    ins.label = i % 2;
    ins.scenario = 1;  // scenario 2 gets no rows at all
    rows.push_back(ins);
  }
  auto per_scenario = evaluate(model, store, rows, 4);
  REQUIRE(per_scenario[0].auc.defined);
  REQUIRE(per_scenario[1].samples == 0);
  REQUIRE_FALSE(per_scenario[1].auc.defined);
  REQUIRE(per_scenario[1].logloss == 0.0);

  for (Instance& ins : rows) ins.label = 1;  // single class, still scored
  per_scenario = evaluate(model, store, rows, 4);
  REQUIRE_FALSE(per_scenario[0].auc.defined);
  REQUIRE(per_scenario[0].samples == 6);
  REQUIRE(per_scenario[0].logloss > 0.0);
}

// -------------------------------------------------------------------- train

TEST_CASE("train solves a separable task in every scenario") {
  const FeatureSchema schema = toy_schema();
  const Dataset data = separable_data(240, 60);
  const TrainResult res = train(data, schema, toy_model(), toy_train());
  REQUIRE_FALSE(res.diverged);
  REQUIRE(res.best_epoch > 0);
  int finals = 0;
  for (const MetricsRecord& r : res.history) {
    if (r.phase != "final" || r.split != "train") continue;
    REQUIRE(r.metrics.auc.defined);
    REQUIRE(r.metrics.auc.value > 0.99);
    ++finals;
  }
  REQUIRE(finals == 2);
}

TEST_CASE("train config validation") {
  TrainConfig c = toy_train();
  c.learning_rate = 0.0;
  REQUIRE_THROWS_AS(c.validate(), ConfigError);
  c = toy_train();
  c.dropout_rate = 1.0;
  REQUIRE_THROWS_AS(c.validate(), ConfigError);
  c = toy_train();
  c.epochs = -1;
  REQUIRE_THROWS_AS(c.validate(), ConfigError);
  c = toy_train();
  c.patience = 0;
  REQUIRE_THROWS_AS(c.validate(), ConfigError);
  c = toy_train();
  c.no_constraint = true;
  c.lambda = 7.0;
  REQUIRE(c.lambda_effective() == 0.0);
  REQUIRE(toy_train().lambda_effective() == 0.1);
}

TEST_CASE("train with zero epochs returns the initialized model and baseline metrics") {
  const FeatureSchema schema = toy_schema();
  const Dataset data = separable_data(64, 32);
  TrainConfig cfg = toy_train();
  cfg.epochs = 0;
  const TrainResult res = train(data, schema, toy_model(), cfg);
  REQUIRE(res.best_epoch == 0);
  REQUIRE(res.epochs.empty());
  // history: epoch-0 valid plus final train/valid/test, two scenarios each
  REQUIRE(res.history.size() == 2 + 3 * 2);
  for (const MetricsRecord& r : res.history)
    REQUIRE((r.epoch == 0 && (r.phase == "epoch" || r.phase == "final")));

  // parameters are exactly the seed-determined initialization
  const Model model(schema, cfg.apply(toy_model()));
  ParameterStore fresh;
  Rng rng = Rng(cfg.seed).fork(0x11);
  model.init_params(fresh, rng);
  REQUIRE(stores_equal(res.params, fresh));
}

TEST_CASE("train is deterministic including dropout") {
  const FeatureSchema schema = toy_schema();
  const Dataset data = separable_data(96, 32);
  TrainConfig cfg = toy_train();
  cfg.epochs = 3;
  cfg.dropout_rate = 0.25;
  const TrainResult a = train(data, schema, toy_model(), cfg);
  const TrainResult b = train(data, schema, toy_model(), cfg);
  REQUIRE(stores_equal(a.params, b.params));
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    REQUIRE(a.history[i].metrics.auc.defined == b.history[i].metrics.auc.defined);
    REQUIRE(a.history[i].metrics.auc.value == b.history[i].metrics.auc.value);
    REQUIRE(a.history[i].metrics.logloss == b.history[i].metrics.logloss);
  }
  REQUIRE(a.epochs.size() == b.epochs.size());
  for (std::size_t i = 0; i < a.epochs.size(); ++i) {
    REQUIRE(a.epochs[i].loss_msm == b.epochs[i].loss_msm);
    REQUIRE(a.epochs[i].loss_orth == b.epochs[i].loss_orth);
  }
  REQUIRE(a.best_valid_auc == b.best_valid_auc);
}

TEST_CASE("train returns the best-validation checkpoint") {
  const FeatureSchema schema = toy_schema();
  const Dataset data = separable_data(160, 48);
  TrainConfig cfg = toy_train();
  cfg.epochs = 8;
  const TrainResult res = train(data, schema, toy_model(), cfg);

  // evaluating the returned parameters reproduces the recorded best
  const Model model(schema, cfg.apply(toy_model()));
  ParameterStore params = res.params;
  const double mean_auc = mean_defined_auc(evaluate(model, params, data.valid, cfg.batch_size));
  REQUIRE(mean_auc == res.best_valid_auc);

  // and the best is the max over per-epoch validation means, earliest winner
  double best = -1.0;
  int best_epoch = -1;
  for (int e = 0; e <= static_cast<int>(res.epochs.size()); ++e) {
    const double v = mean_epoch_auc(res.history, e);
    if (v > best) {
      best = v;
      best_epoch = e;
    }
  }
  REQUIRE(res.best_valid_auc == best);
  REQUIRE(res.best_epoch == best_epoch);
}

TEST_CASE("train stops after patience consecutive non-improvements") {
  const FeatureSchema schema = toy_schema();
  const Dataset data = noise_data(128, 64, 9);
  TrainConfig cfg = toy_train();
  cfg.learning_rate = 0.01;
  cfg.epochs = 30;
  cfg.patience = 2;
  const TrainResult res = train(data, schema, toy_model(), cfg);
  REQUIRE_FALSE(res.diverged);
  const int ran = static_cast<int>(res.epochs.size());
  REQUIRE((ran == cfg.epochs || ran == res.best_epoch + cfg.patience));
  REQUIRE(ran < cfg.epochs);  // chance-level validation cannot keep improving for 30 epochs
}

TEST_CASE("no_constraint matches lambda zero exactly") {
  const FeatureSchema schema = toy_schema();
  const Dataset data = separable_data(96, 32);
  TrainConfig ablated = toy_train();
  ablated.epochs = 3;
  ablated.lambda = 5.0;
  ablated.no_constraint = true;
  TrainConfig zeroed = toy_train();
  zeroed.epochs = 3;
  zeroed.lambda = 0.0;
  const TrainResult a = train(data, schema, toy_model(), ablated);
  const TrainResult b = train(data, schema, toy_model(), zeroed);
  REQUIRE(stores_equal(a.params, b.params));
  // the penalty is still measured and logged, just not optimized
  REQUIRE(a.epochs.size() == b.epochs.size());
  for (std::size_t i = 0; i < a.epochs.size(); ++i)
    REQUIRE(a.epochs[i].loss_orth == b.epochs[i].loss_orth);
}

TEST_CASE("train aborts on divergence and restores the last good checkpoint") {
  const FeatureSchema schema = toy_schema();
  const Dataset data = separable_data(96, 32);
  TrainConfig cfg = toy_train();
  cfg.learning_rate = 1e155;  // one update overflows the activations on the next forward
  cfg.epochs = 5;
  const TrainResult res = train(data, schema, toy_model(), cfg);
  REQUIRE(res.diverged);
  REQUIRE_FALSE(res.divergence_note.empty());
  for (const std::string& name : res.params.names()) REQUIRE(res.params.value(name).all_finite());
  // the restored checkpoint still evaluates to the recorded best
  const Model model(schema, cfg.apply(toy_model()));
  ParameterStore params = res.params;
  const double mean_auc = mean_defined_auc(evaluate(model, params, data.valid, cfg.batch_size));
  REQUIRE(mean_auc == res.best_valid_auc);
}

TEST_CASE("train covers every variant, baseline, and ablation switch") {
  const FeatureSchema schema = toy_schema();
  const Dataset data = separable_data(64, 32);
  TrainConfig cfg = toy_train();
  cfg.epochs = 1;
  for (TransferVariant v : {TransferVariant::kFcn, TransferVariant::kMoe, TransferVariant::kCgc}) {
    cfg.variant = v;
    REQUIRE_FALSE(train(data, schema, toy_model(), cfg).diverged);
  }
  cfg = toy_train();
  cfg.epochs = 1;
  for (BaselineMode b : {BaselineMode::kMix, BaselineMode::kSharedBottom}) {
    cfg.baseline = b;
    REQUIRE_FALSE(train(data, schema, toy_model(), cfg).diverged);
  }
  cfg = toy_train();
  cfg.epochs = 1;
  cfg.no_priors = true;
  cfg.no_hypernetwork = true;
  cfg.dropout_rate = 0.3;
  REQUIRE_FALSE(train(data, schema, toy_model(), cfg).diverged);
}

// ------------------------------------------------------------- metrics file

TEST_CASE("write_metrics emits one json object per line and is reproducible") {
  const FeatureSchema schema = toy_schema();
  const Dataset data = separable_data(96, 32);
  TrainConfig cfg = toy_train();
  cfg.epochs = 2;
  const TrainResult res = train(data, schema, toy_model(), cfg);

  const std::string path_a = temp_path("optmsm_metrics_a.jsonl");
  const std::string path_b = temp_path("optmsm_metrics_b.jsonl");
  write_metrics(res, path_a);
  write_metrics(train(data, schema, toy_model(), cfg), path_b);
  REQUIRE(slurp(path_a) == slurp(path_b));  // same config, same seed, same bytes

  std::ifstream in(path_a);
  std::string line;
  std::size_t lines = 0, loss_lines = 0;
  while (std::getline(in, line)) {
    const nlohmann::json j = nlohmann::json::parse(line);
    REQUIRE(j.contains("phase"));
    if (j["phase"] == "loss") {
      REQUIRE(j.contains("loss_msm"));
      REQUIRE(j.contains("loss_orth"));
      ++loss_lines;
    } else {
      REQUIRE(j.contains("split"));
      REQUIRE(j.contains("scenario"));
      REQUIRE(j.contains("auc"));
      REQUIRE(j.contains("logloss"));
      REQUIRE(j.contains("samples"));
    }
    ++lines;
  }
  REQUIRE(loss_lines == res.epochs.size());
  REQUIRE(lines == res.epochs.size() + res.history.size());
  std::remove(path_a.c_str());
  std::remove(path_b.c_str());
}

TEST_CASE("write_metrics encodes undefined auc as null") {
  TrainResult res;
  MetricsRecord rec;
  rec.phase = "final";
  rec.epoch = 1;
  rec.split = "test";
  rec.metrics.scenario = 2;
  rec.metrics.samples = 5;
  rec.metrics.logloss = 0.4;
  res.history.push_back(rec);
  const std::string path = temp_path("optmsm_metrics_null.jsonl");
  write_metrics(res, path);
  const nlohmann::json j = nlohmann::json::parse(slurp(path));
  REQUIRE(j["auc"].is_null());
  REQUIRE(j["samples"] == 5);
  std::remove(path.c_str());
}

// ----------------------------------------------------------------- overhead

TEST_CASE("measure_overhead of a config against itself is near zero") {
  const FeatureSchema schema = toy_schema();
  const Dataset data = separable_data(1024, 64);
  TrainConfig cfg = toy_train();
  cfg.batch_size = 32;
  const OverheadResult o = measure_overhead(data, schema, toy_model(), cfg, cfg, 2, 3);
  REQUIRE(o.base_seconds > 0.0);
  REQUIRE(o.full_seconds > 0.0);
  REQUIRE(std::abs(o.ratio) < 0.35);
}

// --------------------------------------------------------------- statistics

TEST_CASE("mean and sample standard deviation") {
  REQUIRE(mean_of({1.0, 2.0, 3.0, 4.0}) == 2.5);
  REQUIRE_THAT(stddev_of({1.0, 2.0, 3.0, 4.0}),
               Catch::Matchers::WithinAbs(std::sqrt(5.0 / 3.0), 1e-15));
  REQUIRE(mean_of({}) == 0.0);
  REQUIRE(stddev_of({3.0}) == 0.0);
}

TEST_CASE("paired one-sided t-test matches reference values") {
  // d = [0.01, 0.02, 0.03, 0.02, 0.02], t = 6.3245553..., df = 4
  const std::vector<double> a{0.71, 0.68, 0.74, 0.69, 0.72};
  const std::vector<double> b{0.70, 0.66, 0.71, 0.67, 0.70};
  REQUIRE_THAT(paired_t_pvalue_greater(a, b),
               Catch::Matchers::WithinAbs(0.001599101076167675, 1e-12));
  // negative mean difference, t = -3.5, df = 2
  const std::vector<double> c{0.50, 0.52, 0.49};
  const std::vector<double> d{0.53, 0.55, 0.50};
  REQUIRE_THAT(paired_t_pvalue_greater(c, d),
               Catch::Matchers::WithinAbs(0.9635863249727653, 1e-12));
  // the two one-sided tests tile the continuous distribution
  REQUIRE_THAT(paired_t_pvalue_greater(a, b) + paired_t_pvalue_greater(b, a),
               Catch::Matchers::WithinAbs(1.0, 1e-12));
}

TEST_CASE("paired t-test degenerate and invalid inputs") {
  REQUIRE(paired_t_pvalue_greater({0.6, 0.7}, {0.5, 0.6}) == 0.0);  // constant positive shift
  REQUIRE(paired_t_pvalue_greater({0.5, 0.6}, {0.5, 0.6}) == 1.0);  // identical
  REQUIRE(paired_t_pvalue_greater({0.5, 0.6}, {0.6, 0.7}) == 1.0);  // constant negative shift
  REQUIRE_THROWS_AS(paired_t_pvalue_greater({0.5}, {0.5, 0.6}), ConfigError);
  REQUIRE_THROWS_AS(paired_t_pvalue_greater({0.5}, {0.5}), ConfigError);
}

// --------------------------------------------------------------- comparison

TEST_CASE("compare collects per-seed test metrics and self-comparison is flat") {
  const FeatureSchema schema = toy_schema();
  const Dataset data = separable_data(128, 48);
  TrainConfig cfg = toy_train();
  cfg.epochs = 2;
  const std::vector<std::pair<std::string, TrainConfig>> configs{{"full", cfg}, {"again", cfg}};
  const CompareTable table = compare(data, schema, toy_model(), configs, {0, 1, 2});

  REQUIRE(table.rows.size() == 2);
  REQUIRE(table.scenario_count == 2);
  for (const CompareRow& row : table.rows)
    for (const CompareCell& cell : row.cells) {
      REQUIRE(cell.auc.size() == 3);
      REQUIRE(cell.logloss.size() == 3);
    }

  // identical configs: zero decrement, identical per-seed values, p = 1
  for (int m = 1; m <= 2; ++m) {
    const CellSummary ref = summarize_cell(table, 0, m);
    const CellSummary dup = summarize_cell(table, 1, m);
    REQUIRE(std::isnan(ref.p_value));
    REQUIRE(ref.decrement_pct == 0.0);
    REQUIRE(dup.mean_auc == ref.mean_auc);
    REQUIRE(dup.decrement_pct == 0.0);
    REQUIRE(dup.p_value == 1.0);
  }

  const std::string csv_path = temp_path("optmsm_compare.csv");
  write_compare_csv(table, csv_path);
  std::ifstream in(csv_path);
  std::string line;
  std::size_t lines = 0;
  std::getline(in, line);
  REQUIRE_THAT(line, Catch::Matchers::StartsWith("config,scenario,seeds,mean_auc"));
  while (std::getline(in, line)) ++lines;
  REQUIRE(lines == 2 * 2);  // rows x scenarios
  std::remove(csv_path.c_str());

  std::ostringstream table_text;
  print_compare(table, table_text);
  REQUIRE_THAT(table_text.str(), Catch::Matchers::ContainsSubstring("full") &&
                                     Catch::Matchers::ContainsSubstring("again") &&
                                     Catch::Matchers::ContainsSubstring("scenario 2"));
}

TEST_CASE("compare rejects empty inputs") {
  const FeatureSchema schema = toy_schema();
  const Dataset data = separable_data(16, 8);
  REQUIRE_THROWS_AS(compare(data, schema, toy_model(), {}, {0}), ConfigError);
  REQUIRE_THROWS_AS(compare(data, schema, toy_model(), {{"full", toy_train()}}, {}), ConfigError);
}
