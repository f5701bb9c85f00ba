// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "optmsm/dataset.hpp"
#include "optmsm/errors.hpp"
#include "optmsm/rng.hpp"
#include "optmsm/schema.hpp"
#include "optmsm/tape.hpp"

namespace optmsm {

struct GeneratorConfig {
  int scenario_count = 3;
  long samples = 50000;
  std::vector<double> proportions = {0.05, 0.35, 0.60};
  double shared_signal = 1.0;
  double specific_signal = 1.0;
  double interaction_signal = 0.5;
  double base_click_rate = 0.2;
  std::uint64_t seed = 0;
  double train_frac = 0.8;
  double valid_frac = 0.1;

  void validate() const {
    if (scenario_count < 2) throw ConfigError("generator: scenario_count must be >= 2");
    if (static_cast<int>(proportions.size()) != scenario_count)
      throw ConfigError("generator: proportions count != scenario_count");
    double sum = 0.0;
    for (double p : proportions) {
      if (p <= 0.0) throw ConfigError("generator: proportions must be positive");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("generator: proportions must sum to 1");
    if (base_click_rate <= 0.0 || base_click_rate >= 1.0)
      throw ConfigError("generator: base_click_rate must be in (0, 1)");
    if (shared_signal < 0.0 || specific_signal < 0.0 || interaction_signal < 0.0)
      throw ConfigError("generator: signal strengths must be >= 0");
    if (samples < 1) throw ConfigError("generator: samples must be >= 1");
    if (train_frac <= 0.0 || valid_frac < 0.0 || train_frac + valid_frac >= 1.0)
      throw ConfigError("generator: invalid split fractions");
  }
};

/// The hidden logistic teacher behind a synthetic dataset: one random
/// embedding per (field, vocab entry), a shared direction common to all
/// scenarios over the shared fields, a per-scenario direction over all
/// fields, and a per-scenario bilinear interaction so each scenario's
/// response has sample-dependent multiplicative structure a pooled linear
/// fit cannot capture. The whole per-scenario part (direction + interaction)
/// scales with specific_signal, so zero specific signal still collapses the
/// teacher across scenarios. Retained so tests can score instances with the
/// ground-truth model.
struct TeacherWeights {
  static constexpr int kDimPerField = 2;

  double bias = 0.0;
  double shared_signal = 0.0;
  double specific_signal = 0.0;
  double interaction_signal = 0.0;
  std::vector<Tensor> field_embeddings;           // per field: vocab x kDimPerField
  std::vector<double> u_shared;                   // over shared-field blocks
  std::vector<std::vector<double>> u_scenario;    // per scenario, over all-field blocks
  std::vector<std::vector<double>> p_scenario;    // interaction factors, like u_scenario
  std::vector<std::vector<double>> q_scenario;
  std::vector<int> shared_fields;                 // schema indices

  /// Teacher logit for an instance, optionally pretending it belongs to a
  /// different scenario (used by the own-vs-cross transfer check).
  double logit(const Instance& ins, int scenario_override = -1) const {
    const int m = scenario_override > 0 ? scenario_override : ins.scenario;
    double shared_dot = 0.0;
    int off = 0;
    for (int f : shared_fields) {
      const Tensor& emb = field_embeddings[f];
      for (int d = 0; d < kDimPerField; ++d)
        shared_dot += u_shared[off + d] * emb.at(ins.feature_indices[f], d);
      off += kDimPerField;
    }
    double spec_dot = 0.0, p_dot = 0.0, q_dot = 0.0;
    const std::vector<double>& um = u_scenario[m - 1];
    const std::vector<double>& pm = p_scenario[m - 1];
    const std::vector<double>& qm = q_scenario[m - 1];
    for (std::size_t f = 0; f < field_embeddings.size(); ++f) {
      const Tensor& emb = field_embeddings[f];
      for (int d = 0; d < kDimPerField; ++d) {
        const double e = emb.at(ins.feature_indices[f], d);
        spec_dot += um[f * kDimPerField + d] * e;
        p_dot += pm[f * kDimPerField + d] * e;
        q_dot += qm[f * kDimPerField + d] * e;
      }
    }
    return bias + shared_signal * shared_dot +
           specific_signal * (spec_dot + interaction_signal * p_dot * q_dot);
  }

  double click_probability(const Instance& ins, int scenario_override = -1) const {
    return Tape::sigmoid_scalar(logit(ins, scenario_override));
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["bias"] = bias;
    j["shared_signal"] = shared_signal;
    j["specific_signal"] = specific_signal;
    j["interaction_signal"] = interaction_signal;
    j["dim_per_field"] = kDimPerField;
    j["shared_fields"] = shared_fields;
    j["u_shared"] = u_shared;
    j["u_scenario"] = u_scenario;
    j["p_scenario"] = p_scenario;
    j["q_scenario"] = q_scenario;
    nlohmann::json tables = nlohmann::json::array();
    for (const Tensor& t : field_embeddings)
      tables.push_back({{"rows", t.rows}, {"cols", t.cols}, {"values", t.v}});
    j["field_embeddings"] = std::move(tables);
    return j;
  }

  static TeacherWeights from_json(const nlohmann::json& j) {
    TeacherWeights w;
    w.bias = j.at("bias").get<double>();
    w.shared_signal = j.at("shared_signal").get<double>();
    w.specific_signal = j.at("specific_signal").get<double>();
    w.interaction_signal = j.at("interaction_signal").get<double>();
    w.shared_fields = j.at("shared_fields").get<std::vector<int>>();
    w.u_shared = j.at("u_shared").get<std::vector<double>>();
    w.u_scenario = j.at("u_scenario").get<std::vector<std::vector<double>>>();
    w.p_scenario = j.at("p_scenario").get<std::vector<std::vector<double>>>();
    w.q_scenario = j.at("q_scenario").get<std::vector<std::vector<double>>>();
    for (const auto& t : j.at("field_embeddings"))
      w.field_embeddings.emplace_back(t.at("rows").get<int>(), t.at("cols").get<int>(),
                                      t.at("values").get<std::vector<double>>());
    return w;
  }
};

struct GeneratedData {
  Dataset dataset;
  TeacherWeights teacher;
};

/// Samples a synthetic multi-scenario dataset. Scenario assignment is
/// categorical over the configured proportions; feature indices are uniform
/// over [1, vocab) (bucket 0 stays reserved); labels are Bernoulli of the
/// teacher's click probability. Splits are a seeded permutation cut at
/// train/valid fractions. Fully determined by (config, schema).
inline GeneratedData generate(const GeneratorConfig& config, const FeatureSchema& schema) {
  config.validate();
  schema.validate();
  if (schema.scenario_count != config.scenario_count)
    throw ConfigError("generator: schema scenario count " +
                      std::to_string(schema.scenario_count) + " != config " +
                      std::to_string(config.scenario_count));

  const int nf = static_cast<int>(schema.fields.size());
  const int M = config.scenario_count;
  Rng teacher_rng = Rng(config.seed).fork(1);

  TeacherWeights teacher;
  teacher.bias = std::log(config.base_click_rate / (1.0 - config.base_click_rate));
  teacher.shared_signal = config.shared_signal;
  teacher.specific_signal = config.specific_signal;
  teacher.interaction_signal = config.interaction_signal;
  teacher.shared_fields = schema.shared_field_indices();
  for (const FieldDef& f : schema.fields)
    teacher.field_embeddings.push_back(
        random_gaussian(f.vocab_size, TeacherWeights::kDimPerField, teacher_rng));
  {
    const int dim_c = static_cast<int>(teacher.shared_fields.size()) * TeacherWeights::kDimPerField;
    const int dim_a = nf * TeacherWeights::kDimPerField;
    const double sc = dim_c > 0 ? 1.0 / std::sqrt(static_cast<double>(dim_c)) : 0.0;
    const double sa = dim_a > 0 ? 1.0 / std::sqrt(static_cast<double>(dim_a)) : 0.0;
    teacher.u_shared.resize(dim_c);
    for (double& u : teacher.u_shared) u = teacher_rng.gaussian() * sc;
    teacher.u_scenario.resize(M);
    for (int m = 0; m < M; ++m) {
      teacher.u_scenario[m].resize(dim_a);
      for (double& u : teacher.u_scenario[m]) u = teacher_rng.gaussian() * sa;
    }
    teacher.p_scenario.resize(M);
    teacher.q_scenario.resize(M);
    for (int m = 0; m < M; ++m) {
      teacher.p_scenario[m].resize(dim_a);
      teacher.q_scenario[m].resize(dim_a);
      for (double& u : teacher.p_scenario[m]) u = teacher_rng.gaussian() * sa;
      for (double& u : teacher.q_scenario[m]) u = teacher_rng.gaussian() * sa;
    }
  }

  Rng sample_rng = Rng(config.seed).fork(2);
  Split all;
  all.reserve(config.samples);
  std::vector<long> scenario_counts(M, 0);
  for (long n = 0; n < config.samples; ++n) {
    Instance ins;
    const double u = sample_rng.uniform();
    double acc = 0.0;
    ins.scenario = M;
    for (int m = 0; m < M; ++m) {
      acc += config.proportions[m];
      if (u < acc) {
        ins.scenario = m + 1;
        break;
      }
    }
    ++scenario_counts[ins.scenario - 1];
    ins.feature_indices.resize(nf);
    for (int f = 0; f < nf; ++f) {
      const int vocab = schema.fields[f].vocab_size;
      ins.feature_indices[f] =
          vocab > 1 ? static_cast<int>(1 + sample_rng.below(static_cast<std::uint64_t>(vocab - 1)))
                    : 0;
    }
    ins.label = sample_rng.bernoulli(teacher.click_probability(ins)) ? 1 : 0;
    all.push_back(std::move(ins));
  }
  for (int m = 0; m < M; ++m) {
    if (scenario_counts[m] == 0)
      throw DataError("generator: scenario " + std::to_string(m + 1) +
                      " received no samples; increase sample count");
  }

  Rng split_rng = Rng(config.seed).fork(3);
  std::vector<int> order(all.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  split_rng.shuffle(order);
  const long n_train = static_cast<long>(config.train_frac * config.samples);
  const long n_valid = static_cast<long>(config.valid_frac * config.samples);

  GeneratedData out;
  out.teacher = std::move(teacher);
  for (long i = 0; i < static_cast<long>(order.size()); ++i) {
    Instance& ins = all[order[i]];
    if (i < n_train)
      out.dataset.train.push_back(std::move(ins));
    else if (i < n_train + n_valid)
      out.dataset.valid.push_back(std::move(ins));
    else
      out.dataset.test.push_back(std::move(ins));
  }
  return out;
}

inline void save_teacher(const TeacherWeights& teacher, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path);
  out << teacher.to_json().dump(2) << "\n";
}

inline TeacherWeights load_teacher(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  nlohmann::json j;
  in >> j;
  return TeacherWeights::from_json(j);
}

}  // namespace optmsm
