// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include "optmsm/model.hpp"
#include "optmsm/trainer.hpp"

namespace optmsm {

struct GradCheckRow {
  std::string group;  ///< parameter tensor name
  double max_rel_err = 0.0;
  bool skipped = false;
  bool passed = true;
  std::string note;
};

struct GradCheckReport {
  std::vector<GradCheckRow> rows;
  bool passed = true;
  double tolerance = 0.0;
  double fd_step = 0.0;
  int scalar_count = 0;
  double seconds = 0.0;
};

/// Largest model the checker accepts: central differences cost two full
/// forward passes per scalar, so this is a hard guard, not a suggestion.
inline constexpr int kGradCheckMaxScalars = 20000;

/// Check every parameter gradient of the full training loss (click loss plus
/// lambda times the orthogonality penalty) against central finite differences
/// on one small random batch covering all scenarios.
///
/// Groups whose analytic gradient is identically zero are verified against a
/// near-zero difference quotient and reported as skipped. corrupt_group, a
/// test hook, adds a constant to that group's analytic gradient so the report
/// must fail there.
inline GradCheckReport gradcheck(const FeatureSchema& schema, const ModelConfig& cfg,
                                 double lambda, std::uint64_t seed, double fd_step = 1e-5,
                                 double tolerance = 1e-4, const std::string& corrupt_group = "") {
  schema.validate();
  cfg.validate();
  if (lambda < 0.0) throw ConfigError("gradcheck: lambda must be >= 0");
  const auto t0 = std::chrono::steady_clock::now();

  const Model model(schema, cfg);
  ParameterStore store;
  Rng init_rng = Rng(seed).fork(0xa);
  model.init_params(store, init_rng);
  if (store.scalar_count() > kGradCheckMaxScalars)
    throw ConfigError("gradcheck requires a tiny model: " + std::to_string(store.scalar_count()) +
                      " parameters exceed " + std::to_string(kGradCheckMaxScalars));

  // A generic operating point: smooth random weights, biases pushed positive
  // so the relu stacks stay active and clear of their kinks.
  Rng point_rng = Rng(seed).fork(0xb);
  for (const std::string& name : store.names()) {
    Tensor& v = store.slot(name).value;
    for (double& x : v.v) x = point_rng.uniform() - 0.5;
    if (name.back() == 'b' || (name.size() >= 2 && name[name.size() - 2] == 'b'))
      for (double& x : v.v) x += 0.25;
  }

  // Two rows per scenario with both labels present.
  Rng batch_rng = Rng(seed).fork(0xc);
  Split rows;
  std::vector<double> labels;
  for (int m = 1; m <= schema.scenario_count; ++m) {
    for (int k = 0; k < 2; ++k) {
      Instance ins;
      for (const FieldDef& f : schema.fields)
        ins.feature_indices.push_back(static_cast<int>(batch_rng.below(f.vocab_size)));
      ins.label = k;
      ins.scenario = m;
      rows.push_back(ins);
      labels.push_back(k);
    }
  }
  Batch batch;
  for (const Instance& ins : rows) batch.items.push_back(&ins);

  auto loss_at_point = [&]() {
    Tape tape;
    const ForwardResult fwd = model.forward(tape, store, batch);
    const NodeId loss =
        tape.add(tape.bce(fwd.predictions, labels), tape.scale(fwd.orth, lambda));
    return tape.val(loss).item();
  };

  // One analytic pass, gradients snapshotted per group.
  {
    Tape tape;
    const ForwardResult fwd = model.forward(tape, store, batch);
    const NodeId loss =
        tape.add(tape.bce(fwd.predictions, labels), tape.scale(fwd.orth, lambda));
    store.zero_grads();
    tape.backward(loss);
  }
  if (!corrupt_group.empty()) {
    if (!store.has(corrupt_group))
      throw ConfigError("gradcheck: unknown corrupt_group " + corrupt_group);
    for (double& g : store.slot(corrupt_group).grad.v) g += 1e-2;
  }

  GradCheckReport report;
  report.tolerance = tolerance;
  report.fd_step = fd_step;
  report.scalar_count = store.scalar_count();
  if (lambda == 0.0)
    report.rows.push_back(
        {"orthogonality-term", 0.0, true, true, "skipped (zero gradient expected)"});

  for (const std::string& name : store.names()) {
    ParameterStore::Slot& slot = store.slot(name);
    GradCheckRow row;
    row.group = name;
    bool all_zero = true;
    for (double g : slot.grad.v) all_zero &= g == 0.0;
    double worst = 0.0;
    for (int i = 0; i < slot.value.numel(); ++i) {
      const double keep = slot.value.v[i];
      slot.value.v[i] = keep + fd_step;
      const double up = loss_at_point();
      slot.value.v[i] = keep - fd_step;
      const double down = loss_at_point();
      slot.value.v[i] = keep;
      const double fd = (up - down) / (2.0 * fd_step);
      if (all_zero) {
        worst = std::max(worst, std::abs(fd));
      } else {
        const double an = slot.grad.v[i];
        // floor keeps difference-quotient roundoff on near-zero entries from
        // counting as error while still catching dropped gradients
        worst = std::max(worst, std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6}));
      }
    }
    if (all_zero) {
      row.skipped = true;
      row.passed = worst < 1e-7;
      row.note = row.passed ? "skipped (zero gradient expected)"
                            : "analytic gradient is zero but finite differences disagree";
      row.max_rel_err = worst;
    } else {
      row.max_rel_err = worst;
      row.passed = worst < tolerance;
    }
    report.passed &= row.passed;
    report.rows.push_back(row);
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

inline void print_gradcheck(const GradCheckReport& report, std::ostream& out) {
  std::size_t width = 5;
  for (const GradCheckRow& row : report.rows) width = std::max(width, row.group.size());
  out << "gradient check: step " << report.fd_step << ", tolerance " << report.tolerance << ", "
      << report.scalar_count << " scalars\n";
  for (const GradCheckRow& row : report.rows) {
    out << "  " << std::left << std::setw(static_cast<int>(width) + 2) << row.group << std::right
        << std::scientific << std::setprecision(3) << row.max_rel_err << "  "
        << (row.passed ? (row.skipped ? "SKIP" : "PASS") : "FAIL");
    if (!row.note.empty()) out << "  " << row.note;
    out << "\n";
  }
  out << (report.passed ? "PASS" : "FAIL") << " in " << std::fixed << std::setprecision(2)
      << report.seconds << "s\n";
}

}  // namespace optmsm
