// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "optmsm/trainer.hpp"

namespace optmsm {

// -------------------------------------------------------------- statistics

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double sum = 0.0;
  for (double x : v) sum += x;
  return sum / static_cast<double>(v.size());
}

/// Sample standard deviation (n - 1); 0 for fewer than two points.
inline double stddev_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

/// One-sided paired t-test: p-value for the alternative mean(a - b) > 0.
/// A zero-variance difference vector degenerates to p = 0 or 1 by its sign.
inline double paired_t_pvalue_greater(const std::vector<double>& a,
                                      const std::vector<double>& b) {
  if (a.size() != b.size()) throw ConfigError("paired t-test: length mismatch");
  const int n = static_cast<int>(a.size());
  if (n < 2) throw ConfigError("paired t-test: need at least two pairs");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double md = mean_of(d);
  const double sd = stddev_of(d);
  if (sd == 0.0) return md > 0.0 ? 0.0 : 1.0;
  const double t = md / (sd / std::sqrt(static_cast<double>(n)));
  const boost::math::students_t dist(static_cast<double>(n - 1));
  return 1.0 - boost::math::cdf(dist, t);
}

// -------------------------------------------------------------- comparison

/// Per-scenario test metrics of one configuration, one entry per seed.
struct CompareCell {
  std::vector<double> auc;
  std::vector<double> logloss;
};

struct CompareRow {
  std::string name;
  std::vector<CompareCell> cells;  ///< indexed by scenario - 1
};

struct CompareTable {
  int scenario_count = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<CompareRow> rows;  ///< rows[0] is the reference configuration
};

/// Train every (configuration, seed) pair and collect final test metrics.
/// The first configuration is the reference for decrements and p-values.
inline CompareTable compare(const Dataset& data, const FeatureSchema& schema,
                            const ModelConfig& base_model,
                            const std::vector<std::pair<std::string, TrainConfig>>& configs,
                            const std::vector<std::uint64_t>& seeds) {
  if (configs.empty()) throw ConfigError("compare: no configurations");
  if (seeds.empty()) throw ConfigError("compare: no seeds");
  CompareTable table;
  table.scenario_count = schema.scenario_count;
  table.seeds = seeds;
  for (const auto& [name, cfg] : configs) {
    CompareRow row;
    row.name = name;
    row.cells.resize(schema.scenario_count);
    for (std::uint64_t seed : seeds) {
      TrainConfig run_cfg = cfg;
      run_cfg.seed = seed;
      const TrainResult res = train(data, schema, base_model, run_cfg);
      for (const MetricsRecord& rec : res.history) {
        if (rec.phase != "final" || rec.split != "test") continue;
        CompareCell& cell = row.cells[rec.metrics.scenario - 1];
        if (rec.metrics.auc.defined) cell.auc.push_back(rec.metrics.auc.value);
        cell.logloss.push_back(rec.metrics.logloss);
      }
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

/// Summary statistics for one (configuration, scenario) cell, with the AUC
/// decrement and one-sided paired p-value against the reference row.
struct CellSummary {
  int seeds = 0;
  double mean_auc = 0.0;
  double std_auc = 0.0;
  double mean_logloss = 0.0;
  double std_logloss = 0.0;
  double decrement_pct = 0.0;  ///< (ref - this) / ref * 100
  double p_value = std::numeric_limits<double>::quiet_NaN();  ///< ref > this
};

inline CellSummary summarize_cell(const CompareTable& table, int row, int scenario) {
  const CompareCell& cell = table.rows[row].cells[scenario - 1];
  const CompareCell& ref = table.rows[0].cells[scenario - 1];
  CellSummary s;
  s.seeds = static_cast<int>(cell.auc.size());
  s.mean_auc = mean_of(cell.auc);
  s.std_auc = stddev_of(cell.auc);
  s.mean_logloss = mean_of(cell.logloss);
  s.std_logloss = stddev_of(cell.logloss);
  if (row > 0 && !ref.auc.empty() && s.mean_auc != 0.0) {
    const double ref_mean = mean_of(ref.auc);
    if (ref_mean != 0.0) s.decrement_pct = (ref_mean - s.mean_auc) / ref_mean * 100.0;
    if (ref.auc.size() == cell.auc.size() && cell.auc.size() >= 2)
      s.p_value = paired_t_pvalue_greater(ref.auc, cell.auc);
  }
  return s;
}

inline void write_compare_csv(const CompareTable& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path);
  out << "config,scenario,seeds,mean_auc,std_auc,mean_logloss,std_logloss,"
         "auc_decrement_pct,p_value_vs_first\n";
  out << std::setprecision(17);
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    for (int m = 1; m <= table.scenario_count; ++m) {
      const CellSummary s = summarize_cell(table, static_cast<int>(r), m);
      out << table.rows[r].name << ',' << m << ',' << s.seeds << ',' << s.mean_auc << ','
          << s.std_auc << ',' << s.mean_logloss << ',' << s.std_logloss << ','
          << s.decrement_pct << ',';
      if (std::isnan(s.p_value))
        out << "";
      else
        out << s.p_value;
      out << "\n";
    }
  }
}

/// Human-readable table: AUC mean +/- std per scenario, with the relative
/// decrement and p-value against the first row in brackets.
inline void print_compare(const CompareTable& table, std::ostream& out) {
  auto cell_text = [&](std::size_t r, int m) {
    const CellSummary s = summarize_cell(table, static_cast<int>(r), m);
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << s.mean_auc << "+/-" << s.std_auc;
    if (r > 0) {
      os << " (" << std::showpos << std::setprecision(2) << -s.decrement_pct << std::noshowpos
         << "%";
      if (!std::isnan(s.p_value)) os << ", p=" << std::setprecision(4) << s.p_value;
      os << ")";
    }
    return os.str();
  };
  std::size_t name_width = 6;
  for (const CompareRow& row : table.rows) name_width = std::max(name_width, row.name.size());
  out << "test AUC over " << table.seeds.size() << " seed(s)\n";
  out << std::left << std::setw(static_cast<int>(name_width) + 2) << "config";
  for (int m = 1; m <= table.scenario_count; ++m)
    out << std::setw(37) << ("scenario " + std::to_string(m));
  out << "\n";
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    out << std::left << std::setw(static_cast<int>(name_width) + 2) << table.rows[r].name;
    for (int m = 1; m <= table.scenario_count; ++m) out << std::setw(37) << cell_text(r, m);
    out << "\n";
  }
  out << std::right;
}

}  // namespace optmsm
