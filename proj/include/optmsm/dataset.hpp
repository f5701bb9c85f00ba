// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "optmsm/errors.hpp"
#include "optmsm/rng.hpp"
#include "optmsm/schema.hpp"

namespace optmsm {

/// One labeled impression: integer index per field, binary label, 1-based
/// scenario indicator.
struct Instance {
  std::vector<int> feature_indices;
  int label = 0;
  int scenario = 1;
};

using Split = std::vector<Instance>;

struct Dataset {
  Split train;
  Split valid;
  Split test;

  const Split& split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "valid") return valid;
    if (name == "test") return test;
    throw ConfigError("unknown split: " + name);
  }
};

/// Mini-batch view; instances live in the owning split.
struct Batch {
  std::vector<const Instance*> items;
  int size() const { return static_cast<int>(items.size()); }
};

/// One epoch of batches: a seed-deterministic permutation of the split cut
/// into batch_size chunks (last chunk may be short). shuffle=false keeps
/// the natural order.
inline std::vector<Batch> make_batches(const Split& split, int batch_size,
                                       std::uint64_t shuffle_seed, bool shuffle = true) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  std::vector<int> order(split.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  if (shuffle) {
    Rng rng(shuffle_seed);
    rng.shuffle(order);
  }
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    Batch b;
    const std::size_t end = std::min(order.size(), start + batch_size);
    for (std::size_t i = start; i < end; ++i) b.items.push_back(&split[order[i]]);
    batches.push_back(std::move(b));
  }
  return batches;
}

// --------------------------------------------------------------------- CSV

/// Header is the schema field names in order, then `label`, then `scenario`.
inline void write_csv(const Split& rows, const FeatureSchema& schema, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path);
  for (const FieldDef& f : schema.fields) out << f.name << ",";
  out << "label,scenario\n";
  for (const Instance& ins : rows) {
    for (int idx : ins.feature_indices) out << idx << ",";
    out << ins.label << "," << ins.scenario << "\n";
  }
}

/// Parses rows into Instances. Out-of-vocabulary feature indices map to the
/// reserved bucket 0; bad scenario or label values are rejected with the
/// offending line number.
inline Split load_csv(const std::string& path, const FeatureSchema& schema) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();

  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  std::vector<std::string> expected;
  for (const FieldDef& f : schema.fields) expected.push_back(f.name);
  expected.push_back("label");
  expected.push_back("scenario");
  for (const std::string& col : expected) {
    bool found = false;
    for (const std::string& h : header) found |= h == col;
    if (!found) throw ParseError(path + ": missing column `" + col + "`");
  }
  if (header != expected)
    throw ParseError(path + ": header does not match schema field order");

  const int nf = static_cast<int>(schema.fields.size());
  Split rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<long> vals;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t pos = 0;
        const long v = std::stol(cell, &pos);
        if (pos != cell.size()) throw std::invalid_argument(cell);
        vals.push_back(v);
      } catch (const std::exception&) {
        throw ParseError(path + " line " + std::to_string(lineno) + ": non-integer value `" +
                         cell + "`");
      }
    }
    if (static_cast<int>(vals.size()) != nf + 2)
      throw ParseError(path + " line " + std::to_string(lineno) + ": expected " +
                       std::to_string(nf + 2) + " columns, got " + std::to_string(vals.size()));
    Instance ins;
    ins.feature_indices.resize(nf);
    for (int f = 0; f < nf; ++f) {
      const long v = vals[f];
      ins.feature_indices[f] =
          (v < 0 || v >= schema.fields[f].vocab_size) ? 0 : static_cast<int>(v);
    }
    const long label = vals[nf];
    if (label != 0 && label != 1)
      throw ParseError(path + " line " + std::to_string(lineno) + ": label must be 0 or 1");
    ins.label = static_cast<int>(label);
    const long scen = vals[nf + 1];
    if (scen < 1 || scen > schema.scenario_count)
      throw DataError(path + " line " + std::to_string(lineno) + ": scenario " +
                      std::to_string(scen) + " outside [1, " +
                      std::to_string(schema.scenario_count) + "]");
    ins.scenario = static_cast<int>(scen);
    rows.push_back(std::move(ins));
  }
  return rows;
}

inline void save_dataset(const Dataset& ds, const FeatureSchema& schema, const std::string& dir) {
  write_csv(ds.train, schema, dir + "/train.csv");
  write_csv(ds.valid, schema, dir + "/valid.csv");
  write_csv(ds.test, schema, dir + "/test.csv");
  save_schema(schema, dir + "/schema.txt");
}

inline Dataset load_dataset(const std::string& dir, const FeatureSchema& schema) {
  Dataset ds;
  ds.train = load_csv(dir + "/train.csv", schema);
  ds.valid = load_csv(dir + "/valid.csv", schema);
  ds.test = load_csv(dir + "/test.csv", schema);
  return ds;
}

}  // namespace optmsm
