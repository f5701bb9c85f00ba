// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "optmsm/errors.hpp"

namespace optmsm {

enum class FieldCategory { kShared, kSpecific };

inline const char* to_string(FieldCategory c) {
  return c == FieldCategory::kShared ? "shared" : "specific";
}

inline FieldCategory field_category_from(const std::string& s) {
  if (s == "shared") return FieldCategory::kShared;
  if (s == "specific") return FieldCategory::kSpecific;
  throw ParseError("unknown field category: " + s);
}

struct FieldDef {
  std::string name;
  FieldCategory category = FieldCategory::kShared;
  int vocab_size = 0;  // index 0 is the reserved out-of-vocabulary bucket
  int embed_dim = 0;
};

/// Declares each feature field as scenario-shared or scenario-specific, with
/// vocabulary size and embedding width, plus the scenario count.
struct FeatureSchema {
  std::vector<FieldDef> fields;
  int scenario_count = 0;

  void validate() const {
    if (scenario_count < 2) throw ConfigError("schema: scenario count must be >= 2");
    if (fields.empty()) throw ConfigError("schema: no fields declared");
    std::unordered_set<std::string> seen;
    bool any_shared = false;
    for (const FieldDef& f : fields) {
      if (f.name.empty()) throw ConfigError("schema: empty field name");
      if (!seen.insert(f.name).second) throw ConfigError("schema: duplicate field " + f.name);
      if (f.vocab_size < 1) throw ConfigError("schema: vocab_size < 1 for field " + f.name);
      if (f.embed_dim < 1) throw ConfigError("schema: embed_dim < 1 for field " + f.name);
      any_shared |= f.category == FieldCategory::kShared;
    }
    if (!any_shared) throw ConfigError("schema: at least one shared field is required");
  }

  std::vector<int> shared_field_indices() const { return indices_of(FieldCategory::kShared); }
  std::vector<int> specific_field_indices() const { return indices_of(FieldCategory::kSpecific); }

  int field_index(const std::string& name) const {
    for (std::size_t i = 0; i < fields.size(); ++i)
      if (fields[i].name == name) return static_cast<int>(i);
    throw ConfigError("schema: unknown field " + name);
  }

  std::string to_text() const {
    std::ostringstream os;
    os << "scenarios=" << scenario_count << "\n";
    for (const FieldDef& f : fields)
      os << f.name << " " << to_string(f.category) << " " << f.vocab_size << " " << f.embed_dim
         << "\n";
    return os.str();
  }

  static FeatureSchema from_text(const std::string& text) {
    FeatureSchema s;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty() || line[0] == '#') continue;
      if (line.rfind("scenarios=", 0) == 0) {
        try {
          s.scenario_count = std::stoi(line.substr(10));
        } catch (const std::exception&) {
          throw ParseError("schema line " + std::to_string(lineno) + ": bad scenario count");
        }
        continue;
      }
      std::istringstream ls(line);
      FieldDef f;
      std::string cat;
      if (!(ls >> f.name >> cat >> f.vocab_size >> f.embed_dim))
        throw ParseError("schema line " + std::to_string(lineno) + ": expected `name category vocab_size embed_dim`");
      f.category = field_category_from(cat);
      s.fields.push_back(f);
    }
    return s;
  }

  /// FNV-1a over the canonical text form; ties model files to the schema
  /// they were trained with.
  std::uint64_t hash() const {
    const std::string text = to_text();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : text) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    return h;
  }

  std::string hash_hex() const {
    std::ostringstream os;
    os << std::hex << hash();
    return os.str();
  }

 private:
  std::vector<int> indices_of(FieldCategory c) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < fields.size(); ++i)
      if (fields[i].category == c) out.push_back(static_cast<int>(i));
    return out;
  }
};

inline void save_schema(const FeatureSchema& s, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write schema file " + path);
  out << s.to_text();
}

inline FeatureSchema load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open schema file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return FeatureSchema::from_text(ss.str());
}

}  // namespace optmsm
