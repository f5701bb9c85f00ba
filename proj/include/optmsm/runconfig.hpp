// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "optmsm/generator.hpp"
#include "optmsm/trainer.hpp"

namespace optmsm {

/// One declarative run description: what the data looks like ([schema]), how
/// to synthesize it ([generator]), the network shape ([model]), and the
/// optimization recipe ([train]).  Sections are optional; each command
/// demands the ones it needs.
struct RunConfig {
  FeatureSchema schema;
  GeneratorConfig generator;
  ModelConfig model;
  TrainConfig train;
  bool has_schema = false;
  bool has_generator = false;
  bool has_model = false;
  bool has_train = false;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> out;
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

struct KeyContext {
  const std::string& origin;
  int line;
  const std::string& key;
  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError(origin + " line " + std::to_string(line) + ": " + what + " for key `" +
                     key + "`");
  }
};

inline long parse_long(const std::string& v, const KeyContext& ctx) {
  try {
    std::size_t pos = 0;
    const long x = std::stol(v, &pos);
    if (pos != v.size()) ctx.fail("non-integer value `" + v + "`");
    return x;
  } catch (const std::logic_error&) {
    ctx.fail("non-integer value `" + v + "`");
  }
}

inline double parse_double(const std::string& v, const KeyContext& ctx) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) ctx.fail("non-numeric value `" + v + "`");
    return x;
  } catch (const std::logic_error&) {
    ctx.fail("non-numeric value `" + v + "`");
  }
}

inline bool parse_bool(const std::string& v, const KeyContext& ctx) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  ctx.fail("non-boolean value `" + v + "` (use true/false)");
}

inline std::vector<int> parse_int_list(const std::string& v, const KeyContext& ctx) {
  std::vector<int> out;
  for (const std::string& item : split_list(v)) out.push_back(static_cast<int>(parse_long(item, ctx)));
  return out;
}

inline std::vector<double> parse_double_list(const std::string& v, const KeyContext& ctx) {
  std::vector<double> out;
  for (const std::string& item : split_list(v)) out.push_back(parse_double(item, ctx));
  return out;
}

/// Shortest round-trip decimal form, so resolved files stay readable without
/// losing a single bit.
inline std::string num(double x) { return nlohmann::json(x).dump(); }

}  // namespace detail

// ----------------------------------------------------------------- parsing

/// Parse the INI-like run configuration. Unknown sections and keys are
/// rejected outright: a config that names something the program will not use
/// is a config hiding a typo.
inline RunConfig parse_run_config(const std::string& text, const std::string& origin) {
  RunConfig rc;
  bool generator_scenarios_set = false;
  std::string section;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = detail::trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ParseError(origin + " line " + std::to_string(line_no) + ": unterminated section");
      section = line.substr(1, line.size() - 2);
      if (section == "schema")
        rc.has_schema = true;
      else if (section == "generator")
        rc.has_generator = true;
      else if (section == "model")
        rc.has_model = true;
      else if (section == "train")
        rc.has_train = true;
      else
        throw ParseError(origin + " line " + std::to_string(line_no) + ": unknown section [" +
                         section + "]");
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError(origin + " line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (section.empty())
      throw ParseError(origin + " line " + std::to_string(line_no) + ": key `" + key +
                       "` outside any section");
    const detail::KeyContext ctx{origin, line_no, key};

    if (section == "schema") {
      if (key == "scenario_count") {
        rc.schema.scenario_count = static_cast<int>(detail::parse_long(value, ctx));
      } else if (key == "field") {
        const std::vector<std::string> tok = detail::split_ws(value);
        if (tok.size() != 4)
          ctx.fail("expected `name category vocab_size embed_dim`, got `" + value + "`");
        FieldDef f;
        f.name = tok[0];
        f.category = field_category_from(tok[1]);
        f.vocab_size = static_cast<int>(detail::parse_long(tok[2], ctx));
        f.embed_dim = static_cast<int>(detail::parse_long(tok[3], ctx));
        rc.schema.fields.push_back(f);
      } else {
        ctx.fail("unknown key in [schema]");
      }
    } else if (section == "generator") {
      if (key == "scenario_count") {
        rc.generator.scenario_count = static_cast<int>(detail::parse_long(value, ctx));
        generator_scenarios_set = true;
      } else if (key == "samples") {
        rc.generator.samples = detail::parse_long(value, ctx);
      } else if (key == "proportions") {
        rc.generator.proportions = detail::parse_double_list(value, ctx);
      } else if (key == "shared_signal") {
        rc.generator.shared_signal = detail::parse_double(value, ctx);
      } else if (key == "specific_signal") {
        rc.generator.specific_signal = detail::parse_double(value, ctx);
      } else if (key == "interaction_signal") {
        rc.generator.interaction_signal = detail::parse_double(value, ctx);
      } else if (key == "base_click_rate") {
        rc.generator.base_click_rate = detail::parse_double(value, ctx);
      } else if (key == "seed") {
        rc.generator.seed = static_cast<std::uint64_t>(detail::parse_long(value, ctx));
      } else if (key == "train_frac") {
        rc.generator.train_frac = detail::parse_double(value, ctx);
      } else if (key == "valid_frac") {
        rc.generator.valid_frac = detail::parse_double(value, ctx);
      } else {
        ctx.fail("unknown key in [generator]");
      }
    } else if (section == "model") {
      if (key == "orth_mode") {
        rc.model.orth_mode = orth_mode_from(value);
      } else if (key == "transfer_widths") {
        rc.model.transfer_widths = detail::parse_int_list(value, ctx);
      } else if (key == "tower_widths") {
        rc.model.tower_widths = detail::parse_int_list(value, ctx);
      } else if (key == "hyper_hidden") {
        rc.model.hyper_hidden = static_cast<int>(detail::parse_long(value, ctx));
      } else {
        ctx.fail("unknown key in [model]");
      }
    } else if (section == "train") {
      if (key == "learning_rate") {
        rc.train.learning_rate = detail::parse_double(value, ctx);
      } else if (key == "l2_weight") {
        rc.train.l2_weight = detail::parse_double(value, ctx);
      } else if (key == "dropout_rate") {
        rc.train.dropout_rate = detail::parse_double(value, ctx);
      } else if (key == "batch_size") {
        rc.train.batch_size = static_cast<int>(detail::parse_long(value, ctx));
      } else if (key == "lambda") {
        rc.train.lambda = detail::parse_double(value, ctx);
      } else if (key == "epochs") {
        rc.train.epochs = static_cast<int>(detail::parse_long(value, ctx));
      } else if (key == "patience") {
        rc.train.patience = static_cast<int>(detail::parse_long(value, ctx));
      } else if (key == "seed") {
        rc.train.seed = static_cast<std::uint64_t>(detail::parse_long(value, ctx));
      } else if (key == "variant") {
        rc.train.variant = transfer_variant_from(value);
      } else if (key == "baseline") {
        rc.train.baseline = baseline_mode_from(value);
      } else if (key == "no_priors") {
        rc.train.no_priors = detail::parse_bool(value, ctx);
      } else if (key == "no_constraint") {
        rc.train.no_constraint = detail::parse_bool(value, ctx);
      } else if (key == "no_hypernetwork") {
        rc.train.no_hypernetwork = detail::parse_bool(value, ctx);
      } else {
        ctx.fail("unknown key in [train]");
      }
    }
  }
  if (rc.has_schema && !generator_scenarios_set)
    rc.generator.scenario_count = rc.schema.scenario_count;
  if (rc.has_schema) rc.schema.validate();
  return rc;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path);
}

// ----------------------------------------------------------------- writing

inline std::string schema_section_text(const FeatureSchema& s) {
  std::ostringstream os;
  os << "[schema]\n";
  os << "scenario_count = " << s.scenario_count << "\n";
  for (const FieldDef& f : s.fields)
    os << "field = " << f.name << " " << to_string(f.category) << " " << f.vocab_size << " "
       << f.embed_dim << "\n";
  return os.str();
}

inline std::string generator_section_text(const GeneratorConfig& g) {
  std::ostringstream os;
  os << "[generator]\n";
  os << "scenario_count = " << g.scenario_count << "\n";
  os << "samples = " << g.samples << "\n";
  os << "proportions = ";
  for (std::size_t i = 0; i < g.proportions.size(); ++i)
    os << (i ? ", " : "") << detail::num(g.proportions[i]);
  os << "\n";
  os << "shared_signal = " << detail::num(g.shared_signal) << "\n";
  os << "specific_signal = " << detail::num(g.specific_signal) << "\n";
  os << "interaction_signal = " << detail::num(g.interaction_signal) << "\n";
  os << "base_click_rate = " << detail::num(g.base_click_rate) << "\n";
  os << "seed = " << g.seed << "\n";
  os << "train_frac = " << detail::num(g.train_frac) << "\n";
  os << "valid_frac = " << detail::num(g.valid_frac) << "\n";
  return os.str();
}

inline std::string model_section_text(const ModelConfig& m) {
  std::ostringstream os;
  os << "[model]\n";
  os << "orth_mode = " << to_string(m.orth_mode) << "\n";
  os << "transfer_widths = ";
  for (std::size_t i = 0; i < m.transfer_widths.size(); ++i)
    os << (i ? ", " : "") << m.transfer_widths[i];
  os << "\n";
  os << "tower_widths = ";
  for (std::size_t i = 0; i < m.tower_widths.size(); ++i)
    os << (i ? ", " : "") << m.tower_widths[i];
  os << "\n";
  os << "hyper_hidden = " << m.hyper_hidden << "\n";
  return os.str();
}

inline std::string train_section_text(const TrainConfig& t) {
  std::ostringstream os;
  os << "[train]\n";
  os << "learning_rate = " << detail::num(t.learning_rate) << "\n";
  os << "l2_weight = " << detail::num(t.l2_weight) << "\n";
  os << "dropout_rate = " << detail::num(t.dropout_rate) << "\n";
  os << "batch_size = " << t.batch_size << "\n";
  os << "lambda = " << detail::num(t.lambda) << "\n";
  os << "epochs = " << t.epochs << "\n";
  os << "patience = " << t.patience << "\n";
  os << "seed = " << t.seed << "\n";
  os << "variant = " << to_string(t.variant) << "\n";
  os << "baseline = " << to_string(t.baseline) << "\n";
  os << "no_priors = " << (t.no_priors ? "true" : "false") << "\n";
  os << "no_constraint = " << (t.no_constraint ? "true" : "false") << "\n";
  os << "no_hypernetwork = " << (t.no_hypernetwork ? "true" : "false") << "\n";
  return os.str();
}

/// Fully explicit, reloadable text of every present section.
inline std::string resolved_config_text(const RunConfig& rc) {
  std::string out;
  if (rc.has_schema) out += schema_section_text(rc.schema);
  if (rc.has_generator) out += (out.empty() ? "" : "\n") + generator_section_text(rc.generator);
  if (rc.has_model) out += (out.empty() ? "" : "\n") + model_section_text(rc.model);
  if (rc.has_train) out += (out.empty() ? "" : "\n") + train_section_text(rc.train);
  return out;
}

inline void write_resolved_config(const RunConfig& rc, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path);
  out << resolved_config_text(rc);
}

// -------------------------------------------------------------- schema diff

/// Line-per-field difference listing for the refusal message when a config's
/// [schema] disagrees with the schema stored beside the data.
inline std::string schema_diff(const FeatureSchema& a, const FeatureSchema& b,
                               const std::string& a_name, const std::string& b_name) {
  std::ostringstream os;
  if (a.scenario_count != b.scenario_count)
    os << "  scenario_count: " << a_name << "=" << a.scenario_count << " " << b_name << "="
       << b.scenario_count << "\n";
  const std::size_t n = std::max(a.fields.size(), b.fields.size());
  for (std::size_t i = 0; i < n; ++i) {
    const std::string left =
        i < a.fields.size()
            ? a.fields[i].name + " " + to_string(a.fields[i].category) + " " +
                  std::to_string(a.fields[i].vocab_size) + " " +
                  std::to_string(a.fields[i].embed_dim)
            : "(missing)";
    const std::string right =
        i < b.fields.size()
            ? b.fields[i].name + " " + to_string(b.fields[i].category) + " " +
                  std::to_string(b.fields[i].vocab_size) + " " +
                  std::to_string(b.fields[i].embed_dim)
            : "(missing)";
    if (left != right)
      os << "  field " << i << ": " << a_name << "=[" << left << "] " << b_name << "=[" << right
         << "]\n";
  }
  return os.str();
}

}  // namespace optmsm
