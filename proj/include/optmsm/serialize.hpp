// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "optmsm/model.hpp"
#include "optmsm/params.hpp"
#include "optmsm/schema.hpp"

namespace optmsm {

inline constexpr const char* kModelMagic = "OPTMSM-MODEL v1";

inline nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  return nlohmann::json{{"baseline", to_string(cfg.baseline)},
                        {"variant", to_string(cfg.variant)},
                        {"orth_mode", to_string(cfg.orth_mode)},
                        {"transfer_widths", cfg.transfer_widths},
                        {"tower_widths", cfg.tower_widths},
                        {"hyper_hidden", cfg.hyper_hidden},
                        {"use_priors", cfg.use_priors},
                        {"use_hypernetwork", cfg.use_hypernetwork}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.baseline = baseline_mode_from(j.at("baseline").get<std::string>());
  cfg.variant = transfer_variant_from(j.at("variant").get<std::string>());
  cfg.orth_mode = orth_mode_from(j.at("orth_mode").get<std::string>());
  cfg.transfer_widths = j.at("transfer_widths").get<std::vector<int>>();
  cfg.tower_widths = j.at("tower_widths").get<std::vector<int>>();
  cfg.hyper_hidden = j.at("hyper_hidden").get<int>();
  cfg.use_priors = j.at("use_priors").get<bool>();
  cfg.use_hypernetwork = j.at("use_hypernetwork").get<bool>();
  return cfg;
}

/// A persisted model: schema fingerprint, configuration, and parameters.
struct ModelFile {
  std::string schema_hash;
  ModelConfig config;
  ParameterStore params;
};

/// Layout: magic line, one-line JSON manifest (schema hash, config, tensor
/// names and shapes), then the tensors as raw row-major f64 in manifest order.
inline void save_model(const std::string& path, const std::string& schema_hash,
                       const ModelConfig& cfg, const ParameterStore& store) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write " + path);
  nlohmann::json manifest;
  manifest["schema_hash"] = schema_hash;
  manifest["config"] = model_config_to_json(cfg);
  nlohmann::json params = nlohmann::json::array();
  for (const std::string& name : store.names()) {
    const Tensor& v = store.value(name);
    params.push_back(nlohmann::json::array({name, v.rows, v.cols}));
  }
  manifest["params"] = params;
  out << kModelMagic << "\n" << manifest.dump() << "\n";
  for (const std::string& name : store.names()) {
    const Tensor& v = store.value(name);
    out.write(reinterpret_cast<const char*>(v.v.data()),
              static_cast<std::streamsize>(v.v.size() * sizeof(double)));
  }
  if (!out) throw ParseError("write failed: " + path);
}

inline ModelFile load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path);
  std::string magic;
  std::getline(in, magic);
  if (magic != kModelMagic)
    throw ParseError(path + ": not a model file (bad magic line `" + magic + "`)");
  std::string manifest_line;
  std::getline(in, manifest_line);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(manifest_line);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": bad manifest: " + e.what());
  }
  ModelFile file;
  file.schema_hash = manifest.at("schema_hash").get<std::string>();
  file.config = model_config_from_json(manifest.at("config"));
  for (const nlohmann::json& entry : manifest.at("params")) {
    const std::string name = entry.at(0).get<std::string>();
    const int rows = entry.at(1).get<int>();
    const int cols = entry.at(2).get<int>();
    if (rows < 1 || cols < 1) throw ParseError(path + ": bad shape for " + name);
    Tensor v = Tensor::zeros(rows, cols);
    in.read(reinterpret_cast<char*>(v.v.data()),
            static_cast<std::streamsize>(v.v.size() * sizeof(double)));
    if (in.gcount() != static_cast<std::streamsize>(v.v.size() * sizeof(double)))
      throw ParseError(path + ": truncated blob at " + name);
    file.params.create(name, v);
  }
  char extra;
  if (in.read(&extra, 1)) throw ParseError(path + ": trailing bytes after last tensor");
  return file;
}

/// Bind a loaded model to a schema: the fingerprints must match and the
/// stored tensors must have exactly the names and shapes the configuration
/// would create. Fails loudly rather than evaluating a mismatched model.
inline void check_model_schema(const ModelFile& file, const FeatureSchema& schema) {
  const std::string expected = schema.hash_hex();
  if (file.schema_hash != expected)
    throw ConfigError("model was trained against schema " + file.schema_hash +
                      " but the data uses schema " + expected);
  const Model model(schema, file.config);
  ParameterStore fresh;
  Rng rng(0);
  model.init_params(fresh, rng);
  if (fresh.names() != file.params.names())
    throw ShapeError("model file parameter set does not match its configuration");
  for (const std::string& name : fresh.names()) {
    const Tensor& a = fresh.value(name);
    const Tensor& b = file.params.value(name);
    if (a.rows != b.rows || a.cols != b.cols)
      throw ShapeError("model file tensor " + name + " has shape " + b.shape_str() +
                       ", expected " + a.shape_str());
  }
}

}  // namespace optmsm
