// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "optmsm/compare.hpp"
#include "optmsm/generator.hpp"
#include "optmsm/gradcheck.hpp"
#include "optmsm/runconfig.hpp"
#include "optmsm/serialize.hpp"
#include "optmsm/trainer.hpp"

namespace optmsm {
namespace cli {

/// OPTMSM_LOG_LEVEL: 0 silent, 1 progress (default), 2 debug.
inline int log_level() {
  const char* env = std::getenv("OPTMSM_LOG_LEVEL");
  if (env == nullptr) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (end == env || *end != '\0') return 1;
  return static_cast<int>(std::clamp(v, 0L, 2L));
}

struct Logger {
  std::ostream& err;
  int level;
  void info(const std::string& line) const {
    if (level >= 1) err << line << "\n";
  }
  void debug(const std::string& line) const {
    if (level >= 2) err << line << "\n";
  }
};

namespace detail_cli {

inline std::string fmt(double x, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << x;
  return os.str();
}

inline std::string auc_text(const AucResult& a, int digits) {
  return a.defined ? fmt(a.value, digits) : std::string("n/a");
}

/// Config-name stem for table rows; an index suffix keeps repeats apart.
inline std::string row_name(const std::string& path, std::size_t index,
                            const std::vector<std::string>& taken) {
  std::string stem = std::filesystem::path(path).stem().string();
  if (stem.empty()) stem = "config" + std::to_string(index);
  if (std::find(taken.begin(), taken.end(), stem) != taken.end())
    stem += "#" + std::to_string(index);
  return stem;
}

inline std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  for (const std::string& item : detail::split_list(text)) {
    try {
      std::size_t pos = 0;
      const long v = std::stol(item, &pos);
      if (pos != item.size() || v < 0) throw std::invalid_argument(item);
      seeds.push_back(static_cast<std::uint64_t>(v));
    } catch (const std::logic_error&) {
      throw ConfigError("bad seed `" + item + "` in --seeds");
    }
  }
  if (seeds.empty()) throw ConfigError("--seeds must name at least one seed");
  return seeds;
}

inline void apply_ablations(TrainConfig& cfg, const std::vector<std::string>& ablations) {
  for (const std::string& a : ablations) {
    if (a == "no_priors")
      cfg.no_priors = true;
    else if (a == "no_constraint")
      cfg.no_constraint = true;
    else if (a == "no_hypernetwork")
      cfg.no_hypernetwork = true;
    else
      throw ConfigError("unknown ablation `" + a + "`");
  }
}

struct LoadedData {
  FeatureSchema schema;
  Dataset dataset;
};

inline LoadedData load_data_dir(const std::string& dir) {
  LoadedData d;
  d.schema = load_schema(dir + "/schema.txt");
  d.dataset = load_dataset(dir, d.schema);
  return d;
}

inline const Split& pick_split(const Dataset& ds, const std::string& name) {
  if (name == "train") return ds.train;
  if (name == "valid") return ds.valid;
  if (name == "test") return ds.test;
  throw ConfigError("unknown split `" + name + "`");
}

}  // namespace detail_cli

// ------------------------------------------------------------------- gen

inline int cmd_gen(const std::string& config_path, const std::string& out_dir, bool seed_set,
                   std::uint64_t seed, std::ostream& /*out*/, const Logger& log) {
  RunConfig rc = load_run_config(config_path);
  if (!rc.has_schema) throw ConfigError("gen: " + config_path + " needs a [schema] section");
  rc.has_generator = true;
  if (seed_set) rc.generator.seed = seed;
  rc.generator.validate();

  std::filesystem::create_directories(out_dir);
  const GeneratedData gd = generate(rc.generator, rc.schema);
  save_dataset(gd.dataset, rc.schema, out_dir);
  save_teacher(gd.teacher, out_dir + "/teacher.json");
  write_resolved_config(rc, out_dir + "/resolved.ini");

  std::vector<long> per_scenario(rc.schema.scenario_count, 0);
  long total = 0;
  for (const Split* split : {&gd.dataset.train, &gd.dataset.valid, &gd.dataset.test})
    for (const Instance& ins : *split) {
      ++per_scenario[ins.scenario - 1];
      ++total;
    }
  log.info("wrote " + std::to_string(total) + " samples to " + out_dir);
  for (int m = 1; m <= rc.schema.scenario_count; ++m)
    log.info("  scenario " + std::to_string(m) + ": " + std::to_string(per_scenario[m - 1]) +
             " samples (" +
             detail_cli::fmt(100.0 * per_scenario[m - 1] / static_cast<double>(total), 2) + "%)");
  return 0;
}

// ----------------------------------------------------------------- train

inline int cmd_train(const std::string& config_path, const std::string& data_dir,
                     const std::string& out_dir, bool seed_set, std::uint64_t seed,
                     const std::string& variant, bool lambda_set, double lambda,
                     const std::vector<std::string>& ablations, std::ostream& /*out*/,
                     const Logger& log) {
  RunConfig rc = load_run_config(config_path);
  const detail_cli::LoadedData data = detail_cli::load_data_dir(data_dir);
  if (rc.has_schema && rc.schema.hash_hex() != data.schema.hash_hex())
    throw ConfigError("config [schema] does not match the schema stored with the data:\n" +
                      schema_diff(rc.schema, data.schema, "config", "data"));
  rc.schema = data.schema;
  rc.has_schema = true;
  rc.has_model = true;
  rc.has_train = true;

  if (seed_set) rc.train.seed = seed;
  if (!variant.empty()) rc.train.variant = transfer_variant_from(variant);
  if (lambda_set) rc.train.lambda = lambda;
  detail_cli::apply_ablations(rc.train, ablations);
  rc.train.validate();
  rc.model.validate();

  std::filesystem::create_directories(out_dir);
  write_resolved_config(rc, out_dir + "/resolved.ini");
  log.info("training " + std::string(to_string(rc.train.baseline)) + "/" +
           to_string(rc.train.variant) + " on " + std::to_string(data.dataset.train.size()) +
           " samples, seed " + std::to_string(rc.train.seed));
  log.info("lambda_effective = " + detail::num(rc.train.lambda_effective()));

  const TrainResult res = train(data.dataset, data.schema, rc.model, rc.train);

  save_model(out_dir + "/model.bin", data.schema.hash_hex(), rc.train.apply(rc.model),
             res.params);
  write_metrics(res, out_dir + "/metrics.jsonl");
  write_timing(res, out_dir + "/timing.txt");

  if (res.diverged) log.info("WARNING: training diverged (" + res.divergence_note + ")");
  log.info("best epoch " + std::to_string(res.best_epoch) + ", mean validation AUC " +
           detail_cli::fmt(res.best_valid_auc, 4));
  for (const MetricsRecord& rec : res.history)
    if (rec.phase == "final" && rec.split == "test")
      log.info("  test scenario " + std::to_string(rec.metrics.scenario) + ": AUC " +
               detail_cli::auc_text(rec.metrics.auc, 4) + ", logloss " +
               detail_cli::fmt(rec.metrics.logloss, 4) + " (" +
               std::to_string(rec.metrics.samples) + " samples)");
  log.info("wrote " + out_dir + "/model.bin, metrics.jsonl, timing.txt, resolved.ini");
  return 0;
}

// ------------------------------------------------------------------ eval

inline int cmd_eval(const std::string& model_path, const std::string& data_dir,
                    const std::string& split_name, const std::string& out_path, std::ostream& out,
                    const Logger& log) {
  const detail_cli::LoadedData data = detail_cli::load_data_dir(data_dir);
  const ModelFile mf = load_model(model_path);
  check_model_schema(mf, data.schema);
  const Split& split = detail_cli::pick_split(data.dataset, split_name);
  log.info("evaluating " + model_path + " on " + split_name + " (" +
           std::to_string(split.size()) + " samples)");

  const Model model(data.schema, mf.config);
  ParameterStore params = mf.params;
  const std::vector<ScenarioMetrics> per_scenario = evaluate(model, params, split, 256);

  out << "scenario  auc       logloss   samples\n";
  for (const ScenarioMetrics& sm : per_scenario)
    out << std::left << std::setw(10) << sm.scenario << std::setw(10)
        << detail_cli::auc_text(sm.auc, 6) << std::setw(10)
        << detail_cli::fmt(sm.logloss, 6) << sm.samples << "\n";

  if (!out_path.empty()) {
    std::ofstream f(out_path);
    if (!f) throw ParseError("cannot write " + out_path);
    f << "scenario,auc,logloss,samples\n" << std::setprecision(17);
    for (const ScenarioMetrics& sm : per_scenario) {
      f << sm.scenario << ',';
      if (sm.auc.defined)
        f << sm.auc.value;
      else
        f << "n/a";
      f << ',' << sm.logloss << ',' << sm.samples << "\n";
    }
  }
  return 0;
}

// -------------------------------------------------------------- gradcheck

inline int cmd_gradcheck(const std::string& config_path, const std::string& variant,
                         bool lambda_set, double lambda, const std::string& corrupt_group,
                         std::ostream& out, const Logger& log) {
  RunConfig rc = load_run_config(config_path);
  if (!rc.has_schema) throw ConfigError("gradcheck: " + config_path + " needs a [schema] section");
  if (!variant.empty()) rc.train.variant = transfer_variant_from(variant);
  if (lambda_set) rc.train.lambda = lambda;
  const double lambda_eff = rc.train.lambda_effective();
  log.info("gradcheck variant " + std::string(to_string(rc.train.variant)) + ", lambda " +
           detail::num(lambda_eff));
  const GradCheckReport report = gradcheck(rc.schema, rc.train.apply(rc.model), lambda_eff,
                                           rc.train.seed, 1e-5, 1e-4, corrupt_group);
  print_gradcheck(report, out);
  return report.passed ? 0 : 1;
}

// ----------------------------------------------------------- export-reprs

inline int cmd_export_reprs(const std::string& model_path, const std::string& data_dir,
                            const std::string& split_name, const std::string& out_path,
                            std::ostream& out, const Logger& log) {
  const detail_cli::LoadedData data = detail_cli::load_data_dir(data_dir);
  const ModelFile mf = load_model(model_path);
  check_model_schema(mf, data.schema);
  if (mf.config.baseline != BaselineMode::kOptmsm)
    throw ConfigError("export-reprs needs a model with scenario representations; baseline `" +
                      std::string(to_string(mf.config.baseline)) + "` has none");
  const Split& split = detail_cli::pick_split(data.dataset, split_name);
  const Model model(data.schema, mf.config);
  ParameterStore params = mf.params;
  const int scenario_count = model.scenario_count();
  const int dim = model.rep_dim();

  std::ofstream f(out_path);
  if (!f) throw ParseError("cannot write " + out_path);
  f << "sample,scenario,active";
  for (int d = 0; d < dim; ++d) f << ",r" << d;
  f << "\n" << std::setprecision(17);

  // mean |cosine| per unordered scenario pair, accumulated batch by batch
  std::vector<double> pair_sum(static_cast<std::size_t>(scenario_count) * scenario_count, 0.0);
  long rows = 0;
  long sample_id = 0;
  for (const Batch& batch : make_batches(split, 256, 0, false)) {
    Tape tape;
    const ForwardResult fwd = model.forward(tape, params, batch);
    std::vector<const Tensor*> reps;
    for (int m = 0; m < scenario_count; ++m) reps.push_back(&tape.val(fwd.contrastive[m]));
    for (int i = 0; i < batch.size(); ++i) {
      for (int m = 0; m < scenario_count; ++m) {
        f << sample_id << ',' << (m + 1) << ',' << (batch.items[i]->scenario == m + 1 ? 1 : 0);
        for (int d = 0; d < dim; ++d) f << ',' << reps[m]->at(i, d);
        f << "\n";
      }
      for (int a = 0; a < scenario_count; ++a)
        for (int b = a + 1; b < scenario_count; ++b) {
          double dot = 0.0, na = 0.0, nb = 0.0;
          for (int d = 0; d < dim; ++d) {
            dot += reps[a]->at(i, d) * reps[b]->at(i, d);
            na += reps[a]->at(i, d) * reps[a]->at(i, d);
            nb += reps[b]->at(i, d) * reps[b]->at(i, d);
          }
          const double denom = std::sqrt(na) * std::sqrt(nb);
          pair_sum[a * scenario_count + b] += denom < 1e-12 ? 0.0 : std::abs(dot / denom);
        }
      ++rows;
      ++sample_id;
    }
  }
  if (!f) throw ParseError("write failed: " + out_path);

  std::ostringstream summary;
  summary << "mean |cosine| between scenario representations over " << rows << " samples\n";
  double overall = 0.0;
  int pairs = 0;
  for (int a = 0; a < scenario_count; ++a)
    for (int b = a + 1; b < scenario_count; ++b) {
      const double mean = rows > 0 ? pair_sum[a * scenario_count + b] / rows : 0.0;
      summary << "  pair " << (a + 1) << "-" << (b + 1) << ": " << detail_cli::fmt(mean, 6)
              << "\n";
      overall += mean;
      ++pairs;
    }
  summary << "  overall: " << detail_cli::fmt(pairs > 0 ? overall / pairs : 0.0, 6) << "\n";
  out << summary.str();
  std::ofstream sf(out_path + ".summary.txt");
  if (!sf) throw ParseError("cannot write " + out_path + ".summary.txt");
  sf << summary.str();
  log.info("wrote " + std::to_string(rows * scenario_count) + " rows to " + out_path);
  return 0;
}

// --------------------------------------------------------------- compare

inline int cmd_compare(const std::vector<std::string>& config_paths, const std::string& seeds_arg,
                       const std::string& out_path, std::ostream& out, const Logger& log) {
  if (config_paths.size() < 2)
    throw ConfigError("compare needs at least two --config files (a config may repeat)");
  std::vector<RunConfig> rcs;
  for (const std::string& path : config_paths) {
    RunConfig rc = load_run_config(path);
    if (!rc.has_schema) throw ConfigError("compare: " + path + " needs a [schema] section");
    rc.has_generator = true;
    rcs.push_back(std::move(rc));
  }
  for (std::size_t i = 1; i < rcs.size(); ++i) {
    if (schema_section_text(rcs[i].schema) != schema_section_text(rcs[0].schema))
      throw ConfigError("compare: " + config_paths[i] + " declares a different [schema] than " +
                        config_paths[0] + "; the runs would not share data");
    if (generator_section_text(rcs[i].generator) != generator_section_text(rcs[0].generator))
      throw ConfigError("compare: " + config_paths[i] + " declares a different [generator] than " +
                        config_paths[0] + "; the runs would not share data");
    if (model_section_text(rcs[i].model) != model_section_text(rcs[0].model))
      throw ConfigError("compare: " + config_paths[i] + " declares a different [model] than " +
                        config_paths[0] + "; rows must vary only in [train]");
  }

  std::vector<std::uint64_t> seeds;
  if (seeds_arg.empty()) {
    seeds = {0, 1, 2, 3, 4};
    log.info("seeds not specified; defaulting to 0,1,2,3,4");
  } else {
    seeds = detail_cli::parse_seeds(seeds_arg);
  }

  log.info("generating " + std::to_string(rcs[0].generator.samples) + " samples for " +
           std::to_string(rcs[0].schema.scenario_count) + " scenarios");
  const GeneratedData gd = generate(rcs[0].generator, rcs[0].schema);

  std::vector<std::pair<std::string, TrainConfig>> configs;
  std::vector<std::string> names;
  for (std::size_t i = 0; i < rcs.size(); ++i) {
    const std::string name = detail_cli::row_name(config_paths[i], i, names);
    names.push_back(name);
    configs.emplace_back(name, rcs[i].train);
  }
  for (std::size_t i = 0; i < configs.size(); ++i)
    log.info("  row " + std::to_string(i) + ": " + configs[i].first +
             (i == 0 ? " (reference)" : ""));

  const CompareTable table = compare(gd.dataset, rcs[0].schema, rcs[0].model, configs, seeds);
  write_compare_csv(table, out_path);
  print_compare(table, out);
  log.info("wrote " + out_path);
  return 0;
}

// ------------------------------------------------------------------- run

/// Parse and dispatch one invocation. args is the command line without the
/// program name, in natural order. All prose goes to err; command output
/// (tables, reports) goes to out.
inline int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  const Logger log{err, log_level()};

  CLI::App app{"multi-scenario CTR models with scenario-aware feature partitioning"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_arg, model_path;
  std::string variant, split_name = "test", seeds_arg, corrupt_group;
  std::uint64_t seed = 0;
  double lambda = 0.0;
  std::vector<std::string> ablations, config_paths;

  const std::vector<std::string> variant_names{"fcn", "moe", "cgc"};
  const std::vector<std::string> ablation_names{"no_priors", "no_constraint", "no_hypernetwork"};
  const std::vector<std::string> split_names{"train", "valid", "test"};

  CLI::App* gen = app.add_subcommand("gen", "generate a synthetic multi-scenario dataset");
  gen->add_option("--config", config_path, "run config with [schema] and [generator]")
      ->required();
  gen->add_option("--out", out_arg, "output directory")->required();
  CLI::Option* gen_seed = gen->add_option("--seed", seed, "override the generator seed");

  CLI::App* tr = app.add_subcommand("train", "train one model on a generated dataset");
  tr->add_option("--config", config_path, "run config with [model] and [train]")->required();
  tr->add_option("--data", data_dir, "dataset directory from `gen`")->required();
  tr->add_option("--out", out_arg, "output directory")->required();
  CLI::Option* tr_seed = tr->add_option("--seed", seed, "override the training seed");
  tr->add_option("--variant", variant, "transfer variant")->check(CLI::IsMember(variant_names));
  CLI::Option* tr_lambda =
      tr->add_option("--lambda", lambda, "override the orthogonality weight");
  tr->add_option("--ablate", ablations, "disable one mechanism (repeatable)")
      ->check(CLI::IsMember(ablation_names));

  CLI::App* ev = app.add_subcommand("eval", "evaluate a saved model per scenario");
  ev->add_option("--model", model_path, "model file from `train`")->required();
  ev->add_option("--data", data_dir, "dataset directory")->required();
  ev->add_option("--split", split_name, "split to score")->check(CLI::IsMember(split_names));
  ev->add_option("--out", out_arg, "also write the table as CSV");

  CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference check on a tiny model");
  gc->add_option("--config", config_path, "run config with a tiny [schema] and [model]")
      ->required();
  gc->add_option("--variant", variant, "transfer variant")->check(CLI::IsMember(variant_names));
  CLI::Option* gc_lambda =
      gc->add_option("--lambda", lambda, "override the orthogonality weight");
  gc->add_option("--corrupt-group", corrupt_group,
                 "fault-injection hook: corrupt this tensor's analytic gradient");

  CLI::App* ex = app.add_subcommand("export-reprs",
                                    "dump per-scenario representations for every sample");
  ex->add_option("--model", model_path, "model file from `train`")->required();
  ex->add_option("--data", data_dir, "dataset directory")->required();
  ex->add_option("--split", split_name, "split to export")->check(CLI::IsMember(split_names));
  ex->add_option("--out", out_arg, "output CSV path")->required();

  CLI::App* cp = app.add_subcommand("compare", "train several configs over seeds and tabulate");
  cp->add_option("--config", config_paths, "run config (repeat; first is the reference)")
      ->required();
  cp->add_option("--seeds", seeds_arg, "comma-separated training seeds (default 0,1,2,3,4)");
  cp->add_option("--out", out_arg, "output CSV path")->required();

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed())
      return cmd_gen(config_path, out_arg, !gen_seed->empty(), seed, out, log);
    if (tr->parsed())
      return cmd_train(config_path, data_dir, out_arg, !tr_seed->empty(), seed, variant,
                       !tr_lambda->empty(), lambda, ablations, out, log);
    if (ev->parsed()) return cmd_eval(model_path, data_dir, split_name, out_arg, out, log);
    if (gc->parsed())
      return cmd_gradcheck(config_path, variant, !gc_lambda->empty(), lambda, corrupt_group, out,
                           log);
    if (ex->parsed()) return cmd_export_reprs(model_path, data_dir, split_name, out_arg, out, log);
    if (cp->parsed()) return cmd_compare(config_paths, seeds_arg, out_arg, out, log);
    err << "error: no subcommand\n";
    return 2;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

inline int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(std::move(args), std::cout, std::cerr);
}

}  // namespace cli
}  // namespace optmsm
