// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <tuple>
#include <vector>

#include "optmsm/dataset.hpp"
#include "optmsm/generator.hpp"
#include "optmsm/metrics.hpp"
#include "optmsm/rng.hpp"
#include "optmsm/schema.hpp"

using namespace optmsm;

namespace {

FeatureSchema demo_schema(int scenarios = 3) {
  FeatureSchema s;
  s.scenario_count = scenarios;
  s.fields = {
      {"user_id", FieldCategory::kShared, 200, 4},
      {"item_id", FieldCategory::kShared, 300, 4},
      {"item_brand", FieldCategory::kShared, 50, 4},
      {"slot_position", FieldCategory::kSpecific, 20, 4},
      {"entry_page", FieldCategory::kSpecific, 10, 4},
  };
  return s;
}

std::string fresh_dir(const std::string& tag) {
  namespace fs = std::filesystem;
  const fs::path p = fs::temp_directory_path() / ("optmsm_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

bool same_instance(const Instance& a, const Instance& b) {
  return a.feature_indices == b.feature_indices && a.label == b.label && a.scenario == b.scenario;
}

bool same_split(const Split& a, const Split& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!same_instance(a[i], b[i])) return false;
  return true;
}

/// A deterministic scorer with no knowledge of the labels; stands in for
/// "any model" when checking that noise labels are unlearnable.
double hash_score(const Instance& ins) {
  std::uint64_t h = 0x12345678ULL;
  for (int v : ins.feature_indices) h = h * 1099511628211ULL + static_cast<std::uint64_t>(v + 1);
  return Rng(h).uniform();
}

}  // namespace

TEST_CASE("schema validation enforces the partition invariants") {
  FeatureSchema good = demo_schema();
  REQUIRE_NOTHROW(good.validate());

  FeatureSchema one_scenario = demo_schema();
  one_scenario.scenario_count = 1;
  REQUIRE_THROWS_AS(one_scenario.validate(), ConfigError);

  FeatureSchema no_shared = demo_schema();
  for (auto& f : no_shared.fields) f.category = FieldCategory::kSpecific;
  REQUIRE_THROWS_AS(no_shared.validate(), ConfigError);

  FeatureSchema dup = demo_schema();
  dup.fields[1].name = dup.fields[0].name;
  REQUIRE_THROWS_AS(dup.validate(), ConfigError);

  FeatureSchema bad_vocab = demo_schema();
  bad_vocab.fields[0].vocab_size = 0;
  REQUIRE_THROWS_AS(bad_vocab.validate(), ConfigError);
}

TEST_CASE("schema text round-trips and hashes canonically") {
  const FeatureSchema s = demo_schema();
  const FeatureSchema back = FeatureSchema::from_text(s.to_text());
  REQUIRE(back.scenario_count == s.scenario_count);
  REQUIRE(back.fields.size() == s.fields.size());
  for (std::size_t i = 0; i < s.fields.size(); ++i) {
    REQUIRE(back.fields[i].name == s.fields[i].name);
    REQUIRE(back.fields[i].category == s.fields[i].category);
    REQUIRE(back.fields[i].vocab_size == s.fields[i].vocab_size);
    REQUIRE(back.fields[i].embed_dim == s.fields[i].embed_dim);
  }
  REQUIRE(back.hash() == s.hash());

  FeatureSchema other = demo_schema();
  other.fields[0].vocab_size += 1;
  REQUIRE(other.hash() != s.hash());

  const std::string dir = fresh_dir("schema_rt");
  save_schema(s, dir + "/schema.txt");
  REQUIRE(load_schema(dir + "/schema.txt").hash() == s.hash());

  REQUIRE(s.shared_field_indices() == std::vector<int>{0, 1, 2});
  REQUIRE(s.specific_field_indices() == std::vector<int>{3, 4});
  REQUIRE(s.field_index("item_id") == 1);
  REQUIRE_THROWS_AS(s.field_index("nope"), ConfigError);
}

TEST_CASE("generated scenario counts track the configured proportions") {
  GeneratorConfig cfg;
  cfg.scenario_count = 3;
  cfg.samples = 50000;
  cfg.proportions = {0.05, 0.35, 0.60};
  cfg.seed = 7;
  const FeatureSchema schema = demo_schema();
  const GeneratedData gen = generate(cfg, schema);

  std::vector<long> counts(3, 0);
  long total = 0;
  for (const Split* sp : {&gen.dataset.train, &gen.dataset.valid, &gen.dataset.test}) {
    for (const Instance& ins : *sp) {
      REQUIRE(ins.scenario >= 1);
      REQUIRE(ins.scenario <= 3);
      ++counts[ins.scenario - 1];
      ++total;
    }
  }
  REQUIRE(total == cfg.samples);
  for (int m = 0; m < 3; ++m) {
    const double frac = static_cast<double>(counts[m]) / static_cast<double>(total);
    REQUIRE(std::abs(frac - cfg.proportions[m]) <= 0.02);
  }

  // Default split fractions: 80/10/10.
  REQUIRE(gen.dataset.train.size() == 40000);
  REQUIRE(gen.dataset.valid.size() == 5000);
  REQUIRE(gen.dataset.test.size() == 5000);

  // Feature indices respect vocabularies and avoid the reserved bucket.
  for (const Instance& ins : gen.dataset.train) {
    for (std::size_t f = 0; f < schema.fields.size(); ++f) {
      REQUIRE(ins.feature_indices[f] >= 1);
      REQUIRE(ins.feature_indices[f] < schema.fields[f].vocab_size);
    }
  }
}

TEST_CASE("zero-signal labels are pure noise at the base click rate") {
  GeneratorConfig cfg;
  cfg.scenario_count = 3;
  cfg.samples = 50000;
  cfg.proportions = {0.2, 0.3, 0.5};
  cfg.shared_signal = 0.0;
  cfg.specific_signal = 0.0;
  cfg.base_click_rate = 0.2;
  cfg.seed = 11;
  const GeneratedData gen = generate(cfg, demo_schema());

  long clicks = 0;
  std::vector<double> scores;
  std::vector<int> labels;
  for (const Instance& ins : gen.dataset.train) {
    clicks += ins.label;
    scores.push_back(hash_score(ins));
    labels.push_back(ins.label);
  }
  const double rate = static_cast<double>(clicks) / static_cast<double>(gen.dataset.train.size());
  REQUIRE(rate == Catch::Approx(0.2).margin(0.01));

  const AucResult a = auc(scores, labels);
  REQUIRE(a.defined);
  REQUIRE(a.value == Catch::Approx(0.5).margin(0.02));
}

TEST_CASE("zero specific signal collapses the teacher across scenarios") {
  GeneratorConfig cfg;
  cfg.scenario_count = 3;
  cfg.samples = 2000;
  cfg.proportions = {0.2, 0.3, 0.5};
  cfg.shared_signal = 1.5;
  cfg.specific_signal = 0.0;
  cfg.seed = 3;
  const GeneratedData gen = generate(cfg, demo_schema());

  for (std::size_t i = 0; i < 50; ++i) {
    const Instance& ins = gen.dataset.train[i];
    const double base = gen.teacher.logit(ins, 1);
    for (int m = 2; m <= 3; ++m) REQUIRE(gen.teacher.logit(ins, m) == Catch::Approx(base));
  }
}

TEST_CASE("own-scenario teacher beats a cross-scenario teacher") {
  GeneratorConfig cfg;
  cfg.scenario_count = 3;
  cfg.samples = 30000;
  cfg.proportions = {0.3, 0.3, 0.4};
  cfg.shared_signal = 0.5;
  cfg.specific_signal = 2.5;
  cfg.seed = 21;
  const GeneratedData gen = generate(cfg, demo_schema());

  for (int m = 1; m <= 3; ++m) {
    const int cross = m % 3 + 1;
    std::vector<double> own_scores, cross_scores;
    std::vector<int> labels;
    for (const Instance& ins : gen.dataset.train) {
      if (ins.scenario != m) continue;
      own_scores.push_back(gen.teacher.logit(ins));
      cross_scores.push_back(gen.teacher.logit(ins, cross));
      labels.push_back(ins.label);
    }
    const AucResult own = auc(own_scores, labels);
    const AucResult xs = auc(cross_scores, labels);
    REQUIRE(own.defined);
    REQUIRE(xs.defined);
    REQUIRE(own.value > xs.value);
  }
}

TEST_CASE("generation is fully determined by config and seed") {
  GeneratorConfig cfg;
  cfg.scenario_count = 3;
  cfg.samples = 3000;
  cfg.proportions = {0.2, 0.3, 0.5};
  cfg.seed = 42;
  const FeatureSchema schema = demo_schema();

  const GeneratedData a = generate(cfg, schema);
  const GeneratedData b = generate(cfg, schema);
  REQUIRE(same_split(a.dataset.train, b.dataset.train));
  REQUIRE(same_split(a.dataset.valid, b.dataset.valid));
  REQUIRE(same_split(a.dataset.test, b.dataset.test));

  cfg.seed = 43;
  const GeneratedData c = generate(cfg, schema);
  REQUIRE_FALSE(same_split(a.dataset.train, c.dataset.train));
}

TEST_CASE("generator rejects configs that cannot cover every scenario") {
  GeneratorConfig cfg;
  cfg.scenario_count = 2;
  cfg.samples = 1;
  cfg.proportions = {0.5, 0.5};
  cfg.seed = 1;
  FeatureSchema schema = demo_schema(2);
  REQUIRE_THROWS_AS(generate(cfg, schema), DataError);

  GeneratorConfig mismatched;
  mismatched.scenario_count = 3;
  mismatched.samples = 100;
  mismatched.proportions = {0.2, 0.3, 0.5};
  REQUIRE_THROWS_AS(generate(mismatched, schema), ConfigError);

  GeneratorConfig bad;
  bad.scenario_count = 2;
  bad.proportions = {0.7, 0.7};
  REQUIRE_THROWS_AS(bad.validate(), ConfigError);
  bad.proportions = {1.0, 0.0};
  REQUIRE_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("teacher weights survive a JSON round-trip") {
  GeneratorConfig cfg;
  cfg.scenario_count = 3;
  cfg.samples = 500;
  cfg.proportions = {0.2, 0.3, 0.5};
  cfg.shared_signal = 1.0;
  cfg.specific_signal = 1.0;
  cfg.seed = 5;
  const GeneratedData gen = generate(cfg, demo_schema());

  const std::string dir = fresh_dir("teacher_rt");
  save_teacher(gen.teacher, dir + "/teacher.json");
  const TeacherWeights back = load_teacher(dir + "/teacher.json");
  for (std::size_t i = 0; i < 20; ++i) {
    const Instance& ins = gen.dataset.train[i];
    REQUIRE(back.logit(ins) == gen.teacher.logit(ins));
  }
}

TEST_CASE("csv round-trip preserves every instance") {
  GeneratorConfig cfg;
  cfg.scenario_count = 3;
  cfg.samples = 600;
  cfg.proportions = {0.2, 0.3, 0.5};
  cfg.seed = 9;
  const FeatureSchema schema = demo_schema();
  const GeneratedData gen = generate(cfg, schema);

  const std::string dir = fresh_dir("csv_rt");
  save_dataset(gen.dataset, schema, dir);
  const Dataset back = load_dataset(dir, schema);
  REQUIRE(same_split(back.train, gen.dataset.train));
  REQUIRE(same_split(back.valid, gen.dataset.valid));
  REQUIRE(same_split(back.test, gen.dataset.test));
  REQUIRE(load_schema(dir + "/schema.txt").hash() == schema.hash());
}

TEST_CASE("csv loader edge cases") {
  const FeatureSchema schema = demo_schema();
  const std::string dir = fresh_dir("csv_edge");
  const std::string header = "user_id,item_id,item_brand,slot_position,entry_page,label,scenario";

  SECTION("header-only file yields an empty split") {
    const std::string path = dir + "/empty.csv";
    std::ofstream(path) << header << "\n";
    REQUIRE(load_csv(path, schema).empty());
  }

  SECTION("scenario out of range is rejected with the line number") {
    const std::string path = dir + "/bad_scenario.csv";
    std::ofstream(path) << header << "\n1,2,3,4,5,0,2\n1,2,3,4,5,1,4\n";
    REQUIRE_THROWS_WITH(load_csv(path, schema),
                        Catch::Matchers::ContainsSubstring("line 3") &&
                            Catch::Matchers::ContainsSubstring("scenario 4"));
  }

  SECTION("non-integer cell is rejected with the line number") {
    const std::string path = dir + "/bad_cell.csv";
    std::ofstream(path) << header << "\n1,2,oops,4,5,0,2\n";
    REQUIRE_THROWS_WITH(load_csv(path, schema),
                        Catch::Matchers::ContainsSubstring("line 2") &&
                            Catch::Matchers::ContainsSubstring("oops"));
  }

  SECTION("missing column is named in the error") {
    const std::string path = dir + "/missing_col.csv";
    std::ofstream(path) << "user_id,item_id,item_brand,slot_position,entry_page,label\n";
    REQUIRE_THROWS_WITH(load_csv(path, schema),
                        Catch::Matchers::ContainsSubstring("scenario"));
  }

  SECTION("reordered header is rejected") {
    const std::string path = dir + "/reordered.csv";
    std::ofstream(path) << "item_id,user_id,item_brand,slot_position,entry_page,label,scenario\n";
    REQUIRE_THROWS_AS(load_csv(path, schema), ParseError);
  }

  SECTION("out-of-vocabulary indices fall into the reserved bucket") {
    const std::string path = dir + "/oov.csv";
    std::ofstream(path) << header << "\n999,2,3,4,5,1,1\n-7,2,3,25,5,0,3\n";
    const Split rows = load_csv(path, schema);
    REQUIRE(rows.size() == 2);
    REQUIRE(rows[0].feature_indices[0] == 0);  // 999 >= vocab 200
    REQUIRE(rows[1].feature_indices[0] == 0);  // negative
    REQUIRE(rows[1].feature_indices[3] == 0);  // 25 >= vocab 20
    REQUIRE(rows[0].feature_indices[1] == 2);
    REQUIRE(rows[0].label == 1);
    REQUIRE(rows[1].scenario == 3);
  }

  SECTION("bad label is rejected") {
    const std::string path = dir + "/bad_label.csv";
    std::ofstream(path) << header << "\n1,2,3,4,5,2,1\n";
    REQUIRE_THROWS_WITH(load_csv(path, schema),
                        Catch::Matchers::ContainsSubstring("label"));
  }
}

TEST_CASE("batching covers each instance exactly once") {
  Split split;
  for (int i = 0; i < 10; ++i) {
    Instance ins;
    ins.feature_indices = {i, i + 1, i + 2, i + 3, i + 4};
    ins.label = i % 2;
    ins.scenario = 1 + i % 3;
    split.push_back(ins);
  }

  const auto batches = make_batches(split, 4, 123);
  REQUIRE(batches.size() == 3);
  REQUIRE(batches[0].size() == 4);
  REQUIRE(batches[1].size() == 4);
  REQUIRE(batches[2].size() == 2);

  // Same seed -> identical order; different seed -> (here) different order.
  const auto again = make_batches(split, 4, 123);
  for (std::size_t b = 0; b < batches.size(); ++b)
    for (int i = 0; i < batches[b].size(); ++i)
      REQUIRE(batches[b].items[i] == again[b].items[i]);

  // Union across batches is exactly the split (multiset equality).
  std::vector<const Instance*> seen;
  for (const auto& b : batches)
    for (const Instance* p : b.items) seen.push_back(p);
  REQUIRE(seen.size() == split.size());
  std::sort(seen.begin(), seen.end());
  REQUIRE(std::adjacent_find(seen.begin(), seen.end()) == seen.end());

  // shuffle=false keeps natural order.
  const auto plain = make_batches(split, 4, 0, false);
  for (std::size_t b = 0; b < plain.size(); ++b)
    for (int i = 0; i < plain[b].size(); ++i)
      REQUIRE(plain[b].items[i] == &split[b * 4 + i]);

  REQUIRE_THROWS_AS(make_batches(split, 0, 1), ConfigError);
}
