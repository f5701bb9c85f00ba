// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "optmsm/dataset.hpp"
#include "optmsm/errors.hpp"
#include "optmsm/params.hpp"
#include "optmsm/rng.hpp"
#include "optmsm/schema.hpp"
#include "optmsm/tape.hpp"
#include "optmsm/tensor.hpp"

namespace optmsm {

enum class TransferVariant { kFcn, kMoe, kCgc };
enum class OrthMode { kRawCosine, kSquaredCosine };
enum class BaselineMode { kOptmsm, kMix, kSharedBottom };

inline const char* to_string(TransferVariant v) {
  switch (v) {
    case TransferVariant::kFcn: return "fcn";
    case TransferVariant::kMoe: return "moe";
    default: return "cgc";
  }
}

inline TransferVariant transfer_variant_from(const std::string& s) {
  if (s == "fcn") return TransferVariant::kFcn;
  if (s == "moe") return TransferVariant::kMoe;
  if (s == "cgc") return TransferVariant::kCgc;
  throw ConfigError("unknown transfer variant: " + s);
}

inline const char* to_string(OrthMode m) {
  return m == OrthMode::kRawCosine ? "raw" : "squared";
}

inline OrthMode orth_mode_from(const std::string& s) {
  if (s == "raw") return OrthMode::kRawCosine;
  if (s == "squared") return OrthMode::kSquaredCosine;
  throw ConfigError("unknown orthogonality mode: " + s);
}

inline const char* to_string(BaselineMode b) {
  switch (b) {
    case BaselineMode::kOptmsm: return "optmsm";
    case BaselineMode::kMix: return "mix";
    default: return "shared_bottom";
  }
}

inline BaselineMode baseline_mode_from(const std::string& s) {
  if (s == "optmsm") return BaselineMode::kOptmsm;
  if (s == "mix") return BaselineMode::kMix;
  if (s == "shared_bottom") return BaselineMode::kSharedBottom;
  throw ConfigError("unknown baseline mode: " + s);
}

struct ModelConfig {
  BaselineMode baseline = BaselineMode::kOptmsm;
  TransferVariant variant = TransferVariant::kFcn;
  OrthMode orth_mode = OrthMode::kRawCosine;
  std::vector<int> transfer_widths = {32, 16};
  std::vector<int> tower_widths = {16, 8};
  int hyper_hidden = 8;
  bool use_priors = true;        // off = "w/o priors" ablation
  bool use_hypernetwork = true;  // off = "w/o hypernetwork" ablation

  void validate() const {
    if (baseline == BaselineMode::kOptmsm && transfer_widths.empty())
      throw ConfigError("model: transfer_widths must not be empty");
    if (tower_widths.empty()) throw ConfigError("model: tower_widths must not be empty");
    for (int w : transfer_widths)
      if (w < 1) throw ConfigError("model: transfer width < 1");
    for (int w : tower_widths)
      if (w < 1) throw ConfigError("model: tower width < 1");
    if (hyper_hidden < 1) throw ConfigError("model: hyper_hidden < 1");
  }
};

// ------------------------------------------------------- architecture ops
//
// Each building block is a free function over tape nodes so it can be
// exercised (and oracle-checked) in isolation; Model::forward wires them.

struct DenseLayer {
  NodeId W = -1;
  NodeId b = -1;
};

inline NodeId dense(Tape& t, NodeId x, NodeId W, NodeId b) {
  return t.add_rowvec(t.matmul(x, W), b);
}

inline NodeId embed_field(Tape& t, NodeId table, const std::vector<int>& indices) {
  return t.gather_rows(table, indices);
}

/// Scenario adaptation gate. Squeezes each shared-field embedding block to
/// its per-sample mean, excites the field means through sigma(W m + b), and
/// rescales each block by its field's gate value.
inline NodeId se_gate(Tape& t, const std::vector<NodeId>& fields, NodeId W, NodeId b) {
  if (fields.empty()) throw ShapeError("se_gate: no field embeddings");
  if (t.val(W).rows != static_cast<int>(fields.size()))
    throw ShapeError("se_gate: weight rows " + std::to_string(t.val(W).rows) + " vs " +
                     std::to_string(fields.size()) + " fields");
  std::vector<NodeId> means;
  means.reserve(fields.size());
  for (NodeId f : fields) means.push_back(t.mean_axis(f, 1));
  const NodeId z = t.sigmoid(dense(t, t.concat(means, 1), W, b));
  std::vector<NodeId> gated;
  gated.reserve(fields.size());
  for (std::size_t i = 0; i < fields.size(); ++i)
    gated.push_back(t.mul_colvec(fields[i], t.slice_cols(z, static_cast<int>(i), 1)));
  return t.concat(gated, 1);
}

/// Plain MLP stack with relu after every layer.
inline NodeId mlp(Tape& t, NodeId x, const std::vector<DenseLayer>& layers) {
  NodeId h = x;
  for (const DenseLayer& l : layers) h = t.relu(dense(t, h, l.W, l.b));
  return h;
}

/// Star-topology stack: per layer the shared weight is fused with the
/// scenario weight element-wise, and the biases add.
inline NodeId transfer_fcn(Tape& t, NodeId x, const std::vector<DenseLayer>& shared,
                           const std::vector<DenseLayer>& scenario) {
  if (shared.size() != scenario.size())
    throw ShapeError("transfer_fcn: shared/scenario layer count mismatch");
  NodeId h = x;
  for (std::size_t l = 0; l < shared.size(); ++l) {
    const NodeId W = t.mul(shared[l].W, scenario[l].W);
    const NodeId b = t.add(shared[l].b, scenario[l].b);
    h = t.relu(t.add_rowvec(t.matmul(h, W), b));
  }
  return h;
}

/// Softmax-weighted sum of expert outputs; gate_logits is 1 x K.
inline NodeId mix_experts(Tape& t, const std::vector<NodeId>& experts, NodeId gate_logits) {
  if (experts.empty()) throw ShapeError("mix_experts: no experts");
  if (t.val(gate_logits).rows != 1 ||
      t.val(gate_logits).cols != static_cast<int>(experts.size()))
    throw ShapeError("mix_experts: gate shape " + t.val(gate_logits).shape_str() + " vs " +
                     std::to_string(experts.size()) + " experts");
  const NodeId g = t.softmax_row(gate_logits);
  NodeId out = t.scale_by(experts[0], t.slice_cols(g, 0, 1));
  for (std::size_t k = 1; k < experts.size(); ++k)
    out = t.add(out, t.scale_by(experts[k], t.slice_cols(g, static_cast<int>(k), 1)));
  return out;
}

/// Orthogonality loss over the contrastive representations: per-row mean
/// over the batch of the sum over unordered scenario pairs of cosine (raw)
/// or cosine^2 (squared). The per-row mean keeps the penalty on the same
/// scale as the mean click loss regardless of batch size. Raw mode is
/// batched with no pair loop via
///   sum_{i<j} <r_i, r_j> = (|sum_m r_m|^2 - sum_m |r_m|^2) / 2
/// on row-normalized representations; rows below the norm epsilon drop out
/// exactly as in the pairwise cosine definition.
inline NodeId orth_loss(Tape& t, const std::vector<NodeId>& reps, OrthMode mode) {
  const int M = static_cast<int>(reps.size());
  if (M < 2) return t.leaf(Tensor::scalar(0.0));
  const int B = t.val(reps[0]).rows;
  std::vector<NodeId> hat(M);
  for (int m = 0; m < M; ++m) hat[m] = t.rownorm(reps[m]);
  if (mode == OrthMode::kRawCosine) {
    NodeId s = hat[0];
    for (int m = 1; m < M; ++m) s = t.add(s, hat[m]);
    NodeId cross = t.sum_all(t.mul(s, s));
    NodeId self = t.sum_all(t.mul(hat[0], hat[0]));
    for (int m = 1; m < M; ++m) self = t.add(self, t.sum_all(t.mul(hat[m], hat[m])));
    return t.scale(t.sub(cross, self), 0.5 / B);
  }
  const int d = t.val(reps[0]).cols;
  NodeId total = t.leaf(Tensor::scalar(0.0));
  for (int i = 0; i < M; ++i) {
    for (int j = i + 1; j < M; ++j) {
      const NodeId dots = t.scale(t.mean_axis(t.mul(hat[i], hat[j]), 1), d);
      total = t.add(total, t.sum_all(t.mul(dots, dots)));
    }
  }
  return t.scale(total, 1.0 / B);
}

/// Reference implementation of orth_loss: explicit double loop over pairs
/// and rows through the scalar cosine op. Kept for verification.
inline NodeId orth_loss_naive(Tape& t, const std::vector<NodeId>& reps, OrthMode mode) {
  const int M = static_cast<int>(reps.size());
  NodeId total = t.leaf(Tensor::scalar(0.0));
  if (M < 2) return total;
  const int B = t.val(reps[0]).rows;
  for (int i = 0; i < M; ++i) {
    for (int j = i + 1; j < M; ++j) {
      for (int b = 0; b < B; ++b) {
        NodeId c = t.cosine(t.gather_rows(reps[i], {b}), t.gather_rows(reps[j], {b}));
        if (mode == OrthMode::kSquaredCosine) c = t.mul(c, c);
        total = t.add(total, c);
      }
    }
  }
  return t.scale(total, 1.0 / B);
}

struct HyperLayer {
  NodeId w0 = -1;
  NodeId b0 = -1;
  NodeId w1 = -1;
  NodeId b1 = -1;
};

/// Per-scenario hypernetwork gating for a whole tower: every layer's input
/// is multiplied by a (0, 2) gate vector computed from the same context
/// (the prior concatenation), mean-centered at 1 by the 2 * sigmoid
/// scaling. ctx < 0 means ungated.
struct TowerGating {
  NodeId ctx = -1;
  std::vector<HyperLayer> layers;  ///< one hypernetwork per tower layer
};

/// Scenario tower: relu MLP ending in a scalar logit. Hypernetwork gates
/// (if provided) multiply each layer's input activation via the tape's
/// fused node; dropout masks (if provided, -1 to skip a layer) multiply the
/// same way. Returns (logit, probability).
inline std::pair<NodeId, NodeId> tower_forward(Tape& t, NodeId x,
                                               const std::vector<DenseLayer>& layers,
                                               const TowerGating& gating,
                                               const std::vector<NodeId>& dropout = {}) {
  if (layers.empty()) throw ShapeError("tower_forward: no layers");
  if (gating.ctx >= 0 && gating.layers.size() != layers.size())
    throw ShapeError("tower_forward: expected one hypernetwork per layer");
  if (!dropout.empty() && dropout.size() != layers.size())
    throw ShapeError("tower_forward: expected one dropout mask per layer");
  NodeId h = x;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    NodeId in = h;
    if (gating.ctx >= 0) {
      const HyperLayer& g = gating.layers[l];
      in = t.apply_two_layer_gate(in, gating.ctx, g.w0, g.b0, g.w1, g.b1);
    }
    if (!dropout.empty() && dropout[l] >= 0) in = t.mul(in, dropout[l]);
    h = dense(t, in, layers[l].W, layers[l].b);
    if (l + 1 < layers.size()) h = t.relu(h);
  }
  return {h, t.sigmoid(h)};
}

/// Inverted-dropout mask: entries are 0 with probability rate, else
/// 1/(1-rate), so the expected activation is unchanged.
inline NodeId dropout_mask(Tape& t, int rows, int cols, double rate, Rng& rng) {
  Tensor m(rows, cols);
  const double keep = 1.0 - rate;
  for (double& e : m.v) e = rng.uniform() < keep ? 1.0 / keep : 0.0;
  return t.leaf(std::move(m));
}

// ------------------------------------------------------------------ model

struct ForwardOptions {
  bool training = false;
  double dropout_rate = 0.0;
  Rng* rng = nullptr;  // dropout mask source; required when training with dropout
};

struct ForwardResult {
  NodeId predictions = -1;          // B x 1 probability for each row's own scenario
  NodeId orth = -1;                 // 1 x 1 orthogonality loss
  std::vector<NodeId> contrastive;  // per scenario: B x rep_dim (empty for baselines)
};

/// The full multi-scenario network: dual embeddings, per-scenario adaptation
/// gates, shared-information transfer, contrastive orthogonality, prior
/// concatenation, hypernetwork-gated scenario towers. Baseline modes reduce
/// the same parameter plumbing to a pooled single tower (mix) or a shared
/// embedding with plain per-scenario towers (shared_bottom).
class Model {
 public:
  Model(FeatureSchema schema, ModelConfig config)
      : schema_(std::move(schema)), config_(std::move(config)) {
    config_.validate();
    if (schema_.fields.empty()) throw ConfigError("model: schema has no fields");
    if (schema_.scenario_count < 1) throw ConfigError("model: scenario count < 1");
    for (std::size_t f = 0; f < schema_.fields.size(); ++f) {
      if (config_.baseline == BaselineMode::kOptmsm &&
          schema_.fields[f].category == FieldCategory::kSpecific) {
        // Specific features reach the towers only through the prior
        // concatenation; without priors they have no entry point at all.
        if (config_.use_priors) dual_fields_.push_back(static_cast<int>(f));
      } else {
        shared_fields_.push_back(static_cast<int>(f));
      }
    }
    if (shared_fields_.empty()) throw ConfigError("model: no shared-path fields");
    for (int f : shared_fields_) shared_dim_ += schema_.fields[f].embed_dim;
    for (int f : dual_fields_) prior_dim_ += schema_.fields[f].embed_dim;
  }

  const FeatureSchema& schema() const { return schema_; }
  const ModelConfig& config() const { return config_; }
  int scenario_count() const { return schema_.scenario_count; }

  int rep_dim() const {
    return config_.baseline == BaselineMode::kOptmsm ? config_.transfer_widths.back()
                                                     : shared_dim_;
  }
  int tower_input_dim() const {
    return config_.baseline == BaselineMode::kOptmsm ? rep_dim() + prior_dim_ : shared_dim_;
  }
  int expert_count() const {
    return config_.variant == TransferVariant::kMoe ? 2 * scenario_count() : 4;
  }

  /// Width of the input activation of tower layer l (the gate width).
  int tower_layer_input(int l) const {
    return l == 0 ? tower_input_dim() : config_.tower_widths[l - 1];
  }
  int tower_layer_count() const { return static_cast<int>(config_.tower_widths.size()) + 1; }

  void init_params(ParameterStore& store, Rng& rng) const {
    for (int f : shared_fields_) {
      const FieldDef& fd = schema_.fields[f];
      store.create("emb/shared/" + fd.name, glorot_uniform(fd.vocab_size, fd.embed_dim, rng));
    }
    for (int f : dual_fields_) {
      const FieldDef& fd = schema_.fields[f];
      for (int m = 1; m <= scenario_count(); ++m)
        store.create("emb/specific/" + fd.name + "/s" + std::to_string(m),
                     glorot_uniform(fd.vocab_size, fd.embed_dim, rng));
    }
    if (config_.baseline != BaselineMode::kOptmsm) {
      init_towers(store, rng);
      return;
    }

    const int i = static_cast<int>(shared_fields_.size());
    for (int m = 1; m <= scenario_count(); ++m) {
      const std::string p = "gate/s" + std::to_string(m) + "/";
      store.create(p + "W", glorot_uniform(i, i, rng));
      store.create(p + "b", Tensor::zeros(1, i));
    }

    switch (config_.variant) {
      case TransferVariant::kFcn: {
        init_stack(store, rng, "transfer/shared/", shared_dim_, config_.transfer_widths);
        // Scenario factors start at the multiplicative identity so the fused
        // weight begins equal to the shared weight.
        int in = shared_dim_;
        for (std::size_t l = 0; l < config_.transfer_widths.size(); ++l) {
          const int out = config_.transfer_widths[l];
          for (int m = 1; m <= scenario_count(); ++m) {
            const std::string p =
                "transfer/s" + std::to_string(m) + "/l" + std::to_string(l) + "/";
            store.create(p + "W", Tensor::full(in, out, 1.0));
            store.create(p + "b", Tensor::zeros(1, out));
          }
          in = out;
        }
        break;
      }
      case TransferVariant::kMoe: {
        for (int k = 0; k < expert_count(); ++k)
          init_stack(store, rng, "transfer/expert" + std::to_string(k) + "/", shared_dim_,
                     config_.transfer_widths);
        for (int m = 1; m <= scenario_count(); ++m)
          store.create("transfer/s" + std::to_string(m) + "/gate",
                       Tensor::zeros(1, expert_count()));
        break;
      }
      case TransferVariant::kCgc: {
        for (int m = 1; m <= scenario_count(); ++m)
          for (int k = 0; k < 2; ++k)
            init_stack(store, rng,
                       "transfer/s" + std::to_string(m) + "/expert" + std::to_string(k) + "/",
                       shared_dim_, config_.transfer_widths);
        for (int k = 0; k < 2; ++k)
          init_stack(store, rng, "transfer/shared_expert" + std::to_string(k) + "/", shared_dim_,
                     config_.transfer_widths);
        for (int m = 1; m <= scenario_count(); ++m)
          store.create("transfer/s" + std::to_string(m) + "/gate", Tensor::zeros(1, 4));
        break;
      }
    }

    if (config_.use_hypernetwork) {
      // Drawn from a forked stream so the presence of the hypernetwork does
      // not shift the init sequence of the towers below; with w1/b1 zeroed
      // the gates open at exactly 1 and the network starts identical to the
      // ungated one.
      Rng hyper_rng = rng.fork(0x9d);
      for (int m = 1; m <= scenario_count(); ++m) {
        for (int l = 0; l < tower_layer_count(); ++l) {
          const std::string p =
              "hyper/s" + std::to_string(m) + "/l" + std::to_string(l) + "/";
          store.create(p + "w0",
                       glorot_uniform(tower_input_dim(), config_.hyper_hidden, hyper_rng));
          store.create(p + "b0", Tensor::zeros(1, config_.hyper_hidden));
          store.create(p + "w1", Tensor::zeros(config_.hyper_hidden, tower_layer_input(l)));
          store.create(p + "b1", Tensor::zeros(1, tower_layer_input(l)));
        }
      }
    }
    init_towers(store, rng);
  }

  ForwardResult forward(Tape& t, ParameterStore& store, const Batch& batch,
                        const ForwardOptions& opt = {}) const {
    const int B = batch.size();
    if (B < 1) throw DataError("forward: empty batch");
    const int M = scenario_count();
    for (const Instance* ins : batch.items) {
      if (ins->scenario < 1 || ins->scenario > M)
        throw DataError("forward: scenario " + std::to_string(ins->scenario) + " outside [1, " +
                        std::to_string(M) + "]");
    }
    const bool drop = opt.training && opt.dropout_rate > 0.0;
    if (drop && opt.rng == nullptr)
      throw ConfigError("forward: dropout requires an rng in training mode");

    std::unordered_map<std::string, NodeId> cache;
    auto P = [&](const std::string& name) {
      auto it = cache.find(name);
      if (it != cache.end()) return it->second;
      const NodeId id = t.param(store, name);
      cache.emplace(name, id);
      return id;
    };

    // Shared-path field embeddings for the whole batch.
    std::vector<NodeId> fields;
    fields.reserve(shared_fields_.size());
    for (int f : shared_fields_) {
      std::vector<int> idx(B);
      for (int b = 0; b < B; ++b) idx[b] = batch.items[b]->feature_indices[f];
      fields.push_back(embed_field(t, P("emb/shared/" + schema_.fields[f].name), idx));
    }

    // Row groups per scenario (every row belongs to exactly one).
    std::vector<std::vector<int>> rows(M);
    for (int b = 0; b < B; ++b) rows[batch.items[b]->scenario - 1].push_back(b);

    ForwardResult out;
    if (config_.baseline == BaselineMode::kMix) {
      out.orth = t.leaf(Tensor::scalar(0.0));
      const NodeId x = t.concat(fields, 1);
      auto [logit, prob] = tower_forward(t, x, tower_nodes(P, "tower/shared/"), {},
                                         drop ? masks_for(t, B, opt) : std::vector<NodeId>{});
      (void)logit;
      out.predictions = prob;
      return out;
    }
    if (config_.baseline == BaselineMode::kSharedBottom) {
      out.orth = t.leaf(Tensor::scalar(0.0));
      const NodeId x = t.concat(fields, 1);
      NodeId preds = -1;
      for (int m = 1; m <= M; ++m) {
        const std::vector<int>& rm = rows[m - 1];
        if (rm.empty()) continue;
        const NodeId xm = t.gather_rows(x, rm);
        auto [logit, prob] =
            tower_forward(t, xm, tower_nodes(P, "tower/s" + std::to_string(m) + "/"), {},
                          drop ? masks_for(t, static_cast<int>(rm.size()), opt)
                               : std::vector<NodeId>{});
        (void)logit;
        const NodeId scat = t.scatter_rows(prob, rm, B);
        preds = preds < 0 ? scat : t.add(preds, scat);
      }
      out.predictions = preds;
      return out;
    }

    // Scenario-enhanced representations for every scenario on the full
    // batch: the non-active ones serve as contrastive representations.
    for (int m = 1; m <= M; ++m) {
      const std::string sm = "s" + std::to_string(m);
      const NodeId ecm = se_gate(t, fields, P("gate/" + sm + "/W"), P("gate/" + sm + "/b"));
      NodeId rm = -1;
      switch (config_.variant) {
        case TransferVariant::kFcn:
          rm = transfer_fcn(t, ecm, stack_nodes(P, "transfer/shared/"),
                            stack_nodes(P, "transfer/" + sm + "/"));
          break;
        case TransferVariant::kMoe: {
          std::vector<NodeId> experts;
          for (int k = 0; k < expert_count(); ++k)
            experts.push_back(
                mlp(t, ecm, stack_nodes(P, "transfer/expert" + std::to_string(k) + "/")));
          rm = mix_experts(t, experts, P("transfer/" + sm + "/gate"));
          break;
        }
        case TransferVariant::kCgc: {
          std::vector<NodeId> experts;
          for (int k = 0; k < 2; ++k)
            experts.push_back(mlp(
                t, ecm, stack_nodes(P, "transfer/" + sm + "/expert" + std::to_string(k) + "/")));
          for (int k = 0; k < 2; ++k)
            experts.push_back(mlp(
                t, ecm, stack_nodes(P, "transfer/shared_expert" + std::to_string(k) + "/")));
          rm = mix_experts(t, experts, P("transfer/" + sm + "/gate"));
          break;
        }
      }
      out.contrastive.push_back(rm);
    }
    out.orth = orth_loss(t, out.contrastive, config_.orth_mode);

    // Route each scenario's rows through its own tower; only the real
    // scenario's representation feeds a prediction.
    NodeId preds = -1;
    for (int m = 1; m <= M; ++m) {
      const std::vector<int>& rm = rows[m - 1];
      if (rm.empty()) continue;
      const std::string sm = "s" + std::to_string(m);
      NodeId r0 = t.gather_rows(out.contrastive[m - 1], rm);
      if (!dual_fields_.empty()) {
        std::vector<NodeId> parts = {r0};
        for (int f : dual_fields_) {
          std::vector<int> idx(rm.size());
          for (std::size_t i = 0; i < rm.size(); ++i)
            idx[i] = batch.items[rm[i]]->feature_indices[f];
          parts.push_back(
              embed_field(t, P("emb/specific/" + schema_.fields[f].name + "/" + sm), idx));
        }
        r0 = t.concat(parts, 1);
      }
      TowerGating gating;
      if (config_.use_hypernetwork) {
        gating.ctx = r0;
        for (int l = 0; l < tower_layer_count(); ++l) {
          const std::string p = "hyper/" + sm + "/l" + std::to_string(l) + "/";
          gating.layers.push_back(
              HyperLayer{P(p + "w0"), P(p + "b0"), P(p + "w1"), P(p + "b1")});
        }
      }
      auto [logit, prob] =
          tower_forward(t, r0, tower_nodes(P, "tower/" + sm + "/"), gating,
                        drop ? masks_for(t, static_cast<int>(rm.size()), opt)
                             : std::vector<NodeId>{});
      (void)logit;
      const NodeId scat = t.scatter_rows(prob, rm, B);
      preds = preds < 0 ? scat : t.add(preds, scat);
    }
    out.predictions = preds;
    return out;
  }

 private:
  void init_stack(ParameterStore& store, Rng& rng, const std::string& prefix, int in,
                  const std::vector<int>& widths) const {
    for (std::size_t l = 0; l < widths.size(); ++l) {
      const std::string p = prefix + "l" + std::to_string(l) + "/";
      store.create(p + "W", glorot_uniform(in, widths[l], rng));
      store.create(p + "b", Tensor::zeros(1, widths[l]));
      in = widths[l];
    }
  }

  void init_towers(ParameterStore& store, Rng& rng) const {
    std::vector<int> widths = config_.tower_widths;
    widths.push_back(1);
    if (config_.baseline == BaselineMode::kMix) {
      init_stack(store, rng, "tower/shared/", tower_input_dim(), widths);
      return;
    }
    for (int m = 1; m <= scenario_count(); ++m)
      init_stack(store, rng, "tower/s" + std::to_string(m) + "/", tower_input_dim(), widths);
  }

  template <typename Lookup>
  std::vector<DenseLayer> stack_nodes(Lookup& P, const std::string& prefix) const {
    std::vector<DenseLayer> layers;
    for (std::size_t l = 0; l < config_.transfer_widths.size(); ++l) {
      const std::string p = prefix + "l" + std::to_string(l) + "/";
      layers.push_back({P(p + "W"), P(p + "b")});
    }
    return layers;
  }

  template <typename Lookup>
  std::vector<DenseLayer> tower_nodes(Lookup& P, const std::string& prefix) const {
    std::vector<DenseLayer> layers;
    for (int l = 0; l < tower_layer_count(); ++l) {
      const std::string p = prefix + "l" + std::to_string(l) + "/";
      layers.push_back({P(p + "W"), P(p + "b")});
    }
    return layers;
  }

  std::vector<NodeId> masks_for(Tape& t, int rows_n, const ForwardOptions& opt) const {
    std::vector<NodeId> masks;
    for (int l = 0; l < tower_layer_count(); ++l)
      masks.push_back(dropout_mask(t, rows_n, tower_layer_input(l), opt.dropout_rate, *opt.rng));
    return masks;
  }

  FeatureSchema schema_;
  ModelConfig config_;
  std::vector<int> shared_fields_;  // embedded through the shared tables
  std::vector<int> dual_fields_;    // embedded through per-scenario tables
  int shared_dim_ = 0;
  int prior_dim_ = 0;
};

}  // namespace optmsm
