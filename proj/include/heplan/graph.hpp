// Copyright 2026 the heplan authors
// SPDX-License-Identifier: Apache-2.0
//
// Application-level graph: transformer layers with token counts, dimensions,
// entry levels, and aggregation tags. This is the first of the three IR
// levels; it knows nothing about polynomials.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "heplan/ckks.hpp"

namespace heplan {

enum class LayerKind : std::uint8_t {
  kLinearProjection,
  kAttentionScore,
  kSoftmax,
  kAttentionOutput,
  kOutputProjection,
  kLayerNorm,
  kGelu,
  kBootstrapping,
  kResidual,
};

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::kLinearProjection: return "linear_projection";
    case LayerKind::kAttentionScore: return "attention_score";
    case LayerKind::kSoftmax: return "softmax";
    case LayerKind::kAttentionOutput: return "attention_output";
    case LayerKind::kOutputProjection: return "output_projection";
    case LayerKind::kLayerNorm: return "layer_norm";
    case LayerKind::kGelu: return "gelu";
    case LayerKind::kBootstrapping: return "bootstrapping";
    case LayerKind::kResidual: return "residual";
  }
  return "?";
}

enum class AggregationAxis : std::uint8_t {
  kNone,
  kTokenWise,
  kEmbeddingWise,
  kHeadWise,
};

inline const char* to_string(AggregationAxis a) {
  switch (a) {
    case AggregationAxis::kNone: return "none";
    case AggregationAxis::kTokenWise: return "token_wise";
    case AggregationAxis::kEmbeddingWise: return "embedding_wise";
    case AggregationAxis::kHeadWise: return "head_wise";
  }
  return "?";
}

struct AppNode {
  std::uint32_t id = 0;
  LayerKind kind = LayerKind::kLinearProjection;
  std::string name;                 ///< stable, e.g. "block3.ffn1"
  std::uint64_t tokens = 0;
  std::uint32_t in_dim = 0;
  std::uint32_t out_dim = 0;
  std::uint32_t entry_level = 0;
  std::uint32_t depth_cost = 0;     ///< multiplicative levels consumed
  AggregationAxis aggregation = AggregationAxis::kNone;
  std::vector<std::uint32_t> inputs;
  std::uint32_t block = 0;          ///< transformer block index
  std::uint32_t sub_tensors = 1;    ///< logical tensors packed in the output (QKV = 3)
  std::string calibration_row;      ///< latency-proportion row this node bills to
};

struct AppGraph {
  std::vector<AppNode> nodes;  // topologically ordered by construction

  const AppNode& node(std::uint32_t id) const { return nodes.at(id); }

  std::uint32_t add(AppNode n) {
    n.id = static_cast<std::uint32_t>(nodes.size());
    for (std::uint32_t in : n.inputs)
      if (in >= n.id) throw std::invalid_argument("app graph input out of order");
    nodes.push_back(std::move(n));
    return nodes.back().id;
  }

  /// Checks the level schedule: entry levels never exceed what producers can
  /// supply, multiplicative cost never drives a node below level 1, and
  /// bootstrapping exits at chain_length - bootstrap_level.
  void validate(const CkksProfile& profile) const {
    for (const AppNode& n : nodes) {
      if (n.entry_level == 0 || n.entry_level > profile.chain_length)
        throw std::invalid_argument("node " + n.name + ": entry level out of range");
      if (n.kind != LayerKind::kBootstrapping && n.entry_level < n.depth_cost + 1)
        throw std::invalid_argument("level underflow at node " + n.name +
                                    ": entry " + std::to_string(n.entry_level) +
                                    " cannot pay depth " + std::to_string(n.depth_cost));
      for (std::uint32_t in : n.inputs) {
        const AppNode& p = node(in);
        const std::uint32_t avail = exit_level(p, profile);
        // producers at a higher level are aligned down with an exact limb
        // drop; a producer below the consumer's entry level is a bug
        if (avail < n.entry_level)
          throw std::invalid_argument("level underflow at node " + n.name +
                                      ": needs " + std::to_string(n.entry_level) +
                                      " but " + p.name + " exits at " +
                                      std::to_string(avail));
      }
    }
  }

  static std::uint32_t exit_level(const AppNode& n, const CkksProfile& profile) {
    if (n.kind == LayerKind::kBootstrapping) return profile.post_boot_level();
    return n.entry_level - n.depth_cost;
  }
};

/// Transformer workload shape plus the nonlinear depth budget. Depth values
/// default to the BERT-style schedule; toy scenarios shrink them.
struct TransformerConfig {
  std::uint32_t layer_count = 12;
  std::uint32_t model_dim = 768;
  std::uint32_t ffn_dim = 3072;
  std::uint32_t head_count = 12;
  std::uint32_t softmax_depth = 16;  ///< max-subtract + exp + normalize
  std::uint32_t softmax_pre_depth = 3;   ///< consumed before scores are gathered
  std::uint32_t gelu_depth = 14;
  std::uint32_t layernorm_depth = 16;

  double weight_encoding_density = 1.0;
  std::uint32_t key_count = 0;
};

/// Per-block entry levels realized by the standard schedule. The first block
/// consumes the fresh input chain through attention, then aligns onto the
/// steady-state (post-bootstrap) levels before the output projection.
struct BlockLevels {
  std::uint32_t qkv, score, softmax, att_out, out_proj;
  std::uint32_t layer_norm, ffn1, gelu, ffn2;
};

inline BlockLevels block_levels(const CkksProfile& profile, bool first_block) {
  const std::uint32_t steady = profile.post_boot_level();  // 21 for the BERT set
  if (steady < 21)
    throw std::invalid_argument("transformer schedule needs a usable depth of 21");
  const std::uint32_t base = first_block ? profile.chain_length : steady;
  BlockLevels lv{};
  lv.qkv = base;
  lv.score = base - 1;
  lv.softmax = base - 2;
  lv.att_out = base - 18;
  lv.out_proj = steady - 19;
  lv.layer_norm = steady - 4;
  lv.ffn1 = steady - 4;
  lv.gelu = steady - 5;
  lv.ffn2 = steady - 19;
  return lv;
}

/// Builds the encoder stack: per block QKV -> scores -> softmax -> A*V ->
/// output projection -> residual -> boot -> layernorm -> boot -> FFN1 ->
/// GeLU -> FFN2 -> residual -> boot -> layernorm -> boot.
inline AppGraph build_transformer_graph(const TransformerConfig& cfg,
                                        const CkksProfile& profile,
                                        std::uint64_t tokens) {
  AppGraph g;
  const std::uint32_t d = cfg.model_dim;
  std::uint32_t prev = 0;
  bool have_prev = false;
  for (std::uint32_t b = 0; b < cfg.layer_count; ++b) {
    const BlockLevels lv = block_levels(profile, b == 0);
    const std::string pre = "block" + std::to_string(b) + ".";
    auto dep = [&](std::uint32_t id) { return std::vector<std::uint32_t>{id}; };

    AppNode qkv{.kind = LayerKind::kLinearProjection, .name = pre + "qkv",
                .tokens = tokens, .in_dim = d, .out_dim = 3 * d,
                .entry_level = lv.qkv, .depth_cost = 1,
                .aggregation = AggregationAxis::kEmbeddingWise,
                .inputs = have_prev ? dep(prev) : std::vector<std::uint32_t>{},
                .block = b, .sub_tensors = 3, .calibration_row = "qkv"};
    const std::uint32_t residual_src = have_prev ? prev : 0;
    const std::uint32_t qkv_id = g.add(std::move(qkv));

    const std::uint32_t score_id = g.add(
        {.kind = LayerKind::kAttentionScore, .name = pre + "score",
         .tokens = tokens, .in_dim = d, .out_dim = d,
         .entry_level = lv.score, .depth_cost = 1,
         .aggregation = AggregationAxis::kHeadWise, .inputs = dep(qkv_id),
         .block = b, .calibration_row = "score"});

    const std::uint32_t softmax_id = g.add(
        {.kind = LayerKind::kSoftmax, .name = pre + "softmax",
         .tokens = tokens, .in_dim = d, .out_dim = d,
         .entry_level = lv.softmax, .depth_cost = cfg.softmax_depth,
         .aggregation = AggregationAxis::kTokenWise, .inputs = dep(score_id),
         .block = b, .calibration_row = "softmax"});

    const std::uint32_t att_id = g.add(
        {.kind = LayerKind::kAttentionOutput, .name = pre + "att_out",
         .tokens = tokens, .in_dim = d, .out_dim = d,
         .entry_level = lv.att_out, .depth_cost = 1,
         .aggregation = AggregationAxis::kHeadWise,
         .inputs = {qkv_id, softmax_id}, .block = b,
         .calibration_row = "att_out"});

    const std::uint32_t wo_id = g.add(
        {.kind = LayerKind::kOutputProjection, .name = pre + "out_proj",
         .tokens = tokens, .in_dim = d, .out_dim = d,
         .entry_level = lv.out_proj, .depth_cost = 1,
         .aggregation = AggregationAxis::kEmbeddingWise, .inputs = dep(att_id),
         .block = b, .calibration_row = "out_proj"});

    const std::uint32_t res1_id = g.add(
        {.kind = LayerKind::kResidual, .name = pre + "residual_att",
         .tokens = tokens, .in_dim = d, .out_dim = d,
         .entry_level = lv.out_proj - 1, .depth_cost = 0,
         .aggregation = AggregationAxis::kNone,
         .inputs = have_prev ? std::vector<std::uint32_t>{wo_id, residual_src}
                             : std::vector<std::uint32_t>{wo_id},
         .block = b, .calibration_row = "residual"});

    const std::uint32_t boot1_id = g.add(
        {.kind = LayerKind::kBootstrapping, .name = pre + "boot_att",
         .tokens = tokens, .in_dim = d, .out_dim = d,
         .entry_level = lv.out_proj - 1, .depth_cost = 0,
         .aggregation = AggregationAxis::kNone, .inputs = dep(res1_id),
         .block = b, .calibration_row = "boot"});

    const std::uint32_t ln1_id = g.add(
        {.kind = LayerKind::kLayerNorm, .name = pre + "layer_norm_post",
         .tokens = tokens, .in_dim = d, .out_dim = d,
         .entry_level = lv.layer_norm, .depth_cost = cfg.layernorm_depth,
         .aggregation = AggregationAxis::kTokenWise, .inputs = dep(boot1_id),
         .block = b, .calibration_row = "ln_post"});

    const std::uint32_t boot2_id = g.add(
        {.kind = LayerKind::kBootstrapping, .name = pre + "boot_ln_post",
         .tokens = tokens, .in_dim = d, .out_dim = d,
         .entry_level = lv.layer_norm - cfg.layernorm_depth, .depth_cost = 0,
         .aggregation = AggregationAxis::kNone, .inputs = dep(ln1_id),
         .block = b, .calibration_row = "boot"});

    const std::uint32_t ffn1_id = g.add(
        {.kind = LayerKind::kLinearProjection, .name = pre + "ffn1",
         .tokens = tokens, .in_dim = d, .out_dim = cfg.ffn_dim,
         .entry_level = lv.ffn1, .depth_cost = 1,
         .aggregation = AggregationAxis::kEmbeddingWise, .inputs = dep(boot2_id),
         .block = b, .calibration_row = "ffn1"});

    const std::uint32_t gelu_id = g.add(
        {.kind = LayerKind::kGelu, .name = pre + "gelu",
         .tokens = tokens, .in_dim = cfg.ffn_dim, .out_dim = cfg.ffn_dim,
         .entry_level = lv.gelu, .depth_cost = cfg.gelu_depth,
         .aggregation = AggregationAxis::kNone, .inputs = dep(ffn1_id),
         .block = b, .calibration_row = "gelu"});

    const std::uint32_t ffn2_id = g.add(
        {.kind = LayerKind::kLinearProjection, .name = pre + "ffn2",
         .tokens = tokens, .in_dim = cfg.ffn_dim, .out_dim = d,
         .entry_level = lv.ffn2, .depth_cost = 1,
         .aggregation = AggregationAxis::kEmbeddingWise, .inputs = dep(gelu_id),
         .block = b, .calibration_row = "ffn2"});

    const std::uint32_t res2_id = g.add(
        {.kind = LayerKind::kResidual, .name = pre + "residual_ffn",
         .tokens = tokens, .in_dim = d, .out_dim = d,
         .entry_level = lv.ffn2 - 1, .depth_cost = 0,
         .aggregation = AggregationAxis::kNone, .inputs = {ffn2_id, boot1_id},
         .block = b, .calibration_row = "residual"});

    const std::uint32_t boot3_id = g.add(
        {.kind = LayerKind::kBootstrapping, .name = pre + "boot_ffn",
         .tokens = tokens, .in_dim = d, .out_dim = d,
         .entry_level = lv.ffn2 - 1, .depth_cost = 0,
         .aggregation = AggregationAxis::kNone, .inputs = dep(res2_id),
         .block = b, .calibration_row = "boot"});

    const std::uint32_t ln2_id = g.add(
        {.kind = LayerKind::kLayerNorm, .name = pre + "layer_norm_pre",
         .tokens = tokens, .in_dim = d, .out_dim = d,
         .entry_level = lv.layer_norm, .depth_cost = cfg.layernorm_depth,
         .aggregation = AggregationAxis::kTokenWise, .inputs = dep(boot3_id),
         .block = b, .calibration_row = "ln_pre"});

    prev = g.add(
        {.kind = LayerKind::kBootstrapping, .name = pre + "boot_ln_pre",
         .tokens = tokens, .in_dim = d, .out_dim = d,
         .entry_level = lv.layer_norm - cfg.layernorm_depth, .depth_cost = 0,
         .aggregation = AggregationAxis::kNone, .inputs = dep(ln2_id),
         .block = b, .calibration_row = "boot"});
    have_prev = true;
  }
  return g;
}

/// Memory-model inputs for the workload (see ckks.hpp::memory_breakdown).
inline ModelMemoryProfile build_memory_profile(const TransformerConfig& cfg,
                                               const CkksProfile& profile) {
  ModelMemoryProfile m;
  m.head_count = cfg.head_count;
  m.input_level = profile.chain_length;
  m.score_level = profile.chain_length - 2;
  m.weight_encoding_density = cfg.weight_encoding_density;
  m.key_count = cfg.key_count;
  const std::uint64_t d = cfg.model_dim;
  for (std::uint32_t b = 0; b < cfg.layer_count; ++b) {
    const BlockLevels lv = block_levels(profile, b == 0);
    m.matmuls.push_back({3 * d * d, lv.qkv});
    m.matmuls.push_back({d * d, lv.out_proj});
    m.matmuls.push_back({d * cfg.ffn_dim, lv.ffn1});
    m.matmuls.push_back({cfg.ffn_dim * d, lv.ffn2});
  }
  return m;
}

}  // namespace heplan
