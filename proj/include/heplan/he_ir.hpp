// Copyright 2026 the heplan authors
// SPDX-License-Identifier: Apache-2.0
//
// HE-operator IR (second lowering level) and the application-graph lowering.
// Ciphertexts are tracked as bundles of identical lanes; exact mode (used by
// the verification ring) emits one lane per op, bundled mode keeps whole
// tensors together and carries multiplicity on the op for cost accounting.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "heplan/ckks.hpp"
#include "heplan/graph.hpp"

namespace heplan {

enum class HeOpKind : std::uint8_t {
  kEncode,
  kPAdd,
  kCAdd,
  kPMult,
  kCMult,
  kRot,
  kRelin,
  kRescale,
  kBoot,
};

inline const char* to_string(HeOpKind k) {
  switch (k) {
    case HeOpKind::kEncode: return "encode";
    case HeOpKind::kPAdd: return "padd";
    case HeOpKind::kCAdd: return "cadd";
    case HeOpKind::kPMult: return "pmult";
    case HeOpKind::kCMult: return "cmult";
    case HeOpKind::kRot: return "rot";
    case HeOpKind::kRelin: return "relin";
    case HeOpKind::kRescale: return "rescale";
    case HeOpKind::kBoot: return "boot";
  }
  return "?";
}

/// Which tensor a bundle belongs to; drives placement heuristics.
enum class BundleClass : std::uint8_t {
  kInput,        ///< graph input activations
  kActivation,   ///< layer outputs / accumulators
  kRotated,      ///< rotated temporaries
  kWeight,       ///< encoded plaintext slices
  kScore,        ///< attention score tensors
};

struct CtBundle {
  std::uint32_t id = 0;
  std::uint32_t lanes = 1;        ///< ciphertexts in this bundle
  std::uint32_t level = 0;
  std::uint32_t components = 2;   ///< 1 plaintext, 2 ciphertext, 3 pre-relin
  BundleClass cls = BundleClass::kActivation;
  AggregationAxis aggregation = AggregationAxis::kNone;
  IndexSpan token_span{};
  double valid_slot_fraction = 1.0;
  std::uint32_t app_node = 0;
  std::uint32_t chunk_period = 0;  ///< lanes per logical sub-tensor (0 = whole)
  bool replicate_hint = false;     ///< consumers need every lane on every device
  std::string tag;

  Bytes bytes_per_lane(const CkksProfile& p) const {
    return ciphertext_bytes(p, level, components);
  }
};

struct LaneSlice {
  std::uint32_t bundle = 0;
  std::uint32_t lane = 0;        ///< first lane
  std::uint32_t lane_count = 1;

  bool operator==(const LaneSlice&) const = default;
};

struct HeOp {
  std::uint32_t id = 0;
  HeOpKind kind = HeOpKind::kCAdd;
  int rot_offset = 0;            ///< kRot only
  LaneSlice out{};
  std::vector<LaneSlice> ins;
  bool accumulate = false;       ///< add the product into `out` instead of storing
  bool aligned = false;          ///< term lane i feeds output lane i (mod period)
  int phase = -1;                ///< rotation-offset phase inside the layer
  std::uint64_t work = 0;        ///< lane-op multiplicity for cost (0 = out lanes)
  std::uint32_t use_level = 0;   ///< operand limbs actually read (level alignment)
  std::uint32_t app_node = 0;
  AggregationAxis aggregation = AggregationAxis::kNone;

  std::uint64_t lane_ops() const { return work ? work : out.lane_count; }
};

struct HeOpGraph {
  std::vector<CtBundle> bundles;
  std::vector<HeOp> ops;          // execution (topological) order
  std::vector<std::uint32_t> graph_inputs;  ///< bundles with no producer

  const CtBundle& bundle(std::uint32_t id) const { return bundles.at(id); }
  CtBundle& bundle(std::uint32_t id) { return bundles.at(id); }

  std::uint32_t add_bundle(CtBundle b) {
    b.id = static_cast<std::uint32_t>(bundles.size());
    bundles.push_back(std::move(b));
    return bundles.back().id;
  }

  std::uint32_t add_op(HeOp op) {
    op.id = static_cast<std::uint32_t>(ops.size());
    ops.push_back(std::move(op));
    return ops.back().id;
  }
};

struct LoweringOptions {
  bool exact = false;   ///< one op per lane (verification ring)
  bool hoisting = false;  ///< keep rotated copies of a ciphertext live together
};

namespace detail {

/// Rotation offsets used by the one-by-one diagonal accumulation: every
/// nonzero shift inside a token's slot block.
inline std::uint32_t matmul_rotation_count(const PackingLayout& layout) {
  return layout.slots_per_token - 1;
}

class AppLowering {
 public:
  AppLowering(const AppGraph& app, const CkksProfile& profile,
              const PackingLayout& layout, LoweringOptions opts)
      : app_(app), profile_(profile), layout_(layout), opts_(opts) {
    app_.validate(profile_);
  }

  HeOpGraph run() {
    node_out_.assign(app_.nodes.size(), kInvalid);
    for (const AppNode& n : app_.nodes) lower_node(n);
    return std::move(g_);
  }

 private:
  static constexpr std::uint32_t kInvalid = 0xffffffffu;

  std::uint32_t token_groups(std::uint64_t tokens) const {
    const std::uint32_t per = layout_.tokens_per_ciphertext(profile_);
    return static_cast<std::uint32_t>((tokens + per - 1) / per);
  }

  std::uint32_t ct_lanes(std::uint64_t tokens, std::uint32_t dim) const {
    const std::uint32_t ct = (dim + layout_.slots_per_token - 1) / layout_.slots_per_token;
    return token_groups(tokens) * ct;
  }

  std::uint32_t make_bundle(const AppNode& n, std::uint32_t lanes,
                            std::uint32_t level, std::uint32_t components,
                            BundleClass cls, const std::string& suffix) {
    CtBundle b;
    b.lanes = lanes;
    b.level = level;
    b.components = components;
    b.cls = cls;
    b.aggregation = n.aggregation;
    b.token_span = {0, static_cast<std::uint32_t>(n.tokens)};
    b.app_node = n.id;
    b.replicate_hint = replicate_hint_mode_;
    b.tag = n.name + suffix;
    return g_.add_bundle(b);
  }

  std::uint32_t input_of(const AppNode& n, std::size_t idx = 0) {
    if (n.inputs.empty()) {
      // graph source: fresh activations at the node's entry level
      AppNode src = n;
      const std::uint32_t b =
          make_bundle(src, ct_lanes(n.tokens, n.in_dim), n.entry_level, 2,
                      BundleClass::kInput, ".in");
      g_.bundles[b].aggregation = AggregationAxis::kNone;
      g_.graph_inputs.push_back(b);
      return b;
    }
    const std::uint32_t producer = n.inputs.at(idx);
    if (node_out_[producer] == kInvalid)
      throw std::logic_error("app node consumed before being lowered");
    return node_out_[producer];
  }

  // --- op emission helpers -------------------------------------------------

  /// Emits `op` once in bundled mode, or one copy per lane in exact mode.
  /// Exact ops pin every operand to a single lane (aligned when the lane
  /// counts match, wrapped otherwise) so the verifier has concrete reads.
  void emit_per_lane(HeOp op, const AppNode& n) {
    op.app_node = n.id;
    if (op.aggregation == AggregationAxis::kNone) op.aggregation = n.aggregation;
    if (!opts_.exact) {
      g_.add_op(std::move(op));
      return;
    }
    const std::uint32_t lanes = op.out.lane_count;
    for (std::uint32_t l = 0; l < lanes; ++l) {
      HeOp one = op;
      one.out.lane = op.out.lane + l;
      one.out.lane_count = 1;
      for (auto& in : one.ins) {
        if (in.lane_count == lanes)
          in.lane = in.lane + l;
        else
          in.lane = in.lane + (l % in.lane_count);
        in.lane_count = 1;
      }
      one.work = one.work ? std::max<std::uint64_t>(1, one.work / lanes) : 0;
      g_.add_op(std::move(one));
    }
  }

  std::uint32_t emit_rot(const AppNode& n, std::uint32_t src, int offset,
                         std::uint32_t use_level, int phase = -1) {
    const CtBundle& sb = g_.bundle(src);
    const std::uint32_t out =
        make_bundle(n, sb.lanes, use_level, 2, BundleClass::kRotated,
                    ".rot" + std::to_string(offset));
    g_.bundles[out].chunk_period = sb.chunk_period;
    g_.bundles[out].replicate_hint = sb.replicate_hint;
    HeOp op;
    op.kind = HeOpKind::kRot;
    op.rot_offset = offset;
    op.phase = phase;
    op.out = {out, 0, sb.lanes};
    op.ins = {{src, 0, sb.lanes}};
    op.use_level = use_level;
    emit_per_lane(op, n);
    return out;
  }

  std::uint32_t emit_encode(const AppNode& n, std::uint32_t lanes,
                            std::uint32_t level, const std::string& suffix) {
    const std::uint32_t out =
        make_bundle(n, lanes, level, 1, BundleClass::kWeight, suffix);
    HeOp op;
    op.kind = HeOpKind::kEncode;
    op.out = {out, 0, lanes};
    emit_per_lane(op, n);
    return out;
  }

  void emit_mult_acc(const AppNode& n, HeOpKind kind, std::uint32_t acc,
                     std::uint32_t a, std::uint32_t b, std::uint64_t work,
                     int phase, bool aligned) {
    HeOp op;
    op.kind = kind;
    op.accumulate = true;
    op.aligned = aligned;
    op.phase = phase;
    op.out = {acc, 0, g_.bundle(acc).lanes};
    op.ins = {{a, 0, g_.bundle(a).lanes}, {b, 0, g_.bundle(b).lanes}};
    op.use_level = g_.bundle(acc).level;
    op.work = work;
    g_.add_op(finish(op, n));
  }

  HeOp finish(HeOp op, const AppNode& n) {
    op.app_node = n.id;
    if (op.aggregation == AggregationAxis::kNone) op.aggregation = n.aggregation;
    return op;
  }

  void emit_relin(const AppNode& n, std::uint32_t bundle) {
    CtBundle& b = g_.bundle(bundle);
    b.components = 2;
    HeOp op;
    op.kind = HeOpKind::kRelin;
    op.out = {bundle, 0, b.lanes};
    op.ins = {{bundle, 0, b.lanes}};
    op.use_level = b.level;
    emit_per_lane(op, n);
  }

  std::uint32_t emit_rescale(const AppNode& n, std::uint32_t bundle) {
    const CtBundle& sb = g_.bundle(bundle);
    if (sb.level < 2)
      throw std::invalid_argument("level underflow at node " + n.name +
                                  ": cannot rescale below level 1");
    const std::uint32_t out = make_bundle(n, sb.lanes, sb.level - 1,
                                          sb.components, sb.cls, ".rs");
    g_.bundles[out].cls = sb.cls == BundleClass::kScore ? BundleClass::kScore
                                                        : BundleClass::kActivation;
    HeOp op;
    op.kind = HeOpKind::kRescale;
    op.out = {out, 0, sb.lanes};
    op.ins = {{bundle, 0, sb.lanes}};
    op.use_level = sb.level;
    emit_per_lane(op, n);
    return out;
  }

  /// CMult/CAdd chain of the given multiplicative depth, lane-parallel.
  std::uint32_t emit_poly_chain(const AppNode& n, std::uint32_t src,
                                std::uint32_t depth, const std::string& what) {
    std::uint32_t cur = src;
    for (std::uint32_t step = 0; step < depth; ++step) {
      const CtBundle& cb = g_.bundle(cur);
      const std::uint32_t sq = make_bundle(n, cb.lanes, cb.level, 3,
                                           cb.cls, "." + what + std::to_string(step));
      HeOp mul;
      mul.kind = HeOpKind::kCMult;
      mul.out = {sq, 0, cb.lanes};
      mul.ins = {{cur, 0, cb.lanes}, {cur, 0, cb.lanes}};
      mul.use_level = cb.level;
      emit_per_lane(mul, n);
      emit_relin(n, sq);
      cur = emit_rescale(n, sq);
    }
    return cur;
  }

  // --- per-kind lowering ---------------------------------------------------

  /// One-by-one rotate-multiply-accumulate over slot diagonals. Weight
  /// slices are encoded at the node's entry level.
  std::uint32_t lower_matmul(const AppNode& n) {
    const std::uint32_t src_raw = input_of(n);
    const std::uint32_t in_lanes = ct_lanes(n.tokens, n.in_dim);
    const std::uint32_t out_lanes = ct_lanes(n.tokens, n.out_dim);
    const std::uint32_t rots = matmul_rotation_count(layout_);
    const std::uint32_t c_in = in_lanes / token_groups(n.tokens);
    const std::uint32_t c_out = out_lanes / token_groups(n.tokens);

    const std::uint32_t acc =
        make_bundle(n, out_lanes, n.entry_level, 2, BundleClass::kActivation, ".acc");
    g_.bundles[acc].chunk_period = out_lanes / n.sub_tensors;
    if (opts_.exact) {
      for (std::uint32_t r = 0; r <= rots; ++r) {
        const std::uint32_t rotated =
            r == 0 ? src_raw : emit_rot_exact(n, src_raw, static_cast<int>(r));
        for (std::uint32_t i = 0; i < in_lanes; ++i) {
          const std::uint32_t w = emit_encode(
              n, 1, n.entry_level,
              ".w" + std::to_string(r) + "_" + std::to_string(i));
          for (std::uint32_t o = 0; o < out_lanes; ++o) {
            HeOp op;
            op.kind = HeOpKind::kPMult;
            op.accumulate = true;
            op.phase = static_cast<int>(r);
            op.out = {acc, o, 1};
            op.ins = {{rotated, i, 1}, {w, 0, 1}};
            op.use_level = n.entry_level;
            g_.add_op(finish(op, n));
          }
        }
      }
    } else {
      for (std::uint32_t r = 0; r <= rots; ++r) {
        const std::uint32_t rotated =
            r == 0 ? src_raw
                   : emit_rot(n, src_raw, static_cast<int>(r), n.entry_level,
                              static_cast<int>(r));
        const std::uint32_t w = emit_encode(n, c_in * c_out, n.entry_level,
                                            ".w" + std::to_string(r));
        emit_mult_acc(n, HeOpKind::kPMult, acc, rotated, w,
                      std::uint64_t{in_lanes} * c_out, static_cast<int>(r),
                      /*aligned=*/false);
      }
    }
    return emit_rescale(n, acc);
  }

  std::uint32_t emit_rot_exact(const AppNode& n, std::uint32_t src, int offset) {
    // exact mode rotates each lane of the source into a fresh single-lane row
    const CtBundle& sb = g_.bundle(src);
    const std::uint32_t out =
        make_bundle(n, sb.lanes, sb.level, 2, BundleClass::kRotated,
                    ".rot" + std::to_string(offset));
    g_.bundles[out].chunk_period = sb.chunk_period;
    g_.bundles[out].replicate_hint = sb.replicate_hint || replicate_hint_mode_;
    for (std::uint32_t l = 0; l < sb.lanes; ++l) {
      HeOp op;
      op.kind = HeOpKind::kRot;
      op.rot_offset = offset;
      op.phase = offset;
      op.out = {out, l, 1};
      op.ins = {{src, l, 1}};
      op.use_level = sb.level;
      g_.add_op(finish(op, n));
    }
    return out;
  }

  /// One relinearized product bundle per rotation offset: the partial score
  /// contribution of each query/key head slice. Accumulation into the score
  /// tensor is a plain (linear) addition, so per-device partial copies can be
  /// combined exactly by a collective before the rescale.
  std::uint32_t emit_product(const AppNode& n, std::uint32_t a,
                             std::uint32_t a_lane, std::uint32_t a_count,
                             std::uint32_t b, int phase,
                             const std::string& suffix) {
    const std::uint32_t prod =
        make_bundle(n, a_count, n.entry_level, 3, BundleClass::kActivation, suffix);
    const CtBundle& bb = g_.bundle(b);
    HeOp mul;
    mul.kind = HeOpKind::kCMult;
    mul.phase = phase;
    mul.aligned = true;
    mul.out = {prod, 0, a_count};
    mul.ins = {{a, a_lane, a_count}, {b, 0, std::min(bb.lanes, a_count)}};
    mul.use_level = n.entry_level;
    emit_per_lane(mul, n);
    HeOp relin;
    relin.kind = HeOpKind::kRelin;
    relin.phase = phase;
    relin.out = {prod, 0, a_count};
    relin.ins = {{prod, 0, a_count}};
    relin.use_level = n.entry_level;
    g_.bundles[prod].components = 2;
    emit_per_lane(relin, n);
    return prod;
  }

  void emit_add_acc(const AppNode& n, std::uint32_t acc, std::uint32_t prod,
                    int phase) {
    const std::uint32_t acc_lanes = g_.bundle(acc).lanes;
    const std::uint32_t prod_lanes = g_.bundle(prod).lanes;
    if (opts_.exact) {
      for (std::uint32_t s = 0; s < acc_lanes; ++s) {
        HeOp op;
        op.kind = HeOpKind::kCAdd;
        op.accumulate = true;
        op.phase = phase;
        op.out = {acc, s, 1};
        op.ins = {{prod, s % prod_lanes, 1}};
        op.use_level = g_.bundle(acc).level;
        g_.add_op(finish(op, n));
      }
      return;
    }
    HeOp op;
    op.kind = HeOpKind::kCAdd;
    op.accumulate = true;
    op.phase = phase;
    op.out = {acc, 0, acc_lanes};
    op.ins = {{prod, 0, prod_lanes}};
    op.use_level = g_.bundle(acc).level;
    op.work = std::max(acc_lanes, prod_lanes);
    g_.add_op(finish(op, n));
  }

  std::uint32_t lower_attention_score(const AppNode& n) {
    const std::uint32_t qkv = input_of(n);
    const std::uint32_t score_lanes = static_cast<std::uint32_t>(
        score_ciphertext_count(n.tokens, heads_for(n), profile_));
    const std::uint32_t rots = layout_.head_dim - 1;
    const std::uint32_t q_lanes = g_.bundle(qkv).lanes / 3;  // query third
    const std::uint32_t acc =
        make_bundle(n, score_lanes, n.entry_level, 2, BundleClass::kScore, ".acc");
    for (std::uint32_t r = 0; r <= rots; ++r) {
      const std::uint32_t rotated =
          r == 0 ? qkv
                 : (opts_.exact
                        ? emit_rot_exact(n, qkv, static_cast<int>(r))
                        : emit_rot(n, qkv, static_cast<int>(r), n.entry_level,
                                   static_cast<int>(r)));
      const std::uint32_t prod =
          emit_product(n, qkv, 0, std::max(1u, q_lanes), rotated,
                       static_cast<int>(r), ".qk" + std::to_string(r));
      emit_add_acc(n, acc, prod, static_cast<int>(r));
    }
    return emit_rescale(n, acc);
  }

  std::uint32_t lower_softmax(const AppNode& n) {
    const std::uint32_t scores = input_of(n);
    const AppNode& app = n;
    // running max subtraction: one add + one mult level
    const CtBundle& sb = g_.bundle(scores);
    const std::uint32_t masked = make_bundle(n, sb.lanes, sb.level, 2,
                                             BundleClass::kScore, ".maxsub");
    HeOp sub;
    sub.kind = HeOpKind::kCAdd;
    sub.out = {masked, 0, sb.lanes};
    sub.ins = {{scores, 0, sb.lanes}, {scores, 0, sb.lanes}};
    sub.use_level = sb.level;
    emit_per_lane(sub, app);
    std::uint32_t cur = emit_poly_chain(n, masked, 1, "msub");

    // exponential approximation (local once scores are token-resident)
    const std::uint32_t pre = pre_depth_for(n);
    cur = emit_poly_chain(n, cur, pre - 1, "exp");

    // normalization: running-sum rotations plus the reciprocal chain
    std::uint32_t rot_steps = 1;
    while ((1u << rot_steps) < layout_.slots_per_token) ++rot_steps;
    for (std::uint32_t s = 0; s < rot_steps; ++s) {
      const std::uint32_t rotated = opts_.exact
          ? emit_rot_exact(n, cur, 1 << s)
          : emit_rot(n, cur, static_cast<int>(1u << s), g_.bundle(cur).level);
      const CtBundle& cb = g_.bundle(cur);
      HeOp add;
      add.kind = HeOpKind::kCAdd;
      add.out = {cur, 0, cb.lanes};
      add.ins = {{cur, 0, cb.lanes}, {rotated, 0, cb.lanes}};
      add.use_level = cb.level;
      emit_per_lane(add, app);
    }
    // normalization runs on the re-gathered scores: every device needs the
    // full attention matrix afterwards for its local A x V slices
    replicate_hint_mode_ = true;
    const std::uint32_t total_depth = n.depth_cost;
    cur = emit_poly_chain(n, cur, total_depth - pre, "norm");
    replicate_hint_mode_ = false;
    g_.bundles[cur].cls = BundleClass::kScore;
    return cur;
  }

  /// A x V: attention weights are replicated after the softmax gather, value
  /// slices stay sharded, so every product lands on the device that owns the
  /// matching output slice and the accumulation is local.
  std::uint32_t lower_attention_output(const AppNode& n) {
    const std::uint32_t v = input_of(n, 0);      // QKV bundle (V slices)
    const std::uint32_t attn = input_of(n, 1);   // normalized scores
    const std::uint32_t out_lanes = ct_lanes(n.tokens, n.out_dim);
    const std::uint32_t v_lane0 = (g_.bundle(v).lanes / 3) * 2;
    const std::uint32_t rots = matmul_rotation_count(layout_);
    const std::uint32_t acc =
        make_bundle(n, out_lanes, n.entry_level, 2, BundleClass::kActivation, ".acc");
    for (std::uint32_t r = 0; r <= rots; ++r) {
      const std::uint32_t rotated =
          r == 0 ? attn
                 : (opts_.exact
                        ? emit_rot_exact(n, attn, static_cast<int>(r))
                        : emit_rot(n, attn, static_cast<int>(r), n.entry_level,
                                   static_cast<int>(r)));
      const std::uint32_t prod =
          emit_product(n, v, v_lane0, out_lanes, rotated, static_cast<int>(r),
                       ".av" + std::to_string(r));
      // product lane o feeds output lane o
      if (opts_.exact) {
        for (std::uint32_t o = 0; o < out_lanes; ++o) {
          HeOp op;
          op.kind = HeOpKind::kCAdd;
          op.accumulate = true;
          op.aligned = true;
          op.phase = static_cast<int>(r);
          op.out = {acc, o, 1};
          op.ins = {{prod, o, 1}};
          op.use_level = n.entry_level;
          g_.add_op(finish(op, n));
        }
      } else {
        HeOp op;
        op.kind = HeOpKind::kCAdd;
        op.accumulate = true;
        op.aligned = true;
        op.phase = static_cast<int>(r);
        op.out = {acc, 0, out_lanes};
        op.ins = {{prod, 0, out_lanes}};
        op.use_level = n.entry_level;
        op.work = out_lanes;
        g_.add_op(finish(op, n));
      }
    }
    return emit_rescale(n, acc);
  }

  std::uint32_t lower_layer_norm(const AppNode& n) {
    const std::uint32_t src = input_of(n);
    const CtBundle& sb = g_.bundle(src);
    // token-wise moment accumulation across the embedding slots
    std::uint32_t cur = src;
    std::uint32_t rot_steps = 1;
    while ((1u << rot_steps) < layout_.slots_per_token) ++rot_steps;
    const std::uint32_t sum = make_bundle(n, sb.lanes, n.entry_level, 2,
                                          BundleClass::kActivation, ".sum");
    HeOp seed;
    seed.kind = HeOpKind::kCAdd;
    seed.out = {sum, 0, sb.lanes};
    seed.ins = {{src, 0, sb.lanes}, {src, 0, sb.lanes}};
    seed.use_level = n.entry_level;
    emit_per_lane(seed, n);
    for (std::uint32_t s = 0; s < rot_steps; ++s) {
      const std::uint32_t rotated = opts_.exact
          ? emit_rot_exact(n, sum, 1 << s)
          : emit_rot(n, sum, static_cast<int>(1u << s), n.entry_level);
      HeOp add;
      add.kind = HeOpKind::kCAdd;
      add.out = {sum, 0, sb.lanes};
      add.ins = {{sum, 0, sb.lanes}, {rotated, 0, sb.lanes}};
      add.use_level = n.entry_level;
      emit_per_lane(add, n);
    }
    cur = emit_poly_chain(n, sum, n.depth_cost, "ln");
    return cur;
  }

  std::uint32_t lower_boot(const AppNode& n) {
    const std::uint32_t src = input_of(n);
    const CtBundle& sb = g_.bundle(src);
    const std::uint32_t out = make_bundle(n, sb.lanes, profile_.post_boot_level(),
                                          2, BundleClass::kActivation, ".boot");
    HeOp op;
    op.kind = HeOpKind::kBoot;
    op.out = {out, 0, sb.lanes};
    op.ins = {{src, 0, sb.lanes}};
    op.use_level = n.entry_level;
    emit_per_lane(op, n);
    return out;
  }

  std::uint32_t lower_residual(const AppNode& n) {
    const std::uint32_t a = input_of(n, 0);
    const std::uint32_t b = n.inputs.size() > 1 ? input_of(n, 1) : a;
    const CtBundle& ab = g_.bundle(a);
    const std::uint32_t out = make_bundle(n, ab.lanes, n.entry_level, 2,
                                          BundleClass::kActivation, ".sum");
    HeOp op;
    op.kind = HeOpKind::kCAdd;
    op.out = {out, 0, ab.lanes};
    op.ins = {{a, 0, ab.lanes}, {b, 0, std::min(ab.lanes, g_.bundle(b).lanes)}};
    op.use_level = n.entry_level;
    emit_per_lane(op, n);
    return out;
  }

  std::uint32_t heads_for(const AppNode& n) const {
    return std::max<std::uint32_t>(1, n.in_dim / layout_.head_dim);
  }

  std::uint32_t pre_depth_for(const AppNode& n) const {
    // portion of the softmax depth spent before scores are re-gathered
    return std::min<std::uint32_t>(3, n.depth_cost);
  }

  void lower_node(const AppNode& n) {
    std::uint32_t out = kInvalid;
    switch (n.kind) {
      case LayerKind::kLinearProjection:
      case LayerKind::kOutputProjection:
        out = lower_matmul(n);
        break;
      case LayerKind::kAttentionScore:
        out = lower_attention_score(n);
        break;
      case LayerKind::kSoftmax:
        out = lower_softmax(n);
        break;
      case LayerKind::kAttentionOutput:
        out = lower_attention_output(n);
        break;
      case LayerKind::kLayerNorm:
        out = lower_layer_norm(n);
        break;
      case LayerKind::kGelu:
        out = emit_poly_chain(n, input_of(n), n.depth_cost, "gelu");
        break;
      case LayerKind::kBootstrapping:
        out = lower_boot(n);
        break;
      case LayerKind::kResidual:
        out = lower_residual(n);
        break;
    }
    node_out_[n.id] = out;
  }

  const AppGraph& app_;
  const CkksProfile& profile_;
  const PackingLayout& layout_;
  LoweringOptions opts_;
  HeOpGraph g_;
  std::vector<std::uint32_t> node_out_;
  bool replicate_hint_mode_ = false;
};

}  // namespace detail

/// Stage-one lowering: application layers to HE operator sequences.
inline HeOpGraph lower_app_to_he(const AppGraph& app, const CkksProfile& profile,
                                 const PackingLayout& layout,
                                 LoweringOptions opts = {}) {
  return detail::AppLowering(app, profile, layout, opts).run();
}

}  // namespace heplan
