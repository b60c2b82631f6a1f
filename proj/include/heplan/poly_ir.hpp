// Copyright 2026 the heplan authors
// SPDX-License-Identifier: Apache-2.0
//
// Polynomial-instruction DAG (third lowering level). Nodes operate on limb
// fragments addressed as (bundle, lane, prime). Basis-conversion nodes
// (ModUp/ModDown, rescale tails, bootstrap resets) couple all limbs of a
// lane; everything else stays inside one prime.

#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "heplan/he_ir.hpp"

namespace heplan {

enum class PolyOpKind : std::uint8_t {
  kLimbMulAdd,
  kNtt,
  kIntt,
  kAutomorphism,
  kModUp,
  kModDown,
  kLimbDrop,
  kCollective,  ///< placeholder patched in by the communication planner
};

inline const char* to_string(PolyOpKind k) {
  switch (k) {
    case PolyOpKind::kLimbMulAdd: return "limb_mul_add";
    case PolyOpKind::kNtt: return "ntt";
    case PolyOpKind::kIntt: return "intt";
    case PolyOpKind::kAutomorphism: return "automorphism";
    case PolyOpKind::kModUp: return "mod_up";
    case PolyOpKind::kModDown: return "mod_down";
    case PolyOpKind::kLimbDrop: return "limb_drop";
    case PolyOpKind::kCollective: return "collective";
  }
  return "?";
}

/// Pointwise payload for kLimbMulAdd nodes.
enum class LimbOpcode : std::uint8_t {
  kNone,
  kAdd,        ///< out = a + b
  kSub,        ///< out = a - b
  kMul,        ///< out = a * b (component product for ciphertext pairs)
  kMulAcc,     ///< out += a * b
  kAddAcc,     ///< out += a
  kKeyMul,     ///< out = a * key(param)
  kGenerate,   ///< out = seeded pseudo-random fragment
};

enum class PolyMode : std::uint8_t {
  kNone,
  kKeySwitch,    ///< ModUp/ModDown pair inside Rot/Relin
  kBootReset,    ///< level reset, value preserving
  kRescaleTail,  ///< divide by the dropped prime, round, drop
};

enum class DependencyKind : std::uint8_t {
  kIntraPrimeCoeff,
  kCrossPrime,
  kTokenAggregation,
  kEmbeddingAggregation,
  kHeadAggregation,
};

inline const char* to_string(DependencyKind k) {
  switch (k) {
    case DependencyKind::kIntraPrimeCoeff: return "intra_prime_coeff";
    case DependencyKind::kCrossPrime: return "cross_prime";
    case DependencyKind::kTokenAggregation: return "token_aggregation";
    case DependencyKind::kEmbeddingAggregation: return "embedding_aggregation";
    case DependencyKind::kHeadAggregation: return "head_aggregation";
  }
  return "?";
}

/// A rectangle of fragments: lanes x primes of one bundle.
struct FragSpan {
  std::uint32_t bundle = 0;
  std::uint32_t lane = 0;
  std::uint32_t lane_count = 0;
  std::uint16_t prime_lo = 0;
  std::uint16_t prime_hi = 0;  // inclusive

  std::uint32_t prime_count() const { return prime_hi - prime_lo + 1u; }
  std::uint64_t fragment_count() const {
    return std::uint64_t{lane_count} * prime_count();
  }
  bool operator==(const FragSpan&) const = default;
};

struct PolyNode {
  std::uint32_t id = 0;
  PolyOpKind kind = PolyOpKind::kLimbMulAdd;
  LimbOpcode opcode = LimbOpcode::kNone;
  PolyMode mode = PolyMode::kNone;
  std::uint64_t param = 0;       ///< galois power, key id, generator seed...
  std::uint64_t work = 1;        ///< lane-op multiplicity for cost
  FragSpan out{};
  std::array<FragSpan, 3> ins{};
  std::uint8_t in_count = 0;
  std::uint32_t he_op = 0;
  std::uint32_t app_node = 0;
  int phase = -1;   ///< rotation-offset phase, for overlap scheduling
  bool aligned = false;  ///< operand lane i feeds output lane i
  DependencyKind edge_kind = DependencyKind::kIntraPrimeCoeff;  ///< of its input edges

  bool is_basis_conversion() const {
    return kind == PolyOpKind::kModUp || kind == PolyOpKind::kModDown ||
           (kind == PolyOpKind::kLimbDrop && mode == PolyMode::kRescaleTail);
  }
};

struct PolyDag {
  const HeOpGraph* he = nullptr;
  std::vector<PolyNode> nodes;   // execution order
  std::vector<CtBundle> extra_bundles;  ///< key-switch temporaries
  std::uint32_t first_extra_bundle = 0;
  bool exact = false;

  const CtBundle& bundle(std::uint32_t id) const {
    if (id >= first_extra_bundle) return extra_bundles.at(id - first_extra_bundle);
    return he->bundles.at(id);
  }

  std::uint32_t add_node(PolyNode n) {
    n.id = static_cast<std::uint32_t>(nodes.size());
    nodes.push_back(n);
    return n.id;
  }
};

namespace detail {

class HeLowering {
 public:
  HeLowering(const HeOpGraph& he, const CkksProfile& profile)
      : he_(he), profile_(profile) {
    dag_.he = &he_;
    dag_.first_extra_bundle = static_cast<std::uint32_t>(he_.bundles.size());
  }

  PolyDag run(bool exact) {
    dag_.exact = exact;
    for (const HeOp& op : he_.ops) lower_op(op);
    return std::move(dag_);
  }

 private:
  std::uint32_t temp_bundle(const CtBundle& like, std::uint32_t level,
                            std::uint32_t components, const char* suffix) {
    CtBundle b = like;
    b.id = dag_.first_extra_bundle + static_cast<std::uint32_t>(dag_.extra_bundles.size());
    b.level = level;
    b.components = components;
    b.tag += suffix;
    dag_.extra_bundles.push_back(b);
    return b.id;
  }

  void add(PolyNode n, const HeOp& op) {
    n.he_op = op.id;
    n.app_node = op.app_node;
    n.phase = op.phase;
    n.aligned = op.aligned;
    dag_.add_node(n);
  }

  DependencyKind agg_kind(const HeOp& op) const {
    switch (op.aggregation) {
      case AggregationAxis::kTokenWise: return DependencyKind::kTokenAggregation;
      case AggregationAxis::kEmbeddingWise: return DependencyKind::kEmbeddingAggregation;
      case AggregationAxis::kHeadWise: return DependencyKind::kHeadAggregation;
      default: return DependencyKind::kIntraPrimeCoeff;
    }
  }

  std::uint32_t op_level(const HeOp& op) const {
    return op.use_level ? op.use_level : dag_.bundle(op.out.bundle).level;
  }

  /// Pointwise node per limb.
  void pointwise(const HeOp& op, LimbOpcode opcode, DependencyKind k) {
    const std::uint32_t l = op_level(op);
    for (std::uint32_t p = 0; p < l; ++p) {
      PolyNode n;
      n.kind = PolyOpKind::kLimbMulAdd;
      n.opcode = opcode;
      n.edge_kind = k;
      n.work = op.lane_ops();
      n.out = {op.out.bundle, op.out.lane, op.out.lane_count,
               static_cast<std::uint16_t>(p), static_cast<std::uint16_t>(p)};
      n.in_count = static_cast<std::uint8_t>(op.ins.size());
      for (std::size_t i = 0; i < op.ins.size() && i < 3; ++i)
        n.ins[i] = {op.ins[i].bundle, op.ins[i].lane, op.ins[i].lane_count,
                    static_cast<std::uint16_t>(p), static_cast<std::uint16_t>(p)};
      if (opcode == LimbOpcode::kMulAcc || opcode == LimbOpcode::kAddAcc) {
        // accumulator is read-modify-write
        n.ins[n.in_count] = n.out;
        ++n.in_count;
      }
      add(n, op);
    }
  }

  /// Key-switch pipeline on `src`: Intt per limb into a coefficient-domain
  /// temporary, optional automorphism, ModUp into the extended basis, a key
  /// product per extended prime, ModDown, Ntt per limb. Writes into `dst`;
  /// `src` is left untouched so sibling rotations can reuse it.
  void key_switch(const HeOp& op, const FragSpan& src, const FragSpan& dst,
                  std::uint32_t level, bool rotate) {
    const std::uint16_t top = static_cast<std::uint16_t>(level - 1);
    const std::uint32_t ext_count = level + profile_.special_prime_count;
    const CtBundle& sb = dag_.bundle(src.bundle);
    const std::uint32_t coeff = temp_bundle(sb, level, sb.components, ".ks_coeff");
    const std::uint32_t ext =
        temp_bundle(sb, ext_count, 2, rotate ? ".ks_ext" : ".relin_ext");

    for (std::uint32_t p = 0; p < level; ++p) {
      PolyNode n;
      n.kind = PolyOpKind::kIntt;
      n.work = op.lane_ops();
      n.out = {coeff, src.lane, src.lane_count,
               static_cast<std::uint16_t>(p), static_cast<std::uint16_t>(p)};
      n.ins[0] = {src.bundle, src.lane, src.lane_count,
                  static_cast<std::uint16_t>(p), static_cast<std::uint16_t>(p)};
      n.in_count = 1;
      add(n, op);
    }
    if (rotate) {
      for (std::uint32_t p = 0; p < level; ++p) {
        PolyNode n;
        n.kind = PolyOpKind::kAutomorphism;
        n.param = static_cast<std::uint64_t>(op.rot_offset);
        n.work = op.lane_ops();
        n.out = {coeff, src.lane, src.lane_count,
                 static_cast<std::uint16_t>(p), static_cast<std::uint16_t>(p)};
        n.ins[0] = n.out;
        n.in_count = 1;
        add(n, op);
      }
    }
    {
      PolyNode n;
      n.kind = PolyOpKind::kModUp;
      n.mode = PolyMode::kKeySwitch;
      n.edge_kind = DependencyKind::kCrossPrime;
      n.work = op.lane_ops();
      n.out = {ext, src.lane, src.lane_count, 0,
               static_cast<std::uint16_t>(ext_count - 1)};
      n.ins[0] = {coeff, src.lane, src.lane_count, 0, top};
      n.in_count = 1;
      add(n, op);
    }
    for (std::uint32_t p = 0; p < ext_count; ++p) {
      PolyNode n;
      n.kind = PolyOpKind::kLimbMulAdd;
      n.opcode = LimbOpcode::kKeyMul;
      n.param = key_id(op);
      n.work = op.lane_ops();
      n.out = {ext, src.lane, src.lane_count,
               static_cast<std::uint16_t>(p), static_cast<std::uint16_t>(p)};
      n.ins[0] = n.out;
      n.in_count = 1;
      add(n, op);
    }
    {
      PolyNode n;
      n.kind = PolyOpKind::kModDown;
      n.mode = PolyMode::kKeySwitch;
      n.edge_kind = DependencyKind::kCrossPrime;
      n.work = op.lane_ops();
      n.out = {dst.bundle, dst.lane, dst.lane_count, 0, top};
      n.ins[0] = {ext, src.lane, src.lane_count, 0,
                  static_cast<std::uint16_t>(ext_count - 1)};
      n.in_count = 1;
      add(n, op);
    }
    for (std::uint32_t p = 0; p < level; ++p) {
      PolyNode n;
      n.kind = PolyOpKind::kNtt;
      n.work = op.lane_ops();
      n.out = {dst.bundle, dst.lane, dst.lane_count,
               static_cast<std::uint16_t>(p), static_cast<std::uint16_t>(p)};
      n.ins[0] = n.out;
      n.in_count = 1;
      add(n, op);
    }
  }

  std::uint64_t key_id(const HeOp& op) const {
    // rotation keys are per offset; relinearization uses key 0
    return op.kind == HeOpKind::kRot
               ? 1000u + static_cast<std::uint64_t>(op.rot_offset)
               : 0u;
  }

  void lower_op(const HeOp& op) {
    const std::uint32_t l = op_level(op);
    switch (op.kind) {
      case HeOpKind::kEncode:
        for (std::uint32_t p = 0; p < l; ++p) {
          PolyNode n;
          n.kind = PolyOpKind::kLimbMulAdd;
          n.opcode = LimbOpcode::kGenerate;
          n.param = op.out.bundle;
          n.work = op.lane_ops();
          n.out = {op.out.bundle, op.out.lane, op.out.lane_count,
                   static_cast<std::uint16_t>(p), static_cast<std::uint16_t>(p)};
          add(n, op);
        }
        break;
      case HeOpKind::kPAdd:
      case HeOpKind::kCAdd:
        pointwise(op, op.accumulate ? LimbOpcode::kAddAcc : LimbOpcode::kAdd,
                  agg_kind(op));
        break;
      case HeOpKind::kPMult:
      case HeOpKind::kCMult:
        pointwise(op, op.accumulate ? LimbOpcode::kMulAcc : LimbOpcode::kMul,
                  agg_kind(op));
        break;
      case HeOpKind::kRot: {
        // rotate in the coefficient domain, then switch back to the
        // rotation key: Intt/Automorphism + ModUp/key-mul/ModDown + Ntt
        key_switch(op, op.ins[0], op.out, l, /*rotate=*/true);
        break;
      }
      case HeOpKind::kRelin:
        key_switch(op, op.ins[0], op.out, l, /*rotate=*/false);
        break;
      case HeOpKind::kRescale: {
        PolyNode n;
        n.kind = PolyOpKind::kLimbDrop;
        n.mode = PolyMode::kRescaleTail;
        n.edge_kind = DependencyKind::kCrossPrime;
        n.work = op.lane_ops();
        n.out = {op.out.bundle, op.out.lane, op.out.lane_count, 0,
                 static_cast<std::uint16_t>(l - 2)};
        n.ins[0] = {op.ins[0].bundle, op.ins[0].lane, op.ins[0].lane_count, 0,
                    static_cast<std::uint16_t>(l - 1)};
        n.in_count = 1;
        add(n, op);
        break;
      }
      case HeOpKind::kBoot: {
        PolyNode n;
        n.kind = PolyOpKind::kModUp;
        n.mode = PolyMode::kBootReset;
        n.edge_kind = DependencyKind::kCrossPrime;
        n.work = op.lane_ops();
        n.out = {op.out.bundle, op.out.lane, op.out.lane_count, 0,
                 static_cast<std::uint16_t>(profile_.post_boot_level() - 1)};
        n.ins[0] = {op.ins[0].bundle, op.ins[0].lane, op.ins[0].lane_count, 0,
                    static_cast<std::uint16_t>(l - 1)};
        n.in_count = 1;
        add(n, op);
        break;
      }
    }
  }

  const HeOpGraph& he_;
  const CkksProfile& profile_;
  PolyDag dag_;
};

}  // namespace detail

/// Stage-two lowering: HE operators to polynomial instructions.
inline PolyDag lower_he_to_poly(const HeOpGraph& he, const CkksProfile& profile,
                                bool exact = false) {
  return detail::HeLowering(he, profile).run(exact);
}

/// A modulus-coherent fragment group: the limbs of one ciphertext lane that
/// an upcoming basis conversion consumes jointly.
struct DependencyGroup {
  std::uint32_t bundle = 0;
  std::uint32_t lane = 0;
  std::uint32_t limb_count = 0;     ///< coupled fragments in this group
  IndexSpan token_span{};
  bool coupled = false;             ///< false: singleton fragments, no key switch
};

struct DependencyGroups {
  std::vector<DependencyGroup> groups;  ///< ordered by (token, bundle, lane)

  std::uint64_t coupled_count() const {
    std::uint64_t n = 0;
    for (const auto& g : groups) n += g.coupled ? 1 : 0;
    return n;
  }
};

/// Finest partition of fragments under cross-prime coupling: every lane
/// consumed by a ModUp/ModDown/rescale shares one group across its limbs;
/// untouched fragments remain singletons (enumerated in exact mode only).
inline DependencyGroups dependency_groups(const PolyDag& dag) {
  std::map<std::uint64_t, std::uint32_t> coupled;  // (bundle, lane) -> limb count
  auto lane_key = [](std::uint32_t bundle, std::uint32_t lane) {
    return (std::uint64_t{bundle} << 32) | lane;
  };
  for (const PolyNode& n : dag.nodes) {
    if (!n.is_basis_conversion()) continue;
    const FragSpan& s = n.ins[0];
    for (std::uint32_t l = 0; l < s.lane_count; ++l) {
      auto [it, inserted] = coupled.try_emplace(lane_key(s.bundle, s.lane + l),
                                                s.prime_count());
      if (!inserted) it->second = std::max(it->second, s.prime_count());
    }
  }

  DependencyGroups out;
  for (const auto& [key, limbs] : coupled) {
    const std::uint32_t bundle = static_cast<std::uint32_t>(key >> 32);
    const std::uint32_t lane = static_cast<std::uint32_t>(key);
    out.groups.push_back({bundle, lane, limbs, dag.bundle(bundle).token_span, true});
  }
  if (dag.exact) {
    // singleton fragments for lanes never touched by a basis conversion
    const std::uint32_t bundle_count =
        dag.first_extra_bundle + static_cast<std::uint32_t>(dag.extra_bundles.size());
    for (std::uint32_t bid = 0; bid < bundle_count; ++bid) {
      const CtBundle& b = dag.bundle(bid);
      for (std::uint32_t lane = 0; lane < b.lanes; ++lane) {
        if (coupled.count(lane_key(bid, lane))) continue;
        for (std::uint32_t p = 0; p < b.level; ++p)
          out.groups.push_back({bid, lane, 1, b.token_span, false});
      }
    }
  }
  std::sort(out.groups.begin(), out.groups.end(),
            [](const DependencyGroup& a, const DependencyGroup& b) {
              if (a.token_span.begin != b.token_span.begin)
                return a.token_span.begin < b.token_span.begin;
              if (a.bundle != b.bundle) return a.bundle < b.bundle;
              return a.lane < b.lane;
            });
  return out;
}

}  // namespace heplan
