// Copyright 2026 the heplan authors
// SPDX-License-Identifier: Apache-2.0
//
// Collective insertion and execution-plan construction. Walks the polynomial
// DAG in order, places each instruction on its device(s) per the assignment,
// tracks fragment residency, and emits collective events where data must
// move: gathered matmul inputs (hoisted before bootstrapping when possible),
// reduce-scatters for cross-device accumulations, all-gathers at every
// basis conversion whose fan-in spans devices, and the tensor-parallel
// boundary synchronizations.

#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "heplan/placement.hpp"

namespace heplan {

enum class CommCategory : std::uint8_t { kFfn, kAttention, kLayerNorm, kBoot, kOther };

inline const char* to_string(CommCategory c) {
  switch (c) {
    case CommCategory::kFfn: return "ffn";
    case CommCategory::kAttention: return "attention";
    case CommCategory::kLayerNorm: return "layer_norm";
    case CommCategory::kBoot: return "boot";
    case CommCategory::kOther: return "other";
  }
  return "?";
}

inline CommCategory comm_category(const std::string& calibration_row) {
  if (calibration_row == "qkv" || calibration_row == "out_proj" ||
      calibration_row == "ffn1" || calibration_row == "ffn2")
    return CommCategory::kFfn;
  if (calibration_row == "score" || calibration_row == "softmax" ||
      calibration_row == "att_out")
    return CommCategory::kAttention;
  if (calibration_row == "ln_post" || calibration_row == "ln_pre")
    return CommCategory::kLayerNorm;
  if (calibration_row == "boot") return CommCategory::kBoot;
  return CommCategory::kOther;
}

/// How the verifier applies an event to fragment values.
enum class EventSemantic : std::uint8_t {
  kMove,            ///< replicate payload to all participants
  kCombine,         ///< sum partial copies, result everywhere
  kCombineScatter,  ///< sum partial copies, scatter by destination chunk
};

struct CollectiveEvent {
  std::uint32_t id = 0;
  CollectiveKind kind = CollectiveKind::kAllGather;
  EventSemantic semantic = EventSemantic::kMove;
  std::vector<std::uint32_t> participants;
  FragSpan payload{};
  std::uint32_t dest_device = 0;     ///< kCombineScatter: chunk owner
  Bytes bytes_per_device = 0;
  Bytes bytes_total = 0;
  std::uint32_t app_node = 0;
  CommCategory category = CommCategory::kOther;
  /// per participant: compute-stream position that must retire first
  std::vector<std::uint32_t> trigger_pos;
};

enum InstrFlags : std::uint8_t {
  kInstrNone = 0,
  kInstrReplicated = 1,  ///< redundant execution on a replicated copy
  kInstrPartial = 2,     ///< accumulates into a per-device partial copy
  kInstrPrimeShare = 4,  ///< multi-prime node, this device computes its primes
};

struct PlanInstr {
  std::uint32_t node = 0;       ///< PolyDag node id
  std::uint32_t lane = 0;       ///< out-lane subrange executed here
  std::uint32_t lane_count = 0;
  std::uint8_t flags = kInstrNone;
  std::int32_t wait_event = -1;  ///< comm event that must complete first
};

struct DevicePlan {
  std::vector<PlanInstr> compute;
  std::vector<std::uint32_t> comm;  ///< event ids in issue order
};

struct PlanStats {
  std::uint64_t instr_count = 0;
  std::uint64_t event_count = 0;
  Bytes comm_bytes_total = 0;
};

struct ExecutionPlan {
  const PolyDag* dag = nullptr;
  const AppGraph* app = nullptr;
  Assignment assignment;
  std::vector<DevicePlan> devices;
  std::vector<CollectiveEvent> events;
  bool reordered = false;

  std::uint32_t device_count() const {
    return static_cast<std::uint32_t>(devices.size());
  }

  PlanStats stats() const {
    PlanStats s;
    for (const auto& d : devices) s.instr_count += d.compute.size();
    s.event_count = events.size();
    for (const auto& e : events) s.comm_bytes_total += e.bytes_total;
    return s;
  }
};

struct PlanError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

/// Per-matmul communication mode, decided by modeled bytes.
enum class MatmulMode : std::uint8_t { kLocal, kGatherInputs, kReduceOutputs };

class CommPlanner {
 public:
  CommPlanner(const PolyDag& dag, const AppGraph& app, const Assignment& assignment,
              const CkksProfile& profile, bool reorder)
      : dag_(dag), app_(app), asg_(assignment), profile_(profile),
        reorder_(reorder), g_(assignment.device_count) {
    const std::uint32_t bundle_count =
        dag_.first_extra_bundle + static_cast<std::uint32_t>(dag_.extra_bundles.size());
    replicated_on_.assign(bundle_count, 0);
    partial_on_.assign(bundle_count, 0);
    last_writer_.assign(bundle_count, std::vector<std::int64_t>(g_, -1));
  }

  ExecutionPlan run() {
    plan_.dag = &dag_;
    plan_.app = &app_;
    plan_.assignment = asg_;
    plan_.devices.resize(g_);
    plan_.reordered = reorder_;
    if (g_ == 1) {
      single_device();
      return std::move(plan_);
    }
    decide_matmul_modes();
    // graph inputs arrive from the host on every device; no link traffic
    for (std::uint32_t b : dag_.he->graph_inputs) replicated_on_[b] = all_mask();
    for (std::uint32_t i = 0; i < dag_.nodes.size(); ++i) emit_node(i);
    flush_pending_reductions();
    return std::move(plan_);
  }

 private:
  std::uint32_t all_mask() const { return (g_ >= 32) ? ~0u : ((1u << g_) - 1u); }

  void single_device() {
    DevicePlan& d = plan_.devices[0];
    for (std::uint32_t i = 0; i < dag_.nodes.size(); ++i) {
      const PolyNode& n = dag_.nodes[i];
      d.compute.push_back({i, n.out.lane, n.out.lane_count, kInstrNone, -1});
    }
  }

  // --- mode analysis --------------------------------------------------------

  bool is_matmul(const AppNode& n) const {
    return n.kind == LayerKind::kLinearProjection ||
           n.kind == LayerKind::kOutputProjection;
  }

  Bytes span_bytes(const FragSpan& s) const {
    const CtBundle& b = dag_.bundle(s.bundle);
    return Bytes{s.lane_count} * s.prime_count() * b.components *
           profile_.ring_degree * profile_.bytes_per_coefficient;
  }

  /// The activation bundle a matmul consumes, and the cheaper bundle to ship
  /// (the bootstrap input when the activation is a bootstrap output).
  struct MatmulPlanInfo {
    MatmulMode mode = MatmulMode::kLocal;
    std::uint32_t input_bundle = 0;  ///< activation operand
    std::uint32_t ship_bundle = 0;   ///< what the gather actually moves
    std::uint32_t boot_out = 0;      ///< bundle whose boot runs replicated
    bool has_boot_hoist = false;
  };

  void decide_matmul_modes() {
    if (asg_.strategy != StrategyKind::kAegis) return;
    // map each bundle to its producing HE op for the bootstrap-hoist check
    std::map<std::uint32_t, std::uint32_t> producer;  // bundle -> he op
    for (const HeOp& op : dag_.he->ops) producer.emplace(op.out.bundle, op.id);

    for (const AppNode& node : app_.nodes) {
      if (!is_matmul(node)) continue;
      // the activation operand: first non-weight input bundle of the app
      // node's ops that was produced outside this node
      std::uint32_t input_bundle = UINT32_MAX, acc_bundle = UINT32_MAX;
      for (const HeOp& op : dag_.he->ops) {
        if (op.app_node != node.id) continue;
        if ((op.kind == HeOpKind::kPMult || op.kind == HeOpKind::kRot) &&
            input_bundle == UINT32_MAX && !op.ins.empty()) {
          const CtBundle& b = dag_.bundle(op.ins[0].bundle);
          if (b.cls != BundleClass::kWeight && b.app_node != node.id)
            input_bundle = op.ins[0].bundle;
        }
        if (op.kind == HeOpKind::kPMult && op.accumulate)
          acc_bundle = op.out.bundle;
      }
      if (input_bundle == UINT32_MAX || acc_bundle == UINT32_MAX) continue;

      MatmulPlanInfo info;
      info.input_bundle = input_bundle;
      info.ship_bundle = input_bundle;
      auto it = producer.find(input_bundle);
      if (it != producer.end() &&
          dag_.he->ops[it->second].kind == HeOpKind::kBoot) {
        // send before bootstrapping: ship the low-level pre-boot form and
        // bootstrap the gathered ciphertexts locally on every device
        info.ship_bundle = dag_.he->ops[it->second].ins[0].bundle;
        info.boot_out = input_bundle;
        info.has_boot_hoist = true;
      }
      const CtBundle& ship = dag_.bundle(info.ship_bundle);
      const CtBundle& acc = dag_.bundle(acc_bundle);
      const Bytes gather_bytes =
          Bytes{g_ - 1} * ship.lanes * ship.level * 2 * profile_.ring_degree *
          profile_.bytes_per_coefficient;
      const Bytes reduce_bytes =
          Bytes{g_ - 1} * acc.lanes * acc.level * 2 * profile_.ring_degree *
          profile_.bytes_per_coefficient;
      info.mode = gather_bytes <= reduce_bytes ? MatmulMode::kGatherInputs
                                               : MatmulMode::kReduceOutputs;
      matmul_info_[node.id] = info;
    }
  }

  // --- residency ------------------------------------------------------------

  bool lane_resident(std::uint32_t bundle, std::uint32_t lane, std::uint32_t device,
                     bool whole_levels = true) const {
    (void)whole_levels;
    if (replicated_on_[bundle] & (1u << device)) return true;
    const CtBundle& b = dag_.bundle(bundle);
    const BundlePlacement& p = asg_.bundles[bundle];
    if (p.mode == PlacementMode::kReplicated) return true;
    if (p.mode == PlacementMode::kByLimb) return false;  // limbs always span
    return owner_of(bundle, lane) == device;
  }

  std::uint32_t owner_of(std::uint32_t bundle, std::uint32_t lane) const {
    const CtBundle& b = dag_.bundle(bundle);
    const BundlePlacement& p = asg_.bundles[bundle];
    if (p.mode == PlacementMode::kSingle) return p.device;
    if (p.mode == PlacementMode::kReplicated) return 0;
    std::uint32_t lanes = b.lanes, l = lane;
    if (b.chunk_period && p.mode == PlacementMode::kLaneChunks) {
      lanes = b.chunk_period;
      l = lane % b.chunk_period;
    }
    if (p.mode == PlacementMode::kLaneChunks)
      return lanes ? static_cast<std::uint32_t>((std::uint64_t{l} * g_) / lanes) : 0;
    return 0;  // kByLimb: per-prime ownership, caller uses prime_share
  }

  bool bundle_replicated(std::uint32_t bundle) const {
    const BundlePlacement& p = asg_.bundles[bundle];
    return p.mode == PlacementMode::kReplicated || p.hoist_replicated ||
           replicated_on_[bundle] == all_mask() ||
           dag_.bundle(bundle).replicate_hint;
  }

  // --- event emission -------------------------------------------------------

  std::uint32_t new_event(CollectiveKind kind, EventSemantic sem, FragSpan payload,
                          std::vector<std::uint32_t> participants,
                          std::uint32_t app_node, std::uint32_t dest = 0) {
    CollectiveEvent e;
    e.id = static_cast<std::uint32_t>(plan_.events.size());
    e.kind = kind;
    e.semantic = sem;
    e.payload = payload;
    e.participants = std::move(participants);
    e.dest_device = dest;
    e.app_node = app_node;
    e.category = comm_category(app_.node(app_node).calibration_row);
    const Bytes payload_bytes = span_bytes(payload);
    const std::uint32_t gp = static_cast<std::uint32_t>(e.participants.size());
    switch (kind) {
      case CollectiveKind::kAllGather:
      case CollectiveKind::kReduceScatter:
        e.bytes_per_device = gp > 1 ? (Bytes{gp - 1} * payload_bytes) / gp : 0;
        e.bytes_total = gp > 1 ? Bytes{gp - 1} * payload_bytes : 0;
        break;
      case CollectiveKind::kAllReduce:
        e.bytes_per_device = Bytes{gp - 1} * payload_bytes;
        e.bytes_total = Bytes{gp} * (gp - 1) * payload_bytes;
        break;
      case CollectiveKind::kP2P:
        e.bytes_per_device = payload_bytes;
        e.bytes_total = payload_bytes;
        break;
    }
    e.trigger_pos.resize(e.participants.size(), 0);
    for (std::size_t i = 0; i < e.participants.size(); ++i) {
      const std::uint32_t d = e.participants[i];
      const std::int64_t w = last_writer_[payload.bundle][d];
      e.trigger_pos[i] = w >= 0 ? static_cast<std::uint32_t>(w + 1) : 0;
      plan_.devices[d].comm.push_back(e.id);
    }
    plan_.events.push_back(std::move(e));
    return plan_.events.back().id;
  }

  std::vector<std::uint32_t> all_devices() const {
    std::vector<std::uint32_t> v(g_);
    for (std::uint32_t d = 0; d < g_; ++d) v[d] = d;
    return v;
  }

  /// Replicates a whole bundle to every device (fallback gather). Returns the
  /// event consumers must wait on.
  std::int32_t gather_bundle(std::uint32_t bundle, std::uint32_t app_node) {
    if (replicated_on_[bundle] == all_mask()) return gather_event_[bundle];
    const CtBundle& b = dag_.bundle(bundle);
    FragSpan span{bundle, 0, b.lanes, 0, static_cast<std::uint16_t>(b.level - 1)};
    const std::uint32_t id = new_event(CollectiveKind::kAllGather,
                                       EventSemantic::kMove, span, all_devices(),
                                       app_node);
    replicated_on_[bundle] = all_mask();
    gather_event_[bundle] = static_cast<std::int32_t>(id);
    return static_cast<std::int32_t>(id);
  }

  // --- reduction bookkeeping -------------------------------------------------

  struct PendingReduction {
    std::uint32_t acc_bundle = 0;
    std::uint32_t app_node = 0;
    std::uint32_t term_mask = 0;        ///< devices holding partials
    bool scatter = false;               ///< RS if true, else AllReduce
  };

  void note_partial(std::uint32_t acc_bundle, std::uint32_t device,
                    std::uint32_t app_node, bool scatter) {
    auto it = pending_.find(acc_bundle);
    if (it == pending_.end()) {
      PendingReduction r;
      r.acc_bundle = acc_bundle;
      r.app_node = app_node;
      r.term_mask = 1u << device;
      r.scatter = scatter;
      pending_.emplace(acc_bundle, r);
    } else {
      it->second.term_mask |= 1u << device;
    }
    partial_on_[acc_bundle] |= 1u << device;
  }

  /// Combines the partial copies of `bundle` (and any bundle it was relinearized
  /// into place from). Emits chunked reduce-scatter or a single all-reduce.
  std::int32_t resolve_reduction(std::uint32_t bundle) {
    auto it = pending_.find(bundle);
    if (it == pending_.end()) return -1;
    const PendingReduction r = it->second;
    pending_.erase(it);
    std::vector<std::uint32_t> participants;
    for (std::uint32_t d = 0; d < g_; ++d)
      if (r.term_mask & (1u << d)) participants.push_back(d);
    const CtBundle& b = dag_.bundle(bundle);
    std::int32_t last = -1;
    if (participants.size() < 2) {
      partial_on_[bundle] = 0;
      if (!participants.empty() && asg_.bundles[bundle].mode != PlacementMode::kSingle)
        replicated_on_[bundle] |= 1u << participants[0];
      return -1;
    }
    if (r.scatter) {
      // one chunk per destination device, combinable as soon as every
      // participant has finished the chunk's accumulation
      for (std::uint32_t c = 0; c < g_; ++c) {
        const std::uint32_t lane_lo = static_cast<std::uint32_t>(
            (std::uint64_t{c} * b.lanes) / g_);
        const std::uint32_t lane_hi = static_cast<std::uint32_t>(
            (std::uint64_t{c + 1} * b.lanes) / g_);
        if (lane_hi == lane_lo) continue;
        FragSpan chunk{bundle, lane_lo, lane_hi - lane_lo, 0,
                       static_cast<std::uint16_t>(b.level - 1)};
        last = static_cast<std::int32_t>(
            new_event(CollectiveKind::kReduceScatter, EventSemantic::kCombineScatter,
                      chunk, participants, r.app_node, c));
      }
      partial_on_[bundle] = 0;
    } else {
      FragSpan span{bundle, 0, b.lanes, 0, static_cast<std::uint16_t>(b.level - 1)};
      last = static_cast<std::int32_t>(
          new_event(CollectiveKind::kAllReduce, EventSemantic::kCombine, span,
                    participants, r.app_node));
      partial_on_[bundle] = 0;
      for (std::uint32_t d : participants) replicated_on_[bundle] |= 1u << d;
    }
    return last;
  }

  void flush_pending_reductions() {
    std::vector<std::uint32_t> keys;
    for (const auto& [k, v] : pending_) keys.push_back(k);
    for (std::uint32_t k : keys) resolve_reduction(k);
  }

  // --- instruction emission ---------------------------------------------------

  void push_instr(std::uint32_t device, std::uint32_t node, std::uint32_t lane,
                  std::uint32_t lane_count, std::uint8_t flags,
                  std::int32_t wait) {
    DevicePlan& d = plan_.devices[device];
    d.compute.push_back({node, lane, lane_count, flags, wait});
    const PolyNode& n = dag_.nodes[node];
    last_writer_[n.out.bundle][device] =
        static_cast<std::int64_t>(d.compute.size()) - 1;
  }

  /// Resolves operand residency for an instruction on `device`; returns the
  /// event to wait on (-1 none) and emits fallback gathers where needed.
  std::int32_t satisfy_operands(const PolyNode& n, std::uint32_t device,
                                bool replicated_exec) {
    std::int32_t wait = -1;
    for (std::uint8_t i = 0; i < n.in_count; ++i) {
      const FragSpan& in = n.ins[i];
      if (in.bundle == n.out.bundle) continue;  // in-place
      const CtBundle& b = dag_.bundle(in.bundle);
      if (b.cls == BundleClass::kWeight) continue;  // encoded at point of use
      if (partial_on_[in.bundle]) {
        const std::int32_t e = resolve_reduction(in.bundle);
        if (e >= 0) wait = std::max(wait, e);
        continue;
      }
      if (bundle_replicated(in.bundle)) {
        if (replicated_on_[in.bundle] == all_mask() &&
            gather_event_.count(in.bundle))
          wait = std::max(wait, gather_event_[in.bundle]);
        continue;
      }
      const BundlePlacement& p = asg_.bundles[in.bundle];
      bool local = true;
      if (p.mode == PlacementMode::kByLimb) {
        // per-limb data is local only when the instruction reads one prime
        // owned by this device
        local = !replicated_exec && in.prime_lo == in.prime_hi &&
                (in.prime_lo % g_) == device && !multi_prime(n);
        if (n.kind == PolyOpKind::kLimbMulAdd || n.kind == PolyOpKind::kNtt ||
            n.kind == PolyOpKind::kIntt || n.kind == PolyOpKind::kAutomorphism)
          local = !replicated_exec;  // per-limb ops run at their limb's owner
      } else {
        for (std::uint32_t l = 0; l < in.lane_count && local; ++l)
          if (!lane_resident(in.bundle, in.lane + l, device)) local = false;
      }
      if (!local) wait = std::max(wait, gather_bundle(in.bundle, n.app_node));
    }
    return wait;
  }

  static bool multi_prime(const PolyNode& n) {
    return n.ins[0].prime_lo != n.ins[0].prime_hi ||
           n.out.prime_lo != n.out.prime_hi;
  }

  const MatmulPlanInfo* info_for(std::uint32_t app_node) const {
    auto it = matmul_info_.find(app_node);
    return it == matmul_info_.end() ? nullptr : &it->second;
  }

  void emit_node(std::uint32_t node_id) {
    const PolyNode& n = dag_.nodes[node_id];
    const CtBundle& out = dag_.bundle(n.out.bundle);
    const BundlePlacement& p = asg_.bundles[n.out.bundle];
    const AppNode& app = app_.node(n.app_node);
    const MatmulPlanInfo* mm = info_for(n.app_node);

    // ensure gathered inputs are in flight before this matmul's work starts
    if (mm && mm->mode == MatmulMode::kGatherInputs &&
        !gather_done_.count(n.app_node)) {
      gather_done_.insert(n.app_node);
      start_input_gather(*mm, n.app_node);
    }

    const bool boot_replicated =
        n.mode == PolyMode::kBootReset && boot_replicated_.count(n.out.bundle);
    const bool replicated =
        bundle_replicated(n.out.bundle) || out.replicate_hint || boot_replicated ||
        (p.mode == PlacementMode::kByLimb && p.hoist_replicated);

    // cross-device accumulation: terms execute where they live; the
    // accumulator becomes a per-device partial combined later
    const bool reduction_term =
        n.opcode == LimbOpcode::kMulAcc && !replicated &&
        p.mode == PlacementMode::kLaneChunks && cross_device_terms(n);

    if (g_ == 1) {
      push_instr(0, node_id, n.out.lane, n.out.lane_count, kInstrNone, -1);
      return;
    }

    if (replicated) {
      for (std::uint32_t d = 0; d < g_; ++d) {
        const std::int32_t wait = satisfy_operands(n, d, true);
        push_instr(d, node_id, n.out.lane, n.out.lane_count, kInstrReplicated, wait);
      }
      replicated_on_[n.out.bundle] = all_mask();
      return;
    }

    if (reduction_term) {
      // every device with a term lane accumulates into its own partial copy
      const FragSpan& term = n.ins[0];
      for (std::uint32_t d = 0; d < g_; ++d) {
        const std::uint32_t tl = term_lanes_on(term, d);
        if (tl == 0) continue;
        const std::int32_t wait = satisfy_operands(n, d, false);
        push_instr(d, node_id, n.out.lane, n.out.lane_count,
                   kInstrPartial, wait);
        note_partial(n.out.bundle, d, n.app_node,
                     /*scatter=*/!app_needs_full(app, *mm_or_default(mm)));
      }
      return;
    }

    switch (p.mode) {
      case PlacementMode::kSingle: {
        const std::int32_t wait = satisfy_operands(n, p.device, false);
        push_instr(p.device, node_id, n.out.lane, n.out.lane_count, kInstrNone, wait);
        break;
      }
      case PlacementMode::kLaneChunks: {
        for (std::uint32_t d = 0; d < g_; ++d) {
          const auto [lo, cnt] = lane_chunk_of(n.out, d);
          if (cnt == 0) continue;
          const std::int32_t wait = satisfy_operands(n, d, false);
          push_instr(d, node_id, lo, cnt, kInstrNone, wait);
        }
        break;
      }
      case PlacementMode::kByLimb: {
        if (multi_prime(n)) {
          // basis conversion: every device computes its share of the output
          // primes and needs the whole input span
          for (std::uint32_t d = 0; d < g_; ++d) {
            const std::int32_t wait = satisfy_operands(n, d, false);
            push_instr(d, node_id, n.out.lane, n.out.lane_count,
                       kInstrPrimeShare, wait);
          }
          replicated_on_[n.out.bundle] = 0;  // output is limb-sharded again
        } else {
          const std::uint32_t d = n.out.prime_lo % g_;
          const std::int32_t wait = satisfy_operands(n, d, false);
          push_instr(d, node_id, n.out.lane, n.out.lane_count, kInstrNone, wait);
        }
        break;
      }
      case PlacementMode::kReplicated:
        break;  // handled above
    }
  }

  static const MatmulPlanInfo& mm_or_default(const MatmulPlanInfo* mm) {
    static const MatmulPlanInfo none{};
    return mm ? *mm : none;
  }

  /// Reduced outputs stay scattered unless the consumer needs everything;
  /// matmul partials reduce-scatter, everything else all-reduces only when
  /// the output placement is replicated.
  bool app_needs_full(const AppNode& app, const MatmulPlanInfo&) const {
    (void)app;
    return false;
  }

  bool cross_device_terms(const PolyNode& n) const {
    const FragSpan& term = n.ins[0];
    const CtBundle& tb = dag_.bundle(term.bundle);
    if (bundle_replicated(term.bundle)) return false;
    const BundlePlacement& tp = asg_.bundles[term.bundle];
    if (tp.mode != PlacementMode::kLaneChunks) return false;
    // terms span devices when their lanes are spread over more than one chunk
    const std::uint32_t first = owner_of(term.bundle, term.lane);
    const std::uint32_t last = owner_of(term.bundle, term.lane + term.lane_count - 1);
    if (first != last) return true;
    // misaligned single-owner terms still force a partial when the
    // accumulator chunk lives elsewhere
    const std::uint32_t out_first = owner_of(n.out.bundle, n.out.lane);
    const std::uint32_t out_last =
        owner_of(n.out.bundle, n.out.lane + n.out.lane_count - 1);
    return first != out_first || out_first != out_last;
  }

  std::uint32_t term_lanes_on(const FragSpan& term, std::uint32_t device) const {
    std::uint32_t cnt = 0;
    for (std::uint32_t l = 0; l < term.lane_count; ++l)
      if (owner_of(term.bundle, term.lane + l) == device) ++cnt;
    return cnt;
  }

  std::pair<std::uint32_t, std::uint32_t> lane_chunk_of(const FragSpan& out,
                                                        std::uint32_t device) const {
    std::uint32_t lo = out.lane + out.lane_count, hi = out.lane;
    for (std::uint32_t l = 0; l < out.lane_count; ++l) {
      if (owner_of(out.bundle, out.lane + l) == device) {
        lo = std::min(lo, out.lane + l);
        hi = std::max(hi, out.lane + l + 1);
      }
    }
    return hi > lo ? std::make_pair(lo, hi - lo) : std::make_pair(0u, 0u);
  }

  /// Gathered-input matmul: ship the low-level activation (bootstrap input
  /// when hoisted) in device-count rounds so rotation work can overlap.
  void start_input_gather(const MatmulPlanInfo& mm, std::uint32_t app_node) {
    const std::uint32_t ship = mm.ship_bundle;
    if (replicated_on_[ship] == all_mask()) {
      if (mm.has_boot_hoist) boot_replicated_.insert(mm.boot_out);
      return;
    }
    const CtBundle& b = dag_.bundle(ship);
    std::int32_t last = -1;
    for (std::uint32_t c = 0; c < g_; ++c) {
      const std::uint32_t lane_lo =
          static_cast<std::uint32_t>((std::uint64_t{c} * b.lanes) / g_);
      const std::uint32_t lane_hi =
          static_cast<std::uint32_t>((std::uint64_t{c + 1} * b.lanes) / g_);
      if (lane_hi == lane_lo) continue;
      FragSpan chunk{ship, lane_lo, lane_hi - lane_lo, 0,
                     static_cast<std::uint16_t>(b.level - 1)};
      last = static_cast<std::int32_t>(
          new_event(CollectiveKind::kAllGather, EventSemantic::kMove, chunk,
                    all_devices(), app_node));
    }
    replicated_on_[ship] = all_mask();
    gather_event_[ship] = last;
    if (mm.has_boot_hoist) boot_replicated_.insert(mm.boot_out);
  }

  const PolyDag& dag_;
  const AppGraph& app_;
  const Assignment& asg_;
  const CkksProfile& profile_;
  const bool reorder_;
  const std::uint32_t g_;

  ExecutionPlan plan_;
  std::vector<std::uint32_t> replicated_on_;
  std::vector<std::uint32_t> partial_on_;
  std::vector<std::vector<std::int64_t>> last_writer_;
  std::map<std::uint32_t, std::int32_t> gather_event_;
  std::map<std::uint32_t, PendingReduction> pending_;
  std::map<std::uint32_t, MatmulPlanInfo> matmul_info_;
  std::set<std::uint32_t> gather_done_;
  std::set<std::uint32_t> boot_replicated_;
};

}  // namespace detail

inline ExecutionPlan insert_collectives(const PolyDag& dag, const AppGraph& app,
                                        const Assignment& assignment,
                                        const CkksProfile& profile,
                                        bool reorder = false) {
  return detail::CommPlanner(dag, app, assignment, profile, reorder).run();
}

}  // namespace heplan
