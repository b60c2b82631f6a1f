// Copyright 2026 the heplan authors
// SPDX-License-Identifier: Apache-2.0
//
// Device placement. Five strategies over the same fragment space:
// limb-parallel and the Cinnamon hybrid shard by prime index, the two
// tensor-parallel baselines replicate, and the dependency-aware strategy
// assigns whole modulus-coherent groups with token coherence second.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "heplan/poly_ir.hpp"

namespace heplan {

enum class StrategyKind : std::uint8_t {
  kLimbParallel,
  kCinnamonHybrid,
  kPlaintextRowTp,
  kHydraColumnTp,
  kAegis,
};

inline const char* to_string(StrategyKind s) {
  switch (s) {
    case StrategyKind::kLimbParallel: return "limb_parallel";
    case StrategyKind::kCinnamonHybrid: return "cinnamon";
    case StrategyKind::kPlaintextRowTp: return "plaintext_tp";
    case StrategyKind::kHydraColumnTp: return "hydra";
    case StrategyKind::kAegis: return "aegis";
  }
  return "?";
}

inline StrategyKind strategy_from_string(const std::string& s) {
  if (s == "limb_parallel" || s == "hebooster") return StrategyKind::kLimbParallel;
  if (s == "cinnamon") return StrategyKind::kCinnamonHybrid;
  if (s == "plaintext_tp") return StrategyKind::kPlaintextRowTp;
  if (s == "hydra") return StrategyKind::kHydraColumnTp;
  if (s == "aegis") return StrategyKind::kAegis;
  throw std::invalid_argument("unknown strategy: " + s);
}

inline const std::vector<StrategyKind>& all_strategies() {
  static const std::vector<StrategyKind> k = {
      StrategyKind::kLimbParallel, StrategyKind::kCinnamonHybrid,
      StrategyKind::kPlaintextRowTp, StrategyKind::kHydraColumnTp,
      StrategyKind::kAegis};
  return k;
}

struct StrategyOptions {
  bool hoisting = false;  ///< keep rotated copies resident (Cinnamon default)
  double split_imbalance_threshold = 0.10;
  double token_coherence_capacity = 0.90;
  std::uint32_t special_prime_contribution = 2;  ///< limbs counted on top of l_boot
};

inline StrategyOptions default_options(StrategyKind s) {
  StrategyOptions o;
  o.hoisting = (s == StrategyKind::kCinnamonHybrid);
  return o;
}

enum class PlacementMode : std::uint8_t {
  kSingle,      ///< whole bundle on one device
  kLaneChunks,  ///< contiguous lane ranges per device, limbs together
  kByLimb,      ///< prime index modulo device count, lanes together
  kReplicated,  ///< every device holds everything
};

struct BundlePlacement {
  PlacementMode mode = PlacementMode::kSingle;
  std::uint32_t device = 0;
  bool hoist_replicated = false;  ///< rotated copies co-resident during a matmul
};

struct Assignment {
  StrategyKind strategy = StrategyKind::kAegis;
  StrategyOptions options{};
  std::uint32_t device_count = 1;
  std::vector<BundlePlacement> bundles;  ///< indexed by bundle id
  std::vector<std::uint64_t> fragment_count;  ///< per device, lane x limb weighted

  /// Owning device of one fragment under the static placement.
  std::uint32_t device_of(std::uint32_t bundle, std::uint32_t lane,
                          std::uint32_t prime, std::uint32_t lanes) const {
    const BundlePlacement& p = bundles.at(bundle);
    switch (p.mode) {
      case PlacementMode::kSingle: return p.device;
      case PlacementMode::kReplicated: return 0;
      case PlacementMode::kByLimb: return prime % device_count;
      case PlacementMode::kLaneChunks:
        return lanes ? static_cast<std::uint32_t>(
                           (std::uint64_t{lane} * device_count) / lanes)
                     : 0;
    }
    return 0;
  }

  bool resident(std::uint32_t bundle, std::uint32_t lane, std::uint32_t prime,
                std::uint32_t lanes, std::uint32_t device) const {
    const BundlePlacement& p = bundles.at(bundle);
    if (p.mode == PlacementMode::kReplicated) return true;
    return device_of(bundle, lane, prime, lanes) == device;
  }

  /// Number of lanes of `bundle` whose chunk lives on `device`.
  std::uint32_t lanes_on(std::uint32_t bundle, std::uint32_t lanes,
                         std::uint32_t device) const {
    const BundlePlacement& p = bundles.at(bundle);
    switch (p.mode) {
      case PlacementMode::kReplicated: return lanes;
      case PlacementMode::kByLimb: return lanes;
      case PlacementMode::kSingle: return p.device == device ? lanes : 0;
      case PlacementMode::kLaneChunks: {
        const std::uint64_t lo = (std::uint64_t{device} * lanes) / device_count;
        const std::uint64_t hi = (std::uint64_t{device + 1} * lanes) / device_count;
        return static_cast<std::uint32_t>(hi - lo);
      }
    }
    return 0;
  }
};

/// Static placement of every bundle in the dag.
inline Assignment place(const PolyDag& dag, const DependencyGroups& groups,
                        StrategyKind strategy, const Topology& topology,
                        StrategyOptions options) {
  (void)groups;  // group structure is lane-granular; chunking below respects it
  topology.validate();
  Assignment a;
  a.strategy = strategy;
  a.options = options;
  a.device_count = topology.device_count;
  const std::uint32_t bundle_count =
      dag.first_extra_bundle + static_cast<std::uint32_t>(dag.extra_bundles.size());
  a.bundles.resize(bundle_count);
  a.fragment_count.assign(topology.device_count, 0);

  const std::uint32_t g = topology.device_count;
  for (std::uint32_t bid = 0; bid < bundle_count; ++bid) {
    const CtBundle& b = dag.bundle(bid);
    BundlePlacement& p = a.bundles[bid];
    if (g == 1) {
      p.mode = PlacementMode::kSingle;
      p.device = 0;
      continue;
    }
    switch (strategy) {
      case StrategyKind::kLimbParallel:
        p.mode = PlacementMode::kByLimb;
        break;
      case StrategyKind::kCinnamonHybrid:
        p.mode = PlacementMode::kByLimb;
        p.hoist_replicated =
            options.hoisting && (b.cls == BundleClass::kRotated ||
                                 b.cls == BundleClass::kInput);
        break;
      case StrategyKind::kPlaintextRowTp:
        p.mode = PlacementMode::kReplicated;
        break;
      case StrategyKind::kHydraColumnTp:
        // inputs and nonlinear operands replicated, weights and matmul
        // outputs partitioned by output group
        if (b.cls == BundleClass::kWeight || b.cls == BundleClass::kScore)
          p.mode = PlacementMode::kLaneChunks;
        else
          p.mode = PlacementMode::kReplicated;
        break;
      case StrategyKind::kAegis:
        // whole dependency groups (= lanes) first; same-token slices land in
        // the same contiguous chunk; limb split only when lanes < devices
        if (b.lanes >= g)
          p.mode = PlacementMode::kLaneChunks;
        else
          p.mode = PlacementMode::kByLimb;
        break;
    }
  }

  // lane x limb fragment tally per device
  for (std::uint32_t bid = 0; bid < bundle_count; ++bid) {
    const CtBundle& b = dag.bundle(bid);
    for (std::uint32_t d = 0; d < g; ++d) {
      const BundlePlacement& p = a.bundles[bid];
      std::uint64_t frags = 0;
      if (p.mode == PlacementMode::kByLimb) {
        std::uint64_t limbs_here = b.level / g + (d < b.level % g ? 1 : 0);
        frags = std::uint64_t{b.lanes} * limbs_here;
      } else {
        frags = std::uint64_t{a.lanes_on(bid, b.lanes, d)} * b.level;
      }
      a.fragment_count[d] += frags;
    }
  }
  return a;
}

struct DeviceBound {
  std::uint32_t max_devices = 0;
  bool oom = false;
};

/// Strategy-specific upper bound on usable devices for a workload of T
/// tokens, and whether the configuration is memory-feasible at all.
inline DeviceBound max_devices(StrategyKind strategy, std::uint64_t tokens,
                               const CkksProfile& profile,
                               const PackingLayout& layout,
                               const MemoryBreakdown& memory,
                               Bytes per_device_capacity,
                               std::uint64_t concurrent_cts,
                               const StrategyOptions& options) {
  const double headroom = 0.95;
  const Bytes cap = static_cast<Bytes>(per_device_capacity * headroom);
  const std::uint32_t limb_bound =
      profile.bootstrap_level + options.special_prime_contribution;
  switch (strategy) {
    case StrategyKind::kLimbParallel: {
      // memory shards evenly; the limb count is the only bound
      return {limb_bound, false};
    }
    case StrategyKind::kCinnamonHybrid: {
      const std::uint32_t bound = static_cast<std::uint32_t>(
          std::min<std::uint64_t>(limb_bound, concurrent_cts));
      // hoisting keeps rotated copies live: sqrt(s_tok) baby-step factor
      const double hoist = options.hoisting ? 8.0 : 1.0;
      for (std::uint32_t g = bound; g >= 1; --g) {
        const Bytes act = static_cast<Bytes>(
            static_cast<double>(memory.activation_bytes) * hoist / g);
        if (act + memory.encoded_weight_bytes / g + memory.key_bytes / g <= cap)
          return {g, false};
      }
      return {0, true};
    }
    case StrategyKind::kPlaintextRowTp: {
      if (memory.total() > cap) return {0, true};
      return {layout.cts_per_token(), false};
    }
    case StrategyKind::kHydraColumnTp: {
      // replicated activations and keys; only weights shard
      for (std::uint32_t g = 64; g >= 1; --g) {
        if (memory.activation_bytes + memory.key_bytes +
                memory.encoded_weight_bytes / g <=
            cap)
          return {g, false};
      }
      return {0, true};
    }
    case StrategyKind::kAegis: {
      const std::uint32_t bound =
          static_cast<std::uint32_t>(k_send(tokens, layout, profile));
      return {bound, false};
    }
  }
  return {1, false};
}

}  // namespace heplan
