// Copyright 2026 the heplan authors
// SPDX-License-Identifier: Apache-2.0
//
// CKKS parameter and packing semantics plus the closed-form byte models:
// ciphertext/plaintext sizes, per-device collective costs, and the runtime
// memory breakdown (activations, encoded weights, evaluation keys).

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace heplan {

using Bytes = std::uint64_t;

/// RNS-CKKS parameter set. `chain_length` counts the main primes; the
/// special primes are active only during key switching.
struct CkksProfile {
  std::uint32_t ring_degree = 0;            ///< N, power of two
  std::uint32_t slot_count = 0;             ///< S = N/2
  std::uint32_t chain_length = 0;           ///< main prime count
  std::uint32_t special_prime_count = 0;
  std::uint32_t bytes_per_coefficient = 8;
  std::uint32_t bootstrap_level = 0;        ///< levels reserved for bootstrapping

  std::uint32_t usable_depth() const { return chain_length - bootstrap_level; }

  /// Level a ciphertext holds right after bootstrapping.
  std::uint32_t post_boot_level() const { return chain_length - bootstrap_level; }

  void validate() const {
    if (ring_degree == 0 || (ring_degree & (ring_degree - 1)) != 0)
      throw std::invalid_argument("ring_degree must be a positive power of two");
    if (slot_count != ring_degree / 2)
      throw std::invalid_argument("slot_count must equal ring_degree / 2");
    if (chain_length == 0)
      throw std::invalid_argument("chain_length must be positive");
    if (bootstrap_level > chain_length)
      throw std::invalid_argument("bootstrap_level exceeds chain_length");
    if (bytes_per_coefficient == 0)
      throw std::invalid_argument("bytes_per_coefficient must be positive");
  }
};

/// Slot layout: each token owns `slots_per_token` slots inside a ciphertext,
/// and a d_model-wide embedding spans `cts_per_token` ciphertexts.
struct PackingLayout {
  std::uint32_t slots_per_token = 0;
  std::uint32_t model_dim = 0;
  std::uint32_t head_dim = 0;

  std::uint32_t cts_per_token() const {
    return (model_dim + slots_per_token - 1) / slots_per_token;
  }

  std::uint32_t tokens_per_ciphertext(const CkksProfile& profile) const {
    return profile.slot_count / slots_per_token;
  }

  void validate(const CkksProfile& profile) const {
    if (slots_per_token == 0 || model_dim == 0 || head_dim == 0)
      throw std::invalid_argument("layout dimensions must be positive");
    if (slots_per_token > profile.slot_count)
      throw std::invalid_argument("slots_per_token exceeds slot_count");
    if (profile.slot_count % slots_per_token != 0)
      throw std::invalid_argument(
          "slot_count must be divisible by slots_per_token (full slot utilization)");
  }
};

enum class CiphertextRole : std::uint8_t {
  kActivation,
  kWeightSlice,
  kKey,
  kPartialResult,
};

/// Closed interval of token or embedding indices carried by a ciphertext.
struct IndexSpan {
  std::uint32_t begin = 0;
  std::uint32_t end = 0;  // exclusive

  std::uint32_t size() const { return end - begin; }
  bool operator==(const IndexSpan&) const = default;
};

struct CiphertextMeta {
  std::uint32_t level = 0;            ///< remaining main primes
  std::uint32_t component_count = 2;  ///< 2 for ciphertexts, 1 for plaintexts
  CiphertextRole role = CiphertextRole::kActivation;
  IndexSpan token_span{};
  IndexSpan embedding_span{};
  double valid_slot_fraction = 1.0;   ///< in (0, 1]; partial slots still ship whole

  void validate(const CkksProfile& profile) const {
    if (level > profile.chain_length)
      throw std::invalid_argument("ciphertext level exceeds chain_length");
    if (component_count == 0)
      throw std::invalid_argument("component_count must be positive");
    if (valid_slot_fraction <= 0.0 || valid_slot_fraction > 1.0)
      throw std::invalid_argument("valid_slot_fraction must lie in (0, 1]");
  }
};

/// Single-box device group joined by identical point-to-point links.
struct Topology {
  std::uint32_t device_count = 1;
  Bytes per_device_memory_bytes = 0;
  double link_bandwidth_bytes_per_s = 0.0;
  double link_latency_s = 0.0;
  double compute_scale = 1.0;  ///< throughput multiplier for calibration

  void validate() const {
    if (device_count < 1)
      throw std::invalid_argument("device_count must be >= 1");
    if (link_bandwidth_bytes_per_s <= 0.0)
      throw std::invalid_argument("link_bandwidth must be positive");
    if (link_latency_s < 0.0)
      throw std::invalid_argument("link_latency must be non-negative");
    if (compute_scale <= 0.0)
      throw std::invalid_argument("compute_scale must be positive");
  }
};

enum class CollectiveKind : std::uint8_t {
  kP2P,
  kAllReduce,
  kAllGather,
  kReduceScatter,
};

inline const char* to_string(CollectiveKind kind) {
  switch (kind) {
    case CollectiveKind::kP2P: return "p2p";
    case CollectiveKind::kAllReduce: return "all_reduce";
    case CollectiveKind::kAllGather: return "all_gather";
    case CollectiveKind::kReduceScatter: return "reduce_scatter";
  }
  return "?";
}

/// Wire size of one ciphertext: components × limbs × N × coefficient bytes.
/// A zero level has no limbs left and cannot be materialized.
inline Bytes ciphertext_bytes(const CkksProfile& profile, std::uint32_t level,
                              std::uint32_t component_count = 2) {
  if (level == 0) throw std::invalid_argument("exhausted modulus chain");
  return Bytes{component_count} * level * profile.ring_degree *
         profile.bytes_per_coefficient;
}

inline Bytes ciphertext_bytes(const CkksProfile& profile, const CiphertextMeta& meta) {
  meta.validate(profile);
  return ciphertext_bytes(profile, meta.level, meta.component_count);
}

/// Encoded plaintext (single component) at the given level.
inline Bytes plaintext_bytes(const CkksProfile& profile, std::uint32_t level) {
  return ciphertext_bytes(profile, level, 1);
}

/// Number of ciphertexts required to carry T tokens under the layout:
/// ceil(T / tokens_per_ciphertext) token groups, each cts_per_token wide.
inline std::uint64_t k_send(std::uint64_t tokens, const PackingLayout& layout,
                            const CkksProfile& profile) {
  if (tokens == 0) throw std::invalid_argument("k_send requires at least one token");
  const std::uint64_t per_ct = layout.tokens_per_ciphertext(profile);
  const std::uint64_t groups = (tokens + per_ct - 1) / per_ct;
  return groups * layout.cts_per_token();
}

/// Per-device communication cost of moving T tokens at the given level.
/// AllGather and ReduceScatter share the ring-equivalent volume model.
inline Bytes collective_bytes(CollectiveKind kind, std::uint64_t tokens,
                              std::uint32_t level, std::uint32_t device_count,
                              const PackingLayout& layout, const CkksProfile& profile) {
  const Bytes p2p = k_send(tokens, layout, profile) * ciphertext_bytes(profile, level);
  if (kind == CollectiveKind::kP2P) return p2p;
  if (device_count < 2)
    throw std::invalid_argument("collective requires multiple devices");
  switch (kind) {
    case CollectiveKind::kAllReduce:
      return Bytes{device_count - 1} * p2p;
    case CollectiveKind::kAllGather:
    case CollectiveKind::kReduceScatter: {
      const std::uint64_t shard = (tokens + device_count - 1) / device_count;
      return Bytes{device_count - 1} *
             k_send(shard, layout, profile) * ciphertext_bytes(profile, level);
    }
    default:
      break;
  }
  return p2p;
}

/// Unencrypted reference cost for the same collective (bf16 by default).
inline Bytes plaintext_collective_bytes(CollectiveKind kind, std::uint64_t tokens,
                                        std::uint32_t device_count,
                                        std::uint32_t model_dim,
                                        std::uint32_t element_bytes = 2) {
  const Bytes p2p = Bytes{tokens} * model_dim * element_bytes;
  switch (kind) {
    case CollectiveKind::kP2P:
      return p2p;
    case CollectiveKind::kAllReduce:
      return Bytes{device_count - 1} * p2p;
    case CollectiveKind::kAllGather:
    case CollectiveKind::kReduceScatter:
      return Bytes{device_count - 1} * (p2p / device_count);
  }
  return p2p;
}

/// One key-switching key: digit_count × 2 components over the extended basis.
inline Bytes key_switch_key_bytes(const CkksProfile& profile) {
  const std::uint32_t special = profile.special_prime_count ? profile.special_prime_count : 1;
  const std::uint32_t digits = (profile.chain_length + special - 1) / special;
  return Bytes{digits} * 2 *
         (profile.chain_length + profile.special_prime_count) *
         profile.ring_degree * profile.bytes_per_coefficient;
}

/// Per-matmul accounting input for the weight byte model.
struct MatmulFootprint {
  std::uint64_t param_count = 0;
  std::uint32_t entry_level = 0;
};

/// Everything the memory model needs to know about a transformer workload.
/// Built by the model layer (see graph.hpp); kept as plain data here.
struct ModelMemoryProfile {
  std::vector<MatmulFootprint> matmuls;   ///< all layers, encode level included
  std::uint32_t head_count = 0;
  std::uint32_t input_level = 0;          ///< level of client-fresh activations
  std::uint32_t score_level = 0;          ///< level attention scores live at
  double weight_encoding_density = 1.0;   ///< packing efficiency of encoded slices
  std::uint32_t key_count = 0;            ///< rotation + relinearization keys
};

struct MemoryBreakdown {
  Bytes activation_bytes = 0;
  Bytes encoded_weight_bytes = 0;
  Bytes key_bytes = 0;

  Bytes total() const { return activation_bytes + encoded_weight_bytes + key_bytes; }
};

/// Attention-score ciphertext count: T x T scores per head, slot-packed.
inline std::uint64_t score_ciphertext_count(std::uint64_t tokens, std::uint32_t heads,
                                            const CkksProfile& profile) {
  const std::uint64_t values = tokens * tokens * heads;
  return (values + profile.slot_count - 1) / profile.slot_count;
}

/// Peak runtime memory model. Activations follow the streamed live set:
/// the resident input ciphertexts plus the attention-score block plus two
/// transient head slices; weights are encoded plaintext slices at their
/// entry levels; keys use the key-switching key size model.
inline MemoryBreakdown memory_breakdown(std::uint64_t tokens,
                                        const ModelMemoryProfile& model,
                                        const CkksProfile& profile,
                                        const PackingLayout& layout) {
  MemoryBreakdown out;
  if (tokens > 0) {
    const Bytes input = k_send(tokens, layout, profile) *
                        ciphertext_bytes(profile, model.input_level);
    const Bytes scores = score_ciphertext_count(tokens, model.head_count, profile) *
                         ciphertext_bytes(profile, model.score_level);
    const Bytes transient = 2 * ciphertext_bytes(profile, model.input_level - 1);
    out.activation_bytes = input + scores + transient;
  }
  for (const MatmulFootprint& mm : model.matmuls) {
    const std::uint64_t slices =
        (mm.param_count + profile.slot_count - 1) / profile.slot_count;
    out.encoded_weight_bytes += static_cast<Bytes>(
        static_cast<double>(slices * plaintext_bytes(profile, mm.entry_level)) *
        model.weight_encoding_density);
  }
  out.key_bytes = Bytes{model.key_count} * key_switch_key_bytes(profile);
  return out;
}

}  // namespace heplan
