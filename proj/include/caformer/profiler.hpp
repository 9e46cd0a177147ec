#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "caformer/pipeline.hpp"

namespace caformer {

/// MACs of one layer, summed over both branches (the CME runs once for both).
struct LayerCost {
  int layer = 0;
  Index tokens = 0;  // per branch
  std::uint64_t attention_macs = 0;
  std::uint64_t mlp_macs = 0;
  std::uint64_t cme_macs = 0;

  std::uint64_t total() const { return attention_macs + mlp_macs + cme_macs; }
  friend bool operator==(const LayerCost&, const LayerCost&) = default;
};

struct CostReport {
  TrackerConfig config;
  std::vector<LayerCost> per_layer;
  std::uint64_t backbone_macs = 0;  // Σ per_layer
  std::uint64_t embedding_macs = 0;
  std::uint64_t head_macs = 0;

  std::uint64_t total_with_io() const { return backbone_macs + embedding_macs + head_macs; }
  friend bool operator==(const CostReport&, const CostReport&) = default;
};

/// Per-branch attention MACs at N tokens: 4NC² + 2N²C.
std::uint64_t attention_macs(Index tokens, Index channels);
/// Per-branch MLP MACs at N tokens: 8NC².
std::uint64_t mlp_macs(Index tokens, Index channels);
/// One CME invocation over all heads, from its matrix shapes.
std::uint64_t cme_macs(Index n_z, Index n_x, Index heads);

/// Closed-form cost of `cfg`. With `full_scale`, the geometry is replaced by
/// the ViT-B one (C = 768, L = 12, 12 heads, N_z = 64, N_x = 256) while the
/// CME/CTE schedule and keep ratio are kept.
CostReport estimate(const TrackerConfig& cfg, bool full_scale = false);

/// Counts matmul MACs during a real forward pass.
CostReport measure(const TrackerConfig& cfg, const TrackerParams& params,
                   const FrameInputs& inputs);

/// Builds a report from a pass-local counter.
CostReport report_from_counter(const TrackerConfig& cfg, const MacCounter& counter,
                               const Diagnostics& diagnostics);

std::string to_json(const CostReport& report, bool giga = false);

}  // namespace caformer
