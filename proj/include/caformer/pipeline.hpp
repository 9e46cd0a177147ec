#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "caformer/attention.hpp"
#include "caformer/elimination.hpp"
#include "caformer/embedding.hpp"
#include "caformer/head.hpp"

namespace caformer {

/// Structural hyperparameters. Layer indices are 1-based.
struct TrackerConfig {
  Index patch = 4;
  Index channels = 32;
  Index heads = 4;
  int layers = 12;
  Index template_side = 16;
  Index search_side = 32;
  std::set<int> cma_layers{10, 11, 12};
  std::set<int> cte_layers{4, 7, 10};
  double keep_ratio = 0.7;
  std::uint64_t seed = 0;

  /// Desk-scale defaults (N_z = 16, N_x = 64).
  static TrackerConfig desk();
  /// ViT-B geometry: C = 768, 12 heads, P = 16, 128/256 crops. No CME, no CTE.
  static TrackerConfig full();

  /// Throws ConfigError naming the offending field.
  void validate() const;

  Index template_grid() const { return template_side / patch; }
  Index search_grid() const { return search_side / patch; }
  Index template_tokens() const { return template_grid() * template_grid(); }
  Index search_tokens() const { return search_grid() * search_grid(); }
  Index patch_dim() const { return 3 * patch * patch; }
  Index head_dim() const { return channels / heads; }

  /// Search tokens entering layer l (1-based), following the CTE schedule.
  Index search_tokens_at(int layer) const;
  /// Search tokens leaving the last layer.
  Index final_search_tokens() const;

  friend bool operator==(const TrackerConfig&, const TrackerConfig&) = default;
};

template <typename T>
struct ModalityPair {
  T rgb;
  T tir;
};

struct ImagePair {
  ImageTensor template_image;
  ImageTensor search_image;
};

using FrameInputs = ModalityPair<ImagePair>;

struct TrackerParams {
  TokenMatrix w0;  // 3P² × C, shared by all four streams
  PositionalEncoding pe;
  std::vector<BlockParams> blocks;  // index l-1 for layer l
  std::map<int, CmeParams> cme;     // keyed by layer
  HeadParams head;
};

/// Visits every tensor with a stable, unique name.
template <typename F>
void visit_params(TrackerParams& p, F&& f);
template <typename F>
void visit_params(const TrackerParams& p, F&& f);

/// Seeded init: layernorm gains 1, biases 0, w_mod 0, everything else
/// N(0, 0.02²).
TrackerParams init_params(const TrackerConfig& cfg, std::uint64_t seed);

struct ForwardOptions {
  bool record_features = false;
  bool record_attention = false;
  /// Replaces every CME with its zero-output variant (w_mod = -I).
  bool null_modulation = false;
};

struct LayerRecord {
  int layer = 0;
  Index tokens = 0;        // per branch, entering the layer
  bool cross_modulated = false;
  std::optional<KeepSet> keep;  // elimination applied after this layer
  ModalityPair<TokenMatrix> features;  // block outputs, when recorded
  ModalityPair<std::vector<TokenMatrix>> attention;  // per head, when recorded
};

struct Diagnostics {
  std::vector<LayerRecord> layers;
  KeepChain chain;
};

struct ForwardResult {
  BBox box;
  ScoreMaps maps;
  Diagnostics diagnostics;
  MacCounter macs;
};

/// Forward pass recorded on `tape`. With `leaves` non-null every parameter is a
/// differentiable leaf and is listed there.
struct TracedForward {
  HeadOutput head;
  Index grid = 0;
  Diagnostics diagnostics;
};

TracedForward forward_traced(Tape& tape, const TrackerConfig& cfg, const FrameInputs& inputs,
                             const TrackerParams& params, const ForwardOptions& options = {},
                             LeafList* leaves = nullptr);

ForwardResult forward(const TrackerConfig& cfg, const FrameInputs& inputs,
                      const TrackerParams& params, const ForwardOptions& options = {});

struct TrackingScores {
  double precision = 0.0;  // fraction with centre error ≤ 20 px
  double success = 0.0;    // success-curve AUC
};

/// `pixel_scale` converts normalised coordinates to pixels (the search side).
TrackingScores precision_success(const std::vector<BBox>& pred, const std::vector<BBox>& truth,
                                 double pixel_scale);

// ---------------------------------------------------------------------------

namespace detail {
std::string block_prefix(int layer);
std::string cme_prefix(int layer);
}  // namespace detail

template <typename Params, typename F>
void visit_params_impl(Params& p, F&& f) {
  f(std::string("embed.w0"), p.w0);
  f(std::string("embed.template_pe"), p.pe.template_pe);
  f(std::string("embed.search_pe"), p.pe.search_pe);
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    const std::string prefix = detail::block_prefix(static_cast<int>(i) + 1);
    visit_fields(p.blocks[i], [&](const char* name, auto& m) { f(prefix + name, m); });
  }
  for (auto& [layer, cme] : p.cme) {
    const std::string prefix = detail::cme_prefix(layer);
    visit_fields(cme, [&](const char* name, auto& m) { f(prefix + name, m); });
  }
  visit_fields(p.head, [&](const char* name, auto& m) { f(std::string("head.") + name, m); });
}

template <typename F>
void visit_params(TrackerParams& p, F&& f) {
  visit_params_impl(p, std::forward<F>(f));
}

template <typename F>
void visit_params(const TrackerParams& p, F&& f) {
  visit_params_impl(p, std::forward<F>(f));
}

}  // namespace caformer
