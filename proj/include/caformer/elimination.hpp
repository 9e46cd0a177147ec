#pragma once

#include <string>
#include <vector>

#include "caformer/numerics/tape.hpp"

namespace caformer {

/// Search tokens surviving one elimination stage. Positions index the
/// stage's input sequence (not the original grid) and are strictly increasing.
struct KeepSet {
  std::vector<Index> kept_positions;
  Index original_count = 0;

  static KeepSet all(Index count);
  Index kept() const { return static_cast<Index>(kept_positions.size()); }
  /// Throws ContractViolation unless positions are strictly increasing and in range.
  void validate() const;

  friend bool operator==(const KeepSet&, const KeepSet&) = default;
};

using KeepChain = std::vector<KeepSet>;

/// Index of the template grid's center token, (g/2)·g + g/2.
Index center_token(Index template_grid_side);

/// floor(ratio·count), at least 1.
Index keep_count(Index count, double keep_ratio);

/// softmax(q_rgb·K_rgbᵀ) + softmax(q_tir·K_tirᵀ); one score per search token.
Vector cte_scores(const Vector& q_rgb_center, const Vector& q_tir_center,
                  const TokenMatrix& k_rgb_search, const TokenMatrix& k_tir_search);

/// Keeps the keep_count(h.size(), ratio) highest scores; ties prefer the lower
/// index. The result is sorted by position.
KeepSet select_topk(const Vector& h, double keep_ratio);

/// Template rows untouched; search rows filtered to the kept positions.
TokenMatrix apply_keep(const TokenMatrix& f, Index n_z, const KeepSet& ks);
Var apply_keep(const Var& f, Index n_z, const KeepSet& ks);

/// Absolute (original-grid) positions of the tokens surviving the chain.
std::vector<Index> surviving_positions(const KeepChain& chain);

/// Re-expands search rows to the original count; eliminated tokens are zero.
TokenMatrix restore(const TokenMatrix& f, Index n_z, const KeepChain& chain);
Var restore(const Var& f, Index n_z, const KeepChain& chain);

/// One line per stage, comma-separated kept positions.
std::string format_chain(const KeepChain& chain);
/// Inverse of format_chain; stage counts are inferred from the previous stage
/// so the first stage needs `original_count`.
KeepChain parse_chain(const std::string& text, Index original_count);

}  // namespace caformer
