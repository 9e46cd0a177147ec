#pragma once

#include "caformer/attention.hpp"

namespace caformer {

/// Search-region box in normalised coordinates.
struct BBox {
  double cx = 0.0, cy = 0.0, w = 0.0, h = 0.0;

  friend bool operator==(const BBox&, const BBox&) = default;
};

/// Per-position map stack (shared across positions): 2C → hidden → out.
struct HeadBranch {
  TokenMatrix w1, b1, w2, b2;
};

struct HeadParams {
  HeadBranch score;   // out = 1
  HeadBranch offset;  // out = 2 (x, y)
  HeadBranch size;    // out = 2 (w, h)
};

template <typename P, typename F>
void visit_fields(P& p, F&& f) requires requires { p.offset; } {
  const auto branch = [&f](const std::string& name, auto& b) {
    f((name + ".w1").c_str(), b.w1);
    f((name + ".b1").c_str(), b.b1);
    f((name + ".w2").c_str(), b.w2);
    f((name + ".b2").c_str(), b.b2);
  };
  branch("score", p.score);
  branch("offset", p.offset);
  branch("size", p.size);
}

struct HeadBranchVars {
  Var w1, b1, w2, b2;
};

struct HeadVars {
  HeadBranchVars score, offset, size;
};

HeadVars bind_params(Tape& tape, const HeadParams& p, LeafList* leaves = nullptr,
              const std::string& prefix = {});

/// Three maps over a side×side grid, stored with the image layout: row i,
/// column j·k + channel. score is side×side in [0,1]; offset and size are
/// side×(2·side) with channels (x, y) and (w, h).
struct ScoreMaps {
  Index side = 0;
  TokenMatrix score, offset, size;

  double offset_x(Index i, Index j) const { return offset(i, 2 * j); }
  double offset_y(Index i, Index j) const { return offset(i, 2 * j + 1); }
  double width(Index i, Index j) const { return size(i, 2 * j); }
  double height(Index i, Index j) const { return size(i, 2 * j + 1); }
};

/// Drops template rows and concatenates channels rgb-then-tir. Row i·side + j
/// of the result is grid cell (i, j); shape side² × 2C.
Var fuse_and_fold(const Var& f_rgb, const Var& f_tir, Index n_z, Index side);
TokenMatrix fuse_and_fold(const TokenMatrix& f_rgb, const TokenMatrix& f_tir, Index n_z,
                          Index side);

/// Raw head outputs, one row per grid cell: score side²×1, offset and size side²×2.
struct HeadOutput {
  Var score, offset, size;
};

HeadOutput predict(const Var& features, const HeadVars& p);
ScoreMaps to_maps(const HeadOutput& out, Index side);
ScoreMaps predict(const TokenMatrix& features, Index side, const HeadParams& p);

/// Argmax of the score map (ties: smaller row, then smaller column) plus the
/// offset and size read at that cell.
BBox decode(const ScoreMaps& maps);

double iou(const BBox& a, const BBox& b);

}  // namespace caformer
