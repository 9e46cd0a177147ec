#include "caformer/head.hpp"

#include <algorithm>
#include <numeric>

namespace caformer {
namespace {

// Keeps decoded sizes strictly positive when a sigmoid underflows.
constexpr double kMinSize = 1e-12;

HeadBranchVars bind_branch(Tape& tape, const HeadBranch& b, LeafList* leaves,
                           const std::string& prefix) {
  const auto put = [&](const TokenMatrix& m, const char* field) {
    if (!leaves) return tape.constant(m);
    Var v = tape.leaf(m, prefix + field);
    leaves->emplace_back(prefix + field, v);
    return v;
  };
  HeadBranchVars v;
  v.w1 = put(b.w1, ".w1");
  v.b1 = put(b.b1, ".b1");
  v.w2 = put(b.w2, ".w2");
  v.b2 = put(b.b2, ".b2");
  return v;
}

Var run_branch(const Var& x, const HeadBranchVars& b) {
  const Var hidden = gelu(add_bias(matmul(x, b.w1), b.b1));
  return sigmoid(add_bias(matmul(hidden, b.w2), b.b2));
}

/// side²×k rows-per-cell layout → side×(side·k) image layout.
TokenMatrix cells_to_grid(const TokenMatrix& cells, Index side) {
  const Index k = cells.cols();
  TokenMatrix grid(side, side * k);
  for (Index i = 0; i < side; ++i)
    for (Index j = 0; j < side; ++j) grid.row(i).segment(j * k, k) = cells.row(i * side + j);
  return grid;
}

}  // namespace

HeadVars bind_params(Tape& tape, const HeadParams& p, LeafList* leaves, const std::string& prefix) {
  return {bind_branch(tape, p.score, leaves, prefix + "score"),
          bind_branch(tape, p.offset, leaves, prefix + "offset"),
          bind_branch(tape, p.size, leaves, prefix + "size")};
}

Var fuse_and_fold(const Var& f_rgb, const Var& f_tir, Index n_z, Index side) {
  const Index expected = n_z + side * side;
  if (f_rgb.rows() != expected || f_tir.rows() != expected)
    throw ContractViolation("fuse_and_fold: expected " + std::to_string(expected) +
                            " rows, got rgb " + std::to_string(f_rgb.rows()) + " / tir " +
                            std::to_string(f_tir.rows()));
  if (f_rgb.cols() != f_tir.cols())
    throw ContractViolation("fuse_and_fold: channel counts differ");
  return hstack<double>({block(f_rgb, n_z, 0, side * side, f_rgb.cols()),
                         block(f_tir, n_z, 0, side * side, f_tir.cols())});
}

TokenMatrix fuse_and_fold(const TokenMatrix& f_rgb, const TokenMatrix& f_tir, Index n_z,
                          Index side) {
  Tape tape;
  return fuse_and_fold(tape.constant(f_rgb), tape.constant(f_tir), n_z, side).value();
}

HeadOutput predict(const Var& features, const HeadVars& p) {
  return {run_branch(features, p.score), run_branch(features, p.offset),
          run_branch(features, p.size)};
}

ScoreMaps to_maps(const HeadOutput& out, Index side) {
  if (out.score.rows() != side * side)
    throw DimensionError("to_maps: " + std::to_string(out.score.rows()) + " cells for side " +
                         std::to_string(side));
  ScoreMaps maps;
  maps.side = side;
  maps.score = cells_to_grid(out.score.value(), side);
  maps.offset = cells_to_grid(out.offset.value(), side);
  maps.size = cells_to_grid(out.size.value(), side);
  return maps;
}

ScoreMaps predict(const TokenMatrix& features, Index side, const HeadParams& p) {
  Tape tape;
  return to_maps(predict(tape.constant(features), bind_params(tape, p)), side);
}

BBox decode(const ScoreMaps& maps) {
  if (maps.side < 1 || maps.score.rows() != maps.side || maps.score.cols() != maps.side)
    throw DimensionError("decode: malformed score map");
  Index best_i = 0, best_j = 0;
  for (Index i = 0; i < maps.side; ++i)
    for (Index j = 0; j < maps.side; ++j)
      if (maps.score(i, j) > maps.score(best_i, best_j)) {
        best_i = i;
        best_j = j;
      }
  const double side = static_cast<double>(maps.side);
  BBox box;
  box.cx = (static_cast<double>(best_j) + maps.offset_x(best_i, best_j)) / side;
  box.cy = (static_cast<double>(best_i) + maps.offset_y(best_i, best_j)) / side;
  box.w = std::clamp(maps.width(best_i, best_j), kMinSize, 1.0);
  box.h = std::clamp(maps.height(best_i, best_j), kMinSize, 1.0);
  return box;
}

double iou(const BBox& a, const BBox& b) {
  // Corner form so that iou(a, a) is exactly 1.
  const double ax0 = a.cx - a.w / 2, ax1 = a.cx + a.w / 2;
  const double ay0 = a.cy - a.h / 2, ay1 = a.cy + a.h / 2;
  const double bx0 = b.cx - b.w / 2, bx1 = b.cx + b.w / 2;
  const double by0 = b.cy - b.h / 2, by1 = b.cy + b.h / 2;
  const double ix = std::max(0.0, std::min(ax1, bx1) - std::max(ax0, bx0));
  const double iy = std::max(0.0, std::min(ay1, by1) - std::max(ay0, by0));
  const double inter = ix * iy;
  const double uni = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

}  // namespace caformer
