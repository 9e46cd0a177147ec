#include "caformer/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <random>
#include <tuple>

namespace caformer {
namespace detail {

std::string block_prefix(int layer) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "block%02d.", layer);
  return buf;
}

std::string cme_prefix(int layer) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "cme%02d.", layer);
  return buf;
}

}  // namespace detail

namespace {

constexpr double kInitStddev = 0.02;
constexpr int kMlpRatio = 4;

void check_layer_set(const std::set<int>& layers, int total, const char* field) {
  for (int l : layers)
    if (l < 1 || l > total)
      throw ConfigError(std::string(field) + ": layer " + std::to_string(l) + " outside 1.." +
                        std::to_string(total));
}

class GaussianInit {
 public:
  explicit GaussianInit(std::uint64_t seed) : rng_(seed), dist_(0.0, kInitStddev) {}

  TokenMatrix operator()(Index rows, Index cols) {
    TokenMatrix m(rows, cols);
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < cols; ++c) m(r, c) = dist_(rng_);
    return m;
  }

 private:
  std::mt19937_64 rng_;
  std::normal_distribution<double> dist_;
};

TokenMatrix ones(Index n) { return TokenMatrix::Ones(1, n); }
TokenMatrix zeros(Index n) { return TokenMatrix::Zero(1, n); }

BlockParams init_block(const TrackerConfig& cfg, GaussianInit& gauss) {
  const Index c = cfg.channels;
  const Index hidden = kMlpRatio * c;
  BlockParams b;
  b.heads = cfg.heads;
  b.ln1_gain = ones(c);
  b.ln1_bias = zeros(c);
  b.wq = gauss(c, c);
  b.bq = zeros(c);
  b.wk = gauss(c, c);
  b.bk = zeros(c);
  b.wv = gauss(c, c);
  b.bv = zeros(c);
  b.wo = gauss(c, c);
  b.bo = zeros(c);
  b.ln2_gain = ones(c);
  b.ln2_bias = zeros(c);
  b.w1 = gauss(c, hidden);
  b.b1 = zeros(hidden);
  b.w2 = gauss(hidden, c);
  b.b2 = zeros(c);
  return b;
}

CmeParams init_cme(Index n_z, Index n_x, GaussianInit& gauss) {
  const Index n = n_z + n_x;
  CmeParams p;
  p.ln1_gain = ones(n);
  p.ln1_bias = zeros(n);
  p.w_e = gauss(n, n_z);
  p.ln2_gain = ones(n_z);
  p.ln2_bias = zeros(n_z);
  p.w_q = gauss(n_z, n_z);
  p.w_k = gauss(n_z, n_z);
  p.w_mod = TokenMatrix::Zero(n_z, n_z);
  return p;
}

HeadBranch init_head_branch(Index in, Index hidden, Index out, GaussianInit& gauss) {
  return {gauss(in, hidden), zeros(hidden), gauss(hidden, out), zeros(out)};
}

void check_image(const ImageTensor& img, Index side, const char* what) {
  if (img.height() != side || img.width() != side)
    throw ConfigError(std::string(what) + ": expected " + std::to_string(side) + "x" +
                      std::to_string(side) + " image, got " + std::to_string(img.height()) + "x" +
                      std::to_string(img.width()));
}

void check_params(const TrackerConfig& cfg, const TrackerParams& p) {
  if (p.w0.rows() != cfg.patch_dim() || p.w0.cols() != cfg.channels)
    throw DimensionError("params: embed.w0 is " + shape_string(p.w0));
  if (static_cast<int>(p.blocks.size()) != cfg.layers)
    throw DimensionError("params: " + std::to_string(p.blocks.size()) + " blocks for " +
                         std::to_string(cfg.layers) + " layers");
  for (int l : cfg.cma_layers) {
    const auto it = p.cme.find(l);
    if (it == p.cme.end())
      throw DimensionError("params: missing CME parameters for layer " + std::to_string(l));
    if (it->second.total_tokens() != cfg.template_tokens() + cfg.search_tokens_at(l) ||
        it->second.template_tokens() != cfg.template_tokens())
      throw DimensionError("params: CME of layer " + std::to_string(l) + " sized for N=" +
                           std::to_string(it->second.total_tokens()));
  }
}

}  // namespace

TrackerConfig TrackerConfig::desk() { return TrackerConfig{}; }

TrackerConfig TrackerConfig::full() {
  TrackerConfig cfg;
  cfg.patch = 16;
  cfg.channels = 768;
  cfg.heads = 12;
  cfg.layers = 12;
  cfg.template_side = 128;
  cfg.search_side = 256;
  cfg.cma_layers = {};
  cfg.cte_layers = {};
  return cfg;
}

void TrackerConfig::validate() const {
  if (patch < 1) throw ConfigError("patch: must be positive");
  if (channels < 1) throw ConfigError("channels: must be positive");
  if (heads < 1) throw ConfigError("heads: must be positive");
  if (channels % heads != 0)
    throw ConfigError("heads: " + std::to_string(heads) + " does not divide channels " +
                      std::to_string(channels));
  if (layers < 1) throw ConfigError("layers: must be positive");
  if (template_side < 1 || template_side % patch != 0)
    throw ConfigError("template_side: " + std::to_string(template_side) +
                      " not a positive multiple of patch " + std::to_string(patch));
  if (search_side < 1 || search_side % patch != 0)
    throw ConfigError("search_side: " + std::to_string(search_side) +
                      " not a positive multiple of patch " + std::to_string(patch));
  check_layer_set(cma_layers, layers, "cma_layers");
  check_layer_set(cte_layers, layers, "cte_layers");
  if (!(keep_ratio > 0.0 && keep_ratio <= 1.0))
    throw ConfigError("keep_ratio: " + std::to_string(keep_ratio) + " outside (0, 1]");
}

Index TrackerConfig::search_tokens_at(int layer) const {
  Index count = search_tokens();
  for (int l : cte_layers)
    if (l < layer) count = keep_count(count, keep_ratio);
  return count;
}

Index TrackerConfig::final_search_tokens() const { return search_tokens_at(layers + 1); }

TrackerParams init_params(const TrackerConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  GaussianInit gauss(seed);
  TrackerParams p;
  p.w0 = gauss(cfg.patch_dim(), cfg.channels);
  p.pe.template_pe = gauss(cfg.template_tokens(), cfg.channels);
  p.pe.search_pe = gauss(cfg.search_tokens(), cfg.channels);
  for (int l = 1; l <= cfg.layers; ++l) p.blocks.push_back(init_block(cfg, gauss));
  for (int l : cfg.cma_layers)
    p.cme.emplace(l, init_cme(cfg.template_tokens(), cfg.search_tokens_at(l), gauss));
  const Index fused = 2 * cfg.channels;
  p.head.score = init_head_branch(fused, cfg.channels, 1, gauss);
  p.head.offset = init_head_branch(fused, cfg.channels, 2, gauss);
  p.head.size = init_head_branch(fused, cfg.channels, 2, gauss);
  return p;
}

TracedForward forward_traced(Tape& tape, const TrackerConfig& cfg, const FrameInputs& inputs,
                             const TrackerParams& params, const ForwardOptions& options,
                             LeafList* leaves) {
  cfg.validate();
  check_params(cfg, params);
  check_image(inputs.rgb.template_image, cfg.template_side, "rgb template");
  check_image(inputs.tir.template_image, cfg.template_side, "tir template");
  check_image(inputs.rgb.search_image, cfg.search_side, "rgb search");
  check_image(inputs.tir.search_image, cfg.search_side, "tir search");

  const auto put = [&](const TokenMatrix& m, const std::string& name) {
    if (!leaves) return tape.constant(m);
    Var v = tape.leaf(m, name);
    leaves->emplace_back(name, v);
    return v;
  };

  const Index n_z = cfg.template_tokens();
  TracedForward result;
  result.grid = cfg.search_grid();

  Var f_rgb, f_tir;
  {
    CostScope<double> scope(tape, 0, CostCategory::kEmbedding);
    const Var w0 = put(params.w0, "embed.w0");
    const Var pe_z = put(params.pe.template_pe, "embed.template_pe");
    const Var pe_x = put(params.pe.search_pe, "embed.search_pe");
    const auto stream = [&](const ImagePair& pair) {
      const Var z = embed(tape.constant(patchify(pair.template_image, cfg.patch)), w0, pe_z);
      const Var x = embed(tape.constant(patchify(pair.search_image, cfg.patch)), w0, pe_x);
      return concat_tokens(z, x);
    };
    f_rgb = stream(inputs.rgb);
    f_tir = stream(inputs.tir);
  }

  const Index center = center_token(cfg.template_grid());
  const Index dh = cfg.head_dim();
  for (int l = 1; l <= cfg.layers; ++l) {
    CostScope<double> scope(tape, l, CostCategory::kOther);
    const BlockVars bp = bind_params(tape, params.blocks[static_cast<std::size_t>(l - 1)], leaves,
                              detail::block_prefix(l));
    LayerRecord record;
    record.layer = l;
    record.tokens = f_rgb.rows();
    record.cross_modulated = cfg.cma_layers.count(l) > 0;

    BlockOutput out_rgb, out_tir;
    if (record.cross_modulated) {
      const CmeParams& raw = params.cme.at(l);
      const CmeVars cp = options.null_modulation
                             ? bind_params(tape, null_modulation(raw), leaves, detail::cme_prefix(l))
                             : bind_params(tape, raw, leaves, detail::cme_prefix(l));
      std::tie(out_rgb, out_tir) = caformer_block(f_rgb, f_tir, bp, cp, n_z);
    } else {
      out_rgb = standard_block(f_rgb, bp);
      out_tir = standard_block(f_tir, bp);
    }
    f_rgb = out_rgb.out;
    f_tir = out_tir.out;

    if (options.record_features) record.features = {f_rgb.value(), f_tir.value()};
    if (options.record_attention) {
      for (const Var& a : out_rgb.attention) record.attention.rgb.push_back(a.value());
      for (const Var& a : out_tir.attention) record.attention.tir.push_back(a.value());
    }

    if (cfg.cte_layers.count(l) > 0) {
      const Index n_x = f_rgb.rows() - n_z;
      const Vector q_rgb = out_rgb.qkv.q.value().block(center, 0, 1, dh);
      const Vector q_tir = out_tir.qkv.q.value().block(center, 0, 1, dh);
      const TokenMatrix k_rgb = out_rgb.qkv.k.value().block(n_z, 0, n_x, dh);
      const TokenMatrix k_tir = out_tir.qkv.k.value().block(n_z, 0, n_x, dh);
      const KeepSet ks = select_topk(cte_scores(q_rgb, q_tir, k_rgb, k_tir), cfg.keep_ratio);
      f_rgb = apply_keep(f_rgb, n_z, ks);
      f_tir = apply_keep(f_tir, n_z, ks);
      record.keep = ks;
      result.diagnostics.chain.push_back(ks);
    }
    result.diagnostics.layers.push_back(std::move(record));
  }

  CostScope<double> scope(tape, 0, CostCategory::kHead);
  const Var restored_rgb = restore(f_rgb, n_z, result.diagnostics.chain);
  const Var restored_tir = restore(f_tir, n_z, result.diagnostics.chain);
  const Var fused = fuse_and_fold(restored_rgb, restored_tir, n_z, cfg.search_grid());
  result.head = predict(fused, bind_params(tape, params.head, leaves, "head."));
  return result;
}

ForwardResult forward(const TrackerConfig& cfg, const FrameInputs& inputs,
                      const TrackerParams& params, const ForwardOptions& options) {
  Tape tape;
  TracedForward traced = forward_traced(tape, cfg, inputs, params, options);
  ForwardResult result;
  result.maps = to_maps(traced.head, traced.grid);
  result.box = decode(result.maps);
  result.diagnostics = std::move(traced.diagnostics);
  result.macs = tape.macs();
  return result;
}

TrackingScores precision_success(const std::vector<BBox>& pred, const std::vector<BBox>& truth,
                                 double pixel_scale) {
  if (pred.empty() || truth.empty()) throw UsageError("precision_success: empty box lists");
  if (pred.size() != truth.size())
    throw UsageError("precision_success: " + std::to_string(pred.size()) + " predictions for " +
                     std::to_string(truth.size()) + " ground-truth boxes");
  constexpr double kPixelThreshold = 20.0;
  constexpr int kThresholds = 20;  // 0, 0.05, ..., 0.95
  const double frames = static_cast<double>(pred.size());

  std::size_t precise = 0;
  std::vector<double> overlaps;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double dx = (pred[i].cx - truth[i].cx) * pixel_scale;
    const double dy = (pred[i].cy - truth[i].cy) * pixel_scale;
    if (std::hypot(dx, dy) <= kPixelThreshold) ++precise;
    overlaps.push_back(iou(pred[i], truth[i]));
  }
  double auc = 0.0;
  for (int t = 0; t < kThresholds; ++t) {
    const double threshold = 0.05 * t;
    std::size_t hits = 0;
    for (double o : overlaps)
      if (o > threshold) ++hits;
    auc += static_cast<double>(hits) / frames;
  }
  return {static_cast<double>(precise) / frames, auc / kThresholds};
}

}  // namespace caformer
