#include "caformer/profiler.hpp"

#include <cstdio>
#include <json.hpp>

#include "caformer/config_io.hpp"

namespace caformer {
namespace {

using u64 = std::uint64_t;

u64 as_u64(Index v) { return static_cast<u64>(v); }

constexpr u64 kHeadOutputs[] = {1, 2, 2};

std::string giga_string(u64 macs) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", static_cast<double>(macs) / 1e9);
  return buf;
}

}  // namespace

u64 attention_macs(Index tokens, Index channels) {
  const u64 n = as_u64(tokens), c = as_u64(channels);
  return 4 * n * c * c + 2 * n * n * c;
}

u64 mlp_macs(Index tokens, Index channels) {
  const u64 n = as_u64(tokens), c = as_u64(channels);
  return 8 * n * c * c;
}

u64 cme_macs(Index n_z, Index n_x, Index heads) {
  const u64 z = as_u64(n_z), x = as_u64(n_x), rows = 2 * x;
  const u64 embed = rows * (z + x) * z;        // [ST, SS] · W_e
  const u64 projections = 2 * rows * z * z;    // U·W_q', U·W_k'
  const u64 scores = rows * z * rows;          // (U W_q')(U W_k')ᵀ
  const u64 mixing = rows * rows * z;          // softmax(·)·[ST_r; ST_t]
  const u64 residual = rows * z * z;           // M'·(I + W')
  return as_u64(heads) * (embed + projections + scores + mixing + residual);
}

CostReport estimate(const TrackerConfig& requested, bool full_scale) {
  TrackerConfig cfg = requested;
  if (full_scale) {
    const TrackerConfig full = TrackerConfig::full();
    cfg.patch = full.patch;
    cfg.channels = full.channels;
    cfg.heads = full.heads;
    cfg.layers = full.layers;
    cfg.template_side = full.template_side;
    cfg.search_side = full.search_side;
  }
  cfg.validate();

  CostReport report;
  report.config = cfg;
  const Index n_z = cfg.template_tokens();
  const Index c = cfg.channels;
  for (int l = 1; l <= cfg.layers; ++l) {
    const Index n_x = cfg.search_tokens_at(l);
    LayerCost cost;
    cost.layer = l;
    cost.tokens = n_z + n_x;
    cost.attention_macs = 2 * attention_macs(cost.tokens, c);
    cost.mlp_macs = 2 * mlp_macs(cost.tokens, c);
    if (cfg.cma_layers.count(l)) cost.cme_macs = cme_macs(n_z, n_x, cfg.heads);
    report.backbone_macs += cost.total();
    report.per_layer.push_back(cost);
  }
  const u64 all_tokens = as_u64(n_z + cfg.search_tokens());
  report.embedding_macs = 2 * all_tokens * as_u64(cfg.patch_dim()) * as_u64(c);
  const u64 cells = as_u64(cfg.search_tokens());
  for (u64 out : kHeadOutputs)
    report.head_macs += cells * as_u64(2 * c) * as_u64(c) + cells * as_u64(c) * out;
  return report;
}

CostReport report_from_counter(const TrackerConfig& cfg, const MacCounter& counter,
                               const Diagnostics& diagnostics) {
  CostReport report;
  report.config = cfg;
  for (const LayerRecord& rec : diagnostics.layers) {
    LayerCost cost;
    cost.layer = rec.layer;
    cost.tokens = rec.tokens;
    cost.attention_macs = counter.get(rec.layer, CostCategory::kAttention);
    cost.mlp_macs = counter.get(rec.layer, CostCategory::kMlp);
    cost.cme_macs = counter.get(rec.layer, CostCategory::kCme);
    report.backbone_macs += cost.total();
    report.per_layer.push_back(cost);
  }
  report.embedding_macs = counter.total(CostCategory::kEmbedding);
  report.head_macs = counter.total(CostCategory::kHead);
  return report;
}

CostReport measure(const TrackerConfig& cfg, const TrackerParams& params,
                   const FrameInputs& inputs) {
  const ForwardResult result = forward(cfg, inputs, params);
  return report_from_counter(cfg, result.macs, result.diagnostics);
}

std::string to_json(const CostReport& report, bool giga) {
  nlohmann::ordered_json j;
  j["config"] = config_to_json(report.config);
  auto& layers = j["per_layer"] = nlohmann::ordered_json::array();
  for (const LayerCost& cost : report.per_layer) {
    layers.push_back({{"layer", cost.layer},
                      {"tokens", cost.tokens},
                      {"attention_macs", cost.attention_macs},
                      {"mlp_macs", cost.mlp_macs},
                      {"cme_macs", cost.cme_macs}});
  }
  j["backbone_macs"] = report.backbone_macs;
  j["embedding_macs"] = report.embedding_macs;
  j["head_macs"] = report.head_macs;
  if (giga) {
    j["backbone_g"] = giga_string(report.backbone_macs);
    j["total_with_io_g"] = giga_string(report.total_with_io());
  }
  return j.dump(2);
}

}  // namespace caformer
