#include <gtest/gtest.h>

#include <filesystem>

#include "caformer/config_io.hpp"
#include "caformer/errors.hpp"
#include "caformer/pipeline.hpp"
#include "caformer/synthetic.hpp"

namespace caformer {
namespace {

namespace fs = std::filesystem;

TrackerConfig tiny() {
  TrackerConfig cfg;
  cfg.channels = 8;
  cfg.heads = 2;
  cfg.layers = 4;
  cfg.template_side = 8;
  cfg.search_side = 16;
  cfg.cma_layers = {3, 4};
  cfg.cte_layers = {2, 3};
  return cfg;
}

TEST(TrackerConfig, DeskDefaultsAndDerivedSizes) {
  const TrackerConfig cfg = TrackerConfig::desk();
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(cfg.template_tokens(), 16);
  EXPECT_EQ(cfg.search_tokens(), 64);
  EXPECT_EQ(cfg.head_dim(), 8);
  EXPECT_EQ(cfg.patch_dim(), 48);
}

TEST(TrackerConfig, FullScaleGeometry) {
  const TrackerConfig cfg = TrackerConfig::full();
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(cfg.template_tokens(), 64);
  EXPECT_EQ(cfg.search_tokens(), 256);
  EXPECT_EQ(cfg.head_dim(), 64);
}

TEST(TrackerConfig, ScheduleAcrossLayers) {
  const TrackerConfig cfg = TrackerConfig::desk();
  std::vector<Index> tokens;
  for (int l = 1; l <= 13; ++l) tokens.push_back(cfg.search_tokens_at(l));
  EXPECT_EQ(tokens, (std::vector<Index>{64, 64, 64, 64, 44, 44, 44, 30, 30, 30, 21, 21, 21}));
  EXPECT_EQ(cfg.final_search_tokens(), 21);
  TrackerConfig full = TrackerConfig::full();
  full.cte_layers = {4, 7, 10};
  EXPECT_EQ(full.final_search_tokens(), 87);
}

TEST(TrackerConfig, ValidationNamesTheField) {
  const auto message = [](TrackerConfig cfg) {
    try {
      cfg.validate();
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  TrackerConfig cfg;
  cfg.heads = 5;
  EXPECT_NE(message(cfg).find("heads"), std::string::npos);
  cfg = {};
  cfg.search_side = 30;
  EXPECT_NE(message(cfg).find("search_side"), std::string::npos);
  cfg = {};
  cfg.cte_layers = {13};
  EXPECT_NE(message(cfg).find("cte_layers"), std::string::npos);
  cfg = {};
  cfg.keep_ratio = 0.0;
  EXPECT_NE(message(cfg).find("keep_ratio"), std::string::npos);
}

TEST(ConfigJson, RoundTripAndDefaults) {
  const TrackerConfig cfg = tiny();
  EXPECT_EQ(config_from_json(config_to_json(cfg)), cfg);
  EXPECT_EQ(config_from_text("{}"), TrackerConfig::desk());
  const TrackerConfig partial = config_from_text(R"({"keep_ratio": 0.5, "cte_layers": [2]})");
  EXPECT_EQ(partial.keep_ratio, 0.5);
  EXPECT_EQ(partial.cte_layers, (std::set<int>{2}));
  EXPECT_EQ(partial.channels, 32);
}

TEST(ConfigJson, RejectsUnknownKeysTypesAndValues) {
  const auto rejects = [](const std::string& text, const std::string& key) {
    try {
      config_from_text(text);
    } catch (const ConfigError& e) {
      return std::string(e.what()).find(key) != std::string::npos;
    }
    return false;
  };
  EXPECT_TRUE(rejects(R"({"chanels": 8})", "chanels"));
  EXPECT_TRUE(rejects(R"({"channels": "8"})", "channels"));
  EXPECT_TRUE(rejects(R"({"keep_ratio": 1.5})", "keep_ratio"));
  EXPECT_TRUE(rejects(R"({"cma_layers": [0]})", "cma_layers"));
  EXPECT_TRUE(rejects("{", "config"));
}

TEST(Params, InitShapesAndConventions) {
  const TrackerConfig cfg = tiny();
  const TrackerParams p = init_params(cfg, 3);
  EXPECT_EQ(p.w0.rows(), cfg.patch_dim());
  EXPECT_EQ(p.w0.cols(), cfg.channels);
  EXPECT_EQ(p.blocks.size(), 4u);
  ASSERT_EQ(p.cme.size(), 2u);
  EXPECT_EQ(p.cme.at(3).w_mod.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(p.blocks[0].ln1_gain, TokenMatrix::Ones(1, cfg.channels));
  EXPECT_EQ(p.blocks[0].bq.cwiseAbs().maxCoeff(), 0.0);
  std::set<std::string> names;
  visit_params(p, [&](const std::string& name, const TokenMatrix&) {
    EXPECT_TRUE(names.insert(name).second) << name;
  });
  EXPECT_GT(names.size(), 40u);
  EXPECT_EQ(init_params(cfg, 3).w0, p.w0);
  EXPECT_NE(init_params(cfg, 4).w0, p.w0);
}

TEST(Params, SaveLoadRoundTrip) {
  const TrackerConfig cfg = tiny();
  const TrackerParams p = init_params(cfg, 5);
  const fs::path dir = fs::temp_directory_path() / "caformer_params_roundtrip";
  fs::remove_all(dir);
  save_params(dir, p);
  const TrackerParams q = load_params(dir, cfg);
  std::vector<TokenMatrix> a, b;
  visit_params(p, [&](const std::string&, const TokenMatrix& m) { a.push_back(m); });
  visit_params(q, [&](const std::string&, const TokenMatrix& m) { b.push_back(m); });
  EXPECT_EQ(a, b);
  TrackerConfig wider = cfg;
  wider.channels = 16;
  EXPECT_THROW(load_params(dir, wider), FormatError);
  fs::remove_all(dir);
}

TEST(Forward, DeterministicAndRecordsSchedule) {
  const TrackerConfig cfg = TrackerConfig::desk();
  const TrackerParams p = init_params(cfg, 0);
  const SyntheticFrame frame = make_synthetic_frame(cfg, 11);
  const ForwardResult a = forward(cfg, frame.inputs, p);
  const ForwardResult b = forward(cfg, frame.inputs, p);
  EXPECT_EQ(a.box, b.box);
  EXPECT_EQ(a.maps.score, b.maps.score);
  ASSERT_EQ(a.diagnostics.layers.size(), 12u);
  ASSERT_EQ(a.diagnostics.chain.size(), 3u);
  for (const LayerRecord& r : a.diagnostics.layers) {
    EXPECT_EQ(r.tokens, cfg.template_tokens() + cfg.search_tokens_at(r.layer)) << r.layer;
    EXPECT_EQ(r.cross_modulated, cfg.cma_layers.count(r.layer) > 0);
    EXPECT_EQ(r.keep.has_value(), cfg.cte_layers.count(r.layer) > 0);
  }
  EXPECT_EQ(a.diagnostics.chain.back().kept(), 21);
  EXPECT_EQ(a.maps.side, 8);
}

TEST(Forward, NullModulationMatchesNoCrossModulation) {
  const TrackerConfig cfg = tiny();
  TrackerParams p = init_params(cfg, 1);
  for (auto& [layer, cme] : p.cme) cme.w_mod.setConstant(0.05);
  const SyntheticFrame frame = make_synthetic_frame(cfg, 2);
  ForwardOptions opts;
  opts.null_modulation = true;
  opts.record_features = true;
  const ForwardResult nulled = forward(cfg, frame.inputs, p, opts);
  TrackerConfig plain = cfg;
  plain.cma_layers.clear();
  TrackerParams q = p;
  q.cme.clear();
  ForwardOptions rec;
  rec.record_features = true;
  const ForwardResult reference = forward(plain, frame.inputs, q, rec);
  for (std::size_t l = 0; l < nulled.diagnostics.layers.size(); ++l) {
    const auto& x = nulled.diagnostics.layers[l].features;
    const auto& y = reference.diagnostics.layers[l].features;
    EXPECT_LE((x.rgb - y.rgb).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((x.tir - y.tir).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Forward, SwappedModalitiesSwapFeatures) {
  const TrackerConfig cfg = tiny();
  const TrackerParams p = init_params(cfg, 7);
  const SyntheticFrame frame = make_synthetic_frame(cfg, 8);
  FrameInputs swapped{frame.inputs.tir, frame.inputs.rgb};
  ForwardOptions opts;
  opts.record_features = true;
  const ForwardResult a = forward(cfg, frame.inputs, p, opts);
  const ForwardResult b = forward(cfg, swapped, p, opts);
  for (std::size_t l = 0; l < a.diagnostics.layers.size(); ++l) {
    EXPECT_EQ(a.diagnostics.layers[l].features.rgb, b.diagnostics.layers[l].features.tir);
    EXPECT_EQ(a.diagnostics.layers[l].features.tir, b.diagnostics.layers[l].features.rgb);
  }
  EXPECT_EQ(a.diagnostics.chain, b.diagnostics.chain);
}

TEST(Forward, RejectsMismatchedInputs) {
  const TrackerConfig cfg = tiny();
  const TrackerParams p = init_params(cfg, 0);
  SyntheticFrame frame = make_synthetic_frame(cfg, 0);
  frame.inputs.tir.search_image = ImageTensor(8, 8);
  EXPECT_THROW(forward(cfg, frame.inputs, p), ConfigError);
  TrackerParams missing = p;
  missing.cme.erase(3);
  EXPECT_ANY_THROW(forward(cfg, make_synthetic_frame(cfg, 0).inputs, missing));
}

TEST(Synthetic, SeededAndInsideSearchRegion) {
  const TrackerConfig cfg = TrackerConfig::desk();
  const SyntheticFrame a = make_synthetic_frame(cfg, 4), b = make_synthetic_frame(cfg, 4);
  EXPECT_EQ(a.inputs.rgb.search_image.data, b.inputs.rgb.search_image.data);
  EXPECT_EQ(a.truth, b.truth);
  EXPECT_NE(make_synthetic_frame(cfg, 5).inputs.rgb.search_image.data, a.inputs.rgb.search_image.data);
  EXPECT_GT(a.truth.w, 0.0);
  EXPECT_GE(a.truth.cx - a.truth.w / 2, 0.0);
  EXPECT_LE(a.truth.cx + a.truth.w / 2, 1.0);
}

}  // namespace
}  // namespace caformer
