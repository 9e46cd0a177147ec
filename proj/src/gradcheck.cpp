#include "caformer/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <limits>
#include <memory>
#include <random>

#include "caformer/pipeline.hpp"
#include "caformer/synthetic.hpp"

namespace caformer {
namespace {

TokenMatrix gaussian(Index rows, Index cols, std::mt19937_64& rng, double stddev = 1.0) {
  std::normal_distribution<double> dist(0.0, stddev);
  TokenMatrix m(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) m(r, c) = dist(rng);
  return m;
}

double loss_value(GradProblem& problem) {
  Tape tape;
  LeafList leaves;
  return problem.loss(tape, leaves).value()(0, 0);
}

void condition_tensor(TokenMatrix& m, std::mt19937_64& rng) {
  if (m.rows() > 1)
    m = gaussian(m.rows(), m.cols(), rng, 1.0 / std::sqrt(static_cast<double>(m.rows())));
  else
    m += gaussian(m.rows(), m.cols(), rng, 0.1);
}

/// Redraws matrices with fan-in scaling and moves row-vector gains/biases off
/// their init values, so every gradient path carries an O(1) signal.
template <typename Params>
void condition(Params& p, std::mt19937_64& rng) {
  visit_fields(p, [&](const char*, TokenMatrix& m) { condition_tensor(m, rng); });
}

struct CmeFixture {
  TrackerConfig cfg = TrackerConfig::desk();
  int layer = 10;
  TokenMatrix f_rgb, f_tir;
  BlockParams block;
  CmeParams cme;
  TokenMatrix w_rgb, w_tir;
};

CmeFixture make_cme_fixture(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  CmeFixture fx;
  TrackerParams params = init_params(fx.cfg, seed);
  const Index n = fx.cfg.template_tokens() + fx.cfg.search_tokens_at(fx.layer);
  fx.f_rgb = gaussian(n, fx.cfg.channels, rng);
  fx.f_tir = 0.6 * fx.f_rgb + 0.8 * gaussian(n, fx.cfg.channels, rng);
  fx.block = params.blocks[static_cast<std::size_t>(fx.layer - 1)];
  fx.cme = params.cme.at(fx.layer);
  condition(fx.block, rng);
  condition(fx.cme, rng);
  fx.w_rgb = gaussian(n, fx.cfg.channels, rng);
  fx.w_tir = gaussian(n, fx.cfg.channels, rng);
  return fx;
}

}  // namespace

double GradCheckReport::worst() const {
  double w = 0.0;
  for (const TensorCheck& t : tensors)
    if (!t.zero_gradient) w = std::max(w, t.max_rel_error);
  return w;
}

std::string GradCheckReport::first_failure(double tolerance) const {
  for (const TensorCheck& t : tensors)
    if (!t.zero_gradient && !(t.max_rel_error < tolerance)) return t.name;
  return {};
}

GradCheckReport check_gradients(GradProblem& problem, const GradCheckOptions& options) {
  std::map<std::string, TokenMatrix> analytic;
  {
    Tape tape;
    LeafList leaves;
    const Var loss = problem.loss(tape, leaves);
    tape.backward(loss);
    for (const auto& [name, var] : leaves) analytic[name] = tape.grad(var);
  }

  std::mt19937_64 rng(options.seed);
  constexpr double kEps = std::numeric_limits<double>::epsilon();
  GradCheckReport report;
  bool first = true;
  for (auto& [name, tensor] : problem.tensors) {
    const auto it = analytic.find(name);
    if (it == analytic.end()) throw UsageError("gradcheck: tensor " + name + " is not a leaf of the loss");
    TokenMatrix grad = it->second;
    if (options.corrupt_first && first) grad *= 1.01;
    first = false;

    TensorCheck check;
    check.name = name;
    check.gradient_norm = grad.norm();
    const TokenMatrix original = *tensor;
    bool below_resolution = true;
    for (int d = 0; d < options.directions; ++d) {
      const TokenMatrix direction = gaussian(original.rows(), original.cols(), rng);
      const double projected = (grad.array() * direction.array()).sum();
      *tensor = original + options.step * direction;
      const double plus = loss_value(problem);
      *tensor = original - options.step * direction;
      const double minus = loss_value(problem);
      *tensor = original;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double scale = std::max(std::abs(projected), std::abs(numeric));
      const double resolution =
          1e3 * kEps * std::max({std::abs(plus), std::abs(minus), 1.0}) / options.step;
      below_resolution = below_resolution && scale < resolution;
      const double rel = scale == 0.0 ? 0.0 : std::abs(projected - numeric) / scale;
      check.max_rel_error = std::max(check.max_rel_error, rel);
    }
    check.zero_gradient = below_resolution;
    report.tensors.push_back(check);
  }
  return report;
}

GradCheckReport run_gradcheck(GradScope scope, std::uint64_t seed, bool corrupt,
                              std::size_t* expected_tensors) {
  GradCheckOptions options;
  options.seed = seed ^ 0xd1b54a32d192ed03ULL;
  options.corrupt_first = corrupt;
  GradProblem problem;

  switch (scope) {
    case GradScope::kCme: {
      auto fx = std::make_shared<CmeFixture>(make_cme_fixture(seed));
      visit_fields(fx->cme, [&](const char* name, TokenMatrix& m) {
        problem.tensors.emplace_back(std::string("cme.") + name, &m);
      });
      problem.loss = [fx](Tape& tape, LeafList& leaves) {
        const auto [rgb, tir] =
            caformer_block(tape.constant(fx->f_rgb), tape.constant(fx->f_tir),
                           bind_params(tape, fx->block), bind_params(tape, fx->cme, &leaves, "cme."),
                           fx->cfg.template_tokens());
        return add(weighted_sum(rgb.out, fx->w_rgb), weighted_sum(tir.out, fx->w_tir));
      };
      if (expected_tensors) *expected_tensors = problem.tensors.size();
      return check_gradients(problem, options);
    }
    case GradScope::kBlock: {
      auto fx = std::make_shared<CmeFixture>(make_cme_fixture(seed));
      auto plain = std::make_shared<BlockParams>(fx->block);
      std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
      condition(*plain, rng);
      problem.tensors.emplace_back("input.rgb", &fx->f_rgb);
      problem.tensors.emplace_back("input.tir", &fx->f_tir);
      visit_fields(fx->block, [&](const char* name, TokenMatrix& m) {
        problem.tensors.emplace_back(std::string("caformer.") + name, &m);
      });
      visit_fields(*plain, [&](const char* name, TokenMatrix& m) {
        problem.tensors.emplace_back(std::string("standard.") + name, &m);
      });
      problem.loss = [fx, plain](Tape& tape, LeafList& leaves) {
        const Var f_rgb = tape.leaf(fx->f_rgb, "input.rgb");
        const Var f_tir = tape.leaf(fx->f_tir, "input.tir");
        leaves.emplace_back("input.rgb", f_rgb);
        leaves.emplace_back("input.tir", f_tir);
        const BlockVars cb = bind_params(tape, fx->block, &leaves, "caformer.");
        const BlockVars sb = bind_params(tape, *plain, &leaves, "standard.");
        const auto [rgb, tir] =
            caformer_block(f_rgb, f_tir, cb, bind_params(tape, fx->cme), fx->cfg.template_tokens());
        const Var out_rgb = standard_block(rgb.out, sb).out;
        const Var out_tir = standard_block(tir.out, sb).out;
        return add(weighted_sum(out_rgb, fx->w_rgb), weighted_sum(out_tir, fx->w_tir));
      };
      if (expected_tensors) *expected_tensors = problem.tensors.size();
      return check_gradients(problem, options);
    }
    case GradScope::kAll: {
      struct AllFixture {
        TrackerConfig cfg = TrackerConfig::desk();
        TrackerParams params;
        SyntheticFrame frame;
        TokenMatrix w_score, w_offset, w_size;
      };
      auto fx = std::make_shared<AllFixture>();
      std::mt19937_64 rng(seed);
      fx->params = init_params(fx->cfg, seed);
      condition_tensor(fx->params.w0, rng);
      condition_tensor(fx->params.pe.template_pe, rng);
      condition_tensor(fx->params.pe.search_pe, rng);
      for (auto& b : fx->params.blocks) condition(b, rng);
      for (auto& [l, c] : fx->params.cme) condition(c, rng);
      condition(fx->params.head, rng);
      fx->frame = make_synthetic_frame(fx->cfg, seed);
      const Index cells = fx->cfg.search_tokens();
      fx->w_score = gaussian(cells, 1, rng);
      fx->w_offset = gaussian(cells, 2, rng);
      fx->w_size = gaussian(cells, 2, rng);
      visit_params(fx->params, [&](const std::string& name, TokenMatrix& m) {
        problem.tensors.emplace_back(name, &m);
      });
      problem.loss = [fx](Tape& tape, LeafList& leaves) {
        const TracedForward traced =
            forward_traced(tape, fx->cfg, fx->frame.inputs, fx->params, {}, &leaves);
        return add(add(weighted_sum(traced.head.score, fx->w_score),
                       weighted_sum(traced.head.offset, fx->w_offset)),
                   weighted_sum(traced.head.size, fx->w_size));
      };
      if (expected_tensors) *expected_tensors = problem.tensors.size();
      options.directions = 1;
      return check_gradients(problem, options);
    }
  }
  throw UsageError("gradcheck: unknown scope");
}

}  // namespace caformer
