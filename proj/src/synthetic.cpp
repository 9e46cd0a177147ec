#include "caformer/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace caformer {
namespace {

struct Blob {
  double cx, cy;  // pixels
  double sx, sy;  // half extents, pixels
  std::array<double, 3> colour;
};

ImageTensor render(Index side, const Blob& blob, const std::array<double, 3>& tint, double phase,
                   std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, 0.02);
  ImageTensor img(side, side);
  for (Index r = 0; r < side; ++r) {
    for (Index c = 0; c < side; ++c) {
      const double u = static_cast<double>(c) / static_cast<double>(side);
      const double v = static_cast<double>(r) / static_cast<double>(side);
      const double texture = 0.15 * std::sin(6.0 * u + phase) * std::cos(5.0 * v - phase);
      const double dx = (static_cast<double>(c) + 0.5 - blob.cx) / blob.sx;
      const double dy = (static_cast<double>(r) + 0.5 - blob.cy) / blob.sy;
      const double weight = std::exp(-2.0 * (dx * dx + dy * dy));
      for (Index ch = 0; ch < 3; ++ch) {
        const double background = tint[ch] * (0.4 + 0.3 * v) + texture;
        img.at(r, c, ch) = (1.0 - weight) * background + weight * blob.colour[ch] + noise(rng);
      }
    }
  }
  return img;
}

}  // namespace

ImageTensor thermal_from_rgb(const ImageTensor& rgb, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mix(0.1, 0.6);
  std::normal_distribution<double> noise(0.0, 0.03);
  const std::array<double, 3> weights{mix(rng), mix(rng), mix(rng)};
  const Index h = rgb.height(), w = rgb.width();

  TokenMatrix intensity(h, w);
  for (Index r = 0; r < h; ++r)
    for (Index c = 0; c < w; ++c)
      intensity(r, c) = weights[0] * rgb.at(r, c, 0) + weights[1] * rgb.at(r, c, 1) +
                        weights[2] * rgb.at(r, c, 2);

  ImageTensor tir(h, w);
  for (Index r = 0; r < h; ++r) {
    for (Index c = 0; c < w; ++c) {
      double acc = 0.0;
      int n = 0;
      for (Index dr = -1; dr <= 1; ++dr)
        for (Index dc = -1; dc <= 1; ++dc) {
          const Index rr = r + dr, cc = c + dc;
          if (rr < 0 || cc < 0 || rr >= h || cc >= w) continue;
          acc += intensity(rr, cc);
          ++n;
        }
      const double value = std::tanh(2.0 * (acc / n) - 0.5) + noise(rng);
      for (Index ch = 0; ch < 3; ++ch) tir.at(r, c, ch) = value;
    }
  }
  return tir;
}

SyntheticFrame make_synthetic_frame(const TrackerConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const std::array<double, 3> colour{0.6 + 0.4 * unit(rng), 0.2 * unit(rng), 0.5 * unit(rng)};
  const std::array<double, 3> tint{unit(rng), unit(rng), unit(rng)};
  const double phase = 6.283185307179586 * unit(rng);

  const double zs = static_cast<double>(cfg.template_side);
  const double xs = static_cast<double>(cfg.search_side);
  const double w = xs * (0.15 + 0.2 * unit(rng));
  const double h = xs * (0.15 + 0.2 * unit(rng));
  const double cx = std::clamp(xs * (0.25 + 0.5 * unit(rng)), w / 2, xs - w / 2);
  const double cy = std::clamp(xs * (0.25 + 0.5 * unit(rng)), h / 2, xs - h / 2);

  // The template is centred on the target with the same pixel extent.
  const Blob template_blob{zs / 2, zs / 2, w / 2, h / 2, colour};
  const Blob search_blob{cx, cy, w / 2, h / 2, colour};

  SyntheticFrame frame;
  frame.inputs.rgb.template_image = render(cfg.template_side, template_blob, tint, phase, rng);
  frame.inputs.rgb.search_image = render(cfg.search_side, search_blob, tint, phase, rng);
  frame.inputs.tir.template_image = thermal_from_rgb(frame.inputs.rgb.template_image, rng);
  frame.inputs.tir.search_image = thermal_from_rgb(frame.inputs.rgb.search_image, rng);
  frame.truth = {cx / xs, cy / xs, w / xs, h / xs};
  return frame;
}

}  // namespace caformer
