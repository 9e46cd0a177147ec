#pragma once

#include <cstdint>
#include <random>

#include "caformer/pipeline.hpp"

namespace caformer {

/// A seeded RGB-T frame: a coloured blob on a smooth textured background.
/// The thermal leg is a nonlinear function of the RGB leg (channel mix, 3×3
/// blur, additive noise, tanh) so the two are correlated but not identical.
struct SyntheticFrame {
  FrameInputs inputs;
  BBox truth;  // target box in normalised search-region coordinates
};

SyntheticFrame make_synthetic_frame(const TrackerConfig& cfg, std::uint64_t seed);

ImageTensor thermal_from_rgb(const ImageTensor& rgb, std::mt19937_64& rng);

}  // namespace caformer
