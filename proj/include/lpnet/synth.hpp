#pragma once

// Synthetic plate scenes: deterministic dot-matrix plate rendering, scene
// composition with distractor text and photometric jitter, and the
// rotation/shear augmentation.

#include <string>
#include <vector>

#include "lpnet/config.hpp"
#include "lpnet/image.hpp"
#include "lpnet/rng.hpp"

namespace lpnet {

struct PlateSample {
  ImageU8 image;
  std::vector<Box> boxes;
  std::vector<std::string> labels;
  uint64_t seed = 0;
  std::string group = "all";
};

// Raised when a randomized placement/augmentation attempt cannot satisfy its
// geometric constraints; callers retry with a fresh seed.
struct SampleRejected : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// 5x7 dot pattern for one alphabet symbol, one byte per row (low 5 bits).
const uint8_t* glyph_rows(char symbol);

// Renders a bordered plate patch for the label, scaled to height_px.
// Deterministic per (label, height, seed); the seed drives color jitter only.
ImageU8 render_plate(const std::string& label, int height_px, uint64_t seed);

// the dot-grid aspect ratio (width/height) a rendered plate will have
double plate_aspect(int label_length);

std::string random_label(int length, Rng& rng);

// Background + plates + distractor text + photometric jitter. Ground-truth
// boxes never overlap each other; distractor text keeps IoU < 0.3 against
// every plate. Pure function of (cfg, seed).
PlateSample compose_scene(const SceneConfig& cfg, uint64_t seed);

// Rotation/shear warp. Boxes are replaced by the axis-aligned hull of their
// warped corners; a box leaving the image rejects the sample.
PlateSample augment_sample(const PlateSample& sample, double rotation_deg_range,
                           double shear_range, uint64_t seed);

}  // namespace lpnet
