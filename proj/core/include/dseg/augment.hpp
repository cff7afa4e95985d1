#pragma once

#include "dseg/patches.hpp"

namespace dseg {

// Every transform fires independently with probability 0.5 when enabled.
// Images interpolate bilinearly with reflect padding; masks use nearest
// neighbor so they stay binary.
struct AugmentConfig {
  bool rotation = true;              // arbitrary angle in [0, 360)
  bool flips = true;                 // horizontal and vertical, separate coin each
  double crop_frac = 0.02;           // max side-length fraction removed; 0 disables
  int64_t shift_max_px = 12;         // max |integer shift|; 0 disables
  double zoom_min = 0.8;             // zoom window factor range [zoom_min, zoom_max]
  double zoom_max = 1.0;             // [1,1] disables
  double brightness_contrast = 0.05; // +/- range for both; 0 disables
  uint64_t seed = 0;

  void check() const;
  static AugmentConfig disabled();
};

// Deterministic given the draw state. Shapes are preserved, the image is
// re-clamped to [0,1] and the mask stays {0,1}.
PatchSample augment(const PatchSample& sample, const AugmentConfig& cfg, Rng& draw);

// Per-sample determinism independent of scheduling: draws come from
// mix_seed(cfg.seed, sample_id, epoch).
PatchSample augment(const PatchSample& sample, const AugmentConfig& cfg, uint64_t sample_id,
                    uint64_t epoch);

// Individual transforms, exposed for direct testing.
namespace aug {
void flip_h(std::vector<float>& img, std::vector<uint8_t>& mask, int64_t h, int64_t w);
void flip_v(std::vector<float>& img, std::vector<uint8_t>& mask, int64_t h, int64_t w);
// Positive angle turns image content counterclockwise in (row-down, col-right)
// pixel coordinates, about the patch center.
void rotate(std::vector<float>& img, std::vector<uint8_t>& mask, int64_t h, int64_t w,
            double angle_rad);
void shift(std::vector<float>& img, std::vector<uint8_t>& mask, int64_t h, int64_t w, int64_t dy,
           int64_t dx);
// Crops a window of size (h-cy, w-cx) at (oy, ox) and resizes back.
void crop_resize(std::vector<float>& img, std::vector<uint8_t>& mask, int64_t h, int64_t w,
                 int64_t oy, int64_t ox, int64_t cy, int64_t cx);
void brightness_contrast(std::vector<float>& img, float offset, float scale);
}  // namespace aug

}  // namespace dseg
