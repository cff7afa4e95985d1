#include "dseg/augment.hpp"

#include <cmath>

namespace dseg {

void AugmentConfig::check() const {
  require(crop_frac >= 0.0 && crop_frac <= 0.1, "crop_frac must lie in [0, 0.1]");
  require(zoom_min > 0.0 && zoom_min <= zoom_max && zoom_max <= 1.0,
          "zoom range must satisfy 0 < min <= max <= 1");
  require(shift_max_px >= 0, "shift_max_px must be nonnegative");
  require(brightness_contrast >= 0.0 && brightness_contrast <= 0.5,
          "brightness/contrast range must lie in [0, 0.5]");
}

AugmentConfig AugmentConfig::disabled() {
  AugmentConfig c;
  c.rotation = false;
  c.flips = false;
  c.crop_frac = 0.0;
  c.shift_max_px = 0;
  c.zoom_min = 1.0;
  c.zoom_max = 1.0;
  c.brightness_contrast = 0.0;
  return c;
}

namespace aug {

namespace {

// Symmetric reflection: -1 -> 0, -2 -> 1, h -> h-1, h+1 -> h-2.
int64_t reflect(int64_t i, int64_t n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - 1 - i;
  }
  return i;
}

float bilinear_reflect(const std::vector<float>& img, int64_t h, int64_t w, double y, double x) {
  const int64_t y0 = static_cast<int64_t>(std::floor(y));
  const int64_t x0 = static_cast<int64_t>(std::floor(x));
  const double fy = y - y0, fx = x - x0;
  const float v00 = img[reflect(y0, h) * w + reflect(x0, w)];
  const float v01 = img[reflect(y0, h) * w + reflect(x0 + 1, w)];
  const float v10 = img[reflect(y0 + 1, h) * w + reflect(x0, w)];
  const float v11 = img[reflect(y0 + 1, h) * w + reflect(x0 + 1, w)];
  return static_cast<float>((1 - fy) * ((1 - fx) * v00 + fx * v01) +
                            fy * ((1 - fx) * v10 + fx * v11));
}

uint8_t nearest_reflect(const std::vector<uint8_t>& mask, int64_t h, int64_t w, double y, double x) {
  const int64_t yi = reflect(static_cast<int64_t>(std::llround(y)), h);
  const int64_t xi = reflect(static_cast<int64_t>(std::llround(x)), w);
  return mask[yi * w + xi];
}

}  // namespace

void flip_h(std::vector<float>& img, std::vector<uint8_t>& mask, int64_t h, int64_t w) {
  for (int64_t r = 0; r < h; ++r)
    for (int64_t c = 0; c < w / 2; ++c) {
      std::swap(img[r * w + c], img[r * w + (w - 1 - c)]);
      std::swap(mask[r * w + c], mask[r * w + (w - 1 - c)]);
    }
}

void flip_v(std::vector<float>& img, std::vector<uint8_t>& mask, int64_t h, int64_t w) {
  for (int64_t r = 0; r < h / 2; ++r)
    for (int64_t c = 0; c < w; ++c) {
      std::swap(img[r * w + c], img[(h - 1 - r) * w + c]);
      std::swap(mask[r * w + c], mask[(h - 1 - r) * w + c]);
    }
}

void rotate(std::vector<float>& img, std::vector<uint8_t>& mask, int64_t h, int64_t w,
            double angle_rad) {
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  const double cs = std::cos(angle_rad), sn = std::sin(angle_rad);
  std::vector<float> src_img = img;
  std::vector<uint8_t> src_mask = mask;
  for (int64_t r = 0; r < h; ++r)
    for (int64_t c = 0; c < w; ++c) {
      const double x = c - cx, y = r - cy;
      // Inverse map of a CCW content rotation in row-down coordinates.
      const double sx = cs * x + sn * y + cx;
      const double sy = -sn * x + cs * y + cy;
      img[r * w + c] = bilinear_reflect(src_img, h, w, sy, sx);
      mask[r * w + c] = nearest_reflect(src_mask, h, w, sy, sx);
    }
}

void shift(std::vector<float>& img, std::vector<uint8_t>& mask, int64_t h, int64_t w, int64_t dy,
           int64_t dx) {
  std::vector<float> src_img = img;
  std::vector<uint8_t> src_mask = mask;
  for (int64_t r = 0; r < h; ++r)
    for (int64_t c = 0; c < w; ++c) {
      const int64_t sr = reflect(r - dy, h);
      const int64_t sc = reflect(c - dx, w);
      img[r * w + c] = src_img[sr * w + sc];
      mask[r * w + c] = src_mask[sr * w + sc];
    }
}

void crop_resize(std::vector<float>& img, std::vector<uint8_t>& mask, int64_t h, int64_t w,
                 int64_t oy, int64_t ox, int64_t cy, int64_t cx) {
  require(cy >= 1 && cx >= 1 && oy >= 0 && ox >= 0 && oy + cy <= h && ox + cx <= w,
          "crop window out of range");
  std::vector<float> src_img = img;
  std::vector<uint8_t> src_mask = mask;
  for (int64_t r = 0; r < h; ++r)
    for (int64_t c = 0; c < w; ++c) {
      // Map output pixel centers onto the window.
      const double sy = oy + (cy == 1 ? 0.0 : static_cast<double>(r) * (cy - 1) / (h - 1));
      const double sx = ox + (cx == 1 ? 0.0 : static_cast<double>(c) * (cx - 1) / (w - 1));
      img[r * w + c] = bilinear_reflect(src_img, h, w, sy, sx);
      mask[r * w + c] = nearest_reflect(src_mask, h, w, sy, sx);
    }
}

void brightness_contrast(std::vector<float>& img, float offset, float scale) {
  for (auto& v : img) {
    v = scale * (v - 0.5f) + 0.5f + offset;
    v = std::min(std::max(v, 0.f), 1.f);
  }
}

}  // namespace aug

PatchSample augment(const PatchSample& sample, const AugmentConfig& cfg, Rng& draw) {
  cfg.check();
  PatchSample out = sample;
  const int64_t h = kPatch, w = kPatch;

  if (cfg.rotation && draw.bernoulli(0.5)) {
    const double angle = draw.uniform(0.0, 2.0 * 3.14159265358979323846);
    aug::rotate(out.image, out.mask, h, w, angle);
  }
  if (cfg.flips) {
    if (draw.bernoulli(0.5)) aug::flip_h(out.image, out.mask, h, w);
    if (draw.bernoulli(0.5)) aug::flip_v(out.image, out.mask, h, w);
  }
  if (cfg.crop_frac > 0.0 && draw.bernoulli(0.5)) {
    const int64_t max_cut = static_cast<int64_t>(cfg.crop_frac * static_cast<double>(w));
    const int64_t cut_y = draw.uniform_int(0, max_cut);
    const int64_t cut_x = draw.uniform_int(0, max_cut);
    const int64_t cy = h - cut_y, cx = w - cut_x;
    const int64_t oy = cut_y > 0 ? draw.uniform_int(0, cut_y) : 0;
    const int64_t ox = cut_x > 0 ? draw.uniform_int(0, cut_x) : 0;
    if (cut_y > 0 || cut_x > 0) aug::crop_resize(out.image, out.mask, h, w, oy, ox, cy, cx);
  }
  if (cfg.shift_max_px > 0 && draw.bernoulli(0.5)) {
    const int64_t dy = draw.uniform_int(-cfg.shift_max_px, cfg.shift_max_px);
    const int64_t dx = draw.uniform_int(-cfg.shift_max_px, cfg.shift_max_px);
    if (dy != 0 || dx != 0) aug::shift(out.image, out.mask, h, w, dy, dx);
  }
  if ((cfg.zoom_min < 1.0 || cfg.zoom_max < 1.0) && draw.bernoulli(0.5)) {
    const double z = draw.uniform(cfg.zoom_min, cfg.zoom_max);
    const int64_t cy = std::max<int64_t>(2, static_cast<int64_t>(std::llround(z * h)));
    const int64_t cx = std::max<int64_t>(2, static_cast<int64_t>(std::llround(z * w)));
    const int64_t oy = cy < h ? draw.uniform_int(0, h - cy) : 0;
    const int64_t ox = cx < w ? draw.uniform_int(0, w - cx) : 0;
    if (cy < h || cx < w) aug::crop_resize(out.image, out.mask, h, w, oy, ox, cy, cx);
  }
  if (cfg.brightness_contrast > 0.0 && draw.bernoulli(0.5)) {
    const float offset = static_cast<float>(draw.uniform(-cfg.brightness_contrast, cfg.brightness_contrast));
    const float scale = static_cast<float>(1.0 + draw.uniform(-cfg.brightness_contrast, cfg.brightness_contrast));
    aug::brightness_contrast(out.image, offset, scale);
  }

  for (auto& v : out.image) v = std::min(std::max(v, 0.f), 1.f);
  return out;
}

PatchSample augment(const PatchSample& sample, const AugmentConfig& cfg, uint64_t sample_id,
                    uint64_t epoch) {
  Rng draw(mix_seed(cfg.seed, sample_id, epoch));
  return augment(sample, cfg, draw);
}

}  // namespace dseg
