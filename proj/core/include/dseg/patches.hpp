#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dseg/common.hpp"
#include "dseg/rng.hpp"
#include "dseg/volume.hpp"

namespace dseg {

constexpr int64_t kPatch = 128;

// A 2D scalar grid (one slice, or one patch-sized window of one).
struct Grid2d {
  int64_t h = 0, w = 0;
  std::vector<float> v;

  static Grid2d make(int64_t h, int64_t w, float fill = 0.f) {
    return {h, w, std::vector<float>(h * w, fill)};
  }
  float& at(int64_t r, int64_t c) { return v[r * w + c]; }
  float at(int64_t r, int64_t c) const { return v[r * w + c]; }
};

struct PatchMeta {
  std::string volume_id;
  int64_t slice = 0;
  int64_t y = 0;  // row offset within the slice
  int64_t x = 0;  // column offset
};

// One 128x128 image/mask pair with provenance. Image values live in [0,1];
// mask values in {0,1}.
struct PatchSample {
  std::vector<float> image;   // kPatch*kPatch
  std::vector<uint8_t> mask;  // kPatch*kPatch
  PatchMeta meta;
};

// Row-major tiling offsets with edge-anchoring: the last tile is aligned to
// the border and may overlap its neighbor.
std::vector<int64_t> tile_offsets(int64_t extent, int64_t patch, int64_t stride);

// Tiles a slice (image + mask) into patches. Rejects slices smaller than the
// patch on either axis.
std::vector<PatchSample> patchify(const Grid2d& image, const std::vector<uint8_t>& mask,
                                  int64_t stride, const PatchMeta& base);

// Inverse of patchify for predictions: overlapping contributions are
// averaged. The patches must cover the slice completely.
Grid2d stitch(const std::vector<PatchSample>& patches, int64_t slice_h, int64_t slice_w);

struct SplitSpec {
  double train = 0.8, val = 0.1, test = 0.1;
  uint64_t seed = 0;
};

struct SplitIndices {
  std::vector<size_t> train, val, test;
};

// Deterministic shuffle then floor-sized splits; leftover samples go to
// train, then val, then test.
SplitIndices split_dataset(size_t sample_count, const SplitSpec& spec);

enum class SplitTag : uint8_t { train = 0, val = 1, test = 2 };
std::string to_string(SplitTag t);
SplitTag split_tag_from_string(const std::string& s);

// On-disk patch dataset: <dir>/index.json plus images.f32 (little-endian
// float payload) and masks.u8, both row-major per sample.
struct PatchDataset {
  std::vector<PatchSample> samples;
  std::vector<SplitTag> tags;  // parallel to samples

  std::vector<size_t> indices_for(SplitTag tag) const;
};

void write_patch_dataset(const PatchDataset& ds, const std::string& dir);
PatchDataset read_patch_dataset(const std::string& dir);

// 2D slice along a volume axis (0=z, 1=y, 2=x), normalized to [0,1]:
// integer dtypes scale by 1/dtype_max, f32 is clamped into [0,1].
Grid2d volume_slice(const VolumeGrid& v, int axis, int64_t index);
// Same geometry for binary masks; rejects non-binary voxels.
std::vector<uint8_t> volume_mask_slice(const VolumeGrid& v, int axis, int64_t index);
// Writes a slice of bits back into a u8 mask volume.
void store_mask_slice(VolumeGrid& mask, int axis, int64_t index, const std::vector<uint8_t>& bits);

// Slice extents (h, w) for slices along `axis`.
std::array<int64_t, 2> slice_extent(const VolumeGrid& v, int axis);

}  // namespace dseg
