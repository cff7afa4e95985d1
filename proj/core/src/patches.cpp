#include "dseg/patches.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace dseg {

std::vector<int64_t> tile_offsets(int64_t extent, int64_t patch, int64_t stride) {
  require(extent >= patch, "extent " + std::to_string(extent) + " smaller than patch " +
                               std::to_string(patch));
  require(stride >= 1 && stride <= patch, "stride must lie in [1, patch]");
  std::vector<int64_t> offs;
  for (int64_t o = 0; o + patch <= extent; o += stride) offs.push_back(o);
  if (offs.back() + patch != extent) offs.push_back(extent - patch);  // edge anchor
  return offs;
}

std::vector<PatchSample> patchify(const Grid2d& image, const std::vector<uint8_t>& mask,
                                  int64_t stride, const PatchMeta& base) {
  require(image.h >= kPatch && image.w >= kPatch,
          "slice " + std::to_string(image.h) + "x" + std::to_string(image.w) +
              " is smaller than the patch size");
  require(static_cast<int64_t>(image.v.size()) == image.h * image.w, "slice buffer size mismatch");
  require(mask.size() == image.v.size(), "mask size does not match slice");

  const auto ys = tile_offsets(image.h, kPatch, stride);
  const auto xs = tile_offsets(image.w, kPatch, stride);
  std::vector<PatchSample> out;
  out.reserve(ys.size() * xs.size());
  for (int64_t y : ys)
    for (int64_t x : xs) {
      PatchSample s;
      s.image.resize(kPatch * kPatch);
      s.mask.resize(kPatch * kPatch);
      for (int64_t r = 0; r < kPatch; ++r) {
        const int64_t src = (y + r) * image.w + x;
        std::copy(image.v.begin() + src, image.v.begin() + src + kPatch,
                  s.image.begin() + r * kPatch);
        std::copy(mask.begin() + src, mask.begin() + src + kPatch, s.mask.begin() + r * kPatch);
      }
      s.meta = base;
      s.meta.y = y;
      s.meta.x = x;
      out.push_back(std::move(s));
    }
  return out;
}

Grid2d stitch(const std::vector<PatchSample>& patches, int64_t slice_h, int64_t slice_w) {
  require(!patches.empty(), "stitch of zero patches");
  Grid2d acc = Grid2d::make(slice_h, slice_w, 0.f);
  std::vector<int32_t> count(slice_h * slice_w, 0);
  for (const auto& p : patches) {
    require(p.meta.y >= 0 && p.meta.x >= 0 && p.meta.y + kPatch <= slice_h &&
                p.meta.x + kPatch <= slice_w,
            "patch at (" + std::to_string(p.meta.y) + "," + std::to_string(p.meta.x) +
                ") falls outside the " + std::to_string(slice_h) + "x" + std::to_string(slice_w) +
                " slice");
    require(static_cast<int64_t>(p.image.size()) == kPatch * kPatch, "patch buffer size mismatch");
    for (int64_t r = 0; r < kPatch; ++r) {
      const int64_t dst = (p.meta.y + r) * slice_w + p.meta.x;
      for (int64_t c = 0; c < kPatch; ++c) {
        acc.v[dst + c] += p.image[r * kPatch + c];
        ++count[dst + c];
      }
    }
  }
  for (int64_t i = 0; i < slice_h * slice_w; ++i) {
    if (count[i] == 0) {
      const int64_t r = i / slice_w, c = i % slice_w;
      fail("stitch coverage gap at pixel (" + std::to_string(r) + "," + std::to_string(c) + ")");
    }
    acc.v[i] /= static_cast<float>(count[i]);
  }
  return acc;
}

SplitIndices split_dataset(size_t sample_count, const SplitSpec& spec) {
  require(sample_count > 0, "split of an empty sample list");
  require(std::abs(spec.train + spec.val + spec.test - 1.0) < 1e-9,
          "split fractions must sum to 1");
  std::vector<size_t> order(sample_count);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(spec.seed);
  for (size_t i = sample_count - 1; i > 0; --i) {
    const size_t j = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i)));
    std::swap(order[i], order[j]);
  }

  size_t n_train = static_cast<size_t>(spec.train * static_cast<double>(sample_count));
  size_t n_val = static_cast<size_t>(spec.val * static_cast<double>(sample_count));
  size_t n_test = static_cast<size_t>(spec.test * static_cast<double>(sample_count));
  size_t rem = sample_count - n_train - n_val - n_test;
  // Remainders go to train first, then val, then test.
  while (rem > 0) {
    ++n_train;
    --rem;
    if (rem > 0) { ++n_val; --rem; }
    if (rem > 0) { ++n_test; --rem; }
  }

  SplitIndices out;
  out.train.assign(order.begin(), order.begin() + n_train);
  out.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  out.test.assign(order.begin() + n_train + n_val, order.end());
  return out;
}

std::string to_string(SplitTag t) {
  switch (t) {
    case SplitTag::train: return "train";
    case SplitTag::val: return "val";
    case SplitTag::test: return "test";
  }
  return "?";
}

SplitTag split_tag_from_string(const std::string& s) {
  if (s == "train") return SplitTag::train;
  if (s == "val") return SplitTag::val;
  if (s == "test") return SplitTag::test;
  fail("unknown split tag '" + s + "'");
}

std::vector<size_t> PatchDataset::indices_for(SplitTag tag) const {
  std::vector<size_t> out;
  for (size_t i = 0; i < tags.size(); ++i)
    if (tags[i] == tag) out.push_back(i);
  return out;
}

void write_patch_dataset(const PatchDataset& ds, const std::string& dir) {
  require(ds.samples.size() == ds.tags.size(), "dataset tags out of sync with samples");
  std::filesystem::create_directories(dir);
  const auto img_path = std::filesystem::path(dir) / "images.f32";
  const auto mask_path = std::filesystem::path(dir) / "masks.u8";
  std::ofstream imgf(img_path, std::ios::binary);
  std::ofstream maskf(mask_path, std::ios::binary);
  require(imgf.good() && maskf.good(), "cannot write dataset blobs under " + dir);

  nlohmann::json index;
  index["format"] = "dseg-patches";
  index["version"] = 1;
  index["patch"] = kPatch;
  index["count"] = ds.samples.size();
  nlohmann::json rows = nlohmann::json::array();
  constexpr int64_t kPix = kPatch * kPatch;
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& s = ds.samples[i];
    require(static_cast<int64_t>(s.image.size()) == kPix &&
                static_cast<int64_t>(s.mask.size()) == kPix,
            "sample " + std::to_string(i) + " has wrong patch size");
    nlohmann::json row;
    row["id"] = i;
    row["split"] = to_string(ds.tags[i]);
    row["volume"] = s.meta.volume_id;
    row["slice"] = s.meta.slice;
    row["y"] = s.meta.y;
    row["x"] = s.meta.x;
    row["image_offset"] = static_cast<int64_t>(i) * kPix * 4;
    row["mask_offset"] = static_cast<int64_t>(i) * kPix;
    rows.push_back(std::move(row));
    imgf.write(reinterpret_cast<const char*>(s.image.data()), kPix * 4);
    maskf.write(reinterpret_cast<const char*>(s.mask.data()), kPix);
  }
  index["samples"] = std::move(rows);
  require(imgf.good() && maskf.good(), "short write on dataset blobs under " + dir);

  std::ofstream idxf(std::filesystem::path(dir) / "index.json", std::ios::binary);
  require(idxf.good(), "cannot write dataset index under " + dir);
  idxf << index.dump(2) << "\n";
}

PatchDataset read_patch_dataset(const std::string& dir) {
  std::ifstream idxf(std::filesystem::path(dir) / "index.json");
  require(idxf.good(), "cannot open dataset index under " + dir);
  nlohmann::json index;
  try {
    idxf >> index;
  } catch (const nlohmann::json::exception& e) {
    fail("malformed dataset index under " + dir + ": " + e.what());
  }
  require(index.value("format", "") == "dseg-patches", "not a patch dataset: " + dir);
  require(index.value("patch", 0) == kPatch, "unsupported patch size in " + dir);

  std::ifstream imgf(std::filesystem::path(dir) / "images.f32", std::ios::binary);
  std::ifstream maskf(std::filesystem::path(dir) / "masks.u8", std::ios::binary);
  require(imgf.good() && maskf.good(), "cannot open dataset blobs under " + dir);

  PatchDataset ds;
  constexpr int64_t kPix = kPatch * kPatch;
  for (const auto& row : index.at("samples")) {
    PatchSample s;
    s.image.resize(kPix);
    s.mask.resize(kPix);
    s.meta.volume_id = row.value("volume", "");
    s.meta.slice = row.value("slice", 0);
    s.meta.y = row.value("y", 0);
    s.meta.x = row.value("x", 0);
    imgf.seekg(row.at("image_offset").get<int64_t>());
    imgf.read(reinterpret_cast<char*>(s.image.data()), kPix * 4);
    maskf.seekg(row.at("mask_offset").get<int64_t>());
    maskf.read(reinterpret_cast<char*>(s.mask.data()), kPix);
    require(imgf.good() && maskf.good(),
            "dataset blob truncated while reading sample " + row.at("id").dump());
    ds.samples.push_back(std::move(s));
    ds.tags.push_back(split_tag_from_string(row.at("split").get<std::string>()));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Volume slicing
// ---------------------------------------------------------------------------

std::array<int64_t, 2> slice_extent(const VolumeGrid& v, int axis) {
  require(axis >= 0 && axis < 3, "slice axis must be 0 (z), 1 (y) or 2 (x)");
  switch (axis) {
    case 0: return {v.ny(), v.nx()};
    case 1: return {v.nz(), v.nx()};
    default: return {v.nz(), v.ny()};
  }
}

namespace {

int64_t slice_voxel_index(const VolumeGrid& v, int axis, int64_t index, int64_t r, int64_t c) {
  switch (axis) {
    case 0: return v.index(index, r, c);
    case 1: return v.index(r, index, c);
    default: return v.index(r, c, index);
  }
}

}  // namespace

Grid2d volume_slice(const VolumeGrid& v, int axis, int64_t index) {
  const auto [h, w] = slice_extent(v, axis);
  require(index >= 0 && index < v.dims[axis], "slice index out of range");
  Grid2d g = Grid2d::make(h, w);
  const double scale = v.dtype() == VoxelType::u8 ? 1.0 / 255.0
                       : v.dtype() == VoxelType::u16 ? 1.0 / 65535.0
                                                     : 1.0;
  std::visit(
      [&](const auto& buf) {
        for (int64_t r = 0; r < h; ++r)
          for (int64_t c = 0; c < w; ++c) {
            const double x = static_cast<double>(buf[slice_voxel_index(v, axis, index, r, c)]) * scale;
            g.v[r * w + c] = static_cast<float>(std::min(std::max(x, 0.0), 1.0));
          }
      },
      v.data);
  return g;
}

std::vector<uint8_t> volume_mask_slice(const VolumeGrid& v, int axis, int64_t index) {
  require(v.dtype() == VoxelType::u8, "mask volumes must be u8");
  const auto [h, w] = slice_extent(v, axis);
  require(index >= 0 && index < v.dims[axis], "slice index out of range");
  std::vector<uint8_t> out(h * w);
  const auto& buf = v.as_u8();
  for (int64_t r = 0; r < h; ++r)
    for (int64_t c = 0; c < w; ++c) {
      const uint8_t val = buf[slice_voxel_index(v, axis, index, r, c)];
      require(val <= 1, "mask volume holds a non-binary voxel");
      out[r * w + c] = val;
    }
  return out;
}

void store_mask_slice(VolumeGrid& mask, int axis, int64_t index, const std::vector<uint8_t>& bits) {
  require(mask.dtype() == VoxelType::u8, "mask volumes must be u8");
  const auto [h, w] = slice_extent(mask, axis);
  require(static_cast<int64_t>(bits.size()) == h * w, "mask slice size mismatch");
  auto& buf = mask.as_u8();
  for (int64_t r = 0; r < h; ++r)
    for (int64_t c = 0; c < w; ++c)
      buf[slice_voxel_index(mask, axis, index, r, c)] = bits[r * w + c];
}

}  // namespace dseg
