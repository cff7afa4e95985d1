#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "dseg/common.hpp"

namespace dseg {

enum class VoxelType : uint8_t { u8, u16, f32 };

VoxelType voxel_type_from_string(const std::string& s);
std::string to_string(VoxelType t);
size_t voxel_size_bytes(VoxelType t);

// 3D scalar voxel grid, z-major then y then x, with a physical voxel size.
struct VolumeGrid {
  std::array<int64_t, 3> dims{0, 0, 0};  // (nz, ny, nx)
  double voxel_size_um = 1.33;
  std::variant<std::vector<uint8_t>, std::vector<uint16_t>, std::vector<float>> data;
  // Free-form provenance recorded in the header (rng name, seed, ...).
  std::map<std::string, std::string> extras;

  int64_t nz() const { return dims[0]; }
  int64_t ny() const { return dims[1]; }
  int64_t nx() const { return dims[2]; }
  int64_t voxels() const { return dims[0] * dims[1] * dims[2]; }
  VoxelType dtype() const { return static_cast<VoxelType>(data.index()); }

  static VolumeGrid make(std::array<int64_t, 3> dims, VoxelType t, double voxel_size_um = 1.33);

  std::vector<uint8_t>& as_u8() { return std::get<std::vector<uint8_t>>(data); }
  const std::vector<uint8_t>& as_u8() const { return std::get<std::vector<uint8_t>>(data); }
  std::vector<uint16_t>& as_u16() { return std::get<std::vector<uint16_t>>(data); }
  const std::vector<uint16_t>& as_u16() const { return std::get<std::vector<uint16_t>>(data); }
  std::vector<float>& as_f32() { return std::get<std::vector<float>>(data); }
  const std::vector<float>& as_f32() const { return std::get<std::vector<float>>(data); }

  int64_t index(int64_t z, int64_t y, int64_t x) const { return (z * dims[1] + y) * dims[2] + x; }

  // Voxel read as double regardless of dtype.
  double at(int64_t z, int64_t y, int64_t x) const;

  void check_consistent() const;
};

// On-disk format: a JSON header at "<base>.json" describing dims (z,y,x),
// dtype, voxel size and payload file, next to the raw little-endian payload
// at "<base>.raw". Writing is byte-deterministic for identical content.
void write_volume(const VolumeGrid& v, const std::string& base_path);
VolumeGrid read_volume(const std::string& base_path);

}  // namespace dseg
