#include "dseg/volume.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace dseg {

static_assert(std::endian::native == std::endian::little,
              "volume payloads are little-endian; big-endian hosts are unsupported");

VoxelType voxel_type_from_string(const std::string& s) {
  if (s == "u8") return VoxelType::u8;
  if (s == "u16") return VoxelType::u16;
  if (s == "f32") return VoxelType::f32;
  fail("unknown voxel dtype '" + s + "' (expected u8|u16|f32)");
}

std::string to_string(VoxelType t) {
  switch (t) {
    case VoxelType::u8: return "u8";
    case VoxelType::u16: return "u16";
    case VoxelType::f32: return "f32";
  }
  return "?";
}

size_t voxel_size_bytes(VoxelType t) {
  switch (t) {
    case VoxelType::u8: return 1;
    case VoxelType::u16: return 2;
    case VoxelType::f32: return 4;
  }
  return 0;
}

VolumeGrid VolumeGrid::make(std::array<int64_t, 3> dims, VoxelType t, double voxel_size_um) {
  require(dims[0] > 0 && dims[1] > 0 && dims[2] > 0, "volume dims must be positive");
  require(voxel_size_um > 0, "voxel size must be positive");
  VolumeGrid v;
  v.dims = dims;
  v.voxel_size_um = voxel_size_um;
  const int64_t n = v.voxels();
  switch (t) {
    case VoxelType::u8: v.data = std::vector<uint8_t>(n, 0); break;
    case VoxelType::u16: v.data = std::vector<uint16_t>(n, 0); break;
    case VoxelType::f32: v.data = std::vector<float>(n, 0.f); break;
  }
  return v;
}

double VolumeGrid::at(int64_t z, int64_t y, int64_t x) const {
  const int64_t i = index(z, y, x);
  switch (dtype()) {
    case VoxelType::u8: return as_u8()[i];
    case VoxelType::u16: return as_u16()[i];
    case VoxelType::f32: return as_f32()[i];
  }
  return 0;
}

void VolumeGrid::check_consistent() const {
  const int64_t n = voxels();
  const int64_t len = std::visit([](const auto& v) { return static_cast<int64_t>(v.size()); }, data);
  require(n == len, "volume buffer length " + std::to_string(len) + " does not match dims " +
                        std::to_string(dims[0]) + "x" + std::to_string(dims[1]) + "x" +
                        std::to_string(dims[2]));
  require(voxel_size_um > 0, "voxel size must be positive");
}

namespace {

std::string payload_name(const std::string& base_path) {
  return std::filesystem::path(base_path).filename().string() + ".raw";
}

}  // namespace

void write_volume(const VolumeGrid& v, const std::string& base_path) {
  v.check_consistent();
  nlohmann::json header;
  header["format"] = "dseg-volume";
  header["version"] = 1;
  header["dims"] = {v.dims[0], v.dims[1], v.dims[2]};
  header["axes"] = "z,y,x";
  header["dtype"] = to_string(v.dtype());
  header["voxel_size_um"] = v.voxel_size_um;
  header["endianness"] = "little";
  header["payload"] = payload_name(base_path);
  for (const auto& [k, val] : v.extras) header["extras"][k] = val;

  const auto parent = std::filesystem::path(base_path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);

  std::ofstream hf(base_path + ".json", std::ios::binary);
  require(hf.good(), "cannot write volume header " + base_path + ".json");
  hf << header.dump(2) << "\n";
  hf.close();

  std::ofstream pf(base_path + ".raw", std::ios::binary);
  require(pf.good(), "cannot write volume payload " + base_path + ".raw");
  std::visit(
      [&](const auto& buf) {
        using Elem = typename std::decay_t<decltype(buf)>::value_type;
        pf.write(reinterpret_cast<const char*>(buf.data()),
                 static_cast<std::streamsize>(buf.size() * sizeof(Elem)));
      },
      v.data);
  require(pf.good(), "short write on volume payload " + base_path + ".raw");
}

VolumeGrid read_volume(const std::string& base_path) {
  std::string header_path = base_path;
  if (header_path.size() < 5 || header_path.substr(header_path.size() - 5) != ".json")
    header_path += ".json";

  std::ifstream hf(header_path, std::ios::binary);
  require(hf.good(), "cannot open volume header " + header_path);
  nlohmann::json header;
  try {
    hf >> header;
  } catch (const nlohmann::json::exception& e) {
    fail("malformed volume header " + header_path + ": " + e.what());
  }
  require(header.value("format", "") == "dseg-volume", "not a dseg volume header: " + header_path);
  require(header.value("version", 0) == 1, "unsupported volume header version in " + header_path);
  require(header.value("endianness", "little") == "little",
          "unsupported endianness in " + header_path);

  const auto dims = header.at("dims");
  require(dims.is_array() && dims.size() == 3, "volume header dims must have 3 entries");
  VolumeGrid v = VolumeGrid::make({dims[0].get<int64_t>(), dims[1].get<int64_t>(), dims[2].get<int64_t>()},
                                  voxel_type_from_string(header.at("dtype").get<std::string>()),
                                  header.value("voxel_size_um", 1.33));
  if (header.contains("extras"))
    for (const auto& [k, val] : header["extras"].items()) v.extras[k] = val.get<std::string>();

  const std::string payload =
      (std::filesystem::path(header_path).parent_path() / header.at("payload").get<std::string>())
          .string();
  std::ifstream pf(payload, std::ios::binary);
  require(pf.good(), "cannot open volume payload " + payload);
  const int64_t bytes = v.voxels() * static_cast<int64_t>(voxel_size_bytes(v.dtype()));
  std::visit(
      [&](auto& buf) {
        using Elem = typename std::decay_t<decltype(buf)>::value_type;
        pf.read(reinterpret_cast<char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(Elem)));
      },
      v.data);
  require(pf.gcount() == bytes, "volume payload " + payload + " truncated: expected " +
                                    std::to_string(bytes) + " bytes, got " +
                                    std::to_string(pf.gcount()));
  return v;
}

}  // namespace dseg
