#include "dseg/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace dseg {

namespace {

constexpr char kMagic[4] = {'D', 'S', 'E', 'G'};

template <typename V>
void write_pod(std::ofstream& f, const V& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V read_pod(std::ifstream& f, const std::string& path) {
  V v{};
  f.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!f.good())
    fail("checkpoint " + path + " truncated at byte " + std::to_string(f.tellg() == -1 ? -1 : static_cast<long long>(f.tellg())));
  return v;
}

}  // namespace

template <typename T>
void save_checkpoint(const ModelGraph<T>& m, const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream f(path, std::ios::binary);
  require(f.good(), "cannot write checkpoint " + path);

  f.write(kMagic, 4);
  write_pod(f, kCheckpointVersion);
  const std::string& cfg = m.config_text;
  write_pod(f, static_cast<uint64_t>(cfg.size()));
  f.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  write_pod(f, static_cast<uint32_t>(m.params.size()));

  for (const auto& [name, p] : m.params) {
    require(name.size() <= 0xffff, "parameter name too long: " + name);
    write_pod(f, static_cast<uint16_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    const auto& shape = p.shape();
    require(shape.size() <= 0xff, "parameter rank too large");
    write_pod(f, static_cast<uint8_t>(shape.size()));
    for (int64_t d : shape) write_pod(f, static_cast<uint32_t>(d));
    if constexpr (std::is_same_v<T, float>) {
      f.write(reinterpret_cast<const char*>(p.data().data()),
              static_cast<std::streamsize>(p.size() * 4));
    } else {
      std::vector<float> tmp(p.size());
      for (int64_t i = 0; i < p.size(); ++i) tmp[i] = static_cast<float>(p.data()[i]);
      f.write(reinterpret_cast<const char*>(tmp.data()),
              static_cast<std::streamsize>(tmp.size() * 4));
    }
  }
  require(f.good(), "short write on checkpoint " + path);
}

template <typename T>
ModelGraph<T> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "cannot open checkpoint " + path);

  char magic[4];
  f.read(magic, 4);
  require(f.good() && std::memcmp(magic, kMagic, 4) == 0,
          "bad checkpoint magic in " + path + " (not a DSEG checkpoint)");
  const uint32_t version = read_pod<uint32_t>(f, path);
  require(version == kCheckpointVersion, "unsupported checkpoint version " +
                                             std::to_string(version) + " in " + path);

  const uint64_t cfg_len = read_pod<uint64_t>(f, path);
  std::string cfg(cfg_len, '\0');
  f.read(cfg.data(), static_cast<std::streamsize>(cfg_len));
  require(f.good(), "checkpoint " + path + " truncated inside the config text");

  nlohmann::json cfg_json;
  try {
    cfg_json = nlohmann::json::parse(cfg);
  } catch (const nlohmann::json::exception& e) {
    fail("checkpoint " + path + " has a malformed config document: " + e.what());
  }
  const std::string arch = cfg_json.at("arch").get<std::string>();
  const uint64_t seed = cfg_json.at("seed").get<uint64_t>();

  ModelGraph<T> m = build_model<T>(arch, seed);
  m.config_text = cfg;

  const uint32_t count = read_pod<uint32_t>(f, path);
  require(count == m.params.size(), "checkpoint " + path + " stores " + std::to_string(count) +
                                        " tensors, architecture '" + arch + "' has " +
                                        std::to_string(m.params.size()));

  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t name_len = read_pod<uint16_t>(f, path);
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    require(f.good(), "checkpoint " + path + " truncated inside a tensor name");
    const uint8_t rank = read_pod<uint8_t>(f, path);
    Shape shape(rank);
    int64_t n = 1;
    for (uint8_t d = 0; d < rank; ++d) {
      shape[d] = read_pod<uint32_t>(f, path);
      n *= shape[d];
    }
    Tensor<T>* p = m.find_param(name);
    require(p != nullptr, "checkpoint tensor '" + name + "' does not exist in '" + arch + "'");
    require(p->shape() == shape, "checkpoint tensor '" + name + "' has shape mismatch");

    std::vector<float> tmp(n);
    f.read(reinterpret_cast<char*>(tmp.data()), static_cast<std::streamsize>(n * 4));
    if (!f.good())
      fail("checkpoint " + path + " truncated inside tensor '" + name + "' at byte " +
           std::to_string(static_cast<long long>(f.tellg())));
    for (int64_t j = 0; j < n; ++j) p->data()[j] = static_cast<T>(tmp[j]);
  }
  return m;
}

template void save_checkpoint<float>(const ModelGraph<float>&, const std::string&);
template void save_checkpoint<double>(const ModelGraph<double>&, const std::string&);
template ModelGraph<float> load_checkpoint<float>(const std::string&);
template ModelGraph<double> load_checkpoint<double>(const std::string&);

}  // namespace dseg
