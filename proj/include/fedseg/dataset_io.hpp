#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedseg/scenegen.hpp"

namespace fedseg {

// On-disk dataset: <dir>/manifest.json plus per-scene raw files
//   scene_%05d.image  little-endian f32, 3*H*W values, channel-major
//   scene_%05d.labels u8, H*W values (only when labeled)

namespace detail {

inline std::string scene_stem(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%05d", index);
  return buf;
}

inline void write_bytes(const std::filesystem::path& path, const std::vector<uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("dataset: cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("dataset: short write to " + path.string());
}

inline std::vector<uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("dataset: cannot read " + path.string());
  return std::vector<uint8_t>((std::istreambuf_iterator<char>(f)),
                              std::istreambuf_iterator<char>());
}

}  // namespace detail

inline void write_dataset(const DomainDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = {{"domain_id", ds.domain_id}, {"num_classes", ds.num_classes},
                             {"count", ds.scenes.size()}, {"height", ds.height},
                             {"width", ds.width},         {"labeled", ds.labeled}};
  {
    std::ofstream f(dir / "manifest.json", std::ios::trunc);
    if (!f) throw IoError("dataset: cannot write manifest in " + dir.string());
    f << manifest.dump(2) << "\n";
  }
  for (size_t i = 0; i < ds.scenes.size(); ++i) {
    const Scene& s = ds.scenes[i];
    std::vector<uint8_t> img;
    img.reserve(s.image.values().size() * 4);
    for (double v : s.image.values()) {
      float fv = static_cast<float>(v);
      uint32_t bits;
      std::memcpy(&bits, &fv, 4);
      for (int b = 0; b < 4; ++b) img.push_back(static_cast<uint8_t>((bits >> (8 * b)) & 0xff));
    }
    detail::write_bytes(dir / (detail::scene_stem(static_cast<int>(i)) + ".image"), img);
    if (ds.labeled) {
      if (!s.labels) throw ContractError("dataset: labeled dataset has a scene without labels");
      detail::write_bytes(dir / (detail::scene_stem(static_cast<int>(i)) + ".labels"),
                          s.labels->ids);
    }
  }
}

inline DomainDataset read_dataset(const std::filesystem::path& dir) {
  nlohmann::json manifest;
  {
    std::ifstream f(dir / "manifest.json");
    if (!f) throw IoError("dataset: missing manifest in " + dir.string());
    try {
      f >> manifest;
    } catch (const nlohmann::json::exception& e) {
      throw IoError("dataset: bad manifest in " + dir.string() + ": " + e.what());
    }
  }
  DomainDataset ds;
  ds.domain_id = manifest.at("domain_id").get<std::string>();
  ds.num_classes = manifest.at("num_classes").get<int>();
  ds.height = manifest.at("height").get<int>();
  ds.width = manifest.at("width").get<int>();
  ds.labeled = manifest.at("labeled").get<bool>();
  size_t count = manifest.at("count").get<size_t>();

  size_t img_bytes = static_cast<size_t>(3) * ds.height * ds.width * 4;
  for (size_t i = 0; i < count; ++i) {
    std::string stem = detail::scene_stem(static_cast<int>(i));
    std::vector<uint8_t> raw = detail::read_bytes(dir / (stem + ".image"));
    if (raw.size() != img_bytes)
      throw IoError("dataset: image blob size mismatch for " + stem + " in " + dir.string());
    std::vector<double> vals(raw.size() / 4);
    for (size_t k = 0; k < vals.size(); ++k) {
      uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<uint32_t>(raw[4 * k + b]) << (8 * b);
      float fv;
      std::memcpy(&fv, &bits, 4);
      vals[k] = static_cast<double>(fv);
    }
    Scene s;
    s.image = Tensor::from({3, ds.height, ds.width}, std::move(vals));
    if (ds.labeled) {
      std::vector<uint8_t> ids = detail::read_bytes(dir / (stem + ".labels"));
      if (ids.size() != static_cast<size_t>(ds.height) * ds.width)
        throw IoError("dataset: label blob size mismatch for " + stem + " in " + dir.string());
      LabelMap lm(ds.height, ds.width);
      lm.ids = std::move(ids);
      s.labels = std::move(lm);
    }
    ds.scenes.push_back(std::move(s));
  }
  return ds;
}

}  // namespace fedseg
