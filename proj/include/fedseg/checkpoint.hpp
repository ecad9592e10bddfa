#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedseg/segmodel.hpp"

namespace fedseg {

// Checkpoint layout: an 8-byte little-endian unsigned manifest length, the
// UTF-8 JSON manifest {format_version, config, params[{name,shape,offset}]},
// then a little-endian f32 blob holding all parameters in manifest order.

namespace detail {

inline void put_u64_le(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

inline uint64_t get_u64_le(const uint8_t* p) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
  return v;
}

inline void put_f32_le(std::vector<uint8_t>& out, float f) {
  uint32_t bits;
  std::memcpy(&bits, &f, 4);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((bits >> (8 * i)) & 0xff));
}

inline float get_f32_le(const uint8_t* p) {
  uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<uint32_t>(p[i]) << (8 * i);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

inline nlohmann::json config_to_json(const SegModelConfig& c) {
  return {{"num_classes", c.num_classes},
          {"num_queries", c.num_queries},
          {"feature_channels", c.feature_channels},
          {"backbone_depth", c.backbone_depth},
          {"embed_dim", c.embed_dim},
          {"height", c.height},
          {"width", c.width}};
}

inline SegModelConfig config_from_json(const nlohmann::json& j) {
  SegModelConfig c;
  c.num_classes = j.at("num_classes").get<int>();
  c.num_queries = j.at("num_queries").get<int>();
  c.feature_channels = j.at("feature_channels").get<int>();
  c.backbone_depth = j.at("backbone_depth").get<int>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.height = j.at("height").get<int>();
  c.width = j.at("width").get<int>();
  return c;
}

}  // namespace detail

inline constexpr int kCheckpointFormatVersion = 1;

inline std::vector<uint8_t> save_checkpoint(const SegModel& model) {
  nlohmann::json manifest;
  manifest["format_version"] = kCheckpointFormatVersion;
  manifest["config"] = detail::config_to_json(model.config);

  std::vector<uint8_t> blob;
  nlohmann::json params = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& [name, p] : model.named_params()) {
    nlohmann::json rec;
    rec["name"] = name;
    rec["shape"] = p.shape();
    rec["offset"] = offset;
    params.push_back(rec);
    for (double v : p.values()) detail::put_f32_le(blob, static_cast<float>(v));
    offset += 4 * p.values().size();
  }
  manifest["params"] = params;

  std::string mtxt = manifest.dump();
  std::vector<uint8_t> out;
  out.reserve(8 + mtxt.size() + blob.size());
  detail::put_u64_le(out, mtxt.size());
  out.insert(out.end(), mtxt.begin(), mtxt.end());
  out.insert(out.end(), blob.begin(), blob.end());
  return out;
}

inline SegModel load_checkpoint(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 8) throw IoError("checkpoint: truncated header");
  uint64_t mlen = detail::get_u64_le(bytes.data());
  if (bytes.size() < 8 + mlen) throw IoError("checkpoint: truncated manifest");

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + mlen);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint: bad manifest: ") + e.what());
  }
  if (manifest.value("format_version", -1) != kCheckpointFormatVersion)
    throw IoError("checkpoint: unsupported format version");

  SegModelConfig cfg = detail::config_from_json(manifest.at("config"));
  SegModel model = init_model(cfg, 0);  // structure; values overwritten below

  const uint8_t* blob = bytes.data() + 8 + mlen;
  uint64_t blob_len = bytes.size() - 8 - mlen;

  NamedParams params = model.named_params();
  const auto& precs = manifest.at("params");
  if (precs.size() != params.size())
    throw IoError("checkpoint: manifest parameter count does not match architecture");

  uint64_t expected_total = 0;
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& rec = precs[i];
    auto& [name, tensor] = params[i];
    if (rec.at("name").get<std::string>() != name)
      throw IoError("checkpoint: unexpected parameter " + rec.at("name").get<std::string>());
    Shape shape = rec.at("shape").get<Shape>();
    if (shape != tensor.shape()) throw IoError("checkpoint: shape mismatch for " + name);
    uint64_t offset = rec.at("offset").get<uint64_t>();
    uint64_t nbytes = 4 * tensor.values().size();
    if (offset + nbytes > blob_len) throw IoError("checkpoint: blob too short for " + name);
    auto& vals = tensor.values();
    for (size_t k = 0; k < vals.size(); ++k)
      vals[k] = static_cast<double>(detail::get_f32_le(blob + offset + 4 * k));
    expected_total += nbytes;
  }
  if (expected_total != blob_len)
    throw IoError("checkpoint: blob length does not match manifest");
  model.set_requires_grad(true);
  return model;
}

inline void save_checkpoint_file(const SegModel& model, const std::string& path) {
  std::vector<uint8_t> bytes = save_checkpoint(model);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("checkpoint: cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("checkpoint: write failed for " + path);
}

inline SegModel load_checkpoint_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("checkpoint: cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return load_checkpoint(bytes);
}

}  // namespace fedseg
