#pragma once

// Named-tensor checkpoint container.
//
//   bytes 0..7   magic "AGEKITCK"
//   u32 LE       format version
//   u32 LE       header length in bytes
//   header       UTF-8 JSON: {"format", "version", "tensors": [{"name","rows","cols"}...], "meta": {...}}
//   payload      float32 LE tensors, row-major, in header order

#include "agekit/vit.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace agekit {

inline constexpr char kCheckpointMagic[8] = {'A', 'G', 'E', 'K', 'I', 'T', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

struct TensorFile {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Mat<float>>> tensors;

  const Mat<float>& at(const std::string& name) const {
    for (const auto& [n, m] : tensors)
      if (n == name) return m;
    throw IoError("checkpoint has no tensor `" + name + "`");
  }
  bool has(const std::string& name) const {
    for (const auto& [n, m] : tensors)
      if (n == name) return true;
    return false;
  }
};

inline nlohmann::json to_json(const ViTConfig& c) {
  return {{"image_size", c.image_size}, {"patch_size", c.patch_size}, {"embed_dim", c.embed_dim},
          {"depth", c.depth},           {"num_heads", c.num_heads},   {"mlp_ratio", c.mlp_ratio},
          {"num_register_tokens", c.num_register_tokens}};
}

inline ViTConfig vit_config_from_json(const nlohmann::json& j) {
  ViTConfig c;
  c.image_size = j.at("image_size");
  c.patch_size = j.at("patch_size");
  c.embed_dim = j.at("embed_dim");
  c.depth = j.at("depth");
  c.num_heads = j.at("num_heads");
  c.mlp_ratio = j.at("mlp_ratio");
  c.num_register_tokens = j.value("num_register_tokens", 0);
  return c;
}

inline void write_tensor_file(const std::filesystem::path& path, const TensorFile& tf) {
  nlohmann::json header;
  header["format"] = "agekit-checkpoint";
  header["version"] = kCheckpointVersion;
  header["meta"] = tf.meta;
  header["tensors"] = nlohmann::json::array();
  for (const auto& [name, m] : tf.tensors) header["tensors"].push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
  const std::string hs = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path.string());
  const std::uint32_t version = kCheckpointVersion, len = static_cast<std::uint32_t>(hs.size());
  out.write(kCheckpointMagic, 8);
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&len), 4);
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& [name, m] : tf.tensors)
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
  if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

inline TensorFile read_tensor_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  char magic[8];
  std::uint32_t version = 0, len = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&len), 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw IoError("not an agekit checkpoint: " + path.string());
  if (version != kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
  std::string hs(len, '\0');
  in.read(hs.data(), len);
  const auto header = nlohmann::json::parse(hs);
  TensorFile tf;
  tf.meta = header.value("meta", nlohmann::json::object());
  for (const auto& t : header.at("tensors")) {
    Mat<float> m(t.at("rows").get<Eigen::Index>(), t.at("cols").get<Eigen::Index>());
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
    tf.tensors.emplace_back(t.at("name").get<std::string>(), std::move(m));
  }
  if (!in) throw IoError("truncated checkpoint: " + path.string());
  return tf;
}

/// Appends all tensors of `params` under `prefix`.
template <class P>
void add_tensors(TensorFile& tf, const P& params, const std::string& prefix) {
  P::visit(params, prefix, [&](const std::string& n, const Mat<float>& m) { tf.tensors.emplace_back(n, m); });
}

/// Fills `params` (already shaped) from tensors under `prefix`.
template <class P>
void take_tensors(const TensorFile& tf, P& params, const std::string& prefix) {
  P::visit(params, prefix, [&](const std::string& n, Mat<float>& m) {
    const auto& src = tf.at(n);
    if (src.rows() != m.rows() || src.cols() != m.cols())
      throw IoError("shape mismatch for tensor `" + n + "`");
    m = src;
  });
}

/// Hex FNV-1a of the file bytes.
inline std::string file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot hash: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(ss.str())));
  return buf;
}

/// Backbone-shaped zero parameters for `cfg` (used as a load target).
inline VitParams<float> vit_shape(const ViTConfig& cfg) {
  Rng rng(0);
  return zeros_like(init_vit<float>(cfg, rng));
}

}  // namespace agekit
