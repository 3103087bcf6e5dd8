#pragma once

#include "agekit/core.hpp"
#include "agekit/image_io.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace agekit {

enum class View { CC, MLO };
enum class Laterality { L, R };

struct ImageSample {
  std::string id;
  Image pixels;
  std::optional<Density> label;
  std::optional<View> view;
  std::optional<Laterality> laterality;
};

enum class Split { Train, Val, Test };

inline std::string split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

inline std::optional<Split> parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  return std::nullopt;
}

struct ManifestEntry {
  std::string id;
  std::filesystem::path path;
  Density label;
  Split split;

  bool operator==(const ManifestEntry&) const = default;
};

using ClassCounts = std::map<Density, int>;

struct SplitManifest {
  std::vector<ManifestEntry> entries;
  std::map<Split, ClassCounts> class_counts;

  std::vector<ManifestEntry> in_split(Split s) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : entries)
      if (e.split == s) out.push_back(e);
    return out;
  }
};

inline std::map<Split, ClassCounts> recount(const std::vector<ManifestEntry>& entries) {
  std::map<Split, ClassCounts> counts;
  for (const auto& e : entries) ++counts[e.split][e.label];
  return counts;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

}  // namespace detail

/// Parses a manifest CSV with header `id,path,label,split`. Relative paths
/// resolve against the manifest's directory. Row numbers in errors are
/// 1-based data rows (the header is row 0).
inline SplitManifest load_manifest(const std::filesystem::path& path, bool check_files = true) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("manifest is empty (missing header): " + path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // BOM
  if (detail::trim(line) != "id,path,label,split")
    throw ValidationError("manifest header must be `id,path,label,split`, got `" + line + "`");

  SplitManifest m;
  std::vector<std::string> problems;
  std::set<std::string> seen;
  const auto base = path.parent_path();
  int row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim(line).empty()) continue;
    ++row;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != 4) {
      problems.push_back("row " + std::to_string(row) + ": expected 4 fields, got " + std::to_string(cells.size()));
      continue;
    }
    const auto id = detail::trim(cells[0]);
    const auto label = parse_density(detail::trim(cells[2]));
    const auto split = parse_split(detail::trim(cells[3]));
    if (id.empty()) problems.push_back("row " + std::to_string(row) + ": empty id");
    if (!label) problems.push_back("row " + std::to_string(row) + ": unknown label `" + cells[2] + "`");
    if (!split) problems.push_back("row " + std::to_string(row) + ": unknown split `" + cells[3] + "`");
    if (!seen.insert(id).second) problems.push_back("row " + std::to_string(row) + ": duplicate id `" + id + "`");
    if (!label || !split || id.empty()) continue;
    std::filesystem::path file = detail::trim(cells[1]);
    if (file.is_relative()) file = base / file;
    if (check_files && !std::filesystem::exists(file))
      problems.push_back("row " + std::to_string(row) + ": file not found `" + file.string() + "`");
    m.entries.push_back({id, file, *label, *split});
  }
  if (!problems.empty()) {
    std::string msg = "invalid manifest " + path.string() + ":";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ValidationError(msg);
  }
  m.class_counts = recount(m.entries);
  return m;
}

/// Paths are written relative to the manifest directory when possible.
inline void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest: " + path.string());
  out << "id,path,label,split\n";
  const auto base = path.parent_path();
  for (const auto& e : entries) {
    auto p = e.path;
    if (p.is_absolute() && !base.empty()) {
      auto rel = std::filesystem::relative(p, std::filesystem::absolute(base));
      if (!rel.empty()) p = rel;
    }
    out << e.id << ',' << p.generic_string() << ',' << density_char(e.label) << ',' << split_name(e.split) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Resampling

/// Bilinear resize with half-pixel centers.
inline Image resize_bilinear(const Image& src, int out_rows, int out_cols) {
  if (src.rows() == out_rows && src.cols() == out_cols) return src;
  Image dst(out_rows, out_cols);
  const double sy = static_cast<double>(src.rows()) / out_rows;
  const double sx = static_cast<double>(src.cols()) / out_cols;
  const auto last_r = static_cast<int>(src.rows()) - 1;
  const auto last_c = static_cast<int>(src.cols()) - 1;
  for (int r = 0; r < out_rows; ++r) {
    const double fy = std::clamp((r + 0.5) * sy - 0.5, 0.0, static_cast<double>(last_r));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, last_r);
    const double wy = fy - y0;
    for (int c = 0; c < out_cols; ++c) {
      const double fx = std::clamp((c + 0.5) * sx - 0.5, 0.0, static_cast<double>(last_c));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, last_c);
      const double wx = fx - x0;
      const double top = src(y0, x0) * (1 - wx) + src(y0, x1) * wx;
      const double bot = src(y1, x0) * (1 - wx) + src(y1, x1) * wx;
      dst(r, c) = static_cast<float>(top * (1 - wy) + bot * wy);
    }
  }
  return dst;
}

/// Resize with box prefiltering for integer downsampling factors so that
/// large sources are not aliased; falls back to bilinear otherwise.
inline Image resize_image(const Image& src, int out_rows, int out_cols) {
  if (src.rows() % out_rows == 0 && src.cols() % out_cols == 0 && src.rows() > out_rows) {
    const auto fy = static_cast<int>(src.rows() / out_rows);
    const auto fx = static_cast<int>(src.cols() / out_cols);
    Image dst(out_rows, out_cols);
    for (int r = 0; r < out_rows; ++r)
      for (int c = 0; c < out_cols; ++c) dst(r, c) = src.block(r * fy, c * fx, fy, fx).mean();
    return dst;
  }
  return resize_bilinear(src, out_rows, out_cols);
}

/// Per-image min-max normalization to [0,1]; a constant image maps to zeros.
inline Image minmax_normalize(const Image& img) {
  if (img.size() == 0) return img;
  const float lo = img.minCoeff();
  const float hi = img.maxCoeff();
  if (!(hi > lo)) return Image::Zero(img.rows(), img.cols());
  return ((img.array() - lo) / (hi - lo)).matrix();
}

inline ImageSample resize_and_normalize(const ImageSample& sample, int target, int patch_size) {
  if (patch_size <= 0 || target <= 0 || target % patch_size != 0)
    throw ConfigError("target side " + std::to_string(target) + " is not divisible by patch size " +
                      std::to_string(patch_size));
  ImageSample out = sample;
  out.pixels = minmax_normalize(resize_image(sample.pixels, target, target));
  return out;
}

/// Loads every entry of one split, resized and normalized.
inline std::vector<ImageSample> load_split(const SplitManifest& m, Split split, int target, int patch_size) {
  std::vector<ImageSample> out;
  for (const auto& e : m.entries) {
    if (e.split != split) continue;
    ImageSample s{e.id, read_image(e.path), e.label, std::nullopt, std::nullopt};
    out.push_back(resize_and_normalize(s, target, patch_size));
  }
  return out;
}

}  // namespace agekit
