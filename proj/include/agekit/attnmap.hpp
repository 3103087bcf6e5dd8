#pragma once

// Final-layer [CLS] attention: extraction, per-head activation statistics,
// head selection, and thresholded binary masks with an on-disk cache.

#include "agekit/checkpoint.hpp"
#include "agekit/dataset.hpp"
#include "agekit/image_io.hpp"
#include "agekit/vit.hpp"

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <map>
#include <numeric>

namespace agekit {

struct HeadSelectionConfig {
  double sample_fraction = 0.10;
  double activation_threshold = 0.5;  // applied after per-map min-max normalization
  int count_ceiling = 50;
  int histogram_bins = 10;

  void validate() const {
    if (!(sample_fraction > 0 && sample_fraction <= 1)) throw ConfigError("sample_fraction must lie in (0,1]");
    if (!(activation_threshold > 0 && activation_threshold < 1))
      throw ConfigError("activation_threshold must lie in (0,1)");
    if (count_ceiling <= 0) throw ConfigError("count_ceiling must be positive");
    if (histogram_bins <= 0) throw ConfigError("histogram_bins must be positive");
  }
};

struct HeadStats {
  int head = 0;  // 0-based
  int max_count = 0;
  double mean_count = 0;
  std::vector<int> histogram;  // equal-width bins over [0, cells]
};

struct HeadSelectionReport {
  std::vector<HeadStats> per_head;
  int selected_head = 0;  // 0-based
  int sample_size = 0;
  bool fallback = false;  // no head was below the ceiling
};

struct BinaryMask {
  BoolGrid grid;        // patch cells
  BoolGrid pixel_mask;  // nearest-neighbor expansion of grid
  int source_head = 0;
  double threshold = 0.5;
};

/// Final-layer attention of one preprocessed image.
inline AttentionHeadMaps extract_cls_attention(const VitParams<float>& backbone, const ViTConfig& cfg,
                                               const Image& image) {
  if (image.rows() != cfg.image_size || image.cols() != cfg.image_size)
    throw ShapeError("attention extraction expects " + std::to_string(cfg.image_size) + "x" +
                     std::to_string(cfg.image_size) + " input, got " + std::to_string(image.rows()) + "x" +
                     std::to_string(image.cols()));
  return std::move(forward<float>({image}, backbone, cfg, true).final_attention.front());
}

/// Min-max normalization; a constant grid maps to zeros.
inline Mat<double> normalize_map(const Mat<double>& map) {
  const double lo = map.minCoeff(), hi = map.maxCoeff();
  if (!(hi > lo)) return Mat<double>::Zero(map.rows(), map.cols());
  return (map.array() - lo) / (hi - lo);
}

/// Cells whose normalized value exceeds `threshold`.
inline int count_active_cells(const Mat<double>& map, double threshold) {
  if (map.size() == 0) throw ShapeError("empty attention grid");
  return static_cast<int>((normalize_map(map).array() > threshold).count());
}

/// Selection rule: among heads whose maximum count is below `ceiling`, the
/// one with the smallest maximum; otherwise the global minimum. Ties go to
/// the lowest index. Returns {head, fallback_used}.
inline std::pair<int, bool> choose_head(const std::vector<int>& max_counts, int ceiling) {
  if (max_counts.empty()) throw ValidationError("no heads to choose from");
  int best = -1;
  for (std::size_t h = 0; h < max_counts.size(); ++h)
    if (max_counts[h] < ceiling && (best < 0 || max_counts[h] < max_counts[best])) best = static_cast<int>(h);
  if (best >= 0) return {best, false};
  best = 0;
  for (std::size_t h = 1; h < max_counts.size(); ++h)
    if (max_counts[h] < max_counts[best]) best = static_cast<int>(h);
  return {best, true};
}

/// Builds the report from per-image per-head active-cell counts.
inline HeadSelectionReport summarize_head_counts(const std::vector<std::vector<int>>& counts, int cells,
                                                 const HeadSelectionConfig& cfg) {
  if (counts.empty()) throw ValidationError("head selection sample is empty");
  const std::size_t heads = counts.front().size();
  HeadSelectionReport rep;
  rep.sample_size = static_cast<int>(counts.size());
  std::vector<int> max_counts(heads, 0);
  for (std::size_t h = 0; h < heads; ++h) {
    HeadStats st;
    st.head = static_cast<int>(h);
    st.histogram.assign(cfg.histogram_bins, 0);
    double sum = 0;
    for (const auto& per_image : counts) {
      const int c = per_image[h];
      st.max_count = std::max(st.max_count, c);
      sum += c;
      const int bin = std::min(cfg.histogram_bins - 1, c * cfg.histogram_bins / std::max(1, cells + 1));
      ++st.histogram[bin];
    }
    st.mean_count = sum / static_cast<double>(counts.size());
    max_counts[h] = st.max_count;
    rep.per_head.push_back(std::move(st));
  }
  std::tie(rep.selected_head, rep.fallback) = choose_head(max_counts, cfg.count_ceiling);
  return rep;
}

/// Seeded subset of ceil-rounded `fraction * n` indices (at least one), sorted.
inline std::vector<std::size_t> sample_subset(std::size_t n, double fraction, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = stream_for(seed, 0, "head-selection");
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto k = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))), 1, n);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

/// Samples `cfg.sample_fraction` of `train`, counts active cells per head and
/// picks the concentrated head.
inline HeadSelectionReport select_head(const VitParams<float>& backbone, const ViTConfig& vit,
                                       const std::vector<ImageSample>& train, const HeadSelectionConfig& cfg,
                                       std::uint64_t seed) {
  cfg.validate();
  if (train.empty()) throw ValidationError("head selection needs a non-empty training split");
  std::vector<std::vector<int>> counts;
  for (auto i : sample_subset(train.size(), cfg.sample_fraction, seed)) {
    const auto maps = extract_cls_attention(backbone, vit, train[i].pixels);
    std::vector<int> per_head;
    for (const auto& m : maps.maps) per_head.push_back(count_active_cells(m, cfg.activation_threshold));
    counts.push_back(std::move(per_head));
  }
  return summarize_head_counts(counts, vit.num_patches(), cfg);
}

inline nlohmann::json to_json(const HeadSelectionReport& r) {
  nlohmann::json heads = nlohmann::json::array();
  for (const auto& h : r.per_head)
    heads.push_back({{"head", h.head}, {"max_count", h.max_count}, {"mean_count", h.mean_count},
                     {"histogram", h.histogram}});
  return {{"selected_head", r.selected_head}, {"sample_size", r.sample_size}, {"fallback", r.fallback},
          {"per_head", heads}};
}

inline HeadSelectionReport head_report_from_json(const nlohmann::json& j) {
  HeadSelectionReport r;
  r.selected_head = j.at("selected_head");
  r.sample_size = j.at("sample_size");
  r.fallback = j.value("fallback", false);
  for (const auto& h : j.at("per_head"))
    r.per_head.push_back({h.at("head"), h.at("max_count"), h.at("mean_count"), h.at("histogram")});
  return r;
}

// ---------------------------------------------------------------------------
// Masks

/// Chebyshev-neighborhood dilation by `cells`.
inline BoolGrid dilate(const BoolGrid& g, int cells) {
  if (cells <= 0) return g;
  const auto rows = g.rows(), cols = g.cols();
  BoolGrid out = BoolGrid::Constant(rows, cols, false);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) {
      if (!g(r, c)) continue;
      for (Eigen::Index rr = std::max<Eigen::Index>(0, r - cells); rr <= std::min(rows - 1, r + cells); ++rr)
        for (Eigen::Index cc = std::max<Eigen::Index>(0, c - cells); cc <= std::min(cols - 1, c + cells); ++cc)
          out(rr, cc) = true;
    }
  return out;
}

inline BoolGrid upsample_nearest(const BoolGrid& g, int factor) {
  BoolGrid out(g.rows() * factor, g.cols() * factor);
  for (Eigen::Index r = 0; r < out.rows(); ++r)
    for (Eigen::Index c = 0; c < out.cols(); ++c) out(r, c) = g(r / factor, c / factor);
  return out;
}

/// Cells with normalized value above `threshold`, before dilation or fallback.
inline BoolGrid threshold_map(const Mat<double>& map, double threshold) {
  return (normalize_map(map).array() > threshold).matrix();
}

/// Threshold, dilate, then expand to pixels. An empty foreground is replaced
/// by the first argmax cell unless `fallback` is false.
inline BinaryMask make_mask(const Mat<double>& map, double threshold, int dilation_cells, int patch_size,
                            bool fallback = true) {
  BinaryMask m;
  m.threshold = threshold;
  m.grid = threshold_map(map, threshold);
  if (fallback && m.grid.count() == 0) {
    Eigen::Index r = 0, c = 0;
    map.maxCoeff(&r, &c);
    m.grid(r, c) = true;
  }
  m.grid = dilate(m.grid, dilation_cells);
  m.pixel_mask = upsample_nearest(m.grid, patch_size);
  return m;
}

// ---------------------------------------------------------------------------
// Mask cache: <dir>/<id>.pgm (0 background, 255 foreground) + <dir>/index.json

struct MaskCache {
  nlohmann::json index = nlohmann::json::object();
  std::map<std::string, BoolGrid> masks;  // pixel resolution

  const BoolGrid* find(const std::string& id) const {
    auto it = masks.find(id);
    return it == masks.end() ? nullptr : &it->second;
  }
};

inline Image mask_to_image(const BoolGrid& g) { return g.cast<float>(); }

inline void write_mask_cache(const std::filesystem::path& dir, const std::map<std::string, BinaryMask>& masks,
                             nlohmann::json index) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> ids;
  for (const auto& [id, m] : masks) {
    write_pgm(dir / (id + ".pgm"), mask_to_image(m.pixel_mask));
    ids.push_back(id);
  }
  index["ids"] = ids;
  std::ofstream(dir / "index.json") << index.dump(2) << '\n';
}

inline MaskCache load_mask_cache(const std::filesystem::path& dir) {
  const auto index_path = dir / "index.json";
  if (!std::filesystem::exists(index_path)) throw IoError("mask cache index not found: " + index_path.string());
  MaskCache cache;
  std::ifstream(index_path) >> cache.index;
  for (const auto& id : cache.index.at("ids")) {
    const auto img = read_pgm(dir / (id.get<std::string>() + ".pgm"));
    cache.masks.emplace(id.get<std::string>(), (img.array() > 0.5f).matrix());
  }
  return cache;
}

// ---------------------------------------------------------------------------
// Visualization

/// Heat-map overlay of a grid map (bilinearly upsampled, min-max normalized)
/// on a grayscale image.
inline RgbImage attention_overlay(const Image& image, const Mat<double>& map, double alpha = 0.5) {
  const Image heat = resize_bilinear(normalize_map(map).cast<float>(), static_cast<int>(image.rows()),
                                     static_cast<int>(image.cols()));
  RgbImage out(static_cast<int>(image.rows()), static_cast<int>(image.cols()));
  for (int r = 0; r < out.rows; ++r)
    for (int c = 0; c < out.cols; ++c) {
      const float g = std::clamp(image(r, c), 0.0f, 1.0f);
      const float h = std::clamp(heat(r, c), 0.0f, 1.0f);
      // Simple blue -> red ramp.
      const float rgb[3] = {h, 1.0f - std::abs(2 * h - 1), 1.0f - h};
      auto* px = out.at(r, c);
      for (int k = 0; k < 3; ++k) px[k] = to_u8(static_cast<float>((1 - alpha) * g + alpha * rgb[k]));
    }
  return out;
}

inline RgbImage gray_to_rgb(const Image& img) {
  RgbImage out(static_cast<int>(img.rows()), static_cast<int>(img.cols()));
  for (int r = 0; r < out.rows; ++r)
    for (int c = 0; c < out.cols; ++c) {
      auto* px = out.at(r, c);
      px[0] = px[1] = px[2] = to_u8(img(r, c));
    }
  return out;
}

/// Horizontal strip of equally sized tiles separated by `gap` pixels.
inline RgbImage hstack(const std::vector<RgbImage>& tiles, int gap = 4) {
  if (tiles.empty()) return {};
  int width = gap * (static_cast<int>(tiles.size()) - 1), height = 0;
  for (const auto& t : tiles) {
    width += t.cols;
    height = std::max(height, t.rows);
  }
  RgbImage out(height, width);
  std::fill(out.data.begin(), out.data.end(), std::uint8_t{255});
  int x0 = 0;
  for (const auto& t : tiles) {
    for (int r = 0; r < t.rows; ++r)
      for (int c = 0; c < t.cols; ++c) std::copy_n(t.at(r, c), 3, out.at(r, x0 + c));
    x0 += t.cols + gap;
  }
  return out;
}

}  // namespace agekit
