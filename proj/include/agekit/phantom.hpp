#pragma once

// Synthetic mammogram-like phantoms with known dense-tissue masks.
//
// Layout: a half-ellipse breast footprint against the chest wall, fatty
// background texture, dense tissue as a union of bright discs, and
// background distractors (pectoral wedge on MLO views, skin-fold arcs,
// additive noise). The class follows from the dense-area fraction of the
// breast footprint, so the truth mask alone determines the label.

#include "agekit/core.hpp"
#include "agekit/dataset.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <numbers>
#include <vector>

namespace agekit {

struct PhantomThresholds {
  // Upper bounds (exclusive) of A, B, C on dense-area fraction; D is above the last.
  double a_max = 0.05;
  double b_max = 0.25;
  double c_max = 0.60;

  Density classify(double fraction) const {
    if (fraction < a_max) return Density::A;
    if (fraction < b_max) return Density::B;
    if (fraction < c_max) return Density::C;
    return Density::D;
  }
  std::pair<double, double> interval(Density d) const {
    switch (d) {
      case Density::A: return {0.0, a_max};
      case Density::B: return {a_max, b_max};
      case Density::C: return {b_max, c_max};
      case Density::D: return {c_max, 1.0};
    }
    return {0.0, 1.0};
  }
};

struct Ellipse {
  double cx = 0, cy = 0, ax = 1, ay = 1;
  bool contains(double x, double y) const {
    const double dx = (x - cx) / ax, dy = (y - cy) / ay;
    return dx * dx + dy * dy <= 1.0;
  }
};

struct DenseBlob {
  double cx = 0, cy = 0, radius = 0, intensity = 0;
};

struct Distractors {
  bool pectoral_wedge = false;
  double wedge_width = 0, wedge_height = 0, wedge_intensity = 0;
  bool skin_fold = false;
  double fold_start = 0, fold_span = 0, fold_intensity = 0;  // angles in radians along the footprint rim
  double noise_level = 0;
};

struct PhantomSpec {
  int image_size = 0;
  Ellipse breast_region;
  bool mirrored = false;  // chest wall on the right
  std::vector<DenseBlob> dense_blobs;
  Distractors distractors;
  Density cls = Density::A;
  double dense_fraction = 0;
  BoolGrid truth_mask;
};

struct PhantomOptions {
  int image_size = 128;
  PhantomThresholds thresholds;
  double mlo_probability = 0.5;
  double skin_fold_probability = 0.5;
};

using PhantomCounts = std::map<Split, std::map<Density, int>>;

struct PhantomSample {
  ImageSample sample;
  PhantomSpec spec;
  Split split = Split::Train;
};

namespace detail {

inline bool in_wedge(const Distractors& d, double x, double y) {
  if (!d.pectoral_wedge) return false;
  // Triangle with the right angle at the top chest-wall corner.
  return x >= 0 && y >= 0 && x / d.wedge_width + y / d.wedge_height <= 1.0;
}

inline BoolGrid footprint(const PhantomSpec& s) {
  BoolGrid g(s.image_size, s.image_size);
  for (int r = 0; r < s.image_size; ++r)
    for (int c = 0; c < s.image_size; ++c) {
      const int x = s.mirrored ? s.image_size - 1 - c : c;
      g(r, c) = s.breast_region.contains(x + 0.5, r + 0.5);
    }
  return g;
}

inline BoolGrid wedge_mask(const PhantomSpec& s) {
  BoolGrid g(s.image_size, s.image_size);
  for (int r = 0; r < s.image_size; ++r)
    for (int c = 0; c < s.image_size; ++c) {
      const int x = s.mirrored ? s.image_size - 1 - c : c;
      g(r, c) = in_wedge(s.distractors, x + 0.5, r + 0.5);
    }
  return g;
}

inline void paint_disc(BoolGrid& g, const DenseBlob& b, const BoolGrid& allowed) {
  const int n = static_cast<int>(g.rows());
  const int r0 = std::max(0, static_cast<int>(b.cy - b.radius) - 1);
  const int r1 = std::min(n - 1, static_cast<int>(b.cy + b.radius) + 1);
  const int c0 = std::max(0, static_cast<int>(b.cx - b.radius) - 1);
  const int c1 = std::min(n - 1, static_cast<int>(b.cx + b.radius) + 1);
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c) {
      const double dx = c + 0.5 - b.cx, dy = r + 0.5 - b.cy;
      if (dx * dx + dy * dy <= b.radius * b.radius && allowed(r, c)) g(r, c) = true;
    }
}

inline std::pair<double, double> target_range(Density d, const PhantomThresholds& t) {
  // Keep a margin from the class boundaries so labels are unambiguous.
  switch (d) {
    case Density::A: return {0.01, t.a_max - 0.01};
    case Density::B: return {t.a_max + 0.02, t.b_max - 0.03};
    case Density::C: return {t.b_max + 0.03, t.c_max - 0.04};
    case Density::D: return {t.c_max + 0.03, std::min(0.85, t.c_max + 0.2)};
  }
  return {0, 1};
}

}  // namespace detail

inline std::size_t count_true(const BoolGrid& g) { return static_cast<std::size_t>(g.count()); }

/// Dense-area fraction of the breast footprint, by pixel counting.
inline double dense_area_fraction(const PhantomSpec& s) {
  const auto fp = detail::footprint(s);
  std::size_t area = 0, dense = 0;
  for (Eigen::Index i = 0; i < fp.size(); ++i) {
    area += fp.data()[i];
    dense += fp.data()[i] && s.truth_mask.data()[i];
  }
  return area ? static_cast<double>(dense) / area : 0.0;
}

/// Draws one phantom of the requested class from `rng`.
inline PhantomSample generate_phantom(const std::string& id, Density cls, const PhantomOptions& opt, Rng& rng) {
  const int n = opt.image_size;
  if (n < 64) throw ConfigError("phantom image_size must be >= 64");
  const double S = n;

  for (int attempt = 0;; ++attempt) {
    PhantomSpec spec;
    spec.image_size = n;
    spec.cls = cls;
    spec.breast_region = {0.0, S * uniform(rng, 0.45, 0.55), S * uniform(rng, 0.70, 0.90), S * uniform(rng, 0.38, 0.46)};
    const bool mlo = bernoulli(rng, opt.mlo_probability);
    auto& d = spec.distractors;
    d.pectoral_wedge = mlo;
    if (mlo) {
      d.wedge_width = S * uniform(rng, 0.25, 0.42);
      d.wedge_height = S * uniform(rng, 0.55, 0.95);
      d.wedge_intensity = uniform(rng, 0.70, 0.95);
    }
    d.skin_fold = bernoulli(rng, opt.skin_fold_probability);
    if (d.skin_fold) {
      d.fold_start = uniform(rng, -std::numbers::pi / 2, std::numbers::pi / 4);
      d.fold_span = uniform(rng, 0.4, 1.0);
      d.fold_intensity = uniform(rng, 0.65, 0.9);
    }
    d.noise_level = uniform(rng, 0.01, 0.04);

    const BoolGrid fp = detail::footprint(spec);
    const BoolGrid wedge = detail::wedge_mask(spec);
    const BoolGrid allowed = fp.array() && !wedge.array();
    const auto fp_area = static_cast<double>(count_true(fp));

    // Candidate blob centers: allowed pixels.
    std::vector<std::pair<int, int>> centers;
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c)
        if (allowed(r, c)) centers.emplace_back(r, c);

    const auto [lo, hi] = detail::target_range(cls, opt.thresholds);
    const double target = uniform(rng, lo, hi);
    const double upper = opt.thresholds.interval(cls).second;
    const auto [rmin, rmax] = [&]() -> std::pair<double, double> {
      switch (cls) {
        case Density::A: return {0.02, 0.05};
        case Density::B: return {0.04, 0.09};
        case Density::C: return {0.06, 0.13};
        case Density::D: return {0.09, 0.18};
      }
      return {0.05, 0.1};
    }();

    BoolGrid truth = BoolGrid::Constant(n, n, false);
    double fraction = 0;
    for (int it = 0; it < 4000 && fraction < target; ++it) {
      const auto& [cr, cc] = centers[static_cast<std::size_t>(uniform(rng) * centers.size()) % centers.size()];
      DenseBlob blob{cc + 0.5, cr + 0.5, S * uniform(rng, rmin, rmax), uniform(rng, 0.62, 0.85)};
      for (int shrink = 0; shrink < 6; ++shrink) {
        BoolGrid next = truth;
        detail::paint_disc(next, blob, allowed);
        const double f = count_true(next) / fp_area;
        if (f < upper) {
          truth = std::move(next);
          fraction = f;
          spec.dense_blobs.push_back(blob);
          break;
        }
        blob.radius *= 0.5;
      }
    }
    spec.truth_mask = truth;
    spec.dense_fraction = fraction;
    if (opt.thresholds.classify(fraction) != cls || fraction <= 0) {
      if (attempt > 50) throw Error("phantom generator failed to reach the class interval for " + id);
      continue;
    }

    // Render.
    Image img = Image::Zero(n, n);
    const double fx1 = uniform(rng, 2, 6) * std::numbers::pi / S, fy1 = uniform(rng, 2, 6) * std::numbers::pi / S;
    const double ph1 = uniform(rng, 0, 2 * std::numbers::pi), ph2 = uniform(rng, 0, 2 * std::numbers::pi);
    const double fat = uniform(rng, 0.22, 0.32);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c)
        if (fp(r, c)) img(r, c) = static_cast<float>(fat + 0.04 * std::sin(fx1 * c + ph1) * std::cos(fy1 * r + ph2));
    for (const auto& b : spec.dense_blobs) {
      BoolGrid disc = BoolGrid::Constant(n, n, false);
      detail::paint_disc(disc, b, allowed);
      for (Eigen::Index i = 0; i < disc.size(); ++i)
        if (disc.data()[i]) img.data()[i] = std::max(img.data()[i], static_cast<float>(b.intensity));
    }
    if (d.pectoral_wedge)
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c)
          if (wedge(r, c)) img(r, c) = static_cast<float>(d.wedge_intensity - 0.05 * (c / d.wedge_width));
    if (d.skin_fold) {
      const auto& e = spec.breast_region;
      for (int k = 0; k < 400; ++k) {
        const double t = d.fold_start + d.fold_span * k / 399.0;
        for (double inset = 1.0; inset <= 3.0; inset += 0.5) {
          const double x = e.cx + (e.ax - inset) * std::cos(t);
          const double y = e.cy + (e.ay - inset) * std::sin(t);
          const int c = static_cast<int>(x), r = static_cast<int>(y);
          if (r >= 0 && r < n && c >= 0 && c < n && !truth(r, c)) img(r, c) = static_cast<float>(d.fold_intensity);
        }
      }
    }
    std::normal_distribution<double> noise(0.0, d.noise_level);
    for (Eigen::Index i = 0; i < img.size(); ++i)
      img.data()[i] = std::clamp(static_cast<float>(img.data()[i] + noise(rng)), 0.0f, 1.0f);

    spec.mirrored = bernoulli(rng, 0.5);
    if (spec.mirrored) {
      img = img.rowwise().reverse().eval();
      spec.truth_mask = spec.truth_mask.rowwise().reverse().eval();
    }

    PhantomSample out;
    out.sample.id = id;
    out.sample.pixels = std::move(img);
    out.sample.label = cls;
    out.sample.view = mlo ? View::MLO : View::CC;
    out.sample.laterality = spec.mirrored ? Laterality::R : Laterality::L;
    out.spec = std::move(spec);
    return out;
  }
}

inline std::string phantom_id(Split split, Density cls, int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s-%c-%04d", split_name(split).c_str(), density_char(cls), index);
  return buf;
}

/// Deterministic in `seed`; each sample draws from its own stream keyed by id,
/// so the result does not depend on generation order.
inline std::vector<PhantomSample> generate_phantom_dataset(std::uint64_t seed, const PhantomCounts& counts,
                                                           const PhantomOptions& opt = {}) {
  if (opt.image_size < 64) throw ConfigError("phantom image_size must be >= 64");
  std::vector<PhantomSample> out;
  for (const auto& [split, per_class] : counts) {
    for (const auto& [cls, count] : per_class) {
      if (count < 0) throw ConfigError("phantom counts must be non-negative");
      for (int i = 0; i < count; ++i) {
        const auto id = phantom_id(split, cls, i);
        auto rng = stream_for(seed, 0, id);
        auto ps = generate_phantom(id, cls, opt, rng);
        ps.split = split;
        out.push_back(std::move(ps));
      }
    }
  }
  return out;
}

inline nlohmann::json phantom_spec_json(const PhantomSpec& s) {
  nlohmann::json blobs = nlohmann::json::array();
  for (const auto& b : s.dense_blobs)
    blobs.push_back({{"cx", b.cx}, {"cy", b.cy}, {"radius", b.radius}, {"intensity", b.intensity}});
  const auto& d = s.distractors;
  return {
      {"image_size", s.image_size},
      {"breast_region", {{"cx", s.breast_region.cx}, {"cy", s.breast_region.cy}, {"ax", s.breast_region.ax},
                         {"ay", s.breast_region.ay}}},
      {"mirrored", s.mirrored},
      {"dense_blobs", blobs},
      {"distractors",
       {{"pectoral_wedge", d.pectoral_wedge}, {"wedge_width", d.wedge_width}, {"wedge_height", d.wedge_height},
        {"wedge_intensity", d.wedge_intensity}, {"skin_fold", d.skin_fold}, {"fold_start", d.fold_start},
        {"fold_span", d.fold_span}, {"fold_intensity", d.fold_intensity}, {"noise_level", d.noise_level}}},
      {"class", density_name(s.cls)},
      {"dense_fraction", s.dense_fraction},
      {"truth_pixels", count_true(s.truth_mask)},
  };
}

/// Writes `<id>.png`, `<id>.json` (spec sidecar), `<id>_truth.png` and a
/// `manifest.csv` covering all samples into `dir`.
inline std::filesystem::path export_phantom_dataset(const std::filesystem::path& dir,
                                                    const std::vector<PhantomSample>& samples) {
  std::filesystem::create_directories(dir);
  std::vector<ManifestEntry> entries;
  for (const auto& ps : samples) {
    const auto img_path = dir / (ps.sample.id + ".png");
    write_png(img_path, ps.sample.pixels);
    write_png(dir / (ps.sample.id + "_truth.png"), Image(ps.spec.truth_mask.cast<float>()));
    std::ofstream(dir / (ps.sample.id + ".json")) << phantom_spec_json(ps.spec).dump(2) << '\n';
    entries.push_back({ps.sample.id, std::filesystem::absolute(img_path), *ps.sample.label, ps.split});
  }
  const auto manifest = dir / "manifest.csv";
  write_manifest(manifest, entries);
  return manifest;
}

}  // namespace agekit
