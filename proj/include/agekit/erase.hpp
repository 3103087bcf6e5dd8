#pragma once

// Attention-guided erasing (AGE), the random erasing baseline, and the
// downstream augmentation policy that applies either with probability P.

#include "agekit/core.hpp"
#include "agekit/transforms.hpp"

#include <optional>
#include <string>
#include <vector>

namespace agekit {

enum class EraseMode { None, RE, AGE };

inline std::string erase_mode_name(EraseMode m) {
  switch (m) {
    case EraseMode::None: return "none";
    case EraseMode::RE: return "RE";
    case EraseMode::AGE: return "AGE";
  }
  return "?";
}

inline std::optional<EraseMode> parse_erase_mode(std::string_view s) {
  if (s == "none") return EraseMode::None;
  if (s == "RE" || s == "re") return EraseMode::RE;
  if (s == "AGE" || s == "age") return EraseMode::AGE;
  return std::nullopt;
}

struct Interval {
  double lo = 0;
  double hi = 1;
  bool operator==(const Interval&) const = default;
};

struct RandomErasingParams {
  Interval area{0.02, 0.33};
  Interval aspect{0.3, 3.3};
  int max_attempts = 10;
  bool operator==(const RandomErasingParams&) const = default;
};

enum class AugKind { HFlip, Rotate, Jitter };

/// One standard augmentation. HFlip fires with `probability`; Rotate draws an
/// angle uniform in [-magnitude, magnitude] degrees; Jitter draws brightness
/// and contrast factors uniform in [1 - magnitude, 1 + magnitude].
struct StandardAug {
  AugKind kind = AugKind::HFlip;
  double probability = 1.0;
  double magnitude = 0.0;
  bool operator==(const StandardAug&) const = default;
};

inline std::vector<StandardAug> default_standard_augs() {
  return {{AugKind::HFlip, 0.5, 0.0}, {AugKind::Rotate, 1.0, 10.0}, {AugKind::Jitter, 1.0, 0.10}};
}

struct AugmentationPolicy {
  EraseMode mode = EraseMode::None;
  double probability = 0.0;
  float fill_value = 0.0f;
  RandomErasingParams re;
  std::vector<StandardAug> standard_augs = default_standard_augs();

  void validate() const {
    if (!(probability >= 0 && probability <= 1)) throw ConfigError("erase probability must lie in [0,1]");
    if (!(re.area.lo > 0 && re.area.lo <= re.area.hi && re.area.hi < 1))
      throw ConfigError("random erasing area interval must lie in (0,1)");
    if (!(re.aspect.lo > 0 && re.aspect.lo <= re.aspect.hi)) throw ConfigError("aspect interval must be positive");
    if (re.max_attempts <= 0) throw ConfigError("random erasing needs at least one attempt");
  }
};

struct Rect {
  int top = 0, left = 0, height = 0, width = 0;
};

/// Keeps mask-true pixels and sets the rest to `fill`.
inline Image apply_age(const Image& image, const BoolGrid& pixel_mask, float fill = 0.0f) {
  if (image.rows() != pixel_mask.rows() || image.cols() != pixel_mask.cols())
    throw ShapeError("AGE mask is " + std::to_string(pixel_mask.rows()) + "x" + std::to_string(pixel_mask.cols()) +
                     " but image is " + std::to_string(image.rows()) + "x" + std::to_string(image.cols()));
  return pixel_mask.select(image, Image::Constant(image.rows(), image.cols(), fill));
}

/// Fills one rectangle with uniform noise. The rectangle's area fraction and
/// aspect ratio (height / width) lie in the configured intervals; after
/// `max_attempts` failed draws the image is returned unchanged.
inline Image apply_random_erasing(const Image& image, const RandomErasingParams& p, Rng& rng,
                                  Rect* erased = nullptr) {
  const int rows = static_cast<int>(image.rows()), cols = static_cast<int>(image.cols());
  const double total = static_cast<double>(rows) * cols;
  for (int attempt = 0; attempt < p.max_attempts; ++attempt) {
    const double area = uniform(rng, p.area.lo, p.area.hi) * total;
    const double aspect = uniform(rng, p.aspect.lo, p.aspect.hi);
    const int h = static_cast<int>(std::lround(std::sqrt(area * aspect)));
    const int w = static_cast<int>(std::lround(std::sqrt(area / aspect)));
    if (h < 1 || w < 1 || h > rows || w > cols) continue;
    const double frac = h * w / total;
    if (frac < p.area.lo || frac > p.area.hi) continue;
    const int top = static_cast<int>(uniform(rng, 0, rows - h + 1));
    const int left = static_cast<int>(uniform(rng, 0, cols - w + 1));
    Image out = image;
    for (int r = top; r < top + h; ++r)
      for (int c = left; c < left + w; ++c) out(r, c) = static_cast<float>(uniform(rng));
    if (erased) *erased = {top, left, h, w};
    return out;
  }
  return image;
}

inline Image apply_standard_aug(const Image& image, const StandardAug& a, Rng& rng) {
  switch (a.kind) {
    case AugKind::HFlip: return bernoulli(rng, a.probability) ? hflip(image) : image;
    case AugKind::Rotate:
      if (!bernoulli(rng, a.probability)) return image;
      return rotate(image, uniform(rng, -a.magnitude, a.magnitude));
    case AugKind::Jitter:
      if (!bernoulli(rng, a.probability)) return image;
      return intensity_jitter(image, a.magnitude, a.magnitude, rng);
  }
  return image;
}

struct PolicyOutcome {
  Image image;
  bool erased = false;
};

/// With probability P applies the policy's erasing, then the standard
/// augmentations in order regardless of the erase outcome.
inline PolicyOutcome apply_policy(const Image& image, const BoolGrid* mask, const AugmentationPolicy& policy,
                                  Rng& rng) {
  if (policy.mode == EraseMode::AGE && mask == nullptr)
    throw ConfigError("AGE policy requires a mask for every training image");
  PolicyOutcome out{image, false};
  const bool fire = bernoulli(rng, policy.probability);
  if (fire && policy.mode == EraseMode::AGE) {
    out.image = apply_age(image, *mask, policy.fill_value);
    out.erased = true;
  } else if (fire && policy.mode == EraseMode::RE) {
    out.image = apply_random_erasing(image, policy.re, rng);
    out.erased = true;
  }
  for (const auto& a : policy.standard_augs) out.image = apply_standard_aug(out.image, a, rng);
  return out;
}

}  // namespace agekit
