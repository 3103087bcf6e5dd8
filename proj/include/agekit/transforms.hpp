#pragma once

// Pixel-level image transforms shared by the pretraining and downstream
// augmentation pipelines.

#include "agekit/core.hpp"

#include <cmath>
#include <numbers>
#include <vector>

namespace agekit {

/// Separable Gaussian blur with reflected borders.
inline Image gaussian_blur(const Image& img, double sigma) {
  if (sigma <= 0) return img;
  const int radius = std::max(1, static_cast<int>(std::ceil(3 * sigma)));
  std::vector<float> k(2 * radius + 1);
  float sum = 0;
  for (int i = -radius; i <= radius; ++i) sum += k[i + radius] = static_cast<float>(std::exp(-0.5 * i * i / (sigma * sigma)));
  for (auto& v : k) v /= sum;
  const int rows = static_cast<int>(img.rows()), cols = static_cast<int>(img.cols());
  auto reflect = [](int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
    return i;
  };
  Image tmp(rows, cols), out(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      float acc = 0;
      for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * img(r, reflect(c + i, cols));
      tmp(r, c) = acc;
    }
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      float acc = 0;
      for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * tmp(reflect(r + i, rows), c);
      out(r, c) = acc;
    }
  return out;
}

/// Brightness and contrast jitter: factors uniform in [1-s, 1+s].
inline Image intensity_jitter(const Image& img, double brightness, double contrast, Rng& rng) {
  const float b = static_cast<float>(uniform(rng, 1 - brightness, 1 + brightness));
  const float c = static_cast<float>(uniform(rng, 1 - contrast, 1 + contrast));
  const float mean = img.mean();
  return (((img.array() - mean) * c + mean) * b).cwiseMax(0.0f).cwiseMin(1.0f).matrix();
}

inline Image solarize(const Image& img, float threshold = 0.5f) {
  return img.unaryExpr([threshold](float v) { return v >= threshold ? 1.0f - v : v; });
}

inline Image hflip(const Image& img) { return img.rowwise().reverse(); }

/// Rotation about the image center by `degrees`, bilinear, `fill` outside.
inline Image rotate(const Image& img, double degrees, float fill = 0.0f) {
  const double th = degrees * std::numbers::pi / 180.0, cs = std::cos(th), sn = std::sin(th);
  const int rows = static_cast<int>(img.rows()), cols = static_cast<int>(img.cols());
  const double cy = 0.5 * rows, cx = 0.5 * cols;
  Image out(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      // Inverse map from output to source coordinates (pixel centers).
      const double dy = r + 0.5 - cy, dx = c + 0.5 - cx;
      const double sx = cs * dx + sn * dy + cx - 0.5, sy = -sn * dx + cs * dy + cy - 0.5;
      const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
      const double fx = sx - x0, fy = sy - y0;
      auto at = [&](int y, int x) { return y < 0 || y >= rows || x < 0 || x >= cols ? fill : img(y, x); };
      out(r, c) = static_cast<float>((1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
                                     fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1)));
    }
  return out;
}

}  // namespace agekit
