#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace agekit {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

/// Single-channel image, row-major, intensities nominally in [0,1].
using Image = Mat<float>;
/// Boolean pixel or cell grid.
using BoolGrid = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Error hierarchy. The CLI maps UserError subclasses to exit code 2.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UserError : Error {
  using Error::Error;
};
struct ConfigError : UserError {
  using UserError::UserError;
};
struct ValidationError : UserError {
  using UserError::UserError;
};
struct IoError : UserError {
  using UserError::UserError;
};
struct ShapeError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Density labels

enum class Density : int { A = 0, B = 1, C = 2, D = 3 };
inline constexpr int kNumClasses = 4;
inline constexpr std::array<Density, 4> kAllDensities{Density::A, Density::B, Density::C, Density::D};

inline char density_char(Density d) { return static_cast<char>('A' + static_cast<int>(d)); }
inline std::string density_name(Density d) { return std::string(1, density_char(d)); }
inline int density_index(Density d) { return static_cast<int>(d); }

inline std::optional<Density> parse_density(std::string_view s) {
  if (s.size() != 1) return std::nullopt;
  switch (s[0]) {
    case 'A': return Density::A;
    case 'B': return Density::B;
    case 'C': return Density::C;
    case 'D': return Density::D;
    default: return std::nullopt;
  }
}

// ---------------------------------------------------------------------------
// Seeded streams

using Rng = std::mt19937_64;

/// FNV-1a over bytes; stable across runs and platforms.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 14695981039346656037ull) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

/// Independent stream keyed by (seed, epoch, sample id).
inline Rng stream_for(std::uint64_t seed, std::uint64_t epoch, std::string_view sample_id) {
  const std::uint64_t id_hash = fnv1a(sample_id);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32),
                    static_cast<std::uint32_t>(id_hash), static_cast<std::uint32_t>(id_hash >> 32)};
  return Rng(seq);
}

inline Rng stream_for(std::uint64_t seed, std::uint64_t epoch = 0) { return stream_for(seed, epoch, ""); }

inline double uniform(Rng& rng, double lo = 0.0, double hi = 1.0) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline bool bernoulli(Rng& rng, double p) {
  if (p <= 0.0) return false;
  if (p >= 1.0) return true;
  return uniform(rng) < p;
}

template <typename T>
bool all_finite(const Mat<T>& m) {
  return m.allFinite();
}

}  // namespace agekit
