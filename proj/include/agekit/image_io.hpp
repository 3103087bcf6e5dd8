#pragma once

// Lossless grayscale image I/O: binary/ASCII PGM natively, PNG through libpng.
// Intensities are mapped to [0,1] by the format's maximum value.

#include "agekit/core.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <vector>

namespace agekit {

/// 8-bit RGB raster used for overlays and panels.
struct RgbImage {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> data;  // rows*cols*3

  RgbImage() = default;
  RgbImage(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c * 3, 0) {}
  std::uint8_t* at(int r, int c) { return &data[(static_cast<std::size_t>(r) * cols + c) * 3]; }
  const std::uint8_t* at(int r, int c) const { return &data[(static_cast<std::size_t>(r) * cols + c) * 3]; }
};

namespace detail {

inline std::string lower_ext(const std::filesystem::path& p) {
  auto e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e;
}

inline void skip_pnm_space(std::istream& in) {
  for (;;) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      return;
    }
  }
}

inline int read_pnm_int(std::istream& in) {
  skip_pnm_space(in);
  int v = -1;
  in >> v;
  if (!in) throw IoError("malformed PNM header");
  return v;
}

struct PngCloser {
  png_structp png = nullptr;
  png_infop info = nullptr;
  bool writing = false;
  ~PngCloser() {
    if (!png) return;
    if (writing)
      png_destroy_write_struct(&png, info ? &info : nullptr);
    else
      png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
  }
};

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace detail

inline Image read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image: " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P5" && magic != "P2") throw IoError("unsupported PNM type in " + path.string());
  const int w = detail::read_pnm_int(in);
  const int h = detail::read_pnm_int(in);
  const int maxval = detail::read_pnm_int(in);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) throw IoError("bad PGM header in " + path.string());
  Image img(h, w);
  if (magic == "P2") {
    for (int i = 0; i < w * h; ++i) img.data()[i] = static_cast<float>(detail::read_pnm_int(in)) / maxval;
    return img;
  }
  in.get();  // single whitespace after maxval
  const bool wide = maxval > 255;
  std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h * (wide ? 2 : 1));
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!in) throw IoError("truncated PGM data in " + path.string());
  for (int i = 0; i < w * h; ++i) {
    const unsigned v = wide ? (buf[2 * i] << 8 | buf[2 * i + 1]) : buf[i];
    img.data()[i] = static_cast<float>(v) / maxval;
  }
  return img;
}

inline std::uint8_t to_u8(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

inline void write_pgm(const std::filesystem::path& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image: " + path.string());
  out << "P5\n" << img.cols() << ' ' << img.rows() << "\n255\n";
  std::vector<unsigned char> buf(static_cast<std::size_t>(img.size()));
  for (Eigen::Index i = 0; i < img.size(); ++i) buf[i] = to_u8(img.data()[i]);
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

inline Image read_png(const std::filesystem::path& path) {
  detail::FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw IoError("cannot open image: " + path.string());
  detail::PngCloser guard;
  guard.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!guard.png) throw IoError("libpng init failed");
  guard.info = png_create_info_struct(guard.png);
  if (!guard.info) throw IoError("libpng init failed");
  if (setjmp(png_jmpbuf(guard.png))) throw IoError("corrupt PNG: " + path.string());
  png_init_io(guard.png, fp.get());
  png_read_info(guard.png, guard.info);

  const auto w = static_cast<int>(png_get_image_width(guard.png, guard.info));
  const auto h = static_cast<int>(png_get_image_height(guard.png, guard.info));
  const int depth = png_get_bit_depth(guard.png, guard.info);
  const int color = png_get_color_type(guard.png, guard.info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(guard.png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(guard.png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_PALETTE)
    png_set_rgb_to_gray_fixed(guard.png, 1, -1, -1);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(guard.png);
  if (depth == 16) png_set_swap(guard.png);  // host little-endian
  png_read_update_info(guard.png, guard.info);

  const bool wide = png_get_bit_depth(guard.png, guard.info) == 16;
  const std::size_t rowbytes = png_get_rowbytes(guard.png, guard.info);
  std::vector<unsigned char> buf(rowbytes * h);
  std::vector<png_bytep> rows(h);
  for (int r = 0; r < h; ++r) rows[r] = buf.data() + r * rowbytes;
  png_read_image(guard.png, rows.data());

  Image img(h, w);
  const float maxval = wide ? 65535.0f : 255.0f;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      unsigned v;
      if (wide) {
        std::uint16_t s;
        std::memcpy(&s, rows[r] + 2 * c, 2);
        v = s;
      } else {
        v = rows[r][c];
      }
      img(r, c) = static_cast<float>(v) / maxval;
    }
  }
  return img;
}

namespace detail {

inline void write_png_raw(const std::filesystem::path& path, int rows, int cols, int color_type,
                          const std::uint8_t* data, int channels) {
  detail::FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw IoError("cannot write image: " + path.string());
  detail::PngCloser guard;
  guard.writing = true;
  guard.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!guard.png) throw IoError("libpng init failed");
  guard.info = png_create_info_struct(guard.png);
  if (!guard.info) throw IoError("libpng init failed");
  if (setjmp(png_jmpbuf(guard.png))) throw IoError("PNG write failed: " + path.string());
  png_init_io(guard.png, fp.get());
  png_set_IHDR(guard.png, guard.info, cols, rows, 8, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(guard.png, guard.info);
  for (int r = 0; r < rows; ++r)
    png_write_row(guard.png, const_cast<png_bytep>(data + static_cast<std::size_t>(r) * cols * channels));
  png_write_end(guard.png, nullptr);
}

}  // namespace detail

inline void write_png(const std::filesystem::path& path, const Image& img) {
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(img.size()));
  for (Eigen::Index i = 0; i < img.size(); ++i) buf[i] = to_u8(img.data()[i]);
  detail::write_png_raw(path, static_cast<int>(img.rows()), static_cast<int>(img.cols()), PNG_COLOR_TYPE_GRAY,
                        buf.data(), 1);
}

inline void write_png(const std::filesystem::path& path, const RgbImage& img) {
  detail::write_png_raw(path, img.rows, img.cols, PNG_COLOR_TYPE_RGB, img.data.data(), 3);
}

/// Dispatches on extension: .png, or .pgm/.pnm.
inline Image read_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("image not found: " + path.string());
  const auto ext = detail::lower_ext(path);
  if (ext == ".png") return read_png(path);
  if (ext == ".pgm" || ext == ".pnm") return read_pgm(path);
  throw IoError("unsupported image format: " + path.string());
}

inline void write_image(const std::filesystem::path& path, const Image& img) {
  const auto ext = detail::lower_ext(path);
  if (ext == ".png")
    write_png(path, img);
  else if (ext == ".pgm" || ext == ".pnm")
    write_pgm(path, img);
  else
    throw IoError("unsupported image format: " + path.string());
}

}  // namespace agekit
