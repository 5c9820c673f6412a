#pragma once

#include <png.h>

#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "hypernst/tensor.hpp"

namespace hypernst {

// Images are [3,H,W] doubles in [-1,1]; on disk they are 8-bit PNGs.

inline unsigned char to_byte(double x) {
  double v = (x + 1.0) * 0.5 * 255.0;
  if (v < 0.0) v = 0.0;
  if (v > 255.0) v = 255.0;
  return static_cast<unsigned char>(v + 0.5);
}

inline double from_byte(unsigned char b) { return b / 255.0 * 2.0 - 1.0; }

namespace detail {

struct PngCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, PngCloser>;

inline void write_png_bytes(const std::string& path, const unsigned char* data,
                            int h, int w, int channels) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw DataError("cannot open for writing: " + path);
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("png write failed: " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, w, h, 8,
               channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y)
    rows[y] = const_cast<png_bytep>(data + static_cast<std::size_t>(y) * w * channels);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline std::vector<unsigned char> read_png_bytes(const std::string& path,
                                                 int& h, int& w,
                                                 int expect_channels) {
  if (!std::filesystem::exists(path)) throw DataError("missing file: " + path);
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw DataError("cannot open: " + path);
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("png read failed: " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  w = png_get_image_width(png, info);
  h = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (expect_channels == 3) {
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
      png_set_gray_to_rgb(png);
    png_set_strip_alpha(png);
  } else {
    if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
        color == PNG_COLOR_TYPE_PALETTE)
      png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    png_set_strip_alpha(png);
  }
  png_read_update_info(png, info);
  std::vector<unsigned char> data(static_cast<std::size_t>(h) * w * expect_channels);
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y)
    rows[y] = data.data() + static_cast<std::size_t>(y) * w * expect_channels;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  return data;
}

}  // namespace detail

inline void write_png_rgb(const std::string& path, const Tensor& img) {
  if (img.ndim() != 3 || img.shape[0] != 3)
    throw ShapeError("write_png_rgb expects [3,H,W], got " + img.shape_str());
  const int H = img.shape[1], W = img.shape[2];
  std::vector<unsigned char> bytes(static_cast<std::size_t>(H) * W * 3);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c)
        bytes[(static_cast<std::size_t>(y) * W + x) * 3 + c] =
            to_byte(img.at(c, y, x));
  detail::write_png_bytes(path, bytes.data(), H, W, 3);
}

inline Tensor read_png_rgb(const std::string& path) {
  int h = 0, w = 0;
  auto bytes = detail::read_png_bytes(path, h, w, 3);
  Tensor img({3, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) =
            from_byte(bytes[(static_cast<std::size_t>(y) * w + x) * 3 + c]);
  return img;
}

// single-channel PNG whose raw pixel value is the class id
inline void write_png_gray(const std::string& path,
                           const std::vector<std::uint8_t>& values, int h, int w) {
  detail::write_png_bytes(path, values.data(), h, w, 1);
}

inline std::vector<std::uint8_t> read_png_gray(const std::string& path, int& h,
                                               int& w) {
  auto bytes = detail::read_png_bytes(path, h, w, 1);
  return std::vector<std::uint8_t>(bytes.begin(), bytes.end());
}

// horizontal strip of equally sized frames
inline Tensor hstack_images(const std::vector<Tensor>& frames) {
  if (frames.empty()) throw DataError("hstack_images: no frames");
  const int H = frames[0].shape[1], W = frames[0].shape[2];
  Tensor out({3, H, W * static_cast<int>(frames.size())});
  for (std::size_t f = 0; f < frames.size(); ++f) {
    if (!frames[f].same_shape(frames[0]))
      throw ShapeError("hstack_images: frame size mismatch");
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
          out.at(c, y, static_cast<int>(f) * W + x) = frames[f].at(c, y, x);
  }
  return out;
}

}  // namespace hypernst
