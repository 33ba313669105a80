#pragma once

#include <png.h>

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "anchorcorr/tensor.hpp"

namespace anchorcorr {

// Images are [3, H, W] doubles in [0,1]. 8-bit files decode as byte/255;
// grayscale is replicated across channels, alpha is dropped.

namespace detail {

struct PngReadCloser {
  png_structp png = nullptr;
  png_infop info = nullptr;
  std::FILE* file = nullptr;
  ~PngReadCloser() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    if (file) std::fclose(file);
  }
};

struct PngWriteCloser {
  png_structp png = nullptr;
  png_infop info = nullptr;
  std::FILE* file = nullptr;
  ~PngWriteCloser() {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    if (file) std::fclose(file);
  }
};

inline Tensor read_png(const std::string& path) {
  PngReadCloser ctx;
  ctx.file = std::fopen(path.c_str(), "rb");
  if (!ctx.file) throw std::runtime_error("cannot open image: " + path);

  unsigned char sig[8];
  if (std::fread(sig, 1, 8, ctx.file) != 8 || png_sig_cmp(sig, 0, 8))
    throw std::runtime_error("not a PNG file: " + path);

  ctx.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  ctx.info = png_create_info_struct(ctx.png);
  if (!ctx.png || !ctx.info) throw std::runtime_error("png init failed");
  if (setjmp(png_jmpbuf(ctx.png))) throw std::runtime_error("png decode failed: " + path);

  png_init_io(ctx.png, ctx.file);
  png_set_sig_bytes(ctx.png, 8);
  png_read_info(ctx.png, ctx.info);

  png_set_strip_16(ctx.png);
  png_set_strip_alpha(ctx.png);
  png_set_palette_to_rgb(ctx.png);
  png_set_expand_gray_1_2_4_to_8(ctx.png);
  if (png_get_color_type(ctx.png, ctx.info) == PNG_COLOR_TYPE_GRAY ||
      png_get_color_type(ctx.png, ctx.info) == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(ctx.png);
  png_read_update_info(ctx.png, ctx.info);

  const int h = static_cast<int>(png_get_image_height(ctx.png, ctx.info));
  const int w = static_cast<int>(png_get_image_width(ctx.png, ctx.info));
  std::vector<unsigned char> row(static_cast<std::size_t>(w) * 3);

  Tensor img = Tensor::zeros({3, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int r = 0; r < h; ++r) {
    png_read_row(ctx.png, row.data(), nullptr);
    for (int c = 0; c < w; ++c)
      for (int ch = 0; ch < 3; ++ch)
        img.values()[ch * plane + static_cast<std::size_t>(r) * w + c] =
            row[static_cast<std::size_t>(c) * 3 + ch] / 255.0;
  }
  return img;
}

inline void write_png(const std::string& path, const Tensor& img) {
  PngWriteCloser ctx;
  ctx.file = std::fopen(path.c_str(), "wb");
  if (!ctx.file) throw std::runtime_error("cannot write image: " + path);
  ctx.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  ctx.info = png_create_info_struct(ctx.png);
  if (!ctx.png || !ctx.info) throw std::runtime_error("png init failed");
  if (setjmp(png_jmpbuf(ctx.png))) throw std::runtime_error("png encode failed: " + path);

  const int h = img.dim(1), w = img.dim(2);
  png_init_io(ctx.png, ctx.file);
  png_set_IHDR(ctx.png, ctx.info, w, h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(ctx.png, ctx.info);

  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<unsigned char> row(static_cast<std::size_t>(w) * 3);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c)
      for (int ch = 0; ch < 3; ++ch) {
        const double v = img.values()[ch * plane + static_cast<std::size_t>(r) * w + c];
        row[static_cast<std::size_t>(c) * 3 + ch] =
            static_cast<unsigned char>(std::lround(clamp01(v) * 255.0));
      }
    png_write_row(ctx.png, row.data());
  }
  png_write_end(ctx.png, nullptr);
}

inline void skip_ppm_whitespace(std::istream& in) {
  for (;;) {
    const int c = in.peek();
    if (c == '#') {
      std::string comment;
      std::getline(in, comment);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      return;
    }
  }
}

inline Tensor read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image: " + path);
  std::string magic;
  in >> magic;
  if (magic != "P6") throw std::runtime_error("not a binary PPM: " + path);
  skip_ppm_whitespace(in);
  int w = 0, h = 0, maxval = 0;
  in >> w;
  skip_ppm_whitespace(in);
  in >> h;
  skip_ppm_whitespace(in);
  in >> maxval;
  if (w < 1 || h < 1 || maxval != 255)
    throw std::runtime_error("unsupported PPM header in " + path);
  in.get();  // the single whitespace after maxval

  std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * h * 3);
  if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size())))
    throw std::runtime_error("truncated PPM: " + path);

  Tensor img = Tensor::zeros({3, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      for (int ch = 0; ch < 3; ++ch)
        img.values()[ch * plane + static_cast<std::size_t>(r) * w + c] =
            bytes[(static_cast<std::size_t>(r) * w + c) * 3 + ch] / 255.0;
  return img;
}

inline void write_ppm(const std::string& path, const Tensor& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write image: " + path);
  const int h = img.dim(1), w = img.dim(2);
  out << "P6\n" << w << " " << h << "\n255\n";
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * h * 3);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      for (int ch = 0; ch < 3; ++ch)
        bytes[(static_cast<std::size_t>(r) * w + c) * 3 + ch] = static_cast<unsigned char>(
            std::lround(clamp01(img.values()[ch * plane + static_cast<std::size_t>(r) * w + c]) *
                        255.0));
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

}  // namespace detail

inline bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// dispatches on content: PNG signature, then PPM magic
inline Tensor read_image(const std::string& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw std::runtime_error("cannot open image: " + path);
  unsigned char sig[8] = {};
  probe.read(reinterpret_cast<char*>(sig), 8);
  probe.close();
  if (!png_sig_cmp(sig, 0, 8)) return detail::read_png(path);
  if (sig[0] == 'P' && sig[1] == '6') return detail::read_ppm(path);
  throw std::runtime_error("unsupported image format (need PNG or binary PPM): " + path);
}

// dispatches on extension; defaults to PNG
inline void write_image(const std::string& path, const Tensor& img) {
  if (img.rank() != 3 || img.dim(0) != 3) throw ShapeError("write_image: need [3,H,W]");
  if (ends_with(path, ".ppm"))
    detail::write_ppm(path, img);
  else
    detail::write_png(path, img);
}

}  // namespace anchorcorr
