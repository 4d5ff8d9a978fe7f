#include "core/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

namespace mvi {

namespace {

double clamp01(double v) { return std::max(0.0, std::min(1.0, v)); }

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

uint8_t to_u8(double v) { return uint8_t(std::lround(clamp01(v) * 255.0)); }

void write_png_impl(const std::string& path, int h, int w, int channels,
                    const std::vector<uint8_t>& bytes) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  require(fp != nullptr, ErrKind::io, "cannot open for writing: " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  require(png != nullptr, ErrKind::io, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail(ErrKind::io, "png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrKind::io, "libpng write error: " + path);
  }
  png_init_io(png, fp.get());
  const int color = channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
  png_set_IHDR(png, info, w, h, 8, color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y)
    rows[y] = const_cast<png_bytep>(bytes.data() + size_t(y) * w * channels);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void read_png_impl(const std::string& path, int& h, int& w, int& channels,
                   std::vector<uint8_t>& bytes) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  require(fp != nullptr, ErrKind::io, "cannot open for reading: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  require(png != nullptr, ErrKind::io, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail(ErrKind::io, "png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrKind::io, "libpng read error: " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  w = int(png_get_image_width(png, info));
  h = int(png_get_image_height(png, info));
  channels = int(png_get_channels(png, info));
  require(channels == 1 || channels == 3, ErrKind::io, "unsupported channel count in " + path);

  bytes.resize(size_t(h) * w * channels);
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y) rows[y] = bytes.data() + size_t(y) * w * channels;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
}

}  // namespace

double sample_bilinear(const ImageF& img, double x, double y, int ch) {
  const double u = x - 0.5;
  const double v = y - 0.5;
  const double uc = std::clamp(u, 0.0, double(img.w - 1));
  const double vc = std::clamp(v, 0.0, double(img.h - 1));
  const int x0 = std::min(int(std::floor(uc)), img.w - 1);
  const int y0 = std::min(int(std::floor(vc)), img.h - 1);
  const int x1 = std::min(x0 + 1, img.w - 1);
  const int y1 = std::min(y0 + 1, img.h - 1);
  const double fx = uc - x0;
  const double fy = vc - y0;
  const double a = img.at(y0, x0, ch) * (1 - fx) + img.at(y0, x1, ch) * fx;
  const double b = img.at(y1, x0, ch) * (1 - fx) + img.at(y1, x1, ch) * fx;
  return a * (1 - fy) + b * fy;
}

double sample_bilinear_mask(const Mask& m, double x, double y) {
  const double u = std::clamp(x - 0.5, 0.0, double(m.w - 1));
  const double v = std::clamp(y - 0.5, 0.0, double(m.h - 1));
  const int x0 = std::min(int(std::floor(u)), m.w - 1);
  const int y0 = std::min(int(std::floor(v)), m.h - 1);
  const int x1 = std::min(x0 + 1, m.w - 1);
  const int y1 = std::min(y0 + 1, m.h - 1);
  const double fx = u - x0;
  const double fy = v - y0;
  const double a = m.at(y0, x0) * (1 - fx) + m.at(y0, x1) * fx;
  const double b = m.at(y1, x0) * (1 - fx) + m.at(y1, x1) * fx;
  return a * (1 - fy) + b * fy;
}

void write_png_rgb(const std::string& path, const ImageF& img) {
  require_arg(img.c == 3, "write_png_rgb expects 3 channels");
  std::vector<uint8_t> bytes(img.numel());
  for (size_t i = 0; i < bytes.size(); ++i) bytes[i] = to_u8(img.v[i]);
  write_png_impl(path, img.h, img.w, 3, bytes);
}

void write_png_gray(const std::string& path, const Mask& m) {
  std::vector<uint8_t> bytes(m.v.size());
  for (size_t i = 0; i < bytes.size(); ++i) bytes[i] = m.v[i] ? 255 : 0;
  write_png_impl(path, m.h, m.w, 1, bytes);
}

void write_png_gray_image(const std::string& path, const ImageF& img) {
  require_arg(img.c == 1, "write_png_gray_image expects 1 channel");
  std::vector<uint8_t> bytes(img.numel());
  for (size_t i = 0; i < bytes.size(); ++i) bytes[i] = to_u8(img.v[i]);
  write_png_impl(path, img.h, img.w, 1, bytes);
}

ImageF read_png_rgb(const std::string& path) {
  int h, w, c;
  std::vector<uint8_t> bytes;
  read_png_impl(path, h, w, c, bytes);
  ImageF img(h, w, 3);
  if (c == 3) {
    for (size_t i = 0; i < bytes.size(); ++i) img.v[i] = bytes[i] / 255.0;
  } else {
    for (size_t i = 0; i < bytes.size(); ++i) {
      img.v[3 * i + 0] = img.v[3 * i + 1] = img.v[3 * i + 2] = bytes[i] / 255.0;
    }
  }
  return img;
}

Mask read_png_mask(const std::string& path) {
  int h, w, c;
  std::vector<uint8_t> bytes;
  read_png_impl(path, h, w, c, bytes);
  Mask m(h, w);
  for (size_t i = 0; i < m.v.size(); ++i) {
    const uint8_t b = bytes[i * c];
    m.v[i] = b >= 128 ? 1 : 0;
  }
  return m;
}

ImageF quantize8(const ImageF& img) {
  ImageF out = img;
  for (double& x : out.v) x = to_u8(x) / 255.0;
  return out;
}

}  // namespace mvi
