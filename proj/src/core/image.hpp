#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/error.hpp"

namespace mvi {

// Dense image, values in [0,1], row-major [y][x][c].
struct ImageF {
  int h = 0, w = 0, c = 0;
  std::vector<double> v;

  ImageF() = default;
  ImageF(int h_, int w_, int c_) : h(h_), w(w_), c(c_), v(size_t(h_) * w_ * c_, 0.0) {}

  double& at(int y, int x, int ch) { return v[(size_t(y) * w + x) * c + ch]; }
  double at(int y, int x, int ch) const { return v[(size_t(y) * w + x) * c + ch]; }
  size_t numel() const { return v.size(); }
};

// Binary mask, values strictly 0/1.
struct Mask {
  int h = 0, w = 0;
  std::vector<uint8_t> v;

  Mask() = default;
  Mask(int h_, int w_) : h(h_), w(w_), v(size_t(h_) * w_, 0) {}

  uint8_t& at(int y, int x) { return v[size_t(y) * w + x]; }
  uint8_t at(int y, int x) const { return v[size_t(y) * w + x]; }

  size_t count() const {
    size_t n = 0;
    for (uint8_t b : v) n += b;
    return n;
  }
  double coverage() const { return v.empty() ? 0.0 : double(count()) / double(v.size()); }
  bool empty_mask() const { return count() == 0; }
};

// Dense 2D flow with validity flags; d stores (dx,dy) interleaved.
struct FlowField {
  int h = 0, w = 0;
  std::vector<double> d;
  std::vector<uint8_t> valid;

  FlowField() = default;
  FlowField(int h_, int w_) : h(h_), w(w_), d(size_t(h_) * w_ * 2, 0.0), valid(size_t(h_) * w_, 0) {}

  double& dx(int y, int x) { return d[(size_t(y) * w + x) * 2 + 0]; }
  double& dy(int y, int x) { return d[(size_t(y) * w + x) * 2 + 1]; }
  double dx(int y, int x) const { return d[(size_t(y) * w + x) * 2 + 0]; }
  double dy(int y, int x) const { return d[(size_t(y) * w + x) * 2 + 1]; }
};

// Bilinear sample at continuous image coordinates with pixel centers at
// (ix+0.5, iy+0.5); coordinates outside the image clamp to the edge.
double sample_bilinear(const ImageF& img, double x, double y, int ch);
double sample_bilinear_mask(const Mask& m, double x, double y);

// 8-bit PNG round trips: images quantize with round(v*255), masks map 1 -> 255.
void write_png_rgb(const std::string& path, const ImageF& img);
void write_png_gray(const std::string& path, const Mask& m);
void write_png_gray_image(const std::string& path, const ImageF& img);
ImageF read_png_rgb(const std::string& path);
Mask read_png_mask(const std::string& path);

ImageF quantize8(const ImageF& img);  // the image as it would read back from PNG

}  // namespace mvi
