#pragma once

#include <string>
#include <vector>

#include "dgs/types.hpp"

namespace dgs {

// Row-major RGB image, values nominally in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> data;  // size = height * width * 3

  Image() = default;
  Image(int w, int h) : width(w), height(h), data(static_cast<size_t>(w) * h * 3, 0.0) {}

  double& at(int x, int y, int c) { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }
  double at(int x, int y, int c) const {
    return data[(static_cast<size_t>(y) * width + x) * 3 + c];
  }
  size_t pixel_count() const { return static_cast<size_t>(width) * height; }
  void fill(double r, double g, double b);
};

// 8-bit RGB PNG. Values are clamped to [0, 1] then rounded to the nearest
// of the 256 levels on save.
void save_png(const Image& img, const std::string& path);
Image load_png(const std::string& path);

double mse(const Image& a, const Image& b);  // throws on size mismatch

// 10 log10(1 / mse) for [0,1] images; returns 999.0 when mse == 0.
double psnr(const Image& a, const Image& b);

// Box-filter area average. Both dimensions must divide evenly.
Image downsample_area(const Image& img, int factor);

// Adjoint of downsample_area: spreads each coarse gradient uniformly over
// its factor x factor source block, scaled by 1/factor^2.
Image downsample_area_backward(const Image& grad_coarse, int factor);

// Shift by (dx, dy) pixels with edge replication. Positive dx moves content right.
Image shift_edge_replicate(const Image& img, int dx, int dy);

// Crop of size (w, h) at top-left (x0, y0); throws if out of bounds.
Image crop(const Image& img, int x0, int y0, int w, int h);

// Bilinear resample to an arbitrary size (half-pixel centers, edge clamp).
Image resize_bilinear(const Image& img, int w, int h);

}  // namespace dgs
