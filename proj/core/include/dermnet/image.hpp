#pragma once

#include <cstdint>
#include <vector>

#include "dermnet/rng.hpp"

namespace dermnet {

/// 8-bit RGB image, row-major, interleaved channels.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pixels;  // height * width * 3

  static Image blank(int width, int height, uint8_t r = 0, uint8_t g = 0, uint8_t b = 0);

  uint8_t at(int y, int x, int c) const {
    return pixels[static_cast<size_t>((y * width + x) * 3 + c)];
  }
  uint8_t& at(int y, int x, int c) {
    return pixels[static_cast<size_t>((y * width + x) * 3 + c)];
  }
};

/// Bilinear resample of one float plane with half-pixel centers:
/// src_x = (dst_x + 0.5) * src_w / dst_w - 0.5, clamped to the border.
void resize_bilinear_plane(const float* src, int src_h, int src_w, float* dst, int dst_h,
                           int dst_w);

/// Bilinear resize; same-size resize reproduces the input exactly.
Image resize_bilinear(const Image& img, int out_width, int out_height);

Image hflip(const Image& img);
Image vflip(const Image& img);
/// Counter-clockwise rotation by k * 90 degrees; square images only for odd k.
Image rot90(const Image& img, int k);

/// Training-time augmentation: horizontal flip with probability 1/2, vertical
/// flip with probability 1/2, then rotation by k * 90 degrees with k drawn
/// uniformly from {0, 1, 2, 3}. Draw order is fixed so a seeded rng gives a
/// reproducible result.
Image augment(const Image& img, Rng& rng);

}  // namespace dermnet
