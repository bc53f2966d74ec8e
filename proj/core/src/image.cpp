#include "dermnet/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace dermnet {

namespace {

void check_dims(int width, int height) {
  if (width <= 0 || height <= 0) {
    throw std::invalid_argument("image dimensions must be positive, got " +
                                std::to_string(width) + "x" + std::to_string(height));
  }
}

}  // namespace

Image Image::blank(int width, int height, uint8_t r, uint8_t g, uint8_t b) {
  check_dims(width, height);
  Image img;
  img.width = width;
  img.height = height;
  img.pixels.resize(static_cast<size_t>(width) * static_cast<size_t>(height) * 3);
  for (size_t i = 0; i < img.pixels.size(); i += 3) {
    img.pixels[i] = r;
    img.pixels[i + 1] = g;
    img.pixels[i + 2] = b;
  }
  return img;
}

void resize_bilinear_plane(const float* src, int src_h, int src_w, float* dst, int dst_h,
                           int dst_w) {
  float scale_y = static_cast<float>(src_h) / static_cast<float>(dst_h);
  float scale_x = static_cast<float>(src_w) / static_cast<float>(dst_w);
  for (int y = 0; y < dst_h; ++y) {
    float sy = (static_cast<float>(y) + 0.5f) * scale_y - 0.5f;
    sy = std::clamp(sy, 0.0f, static_cast<float>(src_h - 1));
    int y0 = static_cast<int>(sy);
    int y1 = std::min(y0 + 1, src_h - 1);
    float fy = sy - static_cast<float>(y0);
    for (int x = 0; x < dst_w; ++x) {
      float sx = (static_cast<float>(x) + 0.5f) * scale_x - 0.5f;
      sx = std::clamp(sx, 0.0f, static_cast<float>(src_w - 1));
      int x0 = static_cast<int>(sx);
      int x1 = std::min(x0 + 1, src_w - 1);
      float fx = sx - static_cast<float>(x0);
      float top = src[y0 * src_w + x0] * (1.0f - fx) + src[y0 * src_w + x1] * fx;
      float bot = src[y1 * src_w + x0] * (1.0f - fx) + src[y1 * src_w + x1] * fx;
      dst[y * dst_w + x] = top * (1.0f - fy) + bot * fy;
    }
  }
}

Image resize_bilinear(const Image& img, int out_width, int out_height) {
  if (img.width < 2 || img.height < 2) {
    throw std::invalid_argument("resize source must be at least 2x2, got " +
                                std::to_string(img.width) + "x" + std::to_string(img.height));
  }
  check_dims(out_width, out_height);
  if (out_width == img.width && out_height == img.height) return img;
  Image out;
  out.width = out_width;
  out.height = out_height;
  out.pixels.resize(static_cast<size_t>(out_width) * static_cast<size_t>(out_height) * 3);
  std::vector<float> src_plane(static_cast<size_t>(img.width) * static_cast<size_t>(img.height));
  std::vector<float> dst_plane(static_cast<size_t>(out_width) * static_cast<size_t>(out_height));
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        src_plane[static_cast<size_t>(y * img.width + x)] = static_cast<float>(img.at(y, x, c));
      }
    }
    resize_bilinear_plane(src_plane.data(), img.height, img.width, dst_plane.data(), out_height,
                          out_width);
    for (int y = 0; y < out_height; ++y) {
      for (int x = 0; x < out_width; ++x) {
        float v = std::clamp(dst_plane[static_cast<size_t>(y * out_width + x)], 0.0f, 255.0f);
        out.at(y, x, c) = static_cast<uint8_t>(std::lround(v));
      }
    }
  }
  return out;
}

Image hflip(const Image& img) {
  Image out = img;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y, img.width - 1 - x, c);
    }
  }
  return out;
}

Image vflip(const Image& img) {
  Image out = img;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(img.height - 1 - y, x, c);
    }
  }
  return out;
}

Image rot90(const Image& img, int k) {
  k = ((k % 4) + 4) % 4;
  if (k == 0) return img;
  if (k % 2 == 1 && img.width != img.height) {
    throw std::invalid_argument("90-degree rotation requires a square image, got " +
                                std::to_string(img.width) + "x" + std::to_string(img.height));
  }
  Image out;
  out.width = k % 2 == 0 ? img.width : img.height;
  out.height = k % 2 == 0 ? img.height : img.width;
  out.pixels.resize(img.pixels.size());
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      // Counter-clockwise: (y, x) lands on (width-1-x, y) after one turn.
      int ny = 0;
      int nx = 0;
      switch (k) {
        case 1:
          ny = img.width - 1 - x;
          nx = y;
          break;
        case 2:
          ny = img.height - 1 - y;
          nx = img.width - 1 - x;
          break;
        default:
          ny = x;
          nx = img.height - 1 - y;
          break;
      }
      for (int c = 0; c < 3; ++c) out.at(ny, nx, c) = img.at(y, x, c);
    }
  }
  return out;
}

Image augment(const Image& img, Rng& rng) {
  if (img.width != img.height) {
    throw std::invalid_argument("augmentation requires a square image, got " +
                                std::to_string(img.width) + "x" + std::to_string(img.height));
  }
  bool do_hflip = rng.coin();
  bool do_vflip = rng.coin();
  int k = static_cast<int>(rng.below(4));
  Image out = img;
  if (do_hflip) out = hflip(out);
  if (do_vflip) out = vflip(out);
  if (k != 0) out = rot90(out, k);
  return out;
}

}  // namespace dermnet
