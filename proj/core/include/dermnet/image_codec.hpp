#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dermnet/image.hpp"

namespace dermnet {

/// Thrown when image bytes cannot be decoded (unknown format, truncated or
/// corrupt stream) or a file cannot be read or written.
class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Decodes PNG or JPEG bytes (sniffed by signature) into 8-bit RGB.
/// Grayscale, palette, 16-bit and alpha inputs are converted.
Image decode_image(std::span<const uint8_t> bytes);

/// Reads and decodes a .png or .jpg/.jpeg file.
Image load_image(const std::string& path);

std::vector<uint8_t> encode_png(const Image& img);
void save_png(const Image& img, const std::string& path);

std::vector<uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, std::span<const uint8_t> bytes);

}  // namespace dermnet
