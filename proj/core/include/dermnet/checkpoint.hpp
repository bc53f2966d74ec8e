#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dermnet/model.hpp"

namespace dermnet {

/// Loading failures, classified so callers can distinguish a foreign file
/// from a damaged or structurally invalid checkpoint.
class CheckpointError : public std::runtime_error {
 public:
  enum class Kind {
    kNotACheckpoint,      // magic mismatch
    kUnsupportedVersion,  // known magic, unknown version
    kCorrupt,             // CRC mismatch
    kMalformed,           // structure or config does not add up
    kIo,                  // file could not be read or written
  };

  CheckpointError(Kind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Checkpoint bytes, little-endian throughout:
///   magic "DRMRSNT1" | u32 version=1
///   i32 input_size, in_channels, num_layers=3, layer_channels[3],
///   num_classes, u32 skip_mode
///   f32 channel_means[3]
///   per layer: conv w, conv b, bn gamma, bn beta, bn running mean,
///   bn running var, projection w, projection b (raw f32, shapes implied)
///   head w, head b
///   u32 CRC-32 of everything above
std::vector<uint8_t> serialize_model(const Model& model);
Model deserialize_model(std::span<const uint8_t> bytes);

/// Returns the number of bytes written.
uint64_t save_checkpoint(const Model& model, const std::string& path);
/// crc_out, when given, receives the stored CRC (also used as the served
/// model version).
Model load_checkpoint(const std::string& path, uint32_t* crc_out = nullptr);

}  // namespace dermnet
