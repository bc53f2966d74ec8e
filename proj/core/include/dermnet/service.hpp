#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dermnet/model.hpp"

namespace dermnet {

std::string base64_encode(std::span<const uint8_t> bytes);
/// Strict decode; throws std::invalid_argument on anything outside the
/// alphabet or bad padding.
std::vector<uint8_t> base64_decode(std::string_view text);

/// DERM_MAX_BODY_BYTES when set to a positive integer, otherwise 10 MiB.
size_t default_max_body_bytes();

struct PredictionOutcome {
  float probability_melanoma = 0.0f;
  std::string label;               // "melanoma" when probability >= 0.5, else "non_melanoma"
  std::string heatmap_png_base64;  // overlay PNG, only when requested
};

/// Decode -> resize to the model input -> normalize with the checkpoint's
/// channel means -> predict. With cam set, also renders the Grad-CAM overlay
/// for the predicted class. Throws ImageError when the body is not an image.
PredictionOutcome predict_from_bytes(const Model& model, std::span<const uint8_t> body, bool cam);

/// HTTP front end over one immutable model.
///   GET  /healthz          -> 200 "ok"
///   POST /predict?cam=0|1  -> prediction JSON; 400 undecodable body,
///                             413 oversized body, 500 internal failure
class InferenceServer {
 public:
  InferenceServer(const std::string& checkpoint_path, size_t max_body_bytes);
  ~InferenceServer();
  InferenceServer(const InferenceServer&) = delete;
  InferenceServer& operator=(const InferenceServer&) = delete;

  const Model& model() const;
  /// Checkpoint CRC as 8 hex digits; reported in every prediction.
  const std::string& model_version() const;

  /// Serves until stop(); false when the address cannot be bound.
  bool listen(const std::string& host, int port);
  /// Binds an ephemeral port and serves on a background thread; returns the
  /// port. Intended for in-process tests.
  int start_background(const std::string& host);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace dermnet
