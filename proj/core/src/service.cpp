#include "dermnet/service.hpp"

#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "dermnet/checkpoint.hpp"
#include "dermnet/dataset.hpp"
#include "dermnet/gradcam.hpp"
#include "dermnet/image_codec.hpp"

namespace dermnet {

namespace {

constexpr char kB64Alphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

}  // namespace

std::string base64_encode(std::span<const uint8_t> bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  size_t i = 0;
  for (; i + 3 <= bytes.size(); i += 3) {
    uint32_t v = static_cast<uint32_t>(bytes[i]) << 16 | static_cast<uint32_t>(bytes[i + 1]) << 8 |
                 bytes[i + 2];
    out.push_back(kB64Alphabet[(v >> 18) & 0x3f]);
    out.push_back(kB64Alphabet[(v >> 12) & 0x3f]);
    out.push_back(kB64Alphabet[(v >> 6) & 0x3f]);
    out.push_back(kB64Alphabet[v & 0x3f]);
  }
  size_t rest = bytes.size() - i;
  if (rest == 1) {
    uint32_t v = static_cast<uint32_t>(bytes[i]) << 16;
    out.push_back(kB64Alphabet[(v >> 18) & 0x3f]);
    out.push_back(kB64Alphabet[(v >> 12) & 0x3f]);
    out.push_back('=');
    out.push_back('=');
  } else if (rest == 2) {
    uint32_t v = static_cast<uint32_t>(bytes[i]) << 16 | static_cast<uint32_t>(bytes[i + 1]) << 8;
    out.push_back(kB64Alphabet[(v >> 18) & 0x3f]);
    out.push_back(kB64Alphabet[(v >> 12) & 0x3f]);
    out.push_back(kB64Alphabet[(v >> 6) & 0x3f]);
    out.push_back('=');
  }
  return out;
}

std::vector<uint8_t> base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw std::invalid_argument("base64 length must be a multiple of 4");
  auto value_of = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  std::vector<uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  for (size_t i = 0; i < text.size(); i += 4) {
    int pad = 0;
    uint32_t v = 0;
    for (size_t k = 0; k < 4; ++k) {
      char c = text[i + k];
      if (c == '=') {
        if (i + 4 != text.size() || k < 2) throw std::invalid_argument("bad base64 padding");
        ++pad;
        v <<= 6;
        continue;
      }
      if (pad > 0) throw std::invalid_argument("bad base64 padding");
      int d = value_of(c);
      if (d < 0) throw std::invalid_argument("bad base64 character");
      v = v << 6 | static_cast<uint32_t>(d);
    }
    out.push_back(static_cast<uint8_t>((v >> 16) & 0xff));
    if (pad < 2) out.push_back(static_cast<uint8_t>((v >> 8) & 0xff));
    if (pad < 1) out.push_back(static_cast<uint8_t>(v & 0xff));
  }
  return out;
}

size_t default_max_body_bytes() {
  constexpr size_t kDefault = 10 * 1024 * 1024;
  const char* env = std::getenv("DERM_MAX_BODY_BYTES");
  if (env == nullptr || *env == '\0') return kDefault;
  char* end = nullptr;
  unsigned long long parsed = std::strtoull(env, &end, 10);
  if (end == env || *end != '\0' || parsed == 0) return kDefault;
  return static_cast<size_t>(parsed);
}

PredictionOutcome predict_from_bytes(const Model& model, std::span<const uint8_t> body, bool cam) {
  Image decoded = decode_image(body);
  int s = model.config.input_size;
  Image resized = resize_bilinear(decoded, s, s);
  PreprocessConfig cfg{s, model.channel_means};
  Tensor one = normalize(resized, cfg);
  std::vector<float> values = one.data();
  Tensor batch({1, 3, s, s}, std::move(values));
  Tensor proba = predict_proba(model, batch);

  PredictionOutcome outcome;
  outcome.probability_melanoma = proba[1];
  outcome.label = outcome.probability_melanoma >= 0.5f ? "melanoma" : "non_melanoma";
  if (cam) {
    int target = proba[1] > proba[0] ? 1 : 0;
    Heatmap heat = gradcam(model, batch, target);
    Image blended = overlay(resized, heat);
    std::vector<uint8_t> png = encode_png(blended);
    outcome.heatmap_png_base64 = base64_encode(png);
  }
  return outcome;
}

struct InferenceServer::Impl {
  Model model;
  std::string version;
  size_t max_body_bytes = 0;
  httplib::Server server;
  std::thread worker;
};

InferenceServer::InferenceServer(const std::string& checkpoint_path, size_t max_body_bytes)
    : impl_(std::make_unique<Impl>()) {
  uint32_t crc = 0;
  impl_->model = load_checkpoint(checkpoint_path, &crc);
  char hex[16];
  std::snprintf(hex, sizeof(hex), "%08x", crc);
  impl_->version = hex;
  impl_->max_body_bytes = max_body_bytes;

  impl_->server.set_payload_max_length(max_body_bytes);
  impl_->server.set_tcp_nodelay(true);
  impl_->server.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
    res.set_content("ok", "text/plain");
  });
  impl_->server.Post("/predict", [this](const httplib::Request& req, httplib::Response& res) {
    nlohmann::json body;
    bool cam = req.get_param_value("cam") == "1";
    try {
      auto bytes = std::span<const uint8_t>(reinterpret_cast<const uint8_t*>(req.body.data()),
                                            req.body.size());
      PredictionOutcome outcome = predict_from_bytes(impl_->model, bytes, cam);
      body["probability_melanoma"] = outcome.probability_melanoma;
      body["label"] = outcome.label;
      body["model_version"] = impl_->version;
      if (cam) body["heatmap_png"] = outcome.heatmap_png_base64;
      res.status = 200;
    } catch (const ImageError& e) {
      body = {{"error", e.what()}};
      res.status = 400;
    } catch (const std::exception&) {
      body = {{"error", "internal error"}};
      res.status = 500;
    }
    res.set_content(body.dump(), "application/json");
  });
}

InferenceServer::~InferenceServer() {
  stop();
}

const Model& InferenceServer::model() const {
  return impl_->model;
}

const std::string& InferenceServer::model_version() const {
  return impl_->version;
}

bool InferenceServer::listen(const std::string& host, int port) {
  return impl_->server.listen(host, port);
}

int InferenceServer::start_background(const std::string& host) {
  int port = impl_->server.bind_to_any_port(host);
  if (port <= 0) throw std::runtime_error("failed to bind " + host);
  impl_->worker = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port;
}

void InferenceServer::stop() {
  if (impl_ == nullptr) return;
  impl_->server.stop();
  if (impl_->worker.joinable()) impl_->worker.join();
}

}  // namespace dermnet
