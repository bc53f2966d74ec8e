#include <doctest.h>

#include <cstdlib>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "dermnet/checkpoint.hpp"
#include "dermnet/dataset.hpp"
#include "dermnet/image_codec.hpp"
#include "dermnet/service.hpp"
#include "dermnet/synth.hpp"
#include "support/testutil.hpp"

using dermnet::Image;
using dermnet::Model;
using json = nlohmann::json;

namespace {

std::vector<uint8_t> png_of(const Image& img) { return dermnet::encode_png(img); }

/// Tiny checkpoint on disk plus one encoded sample to post at it.
struct ServiceFixture {
  testutil::TempDir dir;
  Model model;
  std::string checkpoint_path;
  dermnet::SynthDataset data;

  ServiceFixture()
      : model(testutil::tiny_model(dermnet::SkipMode::kConsecutive, 47)),
        checkpoint_path(dir.file("model.ckpt")),
        data(dermnet::synth_dataset(8, 32, 3)) {
    model.channel_means = {0.55f, 0.42f, 0.38f};
    save_checkpoint(model, checkpoint_path);
  }
};

}  // namespace

TEST_CASE("base64 round trips the RFC 4648 vectors") {
  const std::pair<std::string, std::string> vectors[] = {
      {"", ""},           {"f", "Zg=="},     {"fo", "Zm8="},
      {"foo", "Zm9v"},    {"foob", "Zm9vYg=="}, {"fooba", "Zm9vYmE="},
      {"foobar", "Zm9vYmFy"},
  };
  for (const auto& [plain, encoded] : vectors) {
    const std::vector<uint8_t> bytes(plain.begin(), plain.end());
    CHECK(dermnet::base64_encode(bytes) == encoded);
    CHECK(dermnet::base64_decode(encoded) == bytes);
  }
  CHECK_THROWS_AS(dermnet::base64_decode("Zg="), std::invalid_argument);
  CHECK_THROWS_AS(dermnet::base64_decode("Z!=="), std::invalid_argument);
  CHECK_THROWS_AS(dermnet::base64_decode("AAAAA"), std::invalid_argument);
}

TEST_CASE("max body bytes honors the environment override") {
  unsetenv("DERM_MAX_BODY_BYTES");
  CHECK(dermnet::default_max_body_bytes() == 10 * 1024 * 1024);
  setenv("DERM_MAX_BODY_BYTES", "2048", 1);
  CHECK(dermnet::default_max_body_bytes() == 2048);
  setenv("DERM_MAX_BODY_BYTES", "junk", 1);
  CHECK(dermnet::default_max_body_bytes() == 10 * 1024 * 1024);
  setenv("DERM_MAX_BODY_BYTES", "0", 1);
  CHECK(dermnet::default_max_body_bytes() == 10 * 1024 * 1024);
  unsetenv("DERM_MAX_BODY_BYTES");
}

TEST_CASE("predict_from_bytes matches an in-process forward") {
  ServiceFixture fx;
  const Image& img = fx.data.samples[0].image;

  dermnet::PredictionOutcome out = predict_from_bytes(fx.model, png_of(img), false);
  CHECK(out.heatmap_png_base64.empty());
  CHECK((out.label == "melanoma" || out.label == "non_melanoma"));
  CHECK((out.label == "melanoma") == (out.probability_melanoma >= 0.5f));

  // Oracle: the documented pipeline spelled out by hand.
  dermnet::PreprocessConfig cfg;
  cfg.target_size = fx.model.config.input_size;
  cfg.channel_means = fx.model.channel_means;
  dermnet::Tensor x = preprocess(img, cfg);
  dermnet::Tensor batch({1, 3, cfg.target_size, cfg.target_size}, x.data());
  dermnet::Tensor probs = predict_proba(fx.model, batch);
  CHECK(out.probability_melanoma == doctest::Approx(probs[1]).epsilon(1e-6));

  // cam=1 attaches a PNG whose size matches the model input.
  dermnet::PredictionOutcome cam = predict_from_bytes(fx.model, png_of(img), true);
  REQUIRE(!cam.heatmap_png_base64.empty());
  Image overlay_img = dermnet::decode_image(dermnet::base64_decode(cam.heatmap_png_base64));
  CHECK(overlay_img.width == fx.model.config.input_size);
  CHECK(overlay_img.height == fx.model.config.input_size);

  const std::vector<uint8_t> garbage{1, 2, 3, 4, 5};
  CHECK_THROWS_AS(predict_from_bytes(fx.model, garbage, false), dermnet::ImageError);
}

TEST_CASE("server answers health, prediction, and error routes") {
  ServiceFixture fx;
  dermnet::InferenceServer server(fx.checkpoint_path, 64 * 1024);
  const int port = server.start_background("127.0.0.1");
  REQUIRE(port > 0);
  httplib::Client client("127.0.0.1", port);
  client.set_tcp_nodelay(true);

  auto health = client.Get("/healthz");
  REQUIRE(health);
  CHECK(health->status == 200);
  CHECK(health->body == "ok");

  const Image& img = fx.data.samples[0].image;
  const std::vector<uint8_t> png = png_of(img);
  const std::string body(png.begin(), png.end());

  auto res = client.Post("/predict", body, "image/png");
  REQUIRE(res);
  CHECK(res->status == 200);
  json parsed = json::parse(res->body);
  CHECK(parsed.contains("probability_melanoma"));
  CHECK(parsed.contains("label"));
  CHECK(parsed["model_version"].get<std::string>().size() == 8);
  CHECK(!parsed.contains("heatmap_png"));

  // The served probability equals the local pipeline's.
  dermnet::PredictionOutcome local = predict_from_bytes(fx.model, png, false);
  CHECK(parsed["probability_melanoma"].get<double>() ==
        doctest::Approx(local.probability_melanoma).epsilon(1e-6));
  CHECK(parsed["label"].get<std::string>() == local.label);

  // cam=1 includes a decodable overlay.
  auto cam = client.Post("/predict?cam=1", body, "image/png");
  REQUIRE(cam);
  CHECK(cam->status == 200);
  json cam_json = json::parse(cam->body);
  REQUIRE(cam_json.contains("heatmap_png"));
  Image overlay_img = dermnet::decode_image(
      dermnet::base64_decode(cam_json["heatmap_png"].get<std::string>()));
  CHECK(overlay_img.width == fx.model.config.input_size);

  // Undecodable body: 400 with an error message.
  auto bad = client.Post("/predict", "this is not an image", "application/octet-stream");
  REQUIRE(bad);
  CHECK(bad->status == 400);
  CHECK(json::parse(bad->body).contains("error"));

  // Oversized body: 413.
  const std::string big(128 * 1024, 'x');
  auto huge = client.Post("/predict", big, "application/octet-stream");
  REQUIRE(huge);
  CHECK(huge->status == 413);

  server.stop();
}

TEST_CASE("prediction pairs sum to one and a soak run stays consistent") {
  ServiceFixture fx;
  dermnet::InferenceServer server(fx.checkpoint_path, dermnet::default_max_body_bytes());
  const int port = server.start_background("127.0.0.1");
  REQUIRE(port > 0);
  httplib::Client client("127.0.0.1", port);
  client.set_tcp_nodelay(true);
  client.set_keep_alive(true);

  // Identical inputs give byte-identical responses across many requests.
  std::vector<std::string> bodies;
  for (const auto& s : fx.data.samples) {
    auto png = png_of(s.image);
    bodies.emplace_back(png.begin(), png.end());
  }
  std::vector<std::string> first;
  for (const auto& b : bodies) {
    auto res = client.Post("/predict", b, "image/png");
    REQUIRE(res);
    REQUIRE(res->status == 200);
    first.push_back(res->body);
  }
  int checked = 0;
  for (int round = 0; round < 125; ++round) {
    for (size_t i = 0; i < bodies.size(); ++i) {
      auto res = client.Post("/predict", bodies[i], "image/png");
      REQUIRE(res);
      REQUIRE(res->status == 200);
      if (res->body != first[i]) {
        FAIL("response drifted on request ", checked);
      }
      ++checked;
    }
  }
  CHECK(checked == 1000);
  server.stop();
}
