#include <doctest.h>

#include <string>

#include "dermnet/dataset.hpp"
#include "dermnet/synth.hpp"
#include "support/testutil.hpp"

using dermnet::Label3;
using dermnet::SynthDataset;
using testutil::TempDir;

namespace {

double mean_brightness(const dermnet::Image& img, const dermnet::BBox& box) {
  double total = 0.0;
  int count = 0;
  for (int y = box.y0; y < box.y1; ++y) {
    for (int x = box.x0; x < box.x1; ++x) {
      for (int c = 0; c < 3; ++c) total += img.at(y, x, c);
      ++count;
    }
  }
  return count > 0 ? total / (count * 3) : 0.0;
}

}  // namespace

TEST_CASE("synthetic dataset is deterministic and balanced") {
  SynthDataset a = dermnet::synth_dataset(16, 32, 9);
  SynthDataset b = dermnet::synth_dataset(16, 32, 9);
  REQUIRE(a.samples.size() == 16);
  CHECK(a.image_size == 32);
  for (size_t i = 0; i < a.samples.size(); ++i) {
    CHECK(a.samples[i].id == b.samples[i].id);
    CHECK(a.samples[i].image.pixels == b.samples[i].image.pixels);
  }

  SynthDataset c = dermnet::synth_dataset(16, 32, 10);
  bool differs = false;
  for (size_t i = 0; i < a.samples.size() && !differs; ++i) {
    differs = a.samples[i].image.pixels != c.samples[i].image.pixels;
  }
  CHECK(differs);

  int melanoma = 0;
  for (const auto& s : a.samples) melanoma += s.label == Label3::kMelanoma ? 1 : 0;
  CHECK(melanoma == 8);

  CHECK_THROWS_AS(dermnet::synth_dataset(7, 32, 0), std::invalid_argument);
  CHECK_THROWS_AS(dermnet::synth_dataset(6, 32, 0), std::invalid_argument);
  CHECK_THROWS_AS(dermnet::synth_dataset(16, 8, 0), std::invalid_argument);
}

TEST_CASE("melanoma blobs are dark and boxed") {
  SynthDataset ds = dermnet::synth_dataset(24, 48, 13);
  for (const auto& s : ds.samples) {
    if (s.label != Label3::kMelanoma) continue;
    REQUIRE(s.lesion_box.has_value());
    const dermnet::BBox& box = *s.lesion_box;
    CHECK(box.x0 >= 0);
    CHECK(box.y0 >= 0);
    CHECK(box.x1 <= 48);
    CHECK(box.y1 <= 48);
    CHECK(box.width() >= 4);
    CHECK(box.height() >= 4);

    // Lesion interior is darker than the full frame.
    const dermnet::BBox frame{0, 0, 48, 48};
    CHECK(mean_brightness(s.image, box) < mean_brightness(s.image, frame) - 10.0);
  }
}

TEST_CASE("written dataset loads back through the manifest") {
  TempDir dir;
  SynthDataset ds = dermnet::synth_dataset(8, 32, 5);
  const std::string out = (dir.path / "synth").string();
  dermnet::write_synth_dataset(ds, out);

  dermnet::Manifest m = dermnet::load_manifest(out + "/manifest.csv", out);
  REQUIRE(m.size() == 8);
  CHECK(m.positives() == 4);
  int boxes = 0;
  for (const auto& row : m.rows) boxes += row.bbox.has_value() ? 1 : 0;
  CHECK(boxes == 4);

  auto images = dermnet::load_images(m, 32);
  for (size_t i = 0; i < images.size(); ++i) {
    CHECK(images[i].id == ds.samples[i].id);
    CHECK(images[i].image.pixels == ds.samples[i].image.pixels);
  }

  // In-memory conversion agrees with the round trip through PNG files.
  auto direct = dermnet::to_labeled_images(ds, 32);
  REQUIRE(direct.size() == images.size());
  for (size_t i = 0; i < direct.size(); ++i) {
    CHECK(direct[i].image.pixels == images[i].image.pixels);
    CHECK(direct[i].label == images[i].label);
    CHECK(direct[i].bbox.has_value() == images[i].bbox.has_value());
  }
}
