#include "dermnet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "dermnet/image_codec.hpp"
#include "dermnet/rng.hpp"

namespace dermnet {

namespace {

uint8_t clamp_u8(float v) {
  return static_cast<uint8_t>(std::clamp(v, 0.0f, 255.0f));
}

float smoothstep(float edge0, float edge1, float x) {
  float t = std::clamp((x - edge0) / (edge1 - edge0), 0.0f, 1.0f);
  return t * t * (3.0f - 2.0f * t);
}

Image render_background(int size, Rng& rng) {
  float base_r = 200.0f + rng.uniform(-15.0f, 15.0f);
  float base_g = 158.0f + rng.uniform(-15.0f, 15.0f);
  float base_b = 138.0f + rng.uniform(-12.0f, 12.0f);
  float grad = rng.uniform(-12.0f, 12.0f);
  Image img = Image::blank(size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      float shade = grad * static_cast<float>(x + y) / static_cast<float>(2 * size);
      img.at(y, x, 0) = clamp_u8(base_r + shade + rng.uniform(-5.0f, 5.0f));
      img.at(y, x, 1) = clamp_u8(base_g + shade + rng.uniform(-5.0f, 5.0f));
      img.at(y, x, 2) = clamp_u8(base_b + shade + rng.uniform(-5.0f, 5.0f));
    }
  }
  return img;
}

struct BlobShape {
  float cx = 0.0f;
  float cy = 0.0f;
  float radius = 0.0f;
  std::array<float, 4> amplitude{};  // harmonics 2..5 of the outline
  std::array<float, 4> phase{};
};

BlobShape random_blob(int size, float min_r, float max_r, float irregularity, Rng& rng) {
  BlobShape blob;
  blob.cx = rng.uniform(0.32f, 0.68f) * static_cast<float>(size);
  blob.cy = rng.uniform(0.32f, 0.68f) * static_cast<float>(size);
  blob.radius = rng.uniform(min_r, max_r) * static_cast<float>(size);
  for (size_t k = 0; k < blob.amplitude.size(); ++k) {
    blob.amplitude[k] = rng.uniform(0.0f, irregularity);
    blob.phase[k] = rng.uniform(0.0f, 2.0f * std::numbers::pi_v<float>);
  }
  return blob;
}

float blob_radius_at(const BlobShape& blob, float theta) {
  float r = 1.0f;
  for (size_t k = 0; k < blob.amplitude.size(); ++k) {
    r += blob.amplitude[k] * std::sin(static_cast<float>(k + 2) * theta + blob.phase[k]);
  }
  return blob.radius * std::max(0.45f, r);
}

/// Paints the blob and returns the tight half-open bounding box of every
/// pixel it touched with noticeable opacity.
std::optional<BBox> paint_blob(Image& img, const BlobShape& blob, std::array<float, 3> color,
                               float center_darkening) {
  int size = img.width;
  int x_min = size;
  int y_min = size;
  int x_max = -1;
  int y_max = -1;
  float max_reach = blob.radius * 1.6f + 2.0f;
  int x_lo = std::max(0, static_cast<int>(blob.cx - max_reach));
  int x_hi = std::min(size - 1, static_cast<int>(blob.cx + max_reach));
  int y_lo = std::max(0, static_cast<int>(blob.cy - max_reach));
  int y_hi = std::min(size - 1, static_cast<int>(blob.cy + max_reach));
  for (int y = y_lo; y <= y_hi; ++y) {
    for (int x = x_lo; x <= x_hi; ++x) {
      float dx = static_cast<float>(x) + 0.5f - blob.cx;
      float dy = static_cast<float>(y) + 0.5f - blob.cy;
      float dist = std::sqrt(dx * dx + dy * dy);
      float edge = blob_radius_at(blob, std::atan2(dy, dx));
      float alpha = 1.0f - smoothstep(edge - 1.2f, edge + 1.2f, dist);
      if (alpha < 0.05f) continue;
      float inner = 1.0f - center_darkening * (1.0f - std::min(dist / edge, 1.0f));
      for (int c = 0; c < 3; ++c) {
        float painted = color[static_cast<size_t>(c)] * inner;
        float mixed = alpha * painted + (1.0f - alpha) * static_cast<float>(img.at(y, x, c));
        img.at(y, x, c) = clamp_u8(mixed);
      }
      x_min = std::min(x_min, x);
      y_min = std::min(y_min, y);
      x_max = std::max(x_max, x);
      y_max = std::max(y_max, y);
    }
  }
  if (x_max < x_min) return std::nullopt;
  return BBox{x_min, y_min, x_max + 1, y_max + 1};
}

SynthSample make_sample(int index, int size, Label3 label, uint64_t seed) {
  Rng rng(mix_seed(mix_seed(seed, "synth-sample"), static_cast<uint64_t>(index)));
  SynthSample sample;
  char id[32];
  std::snprintf(id, sizeof(id), "synth_%04d", index);
  sample.id = id;
  sample.label = label;
  sample.image = render_background(size, rng);
  auto jitter = [&rng](float base, float amp) {
    return base + static_cast<float>(rng.uniform(-amp, amp));
  };
  if (label == Label3::kMelanoma) {
    BlobShape blob = random_blob(size, 0.15f, 0.24f, 0.18f, rng);
    std::array<float, 3> color = {jitter(60.0f, 22.0f), jitter(42.0f, 15.0f),
                                  jitter(36.0f, 12.0f)};
    sample.lesion_box = paint_blob(sample.image, blob, color, 0.35f);
  } else if (rng.coin()) {
    // Faint, round benign spot; the other benign half stays plain skin.
    BlobShape blob = random_blob(size, 0.10f, 0.18f, 0.0f, rng);
    std::array<float, 3> color = {jitter(152.0f, 18.0f), jitter(112.0f, 14.0f),
                                  jitter(96.0f, 12.0f)};
    paint_blob(sample.image, blob, color, 0.10f);
  }
  return sample;
}

}  // namespace

SynthDataset synth_dataset(int n, int image_size, uint64_t seed) {
  if (n < 8 || n % 2 != 0) {
    throw std::invalid_argument("synthetic dataset size must be even and >= 8, got " +
                                std::to_string(n));
  }
  if (image_size < 16) {
    throw std::invalid_argument("synthetic image size must be >= 16, got " +
                                std::to_string(image_size));
  }
  SynthDataset dataset;
  dataset.image_size = image_size;
  dataset.samples.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    // Even indices are melanoma; odd indices alternate the benign labels.
    Label3 label = i % 2 == 0
                       ? Label3::kMelanoma
                       : (i % 4 == 1 ? Label3::kNevus : Label3::kSeborrheicKeratosis);
    dataset.samples.push_back(make_sample(i, image_size, label, seed));
  }
  return dataset;
}

void write_synth_dataset(const SynthDataset& dataset, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::ofstream manifest(fs::path(out_dir) / "manifest.csv", std::ios::trunc);
  if (!manifest) throw DataError("cannot write manifest under " + out_dir);
  manifest << "id,label\n";
  for (const SynthSample& sample : dataset.samples) {
    manifest << sample.id << "," << label_name(sample.label) << "\n";
    fs::path base = fs::path(out_dir) / sample.id;
    save_png(sample.image, base.string() + ".png");
    if (sample.lesion_box) save_bbox(*sample.lesion_box, base.string() + ".bbox");
  }
  if (!manifest) throw DataError("error writing manifest under " + out_dir);
}

std::vector<LabeledImage> to_labeled_images(const SynthDataset& dataset, int target_size) {
  std::vector<LabeledImage> out;
  out.reserve(dataset.samples.size());
  for (const SynthSample& sample : dataset.samples) {
    LabeledImage labeled;
    labeled.id = sample.id;
    labeled.image = resize_bilinear(sample.image, target_size, target_size);
    labeled.label3 = sample.label;
    labeled.label = to_binary_label(sample.label);
    if (sample.lesion_box) {
      labeled.bbox = scale_bbox(*sample.lesion_box, dataset.image_size, target_size);
    }
    out.push_back(std::move(labeled));
  }
  return out;
}

}  // namespace dermnet
