#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dermnet/dataset.hpp"
#include "dermnet/image.hpp"

namespace dermnet {

struct SynthSample {
  std::string id;
  Image image;
  Label3 label = Label3::kNevus;
  std::optional<BBox> lesion_box;  // recorded for melanoma samples
};

struct SynthDataset {
  int image_size = 0;
  std::vector<SynthSample> samples;
};

/// Deterministic synthetic dermoscopy stand-in. Half the samples are
/// melanoma: a dark, irregularly-outlined blob on textured skin, with the
/// blob's tight bounding box recorded. The benign half alternates nevus and
/// seborrheic keratosis: either plain skin or a faint regular blob.
/// n must be even and >= 8; image_size >= 16. The same (n, image_size, seed)
/// always produces the same pixels.
SynthDataset synth_dataset(int n, int image_size, uint64_t seed);

/// Writes out_dir/manifest.csv plus <id>.png for every sample and <id>.bbox
/// for samples with a recorded lesion box. Creates out_dir if needed.
void write_synth_dataset(const SynthDataset& dataset, const std::string& out_dir);

/// In-memory conversion to training samples (resized to target_size).
std::vector<LabeledImage> to_labeled_images(const SynthDataset& dataset, int target_size);

}  // namespace dermnet
