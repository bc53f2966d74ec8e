#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dermnet/image.hpp"
#include "dermnet/tensor.hpp"

namespace dermnet {

/// Thrown for malformed manifests, unknown labels, missing files and other
/// data-level problems. Messages carry the offending row or path.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Label3 { kMelanoma = 0, kSeborrheicKeratosis = 1, kNevus = 2 };

std::string_view label_name(Label3 label);
std::optional<Label3> parse_label(std::string_view text);
/// Binary target: melanoma is the positive class (1), the two benign
/// diagnoses collapse to 0.
int to_binary_label(Label3 label);

/// Axis-aligned box with half-open pixel ranges [x0, x1) x [y0, y1).
struct BBox {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
};

/// Grows the box by margin pixels on every side, clamped to [0, side).
BBox dilate(const BBox& box, int margin, int side);
/// Rescales box coordinates from an image of side from_side to to_side.
BBox scale_bbox(const BBox& box, int from_side, int to_side);

void save_bbox(const BBox& box, const std::string& path);
BBox load_bbox(const std::string& path);

struct ManifestRow {
  std::string id;
  std::string image_path;  // empty when the manifest was loaded without an image dir
  Label3 label = Label3::kNevus;
  std::optional<BBox> bbox;  // from an <id>.bbox sidecar, when present
};

struct Manifest {
  std::vector<ManifestRow> rows;

  int size() const { return static_cast<int>(rows.size()); }
  int count(Label3 label) const;
  int positives() const;  // binary-positive rows
};

/// Parses a `id,label` CSV (labels case-insensitive); a header-only file is a
/// valid empty manifest. The ISIC-2017 ground-truth layout
/// (`image_id,melanoma,seborrheic_keratosis,...` one-hot columns) is accepted
/// too. With a non-empty image_dir each row must have `<image_dir>/<id>.png`
/// or `.jpg`/`.jpeg`; `<id>.bbox` sidecars are picked up when present. An
/// empty image_dir skips path resolution, for label-count checks on manifests
/// without pixels.
Manifest load_manifest(const std::string& csv_path, const std::string& image_dir);

/// Deterministic split stratified by the binary target: each class
/// contributes round(fraction * n) rows to the train side, chosen by a seeded
/// shuffle. Row order within each side follows the input manifest. Rejected
/// when either side ends up without both classes.
std::pair<Manifest, Manifest> stratified_split(const Manifest& manifest, double train_fraction,
                                               uint64_t seed);

struct PreprocessConfig {
  int target_size = 224;
  std::array<float, 3> channel_means{0.0f, 0.0f, 0.0f};
};

/// A decoded sample, already resized to the training resolution.
struct LabeledImage {
  std::string id;
  Image image;
  Label3 label3 = Label3::kNevus;
  int label = 0;  // binary target
  std::optional<BBox> bbox;  // in resized-image coordinates
};

/// Decodes and resizes every manifest row. Propagates decode failures as
/// DataError with the file path.
std::vector<LabeledImage> load_images(const Manifest& manifest, int target_size);

/// Per-channel mean of value/255 over all pixels of the given (training)
/// images. Empty input is rejected.
std::array<float, 3> compute_channel_means(std::span<const LabeledImage> images);

/// HWC u8 -> CHW float: value/255 minus the channel mean. The image must
/// already be target_size x target_size.
Tensor normalize(const Image& img, const PreprocessConfig& cfg);
/// resize + normalize in one step -> 3 x S x S.
Tensor preprocess(const Image& img, const PreprocessConfig& cfg);
/// Stacks preprocessed images into an N x 3 x S x S batch.
Tensor preprocess_batch(std::span<const Image> images, const PreprocessConfig& cfg);

}  // namespace dermnet
