#include "dermnet/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "dermnet/image_codec.hpp"
#include "dermnet/rng.hpp"

namespace dermnet {

namespace {

constexpr std::array<std::string_view, 3> kLabelNames = {"melanoma", "seborrheic_keratosis",
                                                         "nevus"};

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

std::string lowercase(std::string_view text) {
  std::string out(text);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

std::string_view label_name(Label3 label) {
  return kLabelNames[static_cast<size_t>(label)];
}

std::optional<Label3> parse_label(std::string_view text) {
  std::string lower = lowercase(text);
  for (size_t i = 0; i < kLabelNames.size(); ++i) {
    if (lower == kLabelNames[i]) return static_cast<Label3>(i);
  }
  return std::nullopt;
}

int to_binary_label(Label3 label) {
  return label == Label3::kMelanoma ? 1 : 0;
}

BBox dilate(const BBox& box, int margin, int side) {
  BBox out;
  out.x0 = std::max(0, box.x0 - margin);
  out.y0 = std::max(0, box.y0 - margin);
  out.x1 = std::min(side, box.x1 + margin);
  out.y1 = std::min(side, box.y1 + margin);
  return out;
}

BBox scale_bbox(const BBox& box, int from_side, int to_side) {
  if (from_side <= 0 || to_side <= 0) {
    throw DataError("bbox scaling requires positive image sides");
  }
  double s = static_cast<double>(to_side) / static_cast<double>(from_side);
  BBox out;
  out.x0 = static_cast<int>(std::floor(box.x0 * s));
  out.y0 = static_cast<int>(std::floor(box.y0 * s));
  out.x1 = static_cast<int>(std::ceil(box.x1 * s));
  out.y1 = static_cast<int>(std::ceil(box.y1 * s));
  out.x1 = std::min(out.x1, to_side);
  out.y1 = std::min(out.y1, to_side);
  return out;
}

void save_bbox(const BBox& box, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open file for writing: " + path);
  out << box.x0 << " " << box.y0 << " " << box.x1 << " " << box.y1 << "\n";
  if (!out) throw DataError("error writing file: " + path);
}

BBox load_bbox(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file: " + path);
  BBox box;
  if (!(in >> box.x0 >> box.y0 >> box.x1 >> box.y1)) {
    throw DataError("malformed bbox file: " + path);
  }
  if (box.x1 <= box.x0 || box.y1 <= box.y0) {
    throw DataError("empty bbox in " + path);
  }
  return box;
}

int Manifest::count(Label3 label) const {
  int n = 0;
  for (const ManifestRow& row : rows) n += row.label == label ? 1 : 0;
  return n;
}

int Manifest::positives() const {
  int n = 0;
  for (const ManifestRow& row : rows) n += to_binary_label(row.label);
  return n;
}

namespace {

/// Splits one CSV line into fields (no quoting; ids and labels never contain
/// commas).
std::vector<std::string> csv_fields(const std::string& line) {
  std::vector<std::string> fields;
  size_t start = 0;
  while (true) {
    size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

/// ISIC-2017 ships its ground truth as one-hot columns; fold them back into
/// the three-class label.
Label3 label_from_isic_columns(const std::string& melanoma, const std::string& keratosis,
                               const std::string& context) {
  double m = 0.0;
  double k = 0.0;
  try {
    m = std::stod(melanoma);
    k = std::stod(keratosis);
  } catch (const std::exception&) {
    throw DataError(context + ": non-numeric class columns");
  }
  if (m == 1.0 && k == 0.0) return Label3::kMelanoma;
  if (m == 0.0 && k == 1.0) return Label3::kSeborrheicKeratosis;
  if (m == 0.0 && k == 0.0) return Label3::kNevus;
  throw DataError(context + ": ambiguous class columns");
}

void resolve_paths(ManifestRow& row, const std::string& image_dir, const std::string& csv_path,
                   int row_number) {
  namespace fs = std::filesystem;
  fs::path base = fs::path(image_dir) / row.id;
  bool found = false;
  for (const char* ext : {".png", ".jpg", ".jpeg"}) {
    fs::path candidate = base;
    candidate += ext;
    if (fs::exists(candidate)) {
      row.image_path = candidate.string();
      found = true;
      break;
    }
  }
  if (!found) {
    throw DataError(csv_path + " row " + std::to_string(row_number) + ": no image for id \"" +
                    row.id + "\" under " + image_dir);
  }
  fs::path bbox_path = base;
  bbox_path += ".bbox";
  if (fs::exists(bbox_path)) row.bbox = load_bbox(bbox_path.string());
}

}  // namespace

Manifest load_manifest(const std::string& csv_path, const std::string& image_dir) {
  std::ifstream in(csv_path);
  if (!in) throw DataError("cannot open manifest: " + csv_path);

  std::string line;
  if (!std::getline(in, line)) {
    throw DataError(csv_path + " row 1: expected header \"id,label\", got end of file");
  }
  std::vector<std::string> header = csv_fields(strip_cr(line));
  bool isic_layout = false;
  if (header.size() >= 3 && lowercase(header[0]) == "image_id" &&
      lowercase(header[1]) == "melanoma" && lowercase(header[2]) == "seborrheic_keratosis") {
    isic_layout = true;
  } else if (!(header.size() == 2 && header[0] == "id" && header[1] == "label")) {
    throw DataError(csv_path + " row 1: expected header \"id,label\", got \"" + strip_cr(line) +
                    "\"");
  }

  Manifest manifest;
  std::unordered_set<std::string> seen;
  int row_number = 1;
  while (std::getline(in, line)) {
    ++row_number;
    line = strip_cr(line);
    if (line.empty()) continue;
    std::string context = csv_path + " row " + std::to_string(row_number);
    std::vector<std::string> fields = csv_fields(line);
    ManifestRow row;
    if (isic_layout) {
      if (fields.size() != header.size()) {
        throw DataError(context + ": expected " + std::to_string(header.size()) +
                        " fields, got " + std::to_string(fields.size()));
      }
      row.id = fields[0];
      row.label = label_from_isic_columns(fields[1], fields[2], context);
    } else {
      if (fields.size() != 2) {
        throw DataError(context + ": expected exactly two fields, got \"" + line + "\"");
      }
      row.id = fields[0];
      std::optional<Label3> label = parse_label(fields[1]);
      if (!label) throw DataError(context + ": unknown label \"" + fields[1] + "\"");
      row.label = *label;
    }
    if (row.id.empty()) throw DataError(context + ": empty id");
    if (!seen.insert(row.id).second) {
      throw DataError(context + ": duplicate id \"" + row.id + "\"");
    }
    if (!image_dir.empty()) resolve_paths(row, image_dir, csv_path, row_number);
    manifest.rows.push_back(std::move(row));
  }
  return manifest;
}

std::pair<Manifest, Manifest> stratified_split(const Manifest& manifest, double train_fraction,
                                               uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw DataError("train fraction must be strictly between 0 and 1");
  }
  // Stratify by the binary target so the melanoma proportion carries over.
  std::vector<char> in_train(manifest.rows.size(), 0);
  for (int cls = 0; cls < 2; ++cls) {
    std::vector<size_t> indices;
    for (size_t i = 0; i < manifest.rows.size(); ++i) {
      if (to_binary_label(manifest.rows[i].label) == cls) indices.push_back(i);
    }
    Rng rng(mix_seed(mix_seed(seed, "split"), static_cast<uint64_t>(cls)));
    rng.shuffle(indices);
    auto take = static_cast<size_t>(
        std::llround(train_fraction * static_cast<double>(indices.size())));
    take = std::min(take, indices.size());
    for (size_t k = 0; k < take; ++k) in_train[indices[k]] = 1;
  }
  std::pair<Manifest, Manifest> out;
  for (size_t i = 0; i < manifest.rows.size(); ++i) {
    (in_train[i] ? out.first : out.second).rows.push_back(manifest.rows[i]);
  }
  for (const Manifest* side : {&out.first, &out.second}) {
    int positives = side->positives();
    if (positives == 0 || positives == side->size()) {
      throw DataError("split leaves a side without both classes (" +
                      std::to_string(out.first.size()) + " train / " +
                      std::to_string(out.second.size()) + " val); use more data");
    }
  }
  return out;
}

std::vector<LabeledImage> load_images(const Manifest& manifest, int target_size) {
  if (target_size <= 0) throw DataError("target size must be positive");
  std::vector<LabeledImage> out;
  out.reserve(manifest.rows.size());
  for (const ManifestRow& row : manifest.rows) {
    if (row.image_path.empty()) {
      throw DataError("manifest row \"" + row.id + "\" has no resolved image path");
    }
    LabeledImage sample;
    sample.id = row.id;
    try {
      Image img = load_image(row.image_path);
      if (row.bbox) sample.bbox = scale_bbox(*row.bbox, img.width, target_size);
      sample.image = resize_bilinear(img, target_size, target_size);
    } catch (const ImageError& e) {
      throw DataError(e.what());
    }
    sample.label3 = row.label;
    sample.label = to_binary_label(row.label);
    out.push_back(std::move(sample));
  }
  return out;
}

std::array<float, 3> compute_channel_means(std::span<const LabeledImage> images) {
  if (images.empty()) throw DataError("channel means need at least one image");
  std::array<double, 3> sums{0.0, 0.0, 0.0};
  int64_t pixels = 0;
  for (const LabeledImage& sample : images) {
    const Image& img = sample.image;
    pixels += static_cast<int64_t>(img.width) * img.height;
    for (size_t i = 0; i < img.pixels.size(); i += 3) {
      sums[0] += img.pixels[i];
      sums[1] += img.pixels[i + 1];
      sums[2] += img.pixels[i + 2];
    }
  }
  std::array<float, 3> means{};
  for (int c = 0; c < 3; ++c) {
    means[static_cast<size_t>(c)] =
        static_cast<float>(sums[static_cast<size_t>(c)] / (255.0 * static_cast<double>(pixels)));
  }
  return means;
}

Tensor normalize(const Image& img, const PreprocessConfig& cfg) {
  if (img.width != cfg.target_size || img.height != cfg.target_size) {
    throw DataError("normalize expects a " + std::to_string(cfg.target_size) + "x" +
                    std::to_string(cfg.target_size) + " image, got " + std::to_string(img.width) +
                    "x" + std::to_string(img.height));
  }
  int s = cfg.target_size;
  std::vector<float> values(static_cast<size_t>(3) * s * s);
  for (int c = 0; c < 3; ++c) {
    float mean = cfg.channel_means[static_cast<size_t>(c)];
    float* plane = values.data() + static_cast<size_t>(c) * s * s;
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        plane[y * s + x] = static_cast<float>(img.at(y, x, c)) / 255.0f - mean;
      }
    }
  }
  return Tensor({3, s, s}, std::move(values));
}

Tensor preprocess(const Image& img, const PreprocessConfig& cfg) {
  return normalize(resize_bilinear(img, cfg.target_size, cfg.target_size), cfg);
}

Tensor preprocess_batch(std::span<const Image> images, const PreprocessConfig& cfg) {
  if (images.empty()) throw DataError("cannot build an empty batch");
  int s = cfg.target_size;
  int n = static_cast<int>(images.size());
  std::vector<float> values(static_cast<size_t>(n) * 3 * s * s);
  size_t per_sample = static_cast<size_t>(3) * s * s;
  for (int i = 0; i < n; ++i) {
    Tensor one = preprocess(images[static_cast<size_t>(i)], cfg);
    std::copy(one.data().begin(), one.data().end(),
              values.begin() + static_cast<size_t>(i) * per_sample);
  }
  return Tensor({n, 3, s, s}, std::move(values));
}

}  // namespace dermnet
