#pragma once

#include <string>
#include <vector>

#include "dermnet/dataset.hpp"
#include "dermnet/image.hpp"
#include "dermnet/model.hpp"

namespace dermnet {

/// Class-activation heatmap at the model's input resolution, normalized to
/// [0, 1]. raw_max preserves the pre-normalization peak: 0 means the map had
/// no positive response and the values are all zeros.
struct Heatmap {
  int size = 0;
  std::vector<float> values;  // size * size, row-major
  int target_class = 0;
  float raw_max = 0.0f;

  float at(int y, int x) const { return values[static_cast<size_t>(y * size + x)]; }
};

/// Gradient-weighted class activation map for one preprocessed image
/// (3 x S x S or 1 x 3 x S x S). Runs an infer-mode forward under a tape
/// watching the input, backpropagates the target logit, weights the last
/// parameter layer's activation channels by their spatially averaged
/// gradients, applies ReLU, upsamples bilinearly and normalizes by the peak.
Heatmap gradcam(const Model& model, const Tensor& input, int target_class);

/// Alpha-blends a blue-to-red rendering of the heatmap over the image:
/// out = (1 - alpha*h) * original + alpha*h * colormap(h). The image must
/// match the heatmap dimensions.
Image overlay(const Image& img, const Heatmap& heat, float alpha = 0.45f);

std::array<uint8_t, 3> heat_color(float h);

/// Text serialization: "P-HEAT <S> <S>" then one row of floats per line.
void write_heatmap(const Heatmap& heat, const std::string& path);
Heatmap read_heatmap(const std::string& path);

/// Fraction of total heatmap mass inside the box (heatmap pixel coordinates);
/// 0 when the map is empty.
double heatmap_mass_fraction(const Heatmap& heat, const BBox& box);

}  // namespace dermnet
