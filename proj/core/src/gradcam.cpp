#include "dermnet/gradcam.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "dermnet/autodiff.hpp"

namespace dermnet {

namespace {

Tensor as_single_batch(const Tensor& input, const ModelConfig& config) {
  int s = config.input_size;
  if (input.rank() == 3 && input.dim(0) == config.in_channels && input.dim(1) == s &&
      input.dim(2) == s) {
    std::vector<float> values = input.data();
    return Tensor({1, config.in_channels, s, s}, std::move(values));
  }
  if (input.rank() == 4 && input.dim(0) == 1 && input.dim(1) == config.in_channels &&
      input.dim(2) == s && input.dim(3) == s) {
    return input;
  }
  throw std::invalid_argument("heatmap input must be one preprocessed " +
                              std::to_string(config.in_channels) + "x" + std::to_string(s) + "x" +
                              std::to_string(s) + " image, got " + shape_str(input.shape()));
}

}  // namespace

Heatmap gradcam(const Model& model, const Tensor& input, int target_class) {
  if (target_class < 0 || target_class >= model.config.num_classes) {
    throw std::invalid_argument("target class " + std::to_string(target_class) +
                                " out of range [0, " +
                                std::to_string(model.config.num_classes) + ")");
  }
  Tensor batch = as_single_batch(input, model.config);

  Tape tape;
  tape.watch(batch);
  ForwardTrace trace;
  Tensor logits = forward(model, batch, &tape, &trace);

  std::vector<float> selector(static_cast<size_t>(model.config.num_classes), 0.0f);
  selector[static_cast<size_t>(target_class)] = 1.0f;
  Tensor target_logit =
      sum_all(mul(logits, Tensor({1, model.config.num_classes}, std::move(selector)), &tape), &tape);
  tape.backward(target_logit);

  const Tensor& activation = trace.layer_outputs.back();  // 1 x C x h x w
  Tensor activation_grad = tape.grad_of(activation);
  int channels = activation.dim(1);
  int h = activation.dim(2);
  int w = activation.dim(3);
  int64_t plane = static_cast<int64_t>(h) * w;

  // Channel weights: spatial mean of the activation gradient.
  std::vector<float> weights(static_cast<size_t>(channels));
  for (int c = 0; c < channels; ++c) {
    double sum = 0.0;
    for (int64_t i = 0; i < plane; ++i) sum += activation_grad[c * plane + i];
    weights[static_cast<size_t>(c)] = static_cast<float>(sum / static_cast<double>(plane));
  }

  std::vector<float> cam(static_cast<size_t>(plane), 0.0f);
  for (int c = 0; c < channels; ++c) {
    float alpha = weights[static_cast<size_t>(c)];
    for (int64_t i = 0; i < plane; ++i) {
      cam[static_cast<size_t>(i)] += alpha * activation[c * plane + i];
    }
  }
  float raw_max = 0.0f;
  for (float& v : cam) {
    v = std::max(v, 0.0f);
    raw_max = std::max(raw_max, v);
  }

  Heatmap heat;
  heat.size = model.config.input_size;
  heat.target_class = target_class;
  heat.raw_max = raw_max;
  heat.values.assign(static_cast<size_t>(heat.size) * static_cast<size_t>(heat.size), 0.0f);
  if (raw_max > 0.0f) {
    for (float& v : cam) v /= raw_max;
    resize_bilinear_plane(cam.data(), h, w, heat.values.data(), heat.size, heat.size);
  }
  return heat;
}

std::array<uint8_t, 3> heat_color(float h) {
  h = std::clamp(h, 0.0f, 1.0f);
  auto to_u8 = [](float v) { return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0f, 255.0f))); };
  return {to_u8(255.0f * h), to_u8(64.0f * (1.0f - std::abs(2.0f * h - 1.0f))),
          to_u8(255.0f * (1.0f - h))};
}

Image overlay(const Image& img, const Heatmap& heat, float alpha) {
  if (heat.size <= 0 || heat.values.size() != static_cast<size_t>(heat.size) * heat.size) {
    throw std::invalid_argument("overlay needs a non-empty heatmap");
  }
  if (img.width != heat.size || img.height != heat.size) {
    throw std::invalid_argument(
        "overlay size mismatch: image " + std::to_string(img.width) + "x" +
        std::to_string(img.height) + " vs heatmap " + std::to_string(heat.size) + "x" +
        std::to_string(heat.size));
  }
  alpha = std::clamp(alpha, 0.0f, 1.0f);
  Image out = img;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      float h = std::clamp(heat.at(y, x), 0.0f, 1.0f);
      std::array<uint8_t, 3> color = heat_color(h);
      float weight = alpha * h;
      for (int c = 0; c < 3; ++c) {
        float mixed = (1.0f - weight) * static_cast<float>(img.at(y, x, c)) +
                      weight * static_cast<float>(color[static_cast<size_t>(c)]);
        out.at(y, x, c) = static_cast<uint8_t>(std::lround(std::clamp(mixed, 0.0f, 255.0f)));
      }
    }
  }
  return out;
}

void write_heatmap(const Heatmap& heat, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open heatmap file for writing: " + path);
  out << "P-HEAT " << heat.size << " " << heat.size << "\n";
  char buf[48];
  for (int y = 0; y < heat.size; ++y) {
    for (int x = 0; x < heat.size; ++x) {
      std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(heat.at(y, x)));
      out << (x == 0 ? "" : " ") << buf;
    }
    out << "\n";
  }
  if (!out) throw std::runtime_error("error writing heatmap file: " + path);
}

Heatmap read_heatmap(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open heatmap file: " + path);
  std::string magic;
  int rows = 0;
  int cols = 0;
  if (!(in >> magic >> rows >> cols) || magic != "P-HEAT" || rows <= 0 || cols != rows) {
    throw std::runtime_error("malformed heatmap file: " + path);
  }
  Heatmap heat;
  heat.size = rows;
  heat.values.resize(static_cast<size_t>(rows) * static_cast<size_t>(cols));
  for (float& v : heat.values) {
    if (!(in >> v)) throw std::runtime_error("malformed heatmap file: " + path);
  }
  for (float v : heat.values) heat.raw_max = std::max(heat.raw_max, v);
  return heat;
}

double heatmap_mass_fraction(const Heatmap& heat, const BBox& box) {
  double total = 0.0;
  double inside = 0.0;
  for (int y = 0; y < heat.size; ++y) {
    for (int x = 0; x < heat.size; ++x) {
      double v = static_cast<double>(heat.at(y, x));
      total += v;
      if (box.contains(x, y)) inside += v;
    }
  }
  return total > 0.0 ? inside / total : 0.0;
}

}  // namespace dermnet
