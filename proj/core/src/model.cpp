#include "dermnet/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "dermnet/autodiff.hpp"
#include "dermnet/rng.hpp"

namespace dermnet {

namespace {

constexpr int kNumLayers = 3;
constexpr int kDownsampleFactor = 8;  // three 2x halvings

Tensor gaussian_tensor(Shape shape, float stddev, Rng& rng) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  std::vector<float> values(static_cast<size_t>(n));
  for (float& v : values) v = rng.gaussian(stddev);
  return Tensor(std::move(shape), std::move(values));
}

Conv2dParams make_conv(int out_ch, int in_ch, int kernel, int stride, int padding, Rng& rng) {
  Conv2dParams p;
  float stddev = std::sqrt(2.0f / static_cast<float>(in_ch * kernel * kernel));
  p.weights = gaussian_tensor({out_ch, in_ch, kernel, kernel}, stddev, rng);
  p.bias = Tensor::zeros({out_ch});
  p.stride = stride;
  p.padding = padding;
  return p;
}

BatchNormParams make_batchnorm(int channels) {
  BatchNormParams p;
  p.gamma = Tensor::ones({channels});
  p.beta = Tensor::zeros({channels});
  p.running_mean.assign(static_cast<size_t>(channels), 0.0f);
  p.running_var.assign(static_cast<size_t>(channels), 1.0f);
  return p;
}

Tensor layer_forward_impl(const Tensor& x, const ParameterLayer& layer, BatchNormParams* train_bn,
                          Tape* tape) {
  Tensor main = conv2d(x, layer.conv, tape);
  main = train_bn != nullptr ? batchnorm2d(main, *train_bn, Mode::kTrain, tape)
                             : batchnorm2d(main, layer.bn, tape);
  main = maxpool2d(main, tape);
  Tensor skip = conv2d(x, layer.projection, tape);
  return relu(add(main, skip, tape), tape);
}

void check_layer_index(int layer_index) {
  if (layer_index < 0 || layer_index >= kNumLayers) {
    throw std::invalid_argument("layer index " + std::to_string(layer_index) +
                                " out of range [0, " + std::to_string(kNumLayers) + ")");
  }
}

void check_batch(const ModelConfig& config, const Tensor& batch) {
  std::ostringstream expected;
  expected << "Nx" << config.in_channels << "x" << config.input_size << "x" << config.input_size;
  if (batch.rank() != 4) {
    throw std::invalid_argument("forward expects a " + expected.str() + " batch, got " +
                                shape_str(batch.shape()));
  }
  if (batch.dim(1) != config.in_channels || batch.dim(2) != config.input_size ||
      batch.dim(3) != config.input_size) {
    throw std::invalid_argument("forward expects " + expected.str() + ", got " +
                                shape_str(batch.shape()));
  }
}

/// Aligns an earlier activation to a later layer's input shape without
/// parameters: repeated 2x2 average pooling down to the target spatial size,
/// then zero padding up to the target channel count.
Tensor align_source(const Tensor& src, int target_spatial, int target_channels, Tape* tape) {
  Tensor out = src;
  if (out.dim(2) != target_spatial) {
    if (target_spatial <= 0 || out.dim(2) % target_spatial != 0) {
      throw std::invalid_argument("cannot align spatial size " + std::to_string(out.dim(2)) +
                                  " to " + std::to_string(target_spatial));
    }
    out = avgpool2d(out, out.dim(2) / target_spatial, tape);
  }
  if (out.dim(1) != target_channels) {
    out = pad_channels(out, target_channels, tape);
  }
  return out;
}

Tensor forward_impl(const ModelConfig& config, const std::vector<ParameterLayer>& layers,
                    const LinearParams& head, std::vector<BatchNormParams*> train_bn,
                    const Tensor& batch, Tape* tape, ForwardTrace* trace) {
  check_batch(config, batch);
  std::vector<Tensor> outputs;
  outputs.reserve(layers.size());
  Tensor current = batch;
  for (size_t i = 0; i < layers.size(); ++i) {
    Tensor input = current;
    if (config.skip_mode == SkipMode::kDense && i >= 1) {
      // Unraveled skips: the layer also sees the initial input and every
      // output before the immediately preceding one, shape-aligned and summed.
      int target_spatial = current.dim(2);
      int target_channels = current.dim(1);
      input = add(input, align_source(batch, target_spatial, target_channels, tape), tape);
      for (size_t j = 0; j + 1 < i; ++j) {
        input = add(input, align_source(outputs[j], target_spatial, target_channels, tape), tape);
      }
    }
    BatchNormParams* bn = train_bn.empty() ? nullptr : train_bn[i];
    current = layer_forward_impl(input, layers[i], bn, tape);
    outputs.push_back(current);
  }
  Tensor pooled = reduce_mean(current, std::array<int, 2>{2, 3}, false, tape);
  Tensor logits = linear(pooled, head, tape);
  if (trace != nullptr) {
    trace->layer_outputs = std::move(outputs);
    trace->pooled = pooled;
    trace->logits = logits;
  }
  return logits;
}

}  // namespace

void validate_config(const ModelConfig& config) {
  if (config.layer_channels.size() != static_cast<size_t>(kNumLayers)) {
    throw std::invalid_argument("expected exactly " + std::to_string(kNumLayers) +
                                " layer channel counts, got " +
                                std::to_string(config.layer_channels.size()));
  }
  for (int c : config.layer_channels) {
    if (c <= 0) throw std::invalid_argument("layer channel counts must be positive");
  }
  if (config.input_size <= 0 || config.input_size % kDownsampleFactor != 0) {
    throw std::invalid_argument("input_size must be a positive multiple of " +
                                std::to_string(kDownsampleFactor) + ", got " +
                                std::to_string(config.input_size));
  }
  if (config.in_channels <= 0) {
    throw std::invalid_argument("in_channels must be positive");
  }
  if (config.num_classes != 2) {
    throw std::invalid_argument("num_classes must be 2, got " +
                                std::to_string(config.num_classes));
  }
  if (config.skip_mode == SkipMode::kDense) {
    // Dense skips align earlier activations by zero-padding channels, which
    // can only grow: every layer's input channel count must dominate the
    // channel counts of all earlier sources.
    for (int i = 1; i < kNumLayers; ++i) {
      const int target = config.layer_channels[static_cast<size_t>(i - 1)];
      int widest = config.in_channels;
      for (int j = 0; j + 1 < i; ++j)
        widest = std::max(widest, config.layer_channels[static_cast<size_t>(j)]);
      if (widest > target) {
        throw std::invalid_argument(
            "dense skips need layer " + std::to_string(i) + " input channels (" +
            std::to_string(target) + ") >= every earlier source (" + std::to_string(widest) + ")");
      }
    }
  }
}

Model build_model(const ModelConfig& config, uint64_t seed) {
  validate_config(config);
  Model model;
  model.config = config;
  Rng rng(mix_seed(seed, "model-init"));
  int in_ch = config.in_channels;
  for (int i = 0; i < kNumLayers; ++i) {
    int out_ch = config.layer_channels[static_cast<size_t>(i)];
    ParameterLayer layer;
    layer.conv = make_conv(out_ch, in_ch, 3, 1, 1, rng);
    layer.bn = make_batchnorm(out_ch);
    layer.projection = make_conv(out_ch, in_ch, 1, 2, 0, rng);
    model.layers.push_back(std::move(layer));
    in_ch = out_ch;
  }
  float head_stddev = std::sqrt(2.0f / static_cast<float>(in_ch));
  model.head.weights = gaussian_tensor({config.num_classes, in_ch}, head_stddev, rng);
  model.head.bias = Tensor::zeros({config.num_classes});
  return model;
}

std::vector<Tensor*> trainable_parameters(Model& model) {
  std::vector<Tensor*> params;
  for (ParameterLayer& layer : model.layers) {
    params.push_back(&layer.conv.weights);
    params.push_back(&layer.conv.bias);
    params.push_back(&layer.bn.gamma);
    params.push_back(&layer.bn.beta);
    params.push_back(&layer.projection.weights);
    params.push_back(&layer.projection.bias);
  }
  params.push_back(&model.head.weights);
  params.push_back(&model.head.bias);
  return params;
}

std::vector<const Tensor*> trainable_parameters(const Model& model) {
  std::vector<const Tensor*> params;
  for (Tensor* t : trainable_parameters(const_cast<Model&>(model))) params.push_back(t);
  return params;
}

int64_t parameter_count(const Model& model) {
  int64_t total = 0;
  for (const Tensor* t : trainable_parameters(model)) total += t->size();
  return total;
}

int64_t state_float_count(const Model& model) {
  int64_t total = parameter_count(model);
  for (const ParameterLayer& layer : model.layers) {
    total += static_cast<int64_t>(layer.bn.running_mean.size());
    total += static_cast<int64_t>(layer.bn.running_var.size());
  }
  return total;
}

Tensor parameter_layer_forward(const Tensor& x, int layer_index, Model& model, Mode mode,
                               Tape* tape) {
  check_layer_index(layer_index);
  ParameterLayer& layer = model.layers[static_cast<size_t>(layer_index)];
  BatchNormParams* bn = mode == Mode::kTrain ? &layer.bn : nullptr;
  return layer_forward_impl(x, layer, bn, tape);
}

Tensor parameter_layer_forward(const Tensor& x, int layer_index, const Model& model, Tape* tape) {
  check_layer_index(layer_index);
  return layer_forward_impl(x, model.layers[static_cast<size_t>(layer_index)], nullptr, tape);
}

Tensor forward(Model& model, const Tensor& batch, Mode mode, Tape* tape, ForwardTrace* trace) {
  std::vector<BatchNormParams*> train_bn;
  if (mode == Mode::kTrain) {
    for (ParameterLayer& layer : model.layers) train_bn.push_back(&layer.bn);
  }
  return forward_impl(model.config, model.layers, model.head, std::move(train_bn), batch, tape,
                      trace);
}

Tensor forward(const Model& model, const Tensor& batch, Tape* tape, ForwardTrace* trace) {
  return forward_impl(model.config, model.layers, model.head, {}, batch, tape, trace);
}

Tensor predict_proba(const Model& model, const Tensor& batch) {
  return softmax_rows(forward(model, batch));
}

}  // namespace dermnet
