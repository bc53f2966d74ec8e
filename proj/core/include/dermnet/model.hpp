#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "dermnet/layers.hpp"

namespace dermnet {

/// How parameter layers receive earlier activations. Consecutive is the
/// ordinary residual chain; dense is its unraveled reading where each layer
/// additionally receives every earlier layer's output and the initial input,
/// aligned to the layer's input shape.
enum class SkipMode { kConsecutive, kDense };

struct ModelConfig {
  int input_size = 224;
  int in_channels = 3;
  std::vector<int> layer_channels = {16, 32, 64};
  int num_classes = 2;
  SkipMode skip_mode = SkipMode::kConsecutive;
};

/// Throws unless: exactly 3 parameter layers, input_size divisible by 8,
/// num_classes == 2.
void validate_config(const ModelConfig& config);

/// One parameter layer: 3x3 conv -> batch norm -> 2x2 max pool -> ReLU on the
/// main path, plus a 1x1 stride-2 projection of the layer input on the skip
/// path, summed before the ReLU.
struct ParameterLayer {
  Conv2dParams conv;
  BatchNormParams bn;
  Conv2dParams projection;
};

struct Model {
  ModelConfig config;
  std::vector<ParameterLayer> layers;
  LinearParams head;  // maps globally pooled features to class logits
  std::array<float, 3> channel_means{0.0f, 0.0f, 0.0f};
};

/// Deterministically initialized model: Kaiming fan-in scaled normal weights,
/// zero biases, gamma=1 / beta=0, running stats (0, 1). Same seed, same bytes.
Model build_model(const ModelConfig& config, uint64_t seed);

/// Trainable parameters in serialization order (per layer: conv w/b, bn
/// gamma/beta, projection w/b; then head w/b). Running stats are state, not
/// parameters, and are excluded.
std::vector<Tensor*> trainable_parameters(Model& model);
std::vector<const Tensor*> trainable_parameters(const Model& model);

/// Number of trainable parameter elements.
int64_t parameter_count(const Model& model);
/// Number of float values a checkpoint stores (parameters + running stats).
int64_t state_float_count(const Model& model);

/// Per-layer activations retained by forward(), for Grad-CAM and tests.
struct ForwardTrace {
  std::vector<Tensor> layer_outputs;  // post-ReLU output of each parameter layer
  Tensor pooled;
  Tensor logits;
};

/// Applies parameter layer layer_index to x: ReLU(MaxPool(BN(Conv(x))) +
/// Projection(x)). Halves the spatial dims. Train mode updates the layer's
/// batch-norm running stats.
Tensor parameter_layer_forward(const Tensor& x, int layer_index, Model& model, Mode mode,
                               Tape* tape = nullptr);
Tensor parameter_layer_forward(const Tensor& x, int layer_index, const Model& model,
                               Tape* tape = nullptr);

/// Full forward pass over an N x 3 x S x S batch (already preprocessed):
/// three parameter layers, global average pooling, linear head -> N x 2
/// logits. Train mode mutates batch-norm running stats; the const overload
/// runs in infer mode and never writes to the model.
Tensor forward(Model& model, const Tensor& batch, Mode mode, Tape* tape = nullptr,
               ForwardTrace* trace = nullptr);
Tensor forward(const Model& model, const Tensor& batch, Tape* tape = nullptr,
               ForwardTrace* trace = nullptr);

/// softmax(forward(batch)) in infer mode; column 1 is the melanoma
/// probability.
Tensor predict_proba(const Model& model, const Tensor& batch);

}  // namespace dermnet
