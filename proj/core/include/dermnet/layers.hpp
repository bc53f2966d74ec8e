#pragma once

#include <span>
#include <vector>

#include "dermnet/autodiff.hpp"
#include "dermnet/tensor.hpp"

namespace dermnet {

enum class Mode { kTrain, kInfer };

/// Convolution parameters. Weights are out_ch x in_ch x kh x kw.
struct Conv2dParams {
  Tensor weights;
  Tensor bias;  // out_ch
  int stride = 1;
  int padding = 0;
};

/// Per-channel batch normalization state. gamma/beta are learned; the
/// running statistics feed inference and are updated by train-mode forwards
/// via an exponential moving average with the given momentum.
struct BatchNormParams {
  Tensor gamma;
  Tensor beta;
  std::vector<float> running_mean;
  std::vector<float> running_var;
  float eps = 1e-5f;
  float momentum = 0.1f;
};

struct LinearParams {
  Tensor weights;  // out x in
  Tensor bias;     // out
};

/// Cross-correlation (no kernel flip) over NCHW input.
/// Output spatial size: (H + 2*padding - kh) / stride + 1.
Tensor conv2d(const Tensor& x, const Conv2dParams& p, Tape* tape = nullptr);

/// Train mode normalizes by batch statistics over the (batch, spatial) axes
/// per channel and updates p's running stats; infer mode uses the running
/// stats only and leaves p untouched.
Tensor batchnorm2d(const Tensor& x, BatchNormParams& p, Mode mode, Tape* tape = nullptr);
/// Inference-only overload for shared read-only parameters.
Tensor batchnorm2d(const Tensor& x, const BatchNormParams& p, Tape* tape = nullptr);

/// 2x2 max pooling with stride 2. Spatial dims must be even. Backward routes
/// each gradient to the first max position in row-major window scan order.
Tensor maxpool2d(const Tensor& x, Tape* tape = nullptr);

/// max(0, x); subgradient at 0 is 0.
Tensor relu(const Tensor& x, Tape* tape = nullptr);

/// x . W^T + bias over rows of a 2-D (N x in) input.
Tensor linear(const Tensor& x, const LinearParams& p, Tape* tape = nullptr);

/// Mean over the batch of weighted -log softmax(logits)[label], computed in
/// the max-subtraction stable form. class_weights is per-class (size K) or
/// empty for uniform weighting. Returns a {1} scalar.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels,
                             std::span<const float> class_weights = {},
                             Tape* tape = nullptr);

/// window x window average pooling with stride = window.
Tensor avgpool2d(const Tensor& x, int window, Tape* tape = nullptr);

/// Zero-pads the channel axis of an NCHW tensor up to out_channels.
Tensor pad_channels(const Tensor& x, int out_channels, Tape* tape = nullptr);

/// Row-wise softmax of 2-D logits; inference only (not recorded).
Tensor softmax_rows(const Tensor& logits);

}  // namespace dermnet
