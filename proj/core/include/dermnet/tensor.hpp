#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dermnet {

/// Tensor shape: 1 to 4 positive dimensions. Image batches are NCHW.
using Shape = std::vector<int>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

/// Dense row-major float32 tensor. Immutable once constructed: every
/// operation produces a fresh tensor, which makes concurrent inference
/// over shared parameters safe and keeps tape bookkeeping simple.
///
/// A tensor may carry a gradient buffer (filled in by Tape::backward for
/// watched tensors) and a node handle into the tape that recorded it.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<float> values);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, float value);
  static Tensor ones(Shape shape);
  static Tensor scalar(float value);

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int axis) const { return shape_[static_cast<size_t>(axis)]; }
  int64_t size() const { return data_ ? static_cast<int64_t>(data_->size()) : 0; }

  const std::vector<float>& data() const { return *data_; }
  float operator[](int64_t i) const { return (*data_)[static_cast<size_t>(i)]; }
  /// Value of a single-element tensor.
  float item() const;

  bool has_grad() const { return grad_ != nullptr; }
  const std::vector<float>& grad() const { return *grad_; }

  /// Tape node handle, or -1 when this tensor is not tracked by `tape`.
  int node(const Tape& tape) const;

 private:
  Shape shape_;
  std::shared_ptr<const std::vector<float>> data_;
  std::shared_ptr<std::vector<float>> grad_;
  int node_ = -1;
  uint64_t tape_id_ = 0;

  friend class Tape;
};

// ---------------------------------------------------------------------------
// Elementwise arithmetic.
//
// Allowed operand forms: equal shapes, scalar constant, or a rank-1
// per-channel vector broadcast over the batch/spatial axes of a 2-D (N x C)
// or 4-D (N x C x H x W) tensor. Anything else is rejected with both shapes
// in the error message. Results are recorded on `tape` when an input is
// tracked there.
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor sub(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor mul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor add(const Tensor& a, float c, Tape* tape = nullptr);
Tensor sub(const Tensor& a, float c, Tape* tape = nullptr);
/// Multiply by a constant.
Tensor scale(const Tensor& a, float c, Tape* tape = nullptr);

/// 2-D matrix product: (m x k) . (k x n) -> (m x n).
Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);

// ---------------------------------------------------------------------------
// Reductions. `axes` lists the axes to reduce (any order, no duplicates);
// an empty list reduces every axis. Reduced axes are removed, or kept as
// size 1 when keepdims is set; reducing all axes yields a {1} scalar.
// ---------------------------------------------------------------------------

Tensor reduce_sum(const Tensor& x, std::span<const int> axes, bool keepdims = false,
                  Tape* tape = nullptr);
Tensor reduce_mean(const Tensor& x, std::span<const int> axes, bool keepdims = false,
                   Tape* tape = nullptr);
/// Sum over all axes -> {1} scalar.
Tensor sum_all(const Tensor& x, Tape* tape = nullptr);

}  // namespace dermnet
