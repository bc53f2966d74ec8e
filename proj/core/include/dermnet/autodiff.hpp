#pragma once

#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "dermnet/tensor.hpp"

namespace dermnet {

/// Reverse-mode gradient tape.
///
/// Operations append nodes in execution order, so node order is already
/// topological. backward() seeds the loss gradient with 1 and replays the
/// recorded closures in reverse, accumulating (never overwriting) into each
/// input's gradient buffer; shared inputs such as skip connections therefore
/// sum their contributions. A tape serves exactly one backward pass and is
/// single-threaded; run concurrent gradient computations on private tapes.
class Tape {
 public:
  /// Backward closure: reads the node's output gradient and accumulates into
  /// input node buffers obtained via Tape::grad_accum.
  using BackwardFn = std::function<void(Tape&, std::span<const float> out_grad)>;

  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Register a leaf (typically a parameter or an input image). Allocates a
  /// zeroed gradient buffer on the tensor itself so the caller can read
  /// t.grad() after backward. Gradients of watched tensors that the loss
  /// never touches stay zero.
  void watch(Tensor& t);

  /// Record an operation that produced `out` from the given input nodes
  /// (-1 entries mark untracked inputs). Assigns `out` a node handle.
  void record(Tensor& out, std::vector<int> input_nodes, BackwardFn fn);

  int node_of(const Tensor& t) const { return t.node(*this); }
  bool tracks(const Tensor& t) const { return t.node(*this) >= 0; }

  /// Gradient accumulation buffer for a node, allocated zeroed on first use.
  /// Empty span for node < 0, so closures can unconditionally accumulate.
  std::span<float> grad_accum(int node);

  /// Run reverse accumulation from a scalar loss computed under this tape.
  /// Returns the gradients of all watched leaves keyed by node handle, and
  /// fills each watched tensor's own grad buffer. Consumes the tape: no
  /// further record/backward calls, but recorded gradients stay readable.
  std::unordered_map<int, Tensor> backward(const Tensor& loss);

  bool consumed() const { return consumed_; }

  /// Gradient of any tracked tensor after backward (e.g. an intermediate
  /// activation for Grad-CAM). Zeros if the loss does not depend on it.
  Tensor grad_of(const Tensor& t) const;

  size_t node_count() const { return nodes_.size(); }
  uint64_t id() const { return id_; }

 private:
  struct Node {
    int64_t size = 0;
    Shape shape;
    std::shared_ptr<std::vector<float>> grad;  // lazily allocated
    BackwardFn fn;                             // empty for leaves
    bool is_leaf = false;
  };

  uint64_t id_;
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

}  // namespace dermnet
