#include "dermnet/autodiff.hpp"

#include <atomic>
#include <stdexcept>

namespace dermnet {

namespace {
std::atomic<uint64_t> g_tape_serial{1};
}

Tape::Tape() : id_(g_tape_serial.fetch_add(1)) {}

void Tape::watch(Tensor& t) {
  if (!t.defined()) throw std::invalid_argument("watch: undefined tensor");
  if (consumed_) throw std::logic_error("watch: tape already consumed");
  Node node;
  node.size = t.size();
  node.shape = t.shape();
  node.grad = std::make_shared<std::vector<float>>(static_cast<size_t>(t.size()), 0.0f);
  node.is_leaf = true;
  t.grad_ = node.grad;
  t.node_ = static_cast<int>(nodes_.size());
  t.tape_id_ = id_;
  nodes_.push_back(std::move(node));
}

void Tape::record(Tensor& out, std::vector<int> input_nodes, BackwardFn fn) {
  if (consumed_) throw std::logic_error("record: tape already consumed");
  for (const int n : input_nodes) {
    if (n >= static_cast<int>(nodes_.size())) {
      throw std::logic_error("record: input node out of range");
    }
  }
  Node node;
  node.size = out.size();
  node.shape = out.shape();
  node.fn = std::move(fn);
  out.node_ = static_cast<int>(nodes_.size());
  out.tape_id_ = id_;
  nodes_.push_back(std::move(node));
}

std::span<float> Tape::grad_accum(int node) {
  if (node < 0) return {};
  Node& n = nodes_[static_cast<size_t>(node)];
  if (!n.grad) {
    n.grad = std::make_shared<std::vector<float>>(static_cast<size_t>(n.size), 0.0f);
  }
  return {n.grad->data(), n.grad->size()};
}

std::unordered_map<int, Tensor> Tape::backward(const Tensor& loss) {
  if (consumed_) throw std::logic_error("backward: tape already consumed");
  if (loss.size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_str(loss.shape()));
  }
  const int loss_node = loss.node(*this);
  if (loss_node < 0) {
    throw std::invalid_argument("backward: loss was not computed under this tape");
  }
  consumed_ = true;

  grad_accum(loss_node)[0] = 1.0f;

  // Nodes were appended in execution order, so a reverse scan is a valid
  // reverse-topological walk. Nodes past the loss cannot influence it but are
  // harmless to visit; nodes without an allocated grad never received a
  // contribution and are skipped.
  for (int i = loss_node; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (n.fn && n.grad) {
      n.fn(*this, std::span<const float>(n.grad->data(), n.grad->size()));
    }
  }

  std::unordered_map<int, Tensor> grads;
  for (size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (n.is_leaf) {
      grads.emplace(static_cast<int>(i), Tensor(n.shape, *n.grad));
    }
  }
  return grads;
}

Tensor Tape::grad_of(const Tensor& t) const {
  const int node = t.node(*this);
  if (node < 0) {
    throw std::invalid_argument("grad_of: tensor was not computed under this tape");
  }
  const Node& n = nodes_[static_cast<size_t>(node)];
  if (!n.grad) return Tensor::zeros(n.shape);
  return Tensor(n.shape, *n.grad);
}

}  // namespace dermnet
