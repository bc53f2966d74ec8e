#include "dermnet/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "dermnet/autodiff.hpp"

namespace dermnet {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (const int d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape shape, std::vector<float> values) : shape_(std::move(shape)) {
  if (shape_.empty() || shape_.size() > 4) {
    throw std::invalid_argument("tensor rank must be 1..4, got shape " + shape_str(shape_));
  }
  for (const int d : shape_) {
    if (d <= 0) {
      throw std::invalid_argument("tensor dimensions must be positive, got shape " +
                                  shape_str(shape_));
    }
  }
  if (shape_numel(shape_) != static_cast<int64_t>(values.size())) {
    throw std::invalid_argument("shape " + shape_str(shape_) + " expects " +
                                std::to_string(shape_numel(shape_)) + " values, got " +
                                std::to_string(values.size()));
  }
  data_ = std::make_shared<const std::vector<float>>(std::move(values));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0f); }

Tensor Tensor::full(Shape shape, float value) {
  const int64_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<float>(static_cast<size_t>(n), value));
}

Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0f); }

Tensor Tensor::scalar(float value) { return Tensor({1}, {value}); }

float Tensor::item() const {
  if (size() != 1) {
    throw std::invalid_argument("item() requires a single-element tensor, got shape " +
                                shape_str(shape_));
  }
  return (*data_)[0];
}

int Tensor::node(const Tape& tape) const {
  return tape_id_ == tape.id() ? node_ : -1;
}

namespace {

void check_defined(const Tensor& t, const char* who) {
  if (!t.defined()) throw std::invalid_argument(std::string(who) + ": undefined tensor");
}

enum class Broadcast { kNone, kChannel };

// Validates elementwise operand shapes. Returns kChannel when b is a rank-1
// per-channel vector applied to a 2-D (N x C) or 4-D (N x C x H x W) a.
Broadcast elementwise_form(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::kNone;
  if (b.rank() == 1 && (a.rank() == 2 || a.rank() == 4) && b.dim(0) == a.dim(1)) {
    return Broadcast::kChannel;
  }
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                              " vs " + shape_str(b.shape()));
}

// Per-element channel index of a 2-D or 4-D tensor.
struct ChannelIndexer {
  int64_t inner = 1;  // H*W for 4-D, 1 for 2-D
  int channels = 1;
  int channel_of(int64_t i) const {
    return static_cast<int>((i / inner) % channels);
  }
};

ChannelIndexer channel_indexer(const Tensor& a) {
  ChannelIndexer ix;
  ix.channels = a.dim(1);
  ix.inner = a.rank() == 4 ? static_cast<int64_t>(a.dim(2)) * a.dim(3) : 1;
  return ix;
}

template <typename F>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, F fn) {
  check_defined(a, name);
  check_defined(b, name);
  const Broadcast form = elementwise_form(a, b, name);
  const auto& av = a.data();
  const auto& bv = b.data();
  std::vector<float> out(av.size());
  if (form == Broadcast::kNone) {
    for (size_t i = 0; i < av.size(); ++i) out[i] = fn(av[i], bv[i]);
  } else {
    const ChannelIndexer ix = channel_indexer(a);
    for (size_t i = 0; i < av.size(); ++i) {
      out[i] = fn(av[i], bv[static_cast<size_t>(ix.channel_of(static_cast<int64_t>(i)))]);
    }
  }
  return Tensor(a.shape(), std::move(out));
}

void accumulate(std::span<float> dst, std::span<const float> src) {
  for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// Accumulates an equal-shape gradient into a per-channel broadcast operand:
// sum over batch/spatial positions of each channel.
void accumulate_channelwise(std::span<float> dst, std::span<const float> src,
                            const ChannelIndexer& ix) {
  for (size_t i = 0; i < src.size(); ++i) {
    dst[static_cast<size_t>(ix.channel_of(static_cast<int64_t>(i)))] += src[i];
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b, Tape* tape) {
  Tensor out = binary_op(a, b, "add", [](float x, float y) { return x + y; });
  if (tape) {
    const int na = tape->node_of(a), nb = tape->node_of(b);
    if (na >= 0 || nb >= 0) {
      const bool channel = a.shape() != b.shape();
      const ChannelIndexer ix = channel ? channel_indexer(a) : ChannelIndexer{};
      tape->record(out, {na, nb}, [na, nb, channel, ix](Tape& t, std::span<const float> g) {
        if (auto ga = t.grad_accum(na); !ga.empty()) accumulate(ga, g);
        if (auto gb = t.grad_accum(nb); !gb.empty()) {
          if (channel) {
            accumulate_channelwise(gb, g, ix);
          } else {
            accumulate(gb, g);
          }
        }
      });
    }
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b, Tape* tape) {
  Tensor out = binary_op(a, b, "sub", [](float x, float y) { return x - y; });
  if (tape) {
    const int na = tape->node_of(a), nb = tape->node_of(b);
    if (na >= 0 || nb >= 0) {
      const bool channel = a.shape() != b.shape();
      const ChannelIndexer ix = channel ? channel_indexer(a) : ChannelIndexer{};
      tape->record(out, {na, nb}, [na, nb, channel, ix](Tape& t, std::span<const float> g) {
        if (auto ga = t.grad_accum(na); !ga.empty()) accumulate(ga, g);
        if (auto gb = t.grad_accum(nb); !gb.empty()) {
          if (channel) {
            for (size_t i = 0; i < g.size(); ++i) {
              gb[static_cast<size_t>(ix.channel_of(static_cast<int64_t>(i)))] -= g[i];
            }
          } else {
            for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
          }
        }
      });
    }
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b, Tape* tape) {
  Tensor out = binary_op(a, b, "mul", [](float x, float y) { return x * y; });
  if (tape) {
    const int na = tape->node_of(a), nb = tape->node_of(b);
    if (na >= 0 || nb >= 0) {
      const bool channel = a.shape() != b.shape();
      const ChannelIndexer ix = channel ? channel_indexer(a) : ChannelIndexer{};
      // Saved inputs: tensors share their value buffers, so this is cheap.
      tape->record(out, {na, nb},
                   [na, nb, channel, ix, a, b](Tape& t, std::span<const float> g) {
                     const auto& av = a.data();
                     const auto& bv = b.data();
                     if (auto ga = t.grad_accum(na); !ga.empty()) {
                       if (channel) {
                         for (size_t i = 0; i < g.size(); ++i) {
                           ga[i] += g[i] * bv[static_cast<size_t>(
                                        ix.channel_of(static_cast<int64_t>(i)))];
                         }
                       } else {
                         for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
                       }
                     }
                     if (auto gb = t.grad_accum(nb); !gb.empty()) {
                       if (channel) {
                         for (size_t i = 0; i < g.size(); ++i) {
                           gb[static_cast<size_t>(ix.channel_of(static_cast<int64_t>(i)))] +=
                               g[i] * av[i];
                         }
                       } else {
                         for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
                       }
                     }
                   });
    }
  }
  return out;
}

namespace {

Tensor affine_constant(const Tensor& a, float mul_c, float add_c, const char* name,
                       Tape* tape) {
  check_defined(a, name);
  const auto& av = a.data();
  std::vector<float> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] * mul_c + add_c;
  Tensor result(a.shape(), std::move(out));
  if (tape) {
    const int na = tape->node_of(a);
    if (na >= 0) {
      tape->record(result, {na}, [na, mul_c](Tape& t, std::span<const float> g) {
        if (auto ga = t.grad_accum(na); !ga.empty()) {
          for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mul_c;
        }
      });
    }
  }
  return result;
}

}  // namespace

Tensor add(const Tensor& a, float c, Tape* tape) {
  return affine_constant(a, 1.0f, c, "add", tape);
}

Tensor sub(const Tensor& a, float c, Tape* tape) {
  return affine_constant(a, 1.0f, -c, "sub", tape);
}

Tensor scale(const Tensor& a, float c, Tape* tape) {
  return affine_constant(a, c, 0.0f, "scale", tape);
}

namespace {

// C (m x n) = A (m x k) . B (k x n). Plain ikj loop; the j-inner runs over
// contiguous rows and vectorizes.
void gemm_nn(const float* a, const float* b, float* c, int m, int k, int n) {
  std::fill(c, c + static_cast<size_t>(m) * n, 0.0f);
  for (int i = 0; i < m; ++i) {
    const float* arow = a + static_cast<size_t>(i) * k;
    float* crow = c + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const float av = arow[p];
      const float* brow = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C (m x n) = A (m x k) . B^T where B is (n x k). Row-dot-row kernel.
void gemm_nt(const float* a, const float* b, float* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const float* arow = a + static_cast<size_t>(i) * k;
    float* crow = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const float* brow = b + static_cast<size_t>(j) * k;
      float acc = 0.0f;
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] = acc;
    }
  }
}

// C (k x n) += A^T . B where A is (m x k), B is (m x n).
void gemm_tn_accum(const float* a, const float* b, float* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const float* arow = a + static_cast<size_t>(i) * k;
    const float* brow = b + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const float av = arow[p];
      float* crow = c + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

namespace detail {
// Raw kernels shared with the layer implementations.
void gemm_nn_raw(const float* a, const float* b, float* c, int m, int k, int n) {
  gemm_nn(a, b, c, m, k, n);
}
void gemm_nt_raw(const float* a, const float* b, float* c, int m, int k, int n) {
  gemm_nt(a, b, c, m, k, n);
}
void gemm_tn_accum_raw(const float* a, const float* b, float* c, int m, int k, int n) {
  gemm_tn_accum(a, b, c, m, k, n);
}
}  // namespace detail

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape) {
  check_defined(a, "matmul");
  check_defined(b, "matmul");
  if (a.rank() != 2 || b.rank() != 2) {
    throw std::invalid_argument("matmul requires 2-D operands, got " + shape_str(a.shape()) +
                                " and " + shape_str(b.shape()));
  }
  if (a.dim(1) != b.dim(0)) {
    throw std::invalid_argument("matmul inner dimensions disagree: " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<float> out(static_cast<size_t>(m) * n);
  gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  Tensor result({m, n}, std::move(out));

  if (tape) {
    const int na = tape->node_of(a), nb = tape->node_of(b);
    if (na >= 0 || nb >= 0) {
      tape->record(result, {na, nb},
                   [na, nb, a, b, m, k, n](Tape& t, std::span<const float> g) {
                     // grad_a = g . b^T ; grad_b = a^T . g
                     if (auto ga = t.grad_accum(na); !ga.empty()) {
                       std::vector<float> tmp(static_cast<size_t>(m) * k);
                       gemm_nt(g.data(), b.data().data(), tmp.data(), m, n, k);
                       accumulate(ga, tmp);
                     }
                     if (auto gb = t.grad_accum(nb); !gb.empty()) {
                       gemm_tn_accum(a.data().data(), g.data(), gb.data(), m, k, n);
                     }
                   });
    }
  }
  return result;
}

namespace {

struct ReducePlan {
  Shape out_shape;        // with keepdims applied
  std::vector<bool> reduced;
  int64_t count = 1;      // number of elements folded into each output
};

ReducePlan make_reduce_plan(const Tensor& x, std::span<const int> axes, bool keepdims) {
  ReducePlan plan;
  plan.reduced.assign(static_cast<size_t>(x.rank()), false);
  if (axes.empty()) {
    std::fill(plan.reduced.begin(), plan.reduced.end(), true);
  } else {
    for (const int axis : axes) {
      if (axis < 0 || axis >= x.rank()) {
        throw std::invalid_argument("reduce axis " + std::to_string(axis) +
                                    " out of range for shape " + shape_str(x.shape()));
      }
      if (plan.reduced[static_cast<size_t>(axis)]) {
        throw std::invalid_argument("reduce axis " + std::to_string(axis) + " repeated");
      }
      plan.reduced[static_cast<size_t>(axis)] = true;
    }
  }
  for (int d = 0; d < x.rank(); ++d) {
    if (plan.reduced[static_cast<size_t>(d)]) {
      plan.count *= x.dim(d);
      if (keepdims) plan.out_shape.push_back(1);
    } else {
      plan.out_shape.push_back(x.dim(d));
    }
  }
  if (plan.out_shape.empty()) plan.out_shape.push_back(1);  // full reduction -> {1}
  return plan;
}

// Maps each input flat index to its output flat index under the plan.
std::vector<int64_t> reduce_index_map(const Tensor& x, const ReducePlan& plan) {
  const int rank = x.rank();
  std::vector<int64_t> in_stride(static_cast<size_t>(rank)), out_stride;
  int64_t s = 1;
  for (int d = rank - 1; d >= 0; --d) {
    in_stride[static_cast<size_t>(d)] = s;
    s *= x.dim(d);
  }
  // Strides of the kept axes in the output layout.
  std::vector<int64_t> kept_stride(static_cast<size_t>(rank), 0);
  int64_t os = 1;
  for (int d = rank - 1; d >= 0; --d) {
    if (!plan.reduced[static_cast<size_t>(d)]) {
      kept_stride[static_cast<size_t>(d)] = os;
      os *= x.dim(d);
    }
  }
  std::vector<int64_t> map(static_cast<size_t>(x.size()));
  for (int64_t i = 0; i < x.size(); ++i) {
    int64_t rem = i, out = 0;
    for (int d = 0; d < rank; ++d) {
      const int64_t coord = rem / in_stride[static_cast<size_t>(d)];
      rem %= in_stride[static_cast<size_t>(d)];
      out += coord * kept_stride[static_cast<size_t>(d)];
    }
    map[static_cast<size_t>(i)] = out;
  }
  return map;
}

Tensor reduce_impl(const Tensor& x, std::span<const int> axes, bool keepdims, bool mean,
                   Tape* tape) {
  check_defined(x, "reduce");
  if (x.size() == 0) throw std::invalid_argument("reduce: empty tensor");
  const ReducePlan plan = make_reduce_plan(x, axes, keepdims);
  const auto map = reduce_index_map(x, plan);
  std::vector<float> out(static_cast<size_t>(shape_numel(plan.out_shape)), 0.0f);
  const auto& xv = x.data();
  for (size_t i = 0; i < xv.size(); ++i) out[static_cast<size_t>(map[i])] += xv[i];
  const float inv = mean ? 1.0f / static_cast<float>(plan.count) : 1.0f;
  if (mean) {
    for (float& v : out) v *= inv;
  }
  Tensor result(plan.out_shape, std::move(out));

  if (tape) {
    const int nx = tape->node_of(x);
    if (nx >= 0) {
      // Backward broadcasts the output grad back over the reduced axes.
      auto shared_map = std::make_shared<std::vector<int64_t>>(map);
      tape->record(result, {nx}, [nx, shared_map, inv](Tape& t, std::span<const float> g) {
        if (auto gx = t.grad_accum(nx); !gx.empty()) {
          const auto& m = *shared_map;
          for (size_t i = 0; i < gx.size(); ++i) {
            gx[i] += g[static_cast<size_t>(m[i])] * inv;
          }
        }
      });
    }
  }
  return result;
}

}  // namespace

Tensor reduce_sum(const Tensor& x, std::span<const int> axes, bool keepdims, Tape* tape) {
  return reduce_impl(x, axes, keepdims, /*mean=*/false, tape);
}

Tensor reduce_mean(const Tensor& x, std::span<const int> axes, bool keepdims, Tape* tape) {
  return reduce_impl(x, axes, keepdims, /*mean=*/true, tape);
}

Tensor sum_all(const Tensor& x, Tape* tape) {
  return reduce_sum(x, {}, /*keepdims=*/false, tape);
}

}  // namespace dermnet
