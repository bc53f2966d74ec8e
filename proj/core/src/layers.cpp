#include "dermnet/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "kernels.hpp"

namespace dermnet {

namespace {

using detail::gemm_nn_raw;
using detail::gemm_nt_raw;
using detail::gemm_tn_accum_raw;

void require_4d(const Tensor& x, const char* who) {
  if (!x.defined() || x.rank() != 4) {
    throw std::invalid_argument(std::string(who) + ": expected 4-D NCHW input, got " +
                                (x.defined() ? shape_str(x.shape()) : "undefined"));
  }
}

struct ConvDims {
  int batch, in_ch, in_h, in_w;
  int out_ch, kh, kw, stride, pad;
  int out_h, out_w;
  int patch() const { return in_ch * kh * kw; }
  int positions() const { return out_h * out_w; }
};

ConvDims conv_dims(const Tensor& x, const Conv2dParams& p) {
  require_4d(x, "conv2d");
  if (!p.weights.defined() || p.weights.rank() != 4) {
    throw std::invalid_argument("conv2d: weights must be 4-D out x in x kh x kw");
  }
  ConvDims d;
  d.batch = x.dim(0);
  d.in_ch = x.dim(1);
  d.in_h = x.dim(2);
  d.in_w = x.dim(3);
  d.out_ch = p.weights.dim(0);
  d.kh = p.weights.dim(2);
  d.kw = p.weights.dim(3);
  d.stride = p.stride;
  d.pad = p.padding;
  if (p.weights.dim(1) != d.in_ch) {
    throw std::invalid_argument("conv2d: input has " + std::to_string(d.in_ch) +
                                " channels but weights expect " +
                                std::to_string(p.weights.dim(1)));
  }
  if (!p.bias.defined() || p.bias.rank() != 1 || p.bias.dim(0) != d.out_ch) {
    throw std::invalid_argument("conv2d: bias must be 1-D of size out_ch");
  }
  if (d.stride <= 0 || d.pad < 0) {
    throw std::invalid_argument("conv2d: stride must be positive, padding non-negative");
  }
  d.out_h = (d.in_h + 2 * d.pad - d.kh) / d.stride + 1;
  d.out_w = (d.in_w + 2 * d.pad - d.kw) / d.stride + 1;
  if (d.in_h + 2 * d.pad < d.kh || d.in_w + 2 * d.pad < d.kw || d.out_h <= 0 ||
      d.out_w <= 0) {
    throw std::invalid_argument("conv2d: non-positive output size for input " +
                                shape_str(x.shape()) + " with kernel " +
                                shape_str(p.weights.shape()));
  }
  return d;
}

// Unpacks one sample's patches into cols (patch x positions), zero-filling
// out-of-bounds taps.
void im2col(const float* x, const ConvDims& d, float* cols) {
  const int positions = d.positions();
  for (int c = 0; c < d.in_ch; ++c) {
    const float* xc = x + static_cast<size_t>(c) * d.in_h * d.in_w;
    for (int ki = 0; ki < d.kh; ++ki) {
      for (int kj = 0; kj < d.kw; ++kj) {
        float* row = cols + static_cast<size_t>((c * d.kh + ki) * d.kw + kj) * positions;
        for (int oh = 0; oh < d.out_h; ++oh) {
          const int ih = oh * d.stride - d.pad + ki;
          float* out = row + static_cast<size_t>(oh) * d.out_w;
          if (ih < 0 || ih >= d.in_h) {
            std::fill(out, out + d.out_w, 0.0f);
            continue;
          }
          const float* xrow = xc + static_cast<size_t>(ih) * d.in_w;
          for (int ow = 0; ow < d.out_w; ++ow) {
            const int iw = ow * d.stride - d.pad + kj;
            out[ow] = (iw >= 0 && iw < d.in_w) ? xrow[iw] : 0.0f;
          }
        }
      }
    }
  }
}

// Scatter-add inverse of im2col.
void col2im_accum(const float* cols, const ConvDims& d, float* x) {
  const int positions = d.positions();
  for (int c = 0; c < d.in_ch; ++c) {
    float* xc = x + static_cast<size_t>(c) * d.in_h * d.in_w;
    for (int ki = 0; ki < d.kh; ++ki) {
      for (int kj = 0; kj < d.kw; ++kj) {
        const float* row = cols + static_cast<size_t>((c * d.kh + ki) * d.kw + kj) * positions;
        for (int oh = 0; oh < d.out_h; ++oh) {
          const int ih = oh * d.stride - d.pad + ki;
          if (ih < 0 || ih >= d.in_h) continue;
          const float* in = row + static_cast<size_t>(oh) * d.out_w;
          float* xrow = xc + static_cast<size_t>(ih) * d.in_w;
          for (int ow = 0; ow < d.out_w; ++ow) {
            const int iw = ow * d.stride - d.pad + kj;
            if (iw >= 0 && iw < d.in_w) xrow[iw] += in[ow];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Conv2dParams& p, Tape* tape) {
  const ConvDims d = conv_dims(x, p);
  const int patch = d.patch();
  const int positions = d.positions();
  const size_t sample_out = static_cast<size_t>(d.out_ch) * positions;
  const size_t sample_in = static_cast<size_t>(d.in_ch) * d.in_h * d.in_w;

  std::vector<float> out(static_cast<size_t>(d.batch) * sample_out);
  std::vector<float> cols(static_cast<size_t>(patch) * positions);
  const float* w = p.weights.data().data();
  const float* b = p.bias.data().data();
  for (int n = 0; n < d.batch; ++n) {
    im2col(x.data().data() + static_cast<size_t>(n) * sample_in, d, cols.data());
    float* y = out.data() + static_cast<size_t>(n) * sample_out;
    gemm_nn_raw(w, cols.data(), y, d.out_ch, patch, positions);
    for (int o = 0; o < d.out_ch; ++o) {
      float* row = y + static_cast<size_t>(o) * positions;
      for (int i = 0; i < positions; ++i) row[i] += b[o];
    }
  }
  Tensor result({d.batch, d.out_ch, d.out_h, d.out_w}, std::move(out));

  if (tape) {
    const int nx = tape->node_of(x);
    const int nw = tape->node_of(p.weights);
    const int nb = tape->node_of(p.bias);
    if (nx >= 0 || nw >= 0 || nb >= 0) {
      const Tensor saved_x = x;
      const Tensor saved_w = p.weights;
      tape->record(result, {nx, nw, nb},
                   [nx, nw, nb, saved_x, saved_w, d](Tape& t, std::span<const float> g) {
                     const int patch = d.patch();
                     const int positions = d.positions();
                     const size_t sample_out = static_cast<size_t>(d.out_ch) * positions;
                     const size_t sample_in =
                         static_cast<size_t>(d.in_ch) * d.in_h * d.in_w;
                     auto gx = t.grad_accum(nx);
                     auto gw = t.grad_accum(nw);
                     auto gb = t.grad_accum(nb);
                     std::vector<float> cols(static_cast<size_t>(patch) * positions);
                     std::vector<float> dcols;
                     std::vector<float> dw_tmp;
                     if (!gx.empty()) dcols.resize(cols.size());
                     if (!gw.empty()) dw_tmp.resize(static_cast<size_t>(d.out_ch) * patch);
                     for (int n = 0; n < d.batch; ++n) {
                       const float* gy = g.data() + static_cast<size_t>(n) * sample_out;
                       if (!gb.empty()) {
                         for (int o = 0; o < d.out_ch; ++o) {
                           const float* row = gy + static_cast<size_t>(o) * positions;
                           float acc = 0.0f;
                           for (int i = 0; i < positions; ++i) acc += row[i];
                           gb[static_cast<size_t>(o)] += acc;
                         }
                       }
                       if (!gw.empty() || !gx.empty()) {
                         if (!gw.empty()) {
                           // dW += gy . cols^T, with cols recomputed from x.
                           im2col(saved_x.data().data() + static_cast<size_t>(n) * sample_in,
                                  d, cols.data());
                           gemm_nt_raw(gy, cols.data(), dw_tmp.data(), d.out_ch, positions,
                                       patch);
                           for (size_t i = 0; i < dw_tmp.size(); ++i) gw[i] += dw_tmp[i];
                         }
                         if (!gx.empty()) {
                           // dcols = W^T . gy, then scatter back into dx.
                           std::fill(dcols.begin(), dcols.end(), 0.0f);
                           gemm_tn_accum_raw(saved_w.data().data(), gy, dcols.data(),
                                             d.out_ch, patch, positions);
                           col2im_accum(dcols.data(), d,
                                        gx.data() + static_cast<size_t>(n) * sample_in);
                         }
                       }
                     }
                   });
    }
  }
  return result;
}

namespace {

Tensor batchnorm_affine(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                        std::span<const float> mean, std::span<const float> invstd,
                        Tape* tape, int ngamma, int nbeta, int nx) {
  const int batch = x.dim(0), channels = x.dim(1);
  const int64_t spatial = static_cast<int64_t>(x.dim(2)) * x.dim(3);
  const auto& xv = x.data();
  const auto& gv = gamma.data();
  const auto& bv = beta.data();
  std::vector<float> out(xv.size());
  for (int n = 0; n < batch; ++n) {
    for (int c = 0; c < channels; ++c) {
      const size_t base = (static_cast<size_t>(n) * channels + c) * spatial;
      const float a = gv[static_cast<size_t>(c)] * invstd[static_cast<size_t>(c)];
      const float shift = bv[static_cast<size_t>(c)] -
                          mean[static_cast<size_t>(c)] * a;
      for (int64_t i = 0; i < spatial; ++i) {
        out[base + static_cast<size_t>(i)] = xv[base + static_cast<size_t>(i)] * a + shift;
      }
    }
  }
  Tensor result(x.shape(), std::move(out));
  if (tape && (nx >= 0 || ngamma >= 0 || nbeta >= 0)) {
    const Tensor saved_x = x;
    std::vector<float> saved_mean(mean.begin(), mean.end());
    std::vector<float> saved_invstd(invstd.begin(), invstd.end());
    const Tensor saved_gamma = gamma;
    tape->record(result, {nx, ngamma, nbeta},
                 [nx, ngamma, nbeta, saved_x, saved_gamma, saved_mean, saved_invstd, batch,
                  channels, spatial](Tape& t, std::span<const float> g) {
                   auto gx = t.grad_accum(nx);
                   auto gg = t.grad_accum(ngamma);
                   auto gb = t.grad_accum(nbeta);
                   const auto& xv = saved_x.data();
                   const auto& gv = saved_gamma.data();
                   for (int c = 0; c < channels; ++c) {
                     const float a =
                         gv[static_cast<size_t>(c)] * saved_invstd[static_cast<size_t>(c)];
                     for (int n = 0; n < batch; ++n) {
                       const size_t base = (static_cast<size_t>(n) * channels + c) * spatial;
                       for (int64_t i = 0; i < spatial; ++i) {
                         const size_t k = base + static_cast<size_t>(i);
                         if (!gx.empty()) gx[k] += g[k] * a;
                         if (!gg.empty()) {
                           gg[static_cast<size_t>(c)] +=
                               g[k] * (xv[k] - saved_mean[static_cast<size_t>(c)]) *
                               saved_invstd[static_cast<size_t>(c)];
                         }
                         if (!gb.empty()) gb[static_cast<size_t>(c)] += g[k];
                       }
                     }
                   }
                 });
  }
  return result;
}

void check_bn(const Tensor& x, const BatchNormParams& p) {
  require_4d(x, "batchnorm2d");
  const int channels = x.dim(1);
  if (!p.gamma.defined() || p.gamma.size() != channels || !p.beta.defined() ||
      p.beta.size() != channels ||
      p.running_mean.size() != static_cast<size_t>(channels) ||
      p.running_var.size() != static_cast<size_t>(channels)) {
    throw std::invalid_argument("batchnorm2d: parameter size mismatch for " +
                                std::to_string(channels) + " channels");
  }
  if (!(p.eps > 0.0f)) throw std::invalid_argument("batchnorm2d: eps must be positive");
}

}  // namespace

Tensor batchnorm2d(const Tensor& x, const BatchNormParams& p, Tape* tape) {
  check_bn(x, p);
  const int channels = x.dim(1);
  std::vector<float> invstd(static_cast<size_t>(channels));
  for (int c = 0; c < channels; ++c) {
    invstd[static_cast<size_t>(c)] =
        1.0f / std::sqrt(p.running_var[static_cast<size_t>(c)] + p.eps);
  }
  const int nx = tape ? tape->node_of(x) : -1;
  const int ng = tape ? tape->node_of(p.gamma) : -1;
  const int nb = tape ? tape->node_of(p.beta) : -1;
  return batchnorm_affine(x, p.gamma, p.beta, p.running_mean, invstd, tape, ng, nb, nx);
}

Tensor batchnorm2d(const Tensor& x, BatchNormParams& p, Mode mode, Tape* tape) {
  if (mode == Mode::kInfer) {
    return batchnorm2d(x, static_cast<const BatchNormParams&>(p), tape);
  }
  check_bn(x, p);
  const int batch = x.dim(0), channels = x.dim(1);
  const int64_t spatial = static_cast<int64_t>(x.dim(2)) * x.dim(3);
  const int64_t count = static_cast<int64_t>(batch) * spatial;
  const auto& xv = x.data();

  // Batch statistics per channel over (batch, spatial); biased variance.
  std::vector<float> mean(static_cast<size_t>(channels), 0.0f);
  std::vector<float> var(static_cast<size_t>(channels), 0.0f);
  for (int c = 0; c < channels; ++c) {
    double acc = 0.0;
    for (int n = 0; n < batch; ++n) {
      const size_t base = (static_cast<size_t>(n) * channels + c) * spatial;
      for (int64_t i = 0; i < spatial; ++i) acc += xv[base + static_cast<size_t>(i)];
    }
    const float mu = static_cast<float>(acc / static_cast<double>(count));
    mean[static_cast<size_t>(c)] = mu;
    double vacc = 0.0;
    for (int n = 0; n < batch; ++n) {
      const size_t base = (static_cast<size_t>(n) * channels + c) * spatial;
      for (int64_t i = 0; i < spatial; ++i) {
        const double dv = xv[base + static_cast<size_t>(i)] - mu;
        vacc += dv * dv;
      }
    }
    var[static_cast<size_t>(c)] = static_cast<float>(vacc / static_cast<double>(count));
  }

  std::vector<float> invstd(static_cast<size_t>(channels));
  for (int c = 0; c < channels; ++c) {
    invstd[static_cast<size_t>(c)] = 1.0f / std::sqrt(var[static_cast<size_t>(c)] + p.eps);
  }

  for (int c = 0; c < channels; ++c) {
    p.running_mean[static_cast<size_t>(c)] =
        (1.0f - p.momentum) * p.running_mean[static_cast<size_t>(c)] +
        p.momentum * mean[static_cast<size_t>(c)];
    p.running_var[static_cast<size_t>(c)] =
        (1.0f - p.momentum) * p.running_var[static_cast<size_t>(c)] +
        p.momentum * var[static_cast<size_t>(c)];
  }

  const auto& gv = p.gamma.data();
  const auto& bv = p.beta.data();
  std::vector<float> out(xv.size());
  std::vector<float> xhat(xv.size());
  for (int n = 0; n < batch; ++n) {
    for (int c = 0; c < channels; ++c) {
      const size_t base = (static_cast<size_t>(n) * channels + c) * spatial;
      const float mu = mean[static_cast<size_t>(c)];
      const float is = invstd[static_cast<size_t>(c)];
      const float gamma = gv[static_cast<size_t>(c)];
      const float beta = bv[static_cast<size_t>(c)];
      for (int64_t i = 0; i < spatial; ++i) {
        const size_t k = base + static_cast<size_t>(i);
        const float h = (xv[k] - mu) * is;
        xhat[k] = h;
        out[k] = gamma * h + beta;
      }
    }
  }
  Tensor result(x.shape(), std::move(out));

  if (tape) {
    const int nx = tape->node_of(x);
    const int ng = tape->node_of(p.gamma);
    const int nb = tape->node_of(p.beta);
    if (nx >= 0 || ng >= 0 || nb >= 0) {
      auto saved_xhat = std::make_shared<std::vector<float>>(std::move(xhat));
      auto saved_invstd = std::make_shared<std::vector<float>>(std::move(invstd));
      const Tensor saved_gamma = p.gamma;
      tape->record(
          result, {nx, ng, nb},
          [nx, ng, nb, saved_xhat, saved_invstd, saved_gamma, batch, channels, spatial,
           count](Tape& t, std::span<const float> g) {
            auto gx = t.grad_accum(nx);
            auto gg = t.grad_accum(ng);
            auto gb = t.grad_accum(nb);
            const auto& xh = *saved_xhat;
            const auto& gv = saved_gamma.data();
            for (int c = 0; c < channels; ++c) {
              // Channel sums of g and g*xhat feed both the parameter grads
              // and the batch-statistics terms of dx.
              double sum_g = 0.0, sum_gx = 0.0;
              for (int n = 0; n < batch; ++n) {
                const size_t base = (static_cast<size_t>(n) * channels + c) * spatial;
                for (int64_t i = 0; i < spatial; ++i) {
                  const size_t k = base + static_cast<size_t>(i);
                  sum_g += g[k];
                  sum_gx += static_cast<double>(g[k]) * xh[k];
                }
              }
              if (!gg.empty()) gg[static_cast<size_t>(c)] += static_cast<float>(sum_gx);
              if (!gb.empty()) gb[static_cast<size_t>(c)] += static_cast<float>(sum_g);
              if (!gx.empty()) {
                const float a = gv[static_cast<size_t>(c)] *
                                (*saved_invstd)[static_cast<size_t>(c)] /
                                static_cast<float>(count);
                const float m = static_cast<float>(count);
                const float sg = static_cast<float>(sum_g);
                const float sgx = static_cast<float>(sum_gx);
                for (int n = 0; n < batch; ++n) {
                  const size_t base = (static_cast<size_t>(n) * channels + c) * spatial;
                  for (int64_t i = 0; i < spatial; ++i) {
                    const size_t k = base + static_cast<size_t>(i);
                    gx[k] += a * (m * g[k] - sg - xh[k] * sgx);
                  }
                }
              }
            }
          });
    }
  }
  return result;
}

Tensor maxpool2d(const Tensor& x, Tape* tape) {
  require_4d(x, "maxpool2d");
  const int batch = x.dim(0), channels = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw std::invalid_argument("maxpool2d: spatial dims must be even, got " +
                                shape_str(x.shape()));
  }
  const int oh = h / 2, ow = w / 2;
  const auto& xv = x.data();
  std::vector<float> out(static_cast<size_t>(batch) * channels * oh * ow);
  // Flat input offset of each window max; ties resolve to the first position
  // in row-major scan order.
  auto argmax = std::make_shared<std::vector<int64_t>>(out.size());
  size_t o = 0;
  for (int n = 0; n < batch; ++n) {
    for (int c = 0; c < channels; ++c) {
      const size_t plane = (static_cast<size_t>(n) * channels + c) * h * w;
      for (int i = 0; i < oh; ++i) {
        for (int j = 0; j < ow; ++j) {
          const size_t p00 = plane + static_cast<size_t>(2 * i) * w + 2 * j;
          size_t best = p00;
          float best_v = xv[p00];
          const size_t candidates[3] = {p00 + 1, p00 + static_cast<size_t>(w),
                                        p00 + static_cast<size_t>(w) + 1};
          for (const size_t cidx : candidates) {
            if (xv[cidx] > best_v) {
              best_v = xv[cidx];
              best = cidx;
            }
          }
          out[o] = best_v;
          (*argmax)[o] = static_cast<int64_t>(best);
          ++o;
        }
      }
    }
  }
  Tensor result({batch, channels, oh, ow}, std::move(out));

  if (tape) {
    const int nx = tape->node_of(x);
    if (nx >= 0) {
      tape->record(result, {nx}, [nx, argmax](Tape& t, std::span<const float> g) {
        if (auto gx = t.grad_accum(nx); !gx.empty()) {
          const auto& am = *argmax;
          for (size_t i = 0; i < g.size(); ++i) gx[static_cast<size_t>(am[i])] += g[i];
        }
      });
    }
  }
  return result;
}

Tensor relu(const Tensor& x, Tape* tape) {
  if (!x.defined()) throw std::invalid_argument("relu: undefined tensor");
  const auto& xv = x.data();
  std::vector<float> out(xv.size());
  for (size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] > 0.0f ? xv[i] : 0.0f;
  Tensor result(x.shape(), std::move(out));
  if (tape) {
    const int nx = tape->node_of(x);
    if (nx >= 0) {
      const Tensor saved_x = x;
      tape->record(result, {nx}, [nx, saved_x](Tape& t, std::span<const float> g) {
        if (auto gx = t.grad_accum(nx); !gx.empty()) {
          const auto& xv = saved_x.data();
          for (size_t i = 0; i < g.size(); ++i) {
            if (xv[i] > 0.0f) gx[i] += g[i];
          }
        }
      });
    }
  }
  return result;
}

Tensor linear(const Tensor& x, const LinearParams& p, Tape* tape) {
  if (!x.defined() || x.rank() != 2) {
    throw std::invalid_argument("linear: expected 2-D input, got " +
                                (x.defined() ? shape_str(x.shape()) : "undefined"));
  }
  if (!p.weights.defined() || p.weights.rank() != 2) {
    throw std::invalid_argument("linear: weights must be 2-D out x in");
  }
  const int batch = x.dim(0), in = x.dim(1), out_dim = p.weights.dim(0);
  if (p.weights.dim(1) != in) {
    throw std::invalid_argument("linear: feature dim mismatch, input " +
                                shape_str(x.shape()) + " vs weights " +
                                shape_str(p.weights.shape()));
  }
  if (!p.bias.defined() || p.bias.size() != out_dim) {
    throw std::invalid_argument("linear: bias must have size out");
  }
  std::vector<float> out(static_cast<size_t>(batch) * out_dim);
  gemm_nt_raw(x.data().data(), p.weights.data().data(), out.data(), batch, in, out_dim);
  const auto& bv = p.bias.data();
  for (int n = 0; n < batch; ++n) {
    float* row = out.data() + static_cast<size_t>(n) * out_dim;
    for (int j = 0; j < out_dim; ++j) row[j] += bv[static_cast<size_t>(j)];
  }
  Tensor result({batch, out_dim}, std::move(out));

  if (tape) {
    const int nx = tape->node_of(x);
    const int nw = tape->node_of(p.weights);
    const int nb = tape->node_of(p.bias);
    if (nx >= 0 || nw >= 0 || nb >= 0) {
      const Tensor saved_x = x;
      const Tensor saved_w = p.weights;
      tape->record(result, {nx, nw, nb},
                   [nx, nw, nb, saved_x, saved_w, batch, in, out_dim](
                       Tape& t, std::span<const float> g) {
                     if (auto gx = t.grad_accum(nx); !gx.empty()) {
                       std::vector<float> tmp(static_cast<size_t>(batch) * in);
                       gemm_nn_raw(g.data(), saved_w.data().data(), tmp.data(), batch,
                                   out_dim, in);
                       for (size_t i = 0; i < tmp.size(); ++i) gx[i] += tmp[i];
                     }
                     if (auto gw = t.grad_accum(nw); !gw.empty()) {
                       gemm_tn_accum_raw(g.data(), saved_x.data().data(), gw.data(), batch,
                                         out_dim, in);
                     }
                     if (auto gb = t.grad_accum(nb); !gb.empty()) {
                       for (int n = 0; n < batch; ++n) {
                         const float* row = g.data() + static_cast<size_t>(n) * out_dim;
                         for (int j = 0; j < out_dim; ++j) gb[static_cast<size_t>(j)] += row[j];
                       }
                     }
                   });
    }
  }
  return result;
}

Tensor softmax_rows(const Tensor& logits) {
  if (!logits.defined() || logits.rank() != 2) {
    throw std::invalid_argument("softmax_rows: expected 2-D logits");
  }
  const int batch = logits.dim(0), k = logits.dim(1);
  const auto& lv = logits.data();
  std::vector<float> out(lv.size());
  for (int n = 0; n < batch; ++n) {
    const float* row = lv.data() + static_cast<size_t>(n) * k;
    float* prow = out.data() + static_cast<size_t>(n) * k;
    float mx = row[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    float denom = 0.0f;
    for (int j = 0; j < k; ++j) {
      prow[j] = std::exp(row[j] - mx);
      denom += prow[j];
    }
    for (int j = 0; j < k; ++j) prow[j] /= denom;
  }
  return Tensor(logits.shape(), std::move(out));
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels,
                             std::span<const float> class_weights, Tape* tape) {
  if (!logits.defined() || logits.rank() != 2) {
    throw std::invalid_argument("softmax_cross_entropy: expected 2-D logits");
  }
  const int batch = logits.dim(0), k = logits.dim(1);
  if (static_cast<int>(labels.size()) != batch) {
    throw std::invalid_argument("softmax_cross_entropy: got " +
                                std::to_string(labels.size()) + " labels for batch " +
                                std::to_string(batch));
  }
  if (!class_weights.empty() && static_cast<int>(class_weights.size()) != k) {
    throw std::invalid_argument("softmax_cross_entropy: class_weights must have size " +
                                std::to_string(k));
  }
  for (const int y : labels) {
    if (y < 0 || y >= k) {
      throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(y) +
                                  " out of range [0," + std::to_string(k) + ")");
    }
  }

  const auto& lv = logits.data();
  auto probs = std::make_shared<std::vector<float>>(lv.size());
  double total = 0.0;
  for (int n = 0; n < batch; ++n) {
    const float* row = lv.data() + static_cast<size_t>(n) * k;
    float* prow = probs->data() + static_cast<size_t>(n) * k;
    float mx = row[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int j = 0; j < k; ++j) denom += std::exp(static_cast<double>(row[j]) - mx);
    const double log_denom = std::log(denom);
    for (int j = 0; j < k; ++j) {
      prow[j] = static_cast<float>(std::exp((static_cast<double>(row[j]) - mx) - log_denom));
    }
    const int y = labels[static_cast<size_t>(n)];
    const double logp = (static_cast<double>(row[y]) - mx) - log_denom;
    const double w = class_weights.empty()
                         ? 1.0
                         : static_cast<double>(class_weights[static_cast<size_t>(y)]);
    total += -w * logp;
  }
  Tensor result = Tensor::scalar(static_cast<float>(total / batch));

  if (tape) {
    const int nl = tape->node_of(logits);
    if (nl >= 0) {
      std::vector<int> saved_labels(labels.begin(), labels.end());
      std::vector<float> saved_weights(class_weights.begin(), class_weights.end());
      tape->record(result, {nl},
                   [nl, probs, saved_labels, saved_weights, batch, k](
                       Tape& t, std::span<const float> g) {
                     if (auto gl = t.grad_accum(nl); !gl.empty()) {
                       const float gs = g[0] / static_cast<float>(batch);
                       for (int n = 0; n < batch; ++n) {
                         const int y = saved_labels[static_cast<size_t>(n)];
                         const float w =
                             saved_weights.empty()
                                 ? 1.0f
                                 : saved_weights[static_cast<size_t>(y)];
                         const float* prow = probs->data() + static_cast<size_t>(n) * k;
                         float* grow = gl.data() + static_cast<size_t>(n) * k;
                         for (int j = 0; j < k; ++j) {
                           const float onehot = j == y ? 1.0f : 0.0f;
                           grow[j] += gs * w * (prow[j] - onehot);
                         }
                       }
                     }
                   });
    }
  }
  return result;
}

Tensor avgpool2d(const Tensor& x, int window, Tape* tape) {
  require_4d(x, "avgpool2d");
  if (window <= 0) throw std::invalid_argument("avgpool2d: window must be positive");
  const int batch = x.dim(0), channels = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % window != 0 || w % window != 0) {
    throw std::invalid_argument("avgpool2d: spatial dims " + shape_str(x.shape()) +
                                " not divisible by window " + std::to_string(window));
  }
  const int oh = h / window, ow = w / window;
  const float inv = 1.0f / static_cast<float>(window * window);
  const auto& xv = x.data();
  std::vector<float> out(static_cast<size_t>(batch) * channels * oh * ow);
  size_t o = 0;
  for (int n = 0; n < batch; ++n) {
    for (int c = 0; c < channels; ++c) {
      const size_t plane = (static_cast<size_t>(n) * channels + c) * h * w;
      for (int i = 0; i < oh; ++i) {
        for (int j = 0; j < ow; ++j) {
          float acc = 0.0f;
          for (int di = 0; di < window; ++di) {
            const size_t row = plane + static_cast<size_t>(i * window + di) * w +
                               static_cast<size_t>(j) * window;
            for (int dj = 0; dj < window; ++dj) acc += xv[row + static_cast<size_t>(dj)];
          }
          out[o++] = acc * inv;
        }
      }
    }
  }
  Tensor result({batch, channels, oh, ow}, std::move(out));

  if (tape) {
    const int nx = tape->node_of(x);
    if (nx >= 0) {
      tape->record(result, {nx},
                   [nx, batch, channels, h, w, window, oh, ow, inv](
                       Tape& t, std::span<const float> g) {
                     if (auto gx = t.grad_accum(nx); !gx.empty()) {
                       size_t o = 0;
                       for (int n = 0; n < batch; ++n) {
                         for (int c = 0; c < channels; ++c) {
                           const size_t plane =
                               (static_cast<size_t>(n) * channels + c) * h * w;
                           for (int i = 0; i < oh; ++i) {
                             for (int j = 0; j < ow; ++j) {
                               const float gv = g[o++] * inv;
                               for (int di = 0; di < window; ++di) {
                                 const size_t row = plane +
                                                    static_cast<size_t>(i * window + di) * w +
                                                    static_cast<size_t>(j) * window;
                                 for (int dj = 0; dj < window; ++dj) {
                                   gx[row + static_cast<size_t>(dj)] += gv;
                                 }
                               }
                             }
                           }
                         }
                       }
                     }
                   });
    }
  }
  return result;
}

Tensor pad_channels(const Tensor& x, int out_channels, Tape* tape) {
  require_4d(x, "pad_channels");
  const int batch = x.dim(0), channels = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (out_channels < channels) {
    throw std::invalid_argument("pad_channels: cannot shrink " + std::to_string(channels) +
                                " channels to " + std::to_string(out_channels));
  }
  const size_t plane = static_cast<size_t>(h) * w;
  const auto& xv = x.data();
  std::vector<float> out(static_cast<size_t>(batch) * out_channels * plane, 0.0f);
  for (int n = 0; n < batch; ++n) {
    const float* src = xv.data() + static_cast<size_t>(n) * channels * plane;
    float* dst = out.data() + static_cast<size_t>(n) * out_channels * plane;
    std::copy(src, src + static_cast<size_t>(channels) * plane, dst);
  }
  Tensor result({batch, out_channels, h, w}, std::move(out));

  if (tape) {
    const int nx = tape->node_of(x);
    if (nx >= 0) {
      tape->record(result, {nx},
                   [nx, batch, channels, out_channels, plane](Tape& t,
                                                              std::span<const float> g) {
                     if (auto gx = t.grad_accum(nx); !gx.empty()) {
                       for (int n = 0; n < batch; ++n) {
                         const float* src =
                             g.data() + static_cast<size_t>(n) * out_channels * plane;
                         float* dst = gx.data() + static_cast<size_t>(n) * channels * plane;
                         for (size_t i = 0; i < static_cast<size_t>(channels) * plane; ++i) {
                           dst[i] += src[i];
                         }
                       }
                     }
                   });
    }
  }
  return result;
}

}  // namespace dermnet
