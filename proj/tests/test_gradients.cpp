#include <doctest.h>

#include <span>
#include <vector>

#include "dermnet/layers.hpp"
#include "dermnet/model.hpp"
#include "dermnet/rng.hpp"
#include "support/reference_ops.hpp"
#include "support/testutil.hpp"

using dermnet::Mode;
using dermnet::Rng;
using dermnet::Tape;
using dermnet::Tensor;
using testutil::check_gradient;
using testutil::widen;

namespace {

double dot(std::span<const double> a, const Tensor& r) {
  double total = 0.0;
  for (size_t i = 0; i < a.size(); ++i) total += a[i] * static_cast<double>(r[static_cast<int64_t>(i)]);
  return total;
}

}  // namespace

TEST_CASE("conv2d gradients match finite differences") {
  Rng rng(dermnet::mix_seed(31, "fd-conv"));
  const int n = 2, c = 3, h = 6, w = 6, oc = 2;
  dermnet::Conv2dParams p;
  p.weights = testutil::random_tensor(rng, {oc, c, 3, 3}, -0.6f, 0.6f);
  p.bias = testutil::random_tensor(rng, {oc}, -0.3f, 0.3f);
  p.stride = 1;
  p.padding = 1;
  Tensor x = testutil::random_tensor(rng, {n, c, h, w}, -1.0f, 1.0f);
  Tensor r = testutil::random_tensor(rng, {n, oc, h, w}, 0.5f, 1.5f);

  Tape tape;
  tape.watch(x);
  tape.watch(p.weights);
  tape.watch(p.bias);
  Tensor loss = sum_all(mul(conv2d(x, p, &tape), r, &tape), &tape);
  tape.backward(loss);

  const std::vector<double> x0 = widen(x.data());
  const std::vector<double> w0 = widen(p.weights.data());
  const std::vector<double> b0 = widen(p.bias.data());

  auto wrt_x = [&](std::span<const double> v) {
    return dot(refop::conv2d(v, n, c, h, w, w0, oc, 3, 3, b0, 1, 1), r);
  };
  auto wrt_w = [&](std::span<const double> v) {
    return dot(refop::conv2d(x0, n, c, h, w, v, oc, 3, 3, b0, 1, 1), r);
  };
  auto wrt_b = [&](std::span<const double> v) {
    return dot(refop::conv2d(x0, n, c, h, w, w0, oc, 3, 3, v, 1, 1), r);
  };
  for (auto [grad, objective, base] :
       {std::tuple{x.grad(), std::function<double(std::span<const double>)>(wrt_x), x0},
        std::tuple{p.weights.grad(), std::function<double(std::span<const double>)>(wrt_w), w0},
        std::tuple{p.bias.grad(), std::function<double(std::span<const double>)>(wrt_b), b0}}) {
    auto result = check_gradient(grad, objective, base);
    CHECK(result.skipped == 0);
    CHECK(result.max_rel_err < 1e-4);
  }
}

TEST_CASE("strided 1x1 projection conv gradients match finite differences") {
  Rng rng(dermnet::mix_seed(32, "fd-proj"));
  const int n = 2, c = 3, h = 6, w = 6, oc = 4;
  dermnet::Conv2dParams p;
  p.weights = testutil::random_tensor(rng, {oc, c, 1, 1}, -0.8f, 0.8f);
  p.bias = testutil::random_tensor(rng, {oc}, -0.3f, 0.3f);
  p.stride = 2;
  p.padding = 0;
  Tensor x = testutil::random_tensor(rng, {n, c, h, w}, -1.0f, 1.0f);
  Tensor r = testutil::random_tensor(rng, {n, oc, 3, 3}, 0.5f, 1.5f);

  Tape tape;
  tape.watch(x);
  tape.watch(p.weights);
  Tensor loss = sum_all(mul(conv2d(x, p, &tape), r, &tape), &tape);
  tape.backward(loss);

  const std::vector<double> x0 = widen(x.data());
  const std::vector<double> w0 = widen(p.weights.data());
  const std::vector<double> b0 = widen(p.bias.data());
  auto wrt_x = [&](std::span<const double> v) {
    return dot(refop::conv2d(v, n, c, h, w, w0, oc, 1, 1, b0, 2, 0), r);
  };
  auto rx = check_gradient(x.grad(), wrt_x, x0);
  CHECK(rx.skipped == 0);
  CHECK(rx.max_rel_err < 1e-4);
  auto wrt_w = [&](std::span<const double> v) {
    return dot(refop::conv2d(x0, n, c, h, w, v, oc, 1, 1, b0, 2, 0), r);
  };
  auto rw = check_gradient(p.weights.grad(), wrt_w, w0);
  CHECK(rw.skipped == 0);
  CHECK(rw.max_rel_err < 1e-4);
}

TEST_CASE("batchnorm2d train-mode gradients match finite differences") {
  Rng rng(dermnet::mix_seed(33, "fd-bn"));
  const int n = 2, c = 3, h = 4, w = 4;
  Tensor x = testutil::random_tensor(rng, {n, c, h, w}, -1.5f, 1.5f);
  Tensor r = testutil::random_tensor(rng, {n, c, h, w}, 0.5f, 1.5f);
  dermnet::BatchNormParams p;
  p.gamma = testutil::random_tensor(rng, {c}, 0.5f, 1.5f);
  p.beta = testutil::random_tensor(rng, {c}, -0.5f, 0.5f);
  p.running_mean.assign(c, 0.0f);
  p.running_var.assign(c, 1.0f);

  Tape tape;
  tape.watch(x);
  tape.watch(p.gamma);
  tape.watch(p.beta);
  Tensor loss = sum_all(mul(batchnorm2d(x, p, Mode::kTrain, &tape), r, &tape), &tape);
  tape.backward(loss);

  const std::vector<double> x0 = widen(x.data());
  const std::vector<double> g0 = widen(p.gamma.data());
  const std::vector<double> b0 = widen(p.beta.data());
  const double eps = static_cast<double>(p.eps);

  auto wrt_x = [&](std::span<const double> v) {
    return dot(refop::batchnorm_train(v, n, c, h, w, g0, b0, eps), r);
  };
  auto wrt_g = [&](std::span<const double> v) {
    return dot(refop::batchnorm_train(x0, n, c, h, w, v, b0, eps), r);
  };
  auto wrt_b = [&](std::span<const double> v) {
    return dot(refop::batchnorm_train(x0, n, c, h, w, g0, v, eps), r);
  };
  for (auto [grad, objective, base] :
       {std::tuple{x.grad(), std::function<double(std::span<const double>)>(wrt_x), x0},
        std::tuple{p.gamma.grad(), std::function<double(std::span<const double>)>(wrt_g), g0},
        std::tuple{p.beta.grad(), std::function<double(std::span<const double>)>(wrt_b), b0}}) {
    auto result = check_gradient(grad, objective, base);
    CHECK(result.skipped == 0);
    CHECK(result.max_rel_err < 1e-4);
  }
}

TEST_CASE("maxpool2d and relu gradients match finite differences away from kinks") {
  Rng rng(dermnet::mix_seed(34, "fd-pool"));
  const int n = 2, c = 2, h = 6, w = 6;
  Tensor x = testutil::random_tensor(rng, {n, c, h, w}, -1.0f, 1.0f);
  Tensor r = testutil::random_tensor(rng, {n, c, 3, 3}, 0.5f, 1.5f);

  Tape tape;
  tape.watch(x);
  Tensor loss = sum_all(mul(maxpool2d(x, &tape), r, &tape), &tape);
  tape.backward(loss);
  auto pool_obj = [&](std::span<const double> v) {
    return dot(refop::maxpool2d(v, n, c, h, w), r);
  };
  auto rp = check_gradient(x.grad(), pool_obj, widen(x.data()));
  CHECK(rp.max_rel_err < 1e-4);
  CHECK(rp.skipped < x.grad().size() / 10);

  Tensor y = testutil::random_tensor(rng, {n, c, h, w}, -1.0f, 1.0f);
  Tensor r2 = testutil::random_tensor(rng, {n, c, h, w}, 0.5f, 1.5f);
  Tape tape2;
  tape2.watch(y);
  Tensor loss2 = sum_all(mul(relu(y, &tape2), r2, &tape2), &tape2);
  tape2.backward(loss2);
  auto relu_obj = [&](std::span<const double> v) { return dot(refop::relu(v), r2); };
  auto rr = check_gradient(y.grad(), relu_obj, widen(y.data()));
  CHECK(rr.max_rel_err < 1e-4);
  CHECK(rr.skipped < y.grad().size() / 10);
}

TEST_CASE("linear gradients match finite differences") {
  Rng rng(dermnet::mix_seed(35, "fd-linear"));
  const int n = 3, in = 5, out = 2;
  dermnet::LinearParams p;
  p.weights = testutil::random_tensor(rng, {out, in}, -1.0f, 1.0f);
  p.bias = testutil::random_tensor(rng, {out}, -0.5f, 0.5f);
  Tensor x = testutil::random_tensor(rng, {n, in}, -1.0f, 1.0f);
  Tensor r = testutil::random_tensor(rng, {n, out}, 0.5f, 1.5f);

  Tape tape;
  tape.watch(x);
  tape.watch(p.weights);
  tape.watch(p.bias);
  Tensor loss = sum_all(mul(linear(x, p, &tape), r, &tape), &tape);
  tape.backward(loss);

  const std::vector<double> x0 = widen(x.data());
  const std::vector<double> w0 = widen(p.weights.data());
  const std::vector<double> b0 = widen(p.bias.data());
  auto wrt_x = [&](std::span<const double> v) {
    return dot(refop::linear(v, n, in, w0, out, b0), r);
  };
  auto wrt_w = [&](std::span<const double> v) {
    return dot(refop::linear(x0, n, in, v, out, b0), r);
  };
  auto wrt_b = [&](std::span<const double> v) {
    return dot(refop::linear(x0, n, in, w0, out, v), r);
  };
  for (auto [grad, objective, base] :
       {std::tuple{x.grad(), std::function<double(std::span<const double>)>(wrt_x), x0},
        std::tuple{p.weights.grad(), std::function<double(std::span<const double>)>(wrt_w), w0},
        std::tuple{p.bias.grad(), std::function<double(std::span<const double>)>(wrt_b), b0}}) {
    auto result = check_gradient(grad, objective, base);
    CHECK(result.skipped == 0);
    CHECK(result.max_rel_err < 1e-4);
  }
}

TEST_CASE("cross entropy gradients match finite differences") {
  Rng rng(dermnet::mix_seed(36, "fd-ce"));
  Tensor logits = testutil::random_tensor(rng, {4, 2}, -2.0f, 2.0f);
  const std::vector<int> labels{0, 1, 1, 0};

  for (const std::vector<float>& weights :
       {std::vector<float>{}, std::vector<float>{1.6f, 0.7f}}) {
    Tensor x = logits;
    Tape tape;
    tape.watch(x);
    Tensor loss = softmax_cross_entropy(x, labels, weights, &tape);
    tape.backward(loss);

    const std::vector<double> w64(weights.begin(), weights.end());
    auto objective = [&](std::span<const double> v) {
      return refop::softmax_cross_entropy(v, 4, 2, labels, w64);
    };
    auto result = check_gradient(x.grad(), objective, widen(x.data()));
    CHECK(result.skipped == 0);
    CHECK(result.max_rel_err < 1e-4);
  }
}

TEST_CASE("avgpool2d and pad_channels gradients match finite differences") {
  Rng rng(dermnet::mix_seed(37, "fd-avg"));
  const int n = 2, c = 2, h = 8, w = 8;
  Tensor x = testutil::random_tensor(rng, {n, c, h, w}, -1.0f, 1.0f);
  Tensor r = testutil::random_tensor(rng, {n, c, 2, 2}, 0.5f, 1.5f);

  Tape tape;
  tape.watch(x);
  Tensor loss = sum_all(mul(avgpool2d(x, 4, &tape), r, &tape), &tape);
  tape.backward(loss);
  auto avg_obj = [&](std::span<const double> v) {
    return dot(refop::avgpool2d(v, n, c, h, w, 4), r);
  };
  auto ra = check_gradient(x.grad(), avg_obj, widen(x.data()));
  CHECK(ra.skipped == 0);
  CHECK(ra.max_rel_err < 1e-4);

  Tensor y = testutil::random_tensor(rng, {n, c, 4, 4}, -1.0f, 1.0f);
  Tensor r2 = testutil::random_tensor(rng, {n, 5, 4, 4}, 0.5f, 1.5f);
  Tape tape2;
  tape2.watch(y);
  Tensor loss2 = sum_all(mul(pad_channels(y, 5, &tape2), r2, &tape2), &tape2);
  tape2.backward(loss2);
  auto pad_obj = [&](std::span<const double> v) {
    return dot(refop::pad_channels(v, n, c, 4, 4, 5), r2);
  };
  auto rp = check_gradient(y.grad(), pad_obj, widen(y.data()));
  CHECK(rp.skipped == 0);
  CHECK(rp.max_rel_err < 1e-4);
}

namespace {

void full_model_check(dermnet::SkipMode mode) {
  dermnet::Model model = mode == dermnet::SkipMode::kDense ? testutil::wide_model(mode, 5)
                                                           : testutil::tiny_model(mode, 5);
  const int batch = 2;
  Tensor input = testutil::tiny_batch(batch, 42);
  const std::vector<int> labels{0, 1};
  const std::vector<float> weights{1.3f, 0.8f};
  const std::vector<double> w64(weights.begin(), weights.end());
  const std::vector<double> input64 = widen(input.data());

  Tape tape;
  auto params = trainable_parameters(model);
  for (Tensor* p : params) tape.watch(*p);
  tape.watch(input);
  Tensor logits = dermnet::forward(model, input, Mode::kTrain, &tape);
  Tensor loss = softmax_cross_entropy(logits, labels, weights, &tape);
  tape.backward(loss);

  // The f64 reference recomputes the exact same composition.
  CHECK(static_cast<double>(loss.item()) ==
        doctest::Approx(refop::model_loss(model, input64, batch, labels, w64)).epsilon(1e-5));

  size_t checked = 0, skipped = 0;
  double worst = 0.0;
  for (size_t i = 0; i <= params.size(); ++i) {
    const bool is_input = i == params.size();
    const int override_index = is_input ? -1 : static_cast<int>(i);
    const Tensor& target = is_input ? input : *params[i];
    auto objective = [&](std::span<const double> v) {
      return refop::model_loss(model, input64, batch, labels, w64, override_index, v);
    };
    auto result = check_gradient(target.grad(), objective, widen(target.data()));
    worst = std::max(worst, result.max_rel_err);
    checked += result.checked;
    skipped += result.skipped;
  }
  CHECK(worst < 1e-4);
  CHECK(checked > 1500);
  // Kink crossings (maxpool/relu boundaries within the probe step) are rare.
  CHECK(skipped < (checked + skipped) / 10);
}

}  // namespace

TEST_CASE("full tiny model gradients match finite differences") {
  full_model_check(dermnet::SkipMode::kConsecutive);
}

TEST_CASE("full tiny model gradients match finite differences in dense mode") {
  full_model_check(dermnet::SkipMode::kDense);
}
