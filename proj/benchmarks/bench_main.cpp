#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "dermnet/dataset.hpp"
#include "dermnet/gradcam.hpp"
#include "dermnet/image.hpp"
#include "dermnet/layers.hpp"
#include "dermnet/model.hpp"
#include "dermnet/rng.hpp"
#include "dermnet/tensor.hpp"

namespace {

dermnet::Tensor random_tensor(dermnet::Rng& rng, dermnet::Shape shape) {
  std::vector<float> values(static_cast<size_t>(dermnet::shape_numel(shape)));
  for (float& v : values) v = rng.uniform(-1.0f, 1.0f);
  return dermnet::Tensor(std::move(shape), std::move(values));
}

dermnet::Model small_model(int input_size) {
  dermnet::ModelConfig config;
  config.input_size = input_size;
  return dermnet::build_model(config, 1);
}

}  // namespace

static void BM_Conv2dForward(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  dermnet::Rng rng(1);
  dermnet::Conv2dParams p;
  p.weights = random_tensor(rng, {16, 3, 3, 3});
  p.bias = random_tensor(rng, {16});
  p.stride = 1;
  p.padding = 1;
  dermnet::Tensor x = random_tensor(rng, {1, 3, side, side});
  for (auto _ : state) {
    dermnet::Tensor y = dermnet::conv2d(x, p);
    benchmark::DoNotOptimize(y.data().data());
  }
  state.SetItemsProcessed(state.iterations() * 16 * 3 * 9 * side * side);
}
BENCHMARK(BM_Conv2dForward)->Arg(32)->Arg(64)->Arg(224);

static void BM_Conv2dBackward(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  dermnet::Rng rng(2);
  dermnet::Conv2dParams p;
  p.weights = random_tensor(rng, {16, 3, 3, 3});
  p.bias = random_tensor(rng, {16});
  p.stride = 1;
  p.padding = 1;
  for (auto _ : state) {
    dermnet::Tensor x = random_tensor(rng, {1, 3, side, side});
    dermnet::Tape tape;
    tape.watch(x);
    tape.watch(p.weights);
    tape.backward(dermnet::sum_all(dermnet::conv2d(x, p, &tape), &tape));
    benchmark::DoNotOptimize(p.weights.grad().data());
  }
}
BENCHMARK(BM_Conv2dBackward)->Arg(32)->Arg(64);

static void BM_Matmul(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  dermnet::Rng rng(3);
  dermnet::Tensor a = random_tensor(rng, {n, n});
  dermnet::Tensor b = random_tensor(rng, {n, n});
  for (auto _ : state) {
    dermnet::Tensor c = dermnet::matmul(a, b);
    benchmark::DoNotOptimize(c.data().data());
  }
  state.SetItemsProcessed(state.iterations() * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

static void BM_ModelForward(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  dermnet::Model model = small_model(side);
  dermnet::Rng rng(4);
  dermnet::Tensor batch = random_tensor(rng, {1, 3, side, side});
  const dermnet::Model& frozen = model;
  for (auto _ : state) {
    dermnet::Tensor logits = dermnet::forward(frozen, batch);
    benchmark::DoNotOptimize(logits.data().data());
  }
}
BENCHMARK(BM_ModelForward)->Arg(32)->Arg(64)->Arg(224);

static void BM_ModelTrainStep(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  dermnet::Model model = small_model(side);
  dermnet::Rng rng(5);
  dermnet::Tensor batch = random_tensor(rng, {4, 3, side, side});
  const std::vector<int> labels{0, 1, 0, 1};
  for (auto _ : state) {
    dermnet::Tape tape;
    for (dermnet::Tensor* p : trainable_parameters(model)) tape.watch(*p);
    dermnet::Tensor logits = dermnet::forward(model, batch, dermnet::Mode::kTrain, &tape);
    tape.backward(dermnet::softmax_cross_entropy(logits, labels, {}, &tape));
    benchmark::DoNotOptimize(model.head.weights.grad().data());
  }
}
BENCHMARK(BM_ModelTrainStep)->Arg(32)->Arg(64);

static void BM_Gradcam(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  dermnet::Model model = small_model(side);
  dermnet::Rng rng(6);
  dermnet::Tensor input = random_tensor(rng, {3, side, side});
  for (auto _ : state) {
    dermnet::Heatmap heat = dermnet::gradcam(model, input, 1);
    benchmark::DoNotOptimize(heat.values.data());
  }
}
BENCHMARK(BM_Gradcam)->Arg(32)->Arg(64);

static void BM_Preprocess(benchmark::State& state) {
  dermnet::Image img = dermnet::Image::blank(256, 256);
  dermnet::Rng rng(7);
  for (auto& v : img.pixels) v = static_cast<uint8_t>(rng.next_u64() & 0xFF);
  dermnet::PreprocessConfig pre;
  pre.channel_means = {0.5f, 0.4f, 0.3f};
  for (auto _ : state) {
    dermnet::Tensor t = dermnet::preprocess(img, pre);
    benchmark::DoNotOptimize(t.data().data());
  }
}
BENCHMARK(BM_Preprocess);

BENCHMARK_MAIN();
