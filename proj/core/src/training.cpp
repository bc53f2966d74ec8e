#include "dermnet/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "dermnet/autodiff.hpp"
#include "dermnet/rng.hpp"

namespace dermnet {

namespace {

void check_config(const TrainConfig& cfg) {
  if (cfg.epochs < 0) throw TrainingError("epochs must be non-negative");
  if (cfg.batch_size <= 0) throw TrainingError("batch size must be positive");
  if (!(cfg.learning_rate >= 0.0f)) throw TrainingError("learning rate must be non-negative");
  if (cfg.weight_decay < 0.0f) throw TrainingError("weight decay must be non-negative");
  if (cfg.class_weights) {
    for (float w : *cfg.class_weights) {
      if (!(w > 0.0f)) throw TrainingError("class weights must be positive");
    }
  }
}

std::span<const float> weights_span(const std::optional<std::array<float, 2>>& weights) {
  if (!weights) return {};
  return std::span<const float>(weights->data(), weights->size());
}

/// Normalizes the given images into an N x 3 x S x S batch buffer.
Tensor build_batch(std::span<const Image> images, const PreprocessConfig& preprocess) {
  int s = preprocess.target_size;
  size_t per_sample = static_cast<size_t>(3) * s * s;
  std::vector<float> values(per_sample * images.size());
  for (size_t i = 0; i < images.size(); ++i) {
    Tensor one = normalize(images[i], preprocess);
    std::copy(one.data().begin(), one.data().end(), values.begin() + i * per_sample);
  }
  return Tensor({static_cast<int>(images.size()), 3, s, s}, std::move(values));
}

int count_correct(const Tensor& logits, std::span<const int> labels) {
  int correct = 0;
  int classes = logits.dim(1);
  for (int i = 0; i < logits.dim(0); ++i) {
    int best = 0;
    for (int c = 1; c < classes; ++c) {
      if (logits[i * classes + c] > logits[i * classes + best]) best = c;
    }
    correct += best == labels[static_cast<size_t>(i)] ? 1 : 0;
  }
  return correct;
}

}  // namespace

void write_history_csv(const History& history, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw TrainingError("cannot open history file for writing: " + path);
  out << "epoch,train_loss,val_loss,train_acc,val_acc\n";
  char line[160];
  for (const HistoryRow& row : history) {
    std::snprintf(line, sizeof(line), "%d,%.6f,%.6f,%.6f,%.6f\n", row.epoch,
                  static_cast<double>(row.train_loss), static_cast<double>(row.val_loss),
                  static_cast<double>(row.train_acc), static_cast<double>(row.val_acc));
    out << line;
  }
  if (!out) throw TrainingError("error writing history file: " + path);
}

Tensor sgd_step(const Tensor& param, const Tensor& grad, float learning_rate,
                float weight_decay) {
  if (param.shape() != grad.shape()) {
    throw TrainingError("parameter/gradient shape mismatch: " + shape_str(param.shape()) +
                        " vs " + shape_str(grad.shape()));
  }
  std::vector<float> updated(static_cast<size_t>(param.size()));
  for (int64_t i = 0; i < param.size(); ++i) {
    float w = param[i];
    updated[static_cast<size_t>(i)] = w - learning_rate * (grad[i] + weight_decay * w);
  }
  return Tensor(param.shape(), std::move(updated));
}

EpochResult train_epoch(Model& model, std::span<const LabeledImage> train,
                        const PreprocessConfig& preprocess, const TrainConfig& cfg, int epoch) {
  check_config(cfg);
  if (train.empty()) throw TrainingError("training split is empty");

  Rng rng(mix_seed(mix_seed(cfg.seed, "epoch"), static_cast<uint64_t>(epoch)));
  std::vector<size_t> order(train.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);

  double loss_sum = 0.0;
  int correct = 0;
  int batch_index = 0;
  for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
    size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
    std::vector<Image> images;
    std::vector<int> labels;
    images.reserve(end - start);
    labels.reserve(end - start);
    for (size_t k = start; k < end; ++k) {
      const LabeledImage& sample = train[order[k]];
      images.push_back(augment(sample.image, rng));
      labels.push_back(sample.label);
    }

    Tape tape;
    std::vector<Tensor*> params = trainable_parameters(model);
    for (Tensor* p : params) tape.watch(*p);
    Tensor batch = build_batch(images, preprocess);
    Tensor logits = forward(model, batch, Mode::kTrain, &tape);
    Tensor loss = softmax_cross_entropy(logits, labels, weights_span(cfg.class_weights), &tape);
    float loss_value = loss.item();
    if (!std::isfinite(loss_value)) {
      throw TrainingError("non-finite loss in epoch " + std::to_string(epoch) + ", batch " +
                          std::to_string(batch_index));
    }
    tape.backward(loss);
    for (Tensor* p : params) {
      *p = sgd_step(*p, Tensor(p->shape(), p->grad()), cfg.learning_rate, cfg.weight_decay);
    }

    loss_sum += static_cast<double>(loss_value) * static_cast<double>(end - start);
    correct += count_correct(logits, labels);
    ++batch_index;
  }

  EpochResult result;
  result.loss = static_cast<float>(loss_sum / static_cast<double>(train.size()));
  result.accuracy = static_cast<float>(correct) / static_cast<float>(train.size());
  return result;
}

EvalResult evaluate(const Model& model, std::span<const LabeledImage> samples,
                    const PreprocessConfig& preprocess, int batch_size) {
  if (samples.empty()) throw TrainingError("cannot evaluate an empty dataset");
  if (batch_size <= 0) throw TrainingError("batch size must be positive");

  double loss_sum = 0.0;
  EvalResult result;
  result.total = static_cast<int>(samples.size());
  for (size_t start = 0; start < samples.size(); start += static_cast<size_t>(batch_size)) {
    size_t end = std::min(samples.size(), start + static_cast<size_t>(batch_size));
    std::vector<Image> images;
    std::vector<int> labels;
    for (size_t k = start; k < end; ++k) {
      images.push_back(samples[k].image);
      labels.push_back(samples[k].label);
    }
    Tensor batch = build_batch(images, preprocess);
    Tensor logits = forward(model, batch);
    Tensor loss = softmax_cross_entropy(logits, labels);
    loss_sum += static_cast<double>(loss.item()) * static_cast<double>(end - start);
    result.correct += count_correct(logits, labels);
  }
  result.loss = static_cast<float>(loss_sum / static_cast<double>(samples.size()));
  result.accuracy = static_cast<float>(result.correct) / static_cast<float>(result.total);
  return result;
}

FitResult fit(Model& model, std::span<const LabeledImage> train, std::span<const LabeledImage> val,
              const PreprocessConfig& preprocess, const TrainConfig& cfg) {
  check_config(cfg);
  if (train.empty()) throw TrainingError("training split is empty");
  if (val.empty()) throw TrainingError("validation split is empty");

  FitResult result;
  result.best_model = model;
  result.best_epoch = 0;
  float best_val_acc = -1.0f;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    train_epoch(model, train, preprocess, cfg, epoch);
    EvalResult tr = evaluate(model, train, preprocess);
    EvalResult va = evaluate(model, val, preprocess);
    result.history.push_back({epoch, tr.loss, va.loss, tr.accuracy, va.accuracy});
    if (va.accuracy > best_val_acc) {
      best_val_acc = va.accuracy;
      result.best_model = model;
      result.best_epoch = epoch;
    }
  }
  return result;
}

}  // namespace dermnet
