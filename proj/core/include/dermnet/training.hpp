#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dermnet/dataset.hpp"
#include "dermnet/model.hpp"

namespace dermnet {

/// Thrown when training cannot proceed (non-finite loss, empty splits,
/// inconsistent configuration).
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  float learning_rate = 0.01f;
  int epochs = 10;
  int batch_size = 16;
  uint64_t seed = 0;
  /// Per-class loss weights {benign, melanoma}; unweighted when unset.
  std::optional<std::array<float, 2>> class_weights;
  float weight_decay = 1e-4f;
};

struct HistoryRow {
  int epoch = 0;  // 1-based
  float train_loss = 0.0f;
  float val_loss = 0.0f;
  float train_acc = 0.0f;
  float val_acc = 0.0f;
};
using History = std::vector<HistoryRow>;

/// Writes `epoch,train_loss,val_loss,train_acc,val_acc` rows with fixed
/// 6-decimal formatting, so identical runs produce identical bytes.
void write_history_csv(const History& history, const std::string& path);

struct EvalResult {
  float loss = 0.0f;
  float accuracy = 0.0f;
  int correct = 0;
  int total = 0;
};

/// One SGD update with decoupled weight decay folded into the gradient:
/// w - lr * (g + weight_decay * w). Returns a fresh tensor.
Tensor sgd_step(const Tensor& param, const Tensor& grad, float learning_rate, float weight_decay);

struct EpochResult {
  float loss = 0.0f;
  float accuracy = 0.0f;
};

/// One pass over the training samples: seeded shuffle, per-sample flip/rotate
/// augmentation, minibatch forward/backward in train mode, SGD updates.
/// epoch is 1-based and salts the shuffle and augmentation draws. Throws
/// TrainingError naming the batch if the loss turns non-finite.
EpochResult train_epoch(Model& model, std::span<const LabeledImage> train,
                        const PreprocessConfig& preprocess, const TrainConfig& cfg, int epoch);

/// Unweighted loss and accuracy over a dataset in infer mode, without
/// augmentation.
EvalResult evaluate(const Model& model, std::span<const LabeledImage> samples,
                    const PreprocessConfig& preprocess, int batch_size = 32);

struct FitResult {
  History history;
  Model best_model;  // highest validation accuracy, earliest epoch on ties
  int best_epoch = 0;
};

/// Runs cfg.epochs training epochs, evaluating both splits after each one.
/// The passed model ends up at the final epoch; the returned snapshot tracks
/// the best validation accuracy (the initial model when epochs == 0). Both
/// splits must be non-empty.
FitResult fit(Model& model, std::span<const LabeledImage> train,
              std::span<const LabeledImage> val, const PreprocessConfig& preprocess,
              const TrainConfig& cfg);

}  // namespace dermnet
