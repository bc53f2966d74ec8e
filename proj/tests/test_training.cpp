#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "dermnet/synth.hpp"
#include "dermnet/training.hpp"
#include "support/reference_ops.hpp"
#include "support/testutil.hpp"

using dermnet::LabeledImage;
using dermnet::Model;
using dermnet::PreprocessConfig;
using dermnet::Tensor;
using dermnet::TrainConfig;
using dermnet::TrainingError;

namespace {

std::vector<LabeledImage> synth_samples(int n, uint64_t seed, int size = 16) {
  return to_labeled_images(dermnet::synth_dataset(n, 32, seed), size);
}

PreprocessConfig preprocess_for(std::span<const LabeledImage> images, int size = 16) {
  PreprocessConfig cfg;
  cfg.target_size = size;
  cfg.channel_means = dermnet::compute_channel_means(images);
  return cfg;
}

}  // namespace

TEST_CASE("sgd_step applies the update rule") {
  Tensor w({3}, {1.0f, -2.0f, 0.5f});
  Tensor g({3}, {0.5f, 1.0f, -4.0f});

  Tensor plain = dermnet::sgd_step(w, g, 0.1f, 0.0f);
  CHECK(plain[0] == doctest::Approx(0.95f));
  CHECK(plain[1] == doctest::Approx(-2.1f));
  CHECK(plain[2] == doctest::Approx(0.9f));

  // With decay 0.1: w - lr*(g + 0.1*w).
  Tensor decayed = dermnet::sgd_step(w, g, 0.1f, 0.1f);
  CHECK(decayed[0] == doctest::Approx(1.0f - 0.1f * (0.5f + 0.1f)));
  CHECK(decayed[1] == doctest::Approx(-2.0f - 0.1f * (1.0f - 0.2f)));

  // Zero learning rate leaves parameters bit-identical.
  Tensor frozen = dermnet::sgd_step(w, g, 0.0f, 0.5f);
  for (int i = 0; i < 3; ++i) CHECK(frozen[i] == w[i]);

  CHECK_THROWS_AS(dermnet::sgd_step(w, Tensor({2}, {1, 2}), 0.1f, 0.0f),
                  dermnet::TrainingError);
}

TEST_CASE("zero learning rate leaves the model unchanged") {
  auto samples = synth_samples(8, 3);
  auto cfg = preprocess_for(samples);
  Model model = testutil::tiny_model();
  // Running stats move in train mode, so compare trainable parameters only.
  auto before = refop::model_parameters(model);

  TrainConfig tc;
  tc.learning_rate = 0.0f;
  tc.weight_decay = 0.0f;
  tc.batch_size = 4;
  tc.seed = 5;
  dermnet::train_epoch(model, samples, cfg, tc, 1);

  auto after = refop::model_parameters(model);
  REQUIRE(before.size() == after.size());
  for (size_t i = 0; i < before.size(); ++i) CHECK(before[i] == after[i]);
}

TEST_CASE("a single sample can be memorized") {
  auto samples = synth_samples(8, 11);
  samples.resize(1);
  auto cfg = preprocess_for(samples);
  Model model = testutil::tiny_model(dermnet::SkipMode::kConsecutive, 2);

  TrainConfig tc;
  tc.learning_rate = 0.05f;
  tc.batch_size = 1;
  tc.weight_decay = 0.0f;
  tc.seed = 1;
  float loss = 0.0f;
  for (int epoch = 1; epoch <= 200; ++epoch) {
    loss = dermnet::train_epoch(model, samples, cfg, tc, epoch).loss;
    if (loss < 0.01f) break;
  }
  CHECK(loss < 0.01f);
}

TEST_CASE("training is deterministic in the seed") {
  auto samples = synth_samples(8, 21);
  auto cfg = preprocess_for(samples);

  auto run = [&]() {
    Model model = testutil::tiny_model(dermnet::SkipMode::kConsecutive, 3);
    TrainConfig tc;
    tc.learning_rate = 0.02f;
    tc.batch_size = 4;
    tc.seed = 9;
    dermnet::train_epoch(model, samples, cfg, tc, 1);
    dermnet::train_epoch(model, samples, cfg, tc, 2);
    return testutil::state_checksum(model);
  };
  CHECK(run() == run());
}

TEST_CASE("train_epoch validates its configuration") {
  auto samples = synth_samples(8, 31);
  auto cfg = preprocess_for(samples);
  Model model = testutil::tiny_model();

  TrainConfig bad;
  bad.batch_size = 0;
  CHECK_THROWS_AS(dermnet::train_epoch(model, samples, cfg, bad, 1), TrainingError);
  bad = TrainConfig{};
  bad.learning_rate = -1.0f;
  CHECK_THROWS_AS(dermnet::train_epoch(model, samples, cfg, bad, 1), TrainingError);
  bad = TrainConfig{};
  bad.class_weights = {{1.0f, -2.0f}};
  CHECK_THROWS_AS(dermnet::train_epoch(model, samples, cfg, bad, 1), TrainingError);
  bad = TrainConfig{};
  bad.weight_decay = -0.1f;
  CHECK_THROWS_AS(dermnet::train_epoch(model, samples, cfg, bad, 1), TrainingError);
}

TEST_CASE("non-finite loss aborts with the batch named") {
  auto samples = synth_samples(8, 41);
  auto cfg = preprocess_for(samples);
  Model poisoned = testutil::tiny_model();
  // Poison the head so the loss turns NaN on the first batch.
  const float bad = std::numeric_limits<float>::quiet_NaN();
  poisoned.head.weights = Tensor({2, 4}, std::vector<float>(8, bad));

  TrainConfig tc;
  tc.batch_size = 4;
  try {
    dermnet::train_epoch(poisoned, samples, cfg, tc, 1);
    FAIL_CHECK("expected TrainingError");
  } catch (const TrainingError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("epoch 1") != std::string::npos);
    CHECK(msg.find("batch") != std::string::npos);
  }
}

TEST_CASE("evaluate counts argmax matches and ignores class weights") {
  auto samples = synth_samples(12, 51);
  auto cfg = preprocess_for(samples);
  Model model = testutil::tiny_model(dermnet::SkipMode::kConsecutive, 6);

  dermnet::EvalResult r = evaluate(model, samples, cfg, 5);
  CHECK(r.total == 12);
  CHECK(r.correct >= 0);
  CHECK(r.correct <= 12);
  CHECK(r.accuracy == doctest::Approx(static_cast<float>(r.correct) / 12.0f));

  // Manual recount through predict_proba.
  int correct = 0;
  double loss = 0.0;
  for (const auto& s : samples) {
    Tensor x = preprocess(s.image, cfg);
    Tensor batch({1, 3, 16, 16}, x.data());
    Tensor probs = dermnet::predict_proba(model, batch);
    const int hat = probs[1] > probs[0] ? 1 : 0;
    correct += hat == s.label ? 1 : 0;
    loss += -std::log(std::max(1e-12, static_cast<double>(probs[s.label])));
  }
  CHECK(correct == r.correct);
  CHECK(r.loss == doctest::Approx(loss / 12.0).epsilon(5e-4));

  // Different batch sizes only regroup the forward passes.
  dermnet::EvalResult r2 = evaluate(model, samples, cfg, 12);
  CHECK(r2.correct == r.correct);
  CHECK(r2.loss == doctest::Approx(r.loss).epsilon(1e-5));
}

TEST_CASE("fit tracks history and the best validation snapshot") {
  auto train = synth_samples(12, 61);
  auto val = synth_samples(8, 62);
  auto cfg = preprocess_for(train);

  Model model = testutil::tiny_model(dermnet::SkipMode::kConsecutive, 7);
  TrainConfig tc;
  tc.epochs = 3;
  tc.learning_rate = 0.02f;
  tc.batch_size = 4;
  tc.seed = 13;
  dermnet::FitResult fr = fit(model, train, val, cfg, tc);

  REQUIRE(fr.history.size() == 3);
  for (int e = 0; e < 3; ++e) CHECK(fr.history[static_cast<size_t>(e)].epoch == e + 1);
  CHECK(fr.best_epoch >= 1);
  CHECK(fr.best_epoch <= 3);
  float best_acc = 0.0f;
  for (const auto& row : fr.history) best_acc = std::max(best_acc, row.val_acc);
  CHECK(evaluate(fr.best_model, val, cfg).accuracy == doctest::Approx(best_acc));

  // epochs == 0: empty history, the snapshot is the initial model.
  Model fresh = testutil::tiny_model(dermnet::SkipMode::kConsecutive, 7);
  TrainConfig none;
  none.epochs = 0;
  dermnet::FitResult empty = fit(fresh, train, val, cfg, none);
  CHECK(empty.history.empty());
  CHECK(empty.best_epoch == 0);
  CHECK(testutil::state_checksum(empty.best_model) ==
        testutil::state_checksum(testutil::tiny_model(dermnet::SkipMode::kConsecutive, 7)));

  const std::vector<LabeledImage> nothing;
  CHECK_THROWS_AS(fit(fresh, nothing, val, cfg, none), TrainingError);
  CHECK_THROWS_AS(fit(fresh, train, nothing, cfg, none), TrainingError);
}

TEST_CASE("history csv bytes are deterministic") {
  dermnet::History h{{1, 0.5f, 0.25f, 0.75f, 1.0f}, {2, 0.125f, 0.0625f, 0.875f, 0.9375f}};
  testutil::TempDir dir;
  write_history_csv(h, dir.file("a.csv"));
  write_history_csv(h, dir.file("b.csv"));

  auto slurp = [](const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  const std::string a = slurp(dir.file("a.csv"));
  CHECK(a == slurp(dir.file("b.csv")));
  CHECK(a ==
        "epoch,train_loss,val_loss,train_acc,val_acc\n"
        "1,0.500000,0.250000,0.750000,1.000000\n"
        "2,0.125000,0.062500,0.875000,0.937500\n");
}
