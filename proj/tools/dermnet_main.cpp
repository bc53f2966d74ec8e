#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dermnet/checkpoint.hpp"
#include "dermnet/dataset.hpp"
#include "dermnet/gradcam.hpp"
#include "dermnet/image_codec.hpp"
#include "dermnet/model.hpp"
#include "dermnet/service.hpp"
#include "dermnet/synth.hpp"
#include "dermnet/training.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

using nlohmann::json;

void emit(const json& machine, const std::string& human) {
  std::cout << machine.dump() << "\n";
  std::cerr << human << "\n";
}

struct SynthArgs {
  int n = 64;
  int size = 32;
  uint64_t seed = 0;
  std::string out;
};

int run_synth(const SynthArgs& args) {
  dermnet::SynthDataset dataset = dermnet::synth_dataset(args.n, args.size, args.seed);
  dermnet::write_synth_dataset(dataset, args.out);
  int melanoma = 0;
  for (const auto& s : dataset.samples) melanoma += s.label == dermnet::Label3::kMelanoma ? 1 : 0;
  json out = {{"command", "synth"},   {"n", args.n},     {"size", args.size},
              {"seed", args.seed},    {"out", args.out}, {"melanoma", melanoma},
              {"benign", args.n - melanoma}};
  emit(out, "wrote " + std::to_string(args.n) + " synthetic images (" + std::to_string(melanoma) +
                " melanoma) to " + args.out);
  return kExitOk;
}

struct TrainArgs {
  std::string data;
  std::string out_checkpoint;
  int epochs = 30;
  float lr = 0.05f;
  int batch = 16;
  uint64_t seed = 0;
  std::string class_weights;
  bool dense_skips = false;
};

std::optional<std::array<float, 2>> parse_class_weights(const std::string& text,
                                                        const dermnet::Manifest& manifest) {
  if (text.empty()) return std::nullopt;
  if (text == "balanced") {
    float positives = static_cast<float>(manifest.positives());
    float negatives = static_cast<float>(manifest.size()) - positives;
    if (positives == 0.0f || negatives == 0.0f) {
      throw dermnet::DataError("--class-weights balanced needs both classes present");
    }
    float total = positives + negatives;
    return std::array<float, 2>{total / (2.0f * negatives), total / (2.0f * positives)};
  }
  size_t comma = text.find(',');
  if (comma == std::string::npos) {
    throw CLI::ValidationError("--class-weights",
                               "expected \"balanced\" or two comma-separated weights");
  }
  try {
    float w0 = std::stof(text.substr(0, comma));
    float w1 = std::stof(text.substr(comma + 1));
    if (w0 <= 0.0f || w1 <= 0.0f) throw std::invalid_argument("weights must be positive");
    return std::array<float, 2>{w0, w1};
  } catch (const std::exception& e) {
    throw CLI::ValidationError("--class-weights", e.what());
  }
}

/// Uses the first image's native size when every model constraint allows it,
/// otherwise falls back to 224.
int detect_input_size(const dermnet::Manifest& manifest) {
  dermnet::Image first = dermnet::load_image(manifest.rows.front().image_path);
  if (first.width == first.height && first.width % 8 == 0 && first.width >= 16) {
    return first.width;
  }
  return 224;
}

int run_train(const TrainArgs& args) {
  namespace fs = std::filesystem;
  if (args.epochs < 1) throw CLI::ValidationError("--epochs", "must be >= 1");
  std::string manifest_path = (fs::path(args.data) / "manifest.csv").string();
  dermnet::Manifest manifest = dermnet::load_manifest(manifest_path, args.data);
  std::optional<std::array<float, 2>> weights = parse_class_weights(args.class_weights, manifest);

  int input_size = detect_input_size(manifest);
  auto [train_manifest, val_manifest] = dermnet::stratified_split(manifest, 0.8, args.seed);
  std::vector<dermnet::LabeledImage> train_images =
      dermnet::load_images(train_manifest, input_size);
  std::vector<dermnet::LabeledImage> val_images = dermnet::load_images(val_manifest, input_size);

  dermnet::PreprocessConfig preprocess;
  preprocess.target_size = input_size;
  preprocess.channel_means = dermnet::compute_channel_means(train_images);

  dermnet::ModelConfig config;
  config.input_size = input_size;
  config.skip_mode = args.dense_skips ? dermnet::SkipMode::kDense : dermnet::SkipMode::kConsecutive;
  dermnet::Model model = dermnet::build_model(config, args.seed);
  model.channel_means = preprocess.channel_means;

  dermnet::TrainConfig train_cfg;
  train_cfg.learning_rate = args.lr;
  train_cfg.epochs = args.epochs;
  train_cfg.batch_size = args.batch;
  train_cfg.seed = args.seed;
  train_cfg.class_weights = weights;

  std::cerr << "training on " << train_images.size() << " samples, validating on "
            << val_images.size() << ", input " << input_size << "x" << input_size << "\n";
  dermnet::FitResult fit_result =
      dermnet::fit(model, train_images, val_images, preprocess, train_cfg);
  for (const dermnet::HistoryRow& row : fit_result.history) {
    std::fprintf(stderr, "epoch %d/%d train_loss=%.4f val_loss=%.4f train_acc=%.3f val_acc=%.3f\n",
                 row.epoch, args.epochs, static_cast<double>(row.train_loss),
                 static_cast<double>(row.val_loss), static_cast<double>(row.train_acc),
                 static_cast<double>(row.val_acc));
  }

  dermnet::save_checkpoint(model, args.out_checkpoint);
  std::string best_path = args.out_checkpoint + ".best";
  dermnet::save_checkpoint(fit_result.best_model, best_path);
  std::string history_path = args.out_checkpoint + ".history.csv";
  dermnet::write_history_csv(fit_result.history, history_path);

  const dermnet::HistoryRow& last = fit_result.history.back();
  json out = {{"command", "train"},
              {"checkpoint", args.out_checkpoint},
              {"best_checkpoint", best_path},
              {"history", history_path},
              {"epochs", args.epochs},
              {"input_size", input_size},
              {"train_loss", last.train_loss},
              {"val_loss", last.val_loss},
              {"train_acc", last.train_acc},
              {"val_acc", last.val_acc},
              {"best_epoch", fit_result.best_epoch}};
  emit(out, "trained " + std::to_string(args.epochs) + " epochs; final train_acc=" +
                std::to_string(last.train_acc) + " val_acc=" + std::to_string(last.val_acc) +
                "; checkpoint at " + args.out_checkpoint);
  return kExitOk;
}

struct EvalArgs {
  std::string data;
  std::string checkpoint;
};

int run_eval(const EvalArgs& args) {
  namespace fs = std::filesystem;
  dermnet::Model model = dermnet::load_checkpoint(args.checkpoint);
  std::string manifest_path = (fs::path(args.data) / "manifest.csv").string();
  dermnet::Manifest manifest = dermnet::load_manifest(manifest_path, args.data);
  std::vector<dermnet::LabeledImage> samples =
      dermnet::load_images(manifest, model.config.input_size);
  dermnet::PreprocessConfig preprocess{model.config.input_size, model.channel_means};
  dermnet::EvalResult result = dermnet::evaluate(model, samples, preprocess);
  json out = {{"command", "eval"},         {"n", result.total},
              {"correct", result.correct}, {"accuracy", result.accuracy},
              {"loss", result.loss},       {"positives", manifest.positives()}};
  emit(out, "accuracy " + std::to_string(result.accuracy) + " (" +
                std::to_string(result.correct) + "/" + std::to_string(result.total) +
                "), loss " + std::to_string(result.loss));
  return kExitOk;
}

struct PredictArgs {
  std::string image;
  std::string checkpoint;
  bool cam = false;
  std::string out_overlay;
};

int run_predict(const PredictArgs& args) {
  uint32_t crc = 0;
  dermnet::Model model = dermnet::load_checkpoint(args.checkpoint, &crc);
  std::vector<uint8_t> bytes = dermnet::read_file_bytes(args.image);
  bool want_cam = args.cam || !args.out_overlay.empty();
  dermnet::PredictionOutcome outcome = dermnet::predict_from_bytes(model, bytes, want_cam);
  char version[16];
  std::snprintf(version, sizeof(version), "%08x", crc);

  json out = {{"command", "predict"},
              {"image", args.image},
              {"probability_melanoma", outcome.probability_melanoma},
              {"label", outcome.label},
              {"model_version", version}};
  if (!args.out_overlay.empty()) {
    std::vector<uint8_t> png = dermnet::base64_decode(outcome.heatmap_png_base64);
    dermnet::write_file_bytes(args.out_overlay, png);
    out["overlay"] = args.out_overlay;
  }
  emit(out, args.image + ": " + outcome.label + " (p=" +
                std::to_string(outcome.probability_melanoma) + ")");
  return kExitOk;
}

struct ServeArgs {
  std::string checkpoint;
  std::string bind = "127.0.0.1:8080";
};

int run_serve(const ServeArgs& args) {
  size_t colon = args.bind.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == args.bind.size()) {
    throw CLI::ValidationError("--bind", "expected host:port");
  }
  std::string host = args.bind.substr(0, colon);
  int port = 0;
  try {
    port = std::stoi(args.bind.substr(colon + 1));
  } catch (const std::exception&) {
    throw CLI::ValidationError("--bind", "expected host:port");
  }

  dermnet::InferenceServer server(args.checkpoint, dermnet::default_max_body_bytes());
  json out = {{"command", "serve"},
              {"bind", args.bind},
              {"model_version", server.model_version()},
              {"max_body_bytes", dermnet::default_max_body_bytes()}};
  emit(out, "serving " + args.checkpoint + " on http://" + args.bind);
  if (!server.listen(host, port)) {
    std::cerr << "failed to bind " << args.bind << "\n";
    return kExitData;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Residual-CNN melanoma classifier: synthesis, training, inference, serving"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic labeled dataset");
  synth->add_option("--n", synth_args.n, "Number of images (even, >= 8)");
  synth->add_option("--size", synth_args.size, "Square image side in pixels");
  synth->add_option("--seed", synth_args.seed, "RNG seed");
  synth->add_option("--out", synth_args.out, "Output directory")->required();

  TrainArgs train_args;
  CLI::App* train = app.add_subcommand("train", "Train on a manifest directory");
  train->add_option("--data", train_args.data, "Directory with manifest.csv and images")
      ->required();
  train->add_option("--out-checkpoint", train_args.out_checkpoint, "Checkpoint output path")
      ->required();
  train->add_option("--epochs", train_args.epochs, "Training epochs");
  train->add_option("--lr", train_args.lr, "SGD learning rate");
  train->add_option("--batch", train_args.batch, "Minibatch size");
  train->add_option("--seed", train_args.seed, "RNG seed");
  train->add_option("--class-weights", train_args.class_weights,
                    "\"balanced\" or two comma-separated loss weights (benign,melanoma)");
  train->add_flag("--dense-skips", train_args.dense_skips,
                  "Feed every earlier activation into each layer");

  EvalArgs eval_args;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval_cmd->add_option("--data", eval_args.data, "Directory with manifest.csv and images")
      ->required();
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint path")->required();

  PredictArgs predict_args;
  CLI::App* predict = app.add_subcommand("predict", "Classify one image");
  predict->add_option("--image", predict_args.image, "PNG or JPEG path")->required();
  predict->add_option("--checkpoint", predict_args.checkpoint, "Checkpoint path")->required();
  predict->add_flag("--cam", predict_args.cam, "Compute the Grad-CAM overlay");
  predict->add_option("--out-overlay", predict_args.out_overlay,
                      "Write the overlay PNG here (implies --cam)");

  ServeArgs serve_args;
  CLI::App* serve = app.add_subcommand("serve", "Serve predictions over HTTP");
  serve->add_option("--checkpoint", serve_args.checkpoint, "Checkpoint path")->required();
  serve->add_option("--bind", serve_args.bind, "host:port to listen on");

  try {
    app.parse(argc, argv);
    if (synth->parsed()) return run_synth(synth_args);
    if (train->parsed()) return run_train(train_args);
    if (eval_cmd->parsed()) return run_eval(eval_args);
    if (predict->parsed()) return run_predict(predict_args);
    if (serve->parsed()) return run_serve(serve_args);
    return kExitUsage;
  } catch (const CLI::ParseError& e) {
    // Help and version requests exit 0; genuine usage errors exit 1.
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
}
