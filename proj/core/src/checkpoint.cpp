#include "dermnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <zlib.h>

namespace dermnet {

namespace {

constexpr char kMagic[8] = {'D', 'R', 'M', 'R', 'S', 'N', 'T', '1'};
constexpr uint32_t kVersion = 1;

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v & 0xff));
  out.push_back(static_cast<uint8_t>((v >> 8) & 0xff));
  out.push_back(static_cast<uint8_t>((v >> 16) & 0xff));
  out.push_back(static_cast<uint8_t>((v >> 24) & 0xff));
}

void put_i32(std::vector<uint8_t>& out, int32_t v) {
  put_u32(out, static_cast<uint32_t>(v));
}

void put_f32(std::vector<uint8_t>& out, float v) {
  put_u32(out, std::bit_cast<uint32_t>(v));
}

void put_floats(std::vector<uint8_t>& out, std::span<const float> values) {
  for (float v : values) put_f32(out, v);
}

class Reader {
 public:
  explicit Reader(std::span<const uint8_t> bytes) : bytes_(bytes) {}

  size_t remaining() const { return bytes_.size() - offset_; }

  uint32_t u32() {
    need(4);
    uint32_t v = static_cast<uint32_t>(bytes_[offset_]) |
                 static_cast<uint32_t>(bytes_[offset_ + 1]) << 8 |
                 static_cast<uint32_t>(bytes_[offset_ + 2]) << 16 |
                 static_cast<uint32_t>(bytes_[offset_ + 3]) << 24;
    offset_ += 4;
    return v;
  }

  int32_t i32() { return static_cast<int32_t>(u32()); }
  float f32() { return std::bit_cast<float>(u32()); }

  std::vector<float> floats(int64_t count) {
    std::vector<float> out(static_cast<size_t>(count));
    for (float& v : out) v = f32();
    return out;
  }

 private:
  void need(size_t n) {
    if (remaining() < n) {
      throw CheckpointError(CheckpointError::Kind::kMalformed,
                            "malformed checkpoint: unexpected end of data");
    }
  }

  std::span<const uint8_t> bytes_;
  size_t offset_ = 0;
};

Tensor read_tensor(Reader& reader, Shape shape) {
  int64_t n = shape_numel(shape);
  return Tensor(std::move(shape), reader.floats(n));
}

/// Number of f32 values the blob section holds for this config.
int64_t blob_float_count(const ModelConfig& config) {
  int64_t total = 3;  // channel means
  int64_t in_ch = config.in_channels;
  for (int out_ch : config.layer_channels) {
    total += static_cast<int64_t>(out_ch) * in_ch * 9 + out_ch;  // conv
    total += 4LL * out_ch;                                       // bn params + running stats
    total += static_cast<int64_t>(out_ch) * in_ch + out_ch;      // projection
    in_ch = out_ch;
  }
  total += static_cast<int64_t>(config.num_classes) * in_ch + config.num_classes;  // head
  return total;
}

}  // namespace

std::vector<uint8_t> serialize_model(const Model& model) {
  validate_config(model.config);
  std::vector<uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + sizeof(kMagic));
  put_u32(out, kVersion);
  put_i32(out, model.config.input_size);
  put_i32(out, model.config.in_channels);
  put_i32(out, static_cast<int32_t>(model.config.layer_channels.size()));
  for (int c : model.config.layer_channels) put_i32(out, c);
  put_i32(out, model.config.num_classes);
  put_u32(out, model.config.skip_mode == SkipMode::kDense ? 1u : 0u);
  for (float m : model.channel_means) put_f32(out, m);
  for (const ParameterLayer& layer : model.layers) {
    put_floats(out, layer.conv.weights.data());
    put_floats(out, layer.conv.bias.data());
    put_floats(out, layer.bn.gamma.data());
    put_floats(out, layer.bn.beta.data());
    put_floats(out, layer.bn.running_mean);
    put_floats(out, layer.bn.running_var);
    put_floats(out, layer.projection.weights.data());
    put_floats(out, layer.projection.bias.data());
  }
  put_floats(out, model.head.weights.data());
  put_floats(out, model.head.bias.data());
  uint32_t crc =
      static_cast<uint32_t>(crc32(0L, reinterpret_cast<const Bytef*>(out.data()),
                                  static_cast<uInt>(out.size())));
  put_u32(out, crc);
  return out;
}

Model deserialize_model(std::span<const uint8_t> bytes) {
  if (bytes.size() < sizeof(kMagic) ||
      std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError(CheckpointError::Kind::kNotACheckpoint,
                          "not a checkpoint: bad magic");
  }
  if (bytes.size() < sizeof(kMagic) + 8) {
    throw CheckpointError(CheckpointError::Kind::kMalformed,
                          "malformed checkpoint: unexpected end of data");
  }
  Reader header(bytes.subspan(sizeof(kMagic), 4));
  uint32_t version = header.u32();
  if (version != kVersion) {
    throw CheckpointError(CheckpointError::Kind::kUnsupportedVersion,
                          "unsupported checkpoint version " + std::to_string(version));
  }
  uint32_t stored_crc = static_cast<uint32_t>(bytes[bytes.size() - 4]) |
                        static_cast<uint32_t>(bytes[bytes.size() - 3]) << 8 |
                        static_cast<uint32_t>(bytes[bytes.size() - 2]) << 16 |
                        static_cast<uint32_t>(bytes[bytes.size() - 1]) << 24;
  uint32_t actual_crc =
      static_cast<uint32_t>(crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()),
                                  static_cast<uInt>(bytes.size() - 4)));
  if (stored_crc != actual_crc) {
    throw CheckpointError(CheckpointError::Kind::kCorrupt,
                          "corrupt checkpoint: CRC mismatch");
  }

  Reader reader(bytes.subspan(sizeof(kMagic) + 4, bytes.size() - sizeof(kMagic) - 8));
  Model model;
  model.config.input_size = reader.i32();
  model.config.in_channels = reader.i32();
  int32_t num_layers = reader.i32();
  if (num_layers != 3) {
    throw CheckpointError(CheckpointError::Kind::kMalformed,
                          "malformed checkpoint: expected 3 layers, got " +
                              std::to_string(num_layers));
  }
  model.config.layer_channels.clear();
  for (int i = 0; i < num_layers; ++i) model.config.layer_channels.push_back(reader.i32());
  model.config.num_classes = reader.i32();
  uint32_t skip_mode = reader.u32();
  if (skip_mode > 1) {
    throw CheckpointError(CheckpointError::Kind::kMalformed,
                          "malformed checkpoint: unknown skip mode " + std::to_string(skip_mode));
  }
  model.config.skip_mode = skip_mode == 1 ? SkipMode::kDense : SkipMode::kConsecutive;
  try {
    validate_config(model.config);
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(CheckpointError::Kind::kMalformed,
                          std::string("malformed checkpoint: ") + e.what());
  }
  if (reader.remaining() != static_cast<size_t>(blob_float_count(model.config)) * 4) {
    throw CheckpointError(
        CheckpointError::Kind::kMalformed,
        "malformed checkpoint: payload size does not match the stored config");
  }

  for (int c = 0; c < 3; ++c) model.channel_means[static_cast<size_t>(c)] = reader.f32();
  int in_ch = model.config.in_channels;
  for (int out_ch : model.config.layer_channels) {
    ParameterLayer layer;
    layer.conv.weights = read_tensor(reader, {out_ch, in_ch, 3, 3});
    layer.conv.bias = read_tensor(reader, {out_ch});
    layer.conv.stride = 1;
    layer.conv.padding = 1;
    layer.bn.gamma = read_tensor(reader, {out_ch});
    layer.bn.beta = read_tensor(reader, {out_ch});
    layer.bn.running_mean = reader.floats(out_ch);
    layer.bn.running_var = reader.floats(out_ch);
    layer.projection.weights = read_tensor(reader, {out_ch, in_ch, 1, 1});
    layer.projection.bias = read_tensor(reader, {out_ch});
    layer.projection.stride = 2;
    layer.projection.padding = 0;
    model.layers.push_back(std::move(layer));
    in_ch = out_ch;
  }
  model.head.weights = read_tensor(reader, {model.config.num_classes, in_ch});
  model.head.bias = read_tensor(reader, {model.config.num_classes});
  return model;
}

uint64_t save_checkpoint(const Model& model, const std::string& path) {
  std::vector<uint8_t> bytes = serialize_model(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw CheckpointError(CheckpointError::Kind::kIo,
                          "cannot open checkpoint for writing: " + path);
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw CheckpointError(CheckpointError::Kind::kIo, "error writing checkpoint: " + path);
  }
  return bytes.size();
}

Model load_checkpoint(const std::string& path, uint32_t* crc_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw CheckpointError(CheckpointError::Kind::kIo, "cannot open checkpoint: " + path);
  }
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  if (in.bad()) {
    throw CheckpointError(CheckpointError::Kind::kIo, "error reading checkpoint: " + path);
  }
  Model model = deserialize_model(bytes);
  if (crc_out != nullptr) {
    *crc_out = static_cast<uint32_t>(bytes[bytes.size() - 4]) |
               static_cast<uint32_t>(bytes[bytes.size() - 3]) << 8 |
               static_cast<uint32_t>(bytes[bytes.size() - 2]) << 16 |
               static_cast<uint32_t>(bytes[bytes.size() - 1]) << 24;
  }
  return model;
}

}  // namespace dermnet
