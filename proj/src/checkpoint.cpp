#include "rulex/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "rulex/error.hpp"

namespace rulex {
namespace {

constexpr const char* kFormat = "rulex-checkpoint";
constexpr int kFormatVersion = 1;

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* ext) {
  auto p = stem;
  p += ext;
  return p;
}

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

}  // namespace

void write_f32_le(std::ostream& os, std::span<const float> values) {
  std::vector<char> buf(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = to_le(std::bit_cast<std::uint32_t>(values[i]));
    std::memcpy(buf.data() + i * 4, &bits, 4);
  }
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

void read_f32_le(std::istream& is, std::span<float> values) {
  std::vector<char> buf(values.size() * 4);
  is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  require(static_cast<std::size_t>(is.gcount()) == buf.size(), ErrorKind::Io, "truncated float32 payload");
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, buf.data() + i * 4, 4);
    values[i] = std::bit_cast<float>(to_le(bits));
  }
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"num_layers", c.num_layers},
          {"d_model", c.d_model},
          {"num_heads", c.num_heads},
          {"ff_multiplier", c.ff_multiplier},
          {"label_vocab_size", c.label_vocab_size},
          {"max_seq_len", c.max_seq_len},
          {"input_dim", c.input_dim},
          {"dropout", c.dropout},
          {"activation", to_string(c.activation)},
          {"attention", to_string(c.attention)}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.num_layers = j.value("num_layers", c.num_layers);
    c.d_model = j.value("d_model", c.d_model);
    c.num_heads = j.value("num_heads", c.num_heads);
    c.ff_multiplier = j.value("ff_multiplier", c.ff_multiplier);
    c.label_vocab_size = j.value("label_vocab_size", c.label_vocab_size);
    c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
    c.input_dim = j.value("input_dim", c.input_dim);
    c.dropout = j.value("dropout", c.dropout);
    c.activation = activation_from_string(j.value("activation", to_string(c.activation)));
    c.attention = attention_mask_from_string(j.value("attention", to_string(c.attention)));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Config, std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

void save_checkpoint(const std::filesystem::path& stem, const ModelParams& params, const nlohmann::json& metadata) {
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  nlohmann::json manifest;
  manifest["format"] = kFormat;
  manifest["version"] = kFormatVersion;
  manifest["config"] = to_json(params.config);
  manifest["metadata"] = metadata;
  manifest["payload"] = with_suffix(stem, ".bin").filename().string();
  manifest["byte_order"] = "little";
  manifest["dtype"] = "float32";

  const auto bin_path = with_suffix(stem, ".bin");
  std::ofstream bin(bin_path, std::ios::binary | std::ios::trunc);
  require(bin.good(), ErrorKind::Io, "cannot write " + bin_path.string());
  std::size_t offset = 0;
  auto& tensors = manifest["tensors"] = nlohmann::json::array();
  for (const auto& [name, t] : params.named()) {
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}, {"count", t.numel()}});
    write_f32_le(bin, t.data());
    offset += t.numel() * 4;
  }
  manifest["payload_bytes"] = offset;
  bin.close();
  require(!bin.fail(), ErrorKind::Io, "failed writing " + bin_path.string());

  const auto json_path = with_suffix(stem, ".json");
  std::ofstream js(json_path, std::ios::trunc);
  require(js.good(), ErrorKind::Io, "cannot write " + json_path.string());
  js << manifest.dump(2) << '\n';
  require(!js.fail(), ErrorKind::Io, "failed writing " + json_path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& stem, nlohmann::json* metadata) {
  const auto json_path = with_suffix(stem, ".json");
  std::ifstream js(json_path);
  require(js.good(), ErrorKind::Io, "cannot open checkpoint manifest " + json_path.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(js);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::Io, json_path.string() + ": " + e.what());
  }
  require(manifest.value("format", "") == kFormat, ErrorKind::Io, json_path.string() + " is not a rulex checkpoint");
  require(manifest.value("version", 0) == kFormatVersion, ErrorKind::Io,
          json_path.string() + ": unsupported checkpoint version");

  ModelParams params = zero_params(model_config_from_json(manifest.at("config")));
  auto named = params.named();
  const auto& tensors = manifest.at("tensors");
  require(tensors.size() == named.size(), ErrorKind::Io, "checkpoint parameter count does not match its config");

  const auto bin_path = json_path.parent_path() / manifest.at("payload").get<std::string>();
  std::ifstream bin(bin_path, std::ios::binary);
  require(bin.good(), ErrorKind::Io, "cannot open checkpoint payload " + bin_path.string());
  for (std::size_t i = 0; i < named.size(); ++i) {
    const auto& entry = tensors[i];
    auto& [name, t] = named[i];
    require(entry.at("name") == name, ErrorKind::Io, "checkpoint tensor " + std::to_string(i) + " is '" +
                                                         entry.at("name").get<std::string>() + "', expected " + name);
    require(entry.at("shape").get<Shape>() == t.shape(), ErrorKind::Io, "shape mismatch for " + name);
    bin.seekg(entry.at("offset").get<std::streamoff>());
    read_f32_le(bin, t.data());
  }
  params.set_requires_grad(true);
  if (metadata) *metadata = manifest.value("metadata", nlohmann::json::object());
  return params;
}

}  // namespace rulex
