#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "rulex/model.hpp"

namespace rulex {

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

// A checkpoint is two files sharing a stem:
//   <stem>.json  manifest: format tag, model config, caller metadata and, for
//                each parameter in canonical order, name/shape/offset/count
//   <stem>.bin   the parameters' float32 values, little-endian, concatenated
//                in manifest order with no padding
// Saving then loading reproduces every parameter bit for bit.
void save_checkpoint(const std::filesystem::path& stem, const ModelParams& params,
                     const nlohmann::json& metadata = nlohmann::json::object());
ModelParams load_checkpoint(const std::filesystem::path& stem, nlohmann::json* metadata = nullptr);

// Raw little-endian float32 helpers shared with the binary dataset format.
void write_f32_le(std::ostream& os, std::span<const float> values);
void read_f32_le(std::istream& is, std::span<float> values);

}  // namespace rulex
