// Copyright 2026 The qilin-desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint file layout (all integers little-endian):
//
//   "QLNM"            4 bytes
//   version           u32
//   header_length     u64
//   header            header_length bytes of UTF-8 JSON
//   payload           float64 values, row-major, in tensor-index order
//   checksum          u64 FNV-1a over every preceding byte
//
// The header holds the model config, the tensor index (name, shape, byte
// offset into the payload), the optional adapter index, the vocabulary and
// the training metadata.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

#include "qilin/trainer.hpp"

namespace qilin::trainer {

inline constexpr std::uint32_t kCheckpointVersion = 1;

nlohmann::json model_config_to_json(const model::ModelConfig& c);
// Missing keys keep their defaults. Throws ConfigError on wrong types.
model::ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json lora_config_to_json(const model::LoraConfig& c);
model::LoraConfig lora_config_from_json(const nlohmann::json& j);

std::uint64_t fnv1a64(std::string_view bytes);

std::string serialize_checkpoint(const ModelState& state);
// Throws IntegrityError with the byte offset of the first problem: bad
// magic, unsupported version, truncation, malformed header, checksum
// mismatch or tensor shapes that disagree with the config.
ModelState parse_checkpoint(std::string_view bytes);

void save_checkpoint(const ModelState& state, const std::filesystem::path& path);
ModelState load_checkpoint(const std::filesystem::path& path);

}  // namespace qilin::trainer
