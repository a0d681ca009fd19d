// Copyright 2026 The fairkd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fairkd/encoder.hpp"

namespace fairkd {

/// Binary checkpoint layout (all integers little-endian):
///
///   "FKD1"                         magic, 4 bytes
///   u32 version                    currently 1
///   u32 n, n bytes                 metadata, UTF-8 "key=value" lines
///   u32 count                      number of tensors
///   per tensor:                    manifest entry
///     u32 n, n bytes               name
///     u32 rank, rank x u64         shape
///   payloads                       f32 values of every tensor, manifest order
///   u32 crc                        CRC-32 of every preceding byte
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct CheckpointFile {
  std::uint32_t version = kCheckpointVersion;
  std::map<std::string, std::string> metadata;
  std::vector<CheckpointTensor> tensors;

  const CheckpointTensor* find(const std::string& name) const;
};

std::vector<std::uint8_t> encode_checkpoint(const CheckpointFile& file);
/// Throws FormatError (with the byte offset) on a bad magic, unknown version,
/// truncation, malformed manifest or checksum mismatch.
CheckpointFile decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void write_checkpoint(const std::filesystem::path& path, const CheckpointFile& file);
CheckpointFile read_checkpoint(const std::filesystem::path& path);

/// Metadata keys describing an encoder config ("config.num_layers", ...).
std::map<std::string, std::string> config_metadata(const EncoderConfig& config);
EncoderConfig config_from_metadata(const std::map<std::string, std::string>& metadata);

/// Encoder parameters in canonical order plus config metadata and `extra`.
CheckpointFile make_checkpoint(const EncoderWeights<float>& weights,
                               const std::map<std::string, std::string>& extra = {});
/// Rebuilds the encoder; every expected tensor must be present with the
/// expected shape. Weights come back frozen.
EncoderWeights<float> weights_from_checkpoint(const CheckpointFile& file);

void save_encoder(const std::filesystem::path& path, const EncoderWeights<float>& weights,
                  const std::map<std::string, std::string>& extra = {});
EncoderWeights<float> load_encoder(const std::filesystem::path& path,
                                   std::map<std::string, std::string>* metadata = nullptr);

}  // namespace fairkd
