// Copyright 2026 The mmembed Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "mmembed/model.hpp"

namespace mmembed {

/// Single-file model checkpoint.
///
/// Layout: the 8-byte magic "MMEMBCKP", a little-endian u32 format version,
/// a u64 header length, a JSON header, then the raw little-endian f64
/// payload of every parameter in header order. The header records the
/// ModelConfig, per-linear adapter ranks and scales, each tensor's name and
/// shape, the payload byte count and an FNV-1a 64 checksum of the payload.
/// Round trips are bit-exact.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(Model& model, std::ostream& out);
void save_checkpoint(Model& model, const std::filesystem::path& path);

/// Throws CheckpointError on truncation, a bad magic/version, a checksum
/// mismatch or tensors that do not match the stored config.
Model load_checkpoint(std::istream& in);
Model load_checkpoint(const std::filesystem::path& path);

/// Reads only the config from a checkpoint header.
ModelConfig peek_checkpoint_config(const std::filesystem::path& path);

/// Names every field that differs; empty when equal.
std::string describe_config_mismatch(const ModelConfig& expected, const ModelConfig& actual);

/// JSON conversions shared with run reports.
std::string model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const std::string& json);

}  // namespace mmembed
