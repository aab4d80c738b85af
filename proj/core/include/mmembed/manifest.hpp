// Copyright 2026 The mmembed Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mmembed/corpus.hpp"

namespace mmembed {

// Manifest format: UTF-8 JSON Lines, one PairRecord per line:
//
//   {"class_id":3,"combo":"TI_T","query":{...},"split":"IND",
//    "target":{...},"task_tag":"retrieval"}
//
// where each ModalInput is {"content":[ids],"image":null|[[f64,...],...],
// "instruction":[ids]} and the image is a patches x dim nested array.
// Doubles are written in shortest round-trip form, so write/read is exact.

std::string to_manifest_line(const PairRecord& record);
/// `line_no` is only used for error messages.
PairRecord parse_manifest_line(const std::string& line, std::size_t line_no);

void write_manifest(std::span<const PairRecord> records, std::ostream& out);
void write_manifest(std::span<const PairRecord> records, const std::filesystem::path& path);

/// Blank lines are skipped. Malformed JSON raises ParseError and schema
/// violations raise SchemaError, both carrying the 1-based line number.
std::vector<PairRecord> read_manifest(std::istream& in);
std::vector<PairRecord> read_manifest(const std::filesystem::path& path);

}  // namespace mmembed
