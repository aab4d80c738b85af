// Copyright 2026 The mmembed Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmembed/manifest.hpp"

#include <fstream>
#include <nlohmann/json.hpp>

#include "mmembed/error.hpp"

namespace mmembed {
namespace {

using nlohmann::json;

json input_to_json(const ModalInput& in) {
  json j;
  j["instruction"] = in.instruction;
  j["content"] = in.content;
  if (in.image) {
    json rows = json::array();
    const auto& g = *in.image;
    for (std::size_t p = 0; p < g.patches; ++p) {
      rows.push_back(std::vector<double>(g.values.begin() + static_cast<long>(p * g.dim),
                                         g.values.begin() + static_cast<long>((p + 1) * g.dim)));
    }
    j["image"] = std::move(rows);
  } else {
    j["image"] = nullptr;
  }
  return j;
}

[[noreturn]] void schema_fail(const std::string& what, std::size_t line) {
  throw SchemaError("manifest line " + std::to_string(line) + ": " + what, line);
}

std::vector<int> token_list(const json& j, const char* key, std::size_t line) {
  if (!j.contains(key) || !j[key].is_array()) schema_fail(std::string("missing token array '") + key + "'", line);
  std::vector<int> out;
  for (const auto& v : j[key]) {
    if (!v.is_number_integer() || v.get<long long>() < 0) {
      schema_fail(std::string("'") + key + "' must hold nonnegative integers", line);
    }
    out.push_back(v.get<int>());
  }
  return out;
}

ModalInput input_from_json(const json& j, std::size_t line) {
  if (!j.is_object()) schema_fail("query/target must be objects", line);
  ModalInput in;
  in.instruction = token_list(j, "instruction", line);
  in.content = token_list(j, "content", line);
  if (!j.contains("image")) schema_fail("missing 'image' (use null for none)", line);
  const json& img = j["image"];
  if (img.is_null()) return in;
  if (!img.is_array() || img.empty()) schema_fail("'image' must be a non-empty nested array", line);
  PatchGrid g;
  g.patches = img.size();
  for (const auto& row : img) {
    if (!row.is_array() || row.empty()) schema_fail("image rows must be non-empty arrays", line);
    if (g.dim == 0) g.dim = row.size();
    if (row.size() != g.dim) schema_fail("image rows have unequal length", line);
    for (const auto& v : row) {
      if (!v.is_number()) schema_fail("image values must be numbers", line);
      g.values.push_back(v.get<double>());
    }
  }
  in.image = std::move(g);
  return in;
}

std::string string_field(const json& j, const char* key, std::size_t line) {
  if (!j.contains(key) || !j[key].is_string()) schema_fail(std::string("missing string field '") + key + "'", line);
  return j[key].get<std::string>();
}

}  // namespace

std::string to_manifest_line(const PairRecord& r) {
  json j;
  j["query"] = input_to_json(r.query);
  j["target"] = input_to_json(r.target);
  j["combo"] = to_string(r.combo);
  j["task_tag"] = to_string(r.task);
  j["split"] = to_string(r.split);
  j["class_id"] = r.class_id;
  return j.dump();
}

PairRecord parse_manifest_line(const std::string& line, std::size_t line_no) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError("manifest line " + std::to_string(line_no) + ": " + e.what(), line_no);
  }
  if (!j.is_object()) schema_fail("record must be a JSON object", line_no);
  PairRecord r;
  try {
    r.combo = parse_combo(string_field(j, "combo", line_no));
    r.task = parse_task(string_field(j, "task_tag", line_no));
    r.split = parse_split(string_field(j, "split", line_no));
  } catch (const SchemaError& e) {
    if (e.line != 0) throw;
    schema_fail(e.what(), line_no);
  }
  if (!j.contains("class_id") || !j["class_id"].is_number_integer()) {
    schema_fail("missing integer 'class_id'", line_no);
  }
  r.class_id = j["class_id"].get<int>();
  if (!j.contains("query") || !j.contains("target")) schema_fail("missing 'query' or 'target'", line_no);
  r.query = input_from_json(j["query"], line_no);
  r.target = input_from_json(j["target"], line_no);
  if (r.query.has_image() != query_has_image(r.combo) ||
      r.target.has_image() != target_has_image(r.combo)) {
    schema_fail("image presence does not match combo " + std::string(to_string(r.combo)), line_no);
  }
  return r;
}

void write_manifest(std::span<const PairRecord> records, std::ostream& out) {
  for (const auto& r : records) out << to_manifest_line(r) << '\n';
}

void write_manifest(std::span<const PairRecord> records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open manifest for writing: " + path.string());
  write_manifest(records, out);
  out.flush();
  if (!out) throw Error("failed writing manifest: " + path.string());
}

std::vector<PairRecord> read_manifest(std::istream& in) {
  std::vector<PairRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    records.push_back(parse_manifest_line(line, line_no));
  }
  return records;
}

std::vector<PairRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open manifest: " + path.string());
  return read_manifest(in);
}

}  // namespace mmembed
