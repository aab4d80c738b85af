// Copyright 2026 The mmembed Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mmembed/error.hpp"
#include "mmembed/manifest.hpp"

namespace mmembed {
namespace {

std::vector<PairRecord> sample_records() {
  CorpusSpec spec;
  spec.counts = {40, 30, 30};
  return gen_corpus(spec);
}

TEST(ManifestTest, RoundTripThroughFile) {
  const auto records = sample_records();
  const auto path = std::filesystem::temp_directory_path() / "mmembed_manifest_roundtrip.jsonl";
  write_manifest(records, path);
  EXPECT_EQ(read_manifest(path), records);
  std::filesystem::remove(path);
}

TEST(ManifestTest, DoublesSurviveExactly) {
  PairRecord r;
  r.query.instruction = {0, 4};
  r.query.content = {7, 9};
  r.query.image = PatchGrid{1, 3, {0.1, -1e-300, 1.0 / 3.0}};
  r.target.instruction = {0, 5};
  r.target.content = {8};
  const auto back = parse_manifest_line(to_manifest_line(r), 1);
  EXPECT_EQ(back, r);
}

TEST(ManifestTest, LinesAreSelfDescribing) {
  const auto line = to_manifest_line(sample_records().front());
  for (const char* field : {"\"query\"", "\"target\"", "\"combo\"", "\"task_tag\"", "\"split\"", "\"class_id\""}) {
    EXPECT_NE(line.find(field), std::string::npos) << field;
  }
  EXPECT_EQ(line.find('\n'), std::string::npos);
}

TEST(ManifestTest, UnknownComboIsSchemaErrorNamingLine) {
  const auto records = sample_records();
  std::ostringstream out;
  write_manifest(std::span(records).first(3), out);
  std::string text = out.str();
  const auto pos = text.rfind("\"TI_T\"");
  ASSERT_NE(pos, std::string::npos);
  text.replace(pos, 6, "\"X_Y\"");
  std::istringstream in(text);
  try {
    read_manifest(in);
    FAIL() << "expected SchemaError";
  } catch (const SchemaError& e) {
    EXPECT_EQ(e.line, 3u);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("X_Y"), std::string::npos) << e.what();
  }
}

TEST(ManifestTest, MalformedJsonIsParseErrorNamingLine) {
  std::istringstream in(to_manifest_line(sample_records().front()) + "\n{\"query\": [\n");
  try {
    read_manifest(in);
    FAIL() << "expected ParseError";
  } catch (const SchemaError&) {
    FAIL() << "malformed JSON must not be reported as a schema error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line, 2u);
  }
}

TEST(ManifestTest, SchemaViolationsAreRejected) {
  const std::string good = to_manifest_line(sample_records().front());
  auto expect_schema = [](std::string line) {
    std::istringstream in(line);
    EXPECT_THROW(read_manifest(in), SchemaError) << line;
  };
  std::string no_class = good;
  no_class.replace(no_class.find("\"class_id\""), 10, "\"klass_id\"");
  expect_schema(no_class);
  // Image presence must agree with the combo tag.
  std::string swapped = good;
  swapped.replace(swapped.find("\"TI_T\""), 6, "\"T_TI\"");
  expect_schema(swapped);
  expect_schema("[1, 2, 3]");
}

TEST(ManifestTest, EmptyFileGivesNoRecords) {
  std::istringstream empty("");
  EXPECT_TRUE(read_manifest(empty).empty());
  std::istringstream blank("\n\n");
  EXPECT_TRUE(read_manifest(blank).empty());
}

TEST(ManifestTest, MissingFileIsAnError) {
  EXPECT_THROW(read_manifest(std::filesystem::path("/nonexistent/dir/m.jsonl")), Error);
}

}  // namespace
}  // namespace mmembed
