// Copyright 2026 The mmembed Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mmembed/checkpoint.hpp"
#include "mmembed/error.hpp"
#include "mmembed/training.hpp"

namespace mmembed {
namespace {

std::string save_to_string(Model& m) {
  std::ostringstream out;
  save_checkpoint(m, out);
  return out.str();
}

Model load_from_string(const std::string& bytes) {
  std::istringstream in(bytes);
  return load_checkpoint(in);
}

void expect_same_params(Model& a, Model& b) {
  auto pa = a.parameters(), pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].name, pb[i].name);
    EXPECT_TRUE(pa[i].tensor->same_values(*pb[i].tensor)) << pa[i].name;
  }
}

TEST(CheckpointTest, RoundTripIsBitExact) {
  ModelConfig c;
  c.t2i_layers = 1;
  c.missing_image = MissingImageMode::zero_fill;
  Model m(c, 4);
  const std::string bytes = save_to_string(m);
  Model back = load_from_string(bytes);
  EXPECT_EQ(back.config(), m.config());
  expect_same_params(m, back);
  EXPECT_EQ(save_to_string(back), bytes);
}

TEST(CheckpointTest, AdaptersSurviveRoundTrip) {
  Model m(ModelConfig{}, 4);
  AdapterConfig ac;
  ac.rank = 4;
  ac.targets = {"backbone", "t2i"};
  apply_low_rank_adapters(m, ac, 2);
  // Give B some nonzero values so the adapter actually contributes.
  for (auto& p : m.parameters()) {
    if (p.name.ends_with(".lora_b")) p.tensor->data()[0] = 0.25;
  }
  Model back = load_from_string(save_to_string(m));
  expect_same_params(m, back);
  const ModalInput in{{0, 4}, {7, 8, 9}, std::nullopt};
  EXPECT_EQ(m.embed(in).values, back.embed(in).values);
}

TEST(CheckpointTest, FileRoundTripAndPeek) {
  ModelConfig c;
  c.d_model = 16;
  Model m(c, 2);
  const auto path = std::filesystem::temp_directory_path() / "mmembed_ckpt_test.bin";
  save_checkpoint(m, path);
  EXPECT_EQ(peek_checkpoint_config(path), c);
  Model back = load_checkpoint(path);
  expect_same_params(m, back);
  std::filesystem::remove(path);
}

TEST(CheckpointTest, CorruptionIsDetected) {
  Model m(ModelConfig{}, 4);
  const std::string bytes = save_to_string(m);

  std::string flipped = bytes;
  flipped[flipped.size() - 3] ^= 0x10;
  EXPECT_THROW(load_from_string(flipped), CheckpointError);

  EXPECT_THROW(load_from_string(bytes.substr(0, bytes.size() - 8)), CheckpointError);
  EXPECT_THROW(load_from_string(bytes.substr(0, 10)), CheckpointError);
  EXPECT_THROW(load_from_string(bytes + "x"), CheckpointError);
  EXPECT_THROW(load_from_string(""), CheckpointError);

  std::string magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(load_from_string(magic), CheckpointError);

  std::string version = bytes;
  version[8] = 99;
  EXPECT_THROW(load_from_string(version), CheckpointError);

  EXPECT_THROW(load_checkpoint(std::filesystem::path("/nonexistent/ckpt.bin")), CheckpointError);
}

TEST(CheckpointTest, HeaderTamperingIsDetected) {
  Model m(ModelConfig{}, 4);
  std::string bytes = save_to_string(m);
  // Same-length edit of the stored config: tensors no longer fit it.
  const auto pos = bytes.find("\"d_model\":32");
  ASSERT_NE(pos, std::string::npos);
  bytes.replace(pos, 12, "\"d_model\":16");
  EXPECT_THROW(load_from_string(bytes), CheckpointError);
}

TEST(CheckpointTest, ConfigMismatchNamesBothValues) {
  ModelConfig a, b;
  b.d_model = 16;
  b.t2i_layers = 4;
  const auto msg = describe_config_mismatch(a, b);
  EXPECT_NE(msg.find("d_model: config 32 vs checkpoint 16"), std::string::npos) << msg;
  EXPECT_NE(msg.find("t2i_layers"), std::string::npos) << msg;
  EXPECT_TRUE(describe_config_mismatch(a, a).empty());
}

TEST(CheckpointTest, ConfigJsonRoundTrips) {
  ModelConfig c;
  c.half_padding = true;
  c.visual_tokens = 16;
  c.missing_image = MissingImageMode::text_only;
  EXPECT_EQ(model_config_from_json(model_config_to_json(c)), c);
}

}  // namespace
}  // namespace mmembed
