// Copyright 2026 The mmembed Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mmembed/rng.hpp"

namespace mmembed {

/// Which side of a pair carries an image: (T+I,T), (T,T+I), (T+I,T+I).
enum class Combo { TI_T, T_TI, TI_TI };
inline constexpr std::array<Combo, 3> kAllCombos = {Combo::TI_T, Combo::T_TI, Combo::TI_TI};

enum class TaskTag { classification, retrieval, vqa, grounding };
inline constexpr std::array<TaskTag, 4> kAllTasks = {TaskTag::classification, TaskTag::retrieval,
                                                     TaskTag::vqa, TaskTag::grounding};

enum class Split { IND, OOD };
enum class Side { query, target };

std::string_view to_string(Combo c);
std::string_view to_string(TaskTag t);
std::string_view to_string(Split s);
/// Throw SchemaError (line 0) on unknown names.
Combo parse_combo(std::string_view s);
TaskTag parse_task(std::string_view s);
Split parse_split(std::string_view s);

bool query_has_image(Combo c);
bool target_has_image(Combo c);
bool side_has_image(Combo c, Side s);

/// P x D_in raw patch features standing in for an image.
struct PatchGrid {
  std::size_t patches = 0;
  std::size_t dim = 0;
  std::vector<double> values;  // row-major, patches * dim

  bool operator==(const PatchGrid&) const = default;
};

/// One query or candidate: instruction tokens, content tokens, optional image.
struct ModalInput {
  std::vector<int> instruction;
  std::vector<int> content;
  std::optional<PatchGrid> image;

  bool has_image() const { return image.has_value(); }
  bool operator==(const ModalInput&) const = default;
};

struct PairRecord {
  ModalInput query;
  ModalInput target;
  Combo combo = Combo::TI_T;
  TaskTag task = TaskTag::retrieval;
  Split split = Split::IND;
  int class_id = 0;

  bool operator==(const PairRecord&) const = default;
};

struct CorpusSpec {
  std::uint64_t seed = 7;
  std::size_t vocab_size = 64;
  std::size_t patches = 8;     // P
  std::size_t patch_dim = 16;  // D_in
  std::size_t n_classes = 40;
  /// Fraction of classes held out as the OOD split (highest class ids).
  double ood_fraction = 0.2;
  /// Training pairs per combo (IND classes only).
  std::array<std::size_t, 3> counts = {0, 0, 0};
  /// Evaluation pairs per combo (IND and OOD classes).
  std::array<std::size_t, 3> eval_counts = {0, 0, 0};
  /// Relative weight of classification, retrieval, vqa, grounding.
  std::array<double, 4> task_mix = {1.0, 1.0, 1.0, 1.0};
  double noise_sigma = 0.2;
  std::size_t content_length = 4;
  std::size_t signature_size = 3;
  /// Probability that a content token comes from the class signature, for
  /// text-only items and for items that also carry an image.
  double text_signal = 0.95;
  double image_text_signal = 0.3;

  std::size_t count(Combo c) const { return counts[static_cast<std::size_t>(c)]; }
  std::size_t& count(Combo c) { return counts[static_cast<std::size_t>(c)]; }
  std::size_t n_ood_classes() const;
  std::size_t n_ind_classes() const { return n_classes - n_ood_classes(); }
  bool is_ood(int class_id) const;
  /// Throws ConfigError on an invalid combination.
  void validate() const;
};

/// Per-combo counts with `dominant` taking half of `total` and the other two
/// combos a quarter each. `total` must be divisible by 4.
std::array<std::size_t, 3> skewed_counts(std::size_t total, Combo dominant);

/// Token layout inside the corpus vocabulary.
struct TokenLayout {
  static constexpr int kFirstTaskToken = 0;  // 4 task tokens
  static constexpr int kQuerySideToken = 4;
  static constexpr int kTargetSideToken = 5;
  static constexpr int kFirstContentToken = 6;
};

/// Class prototypes and token signatures; a pure function of the spec.
class ItemGenerator {
 public:
  explicit ItemGenerator(const CorpusSpec& spec);

  /// Content tokens come from the class signature with probability
  /// text_signal (image_text_signal when an image is attached), otherwise
  /// uniformly from the content vocabulary. The image is the class
  /// prototype plus N(0, noise_sigma^2) noise. Classification targets
  /// without an image carry only the class label token.
  ModalInput gen_item(int class_id, Rng& rng, bool with_image, TaskTag task = TaskTag::retrieval,
                      Side side = Side::query) const;

  static std::vector<int> instruction(TaskTag task, Side side);
  const PatchGrid& prototype(int class_id) const { return prototypes_.at(class_id); }
  /// Query and target sides of a class draw content from disjoint token
  /// signatures, so raw token overlap carries no class information across
  /// the pair.
  const std::vector<int>& signature(int class_id, Side side) const {
    return side == Side::query ? query_signatures_.at(class_id) : target_signatures_.at(class_id);
  }
  int label_token(int class_id) const { return target_signatures_.at(class_id).front(); }
  const CorpusSpec& spec() const { return spec_; }

 private:
  CorpusSpec spec_;
  std::vector<PatchGrid> prototypes_;
  std::vector<std::vector<int>> query_signatures_;
  std::vector<std::vector<int>> target_signatures_;
};

enum class Partition { train, eval };

/// Deterministic corpus: exactly spec.counts (train) or spec.eval_counts
/// (eval) pairs per combo. Train uses IND classes only; eval cycles through
/// every class. Classes are assigned round-robin so each (task, combo)
/// bucket is class-balanced. Throws ContractError when all counts are zero.
std::vector<PairRecord> gen_corpus(const CorpusSpec& spec, Partition partition = Partition::train);

}  // namespace mmembed
