// Copyright 2026 The mmembed Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mmembed/corpus.hpp"
#include "mmembed/model.hpp"
#include "mmembed/training.hpp"

namespace mmembed {

/// Candidate embeddings (unit rows) and their identifiers.
struct CandidateIndex {
  Tensor embeddings;
  std::vector<std::size_t> ids;

  std::size_t size() const { return ids.size(); }
  /// Throws ContractError unless rows == ids and every row is unit-norm
  /// within 1e-5.
  static CandidateIndex from_embeddings(Tensor embeddings, std::vector<std::size_t> ids);
};

/// Embeds targets in order; ids default to 0..n-1. Throws ContractError on
/// an empty target list.
CandidateIndex build_index(std::span<const ModalInput> targets, const Model& model,
                           std::vector<std::size_t> ids = {});

/// Position of the highest dot product; the lowest position wins ties.
std::size_t argmax_similarity(std::span<const double> query, const CandidateIndex& index);
/// Id of the best candidate for an embedded query.
std::size_t match(std::span<const double> query, const CandidateIndex& index);
std::size_t match(const ModalInput& query, const CandidateIndex& index, const Model& model);

/// Fraction of positions where prediction == gold. Throws ContractError on a
/// length mismatch or empty input.
double precision_at_1(std::span<const std::size_t> predictions, std::span<const std::size_t> gold);

/// One candidate pool: all pairs sharing task, split and combo.
struct BucketScore {
  TaskTag task = TaskTag::retrieval;
  Split split = Split::IND;
  Combo combo = Combo::TI_T;
  std::size_t n_queries = 0;
  std::size_t n_candidates = 0;
  std::size_t correct = 0;
  double p_at_1 = 0.0;
  /// A single-candidate pool scores trivially; excluded from aggregates.
  bool degenerate = false;
};

struct Aggregate {
  std::size_t n_queries = 0;
  std::size_t correct = 0;
  double p_at_1 = 0.0;
};

struct ScoreReport {
  std::vector<BucketScore> buckets;
  std::map<TaskTag, Aggregate> per_task;
  std::map<Combo, Aggregate> per_combo;
  /// Per combo restricted to one split.
  std::map<std::pair<Split, Combo>, Aggregate> per_split_combo;
  Aggregate ind;
  Aggregate ood;
  Aggregate overall;
  std::size_t total_queries = 0;

  /// Query-weighted P@1 over non-degenerate buckets matching the filters.
  double p_at_1(std::optional<Split> split, std::optional<Combo> combo) const;
};

/// Builds aggregates from bucket scores.
ScoreReport summarize(std::vector<BucketScore> buckets);

/// A query counts as correct when its top candidate carries the query's
/// class id. Pools follow the eval corpus's bucket structure.
ScoreReport evaluate(std::span<const PairRecord> eval, const Model& model);

/// Same scoring from precomputed embeddings (row i belongs to eval[i]).
ScoreReport evaluate_embeddings(std::span<const PairRecord> eval, const Tensor& query_embs,
                                const Tensor& target_embs);

/// One object per line: bucket rows, per-task, per-combo and a summary.
void write_score_report(std::ostream& out, const ScoreReport& report);
void write_score_report(const std::filesystem::path& path, const ScoreReport& report);
/// Aligned human-readable table.
void print_score_table(std::ostream& out, const ScoreReport& report);

struct BiasArchitecture {
  std::string name;
  ModelConfig model;
  LossConfig loss;
};

/// The completion architecture as configured and the conventional
/// zero-fill baseline (alpha = 0), otherwise identical.
std::vector<BiasArchitecture> default_bias_architectures(const ModelConfig& model, const LossConfig& loss);

struct BiasCell {
  std::vector<double> per_seed;  // P@1 per seed; NaN for a failed run
  double mean = 0.0;
  bool failed = false;
};

struct BiasArchitectureReport {
  std::string name;
  /// matrix[variant][combo], variant = dominant training combo.
  std::array<std::array<BiasCell, 3>, 3> matrix{};
  /// Population standard deviation of the three combo means per variant.
  std::array<double, 3> stddev{};
};

struct BiasReport {
  std::vector<BiasArchitectureReport> architectures;
  std::vector<std::uint64_t> seeds;
  std::array<std::array<std::size_t, 3>, 3> tallies{};  // per variant, per combo
};

struct BiasProgress {
  std::string architecture;
  Combo variant;
  std::uint64_t seed;
  bool failed;
};

/// Trains a fresh model per (architecture, skewed variant, seed) and
/// evaluates on the fixed balanced eval partition of `base`. Training
/// corpora depend on (variant, seed) only, so architectures are paired.
/// `total` is the training pair count per variant and must be divisible
/// by 4. Divergent runs mark their cell failed; the report is still built.
BiasReport bias_experiment(const CorpusSpec& base, std::size_t total,
                           std::span<const BiasArchitecture> architectures, const TrainConfig& train_cfg,
                           std::span<const std::uint64_t> seeds,
                           const std::function<void(const BiasProgress&)>& progress = {});

void write_bias_report(std::ostream& out, const BiasReport& report);
void write_bias_report(const std::filesystem::path& path, const BiasReport& report);
void print_bias_table(std::ostream& out, const BiasReport& report);

/// Population standard deviation.
double population_stddev(std::span<const double> values);

}  // namespace mmembed
