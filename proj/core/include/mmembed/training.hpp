// Copyright 2026 The mmembed Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mmembed/corpus.hpp"
#include "mmembed/model.hpp"

namespace mmembed {

/// Functional form of the alignment term between E and E'.
enum class AuxForm {
  /// H(softmax(E / aux_temp), softmax(E' / aux_temp)).
  cross_entropy,
  /// |E - E'|^2.
  mse,
  /// 1 - cos(E, E').
  cosine,
};

std::string_view to_string(AuxForm f);
AuxForm parse_aux_form(std::string_view s);

struct LossConfig {
  double tau = 0.02;
  double alpha = 0.2;
  double aux_temp = 1.0;
  /// Treat the full-modality embedding E as a fixed teacher.
  bool stop_grad_target = true;
  AuxForm aux_form = AuxForm::cross_entropy;

  void validate() const;
};

struct AdapterConfig {
  bool enabled = false;
  std::size_t rank = 8;
  double scale = 1.0;
  /// Sub-networks whose linear layers receive adapters.
  std::vector<std::string> targets = {"backbone", "vision", "projector", "t2i", "aux_vision"};

  void validate() const;
};

struct TrainConfig {
  std::size_t batch_size = 64;
  std::size_t steps = 300;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 1;
  /// Only adapter matrices receive updates.
  bool adapters_only = false;

  void validate() const;
};

/// InfoNCE over in-batch negatives: -(1/B) sum_i log softmax_j(q_i . c_j / tau)[i].
/// Rows must be unit-norm within 1e-3.
Var info_nce(Var queries, Var targets, double tau);

/// Per-row alignment terms between E (rows of `full`) and E' (rows of
/// `dropped`), summed over rows. Divide by B to obtain the batch loss.
Var aux_terms(Var full, Var dropped, const LossConfig& cfg);

/// l1 + alpha * l2; returns l1 itself when alpha is zero.
Var composite_loss(Var l1, Var l2, double alpha);
double composite_loss(double l1, double l2, double alpha);

struct BatchLoss {
  Var total;
  Var l1;
  Var l2;  // invalid when alpha == 0 (not computed)
};

/// Embeds queries, targets and the image-dropped variant of every
/// image-bearing side in one pass and returns the composite objective.
BatchLoss batch_loss(Tape& tape, const Model& model, std::span<const PairRecord* const> batch,
                     const LossConfig& cfg);

/// The auxiliary loss alone: (1/B) sum over image-bearing sides of the
/// alignment term; exactly 0 for image-free batches.
Var aux_loss(Tape& tape, const Model& model, std::span<const PairRecord* const> batch,
             const LossConfig& cfg);

/// Adam over the parameters that currently require gradients.
class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double eps);
  void step(std::span<const NamedTensor> params);
  std::size_t steps_taken() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Attaches zero-initialized low-rank adapters to every linear layer of the
/// target sub-networks. Throws ConfigError when rank >= min(in, out) for any
/// targeted layer. Returns the number of adapter parameters added.
std::size_t apply_low_rank_adapters(Model& model, const AdapterConfig& cfg, std::uint64_t seed);

/// Folds every adapter into its base weight.
void merge_low_rank_adapters(Model& model);

struct StepStats {
  std::size_t step = 0;
  double loss = 0.0;
  double l1 = 0.0;
  double l2 = 0.0;
};

struct TrainResult {
  std::vector<StepStats> trace;
  bool diverged = false;
  /// Step whose loss was non-finite; the model holds the parameters from
  /// before that step.
  std::size_t diverged_at = 0;
};

using StepCallback = std::function<void(const StepStats&)>;

/// Trains in place with epoch-shuffled batches drawn from the
/// "batching" stream of `cfg.seed`. Throws ContractError when the corpus
/// is smaller than one batch.
TrainResult train(Model& model, std::span<const PairRecord> corpus, const TrainConfig& cfg,
                  const LossConfig& loss, const StepCallback& on_step = {});

/// Two columns per line: step and loss, full precision.
void write_loss_trace(const std::filesystem::path& path, std::span<const StepStats> trace);

/// Mean loss over trace entries [begin, end).
double mean_loss(std::span<const StepStats> trace, std::size_t begin, std::size_t end,
                 double StepStats::*field = &StepStats::loss);

}  // namespace mmembed
