// Copyright 2026 The mmembed Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mmembed/config.hpp"
#include "mmembed/corpus.hpp"
#include "mmembed/model.hpp"
#include "mmembed/training.hpp"

namespace mmembed {

/// Ablation switches, each independent of the others.
struct Ablations {
  /// Zero visual tokens for missing images instead of the completion module.
  bool disable_completion = false;
  /// Completion LM hidden states are used directly as pseudo tokens.
  bool disable_aux_encoder = false;
  /// Raw content into the completion LM, so pseudo tokens are short.
  bool disable_padding = false;
  /// Pad to V/2.
  bool half_padding = false;
  std::optional<double> alpha;
  std::optional<std::size_t> t2i_layers;
};

/// Everything a command needs, resolved from one key = value file.
///
/// Keys (all optional unless marked required):
///
///   seed                                  top-level seed for every stream
///   corpus.count.{TI_T,T_TI,TI_TI}        required training pairs per combo
///   corpus.eval_count.{TI_T,T_TI,TI_TI}   evaluation pairs per combo
///   corpus.{vocab_size,patches,patch_dim,n_classes,ood_fraction,
///           content_length,signature_size,noise_sigma,text_signal,
///           image_text_signal}
///   corpus.task_mix.{classification,retrieval,vqa,grounding}
///   model.{d_model,n_layers,n_heads,mlp_ratio,visual_tokens,t2i_layers,
///          max_positions,pad_prompt_length,missing_image,
///          pseudo_through_projector}
///   loss.{tau,alpha,aux_temp,stop_grad_target,aux_form}
///   adapter.{enabled,rank,scale,targets}   targets is a comma list
///   train.{batch_size,steps,learning_rate,beta1,beta2,adam_eps,adapters_only}
///   ablation.{disable_completion,disable_aux_encoder,disable_padding,
///             half_padding,alpha,t2i_layers}
///   bias.{total,seeds}                    seeds is a comma list
///
/// The corpus, model initialization and batching all derive from `seed`
/// through named streams. Unknown keys are rejected.
struct RunConfig {
  std::uint64_t seed = 1;
  CorpusSpec corpus;
  ModelConfig model;
  LossConfig loss;
  AdapterConfig adapters;
  TrainConfig train;
  Ablations ablations;
  std::size_t bias_total = 4000;
  std::vector<std::uint64_t> bias_seeds = {1, 2, 3};

  /// Pushes `seed` into the sub-configs and applies the ablation switches.
  void resolve();
  /// Throws ConfigError naming the offending key.
  void validate() const;
};

/// Parses, resolves and validates. Throws ConfigError on missing required
/// keys, unknown keys and bad values.
RunConfig parse_run_config(const KeyValueConfig& kv);
RunConfig load_run_config(const std::filesystem::path& path);

/// The resolved configuration in the same key = value syntax, keys sorted.
std::string run_config_to_text(const RunConfig& cfg);

}  // namespace mmembed
