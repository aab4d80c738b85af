// Copyright 2026 The mmembed Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mmembed/corpus.hpp"
#include "mmembed/layers.hpp"
#include "mmembed/padding.hpp"

namespace mmembed {

/// How a text-only input obtains its visual tokens.
enum class MissingImageMode {
  /// Completion module: padded text -> causal LM -> auxiliary encoder.
  complete,
  /// All-zeros visual tokens (conventional-architecture baseline).
  zero_fill,
  /// No visual tokens at all: the backbone reads the text alone.
  text_only,
};

std::string_view to_string(MissingImageMode m);
/// Throws ConfigError on unknown names.
MissingImageMode parse_missing_image_mode(std::string_view s);

struct ModelConfig {
  std::size_t d_model = 32;
  std::size_t n_layers = 2;  // backbone, vision encoder and auxiliary encoder depth
  std::size_t n_heads = 2;
  std::size_t mlp_ratio = 2;
  std::size_t vocab_size = 64;  // corpus vocabulary; reserved padding ids follow it
  std::size_t visual_tokens = 8;  // V
  std::size_t patches = 8;  // P
  std::size_t patch_dim = 16;  // D_in
  std::size_t t2i_layers = 2;  // completion language model depth
  std::size_t max_positions = 64;
  std::size_t pad_prompt_length = 2;

  MissingImageMode missing_image = MissingImageMode::complete;
  /// Skip the auxiliary encoder: pseudo tokens are the LM hidden states.
  bool disable_aux_encoder = false;
  /// Feed raw content to the completion LM: short pseudo tokens. Takes
  /// precedence over half_padding.
  bool disable_padding = false;
  /// Pad to V/2 instead of V; the backbone then sees V/2 pseudo tokens.
  bool half_padding = false;
  /// Route pseudo tokens through the primary projector as well.
  bool pseudo_through_projector = false;

  std::size_t total_vocab() const { return vocab_size + pad_prompt_length + 2; }
  PaddingConfig padding() const;
  /// Throws ConfigError on inconsistent dimensions.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

enum class VisualSource { real, pseudo, zero, none };

/// Visual tokens handed to the backbone; shape V x d_model for real images,
/// and for pseudo tokens whenever the standard padding is in effect.
struct VisualTokens {
  Tensor tokens;
  VisualSource provenance = VisualSource::real;
};

/// L2-normalized output of the model.
struct Embedding {
  std::vector<double> values;
};

/// Returns a copy with the image removed; inputs without an image come back
/// unchanged.
ModalInput drop_image(const ModalInput& input);

/// Copyable atomic counter (copies start from the source's current value).
class CallCounter {
 public:
  CallCounter() = default;
  CallCounter(const CallCounter& o) : n_(o.get()) {}
  CallCounter& operator=(const CallCounter& o) {
    n_.store(o.get());
    return *this;
  }
  void add(std::size_t k) const { n_.fetch_add(k, std::memory_order_relaxed); }
  std::size_t get() const { return n_.load(std::memory_order_relaxed); }
  void reset() const { n_.store(0); }

 private:
  mutable std::atomic<std::size_t> n_{0};
};

/// Patch/hidden-state encoder shared by the vision tower and the auxiliary
/// encoder of the completion module: input projection, learned positions,
/// bidirectional blocks, final norm.
struct SequenceEncoder {
  Linear input;
  Tensor pos;
  std::vector<TransformerBlock> blocks;
  LayerNorm ln_f;

  Var forward(Tape& tape, Var x, std::size_t seg_len) const;
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

/// Token-input causal transformer (backbone LM and completion LM).
struct CausalLM {
  Tensor tok_emb;
  Tensor pos;
  std::vector<TransformerBlock> blocks;
  LayerNorm ln_f;

  void visit(const std::string& prefix, const ParamVisitor& fn);
};

/// The embedding model: backbone LM + vision encoder + projector, plus the
/// modality-completion module (completion LM + auxiliary encoder).
///
/// Inputs with an image use the vision path only; inputs without one use the
/// completion module (or zero-fill). The backbone reads
/// [visual tokens || instruction || content || EOS] causally and the EOS
/// position's hidden state, L2-normalized, is the embedding. EOS is a
/// backbone-only token with id vocab_size.
class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ModelConfig& mutable_config() { return config_; }

  /// Deterministic order; names are the checkpoint keys.
  std::vector<NamedTensor> parameters();
  std::size_t parameter_count();

  // Tape-level forward passes (batched). Row blocks follow input order.
  /// [n * V, d_model].
  Var encode_image(Tape& tape, std::span<const PatchGrid* const> images) const;
  /// [n * L, d_model] where L is the padded (or raw) content length, shared
  /// by every input in the batch.
  Var complete_modality(Tape& tape, std::span<const std::vector<int>* const> contents) const;
  /// [n, d_model], unit rows.
  Var embed(Tape& tape, std::span<const ModalInput* const> inputs) const;

  // Inference conveniences (no gradient recording; thread-safe).
  VisualTokens encode_image(const PatchGrid& image) const;
  VisualTokens complete_modality(const std::vector<int>& content) const;
  Embedding embed(const ModalInput& input) const;
  /// [inputs.size(), d_model], processed in chunks.
  Tensor embed_all(std::span<const ModalInput> inputs, std::size_t chunk = 256) const;

  /// Visual token count the backbone receives for a text-only input.
  std::size_t pseudo_token_count(std::size_t content_length) const;

  /// Items routed through each path since construction / last reset.
  const CallCounter& encode_image_calls() const { return encode_calls_; }
  const CallCounter& complete_modality_calls() const { return complete_calls_; }

  /// Each Linear layer of the named sub-networks: "backbone", "vision",
  /// "projector", "t2i", "aux_vision".
  void for_each_linear(const std::function<void(const std::string& group, Linear&)>& fn);

  void set_trainable(bool on);

 private:
  void visit(const ParamVisitor& fn);
  Var visual_for_group(Tape& tape, std::span<const ModalInput* const> group,
                       VisualSource source) const;
  Var backbone_forward(Tape& tape, Var visual, std::size_t visual_len,
                       std::span<const ModalInput* const> group) const;
  void check_input(const ModalInput& in) const;

  ModelConfig config_;
  CausalLM backbone_;
  SequenceEncoder vision_;
  Tensor pool_;  // V x P, only when P != V
  Linear proj1_, proj2_;
  CausalLM t2i_;
  SequenceEncoder aux_vision_;
  CallCounter encode_calls_;
  CallCounter complete_calls_;
};

}  // namespace mmembed
