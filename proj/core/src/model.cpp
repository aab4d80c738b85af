// Copyright 2026 The mmembed Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmembed/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>

#include "mmembed/error.hpp"
#include "mmembed/ops.hpp"

namespace mmembed {

std::string_view to_string(MissingImageMode m) {
  switch (m) {
    case MissingImageMode::complete: return "complete";
    case MissingImageMode::zero_fill: return "zero_fill";
    case MissingImageMode::text_only: return "text_only";
  }
  return "?";
}

MissingImageMode parse_missing_image_mode(std::string_view s) {
  if (s == "complete") return MissingImageMode::complete;
  if (s == "zero_fill") return MissingImageMode::zero_fill;
  if (s == "text_only") return MissingImageMode::text_only;
  throw ConfigError("unknown missing-image mode '" + std::string(s) +
                    "' (expected complete, zero_fill or text_only)");
}

PaddingConfig ModelConfig::padding() const {
  PaddingConfig p;
  const int base = static_cast<int>(vocab_size);
  for (std::size_t i = 0; i < pad_prompt_length; ++i) p.pad_prompt.push_back(base + static_cast<int>(i));
  p.end_token = base + static_cast<int>(pad_prompt_length);
  p.dummy_token = p.end_token + 1;
  p.target_length = half_padding ? visual_tokens / 2 : visual_tokens;
  return p;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
    fail("d_model (" + std::to_string(d_model) + ") must be a positive multiple of n_heads (" +
         std::to_string(n_heads) + ")");
  }
  if (visual_tokens < 2) fail("visual_tokens must be >= 2");
  if (n_layers == 0 || t2i_layers == 0) fail("layer counts must be >= 1");
  if (mlp_ratio == 0) fail("mlp_ratio must be >= 1");
  if (vocab_size == 0 || patches == 0 || patch_dim == 0) fail("vocab, patches and patch_dim must be >= 1");
  if (max_positions < std::max(visual_tokens, patches) + 2) {
    fail("max_positions (" + std::to_string(max_positions) + ") too small for " +
         std::to_string(visual_tokens) + " visual tokens");
  }
  if (!disable_padding) padding().validate(vocab_size);
}

ModalInput drop_image(const ModalInput& input) {
  ModalInput out = input;
  out.image.reset();
  return out;
}

namespace {

std::vector<TransformerBlock> make_blocks(const ModelConfig& c, std::size_t n, bool causal, Rng& rng) {
  std::vector<TransformerBlock> blocks;
  blocks.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    blocks.emplace_back(c.d_model, c.n_heads, c.mlp_ratio * c.d_model, causal, rng);
  }
  return blocks;
}

CausalLM make_lm(const ModelConfig& c, std::size_t vocab, std::size_t layers, Rng& rng) {
  CausalLM lm;
  lm.tok_emb = normal_tensor({vocab, c.d_model}, 1.0, rng);
  lm.pos = normal_tensor({c.max_positions, c.d_model}, 0.1, rng);
  lm.blocks = make_blocks(c, layers, true, rng);
  lm.ln_f = LayerNorm(c.d_model);
  return lm;
}

SequenceEncoder make_encoder(const ModelConfig& c, std::size_t in_dim, std::size_t seq, Rng& rng) {
  SequenceEncoder e;
  e.input = Linear(in_dim, c.d_model, rng);
  e.pos = normal_tensor({seq, c.d_model}, 0.1, rng);
  e.blocks = make_blocks(c, c.n_layers, false, rng);
  e.ln_f = LayerNorm(c.d_model);
  return e;
}

Var run_blocks(Tape& tape, const std::vector<TransformerBlock>& blocks, Var x, std::size_t seg) {
  for (const auto& b : blocks) x = b.forward(tape, x, seg);
  return x;
}

}  // namespace

Var SequenceEncoder::forward(Tape& tape, Var x, std::size_t seg_len) const {
  Var h = ops::add_broadcast(input.forward(tape, x), positions(tape, pos, seg_len));
  return ln_f.forward(tape, run_blocks(tape, blocks, h, seg_len));
}

void SequenceEncoder::visit(const std::string& prefix, const ParamVisitor& fn) {
  input.visit(prefix + ".input", fn);
  fn(prefix + ".pos", pos);
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit(prefix + ".blocks." + std::to_string(i), fn);
  ln_f.visit(prefix + ".ln_f", fn);
}

void CausalLM::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".tok_emb", tok_emb);
  fn(prefix + ".pos", pos);
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit(prefix + ".blocks." + std::to_string(i), fn);
  ln_f.visit(prefix + ".ln_f", fn);
}

Model::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  const auto& c = config_;
  Rng r_backbone = make_rng(seed, "init/backbone");
  Rng r_vision = make_rng(seed, "init/vision");
  Rng r_proj = make_rng(seed, "init/projector");
  Rng r_t2i = make_rng(seed, "init/t2i");
  Rng r_aux = make_rng(seed, "init/aux_vision");
  backbone_ = make_lm(c, c.vocab_size + 1, c.n_layers, r_backbone);
  vision_ = make_encoder(c, c.patch_dim, c.patches, r_vision);
  if (c.patches != c.visual_tokens) {
    pool_ = normal_tensor({c.visual_tokens, c.patches}, 1.0 / std::sqrt(static_cast<double>(c.patches)),
                          r_vision);
  }
  proj1_ = Linear(c.d_model, c.d_model, r_proj);
  proj2_ = Linear(c.d_model, c.d_model, r_proj);
  t2i_ = make_lm(c, c.total_vocab(), c.t2i_layers, r_t2i);
  aux_vision_ = make_encoder(c, c.d_model, c.max_positions, r_aux);
}

void Model::visit(const ParamVisitor& fn) {
  backbone_.visit("backbone", fn);
  vision_.visit("vision", fn);
  if (config_.patches != config_.visual_tokens) fn("vision.pool", pool_);
  proj1_.visit("projector.fc1", fn);
  proj2_.visit("projector.fc2", fn);
  t2i_.visit("t2i", fn);
  aux_vision_.visit("aux_vision", fn);
}

std::vector<NamedTensor> Model::parameters() {
  std::vector<NamedTensor> out;
  visit([&](const std::string& name, Tensor& t) { out.push_back({name, &t}); });
  return out;
}

std::size_t Model::parameter_count() {
  std::size_t n = 0;
  visit([&](const std::string&, Tensor& t) { n += t.size(); });
  return n;
}

void Model::set_trainable(bool on) {
  visit([&](const std::string&, Tensor& t) { t.set_requires_grad(on); });
}

void Model::for_each_linear(const std::function<void(const std::string&, Linear&)>& fn) {
  auto blocks = [&](const std::string& g, std::vector<TransformerBlock>& bs) {
    for (auto& b : bs) b.for_each_linear([&](Linear& l) { fn(g, l); });
  };
  blocks("backbone", backbone_.blocks);
  fn("vision", vision_.input);
  blocks("vision", vision_.blocks);
  fn("projector", proj1_);
  fn("projector", proj2_);
  blocks("t2i", t2i_.blocks);
  fn("aux_vision", aux_vision_.input);
  blocks("aux_vision", aux_vision_.blocks);
}

std::size_t Model::pseudo_token_count(std::size_t content_length) const {
  switch (config_.missing_image) {
    case MissingImageMode::zero_fill: return config_.visual_tokens;
    case MissingImageMode::text_only: return 0;
    case MissingImageMode::complete: break;
  }
  if (config_.disable_padding) return content_length;
  return config_.padding().target_length;
}

void Model::check_input(const ModalInput& in) const {
  const int vocab = static_cast<int>(config_.vocab_size);
  auto check_ids = [&](const std::vector<int>& ids, const char* what) {
    for (int t : ids) {
      if (t < 0 || t >= vocab) {
        throw ContractError(std::string(what) + " token " + std::to_string(t) +
                            " outside vocabulary of " + std::to_string(vocab));
      }
    }
  };
  check_ids(in.instruction, "instruction");
  check_ids(in.content, "content");
  if (in.instruction.empty() && in.content.empty()) throw ContractError("input has no tokens");
  const std::size_t lv = in.has_image() ? config_.visual_tokens : pseudo_token_count(in.content.size());
  const std::size_t total = lv + in.instruction.size() + in.content.size() + 1;
  if (total > config_.max_positions) {
    throw DimensionError("sequence of " + std::to_string(total) + " tokens exceeds max_positions " +
                         std::to_string(config_.max_positions));
  }
}

Var Model::encode_image(Tape& tape, std::span<const PatchGrid* const> images) const {
  const auto& c = config_;
  const std::size_t n = images.size();
  if (n == 0) throw ContractError("encode_image: empty batch");
  std::vector<double> flat;
  flat.reserve(n * c.patches * c.patch_dim);
  for (const PatchGrid* g : images) {
    if (g->patches != c.patches || g->dim != c.patch_dim || g->values.size() != c.patches * c.patch_dim) {
      throw DimensionError("patch grid " + shape_string({g->patches, g->dim}) +
                           " does not match model " + shape_string({c.patches, c.patch_dim}));
    }
    flat.insert(flat.end(), g->values.begin(), g->values.end());
  }
  encode_calls_.add(n);
  Var x = tape.constant(Tensor({n * c.patches, c.patch_dim}, std::move(flat)));
  Var h = vision_.forward(tape, x, c.patches);
  if (c.patches != c.visual_tokens) h = ops::segment_left_matmul(bind_param(tape, pool_), h, c.patches);
  return proj2_.forward(tape, ops::gelu(proj1_.forward(tape, h)));
}

Var Model::complete_modality(Tape& tape, std::span<const std::vector<int>* const> contents) const {
  const auto& c = config_;
  const std::size_t n = contents.size();
  if (n == 0) throw ContractError("complete_modality: empty batch");
  const PaddingConfig pad = c.padding();
  std::vector<int> ids;
  std::size_t len = 0;
  for (const auto* content : contents) {
    std::vector<int> seq = c.disable_padding ? *content : pad_prompt(*content, pad);
    if (seq.empty()) throw ContractError("complete_modality: empty content");
    if (len == 0) len = seq.size();
    if (seq.size() != len) throw DimensionError("complete_modality: batch mixes sequence lengths");
    ids.insert(ids.end(), seq.begin(), seq.end());
  }
  complete_calls_.add(n);
  Var h = ops::add_broadcast(ops::embedding(bind_param(tape, t2i_.tok_emb), ids),
                             positions(tape, t2i_.pos, len));
  h = t2i_.ln_f.forward(tape, run_blocks(tape, t2i_.blocks, h, len));
  if (!c.disable_aux_encoder) h = aux_vision_.forward(tape, h, len);
  if (c.pseudo_through_projector) h = proj2_.forward(tape, ops::gelu(proj1_.forward(tape, h)));
  return h;
}

Var Model::visual_for_group(Tape& tape, std::span<const ModalInput* const> group,
                            VisualSource source) const {
  switch (source) {
    case VisualSource::real: {
      std::vector<const PatchGrid*> imgs;
      for (const auto* in : group) imgs.push_back(&*in->image);
      return encode_image(tape, imgs);
    }
    case VisualSource::pseudo: {
      std::vector<const std::vector<int>*> contents;
      for (const auto* in : group) contents.push_back(&in->content);
      return complete_modality(tape, contents);
    }
    case VisualSource::zero:
      return tape.constant(Tensor({group.size() * config_.visual_tokens, config_.d_model}));
    case VisualSource::none: break;
  }
  return Var{};
}

Var Model::backbone_forward(Tape& tape, Var visual, std::size_t lv,
                            std::span<const ModalInput* const> group) const {
  const std::size_t n = group.size();
  const std::size_t lt = group[0]->instruction.size() + group[0]->content.size() + 1;
  const std::size_t seq = lv + lt;
  const int eos = static_cast<int>(config_.vocab_size);
  std::vector<int> ids;
  ids.reserve(n * lt);
  for (const auto* in : group) {
    ids.insert(ids.end(), in->instruction.begin(), in->instruction.end());
    ids.insert(ids.end(), in->content.begin(), in->content.end());
    ids.push_back(eos);
  }
  Var x = ops::embedding(bind_param(tape, backbone_.tok_emb), ids);
  if (lv > 0) {
    std::vector<std::size_t> order;
    order.reserve(n * seq);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t r = 0; r < lv; ++r) order.push_back(i * lv + r);
      for (std::size_t r = 0; r < lt; ++r) order.push_back(n * lv + i * lt + r);
    }
    const Var parts[] = {visual, x};
    x = ops::gather_rows(ops::concat_rows(parts), order);
  }
  x = ops::add_broadcast(x, positions(tape, backbone_.pos, seq));
  x = backbone_.ln_f.forward(tape, run_blocks(tape, backbone_.blocks, x, seq));
  std::vector<std::size_t> last(n);
  for (std::size_t i = 0; i < n; ++i) last[i] = i * seq + seq - 1;
  return ops::l2_normalize_rows(ops::gather_rows(x, last));
}

Var Model::embed(Tape& tape, std::span<const ModalInput* const> inputs) const {
  if (inputs.empty()) throw ContractError("embed: empty batch");
  using Key = std::tuple<int, std::size_t, std::size_t, std::size_t>;
  std::map<Key, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const ModalInput& in = *inputs[i];
    check_input(in);
    VisualSource src = VisualSource::real;
    if (!in.has_image()) {
      switch (config_.missing_image) {
        case MissingImageMode::complete: src = VisualSource::pseudo; break;
        case MissingImageMode::zero_fill: src = VisualSource::zero; break;
        case MissingImageMode::text_only: src = VisualSource::none; break;
      }
    }
    const std::size_t lv = in.has_image() ? config_.visual_tokens : pseudo_token_count(in.content.size());
    groups[{static_cast<int>(src), lv, in.instruction.size(), in.content.size()}].push_back(i);
  }
  std::vector<Var> outs;
  std::vector<std::size_t> position(inputs.size());
  std::size_t row = 0;
  for (const auto& [key, idx] : groups) {
    std::vector<const ModalInput*> group;
    for (std::size_t i : idx) group.push_back(inputs[i]);
    const auto src = static_cast<VisualSource>(std::get<0>(key));
    const std::size_t lv = std::get<1>(key);
    Var visual = visual_for_group(tape, group, src);
    outs.push_back(backbone_forward(tape, visual, lv, group));
    for (std::size_t i : idx) position[i] = row++;
  }
  if (outs.size() == 1 && std::is_sorted(position.begin(), position.end())) return outs[0];
  Var all = outs.size() == 1 ? outs[0] : ops::concat_rows(outs);
  return ops::gather_rows(all, position);
}

VisualTokens Model::encode_image(const PatchGrid& image) const {
  Tape tape(false);
  const PatchGrid* p = &image;
  return {encode_image(tape, std::span<const PatchGrid* const>(&p, 1)).value(), VisualSource::real};
}

VisualTokens Model::complete_modality(const std::vector<int>& content) const {
  Tape tape(false);
  const std::vector<int>* p = &content;
  return {complete_modality(tape, std::span<const std::vector<int>* const>(&p, 1)).value(),
          VisualSource::pseudo};
}

Embedding Model::embed(const ModalInput& input) const {
  Tape tape(false);
  const ModalInput* p = &input;
  const Tensor& t = embed(tape, std::span<const ModalInput* const>(&p, 1)).value();
  return {std::vector<double>(t.data().begin(), t.data().end())};
}

Tensor Model::embed_all(std::span<const ModalInput> inputs, std::size_t chunk) const {
  if (inputs.empty()) throw ContractError("embed_all: no inputs");
  if (chunk == 0) chunk = inputs.size();
  const std::size_t d = config_.d_model;
  Tensor out({inputs.size(), d});
  for (std::size_t begin = 0; begin < inputs.size(); begin += chunk) {
    const std::size_t end = std::min(inputs.size(), begin + chunk);
    std::vector<const ModalInput*> ptrs;
    for (std::size_t i = begin; i < end; ++i) ptrs.push_back(&inputs[i]);
    Tape tape(false);
    const Tensor& e = embed(tape, ptrs).value();
    std::copy(e.data().begin(), e.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(begin * d));
  }
  return out;
}

}  // namespace mmembed
