// Copyright 2026 The mmembed Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmembed/run_config.hpp"

#include <charconv>
#include <map>
#include <sstream>

#include "mmembed/error.hpp"

namespace mmembed {
namespace {

constexpr const char* kTaskKeys[] = {"classification", "retrieval", "vqa", "grounding"};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

std::uint64_t parse_seed(const std::string& key, const std::string& text) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError("config key '" + key + "': '" + text + "' is not a valid seed");
  }
  return v;
}

std::size_t get_size(const KeyValueConfig& kv, const std::string& key, std::size_t fallback) {
  return static_cast<std::size_t>(kv.get_uint(key, fallback));
}

template <typename F>
void rethrow_as_config(F&& fn) {
  try {
    fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

std::string fmt(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string fmt(bool v) { return v ? "true" : "false"; }

}  // namespace

void RunConfig::resolve() {
  corpus.seed = seed;
  train.seed = seed;
  model.vocab_size = corpus.vocab_size;
  model.patches = corpus.patches;
  model.patch_dim = corpus.patch_dim;
  if (ablations.disable_completion) model.missing_image = MissingImageMode::zero_fill;
  if (ablations.disable_aux_encoder) model.disable_aux_encoder = true;
  if (ablations.disable_padding) model.disable_padding = true;
  if (ablations.half_padding) model.half_padding = true;
  if (ablations.alpha) loss.alpha = *ablations.alpha;
  if (ablations.t2i_layers) model.t2i_layers = *ablations.t2i_layers;
}

void RunConfig::validate() const {
  corpus.validate();
  model.validate();
  loss.validate();
  adapters.validate();
  train.validate();
  if (train.batch_size < 2) throw ConfigError("train.batch_size must be >= 2 for in-batch negatives");
  if (bias_total == 0 || bias_total % 4 != 0) {
    throw ConfigError("bias.total must be a positive multiple of 4, got " + std::to_string(bias_total));
  }
  if (bias_seeds.empty()) throw ConfigError("bias.seeds must list at least one seed");
}

RunConfig parse_run_config(const KeyValueConfig& kv) {
  RunConfig c;
  c.seed = kv.get_uint("seed", c.seed);

  auto& cs = c.corpus;
  for (Combo combo : kAllCombos) {
    const std::string name(to_string(combo));
    cs.count(combo) = static_cast<std::size_t>(kv.require_uint("corpus.count." + name));
    cs.eval_counts[static_cast<std::size_t>(combo)] = get_size(kv, "corpus.eval_count." + name, 600);
  }
  cs.vocab_size = get_size(kv, "corpus.vocab_size", cs.vocab_size);
  cs.patches = get_size(kv, "corpus.patches", cs.patches);
  cs.patch_dim = get_size(kv, "corpus.patch_dim", cs.patch_dim);
  cs.n_classes = get_size(kv, "corpus.n_classes", cs.n_classes);
  cs.ood_fraction = kv.get_double("corpus.ood_fraction", cs.ood_fraction);
  cs.content_length = get_size(kv, "corpus.content_length", cs.content_length);
  cs.signature_size = get_size(kv, "corpus.signature_size", cs.signature_size);
  cs.noise_sigma = kv.get_double("corpus.noise_sigma", cs.noise_sigma);
  cs.text_signal = kv.get_double("corpus.text_signal", cs.text_signal);
  cs.image_text_signal = kv.get_double("corpus.image_text_signal", cs.image_text_signal);
  for (std::size_t i = 0; i < 4; ++i) {
    cs.task_mix[i] = kv.get_double(std::string("corpus.task_mix.") + kTaskKeys[i], cs.task_mix[i]);
  }

  auto& m = c.model;
  m.d_model = get_size(kv, "model.d_model", m.d_model);
  m.n_layers = get_size(kv, "model.n_layers", m.n_layers);
  m.n_heads = get_size(kv, "model.n_heads", m.n_heads);
  m.mlp_ratio = get_size(kv, "model.mlp_ratio", m.mlp_ratio);
  m.visual_tokens = get_size(kv, "model.visual_tokens", m.visual_tokens);
  m.t2i_layers = get_size(kv, "model.t2i_layers", m.t2i_layers);
  m.max_positions = get_size(kv, "model.max_positions", m.max_positions);
  m.pad_prompt_length = get_size(kv, "model.pad_prompt_length", m.pad_prompt_length);
  rethrow_as_config([&] {
    m.missing_image = parse_missing_image_mode(kv.get_string("model.missing_image", std::string(to_string(m.missing_image))));
  });
  m.pseudo_through_projector = kv.get_bool("model.pseudo_through_projector", m.pseudo_through_projector);

  auto& l = c.loss;
  l.tau = kv.get_double("loss.tau", l.tau);
  l.alpha = kv.get_double("loss.alpha", l.alpha);
  l.aux_temp = kv.get_double("loss.aux_temp", l.aux_temp);
  l.stop_grad_target = kv.get_bool("loss.stop_grad_target", l.stop_grad_target);
  rethrow_as_config([&] { l.aux_form = parse_aux_form(kv.get_string("loss.aux_form", std::string(to_string(l.aux_form)))); });

  auto& a = c.adapters;
  a.enabled = kv.get_bool("adapter.enabled", a.enabled);
  a.rank = get_size(kv, "adapter.rank", a.rank);
  a.scale = kv.get_double("adapter.scale", a.scale);
  if (kv.has("adapter.targets")) a.targets = split_list(kv.require("adapter.targets"));

  auto& t = c.train;
  t.batch_size = get_size(kv, "train.batch_size", t.batch_size);
  t.steps = get_size(kv, "train.steps", t.steps);
  t.learning_rate = kv.get_double("train.learning_rate", t.learning_rate);
  t.beta1 = kv.get_double("train.beta1", t.beta1);
  t.beta2 = kv.get_double("train.beta2", t.beta2);
  t.adam_eps = kv.get_double("train.adam_eps", t.adam_eps);
  t.adapters_only = kv.get_bool("train.adapters_only", t.adapters_only);

  auto& ab = c.ablations;
  ab.disable_completion = kv.get_bool("ablation.disable_completion", false);
  ab.disable_aux_encoder = kv.get_bool("ablation.disable_aux_encoder", false);
  ab.disable_padding = kv.get_bool("ablation.disable_padding", false);
  ab.half_padding = kv.get_bool("ablation.half_padding", false);
  if (kv.has("ablation.alpha")) ab.alpha = kv.require_double("ablation.alpha");
  if (kv.has("ablation.t2i_layers")) ab.t2i_layers = static_cast<std::size_t>(kv.require_uint("ablation.t2i_layers"));

  c.bias_total = get_size(kv, "bias.total", c.bias_total);
  if (kv.has("bias.seeds")) {
    c.bias_seeds.clear();
    for (const auto& s : split_list(kv.require("bias.seeds"))) c.bias_seeds.push_back(parse_seed("bias.seeds", s));
  }

  if (const auto unused = kv.unused_keys(); !unused.empty()) {
    throw ConfigError("unknown config key '" + *unused.begin() + "'");
  }
  c.resolve();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(KeyValueConfig::load(path));
}

std::string run_config_to_text(const RunConfig& c) {
  std::map<std::string, std::string> kv;
  kv["seed"] = std::to_string(c.seed);
  const auto& cs = c.corpus;
  for (Combo combo : kAllCombos) {
    const std::string name(to_string(combo));
    kv["corpus.count." + name] = std::to_string(cs.count(combo));
    kv["corpus.eval_count." + name] = std::to_string(cs.eval_counts[static_cast<std::size_t>(combo)]);
  }
  kv["corpus.vocab_size"] = std::to_string(cs.vocab_size);
  kv["corpus.patches"] = std::to_string(cs.patches);
  kv["corpus.patch_dim"] = std::to_string(cs.patch_dim);
  kv["corpus.n_classes"] = std::to_string(cs.n_classes);
  kv["corpus.ood_fraction"] = fmt(cs.ood_fraction);
  kv["corpus.content_length"] = std::to_string(cs.content_length);
  kv["corpus.signature_size"] = std::to_string(cs.signature_size);
  kv["corpus.noise_sigma"] = fmt(cs.noise_sigma);
  kv["corpus.text_signal"] = fmt(cs.text_signal);
  kv["corpus.image_text_signal"] = fmt(cs.image_text_signal);
  for (std::size_t i = 0; i < 4; ++i) kv[std::string("corpus.task_mix.") + kTaskKeys[i]] = fmt(cs.task_mix[i]);

  const auto& m = c.model;
  kv["model.d_model"] = std::to_string(m.d_model);
  kv["model.n_layers"] = std::to_string(m.n_layers);
  kv["model.n_heads"] = std::to_string(m.n_heads);
  kv["model.mlp_ratio"] = std::to_string(m.mlp_ratio);
  kv["model.visual_tokens"] = std::to_string(m.visual_tokens);
  kv["model.t2i_layers"] = std::to_string(m.t2i_layers);
  kv["model.max_positions"] = std::to_string(m.max_positions);
  kv["model.pad_prompt_length"] = std::to_string(m.pad_prompt_length);
  kv["model.missing_image"] = std::string(to_string(m.missing_image));
  kv["model.pseudo_through_projector"] = fmt(m.pseudo_through_projector);
  kv["ablation.disable_aux_encoder"] = fmt(m.disable_aux_encoder);
  kv["ablation.disable_padding"] = fmt(m.disable_padding);
  kv["ablation.half_padding"] = fmt(m.half_padding);

  const auto& l = c.loss;
  kv["loss.tau"] = fmt(l.tau);
  kv["loss.alpha"] = fmt(l.alpha);
  kv["loss.aux_temp"] = fmt(l.aux_temp);
  kv["loss.stop_grad_target"] = fmt(l.stop_grad_target);
  kv["loss.aux_form"] = std::string(to_string(l.aux_form));

  const auto& a = c.adapters;
  kv["adapter.enabled"] = fmt(a.enabled);
  kv["adapter.rank"] = std::to_string(a.rank);
  kv["adapter.scale"] = fmt(a.scale);
  std::string targets;
  for (const auto& t : a.targets) targets += (targets.empty() ? "" : ",") + t;
  kv["adapter.targets"] = targets;

  const auto& t = c.train;
  kv["train.batch_size"] = std::to_string(t.batch_size);
  kv["train.steps"] = std::to_string(t.steps);
  kv["train.learning_rate"] = fmt(t.learning_rate);
  kv["train.beta1"] = fmt(t.beta1);
  kv["train.beta2"] = fmt(t.beta2);
  kv["train.adam_eps"] = fmt(t.adam_eps);
  kv["train.adapters_only"] = fmt(t.adapters_only);

  kv["bias.total"] = std::to_string(c.bias_total);
  std::string seeds;
  for (auto s : c.bias_seeds) seeds += (seeds.empty() ? "" : ",") + std::to_string(s);
  kv["bias.seeds"] = seeds;

  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

}  // namespace mmembed
