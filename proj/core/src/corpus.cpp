// Copyright 2026 The mmembed Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmembed/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mmembed/error.hpp"

namespace mmembed {

std::string_view to_string(Combo c) {
  switch (c) {
    case Combo::TI_T: return "TI_T";
    case Combo::T_TI: return "T_TI";
    case Combo::TI_TI: return "TI_TI";
  }
  return "?";
}

std::string_view to_string(TaskTag t) {
  switch (t) {
    case TaskTag::classification: return "classification";
    case TaskTag::retrieval: return "retrieval";
    case TaskTag::vqa: return "vqa";
    case TaskTag::grounding: return "grounding";
  }
  return "?";
}

std::string_view to_string(Split s) { return s == Split::IND ? "IND" : "OOD"; }

Combo parse_combo(std::string_view s) {
  for (Combo c : kAllCombos) {
    if (to_string(c) == s) return c;
  }
  throw SchemaError("unknown modality combination '" + std::string(s) + "'", 0);
}

TaskTag parse_task(std::string_view s) {
  for (TaskTag t : kAllTasks) {
    if (to_string(t) == s) return t;
  }
  throw SchemaError("unknown task tag '" + std::string(s) + "'", 0);
}

Split parse_split(std::string_view s) {
  if (s == "IND") return Split::IND;
  if (s == "OOD") return Split::OOD;
  throw SchemaError("unknown split '" + std::string(s) + "'", 0);
}

bool query_has_image(Combo c) { return c != Combo::T_TI; }
bool target_has_image(Combo c) { return c != Combo::TI_T; }
bool side_has_image(Combo c, Side s) {
  return s == Side::query ? query_has_image(c) : target_has_image(c);
}

std::size_t CorpusSpec::n_ood_classes() const {
  return static_cast<std::size_t>(std::lround(ood_fraction * static_cast<double>(n_classes)));
}

bool CorpusSpec::is_ood(int class_id) const {
  return static_cast<std::size_t>(class_id) >= n_ind_classes();
}

void CorpusSpec::validate() const {
  const auto n_content = vocab_size > TokenLayout::kFirstContentToken
                             ? vocab_size - TokenLayout::kFirstContentToken
                             : 0;
  if (n_classes == 0) throw ConfigError("corpus.n_classes must be positive");
  if (n_content < n_classes) {
    throw ConfigError("corpus.vocab_size " + std::to_string(vocab_size) + " leaves " +
                      std::to_string(n_content) + " content tokens for " +
                      std::to_string(n_classes) + " class label tokens");
  }
  if (patches == 0 || patch_dim == 0) throw ConfigError("corpus.patches and corpus.patch_dim must be positive");
  if (!(ood_fraction >= 0.0 && ood_fraction < 1.0)) {
    throw ConfigError("corpus.ood_fraction must lie in [0, 1)");
  }
  if (n_ind_classes() == 0) throw ConfigError("corpus.ood_fraction leaves no IND classes");
  if (content_length == 0) throw ConfigError("corpus.content_length must be positive");
  if (signature_size == 0 || 2 * signature_size > n_content) {
    throw ConfigError("corpus.signature_size must lie in [1, " + std::to_string(n_content / 2) + "]");
  }
  if (!(noise_sigma >= 0.0)) throw ConfigError("corpus.noise_sigma must be nonnegative");
  for (double p : {text_signal, image_text_signal}) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("corpus text signal must lie in [0, 1]");
  }
  double mix = 0.0;
  for (double w : task_mix) {
    if (!(w >= 0.0)) throw ConfigError("corpus.task_mix weights must be nonnegative");
    mix += w;
  }
  if (!(mix > 0.0)) throw ConfigError("corpus.task_mix weights sum to zero");
}

std::array<std::size_t, 3> skewed_counts(std::size_t total, Combo dominant) {
  if (total == 0 || total % 4 != 0) {
    throw ContractError("skewed corpus total " + std::to_string(total) +
                        " must be a positive multiple of 4");
  }
  std::array<std::size_t, 3> counts{};
  for (Combo c : kAllCombos) {
    counts[static_cast<std::size_t>(c)] = c == dominant ? total / 2 : total / 4;
  }
  return counts;
}

ItemGenerator::ItemGenerator(const CorpusSpec& spec) : spec_(spec) {
  spec_.validate();
  Rng rng = make_rng(spec_.seed, "corpus/classes");
  std::normal_distribution<double> normal(0.0, 1.0);
  const int n_content = static_cast<int>(spec_.vocab_size) - TokenLayout::kFirstContentToken;
  std::uniform_int_distribution<int> token(0, n_content - 1);
  prototypes_.resize(spec_.n_classes);
  query_signatures_.resize(spec_.n_classes);
  target_signatures_.resize(spec_.n_classes);
  for (std::size_t c = 0; c < spec_.n_classes; ++c) {
    PatchGrid& g = prototypes_[c];
    g.patches = spec_.patches;
    g.dim = spec_.patch_dim;
    g.values.resize(g.patches * g.dim);
    for (auto& v : g.values) v = normal(rng);
    // Target label token is unique per class; other signature tokens may be
    // shared across classes but never between the two sides of one class.
    auto& tgt = target_signatures_[c];
    auto& qry = query_signatures_[c];
    tgt.push_back(TokenLayout::kFirstContentToken + static_cast<int>(c));
    auto fresh = [&](int t) {
      return std::find(tgt.begin(), tgt.end(), t) == tgt.end() &&
             std::find(qry.begin(), qry.end(), t) == qry.end();
    };
    while (tgt.size() < spec_.signature_size) {
      const int t = TokenLayout::kFirstContentToken + token(rng);
      if (fresh(t)) tgt.push_back(t);
    }
    while (qry.size() < spec_.signature_size) {
      const int t = TokenLayout::kFirstContentToken + token(rng);
      if (fresh(t)) qry.push_back(t);
    }
  }
}

std::vector<int> ItemGenerator::instruction(TaskTag task, Side side) {
  return {TokenLayout::kFirstTaskToken + static_cast<int>(task),
          side == Side::query ? TokenLayout::kQuerySideToken : TokenLayout::kTargetSideToken};
}

ModalInput ItemGenerator::gen_item(int class_id, Rng& rng, bool with_image, TaskTag task,
                                   Side side) const {
  if (class_id < 0 || static_cast<std::size_t>(class_id) >= spec_.n_classes) {
    throw ContractError("class_id " + std::to_string(class_id) + " outside [0, " +
                        std::to_string(spec_.n_classes) + ")");
  }
  ModalInput item;
  item.instruction = instruction(task, side);
  const auto& sig = signature(class_id, side);
  if (task == TaskTag::classification && side == Side::target && !with_image) {
    item.content = {sig.front()};
  } else {
    const double signal = with_image ? spec_.image_text_signal : spec_.text_signal;
    const int n_content = static_cast<int>(spec_.vocab_size) - TokenLayout::kFirstContentToken;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> from_sig(0, sig.size() - 1);
    std::uniform_int_distribution<int> any(0, n_content - 1);
    item.content.resize(spec_.content_length);
    for (auto& t : item.content) {
      t = u(rng) < signal ? sig[from_sig(rng)] : TokenLayout::kFirstContentToken + any(rng);
    }
  }
  if (with_image) {
    PatchGrid img = prototypes_[class_id];
    if (spec_.noise_sigma > 0.0) {
      std::normal_distribution<double> noise(0.0, spec_.noise_sigma);
      for (auto& v : img.values) v += noise(rng);
    }
    item.image = std::move(img);
  }
  return item;
}

namespace {

// Largest-remainder split of n across the task mix.
std::array<std::size_t, 4> allocate_tasks(std::size_t n, const std::array<double, 4>& mix) {
  const double total = std::accumulate(mix.begin(), mix.end(), 0.0);
  std::array<std::size_t, 4> out{};
  std::array<double, 4> rem{};
  std::size_t used = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    const double exact = static_cast<double>(n) * mix[i] / total;
    out[i] = static_cast<std::size_t>(std::floor(exact));
    rem[i] = exact - static_cast<double>(out[i]);
    used += out[i];
  }
  while (used < n) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < 4; ++i) {
      if (rem[i] > rem[best]) best = i;
    }
    ++out[best];
    rem[best] = -1.0;
    ++used;
  }
  return out;
}

}  // namespace

std::vector<PairRecord> gen_corpus(const CorpusSpec& spec, Partition partition) {
  const auto& counts = partition == Partition::train ? spec.counts : spec.eval_counts;
  const std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
  if (total == 0) {
    throw ContractError(std::string("empty corpus: every ") +
                        (partition == Partition::train ? "corpus.count" : "corpus.eval_count") +
                        " is zero");
  }
  const ItemGenerator gen(spec);
  const std::size_t n_pool =
      partition == Partition::train ? spec.n_ind_classes() : spec.n_classes;
  Rng rng = make_rng(spec.seed, partition == Partition::train ? "corpus/train" : "corpus/eval");

  std::vector<PairRecord> records;
  records.reserve(total);
  std::size_t g = 0;
  for (Combo combo : kAllCombos) {
    const auto per_task = allocate_tasks(counts[static_cast<std::size_t>(combo)], spec.task_mix);
    for (std::size_t ti = 0; ti < 4; ++ti) {
      const TaskTag task = kAllTasks[ti];
      for (std::size_t k = 0; k < per_task[ti]; ++k, ++g) {
        PairRecord r;
        r.combo = combo;
        r.task = task;
        r.class_id = static_cast<int>(g % n_pool);
        r.split = spec.is_ood(r.class_id) ? Split::OOD : Split::IND;
        r.query = gen.gen_item(r.class_id, rng, query_has_image(combo), task, Side::query);
        r.target = gen.gen_item(r.class_id, rng, target_has_image(combo), task, Side::target);
        records.push_back(std::move(r));
      }
    }
  }
  return records;
}

}  // namespace mmembed
