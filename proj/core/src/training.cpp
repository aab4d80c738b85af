// Copyright 2026 The mmembed Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmembed/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "mmembed/error.hpp"
#include "mmembed/ops.hpp"

namespace mmembed {

std::string_view to_string(AuxForm f) {
  switch (f) {
    case AuxForm::cross_entropy: return "cross_entropy";
    case AuxForm::mse: return "mse";
    case AuxForm::cosine: return "cosine";
  }
  return "?";
}

AuxForm parse_aux_form(std::string_view s) {
  if (s == "cross_entropy") return AuxForm::cross_entropy;
  if (s == "mse") return AuxForm::mse;
  if (s == "cosine") return AuxForm::cosine;
  throw ConfigError("unknown aux loss form '" + std::string(s) + "' (expected cross_entropy, mse or cosine)");
}

void LossConfig::validate() const {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("loss.tau must be > 0");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("loss.alpha must be >= 0");
  if (!(aux_temp > 0.0) || !std::isfinite(aux_temp)) throw ConfigError("loss.aux_temp must be > 0");
}

void AdapterConfig::validate() const {
  if (rank == 0) throw ConfigError("adapter.rank must be >= 1");
  if (!std::isfinite(scale)) throw ConfigError("adapter.scale must be finite");
  static const std::vector<std::string> known = {"backbone", "vision", "projector", "t2i", "aux_vision"};
  for (const auto& t : targets) {
    if (std::find(known.begin(), known.end(), t) == known.end()) {
      throw ConfigError("unknown adapter target '" + t + "'");
    }
  }
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("Adam epsilon must be > 0");
}

namespace {

void require_unit_rows(const Tensor& t, const char* what) {
  const std::size_t r = t.rows(), c = t.cols();
  for (std::size_t i = 0; i < r; ++i) {
    double n2 = 0.0;
    for (std::size_t j = 0; j < c; ++j) n2 += t.at(i, j) * t.at(i, j);
    if (std::abs(std::sqrt(n2) - 1.0) > 1e-3) {
      throw ContractError(std::string(what) + " row " + std::to_string(i) + " has norm " +
                          std::to_string(std::sqrt(n2)) + ", expected unit norm");
    }
  }
}

std::vector<std::size_t> range(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> r(end - begin);
  std::iota(r.begin(), r.end(), begin);
  return r;
}

struct AuxInputs {
  std::vector<ModalInput> dropped;
  std::vector<std::size_t> full_rows;  // rows of the [queries; targets] block
};

AuxInputs collect_aux(std::span<const PairRecord* const> batch) {
  AuxInputs a;
  const std::size_t b = batch.size();
  for (std::size_t i = 0; i < b; ++i) {
    if (batch[i]->query.has_image()) {
      a.dropped.push_back(drop_image(batch[i]->query));
      a.full_rows.push_back(i);
    }
    if (batch[i]->target.has_image()) {
      a.dropped.push_back(drop_image(batch[i]->target));
      a.full_rows.push_back(b + i);
    }
  }
  return a;
}

}  // namespace

Var info_nce(Var queries, Var targets, double tau) {
  if (!(tau > 0.0)) throw ContractError("info_nce: tau must be > 0");
  const Tensor& q = queries.value();
  const Tensor& t = targets.value();
  if (q.rank() != 2 || q.shape() != t.shape()) {
    throw DimensionError("info_nce: query batch " + shape_string(q.shape()) + " vs target batch " +
                         shape_string(t.shape()));
  }
  require_unit_rows(q, "query");
  require_unit_rows(t, "target");
  const std::size_t b = q.rows();
  Var logits = ops::scale(ops::matmul(queries, ops::transpose(targets)), 1.0 / tau);
  std::vector<std::size_t> diag(b);
  for (std::size_t i = 0; i < b; ++i) diag[i] = i * b + i;
  return ops::scale(ops::mean(ops::take(ops::log_softmax_rows(logits), diag)), -1.0);
}

Var aux_terms(Var full, Var dropped, const LossConfig& cfg) {
  Var e = cfg.stop_grad_target ? ops::stop_gradient(full) : full;
  switch (cfg.aux_form) {
    case AuxForm::cross_entropy: {
      Var p = ops::softmax_rows(ops::scale(e, 1.0 / cfg.aux_temp));
      return ops::sum(ops::softmax_cross_entropy_rows(ops::scale(dropped, 1.0 / cfg.aux_temp), p));
    }
    case AuxForm::mse: {
      Var diff = ops::sub(e, dropped);
      return ops::sum(ops::mul(diff, diff));
    }
    case AuxForm::cosine: {
      Tape& tape = *full.tape;
      Var rows = tape.constant(Tensor::scalar(static_cast<double>(full.value().rows())));
      return ops::sub(rows, ops::sum(ops::mul(e, dropped)));
    }
  }
  throw ContractError("unknown aux form");
}

Var composite_loss(Var l1, Var l2, double alpha) {
  if (alpha == 0.0) return l1;
  return ops::add(l1, ops::scale(l2, alpha));
}

double composite_loss(double l1, double l2, double alpha) {
  if (alpha == 0.0) return l1;
  return l1 + alpha * l2;
}

BatchLoss batch_loss(Tape& tape, const Model& model, std::span<const PairRecord* const> batch,
                     const LossConfig& cfg) {
  const std::size_t b = batch.size();
  if (b == 0) throw ContractError("batch_loss: empty batch");
  const bool with_aux = cfg.alpha != 0.0;
  AuxInputs aux;
  if (with_aux) aux = collect_aux(batch);

  std::vector<const ModalInput*> inputs;
  inputs.reserve(2 * b + aux.dropped.size());
  for (const auto* p : batch) inputs.push_back(&p->query);
  for (const auto* p : batch) inputs.push_back(&p->target);
  for (const auto& d : aux.dropped) inputs.push_back(&d);
  Var all = model.embed(tape, inputs);

  const auto q_rows = range(0, b), t_rows = range(b, 2 * b);
  Var l1 = info_nce(ops::gather_rows(all, q_rows), ops::gather_rows(all, t_rows), cfg.tau);
  if (!with_aux) return {l1, l1, Var{}};
  Var l2;
  if (aux.dropped.empty()) {
    l2 = tape.constant(Tensor::scalar(0.0));
  } else {
    const auto d_rows = range(2 * b, 2 * b + aux.dropped.size());
    Var terms = aux_terms(ops::gather_rows(all, aux.full_rows), ops::gather_rows(all, d_rows), cfg);
    l2 = ops::scale(terms, 1.0 / static_cast<double>(b));
  }
  return {composite_loss(l1, l2, cfg.alpha), l1, l2};
}

Var aux_loss(Tape& tape, const Model& model, std::span<const PairRecord* const> batch,
             const LossConfig& cfg) {
  const std::size_t b = batch.size();
  if (b == 0) throw ContractError("aux_loss: empty batch");
  AuxInputs aux = collect_aux(batch);
  if (aux.dropped.empty()) return tape.constant(Tensor::scalar(0.0));
  std::vector<const ModalInput*> inputs;
  for (std::size_t r : aux.full_rows) {
    inputs.push_back(r < b ? &batch[r]->query : &batch[r - b]->target);
  }
  for (const auto& d : aux.dropped) inputs.push_back(&d);
  const std::size_t k = aux.dropped.size();
  Var all = model.embed(tape, inputs);
  Var terms = aux_terms(ops::gather_rows(all, range(0, k)), ops::gather_rows(all, range(k, 2 * k)), cfg);
  return ops::scale(terms, 1.0 / static_cast<double>(b));
}

Adam::Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

void Adam::step(std::span<const NamedTensor> params) {
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
  }
  if (m_.size() != params.size()) throw ContractError("Adam: parameter list changed between steps");
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i].tensor;
    if (!p.requires_grad() || !p.has_grad()) continue;
    auto& m = m_[i];
    auto& v = v_[i];
    if (m.empty()) {
      m.assign(p.size(), 0.0);
      v.assign(p.size(), 0.0);
    }
    auto w = p.data();
    auto g = p.grad();
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = b1_ * m[j] + (1.0 - b1_) * g[j];
      v[j] = b2_ * v[j] + (1.0 - b2_) * g[j] * g[j];
      w[j] -= lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
    }
  }
}

std::size_t apply_low_rank_adapters(Model& model, const AdapterConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  auto targeted = [&](const std::string& group) {
    return std::find(cfg.targets.begin(), cfg.targets.end(), group) != cfg.targets.end();
  };
  model.for_each_linear([&](const std::string& group, Linear& l) {
    if (!targeted(group)) return;
    const std::size_t min_dim = std::min(l.in_features(), l.out_features());
    if (cfg.rank >= min_dim) {
      throw ConfigError("adapter rank " + std::to_string(cfg.rank) + " must be below the smallest dimension (" +
                        std::to_string(min_dim) + ") of " + group + " layer " +
                        shape_string(l.weight.shape()));
    }
  });
  Rng rng = make_rng(seed, "adapters");
  std::size_t added = 0;
  model.for_each_linear([&](const std::string& group, Linear& l) {
    if (!targeted(group)) return;
    l.attach_adapter(cfg.rank, cfg.scale, rng);
    added += l.lora_a.size() + l.lora_b.size();
  });
  return added;
}

void merge_low_rank_adapters(Model& model) {
  model.for_each_linear([](const std::string&, Linear& l) { l.merge_adapter(); });
}

namespace {

bool is_adapter_param(const std::string& name) {
  auto ends = [&](std::string_view s) {
    return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
  };
  return ends(".lora_a") || ends(".lora_b");
}

}  // namespace

TrainResult train(Model& model, std::span<const PairRecord> corpus, const TrainConfig& cfg,
                  const LossConfig& loss, const StepCallback& on_step) {
  cfg.validate();
  loss.validate();
  if (corpus.size() < cfg.batch_size) {
    throw ContractError("corpus of " + std::to_string(corpus.size()) + " pairs is smaller than batch size " +
                        std::to_string(cfg.batch_size));
  }
  auto all_params = model.parameters();
  if (cfg.adapters_only) {
    const bool any = std::any_of(all_params.begin(), all_params.end(),
                                 [](const NamedTensor& p) { return is_adapter_param(p.name); });
    if (!any) throw ContractError("adapter-only training requested but the model has no adapters");
    for (auto& p : all_params) p.tensor->set_requires_grad(is_adapter_param(p.name));
  } else {
    model.set_trainable(true);
  }
  std::vector<NamedTensor> params;
  for (const auto& p : all_params) {
    if (p.tensor->requires_grad()) params.push_back(p);
  }
  for (auto& p : params) p.tensor->zero_grad();

  Adam adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);
  Rng rng = make_rng(cfg.seed, "batching");
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;

  TrainResult result;
  std::vector<const PairRecord*> batch(cfg.batch_size);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    if (cursor + cfg.batch_size > order.size()) {
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    for (std::size_t i = 0; i < cfg.batch_size; ++i) batch[i] = &corpus[order[cursor + i]];
    cursor += cfg.batch_size;

    Tape tape;
    BatchLoss bl;
    StepStats stats{step, std::nan(""), std::nan(""), 0.0};
    try {
      bl = batch_loss(tape, model, batch, loss);
      stats = {step, bl.total.value().item(), bl.l1.value().item(), bl.l2.valid() ? bl.l2.value().item() : 0.0};
    } catch (const DegenerateInputError&) {
      // NaN activations surface as zero-norm rows before the loss.
    }
    bool finite = std::isfinite(stats.loss);
    if (finite) {
      tape.backward(bl.total);
      for (const auto& p : params) {
        if (!p.tensor->has_grad()) continue;
        for (double g : p.tensor->grad()) {
          if (!std::isfinite(g)) {
            finite = false;
            break;
          }
        }
        if (!finite) break;
      }
    }
    if (!finite) {
      for (auto& p : params) p.tensor->zero_grad();
      result.diverged = true;
      result.diverged_at = step;
      return result;
    }
    adam.step(params);
    for (auto& p : params) p.tensor->zero_grad();
    result.trace.push_back(stats);
    if (on_step) on_step(stats);
  }
  return result;
}

void write_loss_trace(const std::filesystem::path& path, std::span<const StepStats> trace) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  char line[64];
  for (const auto& s : trace) {
    std::snprintf(line, sizeof line, "%zu %.17g\n", s.step, s.loss);
    out << line;
  }
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

double mean_loss(std::span<const StepStats> trace, std::size_t begin, std::size_t end,
                 double StepStats::*field) {
  end = std::min(end, trace.size());
  if (begin >= end) throw ContractError("mean_loss: empty range");
  double s = 0.0;
  for (std::size_t i = begin; i < end; ++i) s += trace[i].*field;
  return s / static_cast<double>(end - begin);
}

}  // namespace mmembed
