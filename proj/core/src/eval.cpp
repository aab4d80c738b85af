// Copyright 2026 The mmembed Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmembed/eval.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>
#include <tuple>

#include <nlohmann/json.hpp>

#include "mmembed/error.hpp"

namespace mmembed {

using nlohmann::ordered_json;

CandidateIndex CandidateIndex::from_embeddings(Tensor embeddings, std::vector<std::size_t> ids) {
  if (ids.empty()) throw ContractError("candidate index is empty");
  if (embeddings.rank() != 2 || embeddings.rows() != ids.size()) {
    throw ContractError("candidate index has " + std::to_string(embeddings.rows()) + " rows for " +
                        std::to_string(ids.size()) + " ids");
  }
  for (std::size_t i = 0; i < embeddings.rows(); ++i) {
    double n2 = 0.0;
    for (std::size_t j = 0; j < embeddings.cols(); ++j) n2 += embeddings.at(i, j) * embeddings.at(i, j);
    if (std::abs(std::sqrt(n2) - 1.0) > 1e-5) {
      throw ContractError("candidate row " + std::to_string(i) + " is not unit-norm");
    }
  }
  return CandidateIndex{std::move(embeddings), std::move(ids)};
}

CandidateIndex build_index(std::span<const ModalInput> targets, const Model& model,
                           std::vector<std::size_t> ids) {
  if (targets.empty()) throw ContractError("build_index: no targets");
  if (ids.empty()) {
    ids.resize(targets.size());
    std::iota(ids.begin(), ids.end(), std::size_t{0});
  }
  return CandidateIndex::from_embeddings(model.embed_all(targets), std::move(ids));
}

std::size_t argmax_similarity(std::span<const double> query, const CandidateIndex& index) {
  const std::size_t d = index.embeddings.cols();
  if (query.size() != d) {
    throw DimensionError("query of dimension " + std::to_string(query.size()) + " vs index dimension " +
                         std::to_string(d));
  }
  const auto data = index.embeddings.data();
  std::size_t best = 0;
  double best_sim = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < index.size(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += query[j] * data[i * d + j];
    if (s > best_sim) {
      best_sim = s;
      best = i;
    }
  }
  return best;
}

std::size_t match(std::span<const double> query, const CandidateIndex& index) {
  return index.ids[argmax_similarity(query, index)];
}

std::size_t match(const ModalInput& query, const CandidateIndex& index, const Model& model) {
  return match(model.embed(query).values, index);
}

double precision_at_1(std::span<const std::size_t> predictions, std::span<const std::size_t> gold) {
  if (predictions.size() != gold.size()) {
    throw ContractError("precision_at_1: " + std::to_string(predictions.size()) + " predictions vs " +
                        std::to_string(gold.size()) + " gold labels");
  }
  if (predictions.empty()) throw ContractError("precision_at_1: no predictions");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) hit += predictions[i] == gold[i];
  return static_cast<double>(hit) / static_cast<double>(gold.size());
}

double ScoreReport::p_at_1(std::optional<Split> split, std::optional<Combo> combo) const {
  std::size_t n = 0, c = 0;
  for (const auto& b : buckets) {
    if (b.degenerate || (split && b.split != *split) || (combo && b.combo != *combo)) continue;
    n += b.n_queries;
    c += b.correct;
  }
  return n == 0 ? std::numeric_limits<double>::quiet_NaN() : static_cast<double>(c) / static_cast<double>(n);
}

namespace {

void add_to(Aggregate& a, const BucketScore& b) {
  a.n_queries += b.n_queries;
  a.correct += b.correct;
  a.p_at_1 = static_cast<double>(a.correct) / static_cast<double>(a.n_queries);
}

using BucketKey = std::tuple<TaskTag, Split, Combo>;

}  // namespace

ScoreReport summarize(std::vector<BucketScore> buckets) {
  ScoreReport r;
  r.buckets = std::move(buckets);
  for (const auto& b : r.buckets) {
    r.total_queries += b.n_queries;
    if (b.degenerate || b.n_queries == 0) continue;
    add_to(r.per_task[b.task], b);
    add_to(r.per_combo[b.combo], b);
    add_to(r.per_split_combo[{b.split, b.combo}], b);
    add_to(b.split == Split::IND ? r.ind : r.ood, b);
    add_to(r.overall, b);
  }
  return r;
}

ScoreReport evaluate_embeddings(std::span<const PairRecord> eval, const Tensor& query_embs,
                                const Tensor& target_embs) {
  if (eval.empty()) throw ContractError("evaluate: empty eval corpus");
  if (query_embs.rows() != eval.size() || target_embs.rows() != eval.size()) {
    throw DimensionError("evaluate: embedding rows do not match the eval corpus");
  }
  std::map<BucketKey, std::vector<std::size_t>> pools;
  for (std::size_t i = 0; i < eval.size(); ++i) pools[{eval[i].task, eval[i].split, eval[i].combo}].push_back(i);

  const std::size_t d = target_embs.cols();
  std::vector<BucketScore> buckets;
  for (const auto& [key, members] : pools) {
    Tensor cand({members.size(), d});
    for (std::size_t k = 0; k < members.size(); ++k) {
      for (std::size_t j = 0; j < d; ++j) cand.at(k, j) = target_embs.at(members[k], j);
    }
    const CandidateIndex index = CandidateIndex::from_embeddings(std::move(cand), members);
    std::vector<std::size_t> predicted, gold;
    for (std::size_t qi : members) {
      const auto row = query_embs.data().subspan(qi * d, d);
      predicted.push_back(static_cast<std::size_t>(eval[match(row, index)].class_id));
      gold.push_back(static_cast<std::size_t>(eval[qi].class_id));
    }
    BucketScore b;
    std::tie(b.task, b.split, b.combo) = key;
    b.n_queries = members.size();
    b.n_candidates = members.size();
    b.p_at_1 = precision_at_1(predicted, gold);
    for (std::size_t k = 0; k < gold.size(); ++k) b.correct += predicted[k] == gold[k];
    b.degenerate = members.size() == 1;
    buckets.push_back(b);
  }
  return summarize(std::move(buckets));
}

ScoreReport evaluate(std::span<const PairRecord> eval, const Model& model) {
  if (eval.empty()) throw ContractError("evaluate: empty eval corpus");
  std::vector<ModalInput> queries, targets;
  queries.reserve(eval.size());
  targets.reserve(eval.size());
  for (const auto& p : eval) {
    queries.push_back(p.query);
    targets.push_back(p.target);
  }
  return evaluate_embeddings(eval, model.embed_all(queries), model.embed_all(targets));
}

namespace {

ordered_json aggregate_json(const Aggregate& a) {
  return {{"n_queries", a.n_queries}, {"correct", a.correct}, {"p_at_1", a.p_at_1}};
}

std::string fmt(double v) {
  if (std::isnan(v)) return "   -  ";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%6.4f", v);
  return buf;
}

std::string pad(std::string s, std::size_t w) {
  if (s.size() < w) s.append(w - s.size(), ' ');
  return s;
}

}  // namespace

void write_score_report(std::ostream& out, const ScoreReport& r) {
  for (const auto& b : r.buckets) {
    ordered_json j{{"kind", "bucket"},
                   {"task", to_string(b.task)},
                   {"split", to_string(b.split)},
                   {"combo", to_string(b.combo)},
                   {"n_queries", b.n_queries},
                   {"n_candidates", b.n_candidates},
                   {"correct", b.correct},
                   {"p_at_1", b.p_at_1},
                   {"degenerate", b.degenerate}};
    out << j.dump() << '\n';
  }
  for (const auto& [task, a] : r.per_task) {
    ordered_json j{{"kind", "task"}, {"task", to_string(task)}};
    j.update(aggregate_json(a));
    out << j.dump() << '\n';
  }
  for (const auto& [combo, a] : r.per_combo) {
    ordered_json j{{"kind", "combo"}, {"combo", to_string(combo)}};
    j.update(aggregate_json(a));
    out << j.dump() << '\n';
  }
  ordered_json s{{"kind", "summary"},
                 {"ind", aggregate_json(r.ind)},
                 {"ood", aggregate_json(r.ood)},
                 {"overall", aggregate_json(r.overall)},
                 {"total_queries", r.total_queries}};
  out << s.dump() << '\n';
}

void write_score_report(const std::filesystem::path& path, const ScoreReport& report) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error("cannot open '" + path.string() + "' for writing");
  write_score_report(f, report);
  if (!f) throw Error("failed writing '" + path.string() + "'");
}

void print_score_table(std::ostream& out, const ScoreReport& r) {
  out << pad("task", 16) << pad("split", 7) << pad("combo", 7) << pad("queries", 9) << "P@1\n";
  for (const auto& b : r.buckets) {
    out << pad(std::string(to_string(b.task)), 16) << pad(std::string(to_string(b.split)), 7)
        << pad(std::string(to_string(b.combo)), 7) << pad(std::to_string(b.n_queries), 9) << fmt(b.p_at_1)
        << (b.degenerate ? "  (degenerate, excluded)" : "") << '\n';
  }
  out << '\n' << pad("combo", 16) << pad("IND", 8) << pad("OOD", 8) << "all\n";
  for (Combo c : kAllCombos) {
    out << pad(std::string(to_string(c)), 16) << pad(fmt(r.p_at_1(Split::IND, c)), 8)
        << pad(fmt(r.p_at_1(Split::OOD, c)), 8) << fmt(r.p_at_1(std::nullopt, c)) << '\n';
  }
  out << '\n' << pad("task", 16) << "P@1\n";
  for (const auto& [task, a] : r.per_task) out << pad(std::string(to_string(task)), 16) << fmt(a.p_at_1) << '\n';
  out << '\n'
      << "IND " << fmt(r.ind.p_at_1) << "  OOD " << fmt(r.ood.p_at_1) << "  overall " << fmt(r.overall.p_at_1)
      << "  (" << r.total_queries << " queries)\n";
}

double population_stddev(std::span<const double> v) {
  if (v.empty()) throw ContractError("population_stddev: no values");
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

std::vector<BiasArchitecture> default_bias_architectures(const ModelConfig& model, const LossConfig& loss) {
  BiasArchitecture completion{"completion", model, loss};
  completion.model.missing_image = MissingImageMode::complete;
  BiasArchitecture baseline{"zero_fill", model, loss};
  baseline.model.missing_image = MissingImageMode::zero_fill;
  baseline.loss.alpha = 0.0;
  return {completion, baseline};
}

BiasReport bias_experiment(const CorpusSpec& base, std::size_t total,
                           std::span<const BiasArchitecture> architectures, const TrainConfig& train_cfg,
                           std::span<const std::uint64_t> seeds,
                           const std::function<void(const BiasProgress&)>& progress) {
  if (architectures.empty() || seeds.empty()) throw ContractError("bias_experiment: nothing to run");
  BiasReport report;
  report.seeds.assign(seeds.begin(), seeds.end());
  std::array<std::vector<PairRecord>, 3> corpora;
  for (Combo v : kAllCombos) {
    const auto vi = static_cast<std::size_t>(v);
    CorpusSpec spec = base;
    spec.counts = skewed_counts(total, v);
    corpora[vi] = gen_corpus(spec, Partition::train);
    for (Combo c : kAllCombos) {
      report.tallies[vi][static_cast<std::size_t>(c)] =
          static_cast<std::size_t>(std::count_if(corpora[vi].begin(), corpora[vi].end(),
                                                 [&](const PairRecord& p) { return p.combo == c; }));
    }
    if (report.tallies[vi] != spec.counts) throw ContractError("bias_experiment: skewed tallies do not match");
  }
  const std::vector<PairRecord> eval = gen_corpus(base, Partition::eval);

  for (const auto& arch : architectures) {
    BiasArchitectureReport ar;
    ar.name = arch.name;
    for (Combo v : kAllCombos) {
      const auto vi = static_cast<std::size_t>(v);
      for (std::uint64_t seed : seeds) {
        Model model(arch.model, seed);
        TrainConfig tc = train_cfg;
        tc.seed = seed;
        const TrainResult tr = train(model, corpora[vi], tc, arch.loss);
        std::optional<ScoreReport> score;
        if (!tr.diverged) score = evaluate(eval, model);
        for (Combo c : kAllCombos) {
          auto& cell = ar.matrix[vi][static_cast<std::size_t>(c)];
          if (tr.diverged) {
            cell.per_seed.push_back(std::numeric_limits<double>::quiet_NaN());
            cell.failed = true;
          } else {
            cell.per_seed.push_back(score->p_at_1(std::nullopt, c));
          }
        }
        if (progress) progress({arch.name, v, seed, tr.diverged});
      }
      std::array<double, 3> means{};
      for (Combo c : kAllCombos) {
        auto& cell = ar.matrix[vi][static_cast<std::size_t>(c)];
        double s = 0.0;
        std::size_t n = 0;
        for (double x : cell.per_seed) {
          if (!std::isnan(x)) {
            s += x;
            ++n;
          }
        }
        cell.mean = n == 0 ? std::numeric_limits<double>::quiet_NaN() : s / static_cast<double>(n);
        means[static_cast<std::size_t>(c)] = cell.mean;
      }
      ar.stddev[vi] = population_stddev(means);
    }
    report.architectures.push_back(std::move(ar));
  }
  return report;
}

void write_bias_report(std::ostream& out, const BiasReport& r) {
  for (const auto& ar : r.architectures) {
    for (Combo v : kAllCombos) {
      const auto vi = static_cast<std::size_t>(v);
      for (Combo c : kAllCombos) {
        const auto& cell = ar.matrix[vi][static_cast<std::size_t>(c)];
        ordered_json per_seed = ordered_json::array();
        for (double x : cell.per_seed) per_seed.push_back(std::isnan(x) ? ordered_json(nullptr) : ordered_json(x));
        ordered_json j{{"kind", "cell"},
                       {"architecture", ar.name},
                       {"train_variant", to_string(v)},
                       {"eval_combo", to_string(c)},
                       {"p_at_1", std::isnan(cell.mean) ? ordered_json(nullptr) : ordered_json(cell.mean)},
                       {"per_seed", per_seed},
                       {"failed", cell.failed}};
        out << j.dump() << '\n';
      }
      ordered_json s{{"kind", "variant"},
                     {"architecture", ar.name},
                     {"train_variant", to_string(v)},
                     {"tallies", r.tallies[vi]},
                     {"stddev", std::isnan(ar.stddev[vi]) ? ordered_json(nullptr) : ordered_json(ar.stddev[vi])}};
      out << s.dump() << '\n';
    }
  }
}

void write_bias_report(const std::filesystem::path& path, const BiasReport& report) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error("cannot open '" + path.string() + "' for writing");
  write_bias_report(f, report);
  if (!f) throw Error("failed writing '" + path.string() + "'");
}

void print_bias_table(std::ostream& out, const BiasReport& r) {
  for (const auto& ar : r.architectures) {
    out << ar.name << '\n' << pad("train \\ eval", 14);
    for (Combo c : kAllCombos) out << pad(std::string(to_string(c)), 9);
    out << "stddev\n";
    for (Combo v : kAllCombos) {
      const auto vi = static_cast<std::size_t>(v);
      out << pad(std::string(to_string(v)) + "-heavy", 14);
      for (Combo c : kAllCombos) {
        const auto& cell = ar.matrix[vi][static_cast<std::size_t>(c)];
        out << pad(cell.failed ? "failed" : fmt(cell.mean), 9);
      }
      out << fmt(ar.stddev[vi]) << '\n';
    }
    out << '\n';
  }
}

}  // namespace mmembed
