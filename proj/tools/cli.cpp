// Copyright 2026 The mmembed Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include "mmembed/checkpoint.hpp"
#include "mmembed/error.hpp"
#include "mmembed/eval.hpp"
#include "mmembed/gradcheck_suite.hpp"
#include "mmembed/manifest.hpp"
#include "mmembed/run_config.hpp"

namespace mmembed::cli {
namespace {

namespace fs = std::filesystem;

constexpr const char* kTrainManifest = "train.jsonl";
constexpr const char* kEvalManifest = "eval.jsonl";
constexpr const char* kResolvedConfig = "config.resolved";
constexpr const char* kCheckpoint = "model.ckpt";
constexpr const char* kLossTrace = "loss_trace.txt";
constexpr const char* kScores = "scores.jsonl";
constexpr const char* kBiasReport = "bias.jsonl";
constexpr const char* kGradcheckReport = "gradcheck.txt";

struct CommonFlags {
  std::string config;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
};

void add_common(CLI::App& cmd, CommonFlags& f, bool config_required) {
  auto* c = cmd.add_option("--config", f.config, "key = value run configuration");
  if (config_required) c->required();
  cmd.add_option("--out", f.out, "output directory")->capture_default_str();
  cmd.add_option("--seed", f.seed, "override the configured top-level seed");
  cmd.add_flag("--deterministic", f.deterministic, "byte-identical outputs for identical inputs");
}

/// All computation is single-threaded with fixed reduction order, so every
/// run is already deterministic; the flag is accepted for interface parity.
RunConfig load_config(const CommonFlags& f) {
  RunConfig cfg = load_run_config(f.config);
  if (f.seed) {
    cfg.seed = *f.seed;
    cfg.resolve();
    cfg.validate();
  }
  return cfg;
}

fs::path prepare_out(const CommonFlags& f) {
  const fs::path dir(f.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error("cannot create output directory " + dir.string());
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream o(path, std::ios::binary | std::ios::trunc);
  o << text;
  o.flush();
  if (!o) throw Error("cannot write " + path.string());
}

void print_tallies(std::ostream& out, const char* label, std::span<const PairRecord> records) {
  std::array<std::size_t, 3> by_combo{};
  std::array<std::size_t, 2> by_split{};
  for (const auto& r : records) {
    ++by_combo[static_cast<std::size_t>(r.combo)];
    ++by_split[static_cast<std::size_t>(r.split)];
  }
  out << label << ":";
  for (Combo c : kAllCombos) out << ' ' << to_string(c) << '=' << by_combo[static_cast<std::size_t>(c)];
  out << "  IND=" << by_split[0] << " OOD=" << by_split[1] << "  total=" << records.size() << '\n';
}

int cmd_gen_data(const CommonFlags& f, std::ostream& out) {
  const RunConfig cfg = load_config(f);
  const fs::path dir = prepare_out(f);
  const auto train = gen_corpus(cfg.corpus, Partition::train);
  const auto eval = gen_corpus(cfg.corpus, Partition::eval);
  write_manifest(train, dir / kTrainManifest);
  write_manifest(eval, dir / kEvalManifest);
  write_text(dir / kResolvedConfig, run_config_to_text(cfg));
  print_tallies(out, "train", train);
  print_tallies(out, "eval ", eval);
  return kExitOk;
}

struct TrainFlags {
  std::string data;
  std::string init;
};

int cmd_train(const CommonFlags& f, const TrainFlags& t, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = load_config(f);
  const fs::path dir = prepare_out(f);
  const fs::path data = t.data.empty() ? dir : fs::path(t.data);
  const auto corpus = read_manifest(data / kTrainManifest);

  std::optional<Model> loaded;
  if (!t.init.empty()) {
    loaded.emplace(load_checkpoint(fs::path(t.init)));
    const auto diff = describe_config_mismatch(cfg.model, loaded->config());
    if (!diff.empty()) throw ConfigError("config does not match initial checkpoint: " + diff);
  }
  Model model = loaded ? std::move(*loaded) : Model(cfg.model, cfg.seed);
  if (cfg.adapters.enabled) apply_low_rank_adapters(model, cfg.adapters, cfg.seed);
  write_text(dir / kResolvedConfig, run_config_to_text(cfg));

  const std::size_t every = std::max<std::size_t>(1, cfg.train.steps / 10);
  const auto result = train(model, corpus, cfg.train, cfg.loss, [&](const StepStats& s) {
    if (s.step % every == 0 || s.step + 1 == cfg.train.steps) {
      out << "step " << std::setw(5) << s.step << "  loss " << std::fixed << std::setprecision(6) << s.loss
          << "  l1 " << s.l1 << "  l2 " << s.l2 << std::defaultfloat << '\n';
    }
  });
  save_checkpoint(model, dir / kCheckpoint);
  write_loss_trace(dir / kLossTrace, result.trace);
  if (result.diverged) {
    err << "error: training diverged at step " << result.diverged_at
        << "; checkpoint holds the parameters from before that step\n";
    return kExitFailed;
  }
  out << "wrote " << (dir / kCheckpoint).string() << " and " << (dir / kLossTrace).string() << '\n';
  return kExitOk;
}

struct EvalFlags {
  std::string checkpoint;
  std::string manifest;
};

int cmd_eval(const CommonFlags& f, const EvalFlags& e, std::ostream& out) {
  const fs::path dir(f.out);
  const fs::path ckpt = e.checkpoint.empty() ? dir / kCheckpoint : fs::path(e.checkpoint);
  const fs::path manifest = e.manifest.empty() ? dir / kEvalManifest : fs::path(e.manifest);
  std::optional<RunConfig> cfg;
  if (!f.config.empty()) cfg = load_config(f);
  Model model = load_checkpoint(ckpt);
  if (cfg) {
    const auto diff = describe_config_mismatch(cfg->model, model.config());
    if (!diff.empty()) throw ConfigError("config does not match checkpoint: " + diff);
  }
  const auto records = read_manifest(manifest);
  const auto report = evaluate(records, model);
  prepare_out(f);
  write_score_report(dir / kScores, report);
  print_score_table(out, report);
  return kExitOk;
}

int cmd_bias(const CommonFlags& f, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = load_config(f);
  const fs::path dir = prepare_out(f);
  write_text(dir / kResolvedConfig, run_config_to_text(cfg));
  const auto archs = default_bias_architectures(cfg.model, cfg.loss);
  const auto report = bias_experiment(cfg.corpus, cfg.bias_total, archs, cfg.train, cfg.bias_seeds,
                                      [&](const BiasProgress& p) {
                                        out << p.architecture << " variant=" << to_string(p.variant)
                                            << " seed=" << p.seed << (p.failed ? "  FAILED" : "") << '\n';
                                      });
  write_bias_report(dir / kBiasReport, report);
  print_bias_table(out, report);
  std::size_t failed = 0;
  for (const auto& a : report.architectures) {
    for (const auto& row : a.matrix) {
      for (const auto& cell : row) failed += cell.failed;
    }
  }
  if (failed > 0) {
    err << "error: " << failed << " bias cell(s) had a diverged run\n";
    return kExitFailed;
  }
  return kExitOk;
}

struct GradcheckFlags {
  std::string inject_fault;
  bool quiet = false;
};

int cmd_gradcheck(const CommonFlags& f, const GradcheckFlags& g, bool out_given, std::ostream& out) {
  GradCheckSuiteOptions opts;
  opts.inject_fault = g.inject_fault;
  const auto result = run_gradcheck_suite(opts);
  std::ostringstream text;
  std::size_t failed = 0;
  for (const auto& r : result.reports) {
    failed += !r.passed;
    if (g.quiet && r.passed) continue;
    text << (r.passed ? "PASS " : "FAIL ") << r.name << "  max_rel_error=" << std::scientific
         << std::setprecision(3) << r.max_rel_error << std::defaultfloat << "  checked=" << r.checked;
    if (!r.passed && !r.message.empty()) text << "  " << r.message;
    text << '\n';
  }
  text << (result.passed ? "gradcheck passed: " : "gradcheck FAILED: ") << result.reports.size() - failed << '/'
       << result.reports.size() << " checks\n";
  out << text.str();
  out << "elapsed " << std::fixed << std::setprecision(1) << result.seconds << " s\n" << std::defaultfloat;
  if (out_given) write_text(prepare_out(f) / kGradcheckReport, text.str());
  return result.passed ? kExitOk : kExitFailed;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app("Multimodal embedding toolkit with modality completion", "mmembed");
  app.require_subcommand(1);

  CommonFlags gen_f, train_f, eval_f, bias_f, grad_f;
  TrainFlags train_x;
  EvalFlags eval_x;
  GradcheckFlags grad_x;

  auto* gen = app.add_subcommand("gen-data", "write train and eval manifests");
  add_common(*gen, gen_f, true);

  auto* tr = app.add_subcommand("train", "train a model on the train manifest");
  add_common(*tr, train_f, true);
  tr->add_option("--data", train_x.data, "directory holding train.jsonl (default: --out)");
  tr->add_option("--init", train_x.init, "start from this checkpoint instead of a fresh model");

  auto* ev = app.add_subcommand("eval", "score a checkpoint on the eval manifest");
  add_common(*ev, eval_f, false);
  ev->add_option("--checkpoint", eval_x.checkpoint, "checkpoint file (default: OUT/model.ckpt)");
  ev->add_option("--manifest", eval_x.manifest, "eval manifest (default: OUT/eval.jsonl)");

  auto* bias = app.add_subcommand("bias", "modality-bias experiment over skewed training mixes");
  add_common(*bias, bias_f, true);

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every op and the pipeline");
  add_common(*grad, grad_f, false);
  grad->add_option("--inject-fault", grad_x.inject_fault, "flip the backward sign of this op (or 'pipeline')");
  grad->add_flag("--quiet", grad_x.quiet, "list failing checks only");

  // CLI11 consumes a reversed argument list without the program name.
  std::vector<std::string> rev;
  for (std::size_t i = args.size(); i > 1; --i) rev.push_back(args[i - 1]);
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*gen) return cmd_gen_data(gen_f, out);
    if (*tr) return cmd_train(train_f, train_x, out, err);
    if (*ev) return cmd_eval(eval_f, eval_x, out);
    if (*bias) return cmd_bias(bias_f, out, err);
    return cmd_gradcheck(grad_f, grad_x, grad->count("--out") > 0, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitError;
  }
}

}  // namespace mmembed::cli
