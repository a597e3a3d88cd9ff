// visitrisk: stage-by-stage driver for the visit-level risk pipeline.
//
//   visitrisk synth  --out-dir run --patients 50000 --seed 7
//   visitrisk encode --out-dir run
//   visitrisk split  --out-dir run
//   visitrisk train  --out-dir run --arch nn4
//   visitrisk eval   --out-dir run --arch nn4 [--min-visits 5] [--ccs-filter 651/657]
//   visitrisk repro  --out-dir run --patients 50000 --seed 7
//
// Exit codes: 0 success, 2 configuration error, 3 missing stage input,
// 4 any other categorized pipeline error, 1 unexpected failure.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/core.h>

#include "visitrisk/error.hpp"
#include "visitrisk/pipeline.hpp"

namespace {

struct Flags {
  std::string config;
  std::optional<std::string> out_dir;
  std::optional<std::string> arch;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> patients;
  std::optional<double> threshold;
  std::optional<std::uint32_t> min_visits;
  std::vector<std::string> ccs_filters;
  std::optional<std::size_t> epochs;
  std::vector<std::string> settings;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "key=value settings file; flags win on conflict");
  cmd->add_option("--out-dir", f.out_dir, "directory holding every stage's files");
  cmd->add_option("--seed", f.seed, "global seed; every stage seed derives from it");
  cmd->add_option("--set", f.settings, "extra key=value setting (repeatable)");
}

visitrisk::PipelineConfig resolve(const Flags& f) {
  visitrisk::PipelineConfig cfg;
  if (!f.config.empty()) cfg.apply_file(f.config);
  for (const auto& s : f.settings) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw visitrisk::Error(visitrisk::ErrorKind::kConfigError, "--set expects key=value");
    cfg.set(s.substr(0, eq), s.substr(eq + 1));
  }
  if (f.out_dir) cfg.out_dir = *f.out_dir;
  if (f.arch) cfg.set("arch", *f.arch);
  if (f.seed) cfg.seed = *f.seed;
  if (f.patients) cfg.patients = *f.patients;
  if (f.threshold) cfg.set("threshold", std::to_string(*f.threshold));
  if (f.min_visits) cfg.set("min_visits", std::to_string(*f.min_visits));
  if (!f.ccs_filters.empty()) cfg.ccs_filters.clear();
  for (const auto& c : f.ccs_filters) cfg.set("ccs_filter", c);
  if (f.epochs) cfg.set("epochs", std::to_string(*f.epochs));
  return cfg;
}

int exit_code(visitrisk::ErrorKind kind) {
  switch (kind) {
    case visitrisk::ErrorKind::kConfigError: return 2;
    case visitrisk::ErrorKind::kStageInputMissing: return 3;
    default: return 4;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Visit-level risk pipeline: synthetic cohorts, encoding, SELU networks, subgroup evaluation"};
  app.require_subcommand(1);
  Flags f;

  auto* synth = app.add_subcommand("synth", "generate a calibrated synthetic cohort");
  auto* encode = app.add_subcommand("encode", "encode visits, split off the test rows, fit column stats");
  auto* split = app.add_subcommand("split", "balanced bootstrap plan and train/validation split");
  auto* train = app.add_subcommand("train", "train one architecture");
  auto* eval = app.add_subcommand("eval", "evaluate one trained architecture on the test rows");
  auto* repro = app.add_subcommand("repro", "run every stage for NN2, NN4 and NN8 and print the table");
  for (auto* cmd : {synth, encode, split, train, eval, repro}) add_common(cmd, f);
  for (auto* cmd : {synth, repro}) cmd->add_option("--patients", f.patients, "number of synthetic patients");
  for (auto* cmd : {train, eval}) {
    cmd->add_option("--arch", f.arch, "nn2, nn4 or nn8")->check(CLI::IsMember({"nn2", "nn4", "nn8"}, CLI::ignore_case));
  }
  for (auto* cmd : {train, repro}) cmd->add_option("--epochs", f.epochs, "step budget in epochs");
  for (auto* cmd : {eval, repro}) {
    cmd->add_option("--threshold", f.threshold, "decision threshold on P(y = 1)");
    cmd->add_option("--min-visits", f.min_visits, "report rows with at least this many visits");
    cmd->add_option("--ccs-filter", f.ccs_filters, "report rows with any of these CCS codes, e.g. 651/657");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    const auto cfg = resolve(f);
    if (synth->parsed()) {
      visitrisk::cmd_synth(cfg);
    } else if (encode->parsed()) {
      visitrisk::cmd_encode(cfg);
    } else if (split->parsed()) {
      visitrisk::cmd_split(cfg);
    } else if (train->parsed()) {
      const auto result = visitrisk::cmd_train(cfg);
      fmt::print("{}: {} steps, best step {}, validation balanced accuracy {:.4f} ({})\n", cfg.arch, result.steps_run,
                 result.best_step, result.best_metric, visitrisk::to_string(result.stop));
    } else if (eval->parsed()) {
      const visitrisk::EvalReport report = visitrisk::cmd_eval(cfg);
      fmt::print("{}", visitrisk::format_table(std::span<const visitrisk::EvalReport>(&report, 1)));
    } else if (repro->parsed()) {
      fmt::print("{}", visitrisk::cmd_repro(cfg));
    }
  } catch (const visitrisk::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
