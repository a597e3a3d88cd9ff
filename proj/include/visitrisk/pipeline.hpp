#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "visitrisk/eval.hpp"
#include "visitrisk/mlp.hpp"
#include "visitrisk/train.hpp"

namespace visitrisk {

/// Everything a run needs. Stage outputs live under out_dir (see RunLayout).
struct PipelineConfig {
  std::filesystem::path out_dir = "run";
  std::string arch = "nn4";
  std::uint64_t seed = 7;
  std::size_t patients = 50000;
  double threshold = 0.5;
  std::optional<std::uint32_t> min_visits;
  std::vector<std::string> ccs_filters;
  double pretrain_fraction = 0.8;
  double train_fraction = 0.8;  // of the bootstrap plan; the rest validates
  bool patient_split = false;
  std::size_t max_epochs = 20;  // step budget when train.total_steps is 0
  WeightInit init = WeightInit::kHe;
  TrainConfig train;  // optimizer and momentum are set per architecture

  /// Applies one `key=value` setting; throws ConfigError on an unknown key or
  /// a bad value.
  void set(std::string_view key, std::string_view value);
  /// Applies every `key=value` line of a file ('#' comments allowed).
  void apply_file(const std::filesystem::path& path);

  /// Report filters: the standard set, or "all" plus the requested
  /// min-visits / CCS filters when any is given.
  std::vector<SubgroupFilter> filters() const;
};

/// File names of every stage output under one directory.
struct RunLayout {
  explicit RunLayout(std::filesystem::path dir);

  std::filesystem::path dir;
  std::filesystem::path cohort;       // visit file
  std::filesystem::path categories;   // categorical spec file
  std::filesystem::path synth_params;
  std::filesystem::path dataset;      // prefix of the encoded dataset files
  std::filesystem::path stats;
  std::filesystem::path pretrain_rows;
  std::filesystem::path test_rows;
  std::filesystem::path bootstrap;    // positions into the pretraining rows
  std::filesystem::path train_rows;   // positions into the bootstrap plan
  std::filesystem::path val_rows;
  std::filesystem::path run_log;
  std::filesystem::path table;
  std::filesystem::path table_csv;

  std::filesystem::path model(std::string_view arch) const;
  std::filesystem::path train_log(std::string_view arch) const;
  std::filesystem::path checkpoints(std::string_view arch) const;
  std::filesystem::path report(std::string_view arch) const;
  std::filesystem::path report_csv(std::string_view arch) const;
  std::filesystem::path roc(std::string_view arch, std::string_view filter_label) const;
};

/// Seed of one stage: derive_seed(global seed, label). Labels are "synth",
/// "split.test", "bootstrap", "split.val", "init.<arch>" and "shuffle.<arch>".
std::uint64_t stage_seed(std::uint64_t seed, std::string_view label);

// Stages. Each reads the previous stages' files, writes new files only, and
// appends one line to the run log. A missing input raises StageInputMissing.

/// Calibrated synthetic cohort: visit file, categorical spec, parameters used.
void cmd_synth(const PipelineConfig& cfg);
/// Encoded dataset, pretraining/test rows and the pretraining column stats.
void cmd_encode(const PipelineConfig& cfg);
/// Bootstrap plan over the pretraining rows and its train/validation split.
void cmd_split(const PipelineConfig& cfg);
/// Model file, training log and checkpoints for cfg.arch.
TrainResult cmd_train(const PipelineConfig& cfg);
/// Report, CSV and ROC files for cfg.arch on the test rows.
EvalReport cmd_eval(const PipelineConfig& cfg);
/// synth, encode, split, then train and eval for NN2, NN4 and NN8; writes the
/// combined table and returns its text.
std::string cmd_repro(const PipelineConfig& cfg);

}  // namespace visitrisk
