#include "visitrisk/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <map>

#include <fmt/core.h>
#include <json.hpp>

#include "visitrisk/encode.hpp"
#include "visitrisk/error.hpp"
#include "visitrisk/io.hpp"
#include "visitrisk/resample.hpp"
#include "visitrisk/rng.hpp"
#include "visitrisk/schema.hpp"
#include "visitrisk/synth.hpp"

namespace fs = std::filesystem;

namespace visitrisk {

namespace {

[[noreturn]] void bad_value(std::string_view key, std::string_view value) {
  throw Error(ErrorKind::kConfigError, fmt::format("bad value '{}' for {}", value, key));
}

std::uint64_t parse_u64(std::string_view key, std::string_view value) {
  long long v = 0;
  if (!io::parse_int(value, v) || v < 0) bad_value(key, value);
  return static_cast<std::uint64_t>(v);
}

double parse_real(std::string_view key, std::string_view value) {
  double v = 0.0;
  if (!io::parse_double(value, v)) bad_value(key, value);
  return v;
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(key, value);
}

std::string lower(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

void require(std::initializer_list<fs::path> paths) {
  for (const auto& p : paths) {
    if (!fs::exists(p)) throw Error(ErrorKind::kStageInputMissing, fmt::format("{} not found", p.string()));
  }
}

std::vector<fs::path> dataset_files(const fs::path& prefix) {
  return {fs::path(prefix.string() + ".hdr"), fs::path(prefix.string() + ".bin"),
          fs::path(prefix.string() + ".meta.csv")};
}

// One JSON line per stage: name, wall time, digests of the inputs, outputs.
class StageLog {
 public:
  StageLog(const RunLayout& layout, std::string stage, std::vector<fs::path> inputs)
      : layout_(layout), stage_(std::move(stage)), inputs_(std::move(inputs)),
        start_(std::chrono::steady_clock::now()) {
    for (const auto& p : inputs_) require({p});
    fs::create_directories(layout_.dir);
  }

  void finish(const std::vector<fs::path>& outputs, nlohmann::json extra = nlohmann::json::object()) {
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start_;
    nlohmann::json line;
    line["stage"] = stage_;
    line["seconds"] = elapsed.count();
    line["inputs"] = nlohmann::json::object();
    for (const auto& p : inputs_) line["inputs"][p.filename().string()] = io::file_digest(p);
    line["outputs"] = nlohmann::json::array();
    for (const auto& p : outputs) line["outputs"].push_back(p.filename().string());
    if (!extra.empty()) line["details"] = std::move(extra);
    std::ofstream out(layout_.run_log, std::ios::app);
    out << line.dump() << '\n';
  }

 private:
  const RunLayout& layout_;
  std::string stage_;
  std::vector<fs::path> inputs_;
  std::chrono::steady_clock::time_point start_;
};

std::string file_label(std::string_view filter_label) {
  std::string out;
  for (char c : filter_label) {
    if (c == '/') {
      out += '-';
    } else if (c != '>' && c != '=') {
      out += c;
    }
  }
  return out;
}

EvalReport evaluate_arch(const PipelineConfig& cfg, const RunLayout& layout, const std::string& arch_key,
                         const EncodedDataset& dataset, const FeatureStats& stats,
                         const std::vector<std::size_t>& test_rows) {
  const auto model = load_model(layout.model(arch_key));
  const auto normalized = apply_stats(dataset.features.gather_rows(test_rows), stats);
  const auto filters = cfg.filters();
  auto report = evaluate(model, Architecture::by_name(arch_key).name, normalized, dataset, test_rows, filters,
                         cfg.threshold);
  const std::array<EvalReport, 1> one{report};
  io::write_text(layout.report(arch_key), format_table(one));
  io::write_text(layout.report_csv(arch_key), report_csv(one));
  for (const auto& entry : report.entries) io::write_text(layout.roc(arch_key, entry.filter), roc_csv(entry));
  return report;
}

}  // namespace

void PipelineConfig::set(std::string_view key, std::string_view value) {
  key = io::trim(key);
  value = io::trim(value);
  if (key == "out_dir" || key == "out-dir") {
    out_dir = std::string(value);
  } else if (key == "arch") {
    Architecture::by_name(value);
    arch = lower(value);
  } else if (key == "seed") {
    seed = parse_u64(key, value);
  } else if (key == "patients") {
    patients = parse_u64(key, value);
  } else if (key == "threshold") {
    threshold = parse_real(key, value);
    if (!(threshold > 0.0 && threshold < 1.0)) bad_value(key, value);
  } else if (key == "min_visits" || key == "min-visits") {
    const auto n = parse_u64(key, value);
    if (n < 1) bad_value(key, value);
    min_visits = static_cast<std::uint32_t>(n);
  } else if (key == "ccs_filter" || key == "ccs-filter") {
    SubgroupFilter::parse(value);
    ccs_filters.emplace_back(value);
  } else if (key == "pretrain_fraction") {
    pretrain_fraction = parse_real(key, value);
  } else if (key == "train_fraction") {
    train_fraction = parse_real(key, value);
  } else if (key == "patient_split") {
    patient_split = parse_bool(key, value);
  } else if (key == "epochs") {
    max_epochs = parse_u64(key, value);
    if (max_epochs < 1) bad_value(key, value);
  } else if (key == "init") {
    const auto v = lower(value);
    if (v == "he") {
      init = WeightInit::kHe;
    } else if (v == "lecun") {
      init = WeightInit::kLecun;
    } else {
      bad_value(key, value);
    }
  } else if (key == "eta0") {
    train.eta0 = parse_real(key, value);
  } else if (key == "eta_floor") {
    train.eta_floor = parse_real(key, value);
  } else if (key == "steps") {
    train.total_steps = parse_u64(key, value);
  } else if (key == "batch_size") {
    train.batch_size = parse_u64(key, value);
  } else if (key == "eval_every") {
    train.eval_every = parse_u64(key, value);
  } else if (key == "patience") {
    train.patience = parse_u64(key, value);
  } else if (key == "min_delta") {
    train.min_delta = parse_real(key, value);
  } else {
    throw Error(ErrorKind::kConfigError, fmt::format("unknown setting '{}'", key));
  }
}

void PipelineConfig::apply_file(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorKind::kConfigError, fmt::format("config file {} not found", path.string()));
  const auto text = io::read_text(path);
  std::size_t line_no = 0;
  for (const auto& raw : io::split(text, '\n')) {
    ++line_no;
    auto line = io::trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorKind::kConfigError, fmt::format("{}:{}: expected key=value", path.string(), line_no));
    }
    set(line.substr(0, eq), line.substr(eq + 1));
  }
}

std::vector<SubgroupFilter> PipelineConfig::filters() const {
  if (!min_visits && ccs_filters.empty()) return standard_filters();
  std::vector<SubgroupFilter> out{SubgroupFilter::all()};
  if (min_visits) out.push_back(SubgroupFilter::min_visits(*min_visits));
  for (const auto& f : ccs_filters) out.push_back(SubgroupFilter::parse(f));
  return out;
}

RunLayout::RunLayout(fs::path d)
    : dir(std::move(d)),
      cohort(dir / "cohort.csv"),
      categories(dir / "categories.txt"),
      synth_params(dir / "synth_params.txt"),
      dataset(dir / "dataset"),
      stats(dir / "stats.csv"),
      pretrain_rows(dir / "pretrain.idx"),
      test_rows(dir / "test.idx"),
      bootstrap(dir / "bootstrap.idx"),
      train_rows(dir / "train.idx"),
      val_rows(dir / "val.idx"),
      run_log(dir / "run_log.jsonl"),
      table(dir / "report.txt"),
      table_csv(dir / "report.csv") {}

fs::path RunLayout::model(std::string_view arch) const { return dir / fmt::format("model_{}.mlp", arch); }
fs::path RunLayout::train_log(std::string_view arch) const { return dir / fmt::format("train_log_{}.csv", arch); }
fs::path RunLayout::checkpoints(std::string_view arch) const { return dir / "checkpoints" / std::string(arch); }
fs::path RunLayout::report(std::string_view arch) const { return dir / fmt::format("report_{}.txt", arch); }
fs::path RunLayout::report_csv(std::string_view arch) const { return dir / fmt::format("report_{}.csv", arch); }
fs::path RunLayout::roc(std::string_view arch, std::string_view filter_label) const {
  return dir / "roc" / fmt::format("{}_{}.csv", arch, file_label(filter_label));
}

std::uint64_t stage_seed(std::uint64_t seed, std::string_view label) { return derive_seed(seed, label); }

void cmd_synth(const PipelineConfig& cfg) {
  const RunLayout layout(cfg.out_dir);
  StageLog log(layout, "synth", {});
  const auto synth_cfg = default_config(cfg.patients, stage_seed(cfg.seed, "synth"));
  const auto records = generate(synth_cfg);
  write_cohort(layout.cohort, layout.categories, records);

  std::string params = fmt::format("patients {}\nseed {}\nbase_log_odds {}\nvisit_slope {}\n", synth_cfg.n_patients,
                                   synth_cfg.seed, io::format_double(synth_cfg.base_log_odds),
                                   io::format_double(synth_cfg.visit_slope));
  for (const auto& [code, boost] : synth_cfg.risk_boosts) {
    params += fmt::format("boost {} {}\n", code, io::format_double(boost));
  }
  io::write_text(layout.synth_params, params);

  const auto summary = validate_cohort(records, CategoricalSpec::standard());
  log.finish({layout.cohort, layout.categories, layout.synth_params},
             {{"patients", summary.patients}, {"visits", summary.visits}, {"positives", summary.positives}});
}

void cmd_encode(const PipelineConfig& cfg) {
  const RunLayout layout(cfg.out_dir);
  StageLog log(layout, "encode", {layout.cohort, layout.categories});
  const auto spec = CategoricalSpec::load(layout.categories);
  const auto records = load_visits(layout.cohort, spec);
  validate_cohort(records, spec);
  const auto dataset = encode_cohort(records, spec);

  const auto seed = stage_seed(cfg.seed, "split.test");
  const auto parts = cfg.patient_split ? split_by_patient(dataset.patient_ids, cfg.pretrain_fraction, seed)
                                       : split(dataset.rows(), cfg.pretrain_fraction, seed);
  const auto stats = fit_stats(dataset.features, parts.first, dataset.column_names);

  save_dataset(layout.dataset, dataset);
  save_stats(layout.stats, stats);
  save_indices(layout.pretrain_rows, "pretrain", seed, parts.first);
  save_indices(layout.test_rows, "test", seed, parts.second);
  auto outputs = dataset_files(layout.dataset);
  outputs.insert(outputs.end(), {layout.stats, layout.pretrain_rows, layout.test_rows});
  log.finish(outputs, {{"rows", dataset.rows()},
                       {"raw_width", dataset.raw_width()},
                       {"retained", stats.retained_count()},
                       {"pretrain", parts.first.size()},
                       {"test", parts.second.size()}});
}

void cmd_split(const PipelineConfig& cfg) {
  const RunLayout layout(cfg.out_dir);
  auto inputs = dataset_files(layout.dataset);
  inputs.push_back(layout.pretrain_rows);
  StageLog log(layout, "split", inputs);
  const auto dataset = load_dataset(layout.dataset);
  const auto pretrain = load_indices(layout.pretrain_rows).indices;

  std::vector<std::uint8_t> labels;
  labels.reserve(pretrain.size());
  for (auto r : pretrain) {
    if (r >= dataset.rows()) throw Error(ErrorKind::kShapeMismatch, "pretraining index out of range");
    labels.push_back(dataset.labels[r]);
  }
  const auto plan = balance_bootstrap(labels, stage_seed(cfg.seed, "bootstrap"));
  const auto val_seed = stage_seed(cfg.seed, "split.val");
  const auto tv = train_val_split(plan.indices.size(), cfg.train_fraction, val_seed);

  save_indices(layout.bootstrap, "bootstrap", plan.seed, plan.indices);
  save_indices(layout.train_rows, "train", val_seed, tv.first);
  save_indices(layout.val_rows, "val", val_seed, tv.second);
  log.finish({layout.bootstrap, layout.train_rows, layout.val_rows},
             {{"bootstrap", plan.indices.size()}, {"train", tv.first.size()}, {"val", tv.second.size()}});
}

TrainResult cmd_train(const PipelineConfig& cfg) {
  const RunLayout layout(cfg.out_dir);
  auto inputs = dataset_files(layout.dataset);
  inputs.insert(inputs.end(),
                {layout.stats, layout.pretrain_rows, layout.bootstrap, layout.train_rows, layout.val_rows});
  StageLog log(layout, fmt::format("train.{}", cfg.arch), inputs);

  const auto arch = Architecture::by_name(cfg.arch);
  const auto dataset = load_dataset(layout.dataset);
  const auto stats = load_stats(layout.stats);
  const auto pretrain = load_indices(layout.pretrain_rows).indices;
  const auto plan = load_indices(layout.bootstrap).indices;
  const auto train_pos = load_indices(layout.train_rows).indices;
  const auto val_pos = load_indices(layout.val_rows).indices;

  // Rows of `features` are the pretraining rows; the bootstrap plan indexes them.
  const auto features = apply_stats(dataset.features.gather_rows(pretrain), stats);
  std::vector<std::uint8_t> labels;
  labels.reserve(pretrain.size());
  for (auto r : pretrain) labels.push_back(dataset.labels[r]);
  auto to_rows = [&](const std::vector<std::size_t>& positions) {
    std::vector<std::size_t> rows;
    rows.reserve(positions.size());
    for (auto p : positions) {
      if (p >= plan.size() || plan[p] >= pretrain.size()) {
        throw Error(ErrorKind::kShapeMismatch, "split index outside the bootstrap plan");
      }
      rows.push_back(plan[p]);
    }
    return rows;
  };
  const RowSet train_set{&features, labels, to_rows(train_pos)};
  const RowSet val_set{&features, labels, to_rows(val_pos)};

  auto tc = cfg.train;
  const auto per_arch = TrainConfig::for_architecture(arch);
  tc.optimizer = per_arch.optimizer;
  tc.momentum = per_arch.momentum;
  tc.seed = stage_seed(cfg.seed, "shuffle." + cfg.arch);
  if (tc.total_steps == 0) {
    const auto batch = std::min(tc.batch_size, train_set.size());
    tc.total_steps = cfg.max_epochs * ((train_set.size() + batch - 1) / batch);
  }
  tc.checkpoint_dir = layout.checkpoints(cfg.arch);
  fs::create_directories(tc.checkpoint_dir);

  auto model = init_model(arch, features.cols(), stage_seed(cfg.seed, "init." + cfg.arch), cfg.init);
  auto result = train(std::move(model), train_set, val_set, tc);
  save_model(layout.model(cfg.arch), result.model);
  io::write_text(layout.train_log(cfg.arch), result.log.to_csv());
  log.finish({layout.model(cfg.arch), layout.train_log(cfg.arch)},
             {{"steps", result.steps_run},
              {"best_step", result.best_step},
              {"best_val_balanced_accuracy", result.best_metric},
              {"stop", std::string(to_string(result.stop))}});
  return result;
}

EvalReport cmd_eval(const PipelineConfig& cfg) {
  const RunLayout layout(cfg.out_dir);
  auto inputs = dataset_files(layout.dataset);
  inputs.insert(inputs.end(), {layout.stats, layout.test_rows, layout.model(cfg.arch)});
  StageLog log(layout, fmt::format("eval.{}", cfg.arch), inputs);
  Architecture::by_name(cfg.arch);
  const auto dataset = load_dataset(layout.dataset);
  const auto stats = load_stats(layout.stats);
  const auto test_rows = load_indices(layout.test_rows).indices;
  fs::create_directories(layout.dir / "roc");
  auto report = evaluate_arch(cfg, layout, cfg.arch, dataset, stats, test_rows);
  log.finish({layout.report(cfg.arch), layout.report_csv(cfg.arch)});
  return report;
}

std::string cmd_repro(const PipelineConfig& cfg) {
  const RunLayout layout(cfg.out_dir);
  cmd_synth(cfg);
  cmd_encode(cfg);
  cmd_split(cfg);
  std::vector<EvalReport> reports;
  for (const char* arch : {"nn2", "nn4", "nn8"}) {
    auto stage_cfg = cfg;
    stage_cfg.arch = arch;
    cmd_train(stage_cfg);
    reports.push_back(cmd_eval(stage_cfg));
  }
  const auto text = format_table(reports);
  io::write_text(layout.table, text);
  io::write_text(layout.table_csv, report_csv(reports));
  return text;
}

}  // namespace visitrisk
