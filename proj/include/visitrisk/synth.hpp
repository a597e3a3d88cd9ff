#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <vector>

#include "visitrisk/schema.hpp"

namespace visitrisk {

/// Parameters of the synthetic cohort.
///
/// Visit counts follow a two-component geometric mixture: a fraction of
/// frequent visitors with mean frequent_mean_visits, the rest with the mean
/// that makes the overall mean equal mean_visits. Each patient carries every
/// chronic code independently with its carrier rate, and a carried code shows
/// up at each visit with probability `recurrence`. Every visit also gets
/// 1 + Binomial(6, 0.2) acute codes drawn from the weighted acute table.
///
/// The outcome is drawn once per patient from
///   logit P(y = 1) = base_log_odds + sum of risk_boosts over every code seen
///                    in any of the patient's visits + visit_slope * (visits - 1)
/// and copied onto all of that patient's rows.
struct SynthConfig {
  std::size_t n_patients = 50000;
  double mean_visits = 1.5;
  double frequent_fraction = 0.1;
  double frequent_mean_visits = 4.0;
  std::map<int, double> carrier_rates;
  double recurrence = 0.5;
  std::vector<std::pair<int, double>> acute_weights;
  double base_log_odds = -4.13;
  std::map<int, double> risk_boosts;
  double visit_slope = 0.2;
  std::uint64_t seed = 1;

  /// Throws InvalidConfig.
  void validate() const;

  /// Carrier rates, acute table and fixed boosts; base and subgroup boosts
  /// are left for calibrate().
  static SynthConfig uncalibrated(std::size_t n_patients = 50000, std::uint64_t seed = 1);
};

/// Deterministic in cfg; patient i draws from its own stream, so a patient's
/// records do not depend on any other patient.
std::vector<VisitRecord> generate(const SynthConfig& cfg);

/// Writes the visit file and the categorical spec file.
void write_cohort(const std::filesystem::path& visits_path, const std::filesystem::path& spec_path,
                  const std::vector<VisitRecord>& records);

/// Row-level prevalence target for the rows whose cumulative diagnoses include
/// any of `codes`. Empty codes means every row.
struct PrevalenceTarget {
  std::vector<int> codes;
  double prevalence = 0.0;
};

struct CalibrationTargets {
  std::optional<double> overall;
  std::vector<PrevalenceTarget> groups;
  double tolerance = 1e-3;
};

/// Overall 1.58%; 662: 14.7%, 651/657: 7.44%, 659: 16.2%, 660/661: 5.72%.
CalibrationTargets reference_targets();

/// Expected row prevalence of the rows selected by `codes` (all rows when
/// empty), averaging outcome probabilities over the cohort structure that
/// generate(cfg) would produce.
double expected_prevalence(const SynthConfig& cfg, const std::vector<int>& codes);

/// Solves for base_log_odds and one shared non-negative boost per target
/// group by bisection (50 rounds each) on the expected prevalence of the
/// template's own cohort structure, sweeping the unknowns in turn until every
/// target is within tolerance. Throws Unachievable naming the first target
/// that cannot be met.
SynthConfig calibrate(const CalibrationTargets& targets, SynthConfig tmpl);

/// calibrate(reference_targets(), SynthConfig::uncalibrated(n_patients, seed)).
SynthConfig default_config(std::size_t n_patients = 50000, std::uint64_t seed = 1);

}  // namespace visitrisk
