#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "visitrisk/error.hpp"
#include "visitrisk/schema.hpp"
#include "visitrisk/synth.hpp"

using namespace visitrisk;

namespace {

double logit(double p) { return std::log(p / (1.0 - p)); }

double row_prevalence(const std::vector<VisitRecord>& recs, const std::vector<int>& codes) {
  std::size_t rows = 0;
  std::size_t pos = 0;
  std::string patient;
  std::set<int> history;
  for (const auto& r : recs) {
    if (r.patient_id != patient) {
      patient = r.patient_id;
      history.clear();
    }
    history.insert(r.ccs_codes.begin(), r.ccs_codes.end());
    bool hit = codes.empty();
    for (int c : codes) hit = hit || history.contains(c);
    if (hit) {
      ++rows;
      pos += r.outcome;
    }
  }
  return static_cast<double>(pos) / static_cast<double>(rows);
}

SynthConfig flat_config(std::size_t patients, double prevalence) {
  auto cfg = SynthConfig::uncalibrated(patients, 5);
  for (auto& [code, boost] : cfg.risk_boosts) boost = 0.0;
  cfg.visit_slope = 0.0;
  cfg.base_log_odds = logit(prevalence);
  return cfg;
}

}  // namespace

TEST_CASE("zero patients give an empty cohort") {
  auto cfg = SynthConfig::uncalibrated(0, 1);
  CHECK(generate(cfg).empty());
}

TEST_CASE("generated cohorts are valid and reproducible") {
  auto cfg = SynthConfig::uncalibrated(3000, 21);
  const auto a = generate(cfg);
  const auto spec = CategoricalSpec::standard();
  const auto summary = validate_cohort(a, spec);
  CHECK(summary.patients == 3000);
  CHECK(summary.visits == a.size());
  CHECK(static_cast<double>(a.size()) / 3000.0 == doctest::Approx(1.5).epsilon(0.08));
  CHECK(serialize_visits(generate(cfg), spec) == serialize_visits(a, spec));
  cfg.seed = 22;
  CHECK(serialize_visits(generate(cfg), spec) != serialize_visits(a, spec));

  // Outcome is constant within a patient.
  std::map<std::string, std::uint8_t> outcome;
  for (const auto& r : a) {
    const auto [it, fresh] = outcome.emplace(r.patient_id, r.outcome);
    CHECK(it->second == r.outcome);
  }
}

TEST_CASE("a patient's visits do not depend on the cohort size") {
  const auto small = generate(SynthConfig::uncalibrated(50, 3));
  const auto large = generate(SynthConfig::uncalibrated(120, 3));
  REQUIRE(large.size() > small.size());
  for (std::size_t i = 0; i < small.size(); ++i) {
    auto a = small[i];
    auto b = large[i];
    a.outcome = b.outcome = 0;
    CHECK(a == b);
  }
}

TEST_CASE("no planted signal: prevalence follows the base log-odds") {
  const auto recs = generate(flat_config(100000, 0.0158));
  CHECK(std::abs(row_prevalence(recs, {}) - 0.0158) < 0.003);
}

TEST_CASE("calibrating only the overall rate recovers the closed form") {
  CalibrationTargets t;
  t.overall = 0.0158;
  t.tolerance = 1e-6;
  auto tmpl = flat_config(5000, 0.3);
  const auto cfg = calibrate(t, tmpl);
  CHECK(cfg.base_log_odds == doctest::Approx(logit(0.0158)).epsilon(1e-4));
  for (const auto& [code, boost] : cfg.risk_boosts) CHECK(boost == 0.0);
}

TEST_CASE("contradictory or impossible targets are unachievable") {
  CalibrationTargets t;
  t.overall = 0.10;
  t.groups = {{{662}, 0.01}};
  try {
    calibrate(t, SynthConfig::uncalibrated(5000, 1));
    FAIL("expected Unachievable");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kUnachievable);
    CHECK(std::string(e.what()).find("662") != std::string::npos);
  }
  CalibrationTargets bad;
  bad.overall = 1.5;
  CHECK_THROWS_AS(calibrate(bad, SynthConfig::uncalibrated(100, 1)), Error);
}

TEST_CASE("invalid configurations are rejected") {
  auto cfg = SynthConfig::uncalibrated(10, 1);
  SUBCASE("carrier rate") { cfg.carrier_rates[662] = 1.5; }
  SUBCASE("boost") { cfg.risk_boosts[662] = std::nan(""); }
  SUBCASE("code outside the codebook") { cfg.carrier_rates[300] = 0.1; }
  SUBCASE("visit mean") { cfg.mean_visits = 0.5; }
  SUBCASE("empty acute table") { cfg.acute_weights.clear(); }
  try {
    generate(cfg);
    FAIL("expected InvalidConfig");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kInvalidConfig);
  }
}

TEST_CASE("raising a boost raises its subgroup prevalence") {
  auto low = SynthConfig::uncalibrated(30000, 4);
  low.base_log_odds = -6.0;
  auto high = low;
  low.risk_boosts[662] = 1.0;
  high.risk_boosts[662] = 3.0;
  CHECK(expected_prevalence(high, {662}) > expected_prevalence(low, {662}));

  const double p_low = row_prevalence(generate(low), {662});
  const double p_high = row_prevalence(generate(high), {662});
  const auto rows = 30000 * 1.5 * 0.03;  // rough subgroup size, only sets the band
  const double sigma = std::sqrt(p_low * (1 - p_low) / rows + p_high * (1 - p_high) / rows);
  CHECK(p_high >= p_low - 3 * sigma);
}

TEST_CASE("calibrated cohort meets the reference prevalences") {
  const auto cfg = default_config(20000, 3);
  const auto targets = reference_targets();
  CHECK(std::abs(expected_prevalence(cfg, {}) - *targets.overall) <= targets.tolerance);
  for (const auto& g : targets.groups) {
    CHECK(std::abs(expected_prevalence(cfg, g.codes) - g.prevalence) <= targets.tolerance);
  }
  const auto recs = generate(cfg);
  CHECK(std::abs(row_prevalence(recs, {}) - 0.0158) < 0.003);
  for (const auto& g : targets.groups) CHECK(std::abs(row_prevalence(recs, g.codes) - g.prevalence) < 0.02);
  CHECK(cfg.risk_boosts.at(651) == cfg.risk_boosts.at(657));
  CHECK(cfg.risk_boosts.at(662) >= 0.0);
}
