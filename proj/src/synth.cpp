#include "visitrisk/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <fmt/core.h>

#include "visitrisk/error.hpp"
#include "visitrisk/rng.hpp"

namespace visitrisk {

namespace {

constexpr std::uint32_t kMaxVisits = 60;
constexpr int kFirstYear = 2006;
constexpr int kLastYear = 2009;
constexpr int kAcuteExtraTrials = 6;
constexpr double kAcuteExtraRate = 0.2;
constexpr int kBisectionRounds = 50;
constexpr int kMaxSweeps = 60;
constexpr double kBoostLow = 0.0;
constexpr double kBoostHigh = 15.0;
constexpr double kBaseLow = -20.0;
constexpr double kBaseHigh = 5.0;

double logistic(double z) { return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

double non_frequent_mean(const SynthConfig& cfg) {
  return (cfg.mean_visits - cfg.frequent_fraction * cfg.frequent_mean_visits) / (1.0 - cfg.frequent_fraction);
}

class AcuteTable {
 public:
  explicit AcuteTable(const std::vector<std::pair<int, double>>& weights) {
    double total = 0.0;
    for (const auto& [code, w] : weights) {
      total += w;
      codes_.push_back(code);
      cumulative_.push_back(total);
    }
    for (auto& c : cumulative_) c /= total;
  }

  int draw(Rng& rng) const {
    const double u = rng.uniform();
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    const auto k = std::min<std::size_t>(static_cast<std::size_t>(it - cumulative_.begin()), codes_.size() - 1);
    return codes_[k];
  }

 private:
  std::vector<int> codes_;
  std::vector<double> cumulative_;
};

std::uint32_t draw_visit_count(Rng& rng, double mean) {
  const double stop = 1.0 / mean;
  std::uint32_t k = 1;
  while (k < kMaxVisits && !rng.bernoulli(stop)) ++k;
  return k;
}

// Records of patient i with outcome 0. Everything the patient needs comes
// from the stream derive_seed(seed, i).
std::vector<VisitRecord> simulate_patient(const SynthConfig& cfg, const CategoricalSpec& spec,
                                          const AcuteTable& acute, std::size_t i) {
  Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(i)));
  const bool frequent = rng.bernoulli(cfg.frequent_fraction);
  const auto n_visits = draw_visit_count(rng, frequent ? cfg.frequent_mean_visits : non_frequent_mean(cfg));

  std::vector<int> carried;
  for (const auto& [code, rate] : cfg.carrier_rates) {
    if (rng.bernoulli(rate)) carried.push_back(code);
  }

  const int first_year = kFirstYear + static_cast<int>(rng.below(kLastYear - kFirstYear + 1));
  const int first_age = kMinAge + static_cast<int>(rng.below(static_cast<std::uint64_t>(kMaxAge - kMinAge + 1 - (kLastYear - first_year))));
  const auto zip = 90001 + static_cast<std::int64_t>(rng.below(6000));
  const auto county = 1 + static_cast<std::int64_t>(rng.below(58));
  const auto sex = static_cast<std::uint16_t>(rng.below(spec.cardinality(CategoricalField::kSex)));
  const auto race = static_cast<std::uint16_t>(rng.below(spec.cardinality(CategoricalField::kRace)));

  std::vector<VisitRecord> visits;
  visits.reserve(n_visits);
  int year = first_year;
  for (std::uint32_t k = 0; k < n_visits; ++k) {
    if (k > 0 && year < kLastYear && rng.bernoulli(0.3)) ++year;
    VisitRecord rec;
    rec.patient_id = fmt::format("P{:07d}", i);
    rec.visit_seq = k;
    rec.value(NumericField::kYear) = year;
    rec.value(NumericField::kAge) = first_age + (year - first_year);
    rec.value(NumericField::kZipCode) = zip;
    rec.value(NumericField::kPatientCounty) = county;
    rec.value(NumericField::kFacilityId) = 1 + static_cast<std::int64_t>(rng.below(450));
    rec.value(NumericField::kServiceYear) = year;
    rec.level(CategoricalField::kSex) = sex;
    rec.level(CategoricalField::kRace) = race;
    for (auto field : {CategoricalField::kInsurance, CategoricalField::kDisposition, CategoricalField::kUrban,
                       CategoricalField::kDispositionEd, CategoricalField::kFacilityCountyEd,
                       CategoricalField::kPayerEd}) {
      rec.level(field) = static_cast<std::uint16_t>(rng.below(spec.cardinality(field)));
    }

    for (int code : carried) {
      if (rng.bernoulli(cfg.recurrence)) rec.ccs_codes.push_back(code);
    }
    int n_acute = 1;
    for (int t = 0; t < kAcuteExtraTrials; ++t) n_acute += rng.bernoulli(kAcuteExtraRate) ? 1 : 0;
    for (int t = 0; t < n_acute; ++t) {
      const int code = acute.draw(rng);
      if (std::find(rec.ccs_codes.begin(), rec.ccs_codes.end(), code) == rec.ccs_codes.end()) {
        rec.ccs_codes.push_back(code);
      }
    }
    if (rec.ccs_codes.size() > kMaxCcsCodes) rec.ccs_codes.resize(kMaxCcsCodes);
    visits.push_back(std::move(rec));
  }
  return visits;
}

double outcome_logit(const SynthConfig& cfg, const std::set<int>& lifetime, std::size_t n_visits) {
  double z = cfg.base_log_odds + cfg.visit_slope * static_cast<double>(n_visits - 1);
  for (const auto& [code, boost] : cfg.risk_boosts) {
    if (lifetime.contains(code)) z += boost;
  }
  return z;
}

// Per-patient quantities the calibration needs. The outcome logit is
// base + fixed + sum_g counts[g] * boost_g, and rows[g] of the patient's rows
// fall in group g.
struct PatientSummary {
  double fixed = 0.0;
  std::uint32_t n_visits = 0;
  std::vector<std::uint8_t> counts;
  std::vector<std::uint32_t> rows;
};

struct CohortStructure {
  std::vector<PatientSummary> patients;
  std::size_t total_rows = 0;
  std::vector<std::size_t> group_rows;
};

CohortStructure summarize(const SynthConfig& cfg, const std::vector<std::vector<int>>& groups) {
  const auto spec = CategoricalSpec::standard();
  const AcuteTable acute(cfg.acute_weights);
  std::map<int, std::size_t> group_of;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (int code : groups[g]) group_of.emplace(code, g);
  }

  CohortStructure s;
  s.patients.reserve(cfg.n_patients);
  s.group_rows.assign(groups.size(), 0);
  for (std::size_t i = 0; i < cfg.n_patients; ++i) {
    const auto visits = simulate_patient(cfg, spec, acute, i);
    PatientSummary p;
    p.n_visits = static_cast<std::uint32_t>(visits.size());
    p.counts.assign(groups.size(), 0);
    p.rows.assign(groups.size(), 0);
    std::vector<std::uint32_t> first_seen(groups.size(), p.n_visits);
    std::set<int> lifetime;
    for (std::uint32_t k = 0; k < p.n_visits; ++k) {
      for (int code : visits[k].ccs_codes) {
        if (!lifetime.insert(code).second) continue;
        const auto it = group_of.find(code);
        if (it == group_of.end()) continue;
        ++p.counts[it->second];
        first_seen[it->second] = std::min(first_seen[it->second], k);
      }
    }
    p.fixed = cfg.visit_slope * static_cast<double>(p.n_visits - 1);
    for (const auto& [code, boost] : cfg.risk_boosts) {
      if (!group_of.contains(code) && lifetime.contains(code)) p.fixed += boost;
    }
    for (std::size_t g = 0; g < groups.size(); ++g) {
      p.rows[g] = p.n_visits - first_seen[g];
      s.group_rows[g] += p.rows[g];
    }
    s.total_rows += p.n_visits;
    s.patients.push_back(std::move(p));
  }
  return s;
}

// Expected row prevalence of group g (g == groups.size() for all rows).
double structure_prevalence(const CohortStructure& s, double base, const std::vector<double>& boosts, std::size_t g) {
  const bool all_rows = g == boosts.size();
  const std::size_t denom = all_rows ? s.total_rows : s.group_rows[g];
  if (denom == 0) return 0.0;
  double sum = 0.0;
  for (const auto& p : s.patients) {
    const std::uint32_t rows = all_rows ? p.n_visits : p.rows[g];
    if (rows == 0) continue;
    double z = base + p.fixed;
    for (std::size_t h = 0; h < boosts.size(); ++h) z += p.counts[h] * boosts[h];
    sum += rows * logistic(z);
  }
  return sum / static_cast<double>(denom);
}

template <typename F>
double bisect(F&& f, double lo, double hi, double target) {
  for (int round = 0; round < kBisectionRounds; ++round) {
    const double mid = 0.5 * (lo + hi);
    if (f(mid) < target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

std::string group_label(const std::vector<int>& codes) {
  if (codes.empty()) return "all";
  std::string out;
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (i) out += '/';
    out += std::to_string(codes[i]);
  }
  return out;
}

}  // namespace

void SynthConfig::validate() const {
  auto invalid = [](const std::string& what) { throw Error(ErrorKind::kInvalidConfig, what); };
  auto probability = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!(mean_visits >= 1.0)) invalid("mean_visits must be >= 1");
  if (!(frequent_fraction >= 0.0 && frequent_fraction < 1.0)) invalid("frequent_fraction must be in [0, 1)");
  if (!(frequent_mean_visits >= 1.0)) invalid("frequent_mean_visits must be >= 1");
  if (!(non_frequent_mean(*this) >= 1.0)) invalid("frequent visitors leave the others a mean below 1 visit");
  if (!probability(recurrence)) invalid("recurrence must be in [0, 1]");
  if (!std::isfinite(base_log_odds)) invalid("base_log_odds must be finite");
  if (!std::isfinite(visit_slope)) invalid("visit_slope must be finite");

  const auto spec = CategoricalSpec::standard();
  auto known = [&](int code) {
    if (!spec.ccs_slot(code)) invalid(fmt::format("CCS code {} is outside the codebook", code));
  };
  for (const auto& [code, rate] : carrier_rates) {
    known(code);
    if (!probability(rate)) invalid(fmt::format("carrier rate of {} is not a probability", code));
  }
  if (acute_weights.empty()) invalid("acute table is empty");
  for (const auto& [code, w] : acute_weights) {
    known(code);
    if (!(w > 0.0 && std::isfinite(w))) invalid(fmt::format("acute weight of {} must be positive", code));
  }
  for (const auto& [code, boost] : risk_boosts) {
    known(code);
    if (!std::isfinite(boost)) invalid(fmt::format("risk boost of {} is not finite", code));
  }
}

SynthConfig SynthConfig::uncalibrated(std::size_t n_patients, std::uint64_t seed) {
  SynthConfig cfg;
  cfg.n_patients = n_patients;
  cfg.seed = seed;
  cfg.carrier_rates = {{662, 0.03}, {651, 0.05}, {657, 0.04}, {659, 0.025}, {660, 0.03}, {661, 0.03},
                       {241, 0.02}, {242, 0.02}, {244, 0.02}, {663, 0.02}, {670, 0.02}};
  // Self-harm adjacent codes outside the reported subgroups carry a fixed,
  // strong boost.
  cfg.risk_boosts = {{241, 5.0}, {242, 5.0}, {244, 5.0}, {663, 5.0}, {670, 5.0},
                     {662, 0.0}, {651, 0.0}, {657, 0.0}, {659, 0.0}, {660, 0.0}, {661, 0.0}};
  // Zipf(1) over the general categories not used as chronic codes.
  for (int code = 1; code <= 264 && cfg.acute_weights.size() < 230; ++code) {
    if (cfg.carrier_rates.contains(code)) continue;
    cfg.acute_weights.emplace_back(code, 1.0 / static_cast<double>(cfg.acute_weights.size() + 1));
  }
  return cfg;
}

std::vector<VisitRecord> generate(const SynthConfig& cfg) {
  cfg.validate();
  const auto spec = CategoricalSpec::standard();
  const AcuteTable acute(cfg.acute_weights);

  // Boosted codes in a fixed bit order; patients are stratified by which of
  // them they carry.
  std::vector<int> signature_codes;
  for (const auto& [code, boost] : cfg.risk_boosts) {
    if (signature_codes.size() < 64) signature_codes.push_back(code);
  }

  std::vector<VisitRecord> records;
  std::vector<std::size_t> first_row(cfg.n_patients + 1, 0);
  std::vector<double> prob(cfg.n_patients);
  std::vector<std::uint64_t> signature(cfg.n_patients, 0);
  for (std::size_t i = 0; i < cfg.n_patients; ++i) {
    auto visits = simulate_patient(cfg, spec, acute, i);
    std::set<int> lifetime;
    for (const auto& v : visits) lifetime.insert(v.ccs_codes.begin(), v.ccs_codes.end());
    prob[i] = logistic(outcome_logit(cfg, lifetime, visits.size()));
    for (std::size_t b = 0; b < signature_codes.size(); ++b) {
      if (lifetime.contains(signature_codes[b])) signature[i] |= std::uint64_t{1} << b;
    }
    first_row[i] = records.size();
    for (auto& v : visits) records.push_back(std::move(v));
  }
  first_row[cfg.n_patients] = records.size();

  // Systematic sampling: walk the patients in (signature, -p, index) order and
  // mark a positive each time the running sum of p crosses u + k. Each patient
  // is still positive with probability p, and every stratum receives within
  // one of its expected number of positives.
  std::vector<std::size_t> order(cfg.n_patients);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (signature[a] != signature[b]) return signature[a] < signature[b];
    if (prob[a] != prob[b]) return prob[a] > prob[b];
    return a < b;
  });
  Rng rng(derive_seed(cfg.seed, "outcome"));
  const double u = rng.uniform();
  double cumulative = 0.0;
  for (auto i : order) {
    const double before = std::floor(cumulative + u);
    cumulative += prob[i];
    if (std::floor(cumulative + u) > before) {
      for (auto r = first_row[i]; r < first_row[i + 1]; ++r) records[r].outcome = 1;
    }
  }
  return records;
}

void write_cohort(const std::filesystem::path& visits_path, const std::filesystem::path& spec_path,
                  const std::vector<VisitRecord>& records) {
  const auto spec = CategoricalSpec::standard();
  save_visits(visits_path, records, spec);
  spec.save(spec_path);
}

CalibrationTargets reference_targets() {
  CalibrationTargets t;
  t.overall = 0.0158;
  t.groups = {{{662}, 0.147}, {{651, 657}, 0.0744}, {{659}, 0.162}, {{660, 661}, 0.0572}};
  return t;
}

double expected_prevalence(const SynthConfig& cfg, const std::vector<int>& codes) {
  cfg.validate();
  const auto spec = CategoricalSpec::standard();
  const AcuteTable acute(cfg.acute_weights);
  std::size_t rows = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < cfg.n_patients; ++i) {
    const auto visits = simulate_patient(cfg, spec, acute, i);
    std::set<int> lifetime;
    for (const auto& v : visits) lifetime.insert(v.ccs_codes.begin(), v.ccs_codes.end());
    const double p = logistic(outcome_logit(cfg, lifetime, visits.size()));
    bool selected = codes.empty();
    for (const auto& v : visits) {
      for (int code : codes) {
        selected = selected || std::find(v.ccs_codes.begin(), v.ccs_codes.end(), code) != v.ccs_codes.end();
      }
      if (selected) {
        ++rows;
        sum += p;
      }
    }
  }
  return rows ? sum / static_cast<double>(rows) : 0.0;
}

SynthConfig calibrate(const CalibrationTargets& targets, SynthConfig tmpl) {
  tmpl.validate();
  std::vector<std::vector<int>> groups;
  std::set<int> claimed;
  auto check_target = [](const std::string& label, double p) {
    if (!(p > 0.0 && p < 1.0)) {
      throw Error(ErrorKind::kUnachievable, fmt::format("target {} = {} is not a prevalence in (0, 1)", label, p));
    }
  };
  if (targets.overall) check_target("all", *targets.overall);
  for (const auto& t : targets.groups) {
    const auto label = group_label(t.codes);
    if (t.codes.empty()) throw Error(ErrorKind::kInvalidConfig, "group target without codes");
    check_target(label, t.prevalence);
    for (int code : t.codes) {
      if (!claimed.insert(code).second) {
        throw Error(ErrorKind::kInvalidConfig, fmt::format("code {} appears in two target groups", code));
      }
    }
    groups.push_back(t.codes);
  }

  const auto s = summarize(tmpl, groups);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (s.group_rows[g] == 0) {
      throw Error(ErrorKind::kUnachievable, fmt::format("target {}: no rows carry these codes", group_label(groups[g])));
    }
  }

  double base = tmpl.base_log_odds;
  std::vector<double> boosts(groups.size(), 0.0);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto it = tmpl.risk_boosts.find(groups[g].front());
    if (it != tmpl.risk_boosts.end()) boosts[g] = std::clamp(it->second, kBoostLow, kBoostHigh);
  }

  // Worst target miss, as (group index or groups.size() for overall, error).
  auto worst = [&]() {
    std::pair<std::size_t, double> w{0, 0.0};
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const double err = std::abs(structure_prevalence(s, base, boosts, g) - targets.groups[g].prevalence);
      if (err > w.second) w = {g, err};
    }
    if (targets.overall) {
      const double err = std::abs(structure_prevalence(s, base, boosts, groups.size()) - *targets.overall);
      if (err > w.second) w = {groups.size(), err};
    }
    return w;
  };

  for (int sweep = 0; sweep < kMaxSweeps && worst().second > targets.tolerance; ++sweep) {
    for (std::size_t g = 0; g < groups.size(); ++g) {
      boosts[g] = bisect(
          [&](double x) {
            auto b = boosts;
            b[g] = x;
            return structure_prevalence(s, base, b, g);
          },
          kBoostLow, kBoostHigh, targets.groups[g].prevalence);
    }
    if (targets.overall) {
      base = bisect([&](double x) { return structure_prevalence(s, x, boosts, groups.size()); }, kBaseLow, kBaseHigh,
                    *targets.overall);
    }
  }

  const auto [index, err] = worst();
  if (err > targets.tolerance) {
    const bool overall = index == groups.size();
    const auto label = overall ? std::string("all") : group_label(groups[index]);
    const double target = overall ? *targets.overall : targets.groups[index].prevalence;
    const double reached = structure_prevalence(s, base, boosts, index);
    throw Error(ErrorKind::kUnachievable,
                fmt::format("target {} = {:.4f} unreachable (closest {:.4f} with non-negative boosts)", label, target,
                            reached));
  }

  tmpl.base_log_odds = base;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (int code : groups[g]) tmpl.risk_boosts[code] = boosts[g];
  }
  return tmpl;
}

SynthConfig default_config(std::size_t n_patients, std::uint64_t seed) {
  return calibrate(reference_targets(), SynthConfig::uncalibrated(n_patients, seed));
}

}  // namespace visitrisk
