#include "visitrisk/schema.hpp"

#include <algorithm>
#include <map>
#include <unordered_set>

#include <fmt/core.h>

#include "visitrisk/error.hpp"
#include "visitrisk/io.hpp"

namespace visitrisk {

namespace {

std::vector<std::string> numbered_levels(std::string_view prefix, std::size_t count) {
  std::vector<std::string> out;
  out.reserve(count);
  for (std::size_t i = 1; i <= count; ++i) out.push_back(fmt::format("{}{:02d}", prefix, i));
  return out;
}

// Column positions in the visit file.
constexpr std::size_t kColPatient = 0;
constexpr std::size_t kColSeq = 1;
constexpr std::size_t kColNumeric = 2;
constexpr std::size_t kColCategorical = kColNumeric + kNumNumericFields;
constexpr std::size_t kColCcs = kColCategorical + kNumCategoricalFields;
constexpr std::size_t kColOutcome = kColCcs + kMaxCcsCodes;
constexpr std::size_t kNumColumns = kColOutcome + 1;

[[noreturn]] void fail_row(ErrorKind kind, std::size_t line, std::string_view field, std::string_view detail) {
  throw Error(kind, fmt::format("line {}, field '{}': {}", line, field, detail));
}

}  // namespace

CategoricalSpec::CategoricalSpec(Levels levels, std::vector<int> ccs_codes)
    : levels_(std::move(levels)), ccs_codes_(std::move(ccs_codes)) {
  std::size_t offset = 0;
  for (std::size_t f = 0; f < kNumCategoricalFields; ++f) {
    const auto& field_levels = levels_[f];
    if (field_levels.size() != kDeclaredCardinalities[f]) {
      throw Error(ErrorKind::kSpecError,
                  fmt::format("field '{}' has {} levels, expected {}", kCategoricalFieldNames[f],
                              field_levels.size(), kDeclaredCardinalities[f]));
    }
    for (std::size_t l = 0; l < field_levels.size(); ++l) {
      if (field_levels[l].empty()) {
        throw Error(ErrorKind::kSpecError, fmt::format("field '{}' has an empty level", kCategoricalFieldNames[f]));
      }
      if (!lookup_[f].emplace(field_levels[l], static_cast<std::uint16_t>(l)).second) {
        throw Error(ErrorKind::kSpecError, fmt::format("field '{}' repeats level '{}'", kCategoricalFieldNames[f],
                                                       field_levels[l]));
      }
    }
    offsets_[f] = offset;
    offset += field_levels.size();
  }
  one_hot_width_ = offset;

  if (ccs_codes_.size() != kCcsCategories) {
    throw Error(ErrorKind::kSpecError,
                fmt::format("CCS codebook has {} codes, expected {}", ccs_codes_.size(), kCcsCategories));
  }
  for (std::size_t slot = 0; slot < ccs_codes_.size(); ++slot) {
    if (ccs_codes_[slot] <= 0) {
      throw Error(ErrorKind::kSpecError, fmt::format("CCS code {} is not positive", ccs_codes_[slot]));
    }
    if (!ccs_slots_.emplace(ccs_codes_[slot], slot).second) {
      throw Error(ErrorKind::kSpecError, fmt::format("CCS code {} repeats in the codebook", ccs_codes_[slot]));
    }
  }
}

std::vector<int> CategoricalSpec::default_ccs_codebook() {
  std::vector<int> codes;
  codes.reserve(kCcsCategories);
  for (int code = 1; code <= 264; ++code) codes.push_back(code);
  for (int code = 650; code <= 670; ++code) codes.push_back(code);
  return codes;
}

CategoricalSpec CategoricalSpec::standard() {
  Levels levels;
  levels[0] = {"F", "M", "U", "O"};
  levels[1] = {"white", "black", "hispanic", "asian_pacific", "native_american", "other", "unknown"};
  levels[2] = {"private", "medicaid", "medicare", "self_pay", "other_government", "other"};
  levels[3] = {"routine", "transfer", "skilled_nursing", "left_ama", "other"};
  levels[4] = {"urban", "rural", "unknown"};
  levels[5] = numbered_levels("ed", 22);
  levels[6] = numbered_levels("county", 55);
  levels[7] = numbered_levels("payer", 20);
  return CategoricalSpec(std::move(levels), default_ccs_codebook());
}

CategoricalSpec CategoricalSpec::parse(std::string_view text) {
  Levels levels;
  std::array<bool, kNumCategoricalFields> seen{};
  std::vector<int> ccs = default_ccs_codebook();
  std::size_t line_no = 0;
  for (const auto& raw : io::split(text, '\n')) {
    ++line_no;
    const auto line = io::trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto colon = line.find(':');
    if (colon == std::string_view::npos) {
      throw Error(ErrorKind::kSpecError, fmt::format("line {}: expected 'field:levels'", line_no));
    }
    const auto name = io::trim(line.substr(0, colon));
    auto values = io::split(line.substr(colon + 1), ',');
    for (auto& v : values) v = std::string(io::trim(v));

    if (name == "ccs") {
      ccs.clear();
      for (const auto& v : values) {
        long long code = 0;
        if (!io::parse_int(v, code)) {
          throw Error(ErrorKind::kSpecError, fmt::format("line {}: bad CCS code '{}'", line_no, v));
        }
        ccs.push_back(static_cast<int>(code));
      }
      continue;
    }
    const auto it = std::find(kCategoricalFieldNames.begin(), kCategoricalFieldNames.end(), name);
    if (it == kCategoricalFieldNames.end()) {
      throw Error(ErrorKind::kSpecError, fmt::format("line {}: unknown field '{}'", line_no, name));
    }
    const auto f = static_cast<std::size_t>(it - kCategoricalFieldNames.begin());
    if (seen[f]) throw Error(ErrorKind::kSpecError, fmt::format("line {}: field '{}' repeated", line_no, name));
    seen[f] = true;
    levels[f] = std::move(values);
  }
  for (std::size_t f = 0; f < kNumCategoricalFields; ++f) {
    if (!seen[f]) {
      throw Error(ErrorKind::kSpecError, fmt::format("field '{}' missing from spec", kCategoricalFieldNames[f]));
    }
  }
  return CategoricalSpec(std::move(levels), std::move(ccs));
}

CategoricalSpec CategoricalSpec::load(const std::filesystem::path& path) { return parse(io::read_text(path)); }

std::string CategoricalSpec::serialize() const {
  std::string out;
  for (std::size_t f = 0; f < kNumCategoricalFields; ++f) {
    out += kCategoricalFieldNames[f];
    out += ':';
    for (std::size_t l = 0; l < levels_[f].size(); ++l) {
      if (l) out += ',';
      out += levels_[f][l];
    }
    out += '\n';
  }
  out += "ccs:";
  for (std::size_t i = 0; i < ccs_codes_.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(ccs_codes_[i]);
  }
  out += '\n';
  return out;
}

void CategoricalSpec::save(const std::filesystem::path& path) const { io::write_text(path, serialize()); }

std::optional<std::uint16_t> CategoricalSpec::level_index(CategoricalField field, std::string_view label) const {
  const auto& table = lookup_[index(field)];
  const auto it = table.find(std::string(label));
  if (it == table.end()) return std::nullopt;
  return it->second;
}

std::optional<std::size_t> CategoricalSpec::ccs_slot(int code) const {
  const auto it = ccs_slots_.find(code);
  if (it == ccs_slots_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> visit_file_columns() {
  std::vector<std::string> columns = {"patient_id", "visit_seq"};
  for (auto name : kNumericFieldNames) columns.emplace_back(name);
  for (auto name : kCategoricalFieldNames) columns.emplace_back(name);
  for (std::size_t i = 1; i <= kMaxCcsCodes; ++i) columns.push_back(fmt::format("ccs_{}", i));
  columns.emplace_back("outcome");
  return columns;
}

std::vector<VisitRecord> parse_visits(std::string_view text, const CategoricalSpec& spec) {
  const auto columns = visit_file_columns();
  std::vector<VisitRecord> records;
  std::map<std::pair<std::string, std::uint32_t>, std::size_t> seen;

  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool header_done = false;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

    if (!header_done) {
      const auto header = io::split(line, ',');
      if (header != columns) {
        throw Error(ErrorKind::kBadHeader, fmt::format("line 1: header does not match the visit file columns"));
      }
      header_done = true;
      continue;
    }
    if (io::trim(line).empty()) continue;

    const auto fields = io::split(line, ',');
    if (fields.size() < kNumColumns) {
      fail_row(ErrorKind::kMissingField, line_no, columns[fields.size()],
               fmt::format("row has {} fields, expected {}", fields.size(), kNumColumns));
    }
    if (fields.size() > kNumColumns) {
      fail_row(ErrorKind::kMalformedField, line_no, "<row>",
               fmt::format("row has {} fields, expected {}", fields.size(), kNumColumns));
    }

    VisitRecord rec;
    rec.patient_id = std::string(io::trim(fields[kColPatient]));
    if (rec.patient_id.empty()) fail_row(ErrorKind::kMissingField, line_no, columns[kColPatient], "empty");

    long long value = 0;
    if (io::trim(fields[kColSeq]).empty()) fail_row(ErrorKind::kMissingField, line_no, columns[kColSeq], "empty");
    if (!io::parse_int(fields[kColSeq], value) || value < 0 || value > UINT32_MAX) {
      fail_row(ErrorKind::kMalformedField, line_no, columns[kColSeq], fmt::format("bad value '{}'", fields[kColSeq]));
    }
    rec.visit_seq = static_cast<std::uint32_t>(value);

    for (std::size_t i = 0; i < kNumNumericFields; ++i) {
      const auto& field = fields[kColNumeric + i];
      if (io::trim(field).empty()) fail_row(ErrorKind::kMissingField, line_no, columns[kColNumeric + i], "empty");
      if (!io::parse_int(field, value)) {
        fail_row(ErrorKind::kMalformedField, line_no, columns[kColNumeric + i], fmt::format("bad value '{}'", field));
      }
      rec.numeric[i] = value;
    }

    for (std::size_t i = 0; i < kNumCategoricalFields; ++i) {
      const auto label = io::trim(fields[kColCategorical + i]);
      if (label.empty()) fail_row(ErrorKind::kMissingField, line_no, columns[kColCategorical + i], "empty");
      const auto level = spec.level_index(static_cast<CategoricalField>(i), label);
      if (!level) {
        fail_row(ErrorKind::kUnknownCategoryLevel, line_no, columns[kColCategorical + i],
                 fmt::format("unknown level '{}'", label));
      }
      rec.categorical[i] = *level;
    }

    bool slot_gap = false;
    for (std::size_t i = 0; i < kMaxCcsCodes; ++i) {
      const auto& field = fields[kColCcs + i];
      if (io::trim(field).empty()) {
        if (i == 0) fail_row(ErrorKind::kMissingField, line_no, columns[kColCcs], "primary diagnosis is empty");
        slot_gap = true;
        continue;
      }
      if (slot_gap) {
        fail_row(ErrorKind::kMalformedField, line_no, columns[kColCcs + i], "code follows an empty slot");
      }
      if (!io::parse_int(field, value)) {
        fail_row(ErrorKind::kMalformedField, line_no, columns[kColCcs + i], fmt::format("bad value '{}'", field));
      }
      if (value < INT32_MIN || value > INT32_MAX || !spec.ccs_slot(static_cast<int>(value))) {
        fail_row(ErrorKind::kCcsOutOfRange, line_no, columns[kColCcs + i],
                 fmt::format("code {} is not a CCS category", value));
      }
      rec.ccs_codes.push_back(static_cast<int>(value));
    }

    const auto outcome = io::trim(fields[kColOutcome]);
    if (outcome.empty()) fail_row(ErrorKind::kMissingField, line_no, columns[kColOutcome], "empty");
    if (outcome != "0" && outcome != "1") {
      fail_row(ErrorKind::kMalformedField, line_no, columns[kColOutcome], fmt::format("bad value '{}'", outcome));
    }
    rec.outcome = outcome == "1" ? 1 : 0;

    const auto [it, inserted] = seen.emplace(std::make_pair(rec.patient_id, rec.visit_seq), line_no);
    if (!inserted) {
      fail_row(ErrorKind::kDuplicatePatientSeq, line_no, columns[kColSeq],
               fmt::format("patient '{}' visit {} already seen on line {}", rec.patient_id, rec.visit_seq,
                           it->second));
    }
    records.push_back(std::move(rec));
  }
  if (!header_done) throw Error(ErrorKind::kBadHeader, "file is empty");
  return records;
}

std::vector<VisitRecord> load_visits(const std::filesystem::path& path, const CategoricalSpec& spec) {
  return parse_visits(io::read_text(path), spec);
}

std::string serialize_visits(std::span<const VisitRecord> records, const CategoricalSpec& spec) {
  const auto columns = visit_file_columns();
  std::string out;
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (i) out += ',';
    out += columns[i];
  }
  out += '\n';
  for (const auto& rec : records) {
    out += rec.patient_id;
    out += ',';
    out += std::to_string(rec.visit_seq);
    for (auto v : rec.numeric) {
      out += ',';
      out += std::to_string(v);
    }
    for (std::size_t f = 0; f < kNumCategoricalFields; ++f) {
      out += ',';
      out += spec.level_label(static_cast<CategoricalField>(f), rec.categorical[f]);
    }
    for (std::size_t i = 0; i < kMaxCcsCodes; ++i) {
      out += ',';
      if (i < rec.ccs_codes.size()) out += std::to_string(rec.ccs_codes[i]);
    }
    out += ',';
    out += rec.outcome ? '1' : '0';
    out += '\n';
  }
  return out;
}

void save_visits(const std::filesystem::path& path, std::span<const VisitRecord> records,
                 const CategoricalSpec& spec) {
  io::write_text(path, serialize_visits(records, spec));
}

CohortSummary validate_cohort(std::span<const VisitRecord> records, const CategoricalSpec& spec) {
  auto violation = [](std::size_t index, const VisitRecord& rec, std::string_view what) {
    throw Error(ErrorKind::kInvariantViolation,
                fmt::format("record {} (patient '{}', visit {}): {}", index, rec.patient_id, rec.visit_seq, what));
  };

  std::unordered_map<std::string, std::vector<std::uint32_t>> seqs;
  CohortSummary summary;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& rec = records[i];
    if (rec.ccs_codes.empty() || rec.ccs_codes.size() > kMaxCcsCodes) violation(i, rec, "needs 1-7 CCS codes");
    for (int code : rec.ccs_codes) {
      if (!spec.ccs_slot(code)) violation(i, rec, fmt::format("CCS code {} outside the codebook", code));
    }
    for (std::size_t f = 0; f < kNumCategoricalFields; ++f) {
      if (rec.categorical[f] >= spec.cardinality(static_cast<CategoricalField>(f))) {
        violation(i, rec, fmt::format("level index out of range for '{}'", kCategoricalFieldNames[f]));
      }
    }
    const auto age = rec.value(NumericField::kAge);
    if (age < kMinAge || age > kMaxAge) violation(i, rec, fmt::format("age {} outside [10, 19]", age));
    if (rec.outcome > 1) violation(i, rec, "outcome must be 0 or 1");
    seqs[rec.patient_id].push_back(rec.visit_seq);
    summary.positives += rec.outcome;
  }

  // Contiguity is checked after the pass so interleaved files are accepted.
  for (auto& [patient, list] : seqs) {
    std::sort(list.begin(), list.end());
    for (std::size_t k = 0; k < list.size(); ++k) {
      if (list[k] != k) {
        throw Error(ErrorKind::kInvariantViolation,
                    fmt::format("patient '{}': visit_seq values are not the contiguous run 0..{}", patient,
                                list.size() - 1));
      }
    }
  }

  summary.patients = seqs.size();
  summary.visits = records.size();
  if (!records.empty()) {
    summary.prevalence = static_cast<double>(summary.positives) / static_cast<double>(summary.visits);
  }
  return summary;
}

}  // namespace visitrisk
