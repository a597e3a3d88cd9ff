#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace visitrisk {

// Predictor columns of one visit, in the order they appear in the visit file.
enum class NumericField : std::size_t { kYear, kAge, kZipCode, kPatientCounty, kFacilityId, kServiceYear };
enum class CategoricalField : std::size_t {
  kSex,
  kRace,
  kInsurance,
  kDisposition,
  kUrban,
  kDispositionEd,
  kFacilityCountyEd,
  kPayerEd,
};

inline constexpr std::size_t kNumNumericFields = 6;
inline constexpr std::size_t kNumCategoricalFields = 8;
inline constexpr std::array<std::string_view, kNumNumericFields> kNumericFieldNames = {
    "year", "age", "zip_code", "patient_county", "facility_id", "service_year"};
inline constexpr std::array<std::string_view, kNumCategoricalFields> kCategoricalFieldNames = {
    "sex", "race", "insurance", "disposition", "urban", "disposition_ed", "facility_county_ed", "payer_ed"};
inline constexpr std::array<std::size_t, kNumCategoricalFields> kDeclaredCardinalities = {4, 7, 6, 5, 3, 22, 55, 20};

inline constexpr std::size_t kMaxCcsCodes = 7;
inline constexpr std::size_t kCcsCategories = 285;
inline constexpr int kMinAge = 10;
inline constexpr int kMaxAge = 19;

/// Level labels of every categorical field plus the CCS codebook.
///
/// The one-hot layout follows field order; each field's block starts at
/// offset(field) and has cardinality(field) columns. The CCS codebook maps a
/// diagnosis code to its slot in the 285-wide diagnosis vector. The default
/// codebook holds the general categories 1-264 followed by the mental-health
/// categories 650-670.
class CategoricalSpec {
 public:
  using Levels = std::array<std::vector<std::string>, kNumCategoricalFields>;

  CategoricalSpec(Levels levels, std::vector<int> ccs_codes);

  /// Placeholder labels with the declared cardinalities and the default codebook.
  static CategoricalSpec standard();
  static std::vector<int> default_ccs_codebook();

  /// Parses `field_name:level1,level2,...` lines. An optional `ccs:` line
  /// overrides the codebook. Blank lines and `#` comments are ignored.
  static CategoricalSpec parse(std::string_view text);
  static CategoricalSpec load(const std::filesystem::path& path);
  std::string serialize() const;
  void save(const std::filesystem::path& path) const;

  std::span<const std::string> levels(CategoricalField field) const { return levels_[index(field)]; }
  std::size_t cardinality(CategoricalField field) const { return levels_[index(field)].size(); }
  std::size_t offset(CategoricalField field) const { return offsets_[index(field)]; }
  std::size_t one_hot_width() const noexcept { return one_hot_width_; }

  std::optional<std::uint16_t> level_index(CategoricalField field, std::string_view label) const;
  const std::string& level_label(CategoricalField field, std::uint16_t level) const {
    return levels_[index(field)].at(level);
  }

  std::span<const int> ccs_codes() const noexcept { return ccs_codes_; }
  std::size_t ccs_width() const noexcept { return ccs_codes_.size(); }
  std::optional<std::size_t> ccs_slot(int code) const;

  bool operator==(const CategoricalSpec& other) const {
    return levels_ == other.levels_ && ccs_codes_ == other.ccs_codes_;
  }

 private:
  static constexpr std::size_t index(CategoricalField field) { return static_cast<std::size_t>(field); }

  Levels levels_;
  std::array<std::size_t, kNumCategoricalFields> offsets_{};
  std::size_t one_hot_width_ = 0;
  std::array<std::unordered_map<std::string, std::uint16_t>, kNumCategoricalFields> lookup_;
  std::vector<int> ccs_codes_;
  std::unordered_map<int, std::size_t> ccs_slots_;
};

/// One ED/hospital visit. Categorical values are stored as level indices into
/// the CategoricalSpec the record was parsed with.
struct VisitRecord {
  std::string patient_id;
  std::uint32_t visit_seq = 0;
  std::array<std::int64_t, kNumNumericFields> numeric{};
  std::array<std::uint16_t, kNumCategoricalFields> categorical{};
  std::vector<int> ccs_codes;  // first entry is the primary diagnosis
  std::uint8_t outcome = 0;

  std::int64_t value(NumericField field) const { return numeric[static_cast<std::size_t>(field)]; }
  std::int64_t& value(NumericField field) { return numeric[static_cast<std::size_t>(field)]; }
  std::uint16_t level(CategoricalField field) const { return categorical[static_cast<std::size_t>(field)]; }
  std::uint16_t& level(CategoricalField field) { return categorical[static_cast<std::size_t>(field)]; }

  bool operator==(const VisitRecord&) const = default;
};

/// Column names of the visit file, in order.
std::vector<std::string> visit_file_columns();

/// Parses a whole visit file. The first malformed row aborts the parse with an
/// Error naming the line and field.
std::vector<VisitRecord> parse_visits(std::string_view text, const CategoricalSpec& spec);
std::vector<VisitRecord> load_visits(const std::filesystem::path& path, const CategoricalSpec& spec);

std::string serialize_visits(std::span<const VisitRecord> records, const CategoricalSpec& spec);
void save_visits(const std::filesystem::path& path, std::span<const VisitRecord> records,
                 const CategoricalSpec& spec);

struct CohortSummary {
  std::size_t patients = 0;
  std::size_t visits = 0;
  std::size_t positives = 0;
  std::optional<double> prevalence;  // absent for an empty cohort
};

/// Checks the record invariants (code counts, codebook membership, level
/// ranges, age band, contiguous visit_seq runs) and counts the cohort.
CohortSummary validate_cohort(std::span<const VisitRecord> records, const CategoricalSpec& spec);

}  // namespace visitrisk
