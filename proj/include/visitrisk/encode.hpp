#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "visitrisk/matrix.hpp"
#include "visitrisk/schema.hpp"

namespace visitrisk {

/// Per-patient diagnosis counts, one slot per codebook entry.
struct DiagnosisVector {
  std::vector<std::uint32_t> counts;

  DiagnosisVector() = default;
  explicit DiagnosisVector(std::size_t width) : counts(width, 0) {}

  bool operator==(const DiagnosisVector&) const = default;
};

/// Column layout of an encoded visit row:
///   [6 numeric fields | one-hot blocks | cumulative diagnosis block | visit count]
struct FeatureLayout {
  std::size_t numeric_offset = 0;
  std::size_t one_hot_offset = 0;
  std::size_t diagnosis_offset = 0;
  std::size_t visit_count_column = 0;
  std::size_t width = 0;

  static FeatureLayout for_spec(const CategoricalSpec& spec);
};

std::vector<std::string> feature_column_names(const CategoricalSpec& spec);

struct EncodedDataset {
  Matrix features;  // rows = visits in input order, cols = raw width
  std::vector<std::uint8_t> labels;
  std::vector<std::string> patient_ids;
  std::vector<std::uint32_t> visit_seqs;
  std::vector<std::uint32_t> visit_counts;
  std::vector<std::string> column_names;
  std::vector<int> ccs_codes;  // codebook, slot order
  FeatureLayout layout;

  std::size_t rows() const noexcept { return features.rows(); }
  std::size_t raw_width() const noexcept { return features.cols(); }

  /// Cumulative diagnosis counts of one row (pre-normalization).
  std::span<const double> diagnosis_block(std::size_t row) const {
    return features.row(row).subspan(layout.diagnosis_offset, ccs_codes.size());
  }
};

struct EncodedVisit {
  std::vector<double> row;
  DiagnosisVector history;  // cumulative counts including this visit
};

/// Encodes one visit given the cumulative diagnosis counts of the patient's
/// strictly earlier visits. A code repeated within the visit counts once.
EncodedVisit encode_visit(const VisitRecord& record, const DiagnosisVector& history, std::uint32_t prior_visit_count,
                          const CategoricalSpec& spec);

/// Encodes every record, threading each patient's history in visit_seq order
/// regardless of how patients are interleaved in the input. Output rows keep
/// the input order.
EncodedDataset encode_cohort(std::span<const VisitRecord> records, const CategoricalSpec& spec);

/// Column statistics learned from training rows only.
struct FeatureStats {
  std::vector<std::string> column_names;
  std::vector<double> means;
  std::vector<double> variances;  // population variance, divisor N
  std::vector<std::uint8_t> retained;

  std::size_t width() const noexcept { return means.size(); }
  std::size_t retained_count() const;
  std::vector<std::string> retained_names() const;

  bool operator==(const FeatureStats&) const = default;
};

/// Means and population variances per column, each column summed sequentially
/// in row order. A column whose values are all identical gets variance exactly
/// 0 and is dropped.
FeatureStats fit_stats(const Matrix& features, std::span<const std::string> column_names = {});
/// Same, restricted to a subset of rows (e.g. the pretraining split).
FeatureStats fit_stats(const Matrix& features, std::span<const std::size_t> rows,
                       std::span<const std::string> column_names = {});

/// Keeps the retained columns and standardizes them with the fitted stats.
Matrix apply_stats(const Matrix& features, const FeatureStats& stats);

// Persistence. A dataset is three files sharing a prefix:
//   <prefix>.hdr       text header (magic, rows, raw width, layout, column names)
//   <prefix>.bin       row-major little-endian float64 block
//   <prefix>.meta.csv  patient_id,visit_seq,visit_count,label per row
void save_dataset(const std::filesystem::path& prefix, const EncodedDataset& dataset);
EncodedDataset load_dataset(const std::filesystem::path& prefix);

/// CSV with columns: column,mean,variance,retained
void save_stats(const std::filesystem::path& path, const FeatureStats& stats);
FeatureStats load_stats(const std::filesystem::path& path);

}  // namespace visitrisk
