#include "visitrisk/encode.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <unordered_map>

#include <fmt/core.h>

#include "visitrisk/error.hpp"
#include "visitrisk/io.hpp"

namespace visitrisk {

namespace {

constexpr std::string_view kDatasetMagic = "VRDS1";

void encode_into(const VisitRecord& record, DiagnosisVector& history, std::uint32_t prior_visit_count,
                 const CategoricalSpec& spec, const FeatureLayout& layout, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t i = 0; i < kNumNumericFields; ++i) {
    out[layout.numeric_offset + i] = static_cast<double>(record.numeric[i]);
  }
  for (std::size_t f = 0; f < kNumCategoricalFields; ++f) {
    const auto field = static_cast<CategoricalField>(f);
    if (record.categorical[f] >= spec.cardinality(field)) {
      throw Error(ErrorKind::kUnknownCategoryLevel,
                  fmt::format("patient '{}' visit {}: level index {} out of range for '{}'", record.patient_id,
                              record.visit_seq, record.categorical[f], kCategoricalFieldNames[f]));
    }
    out[layout.one_hot_offset + spec.offset(field) + record.categorical[f]] = 1.0;
  }

  // Per-visit set union of the code slots, then add to the running history.
  std::array<std::size_t, kMaxCcsCodes> slots{};
  std::size_t n_slots = 0;
  for (int code : record.ccs_codes) {
    const auto slot = spec.ccs_slot(code);
    if (!slot) {
      throw Error(ErrorKind::kCcsOutOfRange, fmt::format("patient '{}' visit {}: code {} not in the codebook",
                                                         record.patient_id, record.visit_seq, code));
    }
    if (std::find(slots.begin(), slots.begin() + n_slots, *slot) == slots.begin() + n_slots) {
      if (n_slots == kMaxCcsCodes) {
        throw Error(ErrorKind::kInvariantViolation,
                    fmt::format("patient '{}' visit {}: more than 7 codes", record.patient_id, record.visit_seq));
      }
      slots[n_slots++] = *slot;
    }
  }
  for (std::size_t i = 0; i < n_slots; ++i) ++history.counts[slots[i]];
  for (std::size_t s = 0; s < history.counts.size(); ++s) {
    out[layout.diagnosis_offset + s] = static_cast<double>(history.counts[s]);
  }
  out[layout.visit_count_column] = static_cast<double>(prior_visit_count) + 1.0;
}

}  // namespace

FeatureLayout FeatureLayout::for_spec(const CategoricalSpec& spec) {
  FeatureLayout layout;
  layout.numeric_offset = 0;
  layout.one_hot_offset = kNumNumericFields;
  layout.diagnosis_offset = layout.one_hot_offset + spec.one_hot_width();
  layout.visit_count_column = layout.diagnosis_offset + spec.ccs_width();
  layout.width = layout.visit_count_column + 1;
  return layout;
}

std::vector<std::string> feature_column_names(const CategoricalSpec& spec) {
  std::vector<std::string> names;
  for (auto name : kNumericFieldNames) names.emplace_back(name);
  for (std::size_t f = 0; f < kNumCategoricalFields; ++f) {
    for (const auto& level : spec.levels(static_cast<CategoricalField>(f))) {
      names.push_back(fmt::format("{}={}", kCategoricalFieldNames[f], level));
    }
  }
  for (int code : spec.ccs_codes()) names.push_back(fmt::format("ccs_{}", code));
  names.emplace_back("visit_count");
  return names;
}

EncodedVisit encode_visit(const VisitRecord& record, const DiagnosisVector& history, std::uint32_t prior_visit_count,
                          const CategoricalSpec& spec) {
  if (history.counts.size() != spec.ccs_width()) {
    throw Error(ErrorKind::kWidthMismatch, fmt::format("history has {} slots, codebook has {}",
                                                       history.counts.size(), spec.ccs_width()));
  }
  const auto layout = FeatureLayout::for_spec(spec);
  EncodedVisit result{std::vector<double>(layout.width), history};
  encode_into(record, result.history, prior_visit_count, spec, layout, result.row);
  return result;
}

EncodedDataset encode_cohort(std::span<const VisitRecord> records, const CategoricalSpec& spec) {
  EncodedDataset ds;
  ds.layout = FeatureLayout::for_spec(spec);
  ds.column_names = feature_column_names(spec);
  ds.ccs_codes.assign(spec.ccs_codes().begin(), spec.ccs_codes().end());
  ds.features = Matrix(records.size(), ds.layout.width);
  ds.labels.resize(records.size());
  ds.patient_ids.resize(records.size());
  ds.visit_seqs.resize(records.size());
  ds.visit_counts.resize(records.size());

  // Group rows by patient, in order of first appearance.
  std::unordered_map<std::string, std::size_t> patient_index;
  std::vector<std::vector<std::size_t>> patient_rows;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto [it, inserted] = patient_index.emplace(records[i].patient_id, patient_rows.size());
    if (inserted) patient_rows.emplace_back();
    patient_rows[it->second].push_back(i);
  }

  for (auto& rows : patient_rows) {
    std::sort(rows.begin(), rows.end(),
              [&](std::size_t a, std::size_t b) { return records[a].visit_seq < records[b].visit_seq; });
    DiagnosisVector history(spec.ccs_width());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const auto& rec = records[rows[k]];
      if (rec.visit_seq != k) {
        throw Error(ErrorKind::kInvariantViolation,
                    fmt::format("patient '{}': visit_seq {} breaks the run 0..{}", rec.patient_id, rec.visit_seq,
                                rows.size() - 1));
      }
      encode_into(rec, history, static_cast<std::uint32_t>(k), spec, ds.layout, ds.features.row(rows[k]));
      ds.labels[rows[k]] = rec.outcome;
      ds.patient_ids[rows[k]] = rec.patient_id;
      ds.visit_seqs[rows[k]] = rec.visit_seq;
      ds.visit_counts[rows[k]] = static_cast<std::uint32_t>(k + 1);
    }
  }
  return ds;
}

std::size_t FeatureStats::retained_count() const {
  return static_cast<std::size_t>(std::count(retained.begin(), retained.end(), std::uint8_t{1}));
}

std::vector<std::string> FeatureStats::retained_names() const {
  std::vector<std::string> names;
  for (std::size_t j = 0; j < retained.size(); ++j) {
    if (retained[j]) names.push_back(j < column_names.size() ? column_names[j] : fmt::format("col{}", j));
  }
  return names;
}

FeatureStats fit_stats(const Matrix& features, std::span<const std::size_t> rows,
                       std::span<const std::string> column_names) {
  if (rows.size() < 2) throw Error(ErrorKind::kTooFewRows, fmt::format("need at least 2 rows, got {}", rows.size()));
  if (!column_names.empty() && column_names.size() != features.cols()) {
    throw Error(ErrorKind::kWidthMismatch, "column name count differs from matrix width");
  }
  const std::size_t width = features.cols();
  const auto n = static_cast<double>(rows.size());
  FeatureStats stats;
  stats.column_names.assign(column_names.begin(), column_names.end());
  stats.means.assign(width, 0.0);
  stats.variances.assign(width, 0.0);
  stats.retained.assign(width, 0);

  // Row-order sums; the loop order is fixed so results are reproducible.
  std::vector<double> lo(width, std::numeric_limits<double>::infinity());
  std::vector<double> hi(width, -std::numeric_limits<double>::infinity());
  for (auto r : rows) {
    const auto row = features.row(r);
    for (std::size_t j = 0; j < width; ++j) {
      stats.means[j] += row[j];
      lo[j] = std::min(lo[j], row[j]);
      hi[j] = std::max(hi[j], row[j]);
    }
  }
  for (auto& m : stats.means) m /= n;
  for (auto r : rows) {
    const auto row = features.row(r);
    for (std::size_t j = 0; j < width; ++j) {
      const double d = row[j] - stats.means[j];
      stats.variances[j] += d * d;
    }
  }
  for (std::size_t j = 0; j < width; ++j) {
    if (lo[j] == hi[j]) {
      stats.variances[j] = 0.0;
      stats.means[j] = lo[j];
    } else {
      stats.variances[j] /= n;
      stats.retained[j] = stats.variances[j] > 0.0 ? 1 : 0;
    }
  }
  return stats;
}

FeatureStats fit_stats(const Matrix& features, std::span<const std::string> column_names) {
  std::vector<std::size_t> rows(features.rows());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return fit_stats(features, rows, column_names);
}

Matrix apply_stats(const Matrix& features, const FeatureStats& stats) {
  if (features.cols() != stats.width()) {
    throw Error(ErrorKind::kWidthMismatch,
                fmt::format("matrix has {} columns, stats describe {}", features.cols(), stats.width()));
  }
  std::vector<std::size_t> kept;
  std::vector<double> scale;
  for (std::size_t j = 0; j < stats.width(); ++j) {
    if (stats.retained[j]) {
      kept.push_back(j);
      scale.push_back(1.0 / std::sqrt(stats.variances[j]));
    }
  }
  Matrix out(features.rows(), kept.size());
  for (std::size_t r = 0; r < features.rows(); ++r) {
    const auto src = features.row(r);
    auto dst = out.row(r);
    for (std::size_t k = 0; k < kept.size(); ++k) dst[k] = (src[kept[k]] - stats.means[kept[k]]) * scale[k];
  }
  return out;
}

void save_dataset(const std::filesystem::path& prefix, const EncodedDataset& ds) {
  const auto base = prefix.string();
  std::string header = fmt::format("{}\nrows {}\nraw_width {}\ndiagnosis_offset {}\nvisit_count_column {}\nccs",
                                   kDatasetMagic, ds.rows(), ds.raw_width(), ds.layout.diagnosis_offset,
                                   ds.layout.visit_count_column);
  for (int code : ds.ccs_codes) header += fmt::format(" {}", code);
  header += "\ncolumns\n";
  for (const auto& name : ds.column_names) header += name + "\n";
  io::write_text(base + ".hdr", header);

  {
    std::ofstream out(base + ".bin", std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::kIo, "cannot write " + base + ".bin");
    io::write_f64_le(out, ds.features.values());
  }

  std::string meta = "patient_id,visit_seq,visit_count,label\n";
  for (std::size_t r = 0; r < ds.rows(); ++r) {
    meta += fmt::format("{},{},{},{}\n", ds.patient_ids[r], ds.visit_seqs[r], ds.visit_counts[r], ds.labels[r]);
  }
  io::write_text(base + ".meta.csv", meta);
}

EncodedDataset load_dataset(const std::filesystem::path& prefix) {
  const auto base = prefix.string();
  const auto header = io::read_text(base + ".hdr");
  const auto lines = io::split(header, '\n');
  auto corrupt = [&](std::string_view what) {
    throw Error(ErrorKind::kShapeCorruption, fmt::format("{}.hdr: {}", base, what));
  };
  if (lines.empty() || lines[0] != kDatasetMagic) throw Error(ErrorKind::kBadMagic, base + ".hdr: bad magic");
  if (lines.size() < 7) corrupt("truncated header");

  auto keyed = [&](std::size_t i, std::string_view key) {
    const auto parts = io::split(lines[i], ' ');
    long long v = 0;
    if (parts.size() != 2 || parts[0] != key || !io::parse_int(parts[1], v) || v < 0) {
      corrupt(fmt::format("expected '{} <n>'", key));
    }
    return static_cast<std::size_t>(v);
  };
  const auto rows = keyed(1, "rows");
  const auto width = keyed(2, "raw_width");

  EncodedDataset ds;
  ds.layout.numeric_offset = 0;
  ds.layout.one_hot_offset = kNumNumericFields;
  ds.layout.diagnosis_offset = keyed(3, "diagnosis_offset");
  ds.layout.visit_count_column = keyed(4, "visit_count_column");
  ds.layout.width = width;

  const auto ccs_parts = io::split(lines[5], ' ');
  if (ccs_parts.empty() || ccs_parts[0] != "ccs") corrupt("expected ccs line");
  for (std::size_t i = 1; i < ccs_parts.size(); ++i) {
    long long code = 0;
    if (!io::parse_int(ccs_parts[i], code)) corrupt("bad ccs code");
    ds.ccs_codes.push_back(static_cast<int>(code));
  }
  if (lines[6] != "columns") corrupt("expected columns line");
  for (std::size_t i = 7; i < lines.size(); ++i) {
    if (!lines[i].empty()) ds.column_names.push_back(lines[i]);
  }
  if (ds.column_names.size() != width) corrupt("column count differs from raw_width");
  if (ds.layout.diagnosis_offset + ds.ccs_codes.size() > width || ds.layout.visit_count_column >= width) {
    corrupt("layout exceeds raw_width");
  }

  ds.features = Matrix(rows, width);
  {
    std::ifstream in(base + ".bin", std::ios::binary);
    if (!in) throw Error(ErrorKind::kIo, "cannot open " + base + ".bin");
    if (!io::read_f64_le(in, ds.features.values())) corrupt("feature block shorter than rows x raw_width");
    if (in.peek() != std::char_traits<char>::eof()) corrupt("feature block longer than rows x raw_width");
  }

  const auto meta = io::split(io::read_text(base + ".meta.csv"), '\n');
  if (meta.empty() || meta[0] != "patient_id,visit_seq,visit_count,label") corrupt("bad meta header");
  ds.labels.reserve(rows);
  for (std::size_t i = 1; i < meta.size(); ++i) {
    if (meta[i].empty()) continue;
    const auto fields = io::split(meta[i], ',');
    long long seq = 0, count = 0, label = 0;
    if (fields.size() != 4 || !io::parse_int(fields[1], seq) || !io::parse_int(fields[2], count) ||
        !io::parse_int(fields[3], label)) {
      corrupt(fmt::format("bad meta row {}", i));
    }
    ds.patient_ids.push_back(fields[0]);
    ds.visit_seqs.push_back(static_cast<std::uint32_t>(seq));
    ds.visit_counts.push_back(static_cast<std::uint32_t>(count));
    ds.labels.push_back(static_cast<std::uint8_t>(label));
  }
  if (ds.labels.size() != rows) corrupt("meta row count differs from rows");
  return ds;
}

void save_stats(const std::filesystem::path& path, const FeatureStats& stats) {
  std::string out = "column,mean,variance,retained\n";
  for (std::size_t j = 0; j < stats.width(); ++j) {
    const auto name = j < stats.column_names.size() ? stats.column_names[j] : fmt::format("col{}", j);
    out += fmt::format("{},{},{},{}\n", name, io::format_double(stats.means[j]),
                       io::format_double(stats.variances[j]), static_cast<int>(stats.retained[j]));
  }
  io::write_text(path, out);
}

FeatureStats load_stats(const std::filesystem::path& path) {
  const auto lines = io::split(io::read_text(path), '\n');
  if (lines.empty() || io::trim(lines[0]) != "column,mean,variance,retained") {
    throw Error(ErrorKind::kBadHeader, path.string() + ": bad stats header");
  }
  FeatureStats stats;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (io::trim(lines[i]).empty()) continue;
    // Column names never contain ','.
    const auto fields = io::split(io::trim(lines[i]), ',');
    double mean = 0, var = 0;
    long long keep = 0;
    if (fields.size() != 4 || !io::parse_double(fields[1], mean) || !io::parse_double(fields[2], var) ||
        !io::parse_int(fields[3], keep) || (keep != 0 && keep != 1)) {
      throw Error(ErrorKind::kMalformedField, fmt::format("{}: bad stats row {}", path.string(), i + 1));
    }
    stats.column_names.push_back(fields[0]);
    stats.means.push_back(mean);
    stats.variances.push_back(var);
    stats.retained.push_back(static_cast<std::uint8_t>(keep));
  }
  return stats;
}

}  // namespace visitrisk
