#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "visitrisk/encode.hpp"
#include "visitrisk/matrix.hpp"
#include "visitrisk/mlp.hpp"

namespace visitrisk {

struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  std::size_t total() const noexcept { return tp + fp + tn + fn; }
  bool operator==(const ConfusionCounts&) const = default;
};

/// A ratio with a zero denominator is absent, never 0.
struct Metrics {
  std::optional<double> sensitivity;
  std::optional<double> specificity;
  std::optional<double> precision;
};

/// Predicts 1 iff prob >= threshold.
ConfusionCounts confusion(std::span<const double> probs, std::span<const std::uint8_t> labels, double threshold);
Metrics metrics(const ConfusionCounts& counts);

/// Mann-Whitney AUC from midranks: the fraction of positive/negative pairs
/// where the positive scores higher, ties counted one half. O(n log n).
double auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  bool operator==(const RocPoint&) const = default;
};
/// (FPR, TPR) at every distinct score threshold, from (0, 0) to (1, 1).
std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const std::uint8_t> labels);

/// Row predicate selecting the cohort a metric is reported on.
class SubgroupFilter {
 public:
  enum class Kind { kAll, kMinVisits, kCcsAny };

  static SubgroupFilter all();
  static SubgroupFilter min_visits(std::uint32_t n);
  /// Rows whose cumulative diagnosis counts include any of the codes.
  static SubgroupFilter ccs_any(std::vector<int> codes);
  /// "all", "v>=N", or CCS codes joined by '/' such as "651/657".
  static SubgroupFilter parse(std::string_view text);

  Kind kind() const noexcept { return kind_; }
  std::uint32_t visits() const noexcept { return min_visits_; }
  std::span<const int> codes() const noexcept { return codes_; }
  std::string label() const;

  /// One byte per dataset row.
  std::vector<std::uint8_t> mask(const EncodedDataset& dataset) const;

 private:
  Kind kind_ = Kind::kAll;
  std::uint32_t min_visits_ = 1;
  std::vector<int> codes_;
};

/// all, v>=2 .. v>=5, 662, 651/657, 659, 660/661
std::vector<SubgroupFilter> standard_filters();

struct EvalEntry {
  std::string filter;
  std::size_t rows = 0;
  std::size_t positives = 0;
  std::optional<double> prevalence;
  ConfusionCounts counts;
  Metrics metrics;
  std::optional<double> auc;
  std::vector<RocPoint> roc;
};

struct EvalReport {
  std::string model_name;
  double threshold = 0.5;
  std::vector<EvalEntry> entries;
};

/// Metrics for the rows where mask != 0. An empty selection yields an entry
/// with rows = 0 and every metric absent.
EvalEntry evaluate_rows(std::string filter_label, std::span<const double> probs, std::span<const std::uint8_t> labels,
                        std::span<const std::uint8_t> mask, double threshold);

/// Scores `normalized` (rows aligned with `rows`, which index `raw`) and
/// reports every filter. Filters read the raw, pre-normalization dataset.
EvalReport evaluate(const MlpModel& model, std::string model_name, const Matrix& normalized,
                    const EncodedDataset& raw, std::span<const std::size_t> rows,
                    std::span<const SubgroupFilter> filters, double threshold);
/// Same as evaluate, with precomputed probabilities.
EvalReport evaluate_scores(std::string model_name, std::span<const double> probs, const EncodedDataset& raw,
                           std::span<const std::size_t> rows, std::span<const SubgroupFilter> filters,
                           double threshold);

/// Aligned text table: overall and visit-count rows on the left, CCS subgroup
/// rows on the right, one line per model in each block; then cohort sizes.
std::string format_table(std::span<const EvalReport> reports);
/// model,filter,rows,positives,prevalence,tp,fp,tn,fn,sensitivity,specificity,precision,auc,threshold
std::string report_csv(std::span<const EvalReport> reports);
/// fpr,tpr
std::string roc_csv(const EvalEntry& entry);

}  // namespace visitrisk
