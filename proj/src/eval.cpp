#include "visitrisk/eval.hpp"

#include <algorithm>
#include <numeric>

#include <fmt/core.h>

#include "visitrisk/error.hpp"
#include "visitrisk/io.hpp"

namespace visitrisk {

namespace {

void check_lengths(std::size_t a, std::size_t b) {
  if (a != b) throw Error(ErrorKind::kLengthMismatch, fmt::format("{} scores but {} labels", a, b));
}

std::optional<double> ratio(std::size_t num, std::size_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

std::string fixed3(const std::optional<double>& v) { return v ? fmt::format("{:.3f}", *v) : std::string("-"); }
std::string csv_value(const std::optional<double>& v) { return v ? io::format_double(*v) : std::string(); }

// Descending score order; ties broken by index so output is deterministic.
std::vector<std::size_t> order_by_score_desc(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace

ConfusionCounts confusion(std::span<const double> probs, std::span<const std::uint8_t> labels, double threshold) {
  check_lengths(probs.size(), labels.size());
  ConfusionCounts c;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const bool predicted = probs[i] >= threshold;
    if (labels[i]) {
      predicted ? ++c.tp : ++c.fn;
    } else {
      predicted ? ++c.fp : ++c.tn;
    }
  }
  return c;
}

Metrics metrics(const ConfusionCounts& c) {
  return {ratio(c.tp, c.tp + c.fn), ratio(c.tn, c.tn + c.fp), ratio(c.tp, c.tp + c.fp)};
}

double auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  check_lengths(scores.size(), labels.size());
  const auto n_pos = static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](auto y) { return y; }));
  const auto n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw Error(ErrorKind::kSingleClass, fmt::format("AUC needs both classes ({} positive, {} negative)", n_pos, n_neg));
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Sum of midranks (1-based) of the positives. Ranks are integers or
  // half-integers, exact in double for any realistic n.
  double rank_sum = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    std::size_t pos_in_tie = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      pos_in_tie += labels[order[j]] ? 1 : 0;
      ++j;
    }
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    rank_sum += midrank * static_cast<double>(pos_in_tie);
    i = j;
  }
  const double np = static_cast<double>(n_pos);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  check_lengths(scores.size(), labels.size());
  const auto n_pos = static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](auto y) { return y; }));
  const auto n_neg = labels.size() - n_pos;
  std::vector<RocPoint> points{{0.0, 0.0}};
  if (n_pos == 0 || n_neg == 0) return points;
  const auto order = order_by_score_desc(scores);
  std::size_t tp = 0, fp = 0, i = 0;
  while (i < order.size()) {
    const double s = scores[order[i]];
    while (i < order.size() && scores[order[i]] == s) {
      labels[order[i]] ? ++tp : ++fp;
      ++i;
    }
    points.push_back({static_cast<double>(fp) / static_cast<double>(n_neg),
                      static_cast<double>(tp) / static_cast<double>(n_pos)});
  }
  return points;
}

SubgroupFilter SubgroupFilter::all() { return {}; }

SubgroupFilter SubgroupFilter::min_visits(std::uint32_t n) {
  SubgroupFilter f;
  f.kind_ = n <= 1 ? Kind::kAll : Kind::kMinVisits;
  f.min_visits_ = std::max<std::uint32_t>(n, 1);
  return f;
}

SubgroupFilter SubgroupFilter::ccs_any(std::vector<int> codes) {
  if (codes.empty()) throw Error(ErrorKind::kConfigError, "ccs filter needs at least one code");
  SubgroupFilter f;
  f.kind_ = Kind::kCcsAny;
  f.codes_ = std::move(codes);
  return f;
}

SubgroupFilter SubgroupFilter::parse(std::string_view text) {
  text = io::trim(text);
  if (text == "all") return all();
  if (text.rfind("v>=", 0) == 0) {
    long long n = 0;
    if (!io::parse_int(text.substr(3), n) || n < 1) {
      throw Error(ErrorKind::kConfigError, fmt::format("bad visit filter '{}'", text));
    }
    return min_visits(static_cast<std::uint32_t>(n));
  }
  std::vector<int> codes;
  for (const auto& part : io::split(text, '/')) {
    long long code = 0;
    if (!io::parse_int(part, code) || code <= 0) {
      throw Error(ErrorKind::kConfigError, fmt::format("bad CCS filter '{}'", text));
    }
    codes.push_back(static_cast<int>(code));
  }
  return ccs_any(std::move(codes));
}

std::string SubgroupFilter::label() const {
  switch (kind_) {
    case Kind::kAll: return "all";
    case Kind::kMinVisits: return fmt::format("v>={}", min_visits_);
    case Kind::kCcsAny: {
      std::string out;
      for (std::size_t i = 0; i < codes_.size(); ++i) out += (i ? "/" : "") + std::to_string(codes_[i]);
      return out;
    }
  }
  return {};
}

std::vector<std::uint8_t> SubgroupFilter::mask(const EncodedDataset& ds) const {
  std::vector<std::uint8_t> out(ds.rows(), 0);
  switch (kind_) {
    case Kind::kAll:
      std::fill(out.begin(), out.end(), std::uint8_t{1});
      break;
    case Kind::kMinVisits:
      for (std::size_t r = 0; r < ds.rows(); ++r) out[r] = ds.visit_counts[r] >= min_visits_ ? 1 : 0;
      break;
    case Kind::kCcsAny: {
      std::vector<std::size_t> slots;
      for (int code : codes_) {
        const auto it = std::find(ds.ccs_codes.begin(), ds.ccs_codes.end(), code);
        if (it == ds.ccs_codes.end()) {
          throw Error(ErrorKind::kConfigError, fmt::format("CCS code {} is not in the dataset codebook", code));
        }
        slots.push_back(static_cast<std::size_t>(it - ds.ccs_codes.begin()));
      }
      for (std::size_t r = 0; r < ds.rows(); ++r) {
        const auto block = ds.diagnosis_block(r);
        out[r] = std::any_of(slots.begin(), slots.end(), [&](std::size_t s) { return block[s] > 0.0; }) ? 1 : 0;
      }
      break;
    }
  }
  return out;
}

std::vector<SubgroupFilter> standard_filters() {
  return {SubgroupFilter::all(),           SubgroupFilter::min_visits(2),
          SubgroupFilter::min_visits(3),   SubgroupFilter::min_visits(4),
          SubgroupFilter::min_visits(5),   SubgroupFilter::ccs_any({662}),
          SubgroupFilter::ccs_any({651, 657}), SubgroupFilter::ccs_any({659}),
          SubgroupFilter::ccs_any({660, 661})};
}

EvalEntry evaluate_rows(std::string filter_label, std::span<const double> probs, std::span<const std::uint8_t> labels,
                        std::span<const std::uint8_t> mask, double threshold) {
  check_lengths(probs.size(), labels.size());
  check_lengths(probs.size(), mask.size());
  std::vector<double> p;
  std::vector<std::uint8_t> y;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (mask[i]) {
      p.push_back(probs[i]);
      y.push_back(labels[i]);
    }
  }
  EvalEntry entry;
  entry.filter = std::move(filter_label);
  entry.rows = p.size();
  if (p.empty()) return entry;
  entry.counts = confusion(p, y, threshold);
  entry.positives = entry.counts.tp + entry.counts.fn;
  entry.prevalence = ratio(entry.positives, entry.rows);
  entry.metrics = metrics(entry.counts);
  if (entry.positives > 0 && entry.positives < entry.rows) entry.auc = auc(p, y);
  entry.roc = roc_curve(p, y);
  return entry;
}

EvalReport evaluate_scores(std::string model_name, std::span<const double> probs, const EncodedDataset& raw,
                           std::span<const std::size_t> rows, std::span<const SubgroupFilter> filters,
                           double threshold) {
  check_lengths(probs.size(), rows.size());
  std::vector<std::uint8_t> labels(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) labels[i] = raw.labels.at(rows[i]);

  EvalReport report;
  report.model_name = std::move(model_name);
  report.threshold = threshold;
  for (const auto& filter : filters) {
    const auto full_mask = filter.mask(raw);
    std::vector<std::uint8_t> mask(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) mask[i] = full_mask[rows[i]];
    report.entries.push_back(evaluate_rows(filter.label(), probs, labels, mask, threshold));
  }
  return report;
}

EvalReport evaluate(const MlpModel& model, std::string model_name, const Matrix& normalized,
                    const EncodedDataset& raw, std::span<const std::size_t> rows,
                    std::span<const SubgroupFilter> filters, double threshold) {
  if (normalized.rows() != rows.size()) {
    throw Error(ErrorKind::kLengthMismatch,
                fmt::format("{} normalized rows but {} row indices", normalized.rows(), rows.size()));
  }
  const auto probs = forward_batch(model, normalized);
  return evaluate_scores(std::move(model_name), probs, raw, rows, filters, threshold);
}

std::string format_table(std::span<const EvalReport> reports) {
  if (reports.empty()) return {};
  // Left half: overall and visit-count cohorts. Right half: CCS subgroups.
  std::vector<std::size_t> left, right;
  const auto& first = reports.front().entries;
  for (std::size_t k = 0; k < first.size(); ++k) {
    const auto filter = SubgroupFilter::parse(first[k].filter);
    (filter.kind() == SubgroupFilter::Kind::kCcsAny ? right : left).push_back(k);
  }

  auto row_label = [](const EvalReport& r, const EvalEntry& e) {
    return e.filter == "all" ? r.model_name : fmt::format("{}, {}", r.model_name, e.filter);
  };
  auto cells = [](const EvalEntry& e) {
    return fmt::format("{:>6} {:>6} {:>6} {:>6}", fixed3(e.metrics.sensitivity), fixed3(e.metrics.specificity),
                       fixed3(e.metrics.precision), fixed3(e.auc));
  };
  constexpr int kLabelWidth = 16;
  const std::string blank_cells(27, ' ');

  std::string out = fmt::format("threshold {:.3f}\n", reports.front().threshold);
  out += fmt::format("{:<{}} {:>6} {:>6} {:>6} {:>6} | {:<{}} {:>6} {:>6} {:>6} {:>6}\n", "Method", kLabelWidth,
                     "Sens.", "Spec.", "Prec.", "AUC", "Method", kLabelWidth, "Sens.", "Spec.", "Prec.", "AUC");
  const std::string rule(2 * (kLabelWidth + 28) + 3, '-');
  out += rule + "\n";
  const auto blocks = std::max(left.size(), right.size());
  for (std::size_t b = 0; b < blocks; ++b) {
    for (const auto& report : reports) {
      std::string line;
      if (b < left.size()) {
        const auto& e = report.entries[left[b]];
        line += fmt::format("{:<{}} {}", row_label(report, e), kLabelWidth, cells(e));
      } else {
        line += fmt::format("{:<{}} {}", "", kLabelWidth, blank_cells);
      }
      if (b < right.size()) {
        const auto& e = report.entries[right[b]];
        line += fmt::format(" | {:<{}} {}", row_label(report, e), kLabelWidth, cells(e));
      }
      while (!line.empty() && line.back() == ' ') line.pop_back();
      out += line + "\n";
    }
    out += rule + "\n";
  }

  out += fmt::format("\n{:<10} {:>8} {:>9} {:>10}\n", "Cohort", "Rows", "Positive", "Prevalence");
  for (const auto& e : first) {
    out += fmt::format("{:<10} {:>8} {:>9} {:>10}\n", e.filter, e.rows, e.positives,
                       e.prevalence ? fmt::format("{:.4f}", *e.prevalence) : std::string("-"));
  }
  return out;
}

std::string report_csv(std::span<const EvalReport> reports) {
  std::string out =
      "model,filter,rows,positives,prevalence,tp,fp,tn,fn,sensitivity,specificity,precision,auc,threshold\n";
  for (const auto& report : reports) {
    for (const auto& e : report.entries) {
      out += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n", report.model_name, e.filter, e.rows,
                         e.positives, csv_value(e.prevalence), e.counts.tp, e.counts.fp, e.counts.tn, e.counts.fn,
                         csv_value(e.metrics.sensitivity), csv_value(e.metrics.specificity),
                         csv_value(e.metrics.precision), csv_value(e.auc), io::format_double(report.threshold));
    }
  }
  return out;
}

std::string roc_csv(const EvalEntry& entry) {
  std::string out = "fpr,tpr\n";
  for (const auto& p : entry.roc) out += fmt::format("{},{}\n", io::format_double(p.fpr), io::format_double(p.tpr));
  return out;
}

}  // namespace visitrisk
