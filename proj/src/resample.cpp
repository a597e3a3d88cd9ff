#include "visitrisk/resample.hpp"

#include <charconv>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include <fmt/core.h>

#include "visitrisk/error.hpp"
#include "visitrisk/io.hpp"
#include "visitrisk/rng.hpp"

namespace visitrisk {

namespace {

void check_fraction(double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw Error(ErrorKind::kDegenerateSplit, fmt::format("fraction {} outside (0, 1)", fraction));
  }
}

std::vector<std::size_t> shuffled_range(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

}  // namespace

std::size_t split_size(std::size_t n_rows, double fraction) {
  // The epsilon absorbs representation error such as 0.29 * 100 = 28.999...
  return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n_rows) + 1e-9));
}

SplitIndices split(std::size_t n_rows, double fraction, std::uint64_t seed) {
  check_fraction(fraction);
  const auto n_first = split_size(n_rows, fraction);
  if (n_rows < 2 || n_first == 0 || n_first == n_rows) {
    throw Error(ErrorKind::kDegenerateSplit,
                fmt::format("{} rows at fraction {} leaves one side empty", n_rows, fraction));
  }
  Rng rng(seed);
  auto order = shuffled_range(n_rows, rng);
  SplitIndices out;
  out.seed = seed;
  out.first.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_first));
  out.second.assign(order.begin() + static_cast<std::ptrdiff_t>(n_first), order.end());
  return out;
}

SplitIndices split_by_patient(std::span<const std::string> patient_ids, double fraction, std::uint64_t seed) {
  check_fraction(fraction);
  std::unordered_map<std::string_view, std::size_t> group_of;
  std::vector<std::size_t> row_group(patient_ids.size());
  for (std::size_t r = 0; r < patient_ids.size(); ++r) {
    row_group[r] = group_of.emplace(patient_ids[r], group_of.size()).first->second;
  }
  const auto n_groups = group_of.size();
  const auto n_first = split_size(n_groups, fraction);
  if (n_groups < 2 || n_first == 0 || n_first == n_groups) {
    throw Error(ErrorKind::kDegenerateSplit,
                fmt::format("{} patients at fraction {} leaves one side empty", n_groups, fraction));
  }
  Rng rng(seed);
  const auto order = shuffled_range(n_groups, rng);
  std::vector<std::uint8_t> in_first(n_groups, 0);
  for (std::size_t i = 0; i < n_first; ++i) in_first[order[i]] = 1;

  SplitIndices out;
  out.seed = seed;
  for (std::size_t r = 0; r < patient_ids.size(); ++r) {
    (in_first[row_group[r]] ? out.first : out.second).push_back(r);
  }
  return out;
}

BootstrapPlan balance_bootstrap(std::span<const std::uint8_t> labels, std::uint64_t seed) {
  std::vector<std::size_t> positives, negatives;
  for (std::size_t r = 0; r < labels.size(); ++r) (labels[r] ? positives : negatives).push_back(r);
  if (positives.empty() || negatives.empty()) {
    throw Error(ErrorKind::kSingleClass, fmt::format("{} positive and {} negative rows", positives.size(),
                                                     negatives.size()));
  }
  const auto& minority = positives.size() <= negatives.size() ? positives : negatives;
  const auto n_majority = std::max(positives.size(), negatives.size());

  BootstrapPlan plan;
  plan.seed = seed;
  plan.indices.resize(labels.size());
  std::iota(plan.indices.begin(), plan.indices.end(), std::size_t{0});
  plan.indices.reserve(2 * n_majority);
  Rng rng(seed);
  for (std::size_t k = minority.size(); k < n_majority; ++k) {
    plan.indices.push_back(minority[rng.below(minority.size())]);
  }
  return plan;
}

SplitIndices train_val_split(std::size_t plan_size, double fraction, std::uint64_t seed) {
  return split(plan_size, fraction, seed);
}

void save_indices(const std::filesystem::path& path, std::string_view name, std::uint64_t seed,
                  std::span<const std::size_t> indices) {
  std::string out = fmt::format("#name {}\n#seed {}\n#count {}\n", name, seed, indices.size());
  for (auto i : indices) {
    out += std::to_string(i);
    out += '\n';
  }
  io::write_text(path, out);
}

IndexFile load_indices(const std::filesystem::path& path) {
  const auto lines = io::split(io::read_text(path), '\n');
  auto bad = [&](std::string_view what) {
    throw Error(ErrorKind::kMalformedField, fmt::format("{}: {}", path.string(), what));
  };
  if (lines.size() < 3) bad("truncated header");
  IndexFile file;
  auto header_value = [&](std::size_t i, std::string_view key) -> std::string {
    const auto prefix = fmt::format("#{} ", key);
    if (lines[i].rfind(prefix, 0) != 0) bad(fmt::format("expected '{}'", prefix));
    return lines[i].substr(prefix.size());
  };
  file.name = header_value(0, "name");
  long long count = 0;
  const auto seed_text = header_value(1, "seed");
  const auto parsed = std::from_chars(seed_text.data(), seed_text.data() + seed_text.size(), file.seed);
  if (parsed.ec != std::errc() || parsed.ptr != seed_text.data() + seed_text.size()) bad("bad seed");
  if (!io::parse_int(header_value(2, "count"), count) || count < 0) bad("bad count");
  file.indices.reserve(static_cast<std::size_t>(count));
  for (std::size_t i = 3; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    long long v = 0;
    if (!io::parse_int(lines[i], v) || v < 0) bad(fmt::format("bad index on line {}", i + 1));
    file.indices.push_back(static_cast<std::size_t>(v));
  }
  if (file.indices.size() != static_cast<std::size_t>(count)) bad("index count differs from header");
  return file;
}

}  // namespace visitrisk
