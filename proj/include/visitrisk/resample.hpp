#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace visitrisk {

/// A two-way partition of row indices. `first` is the larger share
/// (pretraining or training), `second` the held-out share (test or validation).
struct SplitIndices {
  std::vector<std::size_t> first;
  std::vector<std::size_t> second;
  std::uint64_t seed = 0;
};

/// Rows of the pretraining set (positions into it) making up the balanced
/// bootstrap sample: every row once, then extra minority draws.
struct BootstrapPlan {
  std::vector<std::size_t> indices;
  std::uint64_t seed = 0;
};

/// Number of rows sent to the first part: floor(fraction * n_rows).
std::size_t split_size(std::size_t n_rows, double fraction);

/// Uniform random permutation of 0..n_rows-1 under `seed`; the first
/// floor(fraction * n_rows) entries form the first part.
SplitIndices split(std::size_t n_rows, double fraction, std::uint64_t seed);

/// Patient-grouped variant: whole patients are assigned to one side. Patients
/// are shuffled and the first floor(fraction * n_patients) go to the first part.
SplitIndices split_by_patient(std::span<const std::string> patient_ids, double fraction, std::uint64_t seed);

/// Keeps every row once, then draws (n_majority - n_minority) minority rows
/// uniformly with replacement, giving exactly equal class counts.
BootstrapPlan balance_bootstrap(std::span<const std::uint8_t> labels, std::uint64_t seed);

/// split() applied to the positions of a bootstrap plan.
SplitIndices train_val_split(std::size_t plan_size, double fraction, std::uint64_t seed);

/// Index files: `#name <name>`, `#seed <seed>`, `#count <n>` then one index per line.
void save_indices(const std::filesystem::path& path, std::string_view name, std::uint64_t seed,
                  std::span<const std::size_t> indices);

struct IndexFile {
  std::string name;
  std::uint64_t seed = 0;
  std::vector<std::size_t> indices;
};
IndexFile load_indices(const std::filesystem::path& path);

}  // namespace visitrisk
