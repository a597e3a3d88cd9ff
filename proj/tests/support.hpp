#pragma once

// Independent oracles and fixtures shared by the unit and acceptance tests.
// Nothing here calls the code it is used to check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <fmt/core.h>

#include "visitrisk/matrix.hpp"
#include "visitrisk/mlp.hpp"
#include "visitrisk/schema.hpp"
#include "visitrisk/train.hpp"

namespace testing {

// O(n^2) pairwise AUC, ties counted one half.
inline double brute_force_auc(std::span<const double> s, std::span<const std::uint8_t> y) {
  double wins = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j]) continue;
      pairs += 1.0;
      if (s[i] > s[j]) {
        wins += 1.0;
      } else if (s[i] == s[j]) {
        wins += 0.5;
      }
    }
  }
  return wins / pairs;
}

// Straight-line forward pass written from the layer equations, no shared
// kernel. Evaluated in long double so that central differences taken on it are
// not dominated by rounding in the loss.
inline long double naive_forward_ld(const visitrisk::MlpModel& m, std::span<const double> x) {
  const long double lambda = m.selu_lambda;
  const long double alpha = m.selu_alpha;
  std::vector<long double> h(x.begin(), x.end());
  for (const auto& layer : m.hidden) {
    std::vector<long double> next(layer.bias.begin(), layer.bias.end());
    for (std::size_t j = 0; j < next.size(); ++j) {
      for (std::size_t i = 0; i < h.size(); ++i) next[j] += layer.weights(i, j) * h[i];
      const long double z = next[j];
      next[j] = z > 0 ? lambda * z : lambda * alpha * std::expm1(z);
    }
    h = std::move(next);
  }
  long double z = m.output.bias[0];
  for (std::size_t i = 0; i < h.size(); ++i) z += m.output.weights(i, 0) * h[i];
  return 1.0L / (1.0L + std::exp(-z));
}

inline double naive_forward(const visitrisk::MlpModel& m, std::span<const double> x) {
  return static_cast<double>(naive_forward_ld(m, x));
}

inline long double naive_loss_ld(const visitrisk::MlpModel& m, const visitrisk::Matrix& x,
                                 std::span<const std::uint8_t> y) {
  long double total = 0.0L;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const long double p = std::clamp(naive_forward_ld(m, x.row(r)), 1e-12L, 1.0L - 1e-12L);
    total -= y[r] ? std::log(p) : std::log1p(-p);
  }
  return total / static_cast<long double>(x.rows());
}

inline double naive_loss(const visitrisk::MlpModel& m, const visitrisk::Matrix& x, std::span<const std::uint8_t> y) {
  return static_cast<double>(naive_loss_ld(m, x, y));
}

// Largest relative error |a - n| / max(|a|, |n|, floor) between backprop (a)
// and central differences (n) with step h.
inline double gradient_check(const visitrisk::MlpModel& model, const visitrisk::Matrix& x,
                             std::span<const std::uint8_t> y, double h = 1e-6, double floor = 1e-6) {
  const auto analytic = visitrisk::gradient(model, x, y);
  auto probe = model;
  auto params = probe.parameter_blocks();
  const auto grads = analytic.parameter_blocks();
  double worst = 0.0;
  for (std::size_t b = 0; b < params.size(); ++b) {
    for (std::size_t k = 0; k < params[b].size(); ++k) {
      const double saved = params[b][k];
      params[b][k] = saved + h;
      const long double up = naive_loss_ld(probe, x, y);
      params[b][k] = saved - h;
      const long double down = naive_loss_ld(probe, x, y);
      params[b][k] = saved;
      // The perturbed parameters are doubles; divide by the step they actually took.
      const double numeric = static_cast<double>((up - down) / ((static_cast<long double>(saved + h) - (saved - h))));
      const double a = grads[b][k];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

// Random cohort with `patients` patients of 1..max_visits visits each, rows in
// patient order. Codes come from the default codebook.
inline std::vector<visitrisk::VisitRecord> random_cohort(std::size_t patients, std::uint32_t max_visits,
                                                         std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  const auto spec = visitrisk::CategoricalSpec::standard();
  const auto codebook = spec.ccs_codes();
  auto pick = [&](std::size_t n) { return static_cast<std::size_t>(gen() % n); };
  std::vector<visitrisk::VisitRecord> out;
  for (std::size_t p = 0; p < patients; ++p) {
    const auto n = 1 + static_cast<std::uint32_t>(pick(max_visits));
    const std::uint8_t y = pick(10) == 0 ? 1 : 0;
    for (std::uint32_t k = 0; k < n; ++k) {
      visitrisk::VisitRecord r;
      r.patient_id = fmt::format("p{}", p);
      r.visit_seq = k;
      for (auto& v : r.numeric) v = static_cast<std::int64_t>(pick(1000));
      r.value(visitrisk::NumericField::kAge) = 10 + static_cast<std::int64_t>(pick(10));
      for (std::size_t f = 0; f < visitrisk::kNumCategoricalFields; ++f) {
        r.categorical[f] = static_cast<std::uint16_t>(pick(visitrisk::kDeclaredCardinalities[f]));
      }
      const auto n_codes = 1 + pick(7);
      // Small code pool so repeats within and across visits are common.
      for (std::size_t c = 0; c < n_codes; ++c) r.ccs_codes.push_back(codebook[pick(12) * 23]);
      r.outcome = y;
      out.push_back(std::move(r));
    }
  }
  return out;
}

inline visitrisk::Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& gen) {
  std::normal_distribution<double> n(0.0, 1.0);
  visitrisk::Matrix m(rows, cols);
  for (auto& v : m.values()) v = n(gen);
  return m;
}

}  // namespace testing
