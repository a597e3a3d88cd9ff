#include "visitrisk/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/core.h>

#include "visitrisk/error.hpp"
#include "visitrisk/eval.hpp"
#include "visitrisk/io.hpp"
#include "visitrisk/rng.hpp"

namespace visitrisk {

namespace {

constexpr double kProbClamp = 1e-12;
constexpr std::size_t kEvalChunk = 4096;

void check_batch(const MlpModel& model, const Matrix& x, std::span<const std::uint8_t> y) {
  if (x.rows() != y.size()) {
    throw Error(ErrorKind::kShapeMismatch, fmt::format("{} rows but {} labels", x.rows(), y.size()));
  }
  if (x.cols() != model.input_width()) {
    throw Error(ErrorKind::kShapeMismatch,
                fmt::format("input has {} features, model expects {}", x.cols(), model.input_width()));
  }
  if (x.rows() == 0) throw Error(ErrorKind::kEmptySet, "empty batch");
}

double mean_nll(std::span<const double> probs, std::span<const std::uint8_t> y) {
  double total = 0.0;
  for (std::size_t r = 0; r < probs.size(); ++r) {
    const double p = std::clamp(probs[r], kProbClamp, 1.0 - kProbClamp);
    total -= y[r] ? std::log(p) : std::log1p(-p);
  }
  return total / static_cast<double>(probs.size());
}

struct Validation {
  double accuracy = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  double balanced_accuracy = 0.0;
};

Validation validate(const MlpModel& model, const RowSet& set) {
  std::vector<double> probs;
  std::vector<std::uint8_t> labels;
  probs.reserve(set.size());
  labels.reserve(set.size());
  for (std::size_t start = 0; start < set.size(); start += kEvalChunk) {
    const auto end = std::min(set.size(), start + kEvalChunk);
    const std::span<const std::size_t> idx(set.rows.data() + start, end - start);
    const auto p = forward_batch(model, set.features->gather_rows(idx));
    probs.insert(probs.end(), p.begin(), p.end());
    for (auto r : idx) labels.push_back(set.labels[r]);
  }
  const auto c = confusion(probs, labels, 0.5);
  const auto m = metrics(c);
  Validation v;
  v.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  // A class missing from the validation rows contributes 0 rather than
  // silently inflating the mean.
  v.sensitivity = m.sensitivity.value_or(0.0);
  v.specificity = m.specificity.value_or(0.0);
  v.balanced_accuracy = 0.5 * (v.sensitivity + v.specificity);
  return v;
}

void check_rowset(const RowSet& set, std::string_view name, std::size_t width) {
  if (set.features == nullptr || set.rows.empty()) throw Error(ErrorKind::kEmptySet, fmt::format("{} set is empty", name));
  if (set.features->cols() != width) {
    throw Error(ErrorKind::kShapeMismatch,
                fmt::format("{} set has {} features, model expects {}", name, set.features->cols(), width));
  }
  if (set.labels.size() != set.features->rows()) {
    throw Error(ErrorKind::kShapeMismatch, fmt::format("{} set labels do not cover the feature rows", name));
  }
  for (auto r : set.rows) {
    if (r >= set.features->rows()) throw Error(ErrorKind::kShapeMismatch, fmt::format("{} set row out of range", name));
  }
}

}  // namespace

void TrainConfig::validate() const {
  auto invalid = [](std::string_view what) { throw Error(ErrorKind::kInvalidConfig, std::string(what)); };
  if (!(momentum >= 0.0 && momentum < 1.0)) invalid("momentum must be in [0, 1)");
  if (!(eta_floor >= 0.0)) invalid("eta_floor must be >= 0");
  if (!(eta0 > eta_floor)) invalid("eta0 must exceed eta_floor");
  if (batch_size < 1) invalid("batch_size must be >= 1");
  if (total_steps < 1) invalid("total_steps must be >= 1");
  if (patience < 1) invalid("patience must be >= 1");
  if (std::isnan(min_delta)) invalid("min_delta is NaN");
}

TrainConfig TrainConfig::for_architecture(const Architecture& arch) {
  TrainConfig cfg;
  if (arch.name == "NN8") {
    cfg.optimizer = Optimizer::kSgd;
    cfg.momentum = 0.0;
  }
  return cfg;
}

std::string TrainLog::to_csv() const {
  std::string out = "step,train_loss,val_accuracy,val_sensitivity,val_specificity,val_balanced_accuracy,step_size\n";
  for (const auto& p : points) {
    out += fmt::format("{},{},{},{},{},{},{}\n", p.step, io::format_double(p.train_loss),
                       io::format_double(p.val_accuracy), io::format_double(p.val_sensitivity),
                       io::format_double(p.val_specificity), io::format_double(p.val_balanced_accuracy),
                       io::format_double(p.step_size));
  }
  return out;
}

std::string_view to_string(StopReason reason) {
  return reason == StopReason::kEarlyStopped ? "early_stopped" : "step_budget";
}

double loss(const MlpModel& model, const Matrix& x, std::span<const std::uint8_t> y) {
  check_batch(model, x, y);
  return mean_nll(forward_batch(model, x), y);
}

LossAndGradient loss_and_gradient(const MlpModel& model, const Matrix& x, std::span<const std::uint8_t> y) {
  check_batch(model, x, y);
  const auto trace = forward_trace(model, x);
  const std::size_t n = x.rows();
  const double inv_n = 1.0 / static_cast<double>(n);
  const double lambda = model.selu_lambda;
  const double alpha = model.selu_alpha;

  LossAndGradient out{mean_nll(trace.probs, y), MlpModel::zeros(model.layer_sizes)};
  out.gradient.selu_lambda = lambda;
  out.gradient.selu_alpha = alpha;
  auto& grad = out.gradient;

  // d(mean NLL)/d(logit) = (p - y) / n
  std::vector<double> d_logit(n);
  for (std::size_t r = 0; r < n; ++r) d_logit[r] = (trace.probs[r] - static_cast<double>(y[r])) * inv_n;

  const std::size_t d = model.depth();
  const Matrix& last = trace.post[d - 1];
  const std::size_t n_last = last.cols();
  Matrix delta(n, n_last);
  for (std::size_t r = 0; r < n; ++r) {
    const auto h = last.row(r);
    const auto z = trace.pre[d - 1].row(r);
    auto dr = delta.row(r);
    grad.output.bias[0] += d_logit[r];
    for (std::size_t i = 0; i < n_last; ++i) {
      grad.output.weights(i, 0) += h[i] * d_logit[r];
      dr[i] = d_logit[r] * model.output.weights(i, 0) * selu_derivative(z[i], lambda, alpha);
    }
  }

  for (std::size_t l = d; l-- > 0;) {
    const Matrix& input = l == 0 ? x : trace.post[l - 1];
    const auto& layer = model.hidden[l];
    auto& g = grad.hidden[l];
    const std::size_t n_in = layer.weights.rows();
    const std::size_t n_out = layer.weights.cols();
    for (std::size_t r = 0; r < n; ++r) {
      const auto h = input.row(r);
      const double* dr = delta.row(r).data();
      for (std::size_t j = 0; j < n_out; ++j) g.bias[j] += dr[j];
      for (std::size_t i = 0; i < n_in; ++i) {
        const double hi = h[i];
        double* gw = g.weights.row(i).data();
        for (std::size_t j = 0; j < n_out; ++j) gw[j] += hi * dr[j];
      }
    }
    if (l == 0) break;
    Matrix prev(n, n_in);
    const Matrix& z_prev = trace.pre[l - 1];
    for (std::size_t r = 0; r < n; ++r) {
      const double* dr = delta.row(r).data();
      const auto zr = z_prev.row(r);
      auto pr = prev.row(r);
      for (std::size_t i = 0; i < n_in; ++i) {
        const double* w = layer.weights.row(i).data();
        double acc = 0.0;
        for (std::size_t j = 0; j < n_out; ++j) acc += dr[j] * w[j];
        pr[i] = acc * selu_derivative(zr[i], lambda, alpha);
      }
    }
    delta = std::move(prev);
  }
  return out;
}

double step_size(std::size_t t, const TrainConfig& cfg) {
  const double frac = static_cast<double>(t) / static_cast<double>(cfg.total_steps);
  return std::max(cfg.eta_floor, cfg.eta0 * (1.0 - frac));
}

TrainResult train(MlpModel model, const RowSet& train_set, const RowSet& val_set, const TrainConfig& cfg) {
  cfg.validate();
  model.check();
  check_rowset(train_set, "training", model.input_width());
  check_rowset(val_set, "validation", model.input_width());

  const std::size_t batch = std::min(cfg.batch_size, train_set.size());
  const std::size_t steps_per_epoch = (train_set.size() + batch - 1) / batch;
  const std::size_t eval_every = cfg.eval_every ? cfg.eval_every : steps_per_epoch;
  const bool use_momentum = cfg.optimizer == Optimizer::kSgdMomentum;

  Rng rng(cfg.seed);
  std::vector<std::size_t> order = train_set.rows;
  auto reshuffle = [&] {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  };
  reshuffle();
  std::size_t cursor = 0;

  MlpModel velocity = MlpModel::zeros(model.layer_sizes);
  TrainResult result;
  result.model = model;
  bool have_best = false;
  double best_metric = -std::numeric_limits<double>::infinity();
  double reference = 0.0;
  std::size_t stale = 0;
  double loss_sum = 0.0;
  std::size_t loss_count = 0;

  std::vector<std::size_t> batch_rows;
  std::vector<std::uint8_t> batch_labels;
  for (std::size_t t = 0; t < cfg.total_steps; ++t) {
    if (cursor >= order.size()) {
      reshuffle();
      cursor = 0;
    }
    const auto take = std::min(batch, order.size() - cursor);
    batch_rows.assign(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                      order.begin() + static_cast<std::ptrdiff_t>(cursor + take));
    cursor += take;
    batch_labels.resize(take);
    for (std::size_t k = 0; k < take; ++k) batch_labels[k] = train_set.labels[batch_rows[k]];

    const auto lg = loss_and_gradient(model, train_set.features->gather_rows(batch_rows), batch_labels);
    if (!std::isfinite(lg.loss)) {
      throw Error(ErrorKind::kDivergenceDetected, fmt::format("non-finite loss at step {}", t));
    }
    const double eta = step_size(t, cfg);
    auto params = model.parameter_blocks();
    const auto grads = lg.gradient.parameter_blocks();
    if (use_momentum) {
      auto vel = velocity.parameter_blocks();
      for (std::size_t b = 0; b < params.size(); ++b) {
        for (std::size_t k = 0; k < params[b].size(); ++k) {
          vel[b][k] = cfg.momentum * vel[b][k] - eta * grads[b][k];
          params[b][k] += vel[b][k];
        }
      }
    } else {
      for (std::size_t b = 0; b < params.size(); ++b) {
        for (std::size_t k = 0; k < params[b].size(); ++k) params[b][k] -= eta * grads[b][k];
      }
    }
    loss_sum += lg.loss;
    ++loss_count;
    result.steps_run = t + 1;

    const bool last_step = t + 1 == cfg.total_steps;
    if ((t + 1) % eval_every != 0 && !last_step) continue;

    const auto v = validate(model, val_set);
    result.log.points.push_back({t + 1, loss_sum / static_cast<double>(loss_count), v.accuracy, v.sensitivity,
                                 v.specificity, v.balanced_accuracy, eta});
    loss_sum = 0.0;
    loss_count = 0;

    if (!have_best || v.balanced_accuracy > best_metric) {
      result.model = model;
      result.best_step = t + 1;
      best_metric = v.balanced_accuracy;
      if (!cfg.checkpoint_dir.empty()) {
        save_model(cfg.checkpoint_dir / fmt::format("checkpoint_step{:08d}.mlp", t + 1), model);
      }
    }
    // Patience counts evaluations since the last improvement of at least min_delta.
    if (!have_best || v.balanced_accuracy >= reference + cfg.min_delta) {
      reference = v.balanced_accuracy;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      result.stop = StopReason::kEarlyStopped;
      break;
    }
    have_best = true;
  }
  result.best_metric = best_metric;
  return result;
}

}  // namespace visitrisk
