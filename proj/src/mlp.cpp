#include "visitrisk/mlp.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include <fmt/core.h>

#include "visitrisk/error.hpp"
#include "visitrisk/io.hpp"
#include "visitrisk/rng.hpp"

namespace visitrisk {

namespace {

constexpr std::string_view kModelMagic = "MLP1";
constexpr std::size_t kBatchChunk = 1024;

// out(r, j) = bias_j + sum_i in(r, i) * W(i, j), accumulated in i order.
void affine(const Matrix& in, const DenseLayer& layer, Matrix& out) {
  const std::size_t n_in = layer.weights.rows();
  const std::size_t n_out = layer.weights.cols();
  for (std::size_t r = 0; r < in.rows(); ++r) {
    const auto x = in.row(r);
    auto z = out.row(r);
    std::copy(layer.bias.begin(), layer.bias.end(), z.begin());
    for (std::size_t i = 0; i < n_in; ++i) {
      const double xi = x[i];
      const double* w = layer.weights.row(i).data();
      double* zp = z.data();
      for (std::size_t j = 0; j < n_out; ++j) zp[j] += xi * w[j];
    }
  }
}

void check_input(const MlpModel& model, std::size_t cols) {
  if (cols != model.input_width()) {
    throw Error(ErrorKind::kShapeMismatch,
                fmt::format("input has {} features, model expects {}", cols, model.input_width()));
  }
}

void forward_chunk(const MlpModel& model, const Matrix& x, std::span<double> probs) {
  Matrix h = x;
  for (const auto& layer : model.hidden) {
    Matrix z(h.rows(), layer.weights.cols());
    affine(h, layer, z);
    for (auto& v : z.values()) v = selu(v, model.selu_lambda, model.selu_alpha);
    h = std::move(z);
  }
  Matrix logits(h.rows(), 1);
  affine(h, model.output, logits);
  for (std::size_t r = 0; r < h.rows(); ++r) probs[r] = sigmoid(logits(r, 0));
}

}  // namespace

Architecture Architecture::nn2() { return {"NN2", {50, 50}}; }
Architecture Architecture::nn4() { return {"NN4", {50, 50, 50, 50}}; }
Architecture Architecture::nn8() { return {"NN8", {50, 20, 20, 20, 20, 20, 20, 20}}; }

Architecture Architecture::by_name(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "nn2") return nn2();
  if (lower == "nn4") return nn4();
  if (lower == "nn8") return nn8();
  throw Error(ErrorKind::kConfigError, fmt::format("unknown architecture '{}' (expected nn2, nn4, nn8)", name));
}

MlpModel MlpModel::zeros(std::vector<std::size_t> layer_sizes) {
  if (layer_sizes.size() < 2) throw Error(ErrorKind::kShapeMismatch, "need an input width and one hidden layer");
  for (auto n : layer_sizes) {
    if (n == 0) throw Error(ErrorKind::kShapeMismatch, "layer widths must be positive");
  }
  MlpModel model;
  model.layer_sizes = std::move(layer_sizes);
  for (std::size_t i = 1; i < model.layer_sizes.size(); ++i) {
    model.hidden.push_back(
        {Matrix(model.layer_sizes[i - 1], model.layer_sizes[i]), std::vector<double>(model.layer_sizes[i], 0.0)});
  }
  model.output = {Matrix(model.layer_sizes.back(), 1), std::vector<double>(1, 0.0)};
  return model;
}

std::size_t MlpModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& block : parameter_blocks()) n += block.size();
  return n;
}

std::vector<std::span<double>> MlpModel::parameter_blocks() {
  std::vector<std::span<double>> blocks;
  for (auto& layer : hidden) {
    blocks.push_back(layer.weights.values());
    blocks.push_back(layer.bias);
  }
  blocks.push_back(output.weights.values());
  blocks.push_back(output.bias);
  return blocks;
}

std::vector<std::span<const double>> MlpModel::parameter_blocks() const {
  std::vector<std::span<const double>> blocks;
  for (const auto& layer : hidden) {
    blocks.push_back(layer.weights.values());
    blocks.push_back(layer.bias);
  }
  blocks.push_back(output.weights.values());
  blocks.push_back(output.bias);
  return blocks;
}

void MlpModel::check() const {
  auto corrupt = [](std::string_view what) { throw Error(ErrorKind::kShapeCorruption, std::string(what)); };
  if (layer_sizes.size() < 2 || hidden.size() + 1 != layer_sizes.size()) corrupt("layer count mismatch");
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    const auto& layer = hidden[i];
    if (layer.weights.rows() != layer_sizes[i] || layer.weights.cols() != layer_sizes[i + 1] ||
        layer.bias.size() != layer_sizes[i + 1]) {
      corrupt(fmt::format("hidden layer {} shape does not chain", i + 1));
    }
  }
  if (output.weights.rows() != layer_sizes.back() || output.weights.cols() != 1 || output.bias.size() != 1) {
    corrupt("output layer shape does not chain");
  }
  for (const auto& block : parameter_blocks()) {
    for (double v : block) {
      if (!std::isfinite(v)) corrupt("non-finite parameter");
    }
  }
}

MlpModel init_model(const Architecture& arch, std::size_t input_width, std::uint64_t seed, WeightInit scheme) {
  if (input_width == 0) throw Error(ErrorKind::kShapeMismatch, "input width must be positive");
  if (arch.hidden.empty()) throw Error(ErrorKind::kShapeMismatch, "architecture has no hidden layers");
  std::vector<std::size_t> sizes{input_width};
  sizes.insert(sizes.end(), arch.hidden.begin(), arch.hidden.end());
  auto model = MlpModel::zeros(std::move(sizes));

  const double gain = scheme == WeightInit::kHe ? 2.0 : 1.0;
  Rng rng(seed);
  auto fill = [&](Matrix& w) {
    const double std_dev = std::sqrt(gain / static_cast<double>(w.rows()));
    for (auto& v : w.values()) v = std_dev * rng.normal();
  };
  for (auto& layer : model.hidden) fill(layer.weights);
  fill(model.output.weights);
  return model;
}

double forward(const MlpModel& model, std::span<const double> x) {
  check_input(model, x.size());
  Matrix row(1, x.size());
  std::copy(x.begin(), x.end(), row.row(0).begin());
  double p = 0.0;
  forward_chunk(model, row, std::span<double>(&p, 1));
  return p;
}

std::vector<double> forward_batch(const MlpModel& model, const Matrix& x) {
  std::vector<double> probs(x.rows());
  if (x.rows() == 0) return probs;
  check_input(model, x.cols());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < x.rows(); start += kBatchChunk) {
    const auto end = std::min(x.rows(), start + kBatchChunk);
    idx.resize(end - start);
    for (std::size_t r = start; r < end; ++r) idx[r - start] = r;
    forward_chunk(model, x.gather_rows(idx), std::span<double>(probs).subspan(start, end - start));
  }
  return probs;
}

ForwardTrace forward_trace(const MlpModel& model, const Matrix& x) {
  check_input(model, x.cols());
  ForwardTrace trace;
  const Matrix* h = &x;
  for (const auto& layer : model.hidden) {
    Matrix z(x.rows(), layer.weights.cols());
    affine(*h, layer, z);
    Matrix a = z;
    for (auto& v : a.values()) v = selu(v, model.selu_lambda, model.selu_alpha);
    trace.pre.push_back(std::move(z));
    trace.post.push_back(std::move(a));
    h = &trace.post.back();
  }
  Matrix logits(x.rows(), 1);
  affine(*h, model.output, logits);
  trace.logits.assign(logits.values().begin(), logits.values().end());
  trace.probs.resize(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) trace.probs[r] = sigmoid(trace.logits[r]);
  return trace;
}

std::string serialize_model(const MlpModel& model) {
  model.check();
  std::string header = fmt::format("{}\ndepth {}\nsizes", kModelMagic, model.depth());
  for (auto n : model.layer_sizes) header += fmt::format(" {}", n);
  header += fmt::format("\nlambda {}\nalpha {}\nend\n", io::format_double(model.selu_lambda),
                        io::format_double(model.selu_alpha));
  std::ostringstream out(std::ios::binary);
  out << header;
  for (const auto& block : model.parameter_blocks()) io::write_f64_le(out, block);
  return out.str();
}

MlpModel parse_model(std::string_view bytes) {
  auto corrupt = [](std::string_view what) {
    throw Error(ErrorKind::kShapeCorruption, fmt::format("model file: {}", what));
  };
  std::size_t pos = 0;
  auto next_line = [&]() -> std::string_view {
    const auto end = bytes.find('\n', pos);
    if (end == std::string_view::npos) corrupt("truncated header");
    auto line = bytes.substr(pos, end - pos);
    pos = end + 1;
    return line;
  };
  if (bytes.substr(0, kModelMagic.size() + 1) != fmt::format("{}\n", kModelMagic)) {
    throw Error(ErrorKind::kBadMagic, "model file does not start with MLP1");
  }
  next_line();

  auto fields = [](std::string_view line) { return io::split(line, ' '); };
  const auto depth_line = fields(next_line());
  long long depth = 0;
  if (depth_line.size() != 2 || depth_line[0] != "depth" || !io::parse_int(depth_line[1], depth) || depth < 1) {
    corrupt("bad depth line");
  }
  const auto sizes_line = fields(next_line());
  if (sizes_line.empty() || sizes_line[0] != "sizes" || sizes_line.size() != static_cast<std::size_t>(depth) + 2) {
    corrupt("sizes line does not match depth");
  }
  std::vector<std::size_t> sizes;
  for (std::size_t i = 1; i < sizes_line.size(); ++i) {
    long long n = 0;
    if (!io::parse_int(sizes_line[i], n) || n <= 0) corrupt("bad layer size");
    sizes.push_back(static_cast<std::size_t>(n));
  }
  auto scalar = [&](std::string_view key) {
    const auto line = fields(next_line());
    double v = 0;
    if (line.size() != 2 || line[0] != key || !io::parse_double(line[1], v)) corrupt(fmt::format("bad {} line", key));
    return v;
  };
  const double lambda = scalar("lambda");
  const double alpha = scalar("alpha");
  if (next_line() != "end") corrupt("missing end marker");

  auto model = MlpModel::zeros(std::move(sizes));
  model.selu_lambda = lambda;
  model.selu_alpha = alpha;
  std::istringstream in(std::string(bytes.substr(pos)), std::ios::binary);
  for (auto block : model.parameter_blocks()) {
    if (!io::read_f64_le(in, block)) corrupt("parameter block truncated");
  }
  if (in.peek() != std::char_traits<char>::eof()) corrupt("trailing bytes after parameters");
  model.check();
  return model;
}

void save_model(const std::filesystem::path& path, const MlpModel& model) {
  io::write_text(path, serialize_model(model));
}

MlpModel load_model(const std::filesystem::path& path) { return parse_model(io::read_text(path)); }

}  // namespace visitrisk
