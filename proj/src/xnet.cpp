#include "xcorner/xnet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <tuple>

namespace xcorner {

namespace {

constexpr Activation kRelu = Activation::kRelu;
constexpr Activation kLinear = Activation::kLinear;

struct NamedConfig {
  ConfigId id;
  const char* name;
};

constexpr NamedConfig kConfigNames[] = {
    {ConfigId::kA, "A"},     {ConfigId::kB, "B"},     {ConfigId::kC, "C"},
    {ConfigId::kD1, "D1"},   {ConfigId::kD3, "D3"},   {ConfigId::kE16, "E16"},
    {ConfigId::kE32, "E32"}, {ConfigId::kF, "F"},     {ConfigId::kG, "G"},
    {ConfigId::kH, "H"},
};

}  // namespace

std::string to_string(ConfigId id) {
  for (const auto& entry : kConfigNames) {
    if (entry.id == id) return entry.name;
  }
  return "?";
}

ConfigId parse_config_id(const std::string& text) {
  if (text == "D") return ConfigId::kD1;
  if (text == "E") return ConfigId::kE32;
  for (const auto& entry : kConfigNames) {
    if (text == entry.name) return entry.id;
  }
  throw ParameterError("unknown network configuration '" + text + "'");
}

std::vector<ConfigId> all_config_ids() {
  std::vector<ConfigId> ids;
  for (const auto& entry : kConfigNames) ids.push_back(entry.id);
  return ids;
}

NetworkConfig network_config(ConfigId id) {
  NetworkConfig config{id, {}};
  auto& l = config.layers;
  switch (id) {
    case ConfigId::kA:
      l = {{13, 16, kRelu}, {1, 8, kRelu}, {3, 1, kLinear}};
      break;
    case ConfigId::kB:
      l = {{13, 16, kRelu}, {1, 8, kRelu}, {3, 16, kRelu}, {1, 1, kLinear}};
      break;
    case ConfigId::kC:
      l = {{7, 16, kRelu}, {7, 16, kRelu}, {1, 8, kRelu}, {3, 16, kRelu}, {1, 1, kLinear}};
      break;
    case ConfigId::kD1:
      l = {{13, 16, kRelu}, {3, 32, kRelu}, {3, 32, kRelu}, {1, 1, kLinear}};
      break;
    case ConfigId::kD3:
      l = {{13, 16, kRelu}, {3, 32, kRelu}, {3, 32, kRelu}, {3, 1, kLinear}};
      break;
    case ConfigId::kE16:
      l = {{13, 16, kRelu}, {3, 32, kRelu}, {3, 32, kRelu}, {3, 32, kRelu}, {1, 1, kLinear}};
      break;
    case ConfigId::kE32:
      l = {{13, 32, kRelu}, {3, 32, kRelu}, {3, 32, kRelu}, {3, 32, kRelu}, {1, 1, kLinear}};
      break;
    case ConfigId::kF:
      l = {{13, 32, kRelu}, {3, 32, kRelu}, {3, 32, kRelu},
           {3, 32, kRelu},  {1, 32, kRelu}, {1, 1, kLinear}};
      break;
    case ConfigId::kG:
      l = {{13, 32, kRelu}, {5, 32, kRelu}, {3, 32, kRelu},
           {3, 32, kRelu},  {1, 32, kRelu}, {1, 1, kLinear}};
      break;
    case ConfigId::kH:
      l = {{13, 32, kRelu}, {3, 32, kRelu}, {3, 32, kRelu}, {3, 32, kRelu},
           {3, 32, kRelu},  {1, 32, kRelu}, {1, 1, kLinear}};
      break;
  }
  return config;
}

NetworkConfig reduced_width(const NetworkConfig& config, int max_channels) {
  if (max_channels < 1) throw ParameterError("max_channels must be positive");
  NetworkConfig out = config;
  for (std::size_t i = 0; i + 1 < out.layers.size(); ++i) {
    out.layers[i].out_channels = std::min(out.layers[i].out_channels, max_channels);
  }
  return out;
}

std::size_t parameter_count(const NetworkConfig& config) {
  std::size_t total = 0;
  int in = 1;
  for (const auto& spec : config.layers) {
    total += static_cast<std::size_t>(spec.kernel_size) * spec.kernel_size * in *
                 spec.out_channels +
             spec.out_channels;
    in = spec.out_channels;
  }
  return total;
}

std::size_t DetectorModel::parameter_count() const {
  std::size_t total = 0;
  for (const auto& layer : layers) total += layer.parameter_count();
  return total;
}

double DetectorModel::squared_norm() const {
  double total = 0.0;
  for (const auto& layer : layers) {
    for (double v : layer.kernels) total += v * v;
    for (double v : layer.biases) total += v * v;
  }
  return total;
}

std::vector<double> DetectorModel::parameters() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const auto& layer : layers) {
    out.insert(out.end(), layer.kernels.begin(), layer.kernels.end());
    out.insert(out.end(), layer.biases.begin(), layer.biases.end());
  }
  return out;
}

void DetectorModel::set_parameters(std::span<const double> values) {
  if (values.size() != parameter_count()) {
    throw DimensionError("parameter vector length does not match the model");
  }
  std::size_t pos = 0;
  for (auto& layer : layers) {
    std::copy_n(values.begin() + pos, layer.kernels.size(), layer.kernels.begin());
    pos += layer.kernels.size();
    std::copy_n(values.begin() + pos, layer.biases.size(), layer.biases.begin());
    pos += layer.biases.size();
  }
}

void DetectorModel::validate() const {
  if (layers.empty()) throw DimensionError("model has no layers");
  int in = 1;
  for (const auto& layer : layers) {
    layer.validate();
    if (layer.in_channels != in) throw DimensionError("layer channel counts do not chain");
    in = layer.out_channels;
  }
  if (in != 1) throw DimensionError("final layer must produce one channel");
}

DetectorModel build_network(const NetworkConfig& config, std::uint64_t seed) {
  if (config.layers.empty()) throw ParameterError("configuration has no layers");
  DetectorModel model;
  model.config = config;
  std::mt19937_64 rng(seed);
  int in = 1;
  for (const auto& spec : config.layers) {
    ConvLayer layer(spec.kernel_size, in, spec.out_channels, spec.activation);
    const double k2 = static_cast<double>(spec.kernel_size) * spec.kernel_size;
    const double limit = std::sqrt(6.0 / (k2 * in + k2 * spec.out_channels));
    std::uniform_real_distribution<double> uniform(-limit, limit);
    for (double& w : layer.kernels) w = uniform(rng);
    std::fill(layer.biases.begin(), layer.biases.end(), 0.1);
    model.layers.push_back(std::move(layer));
    in = spec.out_channels;
  }
  model.validate();
  return model;
}

DetectorModel build_network(ConfigId id, std::uint64_t seed) {
  return build_network(network_config(id), seed);
}

ValueGrid forward(const DetectorModel& model, const ValueGrid& image) {
  if (image.channels() != 1) throw DimensionError("detector input must be single-channel");
  ValueGrid current = image;
  for (const auto& layer : model.layers) current = conv2d(current, layer);
  return current;
}

LabelMask::LabelMask(int height, int width, std::vector<Pixel> positives)
    : height_(height), width_(width), positives_(std::move(positives)) {
  if (height <= 0 || width <= 0) throw DimensionError("label mask dimensions must be positive");
  std::sort(positives_.begin(), positives_.end(),
            [](const Pixel& a, const Pixel& b) { return std::tie(a.y, a.x) < std::tie(b.y, b.x); });
  positives_.erase(std::unique(positives_.begin(), positives_.end()), positives_.end());
  flags_.assign(static_cast<std::size_t>(height) * width, 0);
  for (const auto& p : positives_) {
    if (p.x < 0 || p.y < 0 || p.x >= width || p.y >= height) {
      throw DimensionError("label positive outside the image");
    }
    flags_[static_cast<std::size_t>(p.y) * width + p.x] = 1;
  }
}

double clip_activation(double raw, bool positive) {
  if (positive) return std::min(std::max(kClipEpsilon, raw), 1.0);
  return std::min(std::max(0.0, raw), 1.0 - kClipEpsilon);
}

namespace {

void check_mask(const ValueGrid& response, const LabelMask& mask) {
  if (response.height() != mask.height() || response.width() != mask.width()) {
    throw DimensionError("label mask does not match image dimensions");
  }
}

// Per-pixel data loss and d(loss)/d(raw). The derivative is zero wherever the
// clip is saturated.
struct PixelTerm {
  double value;
  double grad;
};

PixelTerm positive_term(double raw, double weight) {
  const double a = clip_activation(raw, true);
  const double value = -weight * (1.0 - a) * std::log(a);
  const bool saturated = raw < kClipEpsilon || raw > 1.0;
  const double grad = saturated ? 0.0 : weight * (std::log(a) - (1.0 - a) / a);
  return {value, grad};
}

PixelTerm negative_term(double raw, double weight) {
  const double a = clip_activation(raw, false);
  const double value = -weight * a * std::log(1.0 - a);
  const bool saturated = raw < 0.0 || raw > 1.0 - kClipEpsilon;
  const double grad = saturated ? 0.0 : weight * (-std::log(1.0 - a) + a / (1.0 - a));
  return {value, grad};
}

double data_loss_and_grad(const ValueGrid& response, const LabelMask& mask, ValueGrid* grad) {
  check_mask(response, mask);
  const double wp = mask.positive_count() > 0 ? 1.0 / mask.positive_count() : 0.0;
  const double wn = mask.negative_count() > 0 ? 1.0 / mask.negative_count() : 0.0;
  double pos_total = 0.0;
  double neg_total = 0.0;
  for (int y = 0; y < response.height(); ++y) {
    for (int x = 0; x < response.width(); ++x) {
      const double raw = response.at(y, x);
      const PixelTerm term =
          mask.is_positive(x, y) ? positive_term(raw, wp) : negative_term(raw, wn);
      (mask.is_positive(x, y) ? pos_total : neg_total) += term.value;
      if (grad != nullptr) grad->at(y, x) = term.grad;
    }
  }
  return pos_total + neg_total;
}

}  // namespace

double data_loss(const ValueGrid& response, const LabelMask& mask) {
  return data_loss_and_grad(response, mask, nullptr);
}

double loss(const DetectorModel& model, const ValueGrid& image, const LabelMask& mask,
            double lambda) {
  if (image.height() != mask.height() || image.width() != mask.width()) {
    throw DimensionError("label mask does not match image dimensions");
  }
  return 0.5 * lambda * model.squared_norm() + data_loss(forward(model, image), mask);
}

LossGradient loss_gradients(const DetectorModel& model, std::span<const TrainingSample> batch,
                            double lambda) {
  if (batch.empty()) throw ParameterError("loss_gradients needs a nonempty batch");
  model.validate();
  const std::size_t n_layers = model.layers.size();

  // Per-layer gradient views into one flat buffer.
  std::vector<double> flat(model.parameter_count(), 0.0);
  std::vector<std::span<double>> kernel_grads;
  std::vector<std::span<double>> bias_grads;
  {
    std::size_t pos = 0;
    for (const auto& layer : model.layers) {
      kernel_grads.emplace_back(flat.data() + pos, layer.kernels.size());
      pos += layer.kernels.size();
      bias_grads.emplace_back(flat.data() + pos, layer.biases.size());
      pos += layer.biases.size();
    }
  }

  double data_total = 0.0;
  std::vector<ValueGrid> activations(n_layers + 1);
  for (const auto& sample : batch) {
    if (sample.image.channels() != 1) throw DimensionError("training images must be single-channel");
    activations[0] = sample.image;
    for (std::size_t l = 0; l < n_layers; ++l) {
      activations[l + 1] = conv2d(activations[l], model.layers[l]);
    }
    const ValueGrid& response = activations[n_layers];
    ValueGrid grad(1, response.height(), response.width());
    data_total += data_loss_and_grad(response, sample.mask, &grad);

    for (std::size_t l = n_layers; l-- > 0;) {
      const ConvLayer& layer = model.layers[l];
      if (layer.activation == Activation::kRelu) {
        auto g = grad.values();
        const auto out = activations[l + 1].values();
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (out[i] <= 0.0) g[i] = 0.0;
        }
      }
      ValueGrid input_grad;
      conv2d_backward(activations[l], layer, grad, kernel_grads[l], bias_grads[l],
                      l > 0 ? &input_grad : nullptr);
      if (l > 0) grad = std::move(input_grad);
    }
  }

  const double inv_n = 1.0 / static_cast<double>(batch.size());
  const auto params = model.parameters();
  for (std::size_t i = 0; i < flat.size(); ++i) flat[i] = flat[i] * inv_n + lambda * params[i];

  LossGradient result;
  result.loss = 0.5 * lambda * model.squared_norm() + data_total * inv_n;
  result.gradient = std::move(flat);
  return result;
}

void sgd_step(DetectorModel& model, std::span<const double> gradient, MomentumState& state,
              double lr, double momentum) {
  const std::size_t n = model.parameter_count();
  if (gradient.size() != n) throw DimensionError("gradient does not match the model");
  if (state.velocity.empty()) state.velocity.assign(n, 0.0);
  if (state.velocity.size() != n) throw DimensionError("velocity does not match the model");

  auto params = model.parameters();
  for (std::size_t i = 0; i < n; ++i) {
    state.velocity[i] = momentum * state.velocity[i] - lr * gradient[i];
    params[i] += state.velocity[i];
  }
  model.set_parameters(params);
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ParameterError("batch_size must be at least 1");
  if (!(momentum > 0.0) || !(lr0 > 0.0) || !(lambda_reg > 0.0)) {
    throw ParameterError("training rates must be positive");
  }
  if (decay_rate < 0.0) throw ParameterError("decay_rate must be nonnegative");
  if (epochs < 0) throw ParameterError("epochs must be nonnegative");
  if (max_grad_norm < 0.0) throw ParameterError("max_grad_norm must be nonnegative");
}

void clip_gradient_norm(std::span<double> gradient, double max_norm) {
  if (max_norm <= 0.0) return;
  double sq = 0.0;
  for (double g : gradient) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (double& g : gradient) g *= scale;
  }
}

double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw ParameterError("epoch must be nonnegative");
  return cfg.lr0 * std::exp(-cfg.decay_rate * epoch);
}

TrainResult train(std::span<const TrainingSample> dataset, const NetworkConfig& config,
                   const TrainConfig& cfg, const EpochCallback& on_epoch) {
  if (dataset.empty()) throw ParameterError("training dataset is empty");
  cfg.validate();
  for (const auto& sample : dataset) {
    if (sample.image.channels() != 1) throw DimensionError("training images must be single-channel");
  }

  TrainResult result{build_network(config, cfg.seed), {}};
  // Shuffling draws from its own stream so initialization and ordering are independent.
  std::mt19937_64 shuffle_rng(cfg.seed ^ 0x9E3779B97F4A7C15ull);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  MomentumState state;
  std::vector<TrainingSample> batch;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    const double lr = lr_at(epoch, cfg);
    double epoch_total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      batch.clear();
      for (std::size_t i = start; i < stop; ++i) batch.push_back(dataset[order[i]]);
      LossGradient lg = loss_gradients(result.model, batch, cfg.lambda_reg);
      epoch_total += lg.loss * static_cast<double>(batch.size());
      clip_gradient_norm(lg.gradient, cfg.max_grad_norm);
      sgd_step(result.model, lg.gradient, state, lr, cfg.momentum);
    }
    const double mean = epoch_total / static_cast<double>(dataset.size());
    result.epoch_loss.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean);
  }
  return result;
}

TrainResult train(std::span<const TrainingSample> dataset, ConfigId id, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  return train(dataset, network_config(id), cfg, on_epoch);
}

void save_model(const std::filesystem::path& path, const DetectorModel& model) {
  model.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "RCDN1 " << to_string(model.config.id) << ' ' << model.layers.size() << '\n';
  for (const auto& layer : model.layers) {
    out << "conv " << layer.kernel_size << ' ' << layer.in_channels << ' ' << layer.out_channels
        << ' ' << to_string(layer.activation) << '\n';
    for (double v : layer.kernels) detail::write_f32_le(out, v);
    for (double v : layer.biases) detail::write_f32_le(out, v);
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

namespace {

std::string read_header_line(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("truncated model file");
  return line;
}

}  // namespace

DetectorModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());

  std::istringstream head(read_header_line(in));
  std::string magic, id_text;
  int layer_count = 0;
  if (!(head >> magic) || magic != "RCDN1") throw FormatError("bad model magic");
  if (!(head >> id_text >> layer_count) || layer_count <= 0) {
    throw FormatError("malformed model header");
  }

  DetectorModel model;
  try {
    model.config.id = parse_config_id(id_text);
  } catch (const ParameterError&) {
    throw FormatError("unknown configuration id in model file: " + id_text);
  }
  int expected_in = 1;
  for (int l = 0; l < layer_count; ++l) {
    std::istringstream fields(read_header_line(in));
    std::string tag, act;
    int k = 0, cin = 0, cout = 0;
    if (!(fields >> tag >> k >> cin >> cout >> act) || tag != "conv") {
      throw FormatError("malformed layer header");
    }
    if (k <= 0 || k % 2 == 0 || cin <= 0 || cout <= 0) {
      throw FormatError("invalid layer dimensions in model file");
    }
    if (cin != expected_in) throw FormatError("layer dimensions do not chain in model file");
    ConvLayer layer(k, cin, cout, parse_activation(act));
    for (double& v : layer.kernels) v = detail::read_f32_le(in);
    for (double& v : layer.biases) v = detail::read_f32_le(in);
    model.config.layers.push_back({k, cout, layer.activation});
    model.layers.push_back(std::move(layer));
    expected_in = cout;
  }
  if (expected_in != 1) throw FormatError("final layer must produce one channel");
  return model;
}

}  // namespace xcorner
