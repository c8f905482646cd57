#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "xcorner/grid.hpp"

namespace xcorner {

/// Detector network families. D1/D3 differ in the final kernel size, E16/E32
/// in the width of the first layer.
enum class ConfigId { kA, kB, kC, kD1, kD3, kE16, kE32, kF, kG, kH };

std::string to_string(ConfigId id);
/// Accepts the canonical names plus the aliases "D" (D1) and "E" (E32).
/// Throws ParameterError for anything else.
ConfigId parse_config_id(const std::string& text);
std::vector<ConfigId> all_config_ids();

struct LayerSpec {
  int kernel_size;
  int out_channels;
  Activation activation;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct NetworkConfig {
  ConfigId id = ConfigId::kA;
  std::vector<LayerSpec> layers;

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

NetworkConfig network_config(ConfigId id);

/// Same layer sequence with every hidden layer capped at max_channels.
/// Used for cheap gradient checks of the larger families.
NetworkConfig reduced_width(const NetworkConfig& config, int max_channels);

/// Total kernel + bias count of a single-channel-input network.
std::size_t parameter_count(const NetworkConfig& config);

class DetectorModel {
 public:
  NetworkConfig config;
  std::vector<ConvLayer> layers;

  std::size_t parameter_count() const;
  /// Sum of squared kernels and biases.
  double squared_norm() const;
  /// Kernels then biases, layer by layer.
  std::vector<double> parameters() const;
  void set_parameters(std::span<const double> values);
  /// Throws DimensionError if the layers do not chain from one input channel
  /// down to one output channel.
  void validate() const;

  friend bool operator==(const DetectorModel&, const DetectorModel&) = default;
};

/// Xavier-uniform kernels, biases 0.1. Deterministic per seed.
DetectorModel build_network(const NetworkConfig& config, std::uint64_t seed);
DetectorModel build_network(ConfigId id, std::uint64_t seed);

/// Raw single-channel response map, same size as the image. No output clipping.
ValueGrid forward(const DetectorModel& model, const ValueGrid& image);

/// Per-pixel ground truth: one positive pixel per visible corner.
class LabelMask {
 public:
  LabelMask() = default;
  /// Positives are deduplicated; throws DimensionError if any lies outside.
  LabelMask(int height, int width, std::vector<Pixel> positives);

  int height() const { return height_; }
  int width() const { return width_; }
  const std::vector<Pixel>& positives() const { return positives_; }
  std::size_t positive_count() const { return positives_.size(); }
  std::size_t negative_count() const {
    return static_cast<std::size_t>(height_) * width_ - positives_.size();
  }
  bool is_positive(int x, int y) const {
    return flags_[static_cast<std::size_t>(y) * width_ + x] != 0;
  }

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<Pixel> positives_;
  std::vector<unsigned char> flags_;
};

inline constexpr double kClipEpsilon = 1e-6;

/// Positives clip to [1e-6, 1], negatives to [0, 1 - 1e-6].
double clip_activation(double raw, bool positive);

/// Total loss of one image: 0.5 lambda |w|^2 plus the inverse-frequency
/// weighted focal terms over positive and negative pixels.
double loss(const DetectorModel& model, const ValueGrid& image, const LabelMask& mask,
            double lambda);

/// Focal data terms only, evaluated on a precomputed response map.
double data_loss(const ValueGrid& response, const LabelMask& mask);

struct TrainingSample {
  ValueGrid image;
  LabelMask mask;
};

struct LossGradient {
  double loss = 0.0;              ///< batch mean of loss()
  std::vector<double> gradient;   ///< same layout as DetectorModel::parameters()
};

/// Exact gradient of the batch-mean loss. Saturated clips contribute zero.
LossGradient loss_gradients(const DetectorModel& model, std::span<const TrainingSample> batch,
                            double lambda);

struct MomentumState {
  std::vector<double> velocity;
};

/// Classical momentum: v <- momentum v - lr g; w <- w + v.
void sgd_step(DetectorModel& model, std::span<const double> gradient, MomentumState& state,
              double lr, double momentum);

struct TrainConfig {
  int batch_size = 20;
  double momentum = 0.9;
  double lr0 = 0.01;
  double decay_rate = 0.01;
  double lambda_reg = 0.01;
  int epochs = 5;
  std::uint64_t seed = 1;
  /// L2 cap on each batch gradient before the momentum update; 0 disables.
  double max_grad_norm = 1.0;

  void validate() const;
};

/// Rescales gradient in place so its L2 norm is at most max_norm (0 = no-op).
void clip_gradient_norm(std::span<double> gradient, double max_norm);

/// lr0 * exp(-decay_rate * epoch).
double lr_at(int epoch, const TrainConfig& cfg);

struct TrainResult {
  DetectorModel model;
  std::vector<double> epoch_loss;  ///< mean per-image loss seen during each epoch
};

using EpochCallback = std::function<void(int epoch, double mean_loss)>;

TrainResult train(std::span<const TrainingSample> dataset, const NetworkConfig& config,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {});
TrainResult train(std::span<const TrainingSample> dataset, ConfigId id, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

/// Model file: "RCDN1 <config_id> <layer_count>\n", then per layer
/// "conv <k> <in> <out> <activation>\n" and little-endian float32 kernels
/// followed by biases.
void save_model(const std::filesystem::path& path, const DetectorModel& model);
DetectorModel load_model(const std::filesystem::path& path);

}  // namespace xcorner
