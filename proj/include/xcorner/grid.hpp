#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace xcorner {

/// Raised when array shapes or channel counts disagree.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for out-of-range numeric parameters.
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for malformed or truncated files.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Real-valued image coordinate. x is the column, y the row; (0,0) is the
/// center of the top-left pixel.
struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
};

double distance(const Point2& a, const Point2& b);

struct Pixel {
  int x = 0;
  int y = 0;

  friend auto operator<=>(const Pixel&, const Pixel&) = default;
};

/// Dense channels x height x width array in row-major [channel][row][col]
/// order. Holds images, hidden feature maps and response maps alike.
class ValueGrid {
 public:
  ValueGrid() = default;
  ValueGrid(int channels, int height, int width, double fill = 0.0);

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return data_.size(); }
  std::size_t plane_size() const {
    return static_cast<std::size_t>(height_) * static_cast<std::size_t>(width_);
  }
  bool empty() const { return data_.empty(); }

  double& operator()(int c, int y, int x) { return data_[index(c, y, x)]; }
  double operator()(int c, int y, int x) const { return data_[index(c, y, x)]; }

  /// Single-channel shorthand.
  double& at(int y, int x) { return data_[index(0, y, x)]; }
  double at(int y, int x) const { return data_[index(0, y, x)]; }

  bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }

  std::span<double> plane(int c) { return {data_.data() + c * plane_size(), plane_size()}; }
  std::span<const double> plane(int c) const {
    return {data_.data() + c * plane_size(), plane_size()};
  }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  /// True when every value is finite.
  bool all_finite() const;

  friend bool operator==(const ValueGrid&, const ValueGrid&) = default;

 private:
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
  }

  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

enum class Activation { kRelu, kLinear };

const char* to_string(Activation activation);
Activation parse_activation(const std::string& text);

/// One stride-1, zero-padded convolution layer. Kernels are stored
/// [out][in][ky][kx].
struct ConvLayer {
  int kernel_size = 1;
  int in_channels = 1;
  int out_channels = 1;
  std::vector<double> kernels;
  std::vector<double> biases;
  Activation activation = Activation::kLinear;

  ConvLayer() = default;
  /// Zero-initialized layer. Throws ParameterError for even or nonpositive sizes.
  ConvLayer(int kernel_size, int in_channels, int out_channels, Activation activation);

  double& weight(int out, int in, int ky, int kx) {
    return kernels[((static_cast<std::size_t>(out) * in_channels + in) * kernel_size + ky) *
                       kernel_size +
                   kx];
  }
  double weight(int out, int in, int ky, int kx) const {
    return kernels[((static_cast<std::size_t>(out) * in_channels + in) * kernel_size + ky) *
                       kernel_size +
                   kx];
  }

  std::size_t parameter_count() const { return kernels.size() + biases.size(); }

  /// Throws DimensionError / ParameterError when the declared shape and the
  /// stored arrays disagree.
  void validate() const;

  friend bool operator==(const ConvLayer&, const ConvLayer&) = default;
};

/// Zero-padded cross-correlation plus bias, followed by the layer activation.
/// Output keeps the input's height and width.
ValueGrid conv2d(const ValueGrid& input, const ConvLayer& layer);

/// Gradients of a conv2d call given dLoss/d(pre-activation output).
/// Accumulates into kernel_grad / bias_grad (sized like the layer). When
/// input_grad is non-null it is overwritten with dLoss/d(input).
void conv2d_backward(const ValueGrid& input, const ConvLayer& layer, const ValueGrid& output_grad,
                     std::span<double> kernel_grad, std::span<double> bias_grad,
                     ValueGrid* input_grad);

ValueGrid relu(const ValueGrid& input);

/// Normalized 3x3 weights w(dx,dy) ~ exp(-(dx^2+dy^2) / (2 variance)), row-major.
std::array<double, 9> gaussian_kernel_3x3(double variance);

/// 3x3 Gaussian blur with edge replication. Single-channel input only.
ValueGrid gaussian_blur_3x3(const ValueGrid& image, double variance);

/// Separable Gaussian blur with edge replication, radius ceil(3 sigma).
ValueGrid gaussian_blur(const ValueGrid& image, double sigma);

/// Reads an 8-bit binary P5 graymap into [0,1].
ValueGrid load_gray(const std::filesystem::path& path);
/// Writes a single-channel grid as P5: clamp to [0,1], scale by 255, round half up.
void save_gray(const std::filesystem::path& path, const ValueGrid& image);

/// Raw dump: "GRID c h w\n" then little-endian float32 values.
void save_grid_dump(const std::filesystem::path& path, const ValueGrid& grid);
ValueGrid load_grid_dump(const std::filesystem::path& path);

namespace detail {
void write_f32_le(std::ostream& out, double value);
float read_f32_le(std::istream& in);
}  // namespace detail

}  // namespace xcorner
