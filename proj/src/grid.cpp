#include "xcorner/grid.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>

namespace xcorner {

double distance(const Point2& a, const Point2& b) { return std::hypot(a.x - b.x, a.y - b.y); }

ValueGrid::ValueGrid(int channels, int height, int width, double fill)
    : channels_(channels), height_(height), width_(width) {
  if (channels <= 0 || height <= 0 || width <= 0) {
    throw DimensionError("ValueGrid dimensions must be positive");
  }
  data_.assign(static_cast<std::size_t>(channels) * height * width, fill);
}

bool ValueGrid::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

const char* to_string(Activation activation) {
  return activation == Activation::kRelu ? "relu" : "linear";
}

Activation parse_activation(const std::string& text) {
  if (text == "relu") return Activation::kRelu;
  if (text == "linear") return Activation::kLinear;
  throw FormatError("unknown activation '" + text + "'");
}

ConvLayer::ConvLayer(int kernel_size_, int in_channels_, int out_channels_, Activation activation_)
    : kernel_size(kernel_size_),
      in_channels(in_channels_),
      out_channels(out_channels_),
      activation(activation_) {
  if (kernel_size <= 0 || kernel_size % 2 == 0) {
    throw ParameterError("kernel size must be odd and positive");
  }
  if (in_channels <= 0 || out_channels <= 0) {
    throw ParameterError("channel counts must be positive");
  }
  kernels.assign(static_cast<std::size_t>(out_channels) * in_channels * kernel_size * kernel_size,
                 0.0);
  biases.assign(out_channels, 0.0);
}

void ConvLayer::validate() const {
  if (kernel_size <= 0 || kernel_size % 2 == 0) {
    throw ParameterError("kernel size must be odd and positive");
  }
  if (in_channels <= 0 || out_channels <= 0) {
    throw ParameterError("channel counts must be positive");
  }
  const auto expected =
      static_cast<std::size_t>(out_channels) * in_channels * kernel_size * kernel_size;
  if (kernels.size() != expected || biases.size() != static_cast<std::size_t>(out_channels)) {
    throw DimensionError("layer arrays do not match declared dimensions");
  }
}

namespace {

// Rows/cols of the output for which the input sample at offset d stays inside [0, n).
struct Span1 {
  int begin;
  int end;
};

Span1 valid_range(int n, int d) { return {std::max(0, -d), std::min(n, n - d)}; }

}  // namespace

ValueGrid conv2d(const ValueGrid& input, const ConvLayer& layer) {
  layer.validate();
  if (input.channels() != layer.in_channels) {
    throw DimensionError("conv2d: input has " + std::to_string(input.channels()) +
                         " channels, layer expects " + std::to_string(layer.in_channels));
  }
  const int h = input.height();
  const int w = input.width();
  const int k = layer.kernel_size;
  const int r = k / 2;
  ValueGrid out(layer.out_channels, h, w);

  for (int o = 0; o < layer.out_channels; ++o) {
    auto out_plane = out.plane(o);
    std::fill(out_plane.begin(), out_plane.end(), layer.biases[o]);
    for (int i = 0; i < layer.in_channels; ++i) {
      const auto in_plane = input.plane(i);
      for (int ky = 0; ky < k; ++ky) {
        const int dy = ky - r;
        const auto rows = valid_range(h, dy);
        for (int kx = 0; kx < k; ++kx) {
          const double wgt = layer.weight(o, i, ky, kx);
          if (wgt == 0.0) continue;
          const int dx = kx - r;
          const auto cols = valid_range(w, dx);
          for (int y = rows.begin; y < rows.end; ++y) {
            double* dst = out_plane.data() + static_cast<std::size_t>(y) * w;
            const double* src = in_plane.data() + static_cast<std::size_t>(y + dy) * w + dx;
            for (int x = cols.begin; x < cols.end; ++x) dst[x] += wgt * src[x];
          }
        }
      }
    }
  }
  if (layer.activation == Activation::kRelu) {
    for (double& v : out.values()) v = std::max(0.0, v);
  }
  return out;
}

void conv2d_backward(const ValueGrid& input, const ConvLayer& layer, const ValueGrid& output_grad,
                     std::span<double> kernel_grad, std::span<double> bias_grad,
                     ValueGrid* input_grad) {
  const int h = input.height();
  const int w = input.width();
  const int k = layer.kernel_size;
  const int r = k / 2;
  if (output_grad.channels() != layer.out_channels || output_grad.height() != h ||
      output_grad.width() != w || input.channels() != layer.in_channels) {
    throw DimensionError("conv2d_backward: shape mismatch");
  }
  if (kernel_grad.size() != layer.kernels.size() || bias_grad.size() != layer.biases.size()) {
    throw DimensionError("conv2d_backward: gradient buffers do not match layer");
  }
  if (input_grad != nullptr) *input_grad = ValueGrid(layer.in_channels, h, w);

  for (int o = 0; o < layer.out_channels; ++o) {
    const auto g_plane = output_grad.plane(o);
    double bias_sum = 0.0;
    for (double g : g_plane) bias_sum += g;
    bias_grad[o] += bias_sum;

    for (int i = 0; i < layer.in_channels; ++i) {
      const auto in_plane = input.plane(i);
      for (int ky = 0; ky < k; ++ky) {
        const int dy = ky - r;
        const auto rows = valid_range(h, dy);
        for (int kx = 0; kx < k; ++kx) {
          const int dx = kx - r;
          const auto cols = valid_range(w, dx);
          const std::size_t widx =
              ((static_cast<std::size_t>(o) * layer.in_channels + i) * k + ky) * k + kx;
          double acc = 0.0;
          for (int y = rows.begin; y < rows.end; ++y) {
            const double* g = g_plane.data() + static_cast<std::size_t>(y) * w;
            const double* src = in_plane.data() + static_cast<std::size_t>(y + dy) * w + dx;
            for (int x = cols.begin; x < cols.end; ++x) acc += g[x] * src[x];
          }
          kernel_grad[widx] += acc;

          if (input_grad != nullptr) {
            const double wgt = layer.kernels[widx];
            auto dst_plane = input_grad->plane(i);
            for (int y = rows.begin; y < rows.end; ++y) {
              const double* g = g_plane.data() + static_cast<std::size_t>(y) * w;
              double* dst = dst_plane.data() + static_cast<std::size_t>(y + dy) * w + dx;
              for (int x = cols.begin; x < cols.end; ++x) dst[x] += wgt * g[x];
            }
          }
        }
      }
    }
  }
}

ValueGrid relu(const ValueGrid& input) {
  ValueGrid out = input;
  for (double& v : out.values()) v = std::max(0.0, v);
  return out;
}

std::array<double, 9> gaussian_kernel_3x3(double variance) {
  if (!(variance > 0.0)) throw ParameterError("blur variance must be positive");
  std::array<double, 9> kernel{};
  double total = 0.0;
  for (int dy = -1; dy <= 1; ++dy) {
    for (int dx = -1; dx <= 1; ++dx) {
      const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * variance));
      kernel[(dy + 1) * 3 + (dx + 1)] = v;
      total += v;
    }
  }
  for (double& v : kernel) v /= total;
  return kernel;
}

ValueGrid gaussian_blur_3x3(const ValueGrid& image, double variance) {
  if (image.channels() != 1) throw DimensionError("gaussian_blur_3x3 expects one channel");
  const auto kernel = gaussian_kernel_3x3(variance);
  const int h = image.height();
  const int w = image.width();
  ValueGrid out(1, h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int dy = -1; dy <= 1; ++dy) {
        const int yy = std::clamp(y + dy, 0, h - 1);
        for (int dx = -1; dx <= 1; ++dx) {
          const int xx = std::clamp(x + dx, 0, w - 1);
          acc += kernel[(dy + 1) * 3 + (dx + 1)] * image.at(yy, xx);
        }
      }
      out.at(y, x) = acc;
    }
  }
  return out;
}

ValueGrid gaussian_blur(const ValueGrid& image, double sigma) {
  if (image.channels() != 1) throw DimensionError("gaussian_blur expects one channel");
  if (!(sigma > 0.0)) throw ParameterError("blur sigma must be positive");
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> taps(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    taps[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    total += taps[i + radius];
  }
  for (double& t : taps) t /= total;

  const int h = image.height();
  const int w = image.width();
  ValueGrid tmp(1, h, w);
  ValueGrid out(1, h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        acc += taps[i + radius] * image.at(y, std::clamp(x + i, 0, w - 1));
      }
      tmp.at(y, x) = acc;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        acc += taps[i + radius] * tmp.at(std::clamp(y + i, 0, h - 1), x);
      }
      out.at(y, x) = acc;
    }
  }
  return out;
}

namespace {

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string next_pnm_token(std::istream& in) {
  std::string token;
  while (true) {
    const int c = in.peek();
    if (c == EOF) break;
    if (c == '#') {
      std::string ignored;
      std::getline(in, ignored);
      continue;
    }
    if (std::isspace(c)) {
      if (!token.empty()) break;
      in.get();
      continue;
    }
    token.push_back(static_cast<char>(in.get()));
  }
  return token;
}

int parse_positive(const std::string& token, const char* what) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(token, &used);
    if (used != token.size() || v <= 0) throw FormatError("");
    return v;
  } catch (const std::exception&) {
    throw FormatError(std::string("malformed graymap header: bad ") + what);
  }
}

}  // namespace

ValueGrid load_gray(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  if (next_pnm_token(in) != "P5") throw FormatError("not a binary P5 graymap: " + path.string());
  const int width = parse_positive(next_pnm_token(in), "width");
  const int height = parse_positive(next_pnm_token(in), "height");
  const int maxval = parse_positive(next_pnm_token(in), "maxval");
  if (maxval != 255) throw FormatError("only 8-bit graymaps are supported");
  in.get();  // single whitespace byte before the raster

  std::vector<unsigned char> raster(static_cast<std::size_t>(width) * height);
  in.read(reinterpret_cast<char*>(raster.data()), static_cast<std::streamsize>(raster.size()));
  if (in.gcount() != static_cast<std::streamsize>(raster.size())) {
    throw FormatError("truncated graymap payload: " + path.string());
  }
  ValueGrid image(1, height, width);
  auto values = image.values();
  for (std::size_t i = 0; i < raster.size(); ++i) values[i] = raster[i] / 255.0;
  return image;
}

void save_gray(const std::filesystem::path& path, const ValueGrid& image) {
  if (image.channels() != 1) throw DimensionError("save_gray expects one channel");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << image.width() << ' ' << image.height() << "\n255\n";
  std::vector<unsigned char> raster(image.size());
  const auto values = image.values();
  for (std::size_t i = 0; i < raster.size(); ++i) {
    const double v = std::clamp(values[i], 0.0, 1.0) * 255.0;
    raster[i] = static_cast<unsigned char>(std::floor(v + 0.5));
  }
  out.write(reinterpret_cast<const char*>(raster.data()),
            static_cast<std::streamsize>(raster.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

namespace detail {

void write_f32_le(std::ostream& out, double value) {
  const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(value));
  const char bytes[4] = {static_cast<char>(bits & 0xFFu), static_cast<char>((bits >> 8) & 0xFFu),
                         static_cast<char>((bits >> 16) & 0xFFu),
                         static_cast<char>((bits >> 24) & 0xFFu)};
  out.write(bytes, 4);
}

float read_f32_le(std::istream& in) {
  unsigned char bytes[4];
  in.read(reinterpret_cast<char*>(bytes), 4);
  if (in.gcount() != 4) throw FormatError("truncated float payload");
  const std::uint32_t bits = static_cast<std::uint32_t>(bytes[0]) |
                             (static_cast<std::uint32_t>(bytes[1]) << 8) |
                             (static_cast<std::uint32_t>(bytes[2]) << 16) |
                             (static_cast<std::uint32_t>(bytes[3]) << 24);
  return std::bit_cast<float>(bits);
}

}  // namespace detail

void save_grid_dump(const std::filesystem::path& path, const ValueGrid& grid) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "GRID " << grid.channels() << ' ' << grid.height() << ' ' << grid.width() << '\n';
  for (double v : grid.values()) detail::write_f32_le(out, v);
}

ValueGrid load_grid_dump(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string header;
  std::getline(in, header);
  std::istringstream fields(header);
  std::string magic;
  int c = 0, h = 0, w = 0;
  if (!(fields >> magic >> c >> h >> w) || magic != "GRID" || c <= 0 || h <= 0 || w <= 0) {
    throw FormatError("malformed grid dump header");
  }
  ValueGrid grid(c, h, w);
  for (double& v : grid.values()) v = detail::read_f32_le(in);
  return grid;
}

}  // namespace xcorner
