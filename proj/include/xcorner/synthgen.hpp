#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "xcorner/grid.hpp"
#include "xcorner/xnet.hpp"

namespace xcorner {

/// 64-bit finalizer (splitmix64) used to derive per-item seeds.
std::uint64_t mix_seed(std::uint64_t value);
/// Per-image seed: finalizer applied to (master XOR index).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

inline constexpr double kDarkLevel = 64.0 / 255.0;
inline constexpr double kLightLevel = 191.0 / 255.0;
inline constexpr double kBandLevel = 128.0 / 255.0;
inline constexpr double kDefaultBlurVariance = 0.675;

/// One X-corner filling the whole frame.
struct CornerSceneSpec {
  int image_size = 41;
  double rotation_deg = 0.0;  ///< [0, 90]
  double skew_deg = 0.0;      ///< [0, 70]
  double noise_std = 0.0;     ///< [0, 100], 8-bit intensity units
  bool apply_blur = true;
  double blur_variance = kDefaultBlurVariance;
  bool transition_band = true;
  Point2 subpixel_shift;      ///< each component in [-0.5, 0.5)
  std::uint64_t seed = 0;

  void validate() const;
};

struct GroundTruth {
  std::vector<Point2> corners;
  std::vector<bool> occluded;  ///< parallel to corners
  LabelMask mask;              ///< rounded visible corners

  std::vector<Point2> visible_corners() const;
};

struct SceneRender {
  ValueGrid image;
  GroundTruth truth;
};

SceneRender render_corner(const CornerSceneSpec& spec);

/// Brown radial/tangential lens distortion coefficients.
struct Distortion {
  double k1 = 0.0;
  double k2 = 0.0;
  double p1 = 0.0;
  double p2 = 0.0;

  bool is_identity() const { return k1 == 0.0 && k2 == 0.0 && p1 == 0.0 && p2 == 0.0; }
};

/// Maps an undistorted pixel to its distorted position. Coordinates are
/// normalized by (p - center) / focal before the polynomial is applied.
Point2 apply_distortion(const Point2& point, const Point2& center, double focal,
                        const Distortion& d);
/// Inverse of apply_distortion by fixed-point iteration.
Point2 remove_distortion(const Point2& point, const Point2& center, double focal,
                         const Distortion& d);

struct PixelRect {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  bool contains(const Point2& p, double pad = 0.0) const {
    return p.x >= x - pad && p.y >= y - pad && p.x <= x + w - 1 + pad && p.y <= y + h - 1 + pad;
  }
};

/// Checkerboard with rows x cols inner corners ((rows+1) x (cols+1) squares).
struct BoardSceneSpec {
  int width = 64;
  int height = 64;
  int rows = 3;
  int cols = 3;
  double square_px = 10.0;
  Point2 center_offset;          ///< board center relative to the image center
  double rotation_deg = 0.0;
  double skew_deg = 0.0;
  double noise_std = 0.0;        ///< 8-bit units
  double blur_variance = 0.0;    ///< 0 disables blur
  bool invert = false;
  Distortion distortion;
  std::optional<PixelRect> occlusion;
  double dark_level = kDarkLevel;
  double light_level = kLightLevel;
  double background_level = kLightLevel;
  int margin = 13;
  std::uint64_t seed = 0;

  /// Virtual camera focal length for skew; twice the larger image side.
  double skew_focal() const { return 2.0 * std::max(width, height); }
  /// Distortion normalization; the larger image side.
  double distortion_focal() const { return static_cast<double>(std::max(width, height)); }
  Point2 image_center() const { return {(width - 1) / 2.0, (height - 1) / 2.0}; }

  void validate() const;
};

/// Corners are listed row-major (row index j, column index i).
SceneRender render_board(const BoardSceneSpec& spec);

/// Ground-truth corner positions only (no pixels). Throws like render_board.
std::vector<Point2> board_corner_positions(const BoardSceneSpec& spec);

/// Additive zero-mean Gaussian noise, std in 8-bit units; optional clamp to [0,1].
void add_gaussian_noise(ValueGrid& image, double noise_std, std::mt19937_64& rng,
                        bool clamp = true);

/// Sampling ranges for generated training boards.
struct BoardDistribution {
  int width = 64;
  int height = 64;
  int rows_min = 2, rows_max = 4;
  int cols_min = 2, cols_max = 4;
  double square_min = 7.0, square_max = 12.0;
  double rotation_max = 360.0;
  double skew_max = 40.0;
  double noise_max = 10.0;
  double invert_probability = 0.5;
  double blur_probability = 0.5;
  double distortion_probability = 0.5;
  double k1_max = 0.3, k2_max = 0.05, p_max = 0.01;
  double occlusion_probability = 0.0;
};

struct GeneratedBoard {
  BoardSceneSpec spec;
  SceneRender render;
};

/// Deterministic sample `index` of the distribution under `master_seed`.
GeneratedBoard generate_board(const BoardDistribution& dist, std::uint64_t master_seed,
                              std::uint64_t index);

struct ManifestRow {
  std::string filename;
  int rows = 0;
  int cols = 0;
  double square_px = 0.0;
  double rotation_deg = 0.0;
  double skew_deg = 0.0;
  double noise_std = 0.0;
  bool invert = false;
  Distortion distortion;
  bool occluded = false;
};

inline constexpr const char* kManifestName = "manifest.csv";

/// "img_%05d".
std::string image_stem(int index);

/// Subpixel corners as "x,y" with six decimals.
void write_truth_csv(const std::filesystem::path& path, const std::vector<Point2>& corners);

/// <stem>.pgm, <stem>.labels.csv (mask pixels), <stem>.truth.csv (visible corners).
void save_sample(const std::filesystem::path& dir, const std::string& stem,
                 const SceneRender& render);

/// Writes count samples via save_sample plus manifest.csv.
std::vector<ManifestRow> build_dataset(int count, const BoardDistribution& dist,
                                       std::uint64_t seed, const std::filesystem::path& out_dir);

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows);
std::vector<ManifestRow> read_manifest(const std::filesystem::path& path);

void write_label_csv(const std::filesystem::path& path, const LabelMask& mask);
std::vector<Pixel> read_label_csv(const std::filesystem::path& path);

/// Loads every manifest entry of a dataset directory as a training sample.
std::vector<TrainingSample> load_dataset(const std::filesystem::path& dir);

}  // namespace xcorner
