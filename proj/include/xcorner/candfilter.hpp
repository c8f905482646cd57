#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "xcorner/grid.hpp"

namespace xcorner {

/// Which refinement produced Candidate::refined.
enum class RefineSource { kNone, kMixed, kSurfaceOnly, kGaussianOnly, kSingle, kInteger };

/// A corner hypothesis at an integer response-map pixel.
struct Candidate {
  int px = 0;
  int py = 0;
  double score = 0.0;
  std::optional<Point2> refined;
  RefineSource refine_source = RefineSource::kNone;

  /// Refined location when present, otherwise the pixel center.
  Point2 location() const {
    return refined ? *refined : Point2{static_cast<double>(px), static_cast<double>(py)};
  }
};

struct ThresholdScheme {
  enum class Kind { kFixed, kStd, kMaxLinear, kAdaptive };

  Kind kind = Kind::kAdaptive;
  double parameter = 0.0;

  static ThresholdScheme fixed(double c) { return {Kind::kFixed, c}; }
  static ThresholdScheme std_dev(double kappa) { return {Kind::kStd, kappa}; }
  static ThresholdScheme max_linear(double alpha) { return {Kind::kMaxLinear, alpha}; }
  static ThresholdScheme adaptive() { return {Kind::kAdaptive, 0.0}; }

  /// Throws ParameterError unless c, alpha in (0,1] and kappa > 0.
  void validate() const;
};

inline constexpr double kAdaptiveFloor = 0.5;

enum class ThresholdStatus { kOk, kNoResponse };

struct ThresholdResult {
  double threshold = 0.0;
  std::vector<Candidate> candidates;  ///< raster order
  ThresholdStatus status = ThresholdStatus::kOk;
};

/// Candidates are all pixels strictly above the scheme's threshold. The
/// adaptive scheme (mean of values > 0.5) reports kNoResponse instead of
/// failing when nothing exceeds 0.5.
ThresholdResult threshold(const ValueGrid& map, const ThresholdScheme& scheme);

/// Intersection-over-union of two equal axis-aligned squares of side
/// 2*halfwidth+1 centered on integer pixels.
double box_iou(const Candidate& a, const Candidate& b, int halfwidth);

/// Greedy suppression in descending score order (ties by row, then column).
/// Survivors come back in that order.
std::vector<Candidate> nms(std::span<const Candidate> candidates, int box_halfwidth = 2,
                           double overlap_threshold = 0.5);

struct ClusterOptions {
  int k = 10;
  int min_cluster = 2;   ///< clusters with at most this many members are dropped
  int skip_below = 30;   ///< fewer candidates than this bypass clustering
  std::uint64_t seed = 0;
};

/// k-means++ seeding followed by at most this many Lloyd iterations.
inline constexpr int kMaxLloydIterations = 50;

struct KMeansResult {
  std::vector<Point2> centers;
  std::vector<int> assignment;
};

/// Spatial k-means on points with k' = min(k, n) clusters. Deterministic per seed.
KMeansResult kmeans_pp(std::span<const Point2> points, int k, std::uint64_t seed);

std::vector<Candidate> cluster_filter(std::span<const Candidate> candidates,
                                      const ClusterOptions& options);

/// "x,y,score" with six decimals. Uses the refined location when present.
void write_candidates_csv(const std::filesystem::path& path, std::span<const Candidate> candidates);
std::vector<Point2> read_points_csv(const std::filesystem::path& path);

}  // namespace xcorner
