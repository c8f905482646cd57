#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "xcorner/boardgrow.hpp"
#include "xcorner/candfilter.hpp"
#include "xcorner/grid.hpp"
#include "xcorner/subpix.hpp"
#include "xcorner/synthgen.hpp"
#include "xcorner/xnet.hpp"

namespace xcorner {

inline constexpr double kMatchRadius = 4.0;

struct MatchReport {
  int true_positives = 0;
  int false_positives = 0;
  int false_negatives = 0;
  double precision = 1.0;
  double recall = 1.0;
  double mean_localization_error_px = 0.0;  ///< over matched pairs, 0 when none
};

/// Greedy matching in ascending distance; a pair matches iff distance < radius.
/// Each detection and each truth point is used at most once.
MatchReport match_detections(std::span<const Point2> detected, std::span<const Point2> truth,
                             double radius = kMatchRadius);

/// Sums counts over images and recomputes the ratios (pooled, not averaged).
MatchReport pool_reports(std::span<const MatchReport> reports);

void write_report_csv(const std::filesystem::path& path, const MatchReport& report);

struct DetectOptions {
  ThresholdScheme scheme = ThresholdScheme::adaptive();
  int nms_halfwidth = 3;
  double nms_overlap = 0.5;
  bool cluster = true;
  ClusterOptions cluster_options;
  RefineMethod refine = RefineMethod::kMixed;
};

struct DetectResult {
  std::vector<Candidate> candidates;
  ThresholdStatus status = ThresholdStatus::kOk;
};

/// threshold -> nms -> cluster filter -> refinement on a precomputed response.
DetectResult detect_on_response(const ValueGrid& image, const ValueGrid& response,
                                const DetectOptions& options = {});
DetectResult detect(const DetectorModel& model, const ValueGrid& image,
                    const DetectOptions& options = {});

/// Model-free saddle score max(0, Ixy^2 - Ixx Iyy) on a Gaussian-smoothed image,
/// normalized to peak 1. Used by the refiner bench when no model is given.
ValueGrid saddle_response(const ValueGrid& image, double sigma = 1.5);

/// Inclusive arithmetic range "start:stop:step".
struct Range {
  double start = 0.0;
  double stop = 0.0;
  double step = 1.0;

  std::vector<double> values() const;
  /// Throws ParameterError on malformed text or a nonpositive step.
  static Range parse(const std::string& text);
};

enum class SweepAxis { kRotation, kSkew };
std::string to_string(SweepAxis axis);
SweepAxis parse_sweep_axis(const std::string& text);

struct SweepOptions {
  SweepAxis axis = SweepAxis::kRotation;
  Range axis_range{0.0, 90.0, 1.0};
  Range noise_range{0.0, 100.0, 1.0};
  int trials = 100;
  std::uint64_t seed = 1;
  double miss_penalty = kMatchRadius;
  int image_size = 41;
  int threads = 1;
  DetectOptions detect{ThresholdScheme::adaptive(), 3, 0.5, true, {}, RefineMethod::kNone};

  /// Default axis range for the chosen axis: rotation 0..90, skew 0..70.
  static Range default_range(SweepAxis axis);
};

struct SweepResult {
  std::string axis1_name;
  std::vector<double> axis1;
  std::string axis2_name;
  std::vector<double> axis2;
  std::vector<double> cells;  ///< axis1-major mean error
  int trials = 0;

  double cell(std::size_t i, std::size_t j) const { return cells[i * axis2.size() + j]; }
};

/// Mean distance from the nearest detection to the true corner per cell, with
/// miss_penalty for trials without detections.
SweepResult sweep(const DetectorModel& model, const SweepOptions& options);
void write_sweep_csv(const std::filesystem::path& path, const SweepResult& result);

enum class BenchFactor { kNoise, kBlur, kRotation, kSkew };
std::string to_string(BenchFactor factor);
BenchFactor parse_bench_factor(const std::string& text);
/// noise 0..100 step 10, blur variance 0.2..2.0 step 0.2, rotation 0..90 step
/// 10, skew 0..70 step 10.
std::vector<double> default_factor_values(BenchFactor factor);

struct BenchOptions {
  BenchFactor factor = BenchFactor::kNoise;
  std::vector<double> values;  ///< empty = default_factor_values(factor)
  int trials = 100;
  std::vector<RefineMethod> methods = {RefineMethod::kGaussian, RefineMethod::kParabolic,
                                       RefineMethod::kCom,      RefineMethod::kSurface,
                                       RefineMethod::kEdge,     RefineMethod::kMixed};
  std::uint64_t seed = 1;
  const DetectorModel* model = nullptr;  ///< null = saddle_response
  int image_size = 80;
  int crop = 10;
  double base_noise = 5.0;
  double base_blur_variance = kDefaultBlurVariance;
  double base_rotation = 10.0;
  double base_skew = 10.0;
  int threads = 1;
};

struct BenchResult {
  std::string factor_name;
  std::vector<double> values;
  std::vector<RefineMethod> methods;
  /// [value][trial][method] error in px; NaN when the method was invalid or
  /// the trial was omitted because its peak left the crop.
  std::vector<std::vector<std::vector<double>>> errors;

  /// Mean over valid trials; NaN if none.
  double mean_error(std::size_t value, std::size_t method) const;
  int valid_count(std::size_t value, std::size_t method) const;
  std::size_t method_index(RefineMethod m) const;
};

BenchResult bench_refiners(const BenchOptions& options);
/// factor,value,method,mean_error_px,valid_trials
void write_bench_csv(const std::filesystem::path& path, const BenchResult& result);

/// row,col,x,y,present; absent cells carry nan coordinates.
void write_grid_csv(const std::filesystem::path& path, const CornerGrid& grid,
                    std::span<const Point2> points);

/// Writes a gnuplot script next to a sweep or bench CSV.
void write_gnuplot_script(const std::filesystem::path& csv, const std::string& kind);

}  // namespace xcorner
