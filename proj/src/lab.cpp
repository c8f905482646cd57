#include "xcorner/lab.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <thread>
#include <tuple>

#include "xcorner/synthgen.hpp"

namespace xcorner {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index writes only
// its own slot, so results do not depend on scheduling.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn fn) {
  const std::size_t workers = std::clamp<std::size_t>(threads < 1 ? 1 : threads, 1, std::max<std::size_t>(n, 1));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

std::string fmt6(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

Pixel hill_climb(const ValueGrid& map, Pixel p) {
  for (int step = 0; step < 64; ++step) {
    Pixel best = p;
    double best_v = map.at(p.y, p.x);
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const int x = p.x + dx, y = p.y + dy;
        if (!map.contains(x, y)) continue;
        if (map.at(y, x) > best_v) {
          best_v = map.at(y, x);
          best = {x, y};
        }
      }
    }
    if (best == p) break;
    p = best;
  }
  return p;
}

}  // namespace

MatchReport match_detections(std::span<const Point2> detected, std::span<const Point2> truth,
                             double radius) {
  if (!(radius > 0.0)) throw ParameterError("match radius must be positive");
  std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < detected.size(); ++i) {
    for (std::size_t j = 0; j < truth.size(); ++j) {
      const double d = distance(detected[i], truth[j]);
      if (d < radius) pairs.emplace_back(d, i, j);
    }
  }
  std::sort(pairs.begin(), pairs.end());
  std::vector<char> det_used(detected.size(), 0), truth_used(truth.size(), 0);
  MatchReport r;
  double err = 0.0;
  for (const auto& [d, i, j] : pairs) {
    if (det_used[i] || truth_used[j]) continue;
    det_used[i] = truth_used[j] = 1;
    ++r.true_positives;
    err += d;
  }
  r.false_positives = static_cast<int>(detected.size()) - r.true_positives;
  r.false_negatives = static_cast<int>(truth.size()) - r.true_positives;
  const int tp = r.true_positives;
  r.precision = detected.empty() ? 1.0 : static_cast<double>(tp) / detected.size();
  r.recall = truth.empty() ? 1.0 : static_cast<double>(tp) / truth.size();
  r.mean_localization_error_px = tp > 0 ? err / tp : 0.0;
  return r;
}

MatchReport pool_reports(std::span<const MatchReport> reports) {
  MatchReport r;
  double err = 0.0;
  for (const auto& x : reports) {
    r.true_positives += x.true_positives;
    r.false_positives += x.false_positives;
    r.false_negatives += x.false_negatives;
    err += x.mean_localization_error_px * x.true_positives;
  }
  const int tp = r.true_positives;
  r.precision = tp + r.false_positives == 0 ? 1.0 : static_cast<double>(tp) / (tp + r.false_positives);
  r.recall = tp + r.false_negatives == 0 ? 1.0 : static_cast<double>(tp) / (tp + r.false_negatives);
  r.mean_localization_error_px = tp > 0 ? err / tp : 0.0;
  return r;
}

void write_report_csv(const std::filesystem::path& path, const MatchReport& report) {
  auto out = open_out(path);
  out << "true_positives,false_positives,false_negatives,precision,recall,mean_error_px\n";
  out << report.true_positives << ',' << report.false_positives << ','
      << report.false_negatives << ',' << fmt6(report.precision) << ',' << fmt6(report.recall)
      << ',' << fmt6(report.mean_localization_error_px) << '\n';
}

DetectResult detect_on_response(const ValueGrid& image, const ValueGrid& response,
                                const DetectOptions& options) {
  if (image.height() != response.height() || image.width() != response.width()) {
    throw DimensionError("image and response sizes differ");
  }
  DetectResult result;
  ThresholdResult tr = threshold(response, options.scheme);
  result.status = tr.status;
  if (tr.status == ThresholdStatus::kNoResponse) return result;

  std::vector<Candidate> c = nms(tr.candidates, options.nms_halfwidth, options.nms_overlap);
  if (options.cluster) c = cluster_filter(c, options.cluster_options);

  for (Candidate& cand : c) {
    const Pixel p{cand.px, cand.py};
    if (options.refine == RefineMethod::kNone) continue;
    SubpixelOffset off;
    if (options.refine == RefineMethod::kMixed) {
      const MixedRefinement m = mixed_refine(image, response, p);
      off = m.offset;
      switch (m.source) {
        case MixedSource::kBoth: cand.refine_source = RefineSource::kMixed; break;
        case MixedSource::kSurfaceOnly: cand.refine_source = RefineSource::kSurfaceOnly; break;
        case MixedSource::kGaussianOnly: cand.refine_source = RefineSource::kGaussianOnly; break;
        case MixedSource::kNeither: cand.refine_source = RefineSource::kInteger; break;
      }
    } else {
      off = refine(options.refine, image, response, p);
      cand.refine_source = off.valid ? RefineSource::kSingle : RefineSource::kInteger;
    }
    if (off.valid) cand.refined = Point2{cand.px + off.dx, cand.py + off.dy};
  }
  result.candidates = std::move(c);
  return result;
}

DetectResult detect(const DetectorModel& model, const ValueGrid& image,
                    const DetectOptions& options) {
  return detect_on_response(image, forward(model, image), options);
}

ValueGrid saddle_response(const ValueGrid& image, double sigma) {
  const ValueGrid g = gaussian_blur(image, sigma);
  ValueGrid out(1, g.height(), g.width());
  double peak = 0.0;
  for (int y = 1; y + 1 < g.height(); ++y) {
    for (int x = 1; x + 1 < g.width(); ++x) {
      const double ixx = g.at(y, x + 1) - 2.0 * g.at(y, x) + g.at(y, x - 1);
      const double iyy = g.at(y + 1, x) - 2.0 * g.at(y, x) + g.at(y - 1, x);
      const double ixy =
          0.25 * (g.at(y + 1, x + 1) - g.at(y - 1, x + 1) - g.at(y + 1, x - 1) + g.at(y - 1, x - 1));
      const double v = std::max(0.0, ixy * ixy - ixx * iyy);
      out(0, y, x) = v;
      peak = std::max(peak, v);
    }
  }
  if (peak > 0.0) {
    for (double& v : out.values()) v /= peak;
  }
  return out;
}

std::vector<double> Range::values() const {
  if (!(step > 0.0)) throw ParameterError("range step must be positive");
  if (stop < start) throw ParameterError("range stop precedes start");
  const auto n = static_cast<std::size_t>(std::floor((stop - start) / step + 1e-9)) + 1;
  std::vector<double> v(n);
  for (std::size_t k = 0; k < n; ++k) v[k] = start + static_cast<double>(k) * step;
  return v;
}

Range Range::parse(const std::string& text) {
  std::vector<double> parts;
  std::stringstream ss(text);
  std::string field;
  try {
    while (std::getline(ss, field, ':')) {
      std::size_t used = 0;
      parts.push_back(std::stod(field, &used));
      if (used != field.size()) throw ParameterError("bad range '" + text + "'");
    }
  } catch (const std::logic_error&) {
    throw ParameterError("bad range '" + text + "'");
  }
  Range r;
  switch (parts.size()) {
    case 1: r = {parts[0], parts[0], 1.0}; break;
    case 2: r = {parts[0], parts[1], 1.0}; break;
    case 3: r = {parts[0], parts[1], parts[2]}; break;
    default: throw ParameterError("bad range '" + text + "'");
  }
  r.values();
  return r;
}

std::string to_string(SweepAxis axis) { return axis == SweepAxis::kRotation ? "rotation" : "skew"; }

SweepAxis parse_sweep_axis(const std::string& text) {
  if (text == "rotation") return SweepAxis::kRotation;
  if (text == "skew") return SweepAxis::kSkew;
  throw ParameterError("unknown sweep axis '" + text + "'");
}

Range SweepOptions::default_range(SweepAxis axis) {
  return axis == SweepAxis::kRotation ? Range{0.0, 90.0, 1.0} : Range{0.0, 70.0, 1.0};
}

SweepResult sweep(const DetectorModel& model, const SweepOptions& options) {
  if (options.trials < 1) throw ParameterError("trials must be at least 1");
  if (!(options.miss_penalty >= 0.0)) throw ParameterError("miss penalty must be nonnegative");
  model.validate();
  SweepResult result;
  result.axis1_name = to_string(options.axis);
  result.axis1 = options.axis_range.values();
  result.axis2_name = "noise";
  result.axis2 = options.noise_range.values();
  result.trials = options.trials;
  result.cells.assign(result.axis1.size() * result.axis2.size(), 0.0);

  parallel_for(result.cells.size(), options.threads, [&](std::size_t cell) {
    const double a = result.axis1[cell / result.axis2.size()];
    const double noise = result.axis2[cell % result.axis2.size()];
    const std::uint64_t cell_seed = derive_seed(options.seed, cell);
    double sum = 0.0;
    for (int t = 0; t < options.trials; ++t) {
      const std::uint64_t seed = derive_seed(cell_seed, static_cast<std::uint64_t>(t));
      std::mt19937_64 rng(seed);
      std::uniform_real_distribution<double> shift(-0.5, 0.5);
      CornerSceneSpec spec;
      spec.image_size = options.image_size;
      spec.rotation_deg = options.axis == SweepAxis::kRotation ? a : 0.0;
      spec.skew_deg = options.axis == SweepAxis::kSkew ? a : 0.0;
      spec.noise_std = noise;
      spec.apply_blur = true;
      spec.transition_band = true;
      spec.subpixel_shift = {shift(rng), shift(rng)};
      spec.seed = rng();
      const SceneRender scene = render_corner(spec);
      const Point2 truth = scene.truth.corners.front();
      const DetectResult det = detect(model, scene.image, options.detect);
      double err = options.miss_penalty;
      for (const auto& c : det.candidates) err = std::min(err, distance(c.location(), truth));
      sum += det.candidates.empty() ? options.miss_penalty : err;
    }
    result.cells[cell] = sum / options.trials;
  });
  return result;
}

void write_sweep_csv(const std::filesystem::path& path, const SweepResult& result) {
  auto out = open_out(path);
  out << result.axis1_name << ',' << result.axis2_name << ",mean_error_px,trials\n";
  for (std::size_t i = 0; i < result.axis1.size(); ++i) {
    for (std::size_t j = 0; j < result.axis2.size(); ++j) {
      out << fmt6(result.axis1[i]) << ',' << fmt6(result.axis2[j]) << ','
          << fmt6(result.cell(i, j)) << ',' << result.trials << '\n';
    }
  }
}

std::string to_string(BenchFactor factor) {
  switch (factor) {
    case BenchFactor::kNoise: return "noise";
    case BenchFactor::kBlur: return "blur";
    case BenchFactor::kRotation: return "rotation";
    case BenchFactor::kSkew: return "skew";
  }
  return "noise";
}

BenchFactor parse_bench_factor(const std::string& text) {
  for (BenchFactor f : {BenchFactor::kNoise, BenchFactor::kBlur, BenchFactor::kRotation,
                        BenchFactor::kSkew}) {
    if (to_string(f) == text) return f;
  }
  throw ParameterError("unknown bench factor '" + text + "'");
}

std::vector<double> default_factor_values(BenchFactor factor) {
  switch (factor) {
    case BenchFactor::kNoise: return Range{0.0, 100.0, 10.0}.values();
    case BenchFactor::kBlur: return Range{0.2, 2.0, 0.2}.values();
    case BenchFactor::kRotation: return Range{0.0, 90.0, 10.0}.values();
    case BenchFactor::kSkew: return Range{0.0, 70.0, 10.0}.values();
  }
  return {};
}

double BenchResult::mean_error(std::size_t value, std::size_t method) const {
  double sum = 0.0;
  int n = 0;
  for (const auto& trial : errors[value]) {
    if (!std::isnan(trial[method])) {
      sum += trial[method];
      ++n;
    }
  }
  return n > 0 ? sum / n : kNaN;
}

int BenchResult::valid_count(std::size_t value, std::size_t method) const {
  int n = 0;
  for (const auto& trial : errors[value]) n += !std::isnan(trial[method]);
  return n;
}

std::size_t BenchResult::method_index(RefineMethod m) const {
  const auto it = std::find(methods.begin(), methods.end(), m);
  if (it == methods.end()) throw ParameterError("method " + to_string(m) + " not benchmarked");
  return static_cast<std::size_t>(it - methods.begin());
}

BenchResult bench_refiners(const BenchOptions& options) {
  if (options.trials < 1) throw ParameterError("trials must be at least 1");
  if (options.crop < 1 || options.crop > options.image_size) {
    throw ParameterError("crop must lie in [1, image_size]");
  }
  if (options.model) options.model->validate();
  BenchResult result;
  result.factor_name = to_string(options.factor);
  result.values = options.values.empty() ? default_factor_values(options.factor) : options.values;
  result.methods = options.methods;
  result.errors.assign(result.values.size(),
                       std::vector<std::vector<double>>(
                           options.trials, std::vector<double>(result.methods.size(), kNaN)));

  const int c0 = options.image_size / 2 - options.crop / 2;
  const int c1 = c0 + options.crop;

  parallel_for(result.values.size(), options.threads, [&](std::size_t vi) {
    const double v = result.values[vi];
    const std::uint64_t value_seed = derive_seed(options.seed, vi);
    for (int t = 0; t < options.trials; ++t) {
      std::mt19937_64 rng(derive_seed(value_seed, static_cast<std::uint64_t>(t)));
      std::uniform_real_distribution<double> shift(-0.5, 0.5);
      CornerSceneSpec spec;
      spec.image_size = options.image_size;
      spec.transition_band = false;
      spec.apply_blur = true;
      spec.noise_std = options.factor == BenchFactor::kNoise ? v : options.base_noise;
      spec.blur_variance = options.factor == BenchFactor::kBlur ? v : options.base_blur_variance;
      spec.rotation_deg = options.factor == BenchFactor::kRotation ? v : options.base_rotation;
      spec.skew_deg = options.factor == BenchFactor::kSkew ? v : options.base_skew;
      spec.subpixel_shift = {shift(rng), shift(rng)};
      spec.seed = rng();
      const SceneRender scene = render_corner(spec);
      const Point2 truth = scene.truth.corners.front();
      const ValueGrid response =
          options.model ? forward(*options.model, scene.image) : saddle_response(scene.image);

      const Pixel start = hill_climb(
          response, {static_cast<int>(std::lround(truth.x)), static_cast<int>(std::lround(truth.y))});
      if (start.x < c0 || start.x >= c1 || start.y < c0 || start.y >= c1) continue;

      auto& row = result.errors[vi][static_cast<std::size_t>(t)];
      for (std::size_t m = 0; m < result.methods.size(); ++m) {
        const RefineMethod method = result.methods[m];
        if (method == RefineMethod::kNone) {
          row[m] = distance({double(start.x), double(start.y)}, truth);
          continue;
        }
        const SubpixelOffset off = refine(method, scene.image, response, start);
        if (off.valid) row[m] = distance({start.x + off.dx, start.y + off.dy}, truth);
      }
    }
  });
  return result;
}

void write_bench_csv(const std::filesystem::path& path, const BenchResult& result) {
  auto out = open_out(path);
  out << "factor,value,method,mean_error_px,valid_trials\n";
  for (std::size_t v = 0; v < result.values.size(); ++v) {
    for (std::size_t m = 0; m < result.methods.size(); ++m) {
      out << result.factor_name << ',' << fmt6(result.values[v]) << ','
          << to_string(result.methods[m]) << ',' << fmt6(result.mean_error(v, m)) << ','
          << result.valid_count(v, m) << '\n';
    }
  }
}

void write_grid_csv(const std::filesystem::path& path, const CornerGrid& grid,
                    std::span<const Point2> points) {
  auto out = open_out(path);
  out << "row,col,x,y,present\n";
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      const int idx = grid.at(r, c);
      out << r << ',' << c << ',';
      if (idx >= 0) {
        out << fmt6(points[idx].x) << ',' << fmt6(points[idx].y) << ",1\n";
      } else {
        out << "nan,nan,0\n";
      }
    }
  }
}

void write_gnuplot_script(const std::filesystem::path& csv, const std::string& kind) {
  std::filesystem::path script = csv;
  script.replace_extension(".gp");
  auto out = open_out(script);
  const std::string name = csv.filename().string();
  std::filesystem::path png = csv.filename();
  png.replace_extension(".png");
  out << "set datafile separator ','\n"
      << "set terminal pngcairo size 900,600\n"
      << "set output '" << png.string() << "'\n"
      << "set key autotitle columnhead\n";
  if (kind == "sweep") {
    out << "set view map\nset xlabel 'axis'\nset ylabel 'noise'\n"
        << "set cblabel 'mean error (px)'\n"
        << "splot '" << name << "' using 1:2:3 with image notitle\n";
  } else {
    out << "set xlabel 'factor value'\nset ylabel 'mean error (px)'\n"
        << "methods = system(\"tail -n +2 " << name << " | cut -d, -f3 | sort -u\")\n"
        << "plot for [m in methods] '" << name
        << "' using 2:(strcol(3) eq m ? $4 : 1/0) with linespoints title m\n";
  }
}

}  // namespace xcorner
