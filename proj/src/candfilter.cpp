#include "xcorner/candfilter.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <tuple>

namespace xcorner {

void ThresholdScheme::validate() const {
  switch (kind) {
    case Kind::kFixed:
    case Kind::kMaxLinear:
      if (!(parameter > 0.0 && parameter <= 1.0)) {
        throw ParameterError("threshold factor must lie in (0, 1]");
      }
      break;
    case Kind::kStd:
      if (!(parameter > 0.0)) throw ParameterError("std multiplier must be positive");
      break;
    case Kind::kAdaptive:
      break;
  }
}

ThresholdResult threshold(const ValueGrid& map, const ThresholdScheme& scheme) {
  if (map.channels() != 1) throw DimensionError("threshold expects a single-channel map");
  scheme.validate();
  const auto values = map.values();
  ThresholdResult result;

  switch (scheme.kind) {
    case ThresholdScheme::Kind::kFixed:
      result.threshold = scheme.parameter;
      break;
    case ThresholdScheme::Kind::kStd: {
      const double n = static_cast<double>(values.size());
      const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
      double var = 0.0;
      for (double v : values) var += (v - mean) * (v - mean);
      result.threshold = mean + scheme.parameter * std::sqrt(var / n);
      break;
    }
    case ThresholdScheme::Kind::kMaxLinear:
      result.threshold = scheme.parameter * *std::max_element(values.begin(), values.end());
      break;
    case ThresholdScheme::Kind::kAdaptive: {
      double sum = 0.0;
      std::size_t count = 0;
      for (double v : values) {
        if (v > kAdaptiveFloor) {
          sum += v;
          ++count;
        }
      }
      if (count == 0) {
        result.threshold = kAdaptiveFloor;
        result.status = ThresholdStatus::kNoResponse;
        return result;
      }
      result.threshold = sum / static_cast<double>(count);
      break;
    }
  }

  for (int y = 0; y < map.height(); ++y) {
    for (int x = 0; x < map.width(); ++x) {
      const double v = map.at(y, x);
      if (v > result.threshold) result.candidates.push_back({x, y, v, std::nullopt, {}});
    }
  }
  return result;
}

double box_iou(const Candidate& a, const Candidate& b, int halfwidth) {
  const int side = 2 * halfwidth + 1;
  const int ox = std::max(0, side - std::abs(a.px - b.px));
  const int oy = std::max(0, side - std::abs(a.py - b.py));
  const double inter = static_cast<double>(ox) * oy;
  const double uni = 2.0 * side * side - inter;
  return inter / uni;
}

std::vector<Candidate> nms(std::span<const Candidate> candidates, int box_halfwidth,
                           double overlap_threshold) {
  if (box_halfwidth < 0) throw ParameterError("nms box halfwidth must be nonnegative");
  if (!(overlap_threshold > 0.0 && overlap_threshold < 1.0)) {
    throw ParameterError("nms overlap threshold must lie in (0, 1)");
  }
  std::vector<Candidate> sorted(candidates.begin(), candidates.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    return std::tie(a.py, a.px) < std::tie(b.py, b.px);
  });

  std::vector<Candidate> kept;
  for (const auto& c : sorted) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Candidate& k) {
      return box_iou(c, k, box_halfwidth) > overlap_threshold;
    });
    if (!suppressed) kept.push_back(c);
  }
  return kept;
}

namespace {

double squared_distance(const Point2& a, const Point2& b) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  return dx * dx + dy * dy;
}

int nearest_center(const Point2& p, const std::vector<Point2>& centers) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centers.size(); ++c) {
    const double d = squared_distance(p, centers[c]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

}  // namespace

KMeansResult kmeans_pp(std::span<const Point2> points, int k, std::uint64_t seed) {
  if (k < 1) throw ParameterError("k must be at least 1");
  KMeansResult result;
  if (points.empty()) return result;
  const std::size_t n = points.size();
  const std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(k), n);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // Seeding: first center uniform, the rest with probability ~ D^2.
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::size_t first = std::min(n - 1, static_cast<std::size_t>(unit(rng) * n));
  result.centers.push_back(points[first]);
  while (result.centers.size() < kk) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], squared_distance(points[i], result.centers.back()));
      total += d2[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      const double target = unit(rng) * total;
      double running = 0.0;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        running += d2[i];
        if (running > target && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = std::min(n - 1, static_cast<std::size_t>(unit(rng) * n));
    }
    result.centers.push_back(points[pick]);
  }

  result.assignment.assign(n, -1);
  for (int iter = 0; iter < kMaxLloydIterations; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      const int c = nearest_center(points[i], result.centers);
      if (c != result.assignment[i]) {
        result.assignment[i] = c;
        changed = true;
      }
    }
    if (!changed) break;
    std::vector<Point2> sums(kk);
    std::vector<int> counts(kk, 0);
    for (std::size_t i = 0; i < n; ++i) {
      sums[result.assignment[i]].x += points[i].x;
      sums[result.assignment[i]].y += points[i].y;
      ++counts[result.assignment[i]];
    }
    for (std::size_t c = 0; c < kk; ++c) {
      if (counts[c] > 0) result.centers[c] = {sums[c].x / counts[c], sums[c].y / counts[c]};
    }
  }
  return result;
}

std::vector<Candidate> cluster_filter(std::span<const Candidate> candidates,
                                      const ClusterOptions& options) {
  if (options.k < 1) throw ParameterError("k must be at least 1");
  if (static_cast<long>(candidates.size()) < options.skip_below) {
    return {candidates.begin(), candidates.end()};
  }
  std::vector<Point2> points;
  points.reserve(candidates.size());
  for (const auto& c : candidates) {
    points.push_back({static_cast<double>(c.px), static_cast<double>(c.py)});
  }
  const KMeansResult km = kmeans_pp(points, options.k, options.seed);
  std::vector<int> sizes(km.centers.size(), 0);
  for (int a : km.assignment) ++sizes[a];

  std::vector<Candidate> kept;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (sizes[km.assignment[i]] > options.min_cluster) kept.push_back(candidates[i]);
  }
  return kept;
}

void write_candidates_csv(const std::filesystem::path& path,
                          std::span<const Candidate> candidates) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "x,y,score\n";
  char buf[128];
  for (const auto& c : candidates) {
    const Point2 p = c.location();
    std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f\n", p.x, p.y, c.score);
    out << buf;
  }
}

std::vector<Point2> read_points_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("x,y", 0) != 0) {
    throw FormatError("point CSV must start with an x,y header");
  }
  std::vector<Point2> points;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string xs, ys;
    if (!std::getline(fields, xs, ',') || !std::getline(fields, ys, ',')) {
      throw FormatError("malformed point row '" + line + "'");
    }
    try {
      points.push_back({std::stod(xs), std::stod(ys)});
    } catch (const std::logic_error&) {
      throw FormatError("malformed point row '" + line + "'");
    }
  }
  return points;
}

}  // namespace xcorner
