#include "xcorner/synthgen.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

namespace xcorner {

std::uint64_t mix_seed(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  return mix_seed(master ^ index);
}

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;
constexpr int kSupersample = 4;
// Single-corner scenes feed the subpixel benches and need a finer edge position.
constexpr int kCornerSupersample = 16;

// Plane -> image homography: rotate in-plane, tilt about the horizontal axis
// through the origin (pinhole with the given focal length), then translate.
Eigen::Matrix3d plane_homography(double rotation_deg, double skew_deg, double focal,
                                 const Point2& center) {
  const double th = rotation_deg * kDegToRad;
  const double ph = skew_deg * kDegToRad;
  Eigen::Matrix3d rot;
  rot << std::cos(th), -std::sin(th), 0, std::sin(th), std::cos(th), 0, 0, 0, 1;
  Eigen::Matrix3d tilt;
  tilt << focal, 0, 0, 0, focal * std::cos(ph), 0, 0, std::sin(ph), focal;
  Eigen::Matrix3d shift;
  shift << 1, 0, center.x, 0, 1, center.y, 0, 0, 1;
  return shift * tilt * rot;
}

// Returns false when the point maps to or behind the virtual camera plane.
bool apply_h(const Eigen::Matrix3d& h, double x, double y, Point2& out) {
  const Eigen::Vector3d v = h * Eigen::Vector3d(x, y, 1.0);
  if (!(v.z() > 1e-12)) return false;
  out = {v.x() / v.z(), v.y() / v.z()};
  return true;
}

// Symmetric sub-sample offsets within a pixel.
double subsample_offset(int k, int n = kSupersample) { return (k + 0.5) / n - 0.5; }

// Snaps values within 1e-9 of an integer so that exact lattice rotations stay
// exact in floating point.
double snap(double v) {
  const double r = std::round(v);
  return std::abs(v - r) < 1e-9 ? r : v;
}

void check_range(double v, double lo, double hi, const char* what) {
  if (!(v >= lo && v <= hi)) {
    throw ParameterError(std::string(what) + " out of range");
  }
}

}  // namespace

void add_gaussian_noise(ValueGrid& image, double noise_std, std::mt19937_64& rng, bool clamp) {
  if (noise_std < 0.0) throw ParameterError("noise std must be nonnegative");
  if (noise_std > 0.0) {
    std::normal_distribution<double> normal(0.0, noise_std / 255.0);
    for (double& v : image.values()) v += normal(rng);
  }
  if (clamp) {
    for (double& v : image.values()) v = std::clamp(v, 0.0, 1.0);
  }
}

void CornerSceneSpec::validate() const {
  if (image_size < 20) throw ParameterError("corner image size must be at least 20");
  check_range(rotation_deg, 0.0, 90.0, "rotation_deg");
  check_range(skew_deg, 0.0, 70.0, "skew_deg");
  check_range(noise_std, 0.0, 100.0, "noise_std");
  if (apply_blur && !(blur_variance > 0.0)) throw ParameterError("blur variance must be positive");
  if (!(subpixel_shift.x >= -0.5 && subpixel_shift.x < 0.5 && subpixel_shift.y >= -0.5 &&
        subpixel_shift.y < 0.5)) {
    throw ParameterError("subpixel shift must lie in [-0.5, 0.5)");
  }
}

std::vector<Point2> GroundTruth::visible_corners() const {
  std::vector<Point2> out;
  for (std::size_t i = 0; i < corners.size(); ++i) {
    if (i >= occluded.size() || !occluded[i]) out.push_back(corners[i]);
  }
  return out;
}

namespace {

LabelMask mask_from_corners(int height, int width, const std::vector<Point2>& corners,
                            const std::vector<bool>& occluded) {
  std::vector<Pixel> positives;
  for (std::size_t i = 0; i < corners.size(); ++i) {
    if (occluded[i]) continue;
    const Pixel p{static_cast<int>(std::floor(corners[i].x + 0.5)),
                  static_cast<int>(std::floor(corners[i].y + 0.5))};
    if (p.x >= 0 && p.y >= 0 && p.x < width && p.y < height) positives.push_back(p);
  }
  return LabelMask(height, width, std::move(positives));
}

// Quadrant pattern around the origin; the band is one pixel wide and
// centered on the axes.
// Level in 8-bit units, so pixel means can be summed exactly.
int corner_pattern(double u, double v, bool band) {
  if (band && (std::abs(u) < 0.5 || std::abs(v) < 0.5)) return 128;
  return ((u < 0.0) == (v < 0.0)) ? 64 : 191;
}

}  // namespace

SceneRender render_corner(const CornerSceneSpec& spec) {
  spec.validate();
  const int n = spec.image_size;
  const double base = std::floor(n / 2.0);
  const Point2 corner{base + spec.subpixel_shift.x, base + spec.subpixel_shift.y};
  const Eigen::Matrix3d h =
      plane_homography(spec.rotation_deg, spec.skew_deg, 2.0 * n, corner);
  const Eigen::Matrix3d inv = h.inverse();

  ValueGrid image(1, n, n);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      long acc = 0;
      int hits = 0;
      for (int sy = 0; sy < kCornerSupersample; ++sy) {
        for (int sx = 0; sx < kCornerSupersample; ++sx) {
          Point2 uv;
          if (!apply_h(inv, x + subsample_offset(sx, kCornerSupersample),
                       y + subsample_offset(sy, kCornerSupersample), uv)) {
            continue;
          }
          acc += corner_pattern(snap(uv.x), snap(uv.y), spec.transition_band);
          ++hits;
        }
      }
      image.at(y, x) = hits > 0 ? acc / (255.0 * hits) : kBandLevel;
    }
  }
  if (spec.apply_blur) image = gaussian_blur_3x3(image, spec.blur_variance);
  std::mt19937_64 rng(spec.seed);
  add_gaussian_noise(image, spec.noise_std, rng);

  SceneRender out;
  out.image = std::move(image);
  out.truth.corners = {corner};
  out.truth.occluded = {false};
  out.truth.mask = mask_from_corners(n, n, out.truth.corners, out.truth.occluded);
  return out;
}

Point2 apply_distortion(const Point2& point, const Point2& center, double focal,
                        const Distortion& d) {
  if (!(focal > 0.0)) throw ParameterError("distortion focal must be positive");
  const double x = (point.x - center.x) / focal;
  const double y = (point.y - center.y) / focal;
  const double r2 = x * x + y * y;
  const double radial = 1.0 + d.k1 * r2 + d.k2 * r2 * r2;
  const double xd = x * radial + 2.0 * d.p1 * x * y + d.p2 * (r2 + 2.0 * x * x);
  const double yd = y * radial + d.p1 * (r2 + 2.0 * y * y) + 2.0 * d.p2 * x * y;
  return {center.x + xd * focal, center.y + yd * focal};
}

Point2 remove_distortion(const Point2& point, const Point2& center, double focal,
                         const Distortion& d) {
  if (d.is_identity()) return point;
  Point2 guess = point;
  for (int iter = 0; iter < 50; ++iter) {
    const Point2 mapped = apply_distortion(guess, center, focal, d);
    const double ex = point.x - mapped.x;
    const double ey = point.y - mapped.y;
    guess.x += ex;
    guess.y += ey;
    if (std::abs(ex) + std::abs(ey) < 1e-10) break;
  }
  return guess;
}

void BoardSceneSpec::validate() const {
  if (width < 1 || height < 1) throw ParameterError("board image size must be positive");
  if (rows < 2 || cols < 2) throw ParameterError("board needs at least 2x2 inner corners");
  if (!(square_px >= 6.0)) throw ParameterError("square_px must be at least 6");
  check_range(skew_deg, 0.0, 80.0, "skew_deg");
  check_range(noise_std, 0.0, 100.0, "noise_std");
  if (blur_variance < 0.0) throw ParameterError("blur variance must be nonnegative");
  if (margin < 0) throw ParameterError("margin must be nonnegative");
}

namespace {

struct BoardGeometry {
  Eigen::Matrix3d plane_to_image;
  Eigen::Matrix3d image_to_plane;
  Point2 center;
  double focal;
};

BoardGeometry board_geometry(const BoardSceneSpec& spec) {
  const Point2 c = spec.image_center();
  const Point2 board_center{c.x + spec.center_offset.x, c.y + spec.center_offset.y};
  BoardGeometry g;
  g.plane_to_image =
      plane_homography(spec.rotation_deg, spec.skew_deg, spec.skew_focal(), board_center);
  g.image_to_plane = g.plane_to_image.inverse();
  g.center = c;
  g.focal = spec.distortion_focal();
  return g;
}

std::vector<Point2> board_corners_checked(const BoardSceneSpec& spec, const BoardGeometry& g) {
  spec.validate();
  std::vector<Point2> corners;
  corners.reserve(static_cast<std::size_t>(spec.rows) * spec.cols);
  // The outer board outline must also stay in front of the virtual camera.
  const double half_w = (spec.cols + 1) / 2.0 * spec.square_px;
  const double half_h = (spec.rows + 1) / 2.0 * spec.square_px;
  for (double u : {-half_w, half_w}) {
    for (double v : {-half_h, half_h}) {
      Point2 ignored;
      if (!apply_h(g.plane_to_image, u, v, ignored)) {
        throw ParameterError("board extends behind the virtual camera");
      }
    }
  }
  for (int j = 0; j < spec.rows; ++j) {
    for (int i = 0; i < spec.cols; ++i) {
      const double u = (i - (spec.cols - 1) / 2.0) * spec.square_px;
      const double v = (j - (spec.rows - 1) / 2.0) * spec.square_px;
      Point2 p;
      if (!apply_h(g.plane_to_image, u, v, p)) {
        throw ParameterError("board corner behind the virtual camera");
      }
      p = apply_distortion(p, g.center, g.focal, spec.distortion);
      if (p.x < spec.margin || p.y < spec.margin || p.x > spec.width - 1 - spec.margin ||
          p.y > spec.height - 1 - spec.margin) {
        throw ParameterError("board corner outside the valid image margin");
      }
      corners.push_back(p);
    }
  }
  return corners;
}

}  // namespace

std::vector<Point2> board_corner_positions(const BoardSceneSpec& spec) {
  return board_corners_checked(spec, board_geometry(spec));
}

SceneRender render_board(const BoardSceneSpec& spec) {
  const BoardGeometry g = board_geometry(spec);
  std::vector<Point2> corners = board_corners_checked(spec, g);

  const double s = spec.square_px;
  const double squares_x = spec.cols + 1;
  const double squares_y = spec.rows + 1;
  auto color_at = [&](double px, double py) {
    const Point2 ideal = remove_distortion({px, py}, g.center, g.focal, spec.distortion);
    Point2 uv;
    if (!apply_h(g.image_to_plane, ideal.x, ideal.y, uv)) return spec.background_level;
    const double a = uv.x / s + squares_x / 2.0;
    const double b = uv.y / s + squares_y / 2.0;
    if (a < 0.0 || b < 0.0 || a >= squares_x || b >= squares_y) return spec.background_level;
    const long parity = static_cast<long>(std::floor(a)) + static_cast<long>(std::floor(b));
    return parity % 2 == 0 ? spec.dark_level : spec.light_level;
  };

  ValueGrid image(1, spec.height, spec.width);
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      double acc = 0.0;
      for (int sy = 0; sy < kSupersample; ++sy) {
        for (int sx = 0; sx < kSupersample; ++sx) {
          acc += color_at(x + subsample_offset(sx), y + subsample_offset(sy));
        }
      }
      image.at(y, x) = acc / (kSupersample * kSupersample);
    }
  }

  if (spec.invert) {
    for (double& v : image.values()) v = 1.0 - v;
  }
  std::vector<bool> occluded(corners.size(), false);
  if (spec.occlusion) {
    const PixelRect& r = *spec.occlusion;
    for (int y = std::max(0, r.y); y < std::min(spec.height, r.y + r.h); ++y) {
      for (int x = std::max(0, r.x); x < std::min(spec.width, r.x + r.w); ++x) {
        image.at(y, x) = 0.5;
      }
    }
    // A corner within a pixel of the occluder has lost its X structure.
    for (std::size_t i = 0; i < corners.size(); ++i) occluded[i] = r.contains(corners[i], 1.0);
  }
  if (spec.blur_variance > 0.0) image = gaussian_blur_3x3(image, spec.blur_variance);
  std::mt19937_64 rng(spec.seed);
  add_gaussian_noise(image, spec.noise_std, rng);

  SceneRender out;
  out.image = std::move(image);
  out.truth.mask = mask_from_corners(spec.height, spec.width, corners, occluded);
  out.truth.corners = std::move(corners);
  out.truth.occluded = std::move(occluded);
  return out;
}

GeneratedBoard generate_board(const BoardDistribution& dist, std::uint64_t master_seed,
                              std::uint64_t index) {
  const std::uint64_t item_seed = derive_seed(master_seed, index);
  std::mt19937_64 rng(item_seed);
  auto uniform = [&](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  auto uniform_int = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  auto chance = [&](double p) { return uniform(0.0, 1.0) < p; };

  constexpr int kAttempts = 200;
  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    BoardSceneSpec spec;
    spec.width = dist.width;
    spec.height = dist.height;
    spec.rows = uniform_int(dist.rows_min, dist.rows_max);
    spec.cols = uniform_int(dist.cols_min, dist.cols_max);
    spec.square_px = uniform(dist.square_min, dist.square_max);
    spec.rotation_deg = uniform(0.0, dist.rotation_max);
    spec.skew_deg = uniform(0.0, dist.skew_max);
    spec.noise_std = uniform(0.0, dist.noise_max);
    spec.invert = chance(dist.invert_probability);
    spec.blur_variance = chance(dist.blur_probability) ? uniform(0.3, 1.2) : 0.0;
    if (chance(dist.distortion_probability)) {
      spec.distortion = {uniform(-dist.k1_max, dist.k1_max), uniform(-dist.k2_max, dist.k2_max),
                         uniform(-dist.p_max, dist.p_max), uniform(-dist.p_max, dist.p_max)};
    }
    spec.dark_level = uniform(0.05, 0.35);
    spec.light_level = uniform(0.65, 0.95);
    spec.background_level = chance(0.5) ? spec.light_level : uniform(0.2, 0.9);
    spec.center_offset = {uniform(-0.15, 0.15) * dist.width, uniform(-0.15, 0.15) * dist.height};
    spec.seed = rng();
    if (chance(dist.occlusion_probability)) {
      const int ow = uniform_int(dist.width / 8, dist.width / 3);
      const int oh = uniform_int(dist.height / 8, dist.height / 3);
      spec.occlusion =
          PixelRect{uniform_int(0, dist.width - ow), uniform_int(0, dist.height - oh), ow, oh};
    }
    try {
      SceneRender render = render_board(spec);
      return {spec, std::move(render)};
    } catch (const ParameterError&) {
      // Geometry did not fit; draw again from the same stream.
    }
  }
  throw ParameterError("board distribution produced no valid scene in " +
                       std::to_string(kAttempts) + " attempts");
}

namespace {

std::string format_fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

std::string image_stem(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "img_%05d", index);
  return buf;
}

void write_truth_csv(const std::filesystem::path& path, const std::vector<Point2>& corners) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "x,y\n";
  char buf[96];
  for (const auto& p : corners) {
    std::snprintf(buf, sizeof(buf), "%.6f,%.6f\n", p.x, p.y);
    out << buf;
  }
}

void save_sample(const std::filesystem::path& dir, const std::string& stem,
                 const SceneRender& render) {
  save_gray(dir / (stem + ".pgm"), render.image);
  write_label_csv(dir / (stem + ".labels.csv"), render.truth.mask);
  write_truth_csv(dir / (stem + ".truth.csv"), render.truth.visible_corners());
}

void write_label_csv(const std::filesystem::path& path, const LabelMask& mask) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "x,y\n";
  for (const auto& p : mask.positives()) out << p.x << ',' << p.y << '\n';
}

std::vector<Pixel> read_label_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "x,y") throw FormatError("label CSV needs header x,y");
  std::vector<Pixel> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Pixel p;
    char comma = 0;
    std::istringstream fields(line);
    if (!(fields >> p.x >> comma >> p.y) || comma != ',') {
      throw FormatError("malformed label row '" + line + "'");
    }
    out.push_back(p);
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "filename,rows,cols,square_px,rotation_deg,skew_deg,noise_std,invert,k1,k2,p1,p2,"
         "occluded\n";
  for (const auto& r : rows) {
    out << r.filename << ',' << r.rows << ',' << r.cols << ',' << format_fixed(r.square_px) << ','
        << format_fixed(r.rotation_deg) << ',' << format_fixed(r.skew_deg) << ','
        << format_fixed(r.noise_std) << ',' << (r.invert ? 1 : 0) << ','
        << format_fixed(r.distortion.k1) << ',' << format_fixed(r.distortion.k2) << ','
        << format_fixed(r.distortion.p1) << ',' << format_fixed(r.distortion.p2) << ','
        << (r.occluded ? 1 : 0) << '\n';
  }
}

std::vector<ManifestRow> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("filename,", 0) != 0) {
    throw FormatError("manifest header missing");
  }
  std::vector<ManifestRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream fields(line);
    std::string cell;
    while (std::getline(fields, cell, ',')) f.push_back(cell);
    if (f.size() != 13) throw FormatError("manifest row has wrong column count");
    try {
      ManifestRow r;
      r.filename = f[0];
      r.rows = std::stoi(f[1]);
      r.cols = std::stoi(f[2]);
      r.square_px = std::stod(f[3]);
      r.rotation_deg = std::stod(f[4]);
      r.skew_deg = std::stod(f[5]);
      r.noise_std = std::stod(f[6]);
      r.invert = f[7] == "1";
      r.distortion = {std::stod(f[8]), std::stod(f[9]), std::stod(f[10]), std::stod(f[11])};
      r.occluded = f[12] == "1";
      rows.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw FormatError("malformed manifest row '" + line + "'");
    }
  }
  return rows;
}

std::vector<ManifestRow> build_dataset(int count, const BoardDistribution& dist,
                                       std::uint64_t seed, const std::filesystem::path& out_dir) {
  if (count < 0) throw ParameterError("dataset count must be nonnegative");
  std::filesystem::create_directories(out_dir);
  std::vector<ManifestRow> rows;
  for (int i = 0; i < count; ++i) {
    const GeneratedBoard board = generate_board(dist, seed, static_cast<std::uint64_t>(i));
    const std::string stem = image_stem(i);
    save_sample(out_dir, stem, board.render);
    ManifestRow r;
    r.filename = stem + ".pgm";
    r.rows = board.spec.rows;
    r.cols = board.spec.cols;
    r.square_px = board.spec.square_px;
    r.rotation_deg = board.spec.rotation_deg;
    r.skew_deg = board.spec.skew_deg;
    r.noise_std = board.spec.noise_std;
    r.invert = board.spec.invert;
    r.distortion = board.spec.distortion;
    r.occluded = board.spec.occlusion.has_value();
    rows.push_back(std::move(r));
  }
  write_manifest(out_dir / kManifestName, rows);
  return rows;
}

std::vector<TrainingSample> load_dataset(const std::filesystem::path& dir) {
  std::vector<TrainingSample> samples;
  for (const auto& row : read_manifest(dir / kManifestName)) {
    const auto image_path = dir / row.filename;
    ValueGrid image = load_gray(image_path);
    const auto label_path = dir / (image_path.stem().string() + ".labels.csv");
    LabelMask mask(image.height(), image.width(), read_label_csv(label_path));
    samples.push_back({std::move(image), std::move(mask)});
  }
  return samples;
}

}  // namespace xcorner
