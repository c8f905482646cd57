#include "xcorner/subpix.hpp"

#include <cmath>

#include <Eigen/Dense>

namespace xcorner {

namespace {

bool strict_local_max(const ValueGrid& map, Pixel p) {
  if (p.x < 1 || p.y < 1 || p.x + 1 >= map.width() || p.y + 1 >= map.height()) return false;
  const double c = map.at(p.y, p.x);
  return c > map.at(p.y, p.x - 1) && c > map.at(p.y, p.x + 1) && c > map.at(p.y - 1, p.x) &&
         c > map.at(p.y + 1, p.x);
}

// Vertex of the parabola through (-1, a), (0, b), (1, c).
bool three_point(double a, double b, double c, double& delta) {
  const double den = a - 2.0 * b + c;
  if (den == 0.0 || !std::isfinite(den)) return false;
  delta = 0.5 * (a - c) / den;
  return std::isfinite(delta);
}

bool window_fits(const ValueGrid& g, Pixel p, int hw) {
  return p.x - hw >= 0 && p.y - hw >= 0 && p.x + hw < g.width() && p.y + hw < g.height();
}

double bilinear(const ValueGrid& g, int c, double x, double y) {
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const double fx = x - x0;
  const double fy = y - y0;
  const int x1 = std::min(x0 + 1, g.width() - 1);
  const int y1 = std::min(y0 + 1, g.height() - 1);
  return (1 - fy) * ((1 - fx) * g(c, y0, x0) + fx * g(c, y0, x1)) +
         fy * ((1 - fx) * g(c, y1, x0) + fx * g(c, y1, x1));
}

}  // namespace

SubpixelOffset gaussian_peak(const ValueGrid& map, Pixel peak) {
  if (!strict_local_max(map, peak)) return SubpixelOffset::invalid();
  const double f0 = map.at(peak.y, peak.x);
  const double fl = map.at(peak.y, peak.x - 1);
  const double fr = map.at(peak.y, peak.x + 1);
  const double fu = map.at(peak.y - 1, peak.x);
  const double fd = map.at(peak.y + 1, peak.x);
  if (!(f0 > 0 && fl > 0 && fr > 0 && fu > 0 && fd > 0)) return SubpixelOffset::invalid();
  SubpixelOffset out;
  const double l0 = std::log(f0);
  if (!three_point(std::log(fl), l0, std::log(fr), out.dx)) return SubpixelOffset::invalid();
  if (!three_point(std::log(fu), l0, std::log(fd), out.dy)) return SubpixelOffset::invalid();
  out.valid = true;
  return out;
}

SubpixelOffset parabolic_peak(const ValueGrid& map, Pixel peak) {
  if (!strict_local_max(map, peak)) return SubpixelOffset::invalid();
  const double f0 = map.at(peak.y, peak.x);
  SubpixelOffset out;
  if (!three_point(map.at(peak.y, peak.x - 1), f0, map.at(peak.y, peak.x + 1), out.dx)) {
    return SubpixelOffset::invalid();
  }
  if (!three_point(map.at(peak.y - 1, peak.x), f0, map.at(peak.y + 1, peak.x), out.dy)) {
    return SubpixelOffset::invalid();
  }
  out.valid = true;
  return out;
}

SubpixelOffset com_peak(const ValueGrid& map, Pixel peak, int halfwidth) {
  if (halfwidth < 0) throw ParameterError("halfwidth must be nonnegative");
  if (!window_fits(map, peak, halfwidth)) return SubpixelOffset::invalid();
  double mass = 0.0, mx = 0.0, my = 0.0;
  for (int j = -halfwidth; j <= halfwidth; ++j) {
    for (int i = -halfwidth; i <= halfwidth; ++i) {
      const double v = std::max(0.0, map.at(peak.y + j, peak.x + i));
      mass += v;
      mx += v * i;
      my += v * j;
    }
  }
  if (!(mass > 0.0)) return SubpixelOffset::invalid();
  return {mx / mass, my / mass, true};
}

SubpixelOffset surface_fit_saddle(const ValueGrid& image, Pixel point, int halfwidth) {
  if (halfwidth < 1) throw ParameterError("surface fit needs halfwidth >= 1");
  if (!window_fits(image, point, halfwidth)) return SubpixelOffset::invalid();
  const int side = 2 * halfwidth + 1;
  Eigen::MatrixXd a(side * side, 6);
  Eigen::VectorXd b(side * side);
  int row = 0;
  for (int j = -halfwidth; j <= halfwidth; ++j) {
    for (int i = -halfwidth; i <= halfwidth; ++i) {
      a.row(row) << 1.0, i, j, double(i) * i, double(i) * j, double(j) * j;
      b(row) = image.at(point.y + j, point.x + i);
      ++row;
    }
  }
  const Eigen::VectorXd c = a.colPivHouseholderQr().solve(b);
  const double d = c(3), e = c(4), f = c(5);
  const double det = 4.0 * d * f - e * e;
  if (!(det < 0.0)) return SubpixelOffset::invalid();
  // [2d e; e 2f] p = -[b c]
  const double dx = (-c(1) * 2.0 * f + c(2) * e) / det;
  const double dy = (-c(2) * 2.0 * d + c(1) * e) / det;
  if (!std::isfinite(dx) || !std::isfinite(dy)) return SubpixelOffset::invalid();
  if (std::abs(dx) > halfwidth || std::abs(dy) > halfwidth) return SubpixelOffset::invalid();
  return {dx, dy, true};
}

SubpixelOffset edge_approx(const ValueGrid& image, Pixel point, const EdgeApproxOptions& options) {
  const int hw = options.halfwidth;
  if (hw < 1 || options.max_iter < 1 || !(options.eps > 0.0)) {
    throw ParameterError("edge_approx needs halfwidth >= 1, max_iter >= 1, eps > 0");
  }
  if (!window_fits(image, point, hw + 1)) return SubpixelOffset::invalid();

  // Central-difference gradients on the integer grid; borders stay zero.
  ValueGrid grad(2, image.height(), image.width());
  for (int y = 1; y + 1 < image.height(); ++y) {
    for (int x = 1; x + 1 < image.width(); ++x) {
      grad(0, y, x) = 0.5 * (image.at(y, x + 1) - image.at(y, x - 1));
      grad(1, y, x) = 0.5 * (image.at(y + 1, x) - image.at(y - 1, x));
    }
  }

  double qx = point.x, qy = point.y;
  for (int iter = 0; iter < options.max_iter; ++iter) {
    if (qx - hw < 1 || qy - hw < 1 || qx + hw > image.width() - 2 ||
        qy + hw > image.height() - 2) {
      return SubpixelOffset::invalid();
    }
    double a = 0, b = 0, c = 0, bx = 0, by = 0;
    for (int j = -hw; j <= hw; ++j) {
      for (int i = -hw; i <= hw; ++i) {
        const double px = qx + i, py = qy + j;
        const double gx = bilinear(grad, 0, px, py);
        const double gy = bilinear(grad, 1, px, py);
        const double gxx = gx * gx, gxy = gx * gy, gyy = gy * gy;
        a += gxx;
        b += gxy;
        c += gyy;
        bx += gxx * px + gxy * py;
        by += gxy * px + gyy * py;
      }
    }
    const double det = a * c - b * b;
    if (!(std::abs(det) > 1e-12 * std::max(1e-30, (a + c) * (a + c)))) {
      return SubpixelOffset::invalid();
    }
    const double nx = (c * bx - b * by) / det;
    const double ny = (a * by - b * bx) / det;
    const double step = std::hypot(nx - qx, ny - qy);
    qx = nx;
    qy = ny;
    if (!std::isfinite(qx) || !std::isfinite(qy)) return SubpixelOffset::invalid();
    if (step < options.eps) break;
  }
  const double dx = qx - point.x, dy = qy - point.y;
  if (std::abs(dx) > hw || std::abs(dy) > hw) return SubpixelOffset::invalid();
  return {dx, dy, true};
}

MixedRefinement mixed_refine(const ValueGrid& image, const ValueGrid& map, Pixel point) {
  const SubpixelOffset s = surface_fit_saddle(image, point);
  const SubpixelOffset g = gaussian_peak(map, point);
  if (s.valid && g.valid) {
    return {{0.5 * (s.dx + g.dx), 0.5 * (s.dy + g.dy), true}, MixedSource::kBoth};
  }
  if (s.valid) return {s, MixedSource::kSurfaceOnly};
  if (g.valid) return {g, MixedSource::kGaussianOnly};
  return {SubpixelOffset::invalid(), MixedSource::kNeither};
}

std::string to_string(RefineMethod method) {
  switch (method) {
    case RefineMethod::kNone: return "none";
    case RefineMethod::kMixed: return "mixed";
    case RefineMethod::kGaussian: return "gauss";
    case RefineMethod::kParabolic: return "parabolic";
    case RefineMethod::kCom: return "com";
    case RefineMethod::kSurface: return "surface";
    case RefineMethod::kEdge: return "edge";
  }
  return "none";
}

RefineMethod parse_refine_method(const std::string& text) {
  for (RefineMethod m : all_refine_methods()) {
    if (to_string(m) == text) return m;
  }
  if (text == "gaussian") return RefineMethod::kGaussian;
  throw ParameterError("unknown refine method '" + text + "'");
}

std::vector<RefineMethod> all_refine_methods() {
  return {RefineMethod::kNone,  RefineMethod::kMixed,   RefineMethod::kGaussian,
          RefineMethod::kParabolic, RefineMethod::kCom, RefineMethod::kSurface,
          RefineMethod::kEdge};
}

SubpixelOffset refine(RefineMethod method, const ValueGrid& image, const ValueGrid& map,
                      Pixel point) {
  switch (method) {
    case RefineMethod::kNone: return SubpixelOffset::invalid();
    case RefineMethod::kMixed: return mixed_refine(image, map, point).offset;
    case RefineMethod::kGaussian: return gaussian_peak(map, point);
    case RefineMethod::kParabolic: return parabolic_peak(map, point);
    case RefineMethod::kCom: return com_peak(map, point);
    case RefineMethod::kSurface: return surface_fit_saddle(image, point);
    case RefineMethod::kEdge: return edge_approx(image, point);
  }
  return SubpixelOffset::invalid();
}

}  // namespace xcorner
