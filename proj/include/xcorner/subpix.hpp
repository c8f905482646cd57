#pragma once

#include <string>
#include <vector>

#include "xcorner/grid.hpp"

namespace xcorner {

/// Offset from an integer start pixel. `valid` is false when a method's
/// preconditions fail; callers then keep the integer location.
struct SubpixelOffset {
  double dx = 0.0;
  double dy = 0.0;
  bool valid = false;

  static SubpixelOffset invalid() { return {}; }
};

/// Three-point Gaussian fit on the response map, per axis, in the log domain.
/// Requires a strict 4-neighbourhood maximum with all five samples positive.
SubpixelOffset gaussian_peak(const ValueGrid& map, Pixel peak);

/// Three-point parabola fit per axis. Requires a strict 4-neighbourhood maximum.
SubpixelOffset parabolic_peak(const ValueGrid& map, Pixel peak);

/// Centroid of max(0, value) over a (2h+1)^2 window, relative to its center.
SubpixelOffset com_peak(const ValueGrid& map, Pixel peak, int halfwidth = 4);

/// Quadratic surface a + bx + cy + dx^2 + exy + fy^2 fitted by least squares on
/// a (2h+1)^2 intensity window; the offset is its stationary point, accepted
/// only for an indefinite Hessian inside the window.
SubpixelOffset surface_fit_saddle(const ValueGrid& image, Pixel point, int halfwidth = 2);

struct EdgeApproxOptions {
  int halfwidth = 4;
  int max_iter = 40;
  double eps = 1e-3;
};

/// Gradient-orthogonality corner refinement: q <- (sum G_p)^-1 (sum G_p p) with
/// G_p = grad I grad I^T, the window re-centred on q each iteration.
SubpixelOffset edge_approx(const ValueGrid& image, Pixel point, const EdgeApproxOptions& options = {});

enum class MixedSource { kBoth, kSurfaceOnly, kGaussianOnly, kNeither };

struct MixedRefinement {
  SubpixelOffset offset;
  MixedSource source = MixedSource::kNeither;
};

/// Mean of surface_fit_saddle (intensity) and gaussian_peak (response); falls
/// back to whichever component is valid, else to the integer location.
MixedRefinement mixed_refine(const ValueGrid& image, const ValueGrid& map, Pixel point);

enum class RefineMethod { kNone, kMixed, kGaussian, kParabolic, kCom, kSurface, kEdge };

std::string to_string(RefineMethod method);
/// Accepts none|mixed|gauss|parabolic|com|surface|edge.
RefineMethod parse_refine_method(const std::string& text);
std::vector<RefineMethod> all_refine_methods();

/// Dispatches to one method with its default window.
SubpixelOffset refine(RefineMethod method, const ValueGrid& image, const ValueGrid& map,
                      Pixel point);

}  // namespace xcorner
