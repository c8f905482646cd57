#pragma once

#include <optional>
#include <span>
#include <vector>

#include "xcorner/grid.hpp"

namespace xcorner {

/// Dominant edge directions around a corner, degrees in [0, 180), ascending.
struct OrientationSet {
  std::vector<double> angles;
  std::vector<double> strengths;

  std::size_t size() const { return angles.size(); }
};

struct OrientationOptions {
  int window = 20;
  int bins = 32;
  double prominence = 0.3;  ///< peaks below this fraction of the maximum are ignored
};

/// Magnitude-weighted histogram of gradient directions folded to [0, 180),
/// smoothed with a circular 1-2-1 kernel. Peaks are turned into edge
/// directions (+90 degrees). The window is clipped at image borders.
OrientationSet edge_orientations(const ValueGrid& image, Point2 corner,
                                 const OrientationOptions& options = {});

/// rows x cols assignment of candidate indices; -1 marks an absent cell.
struct CornerGrid {
  int rows = 0;
  int cols = 0;
  std::vector<int> cells;
  double mean_edge_px = 0.0;

  CornerGrid() = default;
  CornerGrid(int r, int c) : rows(r), cols(c), cells(static_cast<std::size_t>(r) * c, -1) {}

  int at(int r, int c) const { return cells[static_cast<std::size_t>(r) * cols + c]; }
  int& at(int r, int c) { return cells[static_cast<std::size_t>(r) * cols + c]; }
  bool present(int r, int c) const { return at(r, c) >= 0; }
  int present_count() const;
  std::vector<int> present_indices() const;

  CornerGrid transposed() const;
  CornerGrid flipped_rows() const;
  CornerGrid flipped_cols() const;
};

/// Mean distance between row- or column-adjacent present cells (0 if none).
double mean_edge_length(const CornerGrid& grid, std::span<const Point2> points);

/// Distinct indices, every fully present 2x2 block convex with one common
/// winding, and adjacent spacings within [0.5, 2] x mean edge.
bool grid_is_consistent(const CornerGrid& grid, std::span<const Point2> points);

struct GrowOptions {
  OrientationOptions orientation;
  double angle_tolerance_deg = 15.0;
  double min_neighbor_factor = 0.3;   ///< x median nearest-neighbour distance
  double max_neighbor_factor = 3.0;
  double accept_radius = 0.3;         ///< x mean edge
  double merge_min = 0.8;
  double merge_max = 1.2;
  int max_extrapolation = 3;          ///< cells between the last present cell and a prediction
  double max_step_ratio = 1.6;        ///< longest / shortest seed step
  double max_seed_step = 1.5;         ///< shortest seed step, x median nearest-neighbour distance
};

/// Candidate bookkeeping shared by the recovery steps. `claimed` candidates
/// belong to an earlier grid; `seeded` ones were already tried as seeds.
struct RecoveryState {
  std::vector<char> claimed;
  std::vector<char> seeded;

  explicit RecoveryState(std::size_t n = 0) : claimed(n, 0), seeded(n, 0) {}
};

/// Tries unseeded candidates in descending response order until one yields a
/// 3x3 (preferred) or 2x2 indexing matrix. Returns nullopt when all fail or
/// fewer than 4 candidates are available.
std::optional<CornerGrid> seed_matrix(std::span<const Point2> points,
                                      std::span<const double> responses, const ValueGrid& image,
                                      RecoveryState& state, const GrowOptions& options = {});
std::optional<CornerGrid> seed_matrix(std::span<const Point2> points,
                                      std::span<const double> responses, const ValueGrid& image,
                                      const GrowOptions& options = {});

/// Border-by-border extension by linear extrapolation. Never removes a cell.
CornerGrid grow(CornerGrid grid, std::span<const Point2> points, const ValueGrid& image,
                const RecoveryState& state, const GrowOptions& options = {});
CornerGrid grow(CornerGrid grid, std::span<const Point2> points, const ValueGrid& image,
                const GrowOptions& options = {});

/// Seeds extra matrices at the boundary of a 2-wide grid and merges those whose
/// mean edge is within [0.8, 1.2] of the grid's and whose shared corners
/// coincide, then grows.
CornerGrid merge_two_wide(CornerGrid grid, std::span<const Point2> points, const ValueGrid& image,
                          const RecoveryState& state, const GrowOptions& options = {});
CornerGrid merge_two_wide(CornerGrid grid, std::span<const Point2> points, const ValueGrid& image,
                          const GrowOptions& options = {});

/// Rotates/flips to rows >= cols, then picks the symmetry whose row-major
/// sequence of present positions is lexicographically smallest in (y, x).
CornerGrid canonicalize(const CornerGrid& grid, std::span<const Point2> points);

/// Repeated seed -> grow -> merge until seeding fails. Grids with fewer than
/// 4 present cells are dropped. Candidate sets of returned grids are disjoint.
std::vector<CornerGrid> recover_boards(std::span<const Point2> points,
                                       std::span<const double> responses, const ValueGrid& image,
                                       const GrowOptions& options = {});

}  // namespace xcorner
