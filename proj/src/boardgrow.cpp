#include "xcorner/boardgrow.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <tuple>

namespace xcorner {

namespace {

constexpr double kDeg = 180.0 / std::numbers::pi;

double angle_between_deg(double ax, double ay, double bx, double by) {
  const double na = std::hypot(ax, ay), nb = std::hypot(bx, by);
  if (na == 0.0 || nb == 0.0) return 180.0;
  const double c = std::clamp((ax * bx + ay * by) / (na * nb), -1.0, 1.0);
  return std::acos(c) * kDeg;
}

// Smallest difference between two mod-180 directions, in [0, 90].
double line_angle_diff(double a, double b) {
  double d = std::fmod(std::abs(a - b), 180.0);
  return std::min(d, 180.0 - d);
}

double cross(const Point2& o, const Point2& a, const Point2& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

double median_nn_distance(std::span<const Point2> points) {
  if (points.size() < 2) return 0.0;
  std::vector<double> nn(points.size(), std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (std::size_t j = 0; j < points.size(); ++j) {
      if (i != j) nn[i] = std::min(nn[i], distance(points[i], points[j]));
    }
  }
  auto mid = nn.begin() + static_cast<long>(nn.size() / 2);
  std::nth_element(nn.begin(), mid, nn.end());
  return *mid;
}

struct Context {
  std::span<const Point2> points;
  const ValueGrid& image;
  const RecoveryState& state;
  const GrowOptions& options;
  double median_nn;

  bool usable(int j) const { return state.claimed.empty() || !state.claimed[j]; }

  // Edges run along both local lattice directions u and v.
  bool looks_like_corner(int j, const Point2& u, const Point2& v) const {
    const OrientationSet o = edge_orientations(image, points[j], options.orientation);
    auto has = [&](const Point2& d) {
      const double a = std::atan2(d.y, d.x) * kDeg;
      return std::any_of(o.angles.begin(), o.angles.end(), [&](double b) {
        return line_angle_diff(a, b) <= options.angle_tolerance_deg;
      });
    };
    return has(u) && has(v);
  }
};

RecoveryState make_state(std::size_t n) { return RecoveryState(n); }

void check_sizes(std::span<const Point2> points, const RecoveryState& state) {
  if (state.claimed.size() != points.size() || state.seeded.size() != points.size()) {
    throw DimensionError("recovery state does not match the candidate count");
  }
}

// Nearest usable candidate within the angular cone around `dir_deg`.
int find_along(const Context& ctx, int from, double dir_deg, const std::vector<int>& taken) {
  const Point2 p = ctx.points[from];
  const double dx = std::cos(dir_deg / kDeg), dy = std::sin(dir_deg / kDeg);
  const double lo = ctx.options.min_neighbor_factor * ctx.median_nn;
  const double hi = ctx.options.max_neighbor_factor * ctx.median_nn;
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (int j = 0; j < static_cast<int>(ctx.points.size()); ++j) {
    if (j == from || !ctx.usable(j)) continue;
    if (std::find(taken.begin(), taken.end(), j) != taken.end()) continue;
    const double vx = ctx.points[j].x - p.x, vy = ctx.points[j].y - p.y;
    const double d = std::hypot(vx, vy);
    if (d < lo || d > hi || d >= best_d) continue;
    if (angle_between_deg(vx, vy, dx, dy) > ctx.options.angle_tolerance_deg) continue;
    best = j;
    best_d = d;
  }
  return best;
}

int nearest_within(const Context& ctx, const Point2& target, double radius,
                   const std::vector<int>& taken) {
  int best = -1;
  double best_d = radius;
  for (int j = 0; j < static_cast<int>(ctx.points.size()); ++j) {
    if (!ctx.usable(j)) continue;
    if (std::find(taken.begin(), taken.end(), j) != taken.end()) continue;
    const double d = distance(ctx.points[j], target);
    if (d < best_d) {
      best = j;
      best_d = d;
    }
  }
  return best;
}

// True when no other candidate lies inside the quad (r,c)-(r+1,c+1) or on
// its edges. A seed spanning two squares has corners inside its cells.
bool cells_empty(const Context& ctx, const CornerGrid& g) {
  for (int r = 0; r + 1 < g.rows; ++r) {
    for (int c = 0; c + 1 < g.cols; ++c) {
      const std::array<int, 4> q = {g.at(r, c), g.at(r, c + 1), g.at(r + 1, c + 1), g.at(r + 1, c)};
      if (std::any_of(q.begin(), q.end(), [](int v) { return v < 0; })) continue;
      double edge = 0.0;
      for (int k = 0; k < 4; ++k) edge += 0.25 * distance(ctx.points[q[k]], ctx.points[q[(k + 1) % 4]]);
      const double tol = 0.2 * edge;
      const double sign = cross(ctx.points[q[0]], ctx.points[q[1]], ctx.points[q[2]]) > 0 ? 1.0 : -1.0;
      for (int j = 0; j < static_cast<int>(ctx.points.size()); ++j) {
        if (std::find(q.begin(), q.end(), j) != q.end()) continue;
        const Point2 p = ctx.points[j];
        bool near_vertex = false;
        for (int v : q) near_vertex = near_vertex || distance(p, ctx.points[v]) < tol;
        if (near_vertex) continue;
        bool inside = true;
        for (int k = 0; k < 4 && inside; ++k) {
          const Point2 a = ctx.points[q[k]], b = ctx.points[q[(k + 1) % 4]];
          // Signed distance of p from edge a-b, positive towards the interior.
          inside = sign * cross(a, b, p) / distance(a, b) > -tol;
        }
        if (inside) return false;
      }
    }
  }
  return true;
}

std::optional<CornerGrid> try_seed(const Context& ctx, int s) {
  const OrientationSet o = edge_orientations(ctx.image, ctx.points[s], ctx.options.orientation);
  if (o.size() < 2 || o.size() > 4) return std::nullopt;

  const std::size_t n = o.size();
  std::vector<std::array<int, 2>> nb(n);
  for (std::size_t k = 0; k < n; ++k) {
    nb[k][0] = find_along(ctx, s, o.angles[k] + 180.0, {});
    nb[k][1] = find_along(ctx, s, o.angles[k], {});
  }

  // Pick the two edge families that explain the most neighbours.
  int best_a = -1, best_b = -1, best_found = -1;
  double best_strength = -1.0;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      if (line_angle_diff(o.angles[a], o.angles[b]) < 30.0) continue;
      if (nb[a][0] >= 0 && (nb[a][0] == nb[b][0] || nb[a][0] == nb[b][1])) continue;
      if (nb[a][1] >= 0 && (nb[a][1] == nb[b][0] || nb[a][1] == nb[b][1])) continue;
      const int found = (nb[a][0] >= 0) + (nb[a][1] >= 0) + (nb[b][0] >= 0) + (nb[b][1] >= 0);
      const double strength = o.strengths[a] + o.strengths[b];
      if (found > best_found || (found == best_found && strength > best_strength)) {
        best_a = static_cast<int>(a);
        best_b = static_cast<int>(b);
        best_found = found;
        best_strength = strength;
      }
    }
  }
  if (best_found < 2) return std::nullopt;

  // local[dv + 1][du + 1]; du follows family a (columns), dv family b (rows).
  std::array<std::array<int, 3>, 3> local{};
  for (auto& row : local) row.fill(-1);
  local[1][1] = s;
  local[1][0] = nb[best_a][0];
  local[1][2] = nb[best_a][1];
  local[0][1] = nb[best_b][0];
  local[2][1] = nb[best_b][1];

  std::vector<int> taken = {s};
  const Point2 ps = ctx.points[s];
  double shortest = std::numeric_limits<double>::infinity(), longest = 0.0;
  for (int idx : {local[1][0], local[1][2], local[0][1], local[2][1]}) {
    if (idx < 0) continue;
    taken.push_back(idx);
    shortest = std::min(shortest, distance(ps, ctx.points[idx]));
    longest = std::max(longest, distance(ps, ctx.points[idx]));
  }
  // Board squares are square: a neighbour two cells away shows up as a long step.
  if (longest > ctx.options.max_step_ratio * shortest) return std::nullopt;
  // Every neighbour skipped a hidden corner: the steps span two or more squares.
  if (shortest > ctx.options.max_seed_step * ctx.median_nn) return std::nullopt;
  for (int dv : {-1, 1}) {
    for (int du : {-1, 1}) {
      const int iu = local[1][du + 1], iv = local[dv + 1][1];
      if (iu < 0 || iv < 0) continue;
      const Point2 pu = ctx.points[iu], pv = ctx.points[iv];
      const Point2 pred{pu.x + pv.x - ps.x, pu.y + pv.y - ps.y};
      const double step = 0.5 * (distance(pu, ps) + distance(pv, ps));
      const int j = nearest_within(ctx, pred, ctx.options.accept_radius * step, taken);
      if (j >= 0) {
        local[dv + 1][du + 1] = j;
        taken.push_back(j);
      }
    }
  }

  auto build = [&](int r0, int c0, int size) {
    CornerGrid g(size, size);
    for (int r = 0; r < size; ++r) {
      for (int c = 0; c < size; ++c) g.at(r, c) = local[r0 + r][c0 + c];
    }
    g.mean_edge_px = mean_edge_length(g, ctx.points);
    return g;
  };
  // At least 3/4 of the members must show edges along both seed axes; this
  // rejects seeds that paired a lattice direction with an occluder edge while
  // tolerating a corner whose weaker edge family fell below the prominence cut.
  auto axes_agree = [&](const CornerGrid& g) {
    int agree = 0;
    for (int r = 0; r < g.rows; ++r) {
      for (int c = 0; c < g.cols; ++c) {
        const int cn = c + 1 < g.cols ? c + 1 : c - 1, rn = r + 1 < g.rows ? r + 1 : r - 1;
        const Point2 p = ctx.points[g.at(r, c)];
        const Point2 pc = ctx.points[g.at(r, cn)], pr = ctx.points[g.at(rn, c)];
        agree += ctx.looks_like_corner(g.at(r, c), {pc.x - p.x, pc.y - p.y}, {pr.x - p.x, pr.y - p.y});
      }
    }
    return 4 * agree >= 3 * g.rows * g.cols;
  };
  auto accept = [&](const CornerGrid& g) {
    return grid_is_consistent(g, ctx.points) && cells_empty(ctx, g) && axes_agree(g);
  };

  const bool full = std::all_of(local.begin(), local.end(), [](const auto& row) {
    return std::all_of(row.begin(), row.end(), [](int v) { return v >= 0; });
  });
  if (full) {
    CornerGrid g = build(0, 0, 3);
    if (accept(g)) return g;
  }
  for (int r0 : {0, 1}) {
    for (int c0 : {0, 1}) {
      if (local[r0][c0] < 0 || local[r0][c0 + 1] < 0 || local[r0 + 1][c0] < 0 ||
          local[r0 + 1][c0 + 1] < 0) {
        continue;
      }
      CornerGrid g = build(r0, c0, 2);
      if (accept(g)) return g;
    }
  }
  return std::nullopt;
}

std::vector<char> membership(const CornerGrid& grid, std::size_t n) {
  std::vector<char> in(n, 0);
  for (int idx : grid.cells) {
    if (idx >= 0) in[idx] = 1;
  }
  return in;
}

// Appends one row below the grid if enough extrapolated predictions match.
// Rows with no match at all may be skipped (left empty) within the
// extrapolation reach, so a fully occluded row does not stop growth.
bool extend_bottom(const Context& ctx, CornerGrid& grid) {
  const std::vector<char> in = membership(grid, ctx.points.size());
  const double radius = ctx.options.accept_radius * grid.mean_edge_px;

  struct Pred {
    int col;
    Point2 p;
    Point2 along_col;
    Point2 along_row;
  };
  for (int skip = 0; skip < ctx.options.max_extrapolation; ++skip) {
    const int new_row = grid.rows + skip;
    std::vector<Pred> preds;
    for (int c = 0; c < grid.cols; ++c) {
      int r1 = -1, r0 = -1;
      for (int r = grid.rows - 1; r >= 0; --r) {
        if (!grid.present(r, c)) continue;
        if (r1 < 0) {
          r1 = r;
        } else {
          r0 = r;
          break;
        }
      }
      if (r0 < 0 || new_row - r1 > ctx.options.max_extrapolation) continue;
      const Point2 p1 = ctx.points[grid.at(r1, c)], p0 = ctx.points[grid.at(r0, c)];
      const double t = static_cast<double>(new_row - r1) / (r1 - r0);
      Point2 row_dir{p1.y - p0.y, p0.x - p1.x};
      for (int k = 1; k < grid.cols; ++k) {
        const int cn = c + k < grid.cols && grid.present(r1, c + k) ? c + k
                       : c - k >= 0 && grid.present(r1, c - k)     ? c - k
                                                                   : -1;
        if (cn < 0) continue;
        const Point2 q = ctx.points[grid.at(r1, cn)];
        row_dir = {q.x - p1.x, q.y - p1.y};
        break;
      }
      preds.push_back({c,
                       {p1.x + (p1.x - p0.x) * t, p1.y + (p1.y - p0.y) * t},
                       {p1.x - p0.x, p1.y - p0.y},
                       row_dir});
    }
    if (preds.empty()) return false;

    std::vector<std::tuple<double, int, int>> pairs;  // distance, pred, candidate
    for (int k = 0; k < static_cast<int>(preds.size()); ++k) {
      for (int j = 0; j < static_cast<int>(ctx.points.size()); ++j) {
        if (in[j] || !ctx.usable(j)) continue;
        const double d = distance(ctx.points[j], preds[k].p);
        if (d < radius) pairs.emplace_back(d, k, j);
      }
    }
    std::sort(pairs.begin(), pairs.end());
    std::vector<int> match(preds.size(), -1);
    std::vector<char> used(ctx.points.size(), 0);
    int matched = 0;
    for (const auto& [d, k, j] : pairs) {
      if (match[k] >= 0 || used[j]) continue;
      match[k] = j;
      used[j] = 1;
      ++matched;
    }
    if (matched == 0) continue;
    if (2 * matched < static_cast<int>(preds.size())) {
      // Occlusion beside the border: keep the row only if every match is itself corner-like.
      for (std::size_t k = 0; k < preds.size(); ++k) {
        if (match[k] >= 0 && !ctx.looks_like_corner(match[k], preds[k].along_col, preds[k].along_row)) {
          return false;
        }
      }
    }

    CornerGrid next(new_row + 1, grid.cols);
    std::copy(grid.cells.begin(), grid.cells.end(), next.cells.begin());
    for (std::size_t k = 0; k < preds.size(); ++k) next.at(new_row, preds[k].col) = match[k];
    next.mean_edge_px = mean_edge_length(next, ctx.points);
    if (!grid_is_consistent(next, ctx.points)) return false;
    grid = std::move(next);
    return true;
  }
  return false;
}

CornerGrid to_side(const CornerGrid& g, int side) {
  switch (side) {
    case 1: return g.flipped_rows();
    case 2: return g.transposed();
    case 3: return g.transposed().flipped_rows();
    default: return g;
  }
}

CornerGrid from_side(const CornerGrid& g, int side) {
  switch (side) {
    case 1: return g.flipped_rows();
    case 2: return g.transposed();
    case 3: return g.flipped_rows().transposed();
    default: return g;
  }
}

// Prediction for an absent cell from present cells on its row or column:
// interpolation across the gap when both sides exist, else extrapolation.
std::optional<Point2> predict_cell(const Context& ctx, const CornerGrid& g, int r, int c) {
  auto along = [&](bool vertical) -> std::optional<Point2> {
    const int n = vertical ? g.rows : g.cols;
    const int pos = vertical ? r : c;
    auto cell = [&](int k) { return vertical ? g.at(k, c) : g.at(r, k); };
    std::vector<int> before, after;
    for (int k = pos - 1; k >= 0 && before.size() < 2; --k) {
      if (cell(k) >= 0) before.push_back(k);
    }
    for (int k = pos + 1; k < n && after.size() < 2; ++k) {
      if (cell(k) >= 0) after.push_back(k);
    }
    auto lerp = [&](int k0, int k1) {
      const Point2 p0 = ctx.points[cell(k0)], p1 = ctx.points[cell(k1)];
      const double t = static_cast<double>(pos - k0) / (k1 - k0);
      return Point2{p0.x + (p1.x - p0.x) * t, p0.y + (p1.y - p0.y) * t};
    };
    if (!before.empty() && !after.empty()) return lerp(before[0], after[0]);
    const int reach = ctx.options.max_extrapolation;
    if (before.size() == 2 && pos - before[0] <= reach) return lerp(before[1], before[0]);
    if (after.size() == 2 && after[0] - pos <= reach) return lerp(after[1], after[0]);
    return std::nullopt;
  };
  const auto v = along(true);
  const auto h = along(false);
  if (v && h) return Point2{0.5 * (v->x + h->x), 0.5 * (v->y + h->y)};
  if (v || h) return v ? v : h;

  // Single present neighbour: reuse the lattice step measured on the nearest
  // parallel line where both cells of that step are present.
  const int dirs[4][2] = {{-1, 0}, {1, 0}, {0, -1}, {0, 1}};
  for (const auto& d : dirs) {
    const int nr = r + d[0], nc = c + d[1];
    if (nr < 0 || nc < 0 || nr >= g.rows || nc >= g.cols || !g.present(nr, nc)) continue;
    const bool vertical = d[0] != 0;
    const int span = vertical ? g.cols : g.rows;
    for (int off = 1; off < span; ++off) {
      for (int k : {-off, off}) {
        const int sr = vertical ? r : r + k, sc = vertical ? c + k : c;
        const int tr = vertical ? nr : nr + k, tc = vertical ? nc + k : nc;
        if ((vertical ? sc : sr) < 0 || (vertical ? sc : sr) >= span) continue;
        if (!g.present(sr, sc) || !g.present(tr, tc)) continue;
        const Point2 a = ctx.points[g.at(sr, sc)], b = ctx.points[g.at(tr, tc)];
        const Point2 n = ctx.points[g.at(nr, nc)];
        return Point2{n.x + a.x - b.x, n.y + a.y - b.y};
      }
    }
  }
  return std::nullopt;
}

// Fills absent cells whose prediction lands on an unused candidate.
bool fill_gaps(const Context& ctx, CornerGrid& grid) {
  bool any = false;
  std::vector<char> in = membership(grid, ctx.points.size());
  const double radius = ctx.options.accept_radius * grid.mean_edge_px;
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      if (grid.present(r, c)) continue;
      const auto pred = predict_cell(ctx, grid, r, c);
      if (!pred) continue;
      int best = -1;
      double best_d = radius;
      for (int j = 0; j < static_cast<int>(ctx.points.size()); ++j) {
        if (in[j] || !ctx.usable(j)) continue;
        const double d = distance(ctx.points[j], *pred);
        if (d < best_d) {
          best = j;
          best_d = d;
        }
      }
      if (best < 0) continue;
      CornerGrid next = grid;
      next.at(r, c) = best;
      next.mean_edge_px = mean_edge_length(next, ctx.points);
      if (!grid_is_consistent(next, ctx.points)) continue;
      grid = std::move(next);
      in[best] = 1;
      any = true;
    }
  }
  return any;
}

CornerGrid grow_impl(const Context& ctx, CornerGrid grid) {
  grid.mean_edge_px = mean_edge_length(grid, ctx.points);
  bool changed = true;
  while (changed) {
    changed = false;
    for (int side = 0; side < 4; ++side) {
      CornerGrid g = to_side(grid, side);
      if (extend_bottom(ctx, g)) {
        grid = from_side(g, side);
        changed = true;
      }
    }
    if (fill_gaps(ctx, grid)) changed = true;
  }
  return grid;
}

std::array<CornerGrid, 8> symmetries(const CornerGrid& g) {
  std::array<CornerGrid, 8> out;
  CornerGrid cur = g;
  for (int i = 0; i < 4; ++i) {
    out[2 * i] = cur;
    out[2 * i + 1] = cur.transposed();
    // Rotation by 90 degrees: transpose then flip columns.
    cur = cur.transposed().flipped_cols();
  }
  return out;
}

// Places `m` into `grid` coordinates if some symmetry of m lands >= 2 shared
// corners on identical cells and overlaps nothing else.
std::optional<CornerGrid> combine(const Context& ctx, const CornerGrid& grid,
                                  const CornerGrid& m) {
  std::vector<std::pair<int, int>> pos(ctx.points.size(), {-1, -1});
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      if (grid.present(r, c)) pos[grid.at(r, c)] = {r, c};
    }
  }
  for (const CornerGrid& t : symmetries(m)) {
    int shared = 0;
    bool consistent = true;
    int off_r = 0, off_c = 0;
    for (int r = 0; r < t.rows && consistent; ++r) {
      for (int c = 0; c < t.cols; ++c) {
        const int idx = t.at(r, c);
        if (idx < 0 || pos[idx].first < 0) continue;
        const int orr = pos[idx].first - r, occ = pos[idx].second - c;
        if (shared == 0) {
          off_r = orr;
          off_c = occ;
        } else if (orr != off_r || occ != off_c) {
          consistent = false;
          break;
        }
        ++shared;
      }
    }
    if (!consistent || shared < 2) continue;

    const int r_lo = std::min(0, off_r), c_lo = std::min(0, off_c);
    const int r_hi = std::max(grid.rows, off_r + t.rows), c_hi = std::max(grid.cols, off_c + t.cols);
    CornerGrid out(r_hi - r_lo, c_hi - c_lo);
    for (int r = 0; r < grid.rows; ++r) {
      for (int c = 0; c < grid.cols; ++c) out.at(r - r_lo, c - c_lo) = grid.at(r, c);
    }
    bool clash = false;
    for (int r = 0; r < t.rows && !clash; ++r) {
      for (int c = 0; c < t.cols; ++c) {
        const int idx = t.at(r, c);
        if (idx < 0) continue;
        int& cell = out.at(r + off_r - r_lo, c + off_c - c_lo);
        if (cell >= 0 && cell != idx) {
          clash = true;
          break;
        }
        if (cell < 0 && pos[idx].first >= 0) {
          clash = true;
          break;
        }
        cell = idx;
      }
    }
    if (clash) continue;
    out.mean_edge_px = mean_edge_length(out, ctx.points);
    if (grid_is_consistent(out, ctx.points)) return out;
  }
  return std::nullopt;
}

CornerGrid merge_impl(const Context& ctx, CornerGrid grid) {
  grid.mean_edge_px = mean_edge_length(grid, ctx.points);
  if (std::min(grid.rows, grid.cols) == 2) {
    const std::vector<int> boundary = grid.present_indices();
    for (int b : boundary) {
      const auto m = try_seed(ctx, b);
      if (!m) continue;
      const double ratio = m->mean_edge_px / grid.mean_edge_px;
      if (ratio < ctx.options.merge_min || ratio > ctx.options.merge_max) continue;
      if (auto merged = combine(ctx, grid, *m)) grid = std::move(*merged);
    }
  }
  return grow_impl(ctx, std::move(grid));
}

}  // namespace

OrientationSet edge_orientations(const ValueGrid& image, Point2 corner,
                                 const OrientationOptions& options) {
  if (options.window < 3 || options.bins < 3 || !(options.prominence > 0.0)) {
    throw ParameterError("invalid orientation histogram options");
  }
  OrientationSet out;
  const int cx = static_cast<int>(std::lround(corner.x));
  const int cy = static_cast<int>(std::lround(corner.y));
  const int half = options.window / 2;
  const int x0 = std::max(1, cx - half), x1 = std::min(image.width() - 2, cx + options.window - half - 1);
  const int y0 = std::max(1, cy - half), y1 = std::min(image.height() - 2, cy + options.window - half - 1);
  if (x0 > x1 || y0 > y1) return out;

  const int bins = options.bins;
  std::vector<double> hist(bins, 0.0);
  double total = 0.0;
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double gx = 0.5 * (image.at(y, x + 1) - image.at(y, x - 1));
      const double gy = 0.5 * (image.at(y + 1, x) - image.at(y - 1, x));
      const double mag = std::hypot(gx, gy);
      if (mag == 0.0) continue;
      double theta = std::atan2(gy, gx) * kDeg;
      theta = std::fmod(theta + 360.0, 180.0);
      const int bin = std::min(bins - 1, static_cast<int>(theta / 180.0 * bins));
      hist[bin] += mag;
      total += mag;
    }
  }
  const double pixels = static_cast<double>(x1 - x0 + 1) * (y1 - y0 + 1);
  if (total < 1e-6 * pixels) return out;

  std::vector<double> smooth(bins);
  for (int i = 0; i < bins; ++i) {
    smooth[i] = 0.25 * (hist[(i + bins - 1) % bins] + 2.0 * hist[i] + hist[(i + 1) % bins]);
  }
  const double peak = *std::max_element(smooth.begin(), smooth.end());
  for (int i = 0; i < bins; ++i) {
    const double l = smooth[(i + bins - 1) % bins], c = smooth[i], r = smooth[(i + 1) % bins];
    if (c < options.prominence * peak || !(c > l) || !(c >= r)) continue;
    double delta = 0.0;
    const double den = l - 2.0 * c + r;
    if (den < 0.0) delta = std::clamp(0.5 * (l - r) / den, -0.5, 0.5);
    const double gradient_dir = (i + 0.5 + delta) * 180.0 / bins;
    out.angles.push_back(std::fmod(gradient_dir + 90.0, 180.0));
    out.strengths.push_back(c);
  }
  std::vector<std::size_t> order(out.angles.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return out.angles[a] < out.angles[b]; });
  OrientationSet sorted;
  for (std::size_t k : order) {
    sorted.angles.push_back(out.angles[k]);
    sorted.strengths.push_back(out.strengths[k]);
  }
  return sorted;
}

int CornerGrid::present_count() const {
  return static_cast<int>(std::count_if(cells.begin(), cells.end(), [](int v) { return v >= 0; }));
}

std::vector<int> CornerGrid::present_indices() const {
  std::vector<int> out;
  for (int v : cells) {
    if (v >= 0) out.push_back(v);
  }
  return out;
}

CornerGrid CornerGrid::transposed() const {
  CornerGrid g(cols, rows);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) g.at(c, r) = at(r, c);
  }
  g.mean_edge_px = mean_edge_px;
  return g;
}

CornerGrid CornerGrid::flipped_rows() const {
  CornerGrid g(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) g.at(rows - 1 - r, c) = at(r, c);
  }
  g.mean_edge_px = mean_edge_px;
  return g;
}

CornerGrid CornerGrid::flipped_cols() const {
  CornerGrid g(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) g.at(r, cols - 1 - c) = at(r, c);
  }
  g.mean_edge_px = mean_edge_px;
  return g;
}

double mean_edge_length(const CornerGrid& grid, std::span<const Point2> points) {
  double sum = 0.0;
  int count = 0;
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      if (!grid.present(r, c)) continue;
      const Point2 p = points[grid.at(r, c)];
      if (c + 1 < grid.cols && grid.present(r, c + 1)) {
        sum += distance(p, points[grid.at(r, c + 1)]);
        ++count;
      }
      if (r + 1 < grid.rows && grid.present(r + 1, c)) {
        sum += distance(p, points[grid.at(r + 1, c)]);
        ++count;
      }
    }
  }
  return count > 0 ? sum / count : 0.0;
}

bool grid_is_consistent(const CornerGrid& grid, std::span<const Point2> points) {
  if (grid.rows < 1 || grid.cols < 1 ||
      grid.cells.size() != static_cast<std::size_t>(grid.rows) * grid.cols) {
    return false;
  }
  std::vector<int> idx = grid.present_indices();
  for (int v : idx) {
    if (v >= static_cast<int>(points.size())) return false;
  }
  std::sort(idx.begin(), idx.end());
  if (std::adjacent_find(idx.begin(), idx.end()) != idx.end()) return false;

  const double mean = mean_edge_length(grid, points);
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      if (!grid.present(r, c)) continue;
      const Point2 p = points[grid.at(r, c)];
      for (auto [nr, nc] : {std::pair{r, c + 1}, std::pair{r + 1, c}}) {
        if (nr >= grid.rows || nc >= grid.cols || !grid.present(nr, nc)) continue;
        const double d = distance(p, points[grid.at(nr, nc)]);
        if (d < 0.5 * mean || d > 2.0 * mean) return false;
      }
    }
  }

  int winding = 0;
  for (int r = 0; r + 1 < grid.rows; ++r) {
    for (int c = 0; c + 1 < grid.cols; ++c) {
      if (!grid.present(r, c) || !grid.present(r, c + 1) || !grid.present(r + 1, c + 1) ||
          !grid.present(r + 1, c)) {
        continue;
      }
      const std::array<Point2, 4> q = {points[grid.at(r, c)], points[grid.at(r, c + 1)],
                                       points[grid.at(r + 1, c + 1)], points[grid.at(r + 1, c)]};
      for (int k = 0; k < 4; ++k) {
        const double z = cross(q[k], q[(k + 1) % 4], q[(k + 2) % 4]);
        const int sign = z > 0.0 ? 1 : (z < 0.0 ? -1 : 0);
        if (sign == 0) return false;
        if (winding == 0) winding = sign;
        if (sign != winding) return false;
      }
    }
  }
  return true;
}

std::optional<CornerGrid> seed_matrix(std::span<const Point2> points,
                                      std::span<const double> responses, const ValueGrid& image,
                                      RecoveryState& state, const GrowOptions& options) {
  if (responses.size() != points.size()) {
    throw DimensionError("responses must parallel candidates");
  }
  check_sizes(points, state);
  const Context ctx{points, image, state, options, median_nn_distance(points)};
  int available = 0;
  for (std::size_t i = 0; i < points.size(); ++i) available += ctx.usable(static_cast<int>(i));
  if (available < 4) return std::nullopt;

  std::vector<int> order(points.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return responses[a] > responses[b]; });
  for (int s : order) {
    if (state.claimed[s] || state.seeded[s]) continue;
    state.seeded[s] = 1;
    if (auto g = try_seed(ctx, s)) return g;
  }
  return std::nullopt;
}

std::optional<CornerGrid> seed_matrix(std::span<const Point2> points,
                                      std::span<const double> responses, const ValueGrid& image,
                                      const GrowOptions& options) {
  RecoveryState state = make_state(points.size());
  return seed_matrix(points, responses, image, state, options);
}

CornerGrid grow(CornerGrid grid, std::span<const Point2> points, const ValueGrid& image,
                const RecoveryState& state, const GrowOptions& options) {
  check_sizes(points, state);
  const Context ctx{points, image, state, options, median_nn_distance(points)};
  return grow_impl(ctx, std::move(grid));
}

CornerGrid grow(CornerGrid grid, std::span<const Point2> points, const ValueGrid& image,
                const GrowOptions& options) {
  return grow(std::move(grid), points, image, make_state(points.size()), options);
}

CornerGrid merge_two_wide(CornerGrid grid, std::span<const Point2> points, const ValueGrid& image,
                          const RecoveryState& state, const GrowOptions& options) {
  check_sizes(points, state);
  const Context ctx{points, image, state, options, median_nn_distance(points)};
  return merge_impl(ctx, std::move(grid));
}

CornerGrid merge_two_wide(CornerGrid grid, std::span<const Point2> points, const ValueGrid& image,
                          const GrowOptions& options) {
  return merge_two_wide(std::move(grid), points, image, make_state(points.size()), options);
}

CornerGrid canonicalize(const CornerGrid& grid, std::span<const Point2> points) {
  const double inf = std::numeric_limits<double>::infinity();
  auto key = [&](const CornerGrid& g) {
    std::vector<std::pair<double, double>> k;
    k.reserve(g.cells.size());
    for (int v : g.cells) k.emplace_back(v >= 0 ? points[v].y : inf, v >= 0 ? points[v].x : inf);
    return k;
  };
  std::optional<CornerGrid> best;
  std::vector<std::pair<double, double>> best_key;
  for (const CornerGrid& t : symmetries(grid)) {
    if (t.rows < t.cols) continue;
    auto k = key(t);
    if (!best || k < best_key) {
      best = t;
      best_key = std::move(k);
    }
  }
  best->mean_edge_px = mean_edge_length(*best, points);
  return *best;
}

std::vector<CornerGrid> recover_boards(std::span<const Point2> points,
                                       std::span<const double> responses, const ValueGrid& image,
                                       const GrowOptions& options) {
  if (responses.size() != points.size()) {
    throw DimensionError("responses must parallel candidates");
  }
  std::vector<CornerGrid> grids;
  RecoveryState state = make_state(points.size());
  const double median_nn = median_nn_distance(points);
  while (auto seed = seed_matrix(points, responses, image, state, options)) {
    const Context ctx{points, image, state, options, median_nn};
    CornerGrid g = grow_impl(ctx, std::move(*seed));
    if (std::min(g.rows, g.cols) == 2) g = merge_impl(ctx, std::move(g));
    if (g.present_count() < 4 || !grid_is_consistent(g, points)) continue;
    for (int idx : g.cells) {
      if (idx >= 0) state.claimed[idx] = 1;
    }
    grids.push_back(canonicalize(g, points));
  }
  return grids;
}

}  // namespace xcorner
