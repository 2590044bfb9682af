// 2-D arena geometry for the maze and doors environments. A layout is a
// structured text document (walls as axis-aligned rectangles, goals as
// discs, a start region, optional door openings); the canonical text is
// hashed so runs can cite exactly which geometry they used.
#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "brpo/core.hpp"

namespace brpo {

using Vec2 = Eigen::Vector2d;

struct Rect {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  bool contains(double x, double y) const {
    return x >= x0 && x <= x1 && y >= y0 && y <= y1;
  }
  bool contains(const Vec2& p) const { return contains(p.x(), p.y()); }
};

struct GoalDisc {
  Vec2 center;
  double radius = 0.3;
  bool contains(const Vec2& p) const {
    return (p - center).norm() <= radius;
  }
};

// A passable opening in a wall band. When the corresponding latent bit is
// closed the opening behaves like a wall that reports a crash on contact.
struct DoorGap {
  double cx = 0, y0 = 0, y1 = 0, halfwidth = 0.5;
  Rect rect() const { return {cx - halfwidth, y0, cx + halfwidth, y1}; }
  Vec2 center() const { return {cx, 0.5 * (y0 + y1)}; }
};

// First-contact parameter of the swept point p -> p + d against a rect,
// in [0, 1]; returns +inf when the segment misses.
inline double sweep_hit(const Vec2& p, const Vec2& d, const Rect& r) {
  double t_entry = 0.0, t_exit = 1.0;
  const double lo[2] = {r.x0, r.y0};
  const double hi[2] = {r.x1, r.y1};
  for (int ax = 0; ax < 2; ++ax) {
    double pa = p[ax], da = d[ax];
    if (std::abs(da) < 1e-15) {
      if (pa < lo[ax] || pa > hi[ax]) return std::numeric_limits<double>::infinity();
    } else {
      double t0 = (lo[ax] - pa) / da;
      double t1 = (hi[ax] - pa) / da;
      if (t0 > t1) std::swap(t0, t1);
      t_entry = std::max(t_entry, t0);
      t_exit = std::min(t_exit, t1);
    }
  }
  if (t_entry > t_exit) return std::numeric_limits<double>::infinity();
  return t_entry;
}

struct Layout {
  int version = 1;
  std::string name;
  Rect bounds;
  double speed_cap = 1.0;
  Vec2 start{0, 0};
  double start_radius = 0.25;
  std::vector<Rect> walls;
  std::vector<GoalDisc> goals;
  std::vector<DoorGap> doors;
  std::string text;   // canonical source
  uint64_t hash = 0;  // fnv1a64 of text

  // Earliest contact along p -> p + d over the given rect list; returns
  // {t, index} with index -1 when nothing is hit.
  static std::pair<double, int> first_hit(const Vec2& p, const Vec2& d,
                                          const std::vector<Rect>& rects) {
    double best = std::numeric_limits<double>::infinity();
    int idx = -1;
    for (size_t i = 0; i < rects.size(); ++i) {
      double t = sweep_hit(p, d, rects[i]);
      if (t < best) {
        best = t;
        idx = static_cast<int>(i);
      }
    }
    return {best, idx};
  }

  bool segment_clear(const Vec2& a, const Vec2& b) const {
    Vec2 d = b - a;
    auto [t, idx] = first_hit(a, d, walls);
    return idx < 0 || t > 1.0;
  }

  bool in_free_space(const Vec2& p) const {
    if (!bounds.contains(p)) return false;
    for (const auto& w : walls) {
      if (w.contains(p)) return false;
    }
    return true;
  }

  Vec2 clamp_to_bounds(const Vec2& p, double margin = 1e-6) const {
    return {std::clamp(p.x(), bounds.x0 + margin, bounds.x1 - margin),
            std::clamp(p.y(), bounds.y0 + margin, bounds.y1 - margin)};
  }

  static Layout parse(const std::string& text);
  static const Layout& builtin(const std::string& name);
  static Layout load(const std::string& path_or_builtin);
};

inline Layout Layout::parse(const std::string& text) {
  Layout lay;
  lay.text = text;
  lay.hash = fnv1a64(text);
  std::istringstream in(text);
  std::string line;
  bool header_seen = false;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto cut = line.find('#');
    if (cut != std::string::npos) line = line.substr(0, cut);
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    auto want = [&](int n, double* out) {
      for (int i = 0; i < n; ++i) {
        if (!(ls >> out[i]))
          throw Error("layout line " + std::to_string(lineno) + ": expected " +
                      std::to_string(n) + " numbers after '" + key + "'");
      }
    };
    double v[4];
    if (key == "layout") {
      std::string ver;
      ls >> ver;
      if (ver != "v1") throw Error("unsupported layout version: " + ver);
      header_seen = true;
    } else if (key == "name") {
      ls >> lay.name;
    } else if (key == "bounds") {
      want(4, v);
      lay.bounds = {v[0], v[1], v[2], v[3]};
    } else if (key == "speed") {
      want(1, v);
      lay.speed_cap = v[0];
    } else if (key == "start") {
      want(3, v);
      lay.start = {v[0], v[1]};
      lay.start_radius = v[2];
    } else if (key == "wall") {
      want(4, v);
      lay.walls.push_back({v[0], v[1], v[2], v[3]});
    } else if (key == "goal") {
      want(3, v);
      lay.goals.push_back({{v[0], v[1]}, v[2]});
    } else if (key == "door") {
      want(4, v);
      DoorGap g;
      g.cx = v[0];
      g.y0 = v[1];
      g.y1 = v[2];
      g.halfwidth = v[3];
      lay.doors.push_back(g);
    } else {
      throw Error("layout line " + std::to_string(lineno) +
                  ": unknown key '" + key + "'");
    }
  }
  if (!header_seen) throw Error("layout file missing 'layout v1' header");
  if (lay.bounds.x1 <= lay.bounds.x0 || lay.bounds.y1 <= lay.bounds.y0)
    throw Error("layout bounds are empty");
  return lay;
}

namespace detail {

inline const char* kMaze4Layout = R"(layout v1
name maze4
bounds 0 0 10 12
speed 1.0
start 5 0.75 0.25
goal 1.25 11.25 0.3
goal 3.75 11.25 0.3
goal 6.25 11.25 0.3
goal 8.75 11.25 0.3
wall 2.45 6 2.55 12
wall 4.95 6 5.05 12
wall 7.45 6 7.55 12
)";

inline const char* kMaze10Layout = R"(layout v1
name maze10
bounds 0 0 20 20
speed 1.0
start 10 10 0.3
goal 19 10 0.3
goal 17.281 15.29 0.3
goal 12.781 18.56 0.3
goal 7.219 18.56 0.3
goal 2.719 15.29 0.3
goal 1 10 0.3
goal 2.719 4.71 0.3
goal 7.219 1.44 0.3
goal 12.781 1.44 0.3
goal 17.281 4.71 0.3
wall 3 5 9 5.2
wall 11 5 17 5.2
wall 3 14.8 9 15
wall 11 14.8 17 15
wall 3 5.2 3.2 9
wall 3 11 3.2 14.8
wall 16.8 5.2 17 9
wall 16.8 11 17 14.8
)";

inline const char* kDoorsLayout = R"(layout v1
name doors
bounds 0 0 10 12.5
speed 1.0
start 5 0.5 0.25
goal 5 11.7 0.5
wall 0 10.5 0.75 10.7
wall 1.75 10.5 3.25 10.7
wall 4.25 10.5 5.75 10.7
wall 6.75 10.5 8.25 10.7
wall 9.25 10.5 10 10.7
door 1.25 10.5 10.7 0.5
door 3.75 10.5 10.7 0.5
door 6.25 10.5 10.7 0.5
door 8.75 10.5 10.7 0.5
)";

}  // namespace detail

inline const Layout& Layout::builtin(const std::string& name) {
  static const Layout maze4 = Layout::parse(detail::kMaze4Layout);
  static const Layout maze10 = Layout::parse(detail::kMaze10Layout);
  static const Layout doors = Layout::parse(detail::kDoorsLayout);
  if (name == "maze4") return maze4;
  if (name == "maze10") return maze10;
  if (name == "doors") return doors;
  throw Error("unknown builtin layout: " + name);
}

// Result of moving a point agent with first-contact collision.
struct MoveOutcome {
  Vec2 pos;
  int wall_hit = -1;   // index into layout walls, -1 when clear
  int extra_hit = -1;  // index into the extra rect list, -1 when clear
};

// Moves from `pos` by `delta`, stopping a hair before the first contact
// among the layout's walls and the `extra` rects (e.g. closed doors), then
// keeps the result inside the bounds. `pos` must be in free space.
inline MoveOutcome move_agent(const Layout& lay, const Vec2& pos, Vec2 delta,
                              const std::vector<Rect>& extra = {}) {
  MoveOutcome out;
  double len = delta.norm();
  if (len > lay.speed_cap) delta *= lay.speed_cap / len;
  // Truncate the displacement to the arena first: sweeping an out-of-bounds
  // endpoint and clamping afterwards could land inside a wall that is flush
  // with the boundary.
  delta = lay.clamp_to_bounds(pos + delta) - pos;
  len = delta.norm();
  auto [tw, iw] = Layout::first_hit(pos, delta, lay.walls);
  auto [te, ie] = Layout::first_hit(pos, delta, extra);
  double t = std::min({tw, te, 1.0});
  if (t < 1.0 && len > 0.0) {
    if (tw <= te) out.wall_hit = iw;
    else out.extra_hit = ie;
    t = std::max(0.0, t - 1e-6 / len);  // back off along the approach
  }
  out.pos = pos + t * delta;
  return out;
}

// Accepts either a builtin layout name or a path to a layout file.
inline Layout Layout::load(const std::string& path_or_builtin) {
  if (path_or_builtin == "maze4" || path_or_builtin == "maze10" ||
      path_or_builtin == "doors") {
    return builtin(path_or_builtin);
  }
  std::ifstream in(path_or_builtin);
  if (!in) throw Error("cannot open layout file: " + path_or_builtin);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

}  // namespace brpo
