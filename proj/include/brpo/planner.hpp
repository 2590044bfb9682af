// Shortest-path planning on a layout, grid-discretized. A DistanceField
// holds cost-to-go from every free cell to a target point (computed once
// per target by Dijkstra over the 8-connected cell graph) and turns it
// into velocity commands with line-of-sight waypoint smoothing.
#pragma once

#include <queue>

#include "brpo/layout.hpp"

namespace brpo {

class DistanceField {
 public:
  DistanceField(const Layout& lay, Vec2 target, std::vector<Rect> extra = {},
                double resolution = 0.25)
      : lay_(&lay),
        target_(target),
        extra_(std::move(extra)),
        res_(resolution) {
    nx_ = static_cast<int>(std::ceil((lay.bounds.x1 - lay.bounds.x0) / res_));
    ny_ = static_cast<int>(std::ceil((lay.bounds.y1 - lay.bounds.y0) / res_));
    free_.assign(nx_ * ny_, false);
    dist_.assign(nx_ * ny_, std::numeric_limits<double>::infinity());
    // A cell is blocked when any obstacle rect overlaps its square (with
    // positive area, so rects that merely touch a cell edge do not block
    // it). Testing only the cell center would let walls thinner than the
    // resolution slip between centers and open phantom passages.
    auto blocks = [&](const Rect& r, double cx0, double cy0) {
      return r.x0 < cx0 + res_ && r.x1 > cx0 && r.y0 < cy0 + res_ &&
             r.y1 > cy0;
    };
    for (int iy = 0; iy < ny_; ++iy) {
      for (int ix = 0; ix < nx_; ++ix) {
        Vec2 c = center(ix, iy);
        double cx0 = lay.bounds.x0 + ix * res_;
        double cy0 = lay.bounds.y0 + iy * res_;
        bool ok = lay.bounds.contains(c);
        for (const auto& w : lay.walls) ok = ok && !blocks(w, cx0, cy0);
        for (const auto& r : extra_) ok = ok && !blocks(r, cx0, cy0);
        free_[idx(ix, iy)] = ok;
      }
    }
    dijkstra(nearest_free_cell(target));
  }

  const Vec2& target() const { return target_; }

  bool reachable(const Vec2& p) const {
    return std::isfinite(dist_[nearest_free_cell(p)]);
  }

  // Cost-to-go (world units along the grid graph) from the cell nearest p.
  double distance(const Vec2& p) const { return dist_[nearest_free_cell(p)]; }

  // Velocity command toward the target: follow the steepest cost-to-go
  // descent, then aim at the farthest waypoint visible from the true
  // (off-grid) position. Magnitude is the speed cap, shrinking near the
  // target; exactly zero at the target.
  Vec2 move_command(const Vec2& p) const {
    double direct = (target_ - p).norm();
    if (direct < 1e-9) return Vec2::Zero();
    if (visible(p, target_)) {
      return (target_ - p) * (std::min(lay_->speed_cap, direct) / direct);
    }
    int cell = nearest_free_cell(p);
    if (!std::isfinite(dist_[cell]))
      throw NoPath("no collision-free path to target");
    std::vector<Vec2> waypoints;
    int cur = cell;
    for (int n = 0; n < 64 && dist_[cur] > 0.0; ++n) {
      int next = descend(cur);
      if (next == cur) break;
      cur = next;
      waypoints.push_back(center(cur % nx_, cur / nx_));
    }
    Vec2 aim = waypoints.empty() ? target_ : waypoints.front();
    for (auto it = waypoints.rbegin(); it != waypoints.rend(); ++it) {
      if (visible(p, *it)) {
        aim = *it;
        break;
      }
    }
    Vec2 d = aim - p;
    double len = d.norm();
    if (len < 1e-9) return Vec2::Zero();
    return d * (lay_->speed_cap / len);
  }

 private:
  int idx(int ix, int iy) const { return ix + nx_ * iy; }

  Vec2 center(int ix, int iy) const {
    return {lay_->bounds.x0 + (ix + 0.5) * res_,
            lay_->bounds.y0 + (iy + 0.5) * res_};
  }

  int nearest_free_cell(const Vec2& p) const {
    int ix = std::clamp(
        static_cast<int>((p.x() - lay_->bounds.x0) / res_), 0, nx_ - 1);
    int iy = std::clamp(
        static_cast<int>((p.y() - lay_->bounds.y0) / res_), 0, ny_ - 1);
    if (free_[idx(ix, iy)]) return idx(ix, iy);
    // Expand rings until a free cell appears (start cells are always deep
    // in free space; this only handles positions hugging a wall).
    for (int r = 1; r < std::max(nx_, ny_); ++r) {
      int best = -1;
      double best_d = std::numeric_limits<double>::infinity();
      for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
          if (std::max(std::abs(dx), std::abs(dy)) != r) continue;
          int jx = ix + dx, jy = iy + dy;
          if (jx < 0 || jx >= nx_ || jy < 0 || jy >= ny_) continue;
          if (!free_[idx(jx, jy)]) continue;
          double d = (center(jx, jy) - p).norm();
          if (d < best_d) {
            best_d = d;
            best = idx(jx, jy);
          }
        }
      }
      if (best >= 0) return best;
    }
    throw NoPath("layout has no free cells");
  }

  bool visible(const Vec2& a, const Vec2& b) const {
    Vec2 d = b - a;
    auto [tw, iw] = Layout::first_hit(a, d, lay_->walls);
    if (iw >= 0 && tw <= 1.0) return false;
    auto [te, ie] = Layout::first_hit(a, d, extra_);
    return ie < 0 || te > 1.0;
  }

  // Steepest-descent neighbor in cost-to-go (8-connected).
  int descend(int cell) const {
    int cx = cell % nx_, cy = cell / nx_;
    int best = cell;
    double best_d = dist_[cell];
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        if (dx == 0 && dy == 0) continue;
        int jx = cx + dx, jy = cy + dy;
        if (jx < 0 || jx >= nx_ || jy < 0 || jy >= ny_) continue;
        if (!free_[idx(jx, jy)]) continue;
        if (dx != 0 && dy != 0 &&
            (!free_[idx(cx + dx, cy)] || !free_[idx(cx, cy + dy)]))
          continue;  // no cutting corners
        if (dist_[idx(jx, jy)] < best_d) {
          best_d = dist_[idx(jx, jy)];
          best = idx(jx, jy);
        }
      }
    }
    return best;
  }

  void dijkstra(int source) {
    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
    dist_[source] = 0.0;
    heap.push({0.0, source});
    const double diag = res_ * std::sqrt(2.0);
    while (!heap.empty()) {
      auto [d, cell] = heap.top();
      heap.pop();
      if (d > dist_[cell]) continue;
      int cx = cell % nx_, cy = cell / nx_;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0) continue;
          int jx = cx + dx, jy = cy + dy;
          if (jx < 0 || jx >= nx_ || jy < 0 || jy >= ny_) continue;
          if (!free_[idx(jx, jy)]) continue;
          if (dx != 0 && dy != 0 &&
              (!free_[idx(cx + dx, cy)] || !free_[idx(cx, cy + dy)]))
            continue;
          double w = (dx != 0 && dy != 0) ? diag : res_;
          if (d + w < dist_[idx(jx, jy)]) {
            dist_[idx(jx, jy)] = d + w;
            heap.push({d + w, idx(jx, jy)});
          }
        }
      }
    }
  }

  const Layout* lay_;
  Vec2 target_;
  std::vector<Rect> extra_;
  double res_;
  int nx_ = 0, ny_ = 0;
  std::vector<bool> free_;
  std::vector<double> dist_;
};

}  // namespace brpo
