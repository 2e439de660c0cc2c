#pragma once

#include <cstddef>
#include <ostream>
#include <span>
#include <vector>

#include "diffattn/error.hpp"

namespace diffattn {

/// Dense row-major H x W grid of doubles.
class Grid {
 public:
  Grid() = default;
  Grid(int height, int width, double fill = 0.0);
  Grid(int height, int width, std::vector<double> values);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return values_.size(); }

  double& at(int y, int x) { return values_[static_cast<std::size_t>(y) * width_ + x]; }
  double at(int y, int x) const { return values_[static_cast<std::size_t>(y) * width_ + x]; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  double min() const;
  double max() const;
  double sum() const;

  bool same_shape(const Grid& other) const {
    return height_ == other.height_ && width_ == other.width_;
  }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> values_;
};

struct Point {
  int x = 0;
  int y = 0;
  friend bool operator==(const Point&, const Point&) = default;
  friend auto operator<=>(const Point&, const Point&) = default;
  friend std::ostream& operator<<(std::ostream& os, const Point& p) { return os << '(' << p.x << ", " << p.y << ')'; }
};

/// Binary fixation grid together with the (deduplicated) fixation list.
class FixationMap {
 public:
  FixationMap() = default;
  /// Throws ErrorKind::Data if any point falls outside the grid.
  FixationMap(int height, int width, std::span<const Point> points);

  int height() const { return grid_.height(); }
  int width() const { return grid_.width(); }
  const std::vector<Point>& fixations() const { return points_; }
  const Grid& grid() const { return grid_; }
  bool empty() const { return points_.empty(); }
  bool contains(Point p) const;

 private:
  Grid grid_;
  std::vector<Point> points_;
};

struct SaliencyMap {
  Grid grid;
  bool normalized = false;
};

/// Min-max normalization into [0, 1]. A flat map becomes all-zero and a warning is recorded.
Grid min_max_normalize(const Grid& g, Diagnostics* diag = nullptr);

Grid flip_horizontal(const Grid& g);

}  // namespace diffattn
