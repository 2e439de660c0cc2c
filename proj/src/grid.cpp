#include "diffattn/grid.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace diffattn {

Grid::Grid(int height, int width, double fill)
    : height_(height), width_(width),
      values_(static_cast<std::size_t>(std::max(height, 0)) * std::max(width, 0), fill) {
  if (height < 0 || width < 0) throw Error(ErrorKind::Shape, "grid dimensions must be non-negative");
}

Grid::Grid(int height, int width, std::vector<double> values)
    : height_(height), width_(width), values_(std::move(values)) {
  if (height < 0 || width < 0 ||
      values_.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width)) {
    throw Error(ErrorKind::Shape, "grid value count does not match " + std::to_string(height) +
                                      "x" + std::to_string(width));
  }
}

double Grid::min() const {
  return values_.empty() ? 0.0 : *std::min_element(values_.begin(), values_.end());
}

double Grid::max() const {
  return values_.empty() ? 0.0 : *std::max_element(values_.begin(), values_.end());
}

double Grid::sum() const { return std::accumulate(values_.begin(), values_.end(), 0.0); }

FixationMap::FixationMap(int height, int width, std::span<const Point> points)
    : grid_(height, width, 0.0) {
  for (const Point& p : points) {
    if (p.x < 0 || p.y < 0 || p.x >= width || p.y >= height) {
      throw Error(ErrorKind::Data, "fixation (" + std::to_string(p.x) + ", " +
                                       std::to_string(p.y) + ") outside " + std::to_string(width) +
                                       "x" + std::to_string(height) + " grid");
    }
    if (grid_.at(p.y, p.x) == 0.0) {
      grid_.at(p.y, p.x) = 1.0;
      points_.push_back(p);
    }
  }
}

bool FixationMap::contains(Point p) const {
  if (p.x < 0 || p.y < 0 || p.x >= width() || p.y >= height()) return false;
  return grid_.at(p.y, p.x) != 0.0;
}

Grid min_max_normalize(const Grid& g, Diagnostics* diag) {
  Grid out(g.height(), g.width(), 0.0);
  if (g.size() == 0) return out;
  const double lo = g.min();
  const double hi = g.max();
  if (!(hi > lo)) {
    if (hi != 0.0) warn(diag, "flat map normalized to all-zero");
    else warn(diag, "all-zero map left as all-zero");
    return out;
  }
  const double range = hi - lo;
  auto src = g.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = (src[i] - lo) / range;
  return out;
}

Grid flip_horizontal(const Grid& g) {
  Grid out(g.height(), g.width());
  for (int y = 0; y < g.height(); ++y)
    for (int x = 0; x < g.width(); ++x) out.at(y, g.width() - 1 - x) = g.at(y, x);
  return out;
}

}  // namespace diffattn
