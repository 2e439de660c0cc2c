#include "diffattn/gt_saliency.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace diffattn {
namespace {

std::vector<double> half_profile(double sigma, int radius) {
  std::vector<double> w(static_cast<std::size_t>(radius) + 1);
  for (int k = 0; k <= radius; ++k) {
    w[static_cast<std::size_t>(k)] = std::exp(-0.5 * (k * k) / (sigma * sigma));
  }
  return w;
}

}  // namespace

GaussianKernel gaussian_kernel(double sigma_x, double sigma_y, int radius) {
  if (!(sigma_x > 0.0) || !(sigma_y > 0.0)) {
    throw Error(ErrorKind::Config, "gaussian kernel sigma must be > 0");
  }
  if (radius < 1) throw Error(ErrorKind::Config, "gaussian kernel radius must be >= 1");

  GaussianKernel k{sigma_x, sigma_y, radius, Grid(2 * radius + 1, 2 * radius + 1)};
  const double norm = 1.0 / (2.0 * std::numbers::pi * sigma_x * sigma_y);
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      const double e = (dx * dx) / (sigma_x * sigma_x) + (dy * dy) / (sigma_y * sigma_y);
      k.weights.at(dy + radius, dx + radius) = norm * std::exp(-0.5 * e);
    }
  }
  return k;
}

int default_radius(double sigma) { return std::max(1, static_cast<int>(std::ceil(3.0 * sigma))); }

double default_sigma(int height) { return height / 24.0; }

Grid blur_fixations(const FixationMap& fix, double sigma_x, double sigma_y, int radius) {
  if (!(sigma_x > 0.0) || !(sigma_y > 0.0)) throw Error(ErrorKind::Config, "sigma must be > 0");
  if (radius < 1) throw Error(ErrorKind::Config, "radius must be >= 1");

  const int h = fix.height();
  const int w = fix.width();
  const auto wx = half_profile(sigma_x, radius);
  const auto wy = half_profile(sigma_y, radius);
  const Grid& f = fix.grid();

  // Separable passes; mirrored taps are summed pairwise so the result is exactly
  // mirror-symmetric under horizontal flips.
  auto sample_x = [&](int y, int x) { return (x >= 0 && x < w) ? f.at(y, x) : 0.0; };
  Grid rows(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = wx[0] * f.at(y, x);
      for (int k = 1; k <= radius; ++k) {
        acc += wx[static_cast<std::size_t>(k)] * (sample_x(y, x - k) + sample_x(y, x + k));
      }
      rows.at(y, x) = acc;
    }
  }

  auto sample_y = [&](int y, int x) { return (y >= 0 && y < h) ? rows.at(y, x) : 0.0; };
  const double norm = 1.0 / (2.0 * std::numbers::pi * sigma_x * sigma_y);
  Grid out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = wy[0] * rows.at(y, x);
      for (int k = 1; k <= radius; ++k) {
        acc += wy[static_cast<std::size_t>(k)] * (sample_y(y - k, x) + sample_y(y + k, x));
      }
      out.at(y, x) = norm * acc;
    }
  }
  return out;
}

SaliencyMap make_gt(const FixationMap& fix, double sigma_x, double sigma_y, int radius,
                    Diagnostics* diag) {
  if (fix.empty()) {
    warn(diag, "empty ground truth: no fixations");
    return SaliencyMap{Grid(fix.height(), fix.width(), 0.0), true};
  }
  return SaliencyMap{min_max_normalize(blur_fixations(fix, sigma_x, sigma_y, radius), diag), true};
}

SaliencyMap make_gt(const FixationMap& fix, double sigma, Diagnostics* diag) {
  return make_gt(fix, sigma, sigma, default_radius(sigma), diag);
}

SaliencyMap downsample_gt(const SaliencyMap& s_map, int factor, Diagnostics* diag) {
  if (factor < 1 || (factor & (factor - 1)) != 0) {
    throw Error(ErrorKind::Config, "downsample factor must be a power of two, got " +
                                       std::to_string(factor));
  }
  const Grid& g = s_map.grid;
  if (g.height() % factor != 0 || g.width() % factor != 0) {
    throw Error(ErrorKind::Shape, "map " + std::to_string(g.height()) + "x" +
                                      std::to_string(g.width()) + " not divisible by " +
                                      std::to_string(factor));
  }
  if (factor == 1) return s_map;

  const int oh = g.height() / factor;
  const int ow = g.width() / factor;
  Grid pooled(oh, ow);
  const double inv = 1.0 / (factor * factor);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int dy = 0; dy < factor; ++dy)
        for (int dx = 0; dx < factor; ++dx) acc += g.at(y * factor + dy, x * factor + dx);
      pooled.at(y, x) = acc * inv;
    }
  }
  return SaliencyMap{min_max_normalize(pooled, diag), true};
}

}  // namespace diffattn
