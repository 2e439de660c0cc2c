#include <cmath>
#include <numbers>
#include <random>

#include <doctest.h>

#include "diffattn/gt_saliency.hpp"
#include "helpers.hpp"

using namespace diffattn;

namespace {

// Direct double loop over fixations and the truncated square window.
Grid brute_force_blur(int h, int w, const std::vector<Point>& fix, double sx, double sy, int r) {
  Grid out(h, w);
  const double norm = 1.0 / (2.0 * std::numbers::pi * sx * sy);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (const auto& f : fix) {
        const int dx = x - f.x;
        const int dy = y - f.y;
        if (std::abs(dx) > r || std::abs(dy) > r) continue;
        acc += norm * std::exp(-(dx * dx / (2 * sx * sx) + dy * dy / (2 * sy * sy)));
      }
      out.at(y, x) = acc;
    }
  }
  return out;
}

double max_diff(const Grid& a, const Grid& b) {
  REQUIRE(a.same_shape(b));
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

Grid normalize_oracle(const Grid& g) {
  const double lo = g.min();
  const double hi = g.max();
  Grid out(g.height(), g.width());
  if (hi - lo <= 0.0) return out;
  for (std::size_t i = 0; i < g.size(); ++i) out.values()[i] = (g.values()[i] - lo) / (hi - lo);
  return out;
}

}  // namespace

TEST_CASE("kernel values follow the Gaussian density") {
  const double sigma = 1.7;
  const auto k = gaussian_kernel(sigma, sigma, 5);
  CHECK(k.weights.height() == 11);
  CHECK(k.weights.width() == 11);
  CHECK(k.weight(0, 0) == doctest::Approx(1.0 / (2.0 * std::numbers::pi * sigma * sigma)).epsilon(1e-14));
  const auto unit = gaussian_kernel(1.0, 1.0, 3);
  CHECK(unit.weight(1, 0) / unit.weight(0, 0) == doctest::Approx(std::exp(-0.5)).epsilon(1e-14));
  for (int dy = -5; dy <= 5; ++dy) {
    for (int dx = -5; dx <= 5; ++dx) {
      CHECK(k.weight(dx, dy) > 0.0);
      CHECK(k.weight(dx, dy) <= k.weight(0, 0));
      CHECK(k.weight(dx, dy) == k.weight(-dx, dy));
      CHECK(k.weight(dx, dy) == k.weight(dx, -dy));
    }
  }
  CHECK_ERROR_KIND(gaussian_kernel(0.0, 1.0, 3), ErrorKind::Config);
  CHECK_ERROR_KIND(gaussian_kernel(1.0, -1.0, 3), ErrorKind::Config);
  CHECK_ERROR_KIND(gaussian_kernel(1.0, 1.0, 0), ErrorKind::Config);
}

TEST_CASE("discrete kernel mass agrees with numerical integration") {
  // Midpoint-rule integral of the density over the lattice cells [-6.5, 6.5]^2 for sigma = 2.
  constexpr double kQuadrature = 0.9976932385232287;
  const auto k = gaussian_kernel(2.0, 2.0, default_radius(2.0));
  CHECK(k.radius == 6);
  CHECK(std::abs(k.weights.sum() - kQuadrature) < 1e-3);
}

TEST_CASE("default blur parameters") {
  CHECK(default_radius(2.0) == 6);
  CHECK(default_radius(2.1) == 7);
  CHECK(default_sigma(192) == 8.0);
  CHECK(default_sigma(64) == doctest::Approx(64.0 / 24.0));
}

TEST_CASE("single fixation peaks at the fixation with value one") {
  const std::vector<Point> pts{{13, 7}};
  const auto gt = make_gt(FixationMap(20, 30, pts), 2.0);
  CHECK(gt.normalized);
  int best_x = -1, best_y = -1;
  double best = -1.0;
  for (int y = 0; y < 20; ++y) {
    for (int x = 0; x < 30; ++x) {
      if (gt.grid.at(y, x) > best) {
        best = gt.grid.at(y, x);
        best_x = x;
        best_y = y;
      }
    }
  }
  CHECK(best_x == 13);
  CHECK(best_y == 7);
  CHECK(best == 1.0);
  CHECK(gt.grid.min() == 0.0);
}

TEST_CASE("empty fixations give a zero map and a warning") {
  Diagnostics diag;
  const auto gt = make_gt(FixationMap(8, 8, std::vector<Point>{}), 1.0, &diag);
  CHECK(gt.grid.max() == 0.0);
  REQUIRE(diag.warnings.size() >= 1);
  CHECK(diag.warnings.front().find("empty ground truth") != std::string::npos);
}

TEST_CASE("well separated fixations produce two unit peaks") {
  const double sigma = 1.5;
  const std::vector<Point> pts{{6, 10}, {6 + 14, 10}};  // 14 px >= 8 sigma
  const int r = default_radius(sigma);
  const auto gt = make_gt(FixationMap(21, 30, pts), sigma);
  CHECK(gt.grid.at(10, 6) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(gt.grid.at(10, 20) == doctest::Approx(1.0).epsilon(1e-12));
  const auto oracle = normalize_oracle(brute_force_blur(21, 30, pts, sigma, sigma, r));
  CHECK(max_diff(gt.grid, oracle) < 1e-10);
  for (const auto& p : pts) {
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        if (dx != 0 || dy != 0) CHECK(gt.grid.at(p.y + dy, p.x + dx) < gt.grid.at(p.y, p.x));
      }
    }
  }
}

TEST_CASE("convolution equals the brute-force double loop on small grids") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const int h = std::uniform_int_distribution<int>(1, 32)(rng);
    const int w = std::uniform_int_distribution<int>(1, 32)(rng);
    const double sx = std::uniform_real_distribution<double>(0.4, 5.0)(rng);
    const double sy = trial % 3 == 0 ? std::uniform_real_distribution<double>(0.4, 5.0)(rng) : sx;
    const int r = std::uniform_int_distribution<int>(1, 12)(rng);
    const int n = std::uniform_int_distribution<int>(1, 6)(rng);
    std::vector<Point> pts;
    for (int i = 0; i < n; ++i) {
      pts.push_back({std::uniform_int_distribution<int>(0, w - 1)(rng), std::uniform_int_distribution<int>(0, h - 1)(rng)});
    }
    const FixationMap fix(h, w, pts);
    const auto oracle = brute_force_blur(h, w, fix.fixations(), sx, sy, r);
    CHECK(max_diff(blur_fixations(fix, sx, sy, r), oracle) < 1e-10);
    CHECK(max_diff(make_gt(fix, sx, sy, r).grid, normalize_oracle(oracle)) < 1e-10);
  }
}

TEST_CASE("translation equivariance away from borders") {
  const double sigma = 1.2;
  const int r = default_radius(sigma);
  const std::vector<Point> a{{8, 8}, {11, 10}};
  std::vector<Point> b;
  for (auto p : a) b.push_back({p.x + 5, p.y + 3});
  const auto ga = blur_fixations(FixationMap(40, 40, a), sigma, sigma, r);
  const auto gb = blur_fixations(FixationMap(40, 40, b), sigma, sigma, r);
  for (int y = 0; y + 3 < 40; ++y) {
    for (int x = 0; x + 5 < 40; ++x) CHECK(gb.at(y + 3, x + 5) == doctest::Approx(ga.at(y, x)).epsilon(1e-13));
  }
}

TEST_CASE("adding a fixation never decreases the unnormalized map") {
  const std::vector<Point> a{{3, 4}};
  const std::vector<Point> b{{3, 4}, {10, 2}};
  const auto ga = blur_fixations(FixationMap(16, 16, a), 2.0, 2.0, 6);
  const auto gb = blur_fixations(FixationMap(16, 16, b), 2.0, 2.0, 6);
  for (std::size_t i = 0; i < ga.size(); ++i) CHECK(gb.values()[i] >= ga.values()[i]);
}

TEST_CASE("downsample_gt pooling") {
  std::mt19937_64 rng(5);
  Grid g(16, 16);
  for (double& v : g.values()) v = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  const SaliencyMap map{normalize_oracle(g), true};

  const auto same = downsample_gt(map, 1);
  CHECK(same.grid == map.grid);

  Grid pooled(8, 8);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      pooled.at(y, x) = (map.grid.at(2 * y, 2 * x) + map.grid.at(2 * y, 2 * x + 1) + map.grid.at(2 * y + 1, 2 * x) +
                         map.grid.at(2 * y + 1, 2 * x + 1)) /
                        4.0;
    }
  }
  const auto down = downsample_gt(map, 2);
  CHECK(down.normalized);
  CHECK(max_diff(down.grid, normalize_oracle(pooled)) < 1e-12);

  Diagnostics diag;
  const auto flat = downsample_gt(SaliencyMap{Grid(8, 8, 0.5), true}, 4, &diag);
  CHECK(flat.grid.max() == 0.0);
  CHECK(flat.grid.height() == 2);
  CHECK_FALSE(diag.empty());

  CHECK_ERROR_KIND(downsample_gt(map, 3), ErrorKind::Config);
  CHECK_ERROR_KIND(downsample_gt(SaliencyMap{Grid(12, 16), true}, 8), ErrorKind::Shape);
}

TEST_CASE("fixation maps validate bounds and stay consistent with their grid") {
  const std::vector<Point> pts{{0, 0}, {4, 2}, {4, 2}};
  const FixationMap fix(3, 5, pts);
  CHECK(fix.fixations().size() == 2);
  CHECK(fix.grid().at(2, 4) == 1.0);
  CHECK(fix.grid().sum() == 2.0);
  CHECK(fix.contains({4, 2}));
  CHECK_FALSE(fix.contains({1, 1}));
  CHECK_ERROR_KIND(FixationMap(3, 5, std::vector<Point>{{5, 0}}), ErrorKind::Data);
  CHECK_ERROR_KIND(FixationMap(3, 5, std::vector<Point>{{0, -1}}), ErrorKind::Data);
}
