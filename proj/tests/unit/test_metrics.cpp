#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <doctest.h>

#include "diffattn/metrics.hpp"
#include "helpers.hpp"

using namespace diffattn;

namespace {

Grid random_grid(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Grid g(h, w);
  for (double& v : g.values()) v = u(rng);
  return g;
}

// Textbook two-pass Pearson correlation.
double pearson(const Grid& a, const Grid& b) {
  const double n = static_cast<double>(a.size());
  const double ma = a.sum() / n, mb = b.sum() / n;
  double num = 0, da = 0, db = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a.values()[i] - ma) * (b.values()[i] - mb);
    da += std::pow(a.values()[i] - ma, 2);
    db += std::pow(b.values()[i] - mb, 2);
  }
  return num / std::sqrt(da * db);
}

// ROC over the fixation-value thresholds, tallied pixel by pixel.
double auc_loop(const Grid& pred, const FixationMap& fix) {
  std::vector<double> thr;
  for (auto p : fix.fixations()) thr.push_back(pred.at(p.y, p.x));
  std::sort(thr.rbegin(), thr.rend());
  thr.erase(std::unique(thr.begin(), thr.end()), thr.end());
  std::vector<std::pair<double, double>> roc{{0.0, 0.0}};
  const double nf = static_cast<double>(fix.fixations().size());
  const double nn = static_cast<double>(pred.size()) - nf;
  for (double t : thr) {
    double tp = 0, fp = 0;
    for (int y = 0; y < pred.height(); ++y) {
      for (int x = 0; x < pred.width(); ++x) {
        if (pred.at(y, x) < t) continue;
        if (fix.contains({x, y})) ++tp;
        else ++fp;
      }
    }
    roc.emplace_back(fp / nn, tp / nf);
  }
  roc.emplace_back(1.0, 1.0);
  double area = 0;
  for (std::size_t i = 1; i < roc.size(); ++i) area += (roc[i].first - roc[i - 1].first) * (roc[i].second + roc[i - 1].second) / 2;
  return area;
}

}  // namespace

TEST_CASE("correlation coefficient") {
  const auto a = random_grid(9, 11, 1);
  const auto b = random_grid(9, 11, 2);
  CHECK(metric_cc(a, a) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(metric_cc(a, b) == doctest::Approx(pearson(a, b)).epsilon(1e-12));
  Grid affine = a;
  for (double& v : affine.values()) v = 3.0 * v + 2.0;
  CHECK(metric_cc(affine, b) == doctest::Approx(metric_cc(a, b)).epsilon(1e-12));
  Grid neg = a;
  for (double& v : neg.values()) v = -v;
  CHECK(metric_cc(neg, a) == doctest::Approx(-1.0).epsilon(1e-14));
  Diagnostics diag;
  CHECK(metric_cc(Grid(9, 11, 0.5), a, &diag) == 0.0);
  CHECK_FALSE(diag.empty());
  CHECK_ERROR_KIND(metric_cc(a, Grid(9, 10)), ErrorKind::Shape);
}

TEST_CASE("similarity") {
  const auto a = random_grid(8, 8, 3);
  const auto b = random_grid(8, 8, 4);
  CHECK(metric_sim(a, a) == doctest::Approx(1.0).epsilon(1e-14));
  double expect = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) expect += std::min(a.values()[i] / a.sum(), b.values()[i] / b.sum());
  CHECK(metric_sim(a, b) == doctest::Approx(expect).epsilon(1e-14));
  Grid left(2, 2), right(2, 2);
  left.at(0, 0) = 1.0;
  right.at(1, 1) = 1.0;
  CHECK(metric_sim(left, right) == 0.0);
  Diagnostics diag;
  CHECK(metric_sim(Grid(8, 8), a, &diag) == 0.0);
  CHECK_FALSE(diag.empty());
}

TEST_CASE("normalized scanpath saliency") {
  Grid p(1, 4, std::vector<double>{0.0, 1.0, 2.0, 3.0});
  const double mean = 1.5, sd = std::sqrt(1.25);
  const std::vector<Point> pts{{3, 0}, {1, 0}};
  CHECK(metric_nss(p, FixationMap(1, 4, pts)) == doctest::Approx(((3 - mean) / sd + (1 - mean) / sd) / 2).epsilon(1e-14));
  Diagnostics diag;
  CHECK(metric_nss(Grid(1, 4, 2.0), FixationMap(1, 4, pts), &diag) == 0.0);
  CHECK_FALSE(diag.empty());
  CHECK_ERROR_KIND(metric_nss(p, FixationMap(1, 4, std::vector<Point>{})), ErrorKind::UndefinedMetric);
  CHECK_ERROR_KIND(metric_nss(p, FixationMap(2, 2, std::vector<Point>{{1, 0}})), ErrorKind::Shape);
}

TEST_CASE("Judd AUC extremes") {
  Grid p(4, 4);
  const std::vector<Point> pts{{1, 1}, {2, 3}};
  for (auto q : pts) p.at(q.y, q.x) = 1.0;
  CHECK(metric_auc_judd(p, FixationMap(4, 4, pts)) == doctest::Approx(1.0));
  CHECK(metric_auc_judd(Grid(4, 4, 0.3), FixationMap(4, 4, pts)) == doctest::Approx(0.5));
  Grid inverted(4, 4, 1.0);
  for (auto q : pts) inverted.at(q.y, q.x) = 0.0;
  CHECK(metric_auc_judd(inverted, FixationMap(4, 4, pts)) == doctest::Approx(0.5));
  std::vector<Point> all;
  for (int y = 0; y < 2; ++y) for (int x = 0; x < 2; ++x) all.push_back({x, y});
  CHECK_ERROR_KIND(metric_auc_judd(Grid(2, 2), FixationMap(2, 2, all)), ErrorKind::UndefinedMetric);
}

TEST_CASE("Judd AUC agrees with a pixel-loop ROC") {
  std::mt19937_64 rng(9);
  const int trials = 200;
  for (int t = 0; t < trials; ++t) {
    auto pred = random_grid(12, 10, 1000 + t);
    // Quantize to force tied thresholds.
    if (t % 2 == 0) for (double& v : pred.values()) v = std::round(v * 5) / 5;
    std::vector<Point> pts;
    const int n = std::uniform_int_distribution<int>(1, 15)(rng);
    for (int i = 0; i < n; ++i) pts.push_back({std::uniform_int_distribution<int>(0, 9)(rng), std::uniform_int_distribution<int>(0, 11)(rng)});
    const FixationMap fix(12, 10, pts);
    const double auc = metric_auc_judd(pred, fix);
    CHECK(auc == doctest::Approx(auc_loop(pred, fix)).epsilon(1e-12));
  }
}

TEST_CASE("Judd AUC with one fixation is one minus half the false-positive rate") {
  // ROC is (0,0) -> (fp,1) -> (1,1) when the single threshold is the fixated value.
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto pred = random_grid(7, 9, 500 + seed);
    const Point p{static_cast<int>(seed % 9), static_cast<int>(seed % 7)};
    int above = 0;
    for (int y = 0; y < 7; ++y)
      for (int x = 0; x < 9; ++x)
        if (Point{x, y} != p && pred.at(y, x) >= pred.at(p.y, p.x)) ++above;
    const double fp = above / 62.0;
    CHECK(metric_auc_judd(pred, FixationMap(7, 9, std::vector<Point>{p})) == doctest::Approx(1.0 - fp / 2).epsilon(1e-12));
  }
}

TEST_CASE("KL metric is floored and shares the loss definition") {
  const auto a = random_grid(6, 6, 20);
  const auto b = random_grid(6, 6, 21);
  CHECK(metric_kld(a, a) >= 0.0);
  CHECK(metric_kld(a, a) < 1e-6);
  CHECK(metric_kld(a, b) > 0.0);
  CHECK_ERROR_KIND(metric_kld(a, Grid(6, 6)), ErrorKind::DegenerateTarget);
}

TEST_CASE("evaluation report aggregates and serializes") {
  const auto gt = random_grid(8, 8, 30);
  const std::vector<Point> pts{{2, 2}, {5, 6}};
  const FixationMap fix(8, 8, pts);
  EvalReport r;
  r.rows.push_back(evaluate_sample("a", random_grid(8, 8, 31), gt, fix));
  r.rows.push_back(evaluate_sample("b", gt, gt, fix));
  CHECK(r.sample_count() == 2);
  const auto agg = r.aggregate();
  CHECK(agg.cc == doctest::Approx((r.rows[0].cc + r.rows[1].cc) / 2));
  CHECK(agg.auc_judd == doctest::Approx((r.rows[0].auc_judd + r.rows[1].auc_judd) / 2));
  CHECK(r.rows[1].cc == doctest::Approx(1.0));

  const auto dir = testing::scratch_dir("metrics_report");
  r.write_csv(dir / "m.csv");
  r.write_summary(dir / "s.txt", {"split = test"});
  std::ifstream csv(dir / "m.csv");
  std::string header, line;
  std::getline(csv, header);
  CHECK(header == "id,kld,cc,sim,nss,auc_judd");
  int lines = 0;
  while (std::getline(csv, line)) ++lines;
  CHECK(lines == 2);
  std::stringstream summary;
  summary << std::ifstream(dir / "s.txt").rdbuf();
  CHECK(summary.str().find("count = 2") != std::string::npos);
  CHECK(summary.str().find("split = test") != std::string::npos);
  CHECK(EvalReport{}.aggregate().kld == 0.0);
}
