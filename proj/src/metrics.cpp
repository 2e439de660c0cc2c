#include "diffattn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>

#include <torch/torch.h>

#include "diffattn/objectives.hpp"

namespace diffattn {
namespace {

void check_shapes(const Grid& a, const Grid& b, const char* what) {
  if (!a.same_shape(b)) throw Error(ErrorKind::Shape, std::string(what) + ": map shapes differ");
}

void check_fixations(const Grid& pred, const FixationMap& fix, const char* what) {
  if (pred.height() != fix.height() || pred.width() != fix.width()) {
    throw Error(ErrorKind::Shape, std::string(what) + ": prediction and fixation grid shapes differ");
  }
  if (fix.empty()) throw Error(ErrorKind::UndefinedMetric, std::string(what) + ": no fixations");
}

torch::Tensor as_tensor(const Grid& g) {
  auto vals = g.values();
  return torch::from_blob(const_cast<double*>(vals.data()), {g.height(), g.width()}, torch::kFloat64);
}

double mean_of(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return acc / static_cast<double>(v.size());
}

}  // namespace

double metric_kld(const Grid& pred, const Grid& gt) {
  check_shapes(pred, gt, "kld");
  const double value = kld_loss(as_tensor(pred), as_tensor(gt)).item<double>();
  return std::max(0.0, value);
}

double metric_cc(const Grid& pred, const Grid& gt, Diagnostics* diag) {
  check_shapes(pred, gt, "cc");
  auto p = pred.values();
  auto g = gt.values();
  const double mp = mean_of(p);
  const double mg = mean_of(g);
  double cov = 0.0, vp = 0.0, vg = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double a = p[i] - mp;
    const double b = g[i] - mg;
    cov += a * b;
    vp += a * a;
    vg += b * b;
  }
  if (!(vp > 0.0) || !(vg > 0.0)) {
    warn(diag, "cc: constant map, correlation defined as 0");
    return 0.0;
  }
  return std::clamp(cov / std::sqrt(vp * vg), -1.0, 1.0);
}

double metric_sim(const Grid& pred, const Grid& gt, Diagnostics* diag) {
  check_shapes(pred, gt, "sim");
  const double sp = pred.sum();
  const double sg = gt.sum();
  if (!(sp > 0.0) || !(sg > 0.0)) {
    warn(diag, "sim: map sums to zero, similarity defined as 0");
    return 0.0;
  }
  auto p = pred.values();
  auto g = gt.values();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += std::min(p[i] / sp, g[i] / sg);
  return std::clamp(acc, 0.0, 1.0);
}

double metric_nss(const Grid& pred, const FixationMap& fix, Diagnostics* diag) {
  check_fixations(pred, fix, "nss");
  auto p = pred.values();
  const double mean = mean_of(p);
  double var = 0.0;
  for (double x : p) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / static_cast<double>(p.size()));
  if (!(sd > 0.0)) {
    warn(diag, "nss: constant prediction, NSS defined as 0");
    return 0.0;
  }
  double acc = 0.0;
  for (const Point& f : fix.fixations()) acc += (pred.at(f.y, f.x) - mean) / sd;
  return acc / static_cast<double>(fix.fixations().size());
}

double metric_auc_judd(const Grid& pred, const FixationMap& fix) {
  check_fixations(pred, fix, "auc_judd");
  const auto n_pixels = static_cast<double>(pred.size());
  const auto n_fix = static_cast<double>(fix.fixations().size());
  if (n_pixels <= n_fix) throw Error(ErrorKind::UndefinedMetric, "auc_judd: every pixel is a fixation");

  std::vector<double> all(pred.values().begin(), pred.values().end());
  std::sort(all.begin(), all.end(), std::greater<>());
  std::vector<double> at_fix;
  at_fix.reserve(fix.fixations().size());
  for (const Point& f : fix.fixations()) at_fix.push_back(pred.at(f.y, f.x));
  std::sort(at_fix.begin(), at_fix.end(), std::greater<>());

  // Count of elements >= t in a descending-sorted vector.
  auto count_ge = [](const std::vector<double>& v, double t) {
    return static_cast<double>(std::upper_bound(v.begin(), v.end(), t, std::greater<>()) - v.begin());
  };

  double area = 0.0;
  double prev_tp = 0.0, prev_fp = 0.0;
  for (std::size_t i = 0; i < at_fix.size(); ++i) {
    if (i > 0 && at_fix[i] == at_fix[i - 1]) continue;
    const double t = at_fix[i];
    const double tp_count = count_ge(at_fix, t);
    const double tp = tp_count / n_fix;
    const double fp = (count_ge(all, t) - tp_count) / (n_pixels - n_fix);
    area += (fp - prev_fp) * (tp + prev_tp) * 0.5;
    prev_tp = tp;
    prev_fp = fp;
  }
  area += (1.0 - prev_fp) * (1.0 + prev_tp) * 0.5;
  return std::clamp(area, 0.0, 1.0);
}

MetricRow evaluate_sample(const std::string& id, const Grid& pred, const Grid& gt, const FixationMap& fix,
                          Diagnostics* diag) {
  MetricRow row;
  row.id = id;
  row.kld = metric_kld(pred, gt);
  row.cc = metric_cc(pred, gt, diag);
  row.sim = metric_sim(pred, gt, diag);
  row.nss = metric_nss(pred, fix, diag);
  row.auc_judd = metric_auc_judd(pred, fix);
  return row;
}

MetricRow EvalReport::aggregate() const {
  MetricRow agg;
  agg.id = "mean";
  if (rows.empty()) return agg;
  for (const auto& r : rows) {
    agg.kld += r.kld;
    agg.cc += r.cc;
    agg.sim += r.sim;
    agg.nss += r.nss;
    agg.auc_judd += r.auc_judd;
  }
  const auto n = static_cast<double>(rows.size());
  agg.kld /= n;
  agg.cc /= n;
  agg.sim /= n;
  agg.nss /= n;
  agg.auc_judd /= n;
  return agg;
}

void EvalReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << std::setprecision(10);
  out << "id,kld,cc,sim,nss,auc_judd\n";
  for (const auto& r : rows) {
    out << r.id << ',' << r.kld << ',' << r.cc << ',' << r.sim << ',' << r.nss << ',' << r.auc_judd << '\n';
  }
}

void EvalReport::write_summary(const std::filesystem::path& path, const std::vector<std::string>& extra) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  const auto agg = aggregate();
  out << std::setprecision(10);
  out << "count = " << rows.size() << '\n';
  out << "kld = " << agg.kld << '\n';
  out << "cc = " << agg.cc << '\n';
  out << "sim = " << agg.sim << '\n';
  out << "nss = " << agg.nss << '\n';
  out << "auc_judd = " << agg.auc_judd << '\n';
  for (const auto& line : extra) out << line << '\n';
}

}  // namespace diffattn
