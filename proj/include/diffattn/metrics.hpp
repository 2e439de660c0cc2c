#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "diffattn/grid.hpp"

namespace diffattn {

/// Same definition as kld_loss (GT || pred), floored at 0 for reporting.
double metric_kld(const Grid& pred, const Grid& gt);

/// Pearson correlation; 0 (with a warning) when either map is constant.
double metric_cc(const Grid& pred, const Grid& gt, Diagnostics* diag = nullptr);

/// Histogram intersection of sum-normalized maps; 0 (with a warning) if either map sums to 0.
double metric_sim(const Grid& pred, const Grid& gt, Diagnostics* diag = nullptr);

/// Mean z-scored prediction at fixation pixels; 0 (with a warning) when pred is constant.
double metric_nss(const Grid& pred, const FixationMap& fix, Diagnostics* diag = nullptr);

/// ROC area with fixation pixels as positives, thresholds at the distinct
/// prediction values found at fixations (pixels >= threshold are positive).
double metric_auc_judd(const Grid& pred, const FixationMap& fix);

struct MetricRow {
  std::string id;
  double kld = 0.0;
  double cc = 0.0;
  double sim = 0.0;
  double nss = 0.0;
  double auc_judd = 0.0;
};

struct EvalReport {
  std::vector<MetricRow> rows;

  std::size_t sample_count() const { return rows.size(); }
  /// Mean of per-sample metrics.
  MetricRow aggregate() const;

  void write_csv(const std::filesystem::path& path) const;
  /// key = value summary (count, per-metric means, extra lines).
  void write_summary(const std::filesystem::path& path, const std::vector<std::string>& extra = {}) const;
};

MetricRow evaluate_sample(const std::string& id, const Grid& pred, const Grid& gt, const FixationMap& fix,
                          Diagnostics* diag = nullptr);

}  // namespace diffattn
