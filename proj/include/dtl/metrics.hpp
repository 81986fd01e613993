#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dtl/data.hpp"

namespace dtl {

// AUC-ROC in the Mann-Whitney formulation, midrank tie handling,
// O(n log n). Throws undefined-metric when only one class is present.
double auc_roc(const std::vector<double>& scores,
               const std::vector<int>& labels);

// Macro average of per-label AUC over columns where both classes occur.
// Columns skipped as degenerate are reported in `skipped_columns`.
double auc_roc_multilabel(const std::vector<std::vector<double>>& scores,
                          const std::vector<std::vector<int>>& labels,
                          std::vector<int>* skipped_columns = nullptr);

using MetricMap = std::map<std::string, double>;

// Support-weighted precision / recall / F1 / accuracy from thresholded
// predictions. Rows are items; columns are classes (binary predictions use
// 2 columns, multilabel one per label).
MetricMap weighted_metrics(const std::vector<std::vector<int>>& predictions,
                           const std::vector<std::vector<int>>& labels,
                           TaskKind task);

struct RunResult {
  std::string strategy_id;
  std::string dataset;
  std::uint64_t seed = 0;
  std::vector<double> scores;  // per test item (flattened for multilabel)
  MetricMap metrics;
  bool failed = false;
  std::string failure_reason;
};

struct MetricStats {
  double mean = 0.0;
  double stddev = 0.0;  // population (ddof = 0)
  double min = 0.0;
  double max = 0.0;
  int count = 0;
};

struct MetricReport {
  std::map<std::string, MetricStats> per_metric;
  int run_count = 0;
  int failed_count = 0;
  bool partial = false;
};

// mean +- population std over the successful runs of one cell.
MetricReport aggregate(const std::vector<RunResult>& results);

// Table-presentation convention: two decimals, "0.79 ± 0.01". Storage stays
// full precision; rounding happens only here.
std::string format_mean_std(double mean, double stddev);

}  // namespace dtl
