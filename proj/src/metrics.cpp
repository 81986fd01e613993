#include "dtl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "dtl/error.hpp"

namespace dtl {

double auc_roc(const std::vector<double>& scores,
               const std::vector<int>& labels) {
  require(scores.size() == labels.size(), ErrorCode::argument,
          "auc_roc: scores/labels length mismatch");
  require(!scores.empty(), ErrorCode::argument, "auc_roc: empty input");
  std::size_t n_pos = 0;
  for (int l : labels) {
    require(l == 0 || l == 1, ErrorCode::argument, "auc_roc: labels must be 0/1");
    n_pos += static_cast<std::size_t>(l);
  }
  const std::size_t n = scores.size();
  const std::size_t n_neg = n - n_pos;
  require(n_pos > 0 && n_neg > 0, ErrorCode::undefined_metric,
          "auc_roc undefined: only one class present");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });

  // midranks over tie groups
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k)
      if (labels[order[k]] == 1) rank_sum_pos += midrank;
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos);
  const double nn = static_cast<double>(n_neg);
  return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

double auc_roc_multilabel(const std::vector<std::vector<double>>& scores,
                          const std::vector<std::vector<int>>& labels,
                          std::vector<int>* skipped_columns) {
  require(scores.size() == labels.size() && !scores.empty(),
          ErrorCode::argument, "auc_roc_multilabel: shape mismatch");
  const std::size_t n_labels = scores.front().size();
  double sum = 0.0;
  int valid = 0;
  for (std::size_t c = 0; c < n_labels; ++c) {
    std::vector<double> col_scores(scores.size());
    std::vector<int> col_labels(labels.size());
    for (std::size_t r = 0; r < scores.size(); ++r) {
      col_scores[r] = scores[r].at(c);
      col_labels[r] = labels[r].at(c);
    }
    try {
      sum += auc_roc(col_scores, col_labels);
      ++valid;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::undefined_metric) throw;
      if (skipped_columns) skipped_columns->push_back(static_cast<int>(c));
    }
  }
  require(valid > 0, ErrorCode::undefined_metric,
          "auc_roc_multilabel undefined: no label column has both classes");
  return sum / valid;
}

MetricMap weighted_metrics(const std::vector<std::vector<int>>& predictions,
                           const std::vector<std::vector<int>>& labels,
                           TaskKind task) {
  require(!predictions.empty(), ErrorCode::argument,
          "weighted_metrics: empty test set");
  require(predictions.size() == labels.size(), ErrorCode::argument,
          "weighted_metrics: predictions/labels mismatch");
  const std::size_t n_classes = labels.front().size();
  require(n_classes >= 2, ErrorCode::argument, "weighted_metrics: need >= 2 classes");

  // Per-class one-vs-rest confusion counts. For single-label binary data this
  // reduces to the ordinary confusion matrix; for multilabel data each column
  // is an independent binary problem.
  std::vector<long long> tp(n_classes, 0), fp(n_classes, 0), fn(n_classes, 0);
  std::vector<long long> support(n_classes, 0);
  for (std::size_t r = 0; r < labels.size(); ++r) {
    require(predictions[r].size() == n_classes && labels[r].size() == n_classes,
            ErrorCode::argument, "weighted_metrics: ragged row");
    for (std::size_t c = 0; c < n_classes; ++c) {
      const bool p = predictions[r][c] != 0;
      const bool t = labels[r][c] != 0;
      if (t) ++support[c];
      if (p && t) ++tp[c];
      if (p && !t) ++fp[c];
      if (!p && t) ++fn[c];
    }
  }
  long long total_support = 0;
  for (long long s : support) total_support += s;
  require(total_support > 0, ErrorCode::argument,
          "weighted_metrics: no positive labels");

  double precision_w = 0.0, recall_w = 0.0, f1_w = 0.0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (support[c] == 0) continue;
    const double w = static_cast<double>(support[c]) /
                     static_cast<double>(total_support);
    const double prec = (tp[c] + fp[c]) > 0
                            ? static_cast<double>(tp[c]) /
                                  static_cast<double>(tp[c] + fp[c])
                            : 0.0;
    const double rec = static_cast<double>(tp[c]) /
                       static_cast<double>(tp[c] + fn[c]);
    const double f1 = (prec + rec) > 0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
    precision_w += w * prec;
    recall_w += w * rec;
    f1_w += w * f1;
  }
  // Weighted accuracy = support-weighted per-class recall; for single-label
  // binary data this equals plain accuracy.
  MetricMap out;
  out["accuracy_w"] = recall_w;
  out["precision_w"] = precision_w;
  out["recall_w"] = recall_w;
  out["f_score_w"] = f1_w;
  (void)task;
  return out;
}

MetricReport aggregate(const std::vector<RunResult>& results) {
  require(!results.empty(), ErrorCode::argument, "aggregate: no results");
  MetricReport report;
  report.run_count = static_cast<int>(results.size());
  std::map<std::string, std::vector<double>> values;
  for (const auto& r : results) {
    if (r.failed) {
      ++report.failed_count;
      continue;
    }
    for (const auto& [key, v] : r.metrics) values[key].push_back(v);
  }
  report.partial = report.failed_count > 0;
  for (const auto& [key, vs] : values) {
    MetricStats stats;
    stats.count = static_cast<int>(vs.size());
    stats.mean = std::accumulate(vs.begin(), vs.end(), 0.0) /
                 static_cast<double>(vs.size());
    double sq = 0.0;
    for (double v : vs) sq += (v - stats.mean) * (v - stats.mean);
    stats.stddev = std::sqrt(sq / static_cast<double>(vs.size()));
    stats.min = *std::min_element(vs.begin(), vs.end());
    stats.max = *std::max_element(vs.begin(), vs.end());
    report.per_metric[key] = stats;
  }
  return report;
}

std::string format_mean_std(double mean, double stddev) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f ± %.2f", mean, stddev);
  return buf;
}

}  // namespace dtl
