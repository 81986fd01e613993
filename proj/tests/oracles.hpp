#pragma once

// Independent reference implementations used only by tests. These stay
// deliberately naive (quadratic loops, explicit confusion counts) so they
// cannot share bugs with the library's fast paths.

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <vector>

namespace dtl::testing {

// Exhaustive pairwise AUC: P(score+ > score-) + 0.5 P(tie).
inline double pairwise_auc(const std::vector<double>& scores,
                           const std::vector<int>& labels) {
  double wins = 0.0;
  long long pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

struct ConfusionOracle {
  // per-class integer counts from scratch
  std::vector<long long> tp, fp, fn, support;

  ConfusionOracle(const std::vector<std::vector<int>>& preds,
                  const std::vector<std::vector<int>>& labels) {
    const std::size_t k = labels.front().size();
    tp.assign(k, 0);
    fp.assign(k, 0);
    fn.assign(k, 0);
    support.assign(k, 0);
    for (std::size_t r = 0; r < labels.size(); ++r) {
      for (std::size_t c = 0; c < k; ++c) {
        if (labels[r][c]) ++support[c];
        if (preds[r][c] && labels[r][c]) ++tp[c];
        if (preds[r][c] && !labels[r][c]) ++fp[c];
        if (!preds[r][c] && labels[r][c]) ++fn[c];
      }
    }
  }

  std::map<std::string, double> weighted() const {
    long long total = 0;
    for (long long s : support) total += s;
    double pw = 0, rw = 0, fw = 0;
    for (std::size_t c = 0; c < support.size(); ++c) {
      if (!support[c]) continue;
      const double w = double(support[c]) / double(total);
      const double p = (tp[c] + fp[c]) ? double(tp[c]) / double(tp[c] + fp[c]) : 0.0;
      const double r = double(tp[c]) / double(tp[c] + fn[c]);
      const double f = (p + r) > 0 ? 2 * p * r / (p + r) : 0.0;
      pw += w * p;
      rw += w * r;
      fw += w * f;
    }
    return {{"precision_w", pw},
            {"recall_w", rw},
            {"f_score_w", fw},
            {"accuracy_w", rw}};
  }
};

// Central-difference gradient of a scalar function at x[i].
inline double numeric_grad(const std::function<double()>& eval, float& xi,
                           float eps = 1e-2f) {
  const float orig = xi;
  xi = orig + eps;
  const double fp = eval();
  xi = orig - eps;
  const double fm = eval();
  xi = orig;
  return (fp - fm) / (2.0 * static_cast<double>(eps));
}

}  // namespace dtl::testing
