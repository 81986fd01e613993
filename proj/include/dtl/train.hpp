#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dtl/data.hpp"
#include "dtl/metrics.hpp"
#include "dtl/model.hpp"

namespace dtl {

enum class LossKind { binary_ce, categorical_ce, per_label_binary_ce };
std::string to_string(LossKind k);
LossKind loss_from_string(const std::string& s);
// binary -> binary_ce, multilabel -> per_label_binary_ce
LossKind default_loss(TaskKind task);

struct OptimizerConfig {
  std::string name = "rmsprop";  // rmsprop | sgd | adam
  double rho = 0.9;
  double eps = 1e-7;
  double momentum = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
};

struct TrainConfig {
  int epochs = 30;
  int batch_size = 64;
  double learning_rate = 1e-4;
  std::optional<LossKind> loss;  // defaulted per task when unset
  int runs = 5;
  std::uint64_t base_seed = 0;
  OptimizerConfig optimizer;
  bool evaluate_best_epoch = false;  // default: final-epoch weights

  void validate() const;
  LossKind resolved_loss(TaskKind task) const {
    return loss ? *loss : default_loss(task);
  }
  // Content hash over the canonical serialization; embedded in lineage
  // sidecars so runs stay auditable.
  std::string config_hash() const;
};

struct LossResult {
  double value = 0.0;
  Tensor dlogits;
};

// targets: one row per item, output_dim columns (softmax targets sum to 1).
LossResult compute_loss(LossKind kind, const Tensor& logits,
                        const std::vector<std::vector<float>>& targets);

// Scores after the output activation (sigmoid / softmax).
std::vector<std::vector<double>> apply_output_activation(
    const Tensor& logits, OutputActivation act);

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  // Applies one update to every trainable, non-buffer group with a gradient.
  virtual void step(const std::vector<ParamGroup*>& groups, double lr) = 0;
  static std::unique_ptr<Optimizer> make(const OptimizerConfig& cfg);
};

// ---- preprocessing ----------------------------------------------------------

enum class PixelScaling { unit, caffe_bgr, imagenet_mean_std, pm_one };
// Per-family pre-training convention; recorded so transfers stay faithful.
PixelScaling family_scaling(Family f);

// Loads, resizes and normalizes items of one dataset; thread-compatible
// per-instance cache.
class TensorCache {
 public:
  TensorCache(DatasetHandle dataset, std::array<int, 2> hw, int channels,
              PixelScaling scaling);
  // 1xCxHxW preprocessed input of item `index` (cached).
  const Tensor& input(int index);
  std::vector<float> label_row(int index) const;
  const DatasetHandle& dataset() const { return dataset_; }

 private:
  DatasetHandle dataset_;
  std::array<int, 2> hw_;
  int channels_;
  PixelScaling scaling_;
  std::map<int, Tensor> cache_;
};

// ---- histories ------------------------------------------------------------

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_precision = 0.0;
  double wall_seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  bool aborted = false;
  std::string abort_reason;
  std::string last_good_checkpoint;
  int best_val_epoch = 0;  // recorded, not selected by default
};

void append_history_line(const std::filesystem::path& file,
                         const EpochRecord& rec);

struct TrainOptions {
  std::filesystem::path history_file;    // JSONL, one record per epoch
  std::filesystem::path checkpoint_dir;  // enables last-good snapshots
};

struct TrainOutcome {
  TrainHistory history;
  std::vector<std::string> warnings;
};

// The fixed protocol: cfg.epochs seeded-shuffled passes over split.train,
// validation metrics every epoch. Freeze plans are stamped onto the model
// beforehand via apply_freeze. Throws divergence errors on non-finite loss
// (after recording the last good checkpoint when enabled).
TrainOutcome train_model(ModelGraph& model, TensorCache& cache,
                         const DataSplit& split, const TrainConfig& cfg,
                         std::uint64_t seed, const TrainOptions& opts = {});

// Per-item activation scores and 0/1 label matrix for the given indices.
struct ScoredPart {
  std::vector<std::vector<double>> scores;
  std::vector<std::vector<int>> labels;
};
ScoredPart score_part(ModelGraph& model, TensorCache& cache,
                      const std::vector<int>& indices, int batch_size = 64);

// auc_roc + the weighted metric suite on the test part.
MetricMap evaluate_model(ModelGraph& model, TensorCache& cache,
                         const std::vector<int>& test_indices, TaskKind task);

// Scores column used for AUC plus the 0/1 columns; binary single-logit
// models score the positive class.
std::vector<double> flatten_scores(const ScoredPart& part);

}  // namespace dtl
