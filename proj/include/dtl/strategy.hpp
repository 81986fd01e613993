#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dtl/checkpoint.hpp"
#include "dtl/model.hpp"
#include "dtl/train.hpp"

namespace dtl {

enum class StrategyMode {
  random_init,
  cross_domain_fe,
  cross_domain_ft,
  in_domain,
  combination,
};
std::string to_string(StrategyMode m);
StrategyMode strategy_from_string(const std::string& s);

// Per-parameter-group trainability mask. Head groups always train.
class FreezePlan {
 public:
  static FreezePlan all_trainable(const ModelGraph& model);
  static FreezePlan freeze_backbone(const ModelGraph& model);

  bool trainable(const std::string& group) const;
  void set(const std::string& group, bool trainable);
  int frozen_count() const;
  int trainable_count() const;
  bool backbone_frozen() const;  // every features.* entry frozen

  // Every model group covered exactly once, head present and trainable.
  void validate(const ModelGraph& model) const;

 private:
  std::map<std::string, bool> flags_;
};

// Stamps the plan onto the model's parameter groups (optimizer and frozen-BN
// behavior key off these flags). Errors on uncovered groups or frozen heads.
void apply_freeze(ModelGraph& model, const FreezePlan& plan);

struct StrategyConfig {
  StrategyMode mode = StrategyMode::random_init;
  BackboneSpec backbone;
  std::optional<std::string> upstream_dataset;
  std::optional<std::string> upstream_checkpoint;
  std::string target_dataset;

  void validate() const;
  std::string id() const;  // e.g. "in_domain[cbr_tiny<-CDS]"
};

struct PrepareOptions {
  const WeightStore* weight_store = nullptr;
  std::uint64_t seed = 0;
  double dropout_rate = 0.5;
  int head_conv_filters = 0;  // 0: family default
  OutputActivation activation = OutputActivation::sigmoid_per_label;
};

struct PreparedModel {
  ModelGraph model;
  FreezePlan plan;
  // Weight origin chain up to (but excluding) the target, e.g.
  // ["imagenet", "MCDS"] for a combination model about to fine-tune.
  std::vector<std::string> lineage;
};

// Realizes one initialization regime: backbone weights per mode, fresh head
// for the target task, freeze plan per FE/FT.
PreparedModel prepare_model(const StrategyConfig& cfg, const TaskSpec& task,
                            const PrepareOptions& opts);

struct UpstreamOptions {
  const WeightStore* weight_store = nullptr;
  std::filesystem::path checkpoint_dir;  // where the artifact lands
  std::uint64_t seed = 0;
  double dropout_rate = 0.5;
};

// Trains the upstream model of an in_domain / combination strategy on the
// upstream dataset and stores a transferable checkpoint with lineage.
std::filesystem::path run_upstream(const StrategyConfig& cfg,
                                   const Registry& registry,
                                   const DataSplit& upstream_split,
                                   const TrainConfig& train_cfg,
                                   const UpstreamOptions& opts);

// Applies the plan then runs the standard protocol.
TrainOutcome train_with_plan(ModelGraph& model, const FreezePlan& plan,
                             TensorCache& cache, const DataSplit& split,
                             const TrainConfig& cfg, std::uint64_t seed,
                             const TrainOptions& opts = {});

struct RunContext {
  const Registry* registry = nullptr;
  const WeightStore* weight_store = nullptr;
  std::filesystem::path workdir;           // upstream cache + histories
  std::map<std::string, DataSplit> splits; // per dataset name
  double dropout_rate = 0.5;
  bool save_final_checkpoints = false;
};

// Five-runs protocol: run i builds a fresh model via prepare_model with seed
// base_seed + i. A diverging run yields a failure record, not an abort.
std::vector<RunResult> repeat_runs(const StrategyConfig& cfg,
                                   const DataSplit& target_split,
                                   const TrainConfig& train_cfg,
                                   RunContext& ctx);

}  // namespace dtl
