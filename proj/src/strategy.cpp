#include "dtl/strategy.hpp"

#include <algorithm>

#include "dtl/error.hpp"
#include "dtl/hash.hpp"

namespace dtl {

std::string to_string(StrategyMode m) {
  switch (m) {
    case StrategyMode::random_init: return "random_init";
    case StrategyMode::cross_domain_fe: return "cross_domain_fe";
    case StrategyMode::cross_domain_ft: return "cross_domain_ft";
    case StrategyMode::in_domain: return "in_domain";
    case StrategyMode::combination: return "combination";
  }
  return "?";
}

StrategyMode strategy_from_string(const std::string& s) {
  for (StrategyMode m :
       {StrategyMode::random_init, StrategyMode::cross_domain_fe,
        StrategyMode::cross_domain_ft, StrategyMode::in_domain,
        StrategyMode::combination}) {
    if (to_string(m) == s) return m;
  }
  raise(ErrorCode::argument, "unknown strategy mode: " + s);
}

// ---- FreezePlan -------------------------------------------------------------

FreezePlan FreezePlan::all_trainable(const ModelGraph& model) {
  FreezePlan plan;
  for (const auto* g : model.param_groups())
    if (!g->is_buffer) plan.flags_[g->name] = true;
  return plan;
}

FreezePlan FreezePlan::freeze_backbone(const ModelGraph& model) {
  FreezePlan plan;
  for (const auto* g : model.param_groups())
    if (!g->is_buffer)
      plan.flags_[g->name] = g->name.rfind("features.", 0) != 0;
  return plan;
}

bool FreezePlan::trainable(const std::string& group) const {
  auto it = flags_.find(group);
  require(it != flags_.end(), ErrorCode::argument,
          "freeze plan does not cover group '" + group + "'");
  return it->second;
}

void FreezePlan::set(const std::string& group, bool trainable) {
  flags_[group] = trainable;
}

int FreezePlan::frozen_count() const {
  int n = 0;
  for (const auto& [k, v] : flags_) n += v ? 0 : 1;
  return n;
}

int FreezePlan::trainable_count() const {
  return static_cast<int>(flags_.size()) - frozen_count();
}

bool FreezePlan::backbone_frozen() const {
  for (const auto& [k, v] : flags_)
    if (k.rfind("features.", 0) == 0 && v) return false;
  return true;
}

void FreezePlan::validate(const ModelGraph& model) const {
  require(const_cast<ModelGraph&>(model).has_head(), ErrorCode::argument,
          "freeze plan needs a model with an attached head");
  bool any_head_trainable = false;
  std::size_t covered = 0;
  for (const auto* g : model.param_groups()) {
    if (g->is_buffer) continue;
    auto it = flags_.find(g->name);
    require(it != flags_.end(), ErrorCode::argument,
            "freeze plan does not cover group '" + g->name + "'");
    ++covered;
    if (g->name.rfind("head.", 0) == 0) {
      require(it->second, ErrorCode::argument,
              "head group '" + g->name + "' must stay trainable");
      any_head_trainable = true;
    }
  }
  require(covered == flags_.size(), ErrorCode::argument,
          "freeze plan names groups absent from the model");
  require(any_head_trainable, ErrorCode::argument,
          "freeze plan leaves no trainable head group");
}

void apply_freeze(ModelGraph& model, const FreezePlan& plan) {
  plan.validate(model);
  for (auto* g : model.param_groups()) {
    if (g->is_buffer) continue;
    g->trainable = plan.trainable(g->name);
  }
  // Buffers follow their layer's gamma flag implicitly (BatchNorm checks the
  // gamma group at forward time).
}

// ---- StrategyConfig ----------------------------------------------------------

void StrategyConfig::validate() const {
  require(!target_dataset.empty(), ErrorCode::argument,
          "strategy needs a target dataset");
  switch (mode) {
    case StrategyMode::random_init:
      break;
    case StrategyMode::cross_domain_fe:
    case StrategyMode::cross_domain_ft:
      require(family_supports_imagenet(backbone.family), ErrorCode::argument,
              to_string(mode) + " requires an imagenet-capable family, not " +
                  to_string(backbone.family));
      break;
    case StrategyMode::in_domain:
    case StrategyMode::combination:
      require(upstream_dataset.has_value() && !upstream_dataset->empty(),
              ErrorCode::argument, to_string(mode) + " needs an upstream dataset");
      require(*upstream_dataset != target_dataset, ErrorCode::argument,
              "upstream and downstream tasks are mutually exclusive; got '" +
                  target_dataset + "' for both");
      if (mode == StrategyMode::combination)
        require(family_supports_imagenet(backbone.family), ErrorCode::argument,
                "combination requires an imagenet-capable family, not " +
                    to_string(backbone.family));
      break;
  }
}

std::string StrategyConfig::id() const {
  std::string s = to_string(mode) + "[" + to_string(backbone.family);
  if (upstream_dataset) s += "<-" + *upstream_dataset;
  s += "]";
  return s;
}

// ---- prepare_model -------------------------------------------------------------

namespace {

HeadOptions head_options(const PrepareOptions& opts, Family family,
                         std::uint64_t seed) {
  HeadOptions h;
  if (opts.head_conv_filters > 0) {
    h.conv_filters = opts.head_conv_filters;
  } else if (family == Family::cbr_small) {
    h.conv_filters = 128;
  }
  h.dropout_rate = opts.dropout_rate;
  h.activation = opts.activation;
  h.init_seed = Rng::derive(seed, 0x6ead);
  return h;
}

}  // namespace

PreparedModel prepare_model(const StrategyConfig& cfg, const TaskSpec& task,
                            const PrepareOptions& opts) {
  cfg.validate();

  BackboneSpec spec = cfg.backbone;
  spec.init_seed = opts.seed;
  std::vector<std::string> lineage;

  switch (cfg.mode) {
    case StrategyMode::random_init:
      spec.weights = WeightsOrigin::random;
      lineage = {"random"};
      break;
    case StrategyMode::cross_domain_fe:
    case StrategyMode::cross_domain_ft:
      spec.weights = WeightsOrigin::imagenet;
      lineage = {"imagenet"};
      break;
    case StrategyMode::in_domain:
    case StrategyMode::combination: {
      require(cfg.upstream_checkpoint.has_value() &&
                  !cfg.upstream_checkpoint->empty(),
              ErrorCode::resolution,
              to_string(cfg.mode) +
                  ": upstream checkpoint not resolved; produce one with "
                  "run_upstream first");
      const CheckpointMeta meta =
          read_checkpoint_meta(*cfg.upstream_checkpoint);
      require(meta.family == to_string(spec.family), ErrorCode::resolution,
              "upstream checkpoint was trained with " + meta.family +
                  "; weight transfer requires the same architecture (" +
                  to_string(spec.family) + ")");
      const auto& chain = meta.weight_origin_chain;
      require(!chain.empty(), ErrorCode::resolution,
              "upstream checkpoint has no lineage");
      if (cfg.mode == StrategyMode::combination) {
        require(chain.front() == "imagenet", ErrorCode::resolution,
                "combination requires an upstream whose lineage begins at "
                "imagenet; checkpoint chain starts at '" +
                    chain.front() + "'");
      } else {
        require(chain.front() == "random", ErrorCode::resolution,
                "in_domain requires an upstream trained from random init; "
                "checkpoint chain starts at '" +
                    chain.front() + "'");
      }
      require(chain.back() == *cfg.upstream_dataset, ErrorCode::resolution,
              "upstream checkpoint lineage ends at '" + chain.back() +
                  "', expected '" + *cfg.upstream_dataset + "'");
      spec.weights = WeightsOrigin::checkpoint;
      spec.checkpoint_ref = *cfg.upstream_checkpoint;
      lineage = chain;
      break;
    }
  }

  PreparedModel prepared{
      build_backbone(spec, opts.weight_store),
      FreezePlan{},
      std::move(lineage),
  };
  attach_head(prepared.model, task,
              head_options(opts, spec.family, opts.seed));
  prepared.plan = cfg.mode == StrategyMode::cross_domain_fe
                      ? FreezePlan::freeze_backbone(prepared.model)
                      : FreezePlan::all_trainable(prepared.model);
  apply_freeze(prepared.model, prepared.plan);
  return prepared;
}

// ---- run_upstream ---------------------------------------------------------------

std::filesystem::path run_upstream(const StrategyConfig& cfg,
                                   const Registry& registry,
                                   const DataSplit& upstream_split,
                                   const TrainConfig& train_cfg,
                                   const UpstreamOptions& opts) {
  require(cfg.mode == StrategyMode::in_domain ||
              cfg.mode == StrategyMode::combination,
          ErrorCode::argument, "run_upstream applies to in_domain/combination");
  cfg.validate();
  const DatasetHandle upstream = registry.get(*cfg.upstream_dataset);
  const TaskSpec task{upstream->descriptor().task_kind,
                      upstream->descriptor().class_names};

  // Upstream initialization: random for in_domain, imagenet for combination.
  StrategyConfig upstream_cfg = cfg;
  upstream_cfg.mode = cfg.mode == StrategyMode::combination
                          ? StrategyMode::cross_domain_ft
                          : StrategyMode::random_init;
  upstream_cfg.target_dataset = *cfg.upstream_dataset;
  upstream_cfg.upstream_dataset.reset();
  upstream_cfg.upstream_checkpoint.reset();

  PrepareOptions popts;
  popts.weight_store = opts.weight_store;
  popts.seed = opts.seed;
  popts.dropout_rate = opts.dropout_rate;
  PreparedModel prepared = prepare_model(upstream_cfg, task, popts);

  TensorCache cache(upstream, prepared.model.input_hw(),
                    prepared.model.input_channels(),
                    family_scaling(prepared.model.family()));
  TrainOptions topts;
  topts.checkpoint_dir = opts.checkpoint_dir / "work";
  train_with_plan(prepared.model, prepared.plan, cache, upstream_split,
                  train_cfg, opts.seed, topts);

  CheckpointMeta meta;
  meta.family = to_string(prepared.model.family());
  meta.input_size = prepared.model.input_hw();
  meta.output_dim = prepared.model.output_dim();
  meta.output_activation = to_string(prepared.model.output_activation());
  meta.class_names = prepared.model.class_names();
  meta.mode = to_string(cfg.mode) + "_upstream";
  meta.weight_origin_chain = prepared.lineage;
  meta.weight_origin_chain.push_back(*cfg.upstream_dataset);
  meta.seed = opts.seed;
  meta.train_config_hash = train_cfg.config_hash();
  // The archive keeps the full model so runs can resume, but the upstream
  // head is never part of the transferable set (load_backbone skips it).
  save_checkpoint(opts.checkpoint_dir, prepared.model, meta);
  return opts.checkpoint_dir;
}

TrainOutcome train_with_plan(ModelGraph& model, const FreezePlan& plan,
                             TensorCache& cache, const DataSplit& split,
                             const TrainConfig& cfg, std::uint64_t seed,
                             const TrainOptions& opts) {
  apply_freeze(model, plan);
  return train_model(model, cache, split, cfg, seed, opts);
}

// ---- repeat_runs ---------------------------------------------------------------

std::vector<RunResult> repeat_runs(const StrategyConfig& cfg,
                                   const DataSplit& target_split,
                                   const TrainConfig& train_cfg,
                                   RunContext& ctx) {
  train_cfg.validate();
  cfg.validate();
  require(ctx.registry != nullptr, ErrorCode::argument,
          "repeat_runs needs a registry");
  const DatasetHandle target = ctx.registry->get(cfg.target_dataset);
  const TaskSpec task{target->descriptor().task_kind,
                      target->descriptor().class_names};

  std::vector<RunResult> results;
  for (int run = 0; run < train_cfg.runs; ++run) {
    const std::uint64_t seed = train_cfg.base_seed + static_cast<std::uint64_t>(run);
    RunResult result;
    result.strategy_id = cfg.id();
    result.dataset = cfg.target_dataset;
    result.seed = seed;
    try {
      StrategyConfig run_cfg = cfg;
      if ((cfg.mode == StrategyMode::in_domain ||
           cfg.mode == StrategyMode::combination) &&
          !run_cfg.upstream_checkpoint) {
        // Upstream artifacts are cached per (mode, family, upstream, seed).
        const std::string key =
            to_string(cfg.mode) + "-" + to_string(cfg.backbone.family) + "-" +
            *cfg.upstream_dataset + "-s" + std::to_string(seed);
        const auto dir = ctx.workdir / "upstream" / key;
        if (!std::filesystem::exists(dir / "params.bin")) {
          auto it = ctx.splits.find(*cfg.upstream_dataset);
          require(it != ctx.splits.end(), ErrorCode::resolution,
                  "no split available for upstream dataset '" +
                      *cfg.upstream_dataset + "'");
          UpstreamOptions uopts;
          uopts.weight_store = ctx.weight_store;
          uopts.checkpoint_dir = dir;
          uopts.seed = seed;
          uopts.dropout_rate = ctx.dropout_rate;
          run_upstream(cfg, *ctx.registry, it->second, train_cfg, uopts);
        }
        run_cfg.upstream_checkpoint = dir.string();
      }

      PrepareOptions popts;
      popts.weight_store = ctx.weight_store;
      popts.seed = seed;
      popts.dropout_rate = ctx.dropout_rate;
      PreparedModel prepared = prepare_model(run_cfg, task, popts);

      TensorCache cache(target, prepared.model.input_hw(),
                        prepared.model.input_channels(),
                        family_scaling(prepared.model.family()));
      TrainOptions topts;
      if (!ctx.workdir.empty()) {
        topts.history_file = ctx.workdir / "histories" /
                             (cfg.id() + "-" + cfg.target_dataset + "-s" +
                              std::to_string(seed) + ".jsonl");
      }
      train_model(prepared.model, cache, target_split, train_cfg, seed, topts);

      result.metrics = evaluate_model(prepared.model, cache, target_split.test,
                                      task.kind);
      ScoredPart part = score_part(prepared.model, cache, target_split.test);
      result.scores = flatten_scores(part);

      if (ctx.save_final_checkpoints && !ctx.workdir.empty()) {
        CheckpointMeta meta;
        meta.mode = to_string(cfg.mode);
        meta.weight_origin_chain = prepared.lineage;
        meta.weight_origin_chain.push_back(cfg.target_dataset);
        meta.seed = seed;
        meta.train_config_hash = train_cfg.config_hash();
        save_checkpoint(ctx.workdir / "checkpoints" /
                            (cfg.id() + "-" + cfg.target_dataset + "-s" +
                             std::to_string(seed)),
                        prepared.model, meta);
      }
    } catch (const Error& e) {
      result.failed = true;
      result.failure_reason = e.what();
    }
    results.push_back(std::move(result));
  }
  return results;
}

}  // namespace dtl
