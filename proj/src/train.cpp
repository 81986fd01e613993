#include "dtl/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "dtl/checkpoint.hpp"
#include "dtl/error.hpp"
#include "dtl/hash.hpp"
#include "dtl/image.hpp"

namespace dtl {

using nlohmann::json;

std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::binary_ce: return "binary_ce";
    case LossKind::categorical_ce: return "categorical_ce";
    case LossKind::per_label_binary_ce: return "per_label_binary_ce";
  }
  return "?";
}

LossKind loss_from_string(const std::string& s) {
  for (LossKind k : {LossKind::binary_ce, LossKind::categorical_ce,
                     LossKind::per_label_binary_ce}) {
    if (to_string(k) == s) return k;
  }
  raise(ErrorCode::argument, "unknown loss: " + s);
}

LossKind default_loss(TaskKind task) {
  return task == TaskKind::binary ? LossKind::binary_ce
                                  : LossKind::per_label_binary_ce;
}

void TrainConfig::validate() const {
  require(epochs >= 1, ErrorCode::argument, "epochs must be >= 1");
  require(batch_size >= 1, ErrorCode::argument, "batch_size must be >= 1");
  require(runs >= 1, ErrorCode::argument, "runs must be >= 1");
  require(learning_rate > 0.0, ErrorCode::argument, "learning_rate must be > 0");
}

std::string TrainConfig::config_hash() const {
  std::ostringstream os;
  os << epochs << '|' << batch_size << '|' << learning_rate << '|'
     << (loss ? to_string(*loss) : "auto") << '|' << runs << '|' << base_seed
     << '|' << optimizer.name << '|' << optimizer.rho << '|' << optimizer.eps
     << '|' << optimizer.momentum << '|' << optimizer.beta1 << '|'
     << optimizer.beta2 << '|' << evaluate_best_epoch;
  return hex64(fnv1a64(os.str()));
}

// ---- loss -------------------------------------------------------------------

namespace {

double stable_bce_with_logit(float z, float t) {
  // max(z,0) - z*t + log(1 + exp(-|z|))
  const double zd = z;
  return std::max(zd, 0.0) - zd * t + std::log1p(std::exp(-std::abs(zd)));
}

double sigmoidf(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

LossResult compute_loss(LossKind kind, const Tensor& logits,
                        const std::vector<std::vector<float>>& targets) {
  require(static_cast<std::size_t>(logits.n) == targets.size(),
          ErrorCode::argument, "loss: batch size mismatch");
  const int dim = logits.c;
  LossResult out;
  out.dlogits = Tensor(logits.n, dim, 1, 1);

  if (kind == LossKind::binary_ce || kind == LossKind::per_label_binary_ce) {
    if (kind == LossKind::binary_ce)
      require(dim == 1, ErrorCode::argument,
              "binary_ce expects a single logit; use per_label_binary_ce");
    const double denom = static_cast<double>(logits.n) * dim;
    double total = 0.0;
    for (int i = 0; i < logits.n; ++i) {
      require(static_cast<int>(targets[i].size()) == dim, ErrorCode::argument,
              "loss: target width mismatch");
      for (int c = 0; c < dim; ++c) {
        const float z = logits.at(i, c, 0, 0);
        const float t = targets[i][c];
        total += stable_bce_with_logit(z, t);
        out.dlogits.at(i, c, 0, 0) =
            static_cast<float>((sigmoidf(z) - t) / denom);
      }
    }
    out.value = total / denom;
    return out;
  }

  // categorical cross-entropy over softmax
  require(dim >= 2, ErrorCode::argument, "categorical_ce needs >= 2 logits");
  double total = 0.0;
  for (int i = 0; i < logits.n; ++i) {
    require(static_cast<int>(targets[i].size()) == dim, ErrorCode::argument,
            "loss: target width mismatch");
    float zmax = logits.at(i, 0, 0, 0);
    for (int c = 1; c < dim; ++c) zmax = std::max(zmax, logits.at(i, c, 0, 0));
    double zsum = 0.0;
    for (int c = 0; c < dim; ++c)
      zsum += std::exp(static_cast<double>(logits.at(i, c, 0, 0)) - zmax);
    const double log_zsum = std::log(zsum);
    for (int c = 0; c < dim; ++c) {
      const double logp =
          static_cast<double>(logits.at(i, c, 0, 0)) - zmax - log_zsum;
      const double p = std::exp(logp);
      const double t = targets[i][c];
      total -= t * logp;
      out.dlogits.at(i, c, 0, 0) =
          static_cast<float>((p - t) / static_cast<double>(logits.n));
    }
  }
  out.value = total / static_cast<double>(logits.n);
  return out;
}

std::vector<std::vector<double>> apply_output_activation(
    const Tensor& logits, OutputActivation act) {
  std::vector<std::vector<double>> scores(
      static_cast<std::size_t>(logits.n),
      std::vector<double>(static_cast<std::size_t>(logits.c)));
  for (int i = 0; i < logits.n; ++i) {
    if (act == OutputActivation::sigmoid_per_label) {
      for (int c = 0; c < logits.c; ++c)
        scores[i][c] = sigmoidf(logits.at(i, c, 0, 0));
    } else {
      float zmax = logits.at(i, 0, 0, 0);
      for (int c = 1; c < logits.c; ++c)
        zmax = std::max(zmax, logits.at(i, c, 0, 0));
      double zsum = 0.0;
      for (int c = 0; c < logits.c; ++c)
        zsum += std::exp(static_cast<double>(logits.at(i, c, 0, 0)) - zmax);
      for (int c = 0; c < logits.c; ++c)
        scores[i][c] =
            std::exp(static_cast<double>(logits.at(i, c, 0, 0)) - zmax) / zsum;
    }
  }
  return scores;
}

// ---- optimizers ---------------------------------------------------------------

namespace {

class SgdOptimizer : public Optimizer {
 public:
  explicit SgdOptimizer(const OptimizerConfig& cfg) : cfg_(cfg) {}
  void step(const std::vector<ParamGroup*>& groups, double lr) override {
    for (auto* g : groups) {
      if (g->is_buffer || !g->trainable || g->grad.empty()) continue;
      if (cfg_.momentum > 0.0) {
        auto& vel = state_[g];
        vel.resize(g->value.size(), 0.0f);
        for (std::size_t i = 0; i < g->value.size(); ++i) {
          vel[i] = static_cast<float>(cfg_.momentum * vel[i] - lr * g->grad[i]);
          g->value[i] += vel[i];
        }
      } else {
        for (std::size_t i = 0; i < g->value.size(); ++i)
          g->value[i] -= static_cast<float>(lr * g->grad[i]);
      }
    }
  }

 private:
  OptimizerConfig cfg_;
  std::map<ParamGroup*, std::vector<float>> state_;
};

class RmspropOptimizer : public Optimizer {
 public:
  explicit RmspropOptimizer(const OptimizerConfig& cfg) : cfg_(cfg) {}
  void step(const std::vector<ParamGroup*>& groups, double lr) override {
    for (auto* g : groups) {
      if (g->is_buffer || !g->trainable || g->grad.empty()) continue;
      auto& ms = state_[g];
      ms.resize(g->value.size(), 0.0f);
      for (std::size_t i = 0; i < g->value.size(); ++i) {
        const double grad = g->grad[i];
        ms[i] = static_cast<float>(cfg_.rho * ms[i] +
                                   (1.0 - cfg_.rho) * grad * grad);
        g->value[i] -= static_cast<float>(
            lr * grad / (std::sqrt(static_cast<double>(ms[i])) + cfg_.eps));
      }
    }
  }

 private:
  OptimizerConfig cfg_;
  std::map<ParamGroup*, std::vector<float>> state_;
};

class AdamOptimizer : public Optimizer {
 public:
  explicit AdamOptimizer(const OptimizerConfig& cfg) : cfg_(cfg) {}
  void step(const std::vector<ParamGroup*>& groups, double lr) override {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (auto* g : groups) {
      if (g->is_buffer || !g->trainable || g->grad.empty()) continue;
      auto& s = state_[g];
      s.m.resize(g->value.size(), 0.0f);
      s.v.resize(g->value.size(), 0.0f);
      for (std::size_t i = 0; i < g->value.size(); ++i) {
        const double grad = g->grad[i];
        s.m[i] = static_cast<float>(cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * grad);
        s.v[i] = static_cast<float>(cfg_.beta2 * s.v[i] +
                                    (1.0 - cfg_.beta2) * grad * grad);
        const double mhat = s.m[i] / bc1;
        const double vhat = s.v[i] / bc2;
        g->value[i] -=
            static_cast<float>(lr * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
    }
  }

 private:
  struct State {
    std::vector<float> m, v;
  };
  OptimizerConfig cfg_;
  std::map<ParamGroup*, State> state_;
  long t_ = 0;
};

}  // namespace

std::unique_ptr<Optimizer> Optimizer::make(const OptimizerConfig& cfg) {
  if (cfg.name == "rmsprop") return std::make_unique<RmspropOptimizer>(cfg);
  if (cfg.name == "sgd") return std::make_unique<SgdOptimizer>(cfg);
  if (cfg.name == "adam") return std::make_unique<AdamOptimizer>(cfg);
  raise(ErrorCode::argument, "unknown optimizer: " + cfg.name);
}

// ---- preprocessing -------------------------------------------------------------

PixelScaling family_scaling(Family f) {
  switch (f) {
    case Family::vgg16: return PixelScaling::caffe_bgr;
    case Family::resnet50: return PixelScaling::imagenet_mean_std;
    case Family::inception_v3: return PixelScaling::pm_one;
    default: return PixelScaling::unit;
  }
}

TensorCache::TensorCache(DatasetHandle dataset, std::array<int, 2> hw,
                         int channels, PixelScaling scaling)
    : dataset_(std::move(dataset)), hw_(hw), channels_(channels),
      scaling_(scaling) {}

const Tensor& TensorCache::input(int index) {
  auto it = cache_.find(index);
  if (it != cache_.end()) return it->second;

  Image img = read_image(dataset_->item_path(index));
  img = resize_bilinear(img, hw_[0], hw_[1]);
  Tensor t(1, channels_, hw_[0], hw_[1]);
  for (int c = 0; c < channels_; ++c) {
    const int src_c = img.channels == 1 ? 0 : std::min(c, img.channels - 1);
    float* dst = t.chan(0, c);
    for (int y = 0; y < hw_[0]; ++y)
      for (int x = 0; x < hw_[1]; ++x) dst[y * hw_[1] + x] = img.at(y, x, src_c);
  }
  switch (scaling_) {
    case PixelScaling::unit:
      break;
    case PixelScaling::caffe_bgr: {
      // BGR channel order with per-channel means on the 0..255 scale.
      static const float mean[3] = {103.939f, 116.779f, 123.68f};
      Tensor swapped = t;
      for (int c = 0; c < 3 && c < channels_; ++c) {
        const float* src = t.chan(0, 2 - c);
        float* dst = swapped.chan(0, c);
        for (int i = 0; i < t.spatial(); ++i) dst[i] = src[i] * 255.0f - mean[c];
      }
      t = std::move(swapped);
      break;
    }
    case PixelScaling::imagenet_mean_std: {
      static const float mean[3] = {0.485f, 0.456f, 0.406f};
      static const float stdev[3] = {0.229f, 0.224f, 0.225f};
      for (int c = 0; c < channels_ && c < 3; ++c) {
        float* dst = t.chan(0, c);
        for (int i = 0; i < t.spatial(); ++i)
          dst[i] = (dst[i] - mean[c]) / stdev[c];
      }
      break;
    }
    case PixelScaling::pm_one:
      for (auto& v : t.v) v = v * 2.0f - 1.0f;
      break;
  }
  return cache_.emplace(index, std::move(t)).first->second;
}

std::vector<float> TensorCache::label_row(int index) const {
  return dataset_->label_row(index);
}

// ---- engine ---------------------------------------------------------------------

void append_history_line(const std::filesystem::path& file,
                         const EpochRecord& rec) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::app);
  require(out.good(), ErrorCode::io, "cannot append history " + file.string());
  json j = {{"epoch", rec.epoch},
            {"train_loss", rec.train_loss},
            {"val_loss", rec.val_loss},
            {"val_precision", rec.val_precision},
            {"wall_seconds", rec.wall_seconds}};
  out << j.dump() << "\n";
}

namespace {

// Target rows for the loss: single-logit binary heads train on the positive
// class column; softmax heads on the (already one-hot) class row.
std::vector<float> target_row(const std::vector<float>& label_row,
                              int output_dim, OutputActivation act) {
  if (output_dim == 1 && label_row.size() == 2)
    return {label_row[1]};
  (void)act;
  return label_row;
}

struct BatchData {
  Tensor input;
  std::vector<std::vector<float>> targets;
};

BatchData assemble_batch(TensorCache& cache, const std::vector<int>& indices,
                         std::size_t lo, std::size_t hi, int output_dim,
                         OutputActivation act) {
  const auto& first = cache.input(indices[lo]);
  BatchData batch;
  batch.input = Tensor(static_cast<int>(hi - lo), first.c, first.h, first.w);
  const std::size_t item = first.count();
  for (std::size_t i = lo; i < hi; ++i) {
    const Tensor& t = cache.input(indices[i]);
    std::copy(t.v.begin(), t.v.end(), batch.input.v.begin() + (i - lo) * item);
    batch.targets.push_back(
        target_row(cache.label_row(indices[i]), output_dim, act));
  }
  return batch;
}

double batch_loss_eval(ModelGraph& model, TensorCache& cache,
                       const std::vector<int>& indices, LossKind loss,
                       int batch_size, double* precision_out) {
  double total = 0.0;
  std::vector<std::vector<int>> preds, labels;
  for (std::size_t lo = 0; lo < indices.size(); lo += batch_size) {
    const std::size_t hi = std::min(indices.size(), lo + batch_size);
    BatchData batch = assemble_batch(cache, indices, lo, hi, model.output_dim(),
                                     model.output_activation());
    Tensor logits = model.forward(batch.input, Phase::eval);
    total += compute_loss(loss, logits, batch.targets).value *
             static_cast<double>(hi - lo);
    if (precision_out) {
      const auto scores =
          apply_output_activation(logits, model.output_activation());
      for (std::size_t i = 0; i < scores.size(); ++i) {
        const auto full = cache.label_row(indices[lo + i]);
        std::vector<int> lab(full.size());
        for (std::size_t c = 0; c < full.size(); ++c)
          lab[c] = full[c] > 0.5f ? 1 : 0;
        std::vector<int> pred(full.size(), 0);
        if (model.output_dim() == 1 && full.size() == 2) {
          pred[1] = scores[i][0] >= 0.5 ? 1 : 0;
          pred[0] = 1 - pred[1];
        } else if (model.output_activation() == OutputActivation::softmax) {
          const auto arg = std::distance(
              scores[i].begin(),
              std::max_element(scores[i].begin(), scores[i].end()));
          pred[static_cast<std::size_t>(arg)] = 1;
        } else {
          for (std::size_t c = 0; c < scores[i].size(); ++c)
            pred[c] = scores[i][c] >= 0.5 ? 1 : 0;
        }
        preds.push_back(std::move(pred));
        labels.push_back(std::move(lab));
      }
    }
  }
  if (precision_out) {
    try {
      *precision_out = weighted_metrics(preds, labels,
                                        preds.front().size() > 2
                                            ? TaskKind::multilabel
                                            : TaskKind::binary)["precision_w"];
    } catch (const Error&) {
      *precision_out = 0.0;
    }
  }
  return total / static_cast<double>(indices.size());
}

}  // namespace

TrainOutcome train_model(ModelGraph& model, TensorCache& cache,
                         const DataSplit& split, const TrainConfig& cfg,
                         std::uint64_t seed, const TrainOptions& opts) {
  cfg.validate();
  require(model.has_head(), ErrorCode::state, "model has no head");
  require(!split.train.empty(), ErrorCode::argument, "empty training part");

  const TaskKind task =
      cache.dataset()->descriptor().task_kind;
  const LossKind loss = cfg.resolved_loss(task);
  if (loss == LossKind::binary_ce)
    require(model.output_dim() == 1, ErrorCode::argument,
            "binary_ce needs a single-logit head");
  if (loss == LossKind::per_label_binary_ce)
    require(model.output_activation() == OutputActivation::sigmoid_per_label,
            ErrorCode::argument, "per_label_binary_ce needs sigmoid outputs");
  if (loss == LossKind::categorical_ce) {
    require(model.output_activation() == OutputActivation::softmax,
            ErrorCode::argument, "categorical_ce needs a softmax head");
    require(task == TaskKind::binary, ErrorCode::argument,
            "categorical_ce is incompatible with coexisting labels");
  }

  TrainOutcome outcome;
  int batch_size = cfg.batch_size;
  if (batch_size > static_cast<int>(split.train.size())) {
    batch_size = static_cast<int>(split.train.size());
    outcome.warnings.push_back(
        "batch_size clamped to training-set size " + std::to_string(batch_size));
  }

  Rng shuffle_rng = make_stream(seed, RngStream::data_shuffle);
  Rng dropout_rng = make_stream(seed, RngStream::dropout);
  auto optimizer = Optimizer::make(cfg.optimizer);
  const auto groups = model.param_groups();

  std::vector<int> order = split.train;
  double best_val = std::numeric_limits<double>::infinity();
  auto snapshot = [&](const char* tag) {
    CheckpointMeta meta;
    meta.train_config_hash = cfg.config_hash();
    meta.seed = seed;
    save_checkpoint(opts.checkpoint_dir / tag, model, meta);
  };
  if (!opts.checkpoint_dir.empty()) snapshot("last_good");

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t lo = 0; lo < order.size();
         lo += static_cast<std::size_t>(batch_size)) {
      const std::size_t hi =
          std::min(order.size(), lo + static_cast<std::size_t>(batch_size));
      BatchData batch = assemble_batch(cache, order, lo, hi, model.output_dim(),
                                       model.output_activation());
      model.zero_grad();
      Tensor logits = model.forward(batch.input, Phase::train, &dropout_rng);
      LossResult lr = compute_loss(loss, logits, batch.targets);
      if (!std::isfinite(lr.value)) {
        outcome.history.aborted = true;
        outcome.history.abort_reason =
            "non-finite loss at epoch " + std::to_string(epoch);
        if (!opts.checkpoint_dir.empty())
          outcome.history.last_good_checkpoint =
              (opts.checkpoint_dir / "last_good").string();
        raise(ErrorCode::divergence, outcome.history.abort_reason +
                                         (outcome.history.last_good_checkpoint.empty()
                                              ? ""
                                              : "; last good checkpoint: " +
                                                    outcome.history.last_good_checkpoint));
      }
      epoch_loss += lr.value * static_cast<double>(hi - lo);
      model.backward(lr.dlogits);
      optimizer->step(groups, cfg.learning_rate);
    }
    epoch_loss /= static_cast<double>(order.size());

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss;
    if (!split.val.empty()) {
      rec.val_loss = batch_loss_eval(model, cache, split.val, loss, batch_size,
                                     &rec.val_precision);
    }
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    outcome.history.epochs.push_back(rec);
    if (!opts.history_file.empty()) append_history_line(opts.history_file, rec);
    if (rec.val_loss < best_val) {
      best_val = rec.val_loss;
      outcome.history.best_val_epoch = epoch;
    }
    if (!opts.checkpoint_dir.empty()) snapshot("last_good");
  }
  return outcome;
}

ScoredPart score_part(ModelGraph& model, TensorCache& cache,
                      const std::vector<int>& indices, int batch_size) {
  require(!indices.empty(), ErrorCode::argument, "score_part: empty part");
  ScoredPart out;
  for (std::size_t lo = 0; lo < indices.size();
       lo += static_cast<std::size_t>(batch_size)) {
    const std::size_t hi =
        std::min(indices.size(), lo + static_cast<std::size_t>(batch_size));
    BatchData batch = assemble_batch(cache, indices, lo, hi, model.output_dim(),
                                     model.output_activation());
    Tensor logits = model.forward(batch.input, Phase::eval);
    auto scores = apply_output_activation(logits, model.output_activation());
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const auto full = cache.label_row(indices[lo + i]);
      std::vector<int> lab(full.size());
      for (std::size_t c = 0; c < full.size(); ++c)
        lab[c] = full[c] > 0.5f ? 1 : 0;
      out.scores.push_back(std::move(scores[i]));
      out.labels.push_back(std::move(lab));
    }
  }
  return out;
}

std::vector<double> flatten_scores(const ScoredPart& part) {
  std::vector<double> flat;
  for (const auto& row : part.scores)
    flat.insert(flat.end(), row.begin(), row.end());
  return flat;
}

MetricMap evaluate_model(ModelGraph& model, TensorCache& cache,
                         const std::vector<int>& test_indices, TaskKind task) {
  ScoredPart part = score_part(model, cache, test_indices);
  MetricMap metrics;

  const std::size_t n_classes = part.labels.front().size();
  if (model.output_dim() == 1 && n_classes == 2) {
    std::vector<double> scores(part.scores.size());
    std::vector<int> labels(part.labels.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
      scores[i] = part.scores[i][0];
      labels[i] = part.labels[i][1];
    }
    metrics["auc_roc"] = auc_roc(scores, labels);
  } else {
    // align score columns with label columns (softmax/sigmoid over classes)
    metrics["auc_roc"] = auc_roc_multilabel(part.scores, part.labels);
  }

  std::vector<std::vector<int>> preds;
  preds.reserve(part.scores.size());
  for (const auto& row : part.scores) {
    std::vector<int> pred(n_classes, 0);
    if (model.output_dim() == 1 && n_classes == 2) {
      pred[1] = row[0] >= 0.5 ? 1 : 0;
      pred[0] = 1 - pred[1];
    } else if (model.output_activation() == OutputActivation::softmax) {
      pred[static_cast<std::size_t>(std::distance(
          row.begin(), std::max_element(row.begin(), row.end())))] = 1;
    } else {
      for (std::size_t c = 0; c < row.size(); ++c)
        pred[c] = row[c] >= 0.5 ? 1 : 0;
    }
    preds.push_back(std::move(pred));
  }
  const auto wm = weighted_metrics(preds, part.labels, task);
  metrics.insert(wm.begin(), wm.end());
  return metrics;
}

}  // namespace dtl
