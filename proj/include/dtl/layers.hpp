#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "dtl/rng.hpp"
#include "dtl/tensor.hpp"

namespace dtl {

enum class Phase { train, eval };

// One named parameter (or running-stat buffer) of a layer. Values stay empty
// until the model is materialized; shape metadata alone drives param counting.
struct ParamGroup {
  std::string name;
  std::vector<int> shape;
  std::vector<float> value;
  std::vector<float> grad;
  bool is_buffer = false;  // running stats: checkpointed, never optimized
  bool trainable = true;

  std::int64_t count() const {
    std::int64_t c = 1;
    for (int d : shape) c *= d;
    return c;
  }
  bool materialized() const {
    return static_cast<std::int64_t>(value.size()) == count();
  }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0f);
  }
  void zero_grad() {
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0f);
  }
};

// Capture of named layer outputs (forward) or output-gradients (backward),
// used by Grad-CAM.
class Recorder {
 public:
  void want(const std::string& layer) { wanted_[layer] = {}; }
  bool wants(const std::string& layer) const { return wanted_.count(layer) > 0; }
  void store(const std::string& layer, const Tensor& t) { wanted_[layer] = t; }
  const Tensor* get(const std::string& layer) const {
    auto it = wanted_.find(layer);
    return (it == wanted_.end() || it->second.empty()) ? nullptr : &it->second;
  }

 private:
  std::map<std::string, Tensor> wanted_;
};

struct Shape3 {
  int c = 0, h = 0, w = 0;
};

class Layer {
 public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;

  const std::string& name() const { return name_; }

  virtual Tensor forward(const Tensor& x, Phase phase, Rng* dropout_rng,
                         Recorder* rec) = 0;
  virtual Tensor backward(const Tensor& dy, Recorder* grad_rec) = 0;

  virtual void collect_params(std::vector<ParamGroup*>& out) { (void)out; }
  virtual void init_params(Rng& rng) { (void)rng; }
  // Structural output shape; throws argument errors for infeasible inputs.
  virtual Shape3 out_shape(Shape3 in) const = 0;
  virtual void visit(const std::function<void(Layer&)>& fn) { fn(*this); }
  virtual bool is_conv() const { return false; }

 protected:
  Tensor pass(Tensor y, Recorder* rec) const {
    if (rec && rec->wants(name_)) rec->store(name_, y);
    return y;
  }
  void capture_grad(const Tensor& dy, Recorder* grad_rec) const {
    if (grad_rec && grad_rec->wants(name_)) grad_rec->store(name_, dy);
  }

  std::string name_;
};

// ---- leaf layers ----------------------------------------------------------

class Conv2d : public Layer {
 public:
  Conv2d(std::string name, int in_ch, int out_ch, int kh, int kw, int stride,
         int pad_h, int pad_w, bool bias = true);
  static std::unique_ptr<Conv2d> same(std::string name, int in_ch, int out_ch,
                                      int k, bool bias = true);

  Tensor forward(const Tensor& x, Phase phase, Rng*, Recorder* rec) override;
  Tensor backward(const Tensor& dy, Recorder* grad_rec) override;
  void collect_params(std::vector<ParamGroup*>& out) override;
  void init_params(Rng& rng) override;
  Shape3 out_shape(Shape3 in) const override;
  bool is_conv() const override { return true; }

  int out_channels() const { return out_ch_; }

 private:
  void im2col(const float* img, float* col, int h, int w, int oh, int ow) const;
  void col2im(const float* col, float* img, int h, int w, int oh, int ow) const;

  int in_ch_, out_ch_, kh_, kw_, stride_, pad_h_, pad_w_;
  bool has_bias_;
  ParamGroup weight_, bias_;
  Tensor cached_x_;
};

class BatchNorm2d : public Layer {
 public:
  BatchNorm2d(std::string name, int channels, double momentum = 0.99,
              double eps = 1e-3);

  Tensor forward(const Tensor& x, Phase phase, Rng*, Recorder* rec) override;
  Tensor backward(const Tensor& dy, Recorder* grad_rec) override;
  void collect_params(std::vector<ParamGroup*>& out) override;
  void init_params(Rng& rng) override;
  Shape3 out_shape(Shape3 in) const override { return in; }

 private:
  int channels_;
  double momentum_, eps_;
  ParamGroup gamma_, beta_, running_mean_, running_var_;
  // backward caches
  Tensor cached_x_;
  std::vector<float> batch_mean_, batch_var_;
  bool used_batch_stats_ = false;
};

class ReLU : public Layer {
 public:
  explicit ReLU(std::string name) : Layer(std::move(name)) {}
  Tensor forward(const Tensor& x, Phase, Rng*, Recorder* rec) override;
  Tensor backward(const Tensor& dy, Recorder* grad_rec) override;
  Shape3 out_shape(Shape3 in) const override { return in; }

 private:
  std::vector<char> mask_;
};

class MaxPool2d : public Layer {
 public:
  MaxPool2d(std::string name, int kernel = 2, int stride = 2, int pad = 0);
  Tensor forward(const Tensor& x, Phase, Rng*, Recorder* rec) override;
  Tensor backward(const Tensor& dy, Recorder* grad_rec) override;
  Shape3 out_shape(Shape3 in) const override;

 private:
  int kernel_, stride_, pad_;
  Shape3 in_shape_{};
  std::vector<int> argmax_;
};

class AvgPool2d : public Layer {
 public:
  AvgPool2d(std::string name, int kernel, int stride, int pad);
  Tensor forward(const Tensor& x, Phase, Rng*, Recorder* rec) override;
  Tensor backward(const Tensor& dy, Recorder* grad_rec) override;
  Shape3 out_shape(Shape3 in) const override;

 private:
  int kernel_, stride_, pad_;
  Shape3 in_shape_{};
};

class GlobalAvgPool : public Layer {
 public:
  explicit GlobalAvgPool(std::string name) : Layer(std::move(name)) {}
  Tensor forward(const Tensor& x, Phase, Rng*, Recorder* rec) override;
  Tensor backward(const Tensor& dy, Recorder* grad_rec) override;
  Shape3 out_shape(Shape3 in) const override { return {in.c, 1, 1}; }

 private:
  Shape3 in_shape_{};
};

// Fully connected over the flattened C*H*W of its input.
class Dense : public Layer {
 public:
  Dense(std::string name, int in_features, int out_features);
  Tensor forward(const Tensor& x, Phase, Rng*, Recorder* rec) override;
  Tensor backward(const Tensor& dy, Recorder* grad_rec) override;
  void collect_params(std::vector<ParamGroup*>& out) override;
  void init_params(Rng& rng) override;
  Shape3 out_shape(Shape3 in) const override;

 private:
  int in_features_, out_features_;
  ParamGroup weight_, bias_;
  Tensor cached_x_;
};

// Inverted dropout; identity in eval phase.
class Dropout : public Layer {
 public:
  Dropout(std::string name, double rate);
  Tensor forward(const Tensor& x, Phase phase, Rng* rng, Recorder* rec) override;
  Tensor backward(const Tensor& dy, Recorder* grad_rec) override;
  Shape3 out_shape(Shape3 in) const override { return in; }

 private:
  double rate_;
  std::vector<float> mask_;
};

// ---- containers -------------------------------------------------------------

class Sequential : public Layer {
 public:
  explicit Sequential(std::string name) : Layer(std::move(name)) {}

  Sequential& add(std::unique_ptr<Layer> layer);
  bool empty() const { return children_.empty(); }
  std::size_t size() const { return children_.size(); }
  Layer* child(std::size_t i) { return children_[i].get(); }

  Tensor forward(const Tensor& x, Phase phase, Rng* rng, Recorder* rec) override;
  Tensor backward(const Tensor& dy, Recorder* grad_rec) override;
  void collect_params(std::vector<ParamGroup*>& out) override;
  void init_params(Rng& rng) override;
  Shape3 out_shape(Shape3 in) const override;
  void visit(const std::function<void(Layer&)>& fn) override;

 private:
  std::vector<std::unique_ptr<Layer>> children_;
};

// Parallel branches over one input, combined by channel concatenation or
// elementwise sum (residual connections use an empty branch as identity).
class Branches : public Layer {
 public:
  enum class Combine { concat, sum };
  Branches(std::string name, Combine combine);

  Sequential& add_branch();  // returns the new branch body

  Tensor forward(const Tensor& x, Phase phase, Rng* rng, Recorder* rec) override;
  Tensor backward(const Tensor& dy, Recorder* grad_rec) override;
  void collect_params(std::vector<ParamGroup*>& out) override;
  void init_params(Rng& rng) override;
  Shape3 out_shape(Shape3 in) const override;
  void visit(const std::function<void(Layer&)>& fn) override;

 private:
  Combine combine_;
  std::vector<std::unique_ptr<Sequential>> branches_;
  std::vector<int> branch_channels_;  // filled during forward (concat split)
};

}  // namespace dtl
