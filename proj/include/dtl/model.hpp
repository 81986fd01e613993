#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dtl/data.hpp"
#include "dtl/layers.hpp"

namespace dtl {

enum class Family {
  vgg16,
  inception_v3,
  resnet50,
  cbr_tiny,
  cbr_small,
  cbr_largew,
  cbr_larget,
};

std::string to_string(Family f);
Family family_from_string(const std::string& s);
bool family_supports_imagenet(Family f);  // the three large families only
std::array<int, 2> default_input_size(Family f);
int min_input_size(Family f);

enum class WeightsOrigin { random, imagenet, checkpoint };
std::string to_string(WeightsOrigin w);

enum class OutputActivation { sigmoid_per_label, softmax };
std::string to_string(OutputActivation a);
OutputActivation output_activation_from_string(const std::string& s);

struct BackboneSpec {
  Family family = Family::cbr_tiny;
  WeightsOrigin weights = WeightsOrigin::random;
  std::optional<std::string> checkpoint_ref;
  std::array<int, 2> input_hw{0, 0};  // {0,0} means the family default
  std::uint64_t init_seed = 0;

  std::array<int, 2> resolved_input() const {
    return input_hw[0] > 0 ? input_hw : default_input_size(family);
  }
  void validate() const;
};

struct TaskSpec {
  TaskKind kind = TaskKind::binary;
  std::vector<std::string> class_names;

  // Binary tasks use a single sigmoid logit; multilabel one per label.
  int output_dim(OutputActivation act) const {
    if (act == OutputActivation::softmax)
      return static_cast<int>(class_names.size());
    return kind == TaskKind::binary ? 1 : static_cast<int>(class_names.size());
  }
};

// Backbone features plus an optional classification head, both named layer
// stacks. Construction is structural; weights materialize via init_random or
// a checkpoint load.
class ModelGraph {
 public:
  ModelGraph(Family family, std::array<int, 2> input_hw, int input_channels = 3);

  ModelGraph(ModelGraph&&) = default;
  ModelGraph& operator=(ModelGraph&&) = default;

  Sequential& features() { return *features_; }
  Sequential& head() { return *head_; }
  bool has_head() const { return !head_->empty(); }

  Family family() const { return family_; }
  std::array<int, 2> input_hw() const { return input_hw_; }
  int input_channels() const { return input_ch_; }
  int output_dim() const { return output_dim_; }
  OutputActivation output_activation() const { return activation_; }
  const std::vector<std::string>& class_names() const { return class_names_; }
  void set_output(int output_dim, OutputActivation act,
                  std::vector<std::string> class_names);

  Tensor forward(const Tensor& x, Phase phase, Rng* dropout_rng = nullptr,
                 Recorder* rec = nullptr);
  // Backpropagates from d(logits). Skips the backbone when nothing in it is
  // trainable and no capture was requested below the head.
  void backward(const Tensor& dlogits, Recorder* grad_rec = nullptr);

  std::vector<ParamGroup*> param_groups();
  std::vector<const ParamGroup*> param_groups() const;
  // Sum over parameter groups (buffers excluded); works unmaterialized.
  std::int64_t param_count() const;
  bool materialized() const;
  void init_random(std::uint64_t seed);
  void init_head_random(std::uint64_t seed);
  void zero_grad();

  // Digest over parameter AND buffer bytes, by section.
  std::uint64_t backbone_digest() const;
  std::uint64_t head_digest() const;

  Layer* find_layer(const std::string& name);
  std::vector<std::string> layer_names();
  // Name of the deepest convolution layer (Grad-CAM default target).
  std::string last_conv_layer();

  Shape3 feature_shape() const;  // backbone output for the configured input

 private:
  Family family_;
  std::array<int, 2> input_hw_;
  int input_ch_;
  int output_dim_ = 0;
  OutputActivation activation_ = OutputActivation::sigmoid_per_label;
  std::vector<std::string> class_names_;
  std::unique_ptr<Sequential> features_;
  std::unique_ptr<Sequential> head_;
  Tensor feature_out_cache_;  // boundary activations for split backward
};

// ---- builders -------------------------------------------------------------

struct HeadOptions {
  int conv_filters = 256;
  double dropout_rate = 0.5;
  OutputActivation activation = OutputActivation::sigmoid_per_label;
  std::uint64_t init_seed = 0;
};

// Backbone conv stacks (headless). `weights` handling lives in the zoo
// functions below; this builds structure only.
ModelGraph make_family_graph(Family family, std::array<int, 2> input_hw,
                             bool with_canonical_classifier = false);

class WeightStore;  // checkpoint.hpp

// Structure + weights per spec (random init, imagenet store lookup, or
// checkpoint). Headless.
ModelGraph build_backbone(const BackboneSpec& spec,
                          const WeightStore* store = nullptr);

// Appends the transfer head: conv + ReLU + dropout + global average pool +
// dense logits. Errors if a head is already attached.
void attach_head(ModelGraph& model, const TaskSpec& task,
                 const HeadOptions& opts);

// CBR convenience: backbone + head in one call, random init.
ModelGraph build_cbr(Family variant, std::array<int, 2> input_hw,
                     const TaskSpec& task, std::uint64_t seed = 0,
                     double dropout_rate = 0.5);

bool is_cbr(Family f);

}  // namespace dtl
