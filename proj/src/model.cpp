#include "dtl/model.hpp"

#include <algorithm>

#include "dtl/error.hpp"
#include "dtl/hash.hpp"

namespace dtl {

std::string to_string(Family f) {
  switch (f) {
    case Family::vgg16: return "vgg16";
    case Family::inception_v3: return "inception_v3";
    case Family::resnet50: return "resnet50";
    case Family::cbr_tiny: return "cbr_tiny";
    case Family::cbr_small: return "cbr_small";
    case Family::cbr_largew: return "cbr_largew";
    case Family::cbr_larget: return "cbr_larget";
  }
  return "?";
}

Family family_from_string(const std::string& s) {
  for (Family f : {Family::vgg16, Family::inception_v3, Family::resnet50,
                   Family::cbr_tiny, Family::cbr_small, Family::cbr_largew,
                   Family::cbr_larget}) {
    if (to_string(f) == s) return f;
  }
  raise(ErrorCode::argument, "unknown model family: " + s);
}

bool family_supports_imagenet(Family f) {
  return f == Family::vgg16 || f == Family::inception_v3 ||
         f == Family::resnet50;
}

bool is_cbr(Family f) { return !family_supports_imagenet(f); }

std::array<int, 2> default_input_size(Family f) {
  return f == Family::inception_v3 ? std::array<int, 2>{299, 299}
                                   : std::array<int, 2>{224, 224};
}

int min_input_size(Family f) {
  switch (f) {
    case Family::vgg16: return 32;        // five 2x2 pools
    case Family::resnet50: return 32;     // /32 downsampling
    case Family::inception_v3: return 75; // valid-padded stem
    case Family::cbr_tiny: return 16;     // four pools
    default: return 32;                   // remaining CBR variants: five pools
  }
}

std::string to_string(WeightsOrigin w) {
  switch (w) {
    case WeightsOrigin::random: return "random";
    case WeightsOrigin::imagenet: return "imagenet";
    case WeightsOrigin::checkpoint: return "checkpoint";
  }
  return "?";
}

std::string to_string(OutputActivation a) {
  return a == OutputActivation::sigmoid_per_label ? "sigmoid_per_label"
                                                  : "softmax";
}

OutputActivation output_activation_from_string(const std::string& s) {
  if (s == "sigmoid_per_label") return OutputActivation::sigmoid_per_label;
  if (s == "softmax") return OutputActivation::softmax;
  raise(ErrorCode::argument, "unknown output activation: " + s);
}

void BackboneSpec::validate() const {
  if (weights == WeightsOrigin::imagenet) {
    require(family_supports_imagenet(family), ErrorCode::argument,
            to_string(family) + " has no imagenet weights; only "
            "vgg16/inception_v3/resnet50 do");
  }
  if (weights == WeightsOrigin::checkpoint) {
    require(checkpoint_ref.has_value() && !checkpoint_ref->empty(),
            ErrorCode::argument, "weights=checkpoint requires checkpoint_ref");
  }
  const auto hw = resolved_input();
  const int min = min_input_size(family);
  require(hw[0] >= min && hw[1] >= min, ErrorCode::argument,
          to_string(family) + ": input " + std::to_string(hw[0]) + "x" +
              std::to_string(hw[1]) + " below the " + std::to_string(min) +
              "px receptive-field minimum");
}

// ---- ModelGraph ----------------------------------------------------------

ModelGraph::ModelGraph(Family family, std::array<int, 2> input_hw,
                       int input_channels)
    : family_(family),
      input_hw_(input_hw),
      input_ch_(input_channels),
      features_(std::make_unique<Sequential>("features")),
      head_(std::make_unique<Sequential>("head")) {}

void ModelGraph::set_output(int output_dim, OutputActivation act,
                            std::vector<std::string> class_names) {
  output_dim_ = output_dim;
  activation_ = act;
  class_names_ = std::move(class_names);
}

Tensor ModelGraph::forward(const Tensor& x, Phase phase, Rng* dropout_rng,
                           Recorder* rec) {
  require(x.c == input_ch_ && x.h == input_hw_[0] && x.w == input_hw_[1],
          ErrorCode::argument, "model input shape mismatch");
  Tensor feat = features_->forward(x, phase, dropout_rng, rec);
  if (!has_head()) return feat;
  feature_out_cache_ = feat;
  return head_->forward(feat, phase, dropout_rng, rec);
}

void ModelGraph::backward(const Tensor& dlogits, Recorder* grad_rec) {
  if (!has_head()) {
    features_->backward(dlogits, grad_rec);
    return;
  }
  Tensor dfeat = head_->backward(dlogits, grad_rec);
  bool backbone_needed = grad_rec != nullptr;
  if (!backbone_needed) {
    std::vector<ParamGroup*> groups;
    features_->collect_params(groups);
    for (const auto* g : groups) {
      if (!g->is_buffer && g->trainable) {
        backbone_needed = true;
        break;
      }
    }
  }
  if (backbone_needed) features_->backward(dfeat, grad_rec);
}

std::vector<ParamGroup*> ModelGraph::param_groups() {
  std::vector<ParamGroup*> out;
  features_->collect_params(out);
  head_->collect_params(out);
  return out;
}

std::vector<const ParamGroup*> ModelGraph::param_groups() const {
  std::vector<ParamGroup*> out;
  features_->collect_params(out);
  head_->collect_params(out);
  return {out.begin(), out.end()};
}

std::int64_t ModelGraph::param_count() const {
  std::int64_t total = 0;
  for (const auto* g : param_groups())
    if (!g->is_buffer) total += g->count();
  return total;
}

bool ModelGraph::materialized() const {
  const auto groups = param_groups();
  return std::all_of(groups.begin(), groups.end(),
                     [](const ParamGroup* g) { return g->materialized(); });
}

void ModelGraph::init_random(std::uint64_t seed) {
  Rng rng = make_stream(seed, RngStream::weight_init);
  features_->init_params(rng);
  head_->init_params(rng);
}

void ModelGraph::init_head_random(std::uint64_t seed) {
  Rng rng = make_stream(seed, RngStream::weight_init);
  head_->init_params(rng);
}

void ModelGraph::zero_grad() {
  for (auto* g : param_groups()) g->zero_grad();
}

namespace {

std::uint64_t digest_section(const Sequential& seq) {
  std::vector<ParamGroup*> groups;
  const_cast<Sequential&>(seq).collect_params(groups);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto* g : groups) {
    h = fnv1a64(g->name, h);
    if (!g->value.empty())
      h = fnv1a64(g->value.data(), g->value.size() * sizeof(float), h);
  }
  return h;
}

}  // namespace

std::uint64_t ModelGraph::backbone_digest() const {
  return digest_section(*features_);
}

std::uint64_t ModelGraph::head_digest() const { return digest_section(*head_); }

Layer* ModelGraph::find_layer(const std::string& name) {
  Layer* found = nullptr;
  auto look = [&](Layer& l) {
    if (l.name() == name) found = &l;
  };
  features_->visit(look);
  head_->visit(look);
  return found;
}

std::vector<std::string> ModelGraph::layer_names() {
  std::vector<std::string> names;
  auto grab = [&](Layer& l) { names.push_back(l.name()); };
  features_->visit(grab);
  head_->visit(grab);
  return names;
}

std::string ModelGraph::last_conv_layer() {
  std::string last;
  auto grab = [&](Layer& l) {
    if (l.is_conv()) last = l.name();
  };
  features_->visit(grab);
  if (last.empty()) head_->visit(grab);
  return last;
}

Shape3 ModelGraph::feature_shape() const {
  return features_->out_shape({input_ch_, input_hw_[0], input_hw_[1]});
}

}  // namespace dtl
