#include <utility>

#include "dtl/checkpoint.hpp"
#include "dtl/error.hpp"
#include "dtl/model.hpp"

namespace dtl {

namespace {

struct CbrConfig {
  std::vector<std::pair<int, int>> blocks;  // (filters, kernel)
  int head_filters;
};

// Wide-vs-tall CBR variants. Each block is conv + BN + ReLU with 2x2 max
// pooling after the first five blocks at most.
CbrConfig cbr_config(Family f) {
  switch (f) {
    case Family::cbr_tiny:
      return {{{64, 5}, {128, 3}, {256, 3}, {512, 3}}, 256};
    case Family::cbr_small:
      return {{{64, 5}, {128, 3}, {256, 3}, {512, 3}, {512, 3}}, 128};
    case Family::cbr_largew:
      return {{{128, 5}, {256, 3}, {512, 3}, {1024, 3}, {1024, 3}}, 256};
    case Family::cbr_larget:
      return {{{64, 5}, {128, 3}, {256, 3}, {512, 3}, {512, 3}, {512, 3}}, 256};
    default:
      raise(ErrorCode::argument, to_string(f) + " is not a CBR variant");
  }
}

constexpr int kMaxCbrPools = 5;

void build_cbr_features(ModelGraph& model) {
  const CbrConfig cfg = cbr_config(model.family());
  auto& seq = model.features();
  int in_ch = model.input_channels();
  int pools = 0;
  for (std::size_t b = 0; b < cfg.blocks.size(); ++b) {
    const auto [filters, kernel] = cfg.blocks[b];
    const std::string stem = "features.block" + std::to_string(b + 1);
    seq.add(Conv2d::same(stem + ".conv", in_ch, filters, kernel));
    seq.add(std::make_unique<BatchNorm2d>(stem + ".bn", filters));
    seq.add(std::make_unique<ReLU>(stem + ".relu"));
    if (pools < kMaxCbrPools) {
      seq.add(std::make_unique<MaxPool2d>(stem + ".pool"));
      ++pools;
    }
    in_ch = filters;
  }
}

void build_vgg16_features(ModelGraph& model) {
  static const int widths[5] = {64, 128, 256, 512, 512};
  static const int depths[5] = {2, 2, 3, 3, 3};
  auto& seq = model.features();
  int in_ch = model.input_channels();
  for (int b = 0; b < 5; ++b) {
    const std::string stem = "features.block" + std::to_string(b + 1);
    for (int d = 0; d < depths[b]; ++d) {
      seq.add(Conv2d::same(stem + ".conv" + std::to_string(d + 1), in_ch,
                           widths[b], 3));
      seq.add(std::make_unique<ReLU>(stem + ".relu" + std::to_string(d + 1)));
      in_ch = widths[b];
    }
    seq.add(std::make_unique<MaxPool2d>(stem + ".pool"));
  }
}

// conv + BN + ReLU triple used by resnet50 and inception_v3 (bias-free convs)
int add_cbr_unit(Sequential& seq, const std::string& name, int in_ch,
                 int out_ch, int kh, int kw, int stride, int ph, int pw) {
  seq.add(std::make_unique<Conv2d>(name + ".conv", in_ch, out_ch, kh, kw,
                                   stride, ph, pw, /*bias=*/false));
  seq.add(std::make_unique<BatchNorm2d>(name + ".bn", out_ch));
  seq.add(std::make_unique<ReLU>(name + ".relu"));
  return out_ch;
}

void build_resnet50_features(ModelGraph& model) {
  auto& seq = model.features();
  int ch = add_cbr_unit(seq, "features.stem", model.input_channels(), 64, 7, 7,
                        2, 3, 3);
  seq.add(std::make_unique<MaxPool2d>("features.stem.pool", 3, 2, 1));

  static const int block_counts[4] = {3, 4, 6, 3};
  static const int mid_widths[4] = {64, 128, 256, 512};
  for (int stage = 0; stage < 4; ++stage) {
    const int mid = mid_widths[stage];
    const int out = mid * 4;
    for (int block = 0; block < block_counts[stage]; ++block) {
      const std::string stem = "features.s" + std::to_string(stage + 1) +
                               ".b" + std::to_string(block + 1);
      const int stride = (block == 0 && stage > 0) ? 2 : 1;
      auto branches = std::make_unique<Branches>(stem, Branches::Combine::sum);
      auto& main = branches->add_branch();
      add_cbr_unit(main, stem + ".c1", ch, mid, 1, 1, 1, 0, 0);
      add_cbr_unit(main, stem + ".c2", mid, mid, 3, 3, stride, 1, 1);
      main.add(std::make_unique<Conv2d>(stem + ".c3.conv", mid, out, 1, 1, 1,
                                        0, 0, false));
      main.add(std::make_unique<BatchNorm2d>(stem + ".c3.bn", out));
      auto& shortcut = branches->add_branch();
      if (block == 0) {
        shortcut.add(std::make_unique<Conv2d>(stem + ".sc.conv", ch, out, 1, 1,
                                              stride, 0, 0, false));
        shortcut.add(std::make_unique<BatchNorm2d>(stem + ".sc.bn", out));
      }
      seq.add(std::move(branches));
      seq.add(std::make_unique<ReLU>(stem + ".relu"));
      ch = out;
    }
  }
}

// Branch helper for the inception modules below.
struct BranchSpec {
  // (out_ch, kh, kw, stride, ph, pw) conv units applied in order;
  // optional leading pool.
  enum class Pool { none, avg, max } pool = Pool::none;
  std::vector<std::array<int, 6>> convs;
};

int add_inception_module(Sequential& seq, const std::string& stem, int in_ch,
                         const std::vector<BranchSpec>& specs) {
  auto branches = std::make_unique<Branches>(stem, Branches::Combine::concat);
  int total = 0;
  for (std::size_t bi = 0; bi < specs.size(); ++bi) {
    auto& body = branches->add_branch();
    const std::string bname = stem + ".p" + std::to_string(bi);
    int ch = in_ch;
    if (specs[bi].pool == BranchSpec::Pool::avg)
      body.add(std::make_unique<AvgPool2d>(bname + ".pool", 3, 1, 1));
    else if (specs[bi].pool == BranchSpec::Pool::max)
      body.add(std::make_unique<MaxPool2d>(bname + ".pool", 3, 2, 0));
    for (std::size_t ci = 0; ci < specs[bi].convs.size(); ++ci) {
      const auto& c = specs[bi].convs[ci];
      ch = add_cbr_unit(body, bname + ".c" + std::to_string(ci + 1), ch, c[0],
                        c[1], c[2], c[3], c[4], c[5]);
    }
    total += ch;
  }
  seq.add(std::move(branches));
  return total;
}

int add_inception_a(Sequential& seq, const std::string& stem, int in_ch,
                    int pool_features) {
  return add_inception_module(
      seq, stem, in_ch,
      {{BranchSpec::Pool::none, {{64, 1, 1, 1, 0, 0}}},
       {BranchSpec::Pool::none, {{48, 1, 1, 1, 0, 0}, {64, 5, 5, 1, 2, 2}}},
       {BranchSpec::Pool::none,
        {{64, 1, 1, 1, 0, 0}, {96, 3, 3, 1, 1, 1}, {96, 3, 3, 1, 1, 1}}},
       {BranchSpec::Pool::avg, {{pool_features, 1, 1, 1, 0, 0}}}});
}

int add_reduction_a(Sequential& seq, const std::string& stem, int in_ch) {
  return add_inception_module(
      seq, stem, in_ch,
      {{BranchSpec::Pool::none, {{384, 3, 3, 2, 0, 0}}},
       {BranchSpec::Pool::none,
        {{64, 1, 1, 1, 0, 0}, {96, 3, 3, 1, 1, 1}, {96, 3, 3, 2, 0, 0}}},
       {BranchSpec::Pool::max, {}}});
}

int add_inception_b(Sequential& seq, const std::string& stem, int in_ch,
                    int c7) {
  return add_inception_module(
      seq, stem, in_ch,
      {{BranchSpec::Pool::none, {{192, 1, 1, 1, 0, 0}}},
       {BranchSpec::Pool::none,
        {{c7, 1, 1, 1, 0, 0}, {c7, 1, 7, 1, 0, 3}, {192, 7, 1, 1, 3, 0}}},
       {BranchSpec::Pool::none,
        {{c7, 1, 1, 1, 0, 0},
         {c7, 7, 1, 1, 3, 0},
         {c7, 1, 7, 1, 0, 3},
         {c7, 7, 1, 1, 3, 0},
         {192, 1, 7, 1, 0, 3}}},
       {BranchSpec::Pool::avg, {{192, 1, 1, 1, 0, 0}}}});
}

int add_reduction_b(Sequential& seq, const std::string& stem, int in_ch) {
  return add_inception_module(
      seq, stem, in_ch,
      {{BranchSpec::Pool::none, {{192, 1, 1, 1, 0, 0}, {320, 3, 3, 2, 0, 0}}},
       {BranchSpec::Pool::none,
        {{192, 1, 1, 1, 0, 0},
         {192, 1, 7, 1, 0, 3},
         {192, 7, 1, 1, 3, 0},
         {192, 3, 3, 2, 0, 0}}},
       {BranchSpec::Pool::max, {}}});
}

// InceptionC has nested splits: 1x1 -> {1x3 | 3x1} concatenated.
int add_inception_c(Sequential& seq, const std::string& stem, int in_ch) {
  auto branches = std::make_unique<Branches>(stem, Branches::Combine::concat);
  int total = 0;

  {
    auto& b0 = branches->add_branch();
    total += add_cbr_unit(b0, stem + ".p0.c1", in_ch, 320, 1, 1, 1, 0, 0);
  }
  {
    auto& b1 = branches->add_branch();
    add_cbr_unit(b1, stem + ".p1.c1", in_ch, 384, 1, 1, 1, 0, 0);
    auto split = std::make_unique<Branches>(stem + ".p1.split",
                                            Branches::Combine::concat);
    add_cbr_unit(split->add_branch(), stem + ".p1.s1", 384, 384, 1, 3, 1, 0, 1);
    add_cbr_unit(split->add_branch(), stem + ".p1.s2", 384, 384, 3, 1, 1, 1, 0);
    b1.add(std::move(split));
    total += 768;
  }
  {
    auto& b2 = branches->add_branch();
    add_cbr_unit(b2, stem + ".p2.c1", in_ch, 448, 1, 1, 1, 0, 0);
    add_cbr_unit(b2, stem + ".p2.c2", 448, 384, 3, 3, 1, 1, 1);
    auto split = std::make_unique<Branches>(stem + ".p2.split",
                                            Branches::Combine::concat);
    add_cbr_unit(split->add_branch(), stem + ".p2.s1", 384, 384, 1, 3, 1, 0, 1);
    add_cbr_unit(split->add_branch(), stem + ".p2.s2", 384, 384, 3, 1, 1, 1, 0);
    b2.add(std::move(split));
    total += 768;
  }
  {
    auto& b3 = branches->add_branch();
    b3.add(std::make_unique<AvgPool2d>(stem + ".p3.pool", 3, 1, 1));
    total += add_cbr_unit(b3, stem + ".p3.c1", in_ch, 192, 1, 1, 1, 0, 0);
  }
  seq.add(std::move(branches));
  return total;
}

void build_inception_v3_features(ModelGraph& model) {
  auto& seq = model.features();
  int ch = model.input_channels();
  ch = add_cbr_unit(seq, "features.stem.c1", ch, 32, 3, 3, 2, 0, 0);
  ch = add_cbr_unit(seq, "features.stem.c2", ch, 32, 3, 3, 1, 0, 0);
  ch = add_cbr_unit(seq, "features.stem.c3", ch, 64, 3, 3, 1, 1, 1);
  seq.add(std::make_unique<MaxPool2d>("features.stem.pool1", 3, 2, 0));
  ch = add_cbr_unit(seq, "features.stem.c4", ch, 80, 1, 1, 1, 0, 0);
  ch = add_cbr_unit(seq, "features.stem.c5", ch, 192, 3, 3, 1, 0, 0);
  seq.add(std::make_unique<MaxPool2d>("features.stem.pool2", 3, 2, 0));

  ch = add_inception_a(seq, "features.mixed0", ch, 32);
  ch = add_inception_a(seq, "features.mixed1", ch, 64);
  ch = add_inception_a(seq, "features.mixed2", ch, 64);
  ch = add_reduction_a(seq, "features.mixed3", ch);
  ch = add_inception_b(seq, "features.mixed4", ch, 128);
  ch = add_inception_b(seq, "features.mixed5", ch, 160);
  ch = add_inception_b(seq, "features.mixed6", ch, 160);
  ch = add_inception_b(seq, "features.mixed7", ch, 192);
  ch = add_reduction_b(seq, "features.mixed8", ch);
  ch = add_inception_c(seq, "features.mixed9", ch);
  add_inception_c(seq, "features.mixed10", ch);
}

}  // namespace

ModelGraph make_family_graph(Family family, std::array<int, 2> input_hw,
                             bool with_canonical_classifier) {
  const int min = min_input_size(family);
  require(input_hw[0] >= min && input_hw[1] >= min, ErrorCode::argument,
          to_string(family) + ": input below the " + std::to_string(min) +
              "px receptive-field minimum");
  ModelGraph model(family, input_hw);
  switch (family) {
    case Family::vgg16: build_vgg16_features(model); break;
    case Family::resnet50: build_resnet50_features(model); break;
    case Family::inception_v3: build_inception_v3_features(model); break;
    default: build_cbr_features(model); break;
  }

  if (with_canonical_classifier) {
    const Shape3 fs = model.feature_shape();
    auto& head = model.head();
    if (family == Family::vgg16) {
      const int flat = fs.c * fs.h * fs.w;
      head.add(std::make_unique<Dense>("head.fc1", flat, 4096));
      head.add(std::make_unique<ReLU>("head.relu1"));
      head.add(std::make_unique<Dropout>("head.drop1", 0.5));
      head.add(std::make_unique<Dense>("head.fc2", 4096, 4096));
      head.add(std::make_unique<ReLU>("head.relu2"));
      head.add(std::make_unique<Dropout>("head.drop2", 0.5));
      head.add(std::make_unique<Dense>("head.fc3", 4096, 1000));
    } else {
      head.add(std::make_unique<GlobalAvgPool>("head.gap"));
      head.add(std::make_unique<Dense>("head.fc", fs.c, 1000));
    }
    model.set_output(1000, OutputActivation::softmax, {});
  }
  return model;
}

ModelGraph build_backbone(const BackboneSpec& spec, const WeightStore* store) {
  spec.validate();
  ModelGraph model = make_family_graph(spec.family, spec.resolved_input());
  switch (spec.weights) {
    case WeightsOrigin::random:
      model.init_random(spec.init_seed);
      break;
    case WeightsOrigin::imagenet: {
      require(store != nullptr, ErrorCode::resolution,
              "imagenet weights requested but no weight store configured");
      load_backbone(store->resolve(spec.family), model);
      break;
    }
    case WeightsOrigin::checkpoint:
      load_backbone(*spec.checkpoint_ref, model);
      break;
  }
  return model;
}

void attach_head(ModelGraph& model, const TaskSpec& task,
                 const HeadOptions& opts) {
  require(!model.has_head(), ErrorCode::state,
          to_string(model.family()) + ": head already attached");
  require(!task.class_names.empty(), ErrorCode::argument,
          "task has no classes");
  const Shape3 fs = model.feature_shape();
  const int out_dim = task.output_dim(opts.activation);
  auto& head = model.head();
  head.add(Conv2d::same("head.conv", fs.c, opts.conv_filters, 3));
  head.add(std::make_unique<ReLU>("head.relu"));
  head.add(std::make_unique<Dropout>("head.dropout", opts.dropout_rate));
  head.add(std::make_unique<GlobalAvgPool>("head.gap"));
  head.add(std::make_unique<Dense>("head.logits", opts.conv_filters, out_dim));
  model.set_output(out_dim, opts.activation, task.class_names);
  model.init_head_random(opts.init_seed);
}

ModelGraph build_cbr(Family variant, std::array<int, 2> input_hw,
                     const TaskSpec& task, std::uint64_t seed,
                     double dropout_rate) {
  require(is_cbr(variant), ErrorCode::argument,
          to_string(variant) + " is not a CBR variant");
  BackboneSpec spec;
  spec.family = variant;
  spec.weights = WeightsOrigin::random;
  spec.input_hw = input_hw;
  spec.init_seed = seed;
  ModelGraph model = build_backbone(spec);
  HeadOptions opts;
  opts.conv_filters = cbr_config(variant).head_filters;
  opts.dropout_rate = dropout_rate;
  opts.init_seed = Rng::derive(seed, 0x6ead);
  attach_head(model, task, opts);
  return model;
}

}  // namespace dtl
