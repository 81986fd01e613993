#include "doctest.h"

#include <cmath>

#include "dtl/error.hpp"
#include "dtl/layers.hpp"
#include "dtl/model.hpp"
#include "dtl/train.hpp"
#include "oracles.hpp"

using namespace dtl;

namespace {

Tensor random_tensor(int n, int c, int h, int w, std::uint64_t seed,
                     float lo = -1.0f, float hi = 1.0f) {
  Tensor t(n, c, h, w);
  Rng rng(seed);
  for (auto& v : t.v) v = rng.next_uniform(lo, hi);
  return t;
}

// Scalar objective: weighted sum of the layer output with fixed random
// weights. Its input/parameter gradients are checked against central
// differences.
struct GradHarness {
  Layer& layer;
  Tensor x;
  Tensor w;  // same shape as layer output

  explicit GradHarness(Layer& l, Tensor input, std::uint64_t wseed = 99)
      : layer(l), x(std::move(input)) {
    Tensor probe = layer.forward(x, Phase::train, nullptr, nullptr);
    w = random_tensor(probe.n, probe.c, probe.h, probe.w, wseed);
  }

  double eval() {
    const Tensor y = layer.forward(x, Phase::train, nullptr, nullptr);
    double s = 0.0;
    for (std::size_t i = 0; i < y.v.size(); ++i)
      s += static_cast<double>(y.v[i]) * w.v[i];
    return s;
  }

  // analytic gradients wrt input and params
  Tensor backward_all() {
    std::vector<ParamGroup*> groups;
    layer.collect_params(groups);
    for (auto* g : groups) {
      g->ensure_grad();
      g->zero_grad();
    }
    layer.forward(x, Phase::train, nullptr, nullptr);
    return layer.backward(w, nullptr);
  }
};

void check_close(double analytic, double numeric, double tol = 2e-2) {
  const double scale = std::max({1.0, std::fabs(analytic), std::fabs(numeric)});
  CHECK(std::fabs(analytic - numeric) / scale < tol);
}

void check_input_grads(GradHarness& h, int samples = 12) {
  const Tensor dx = h.backward_all();
  Rng pick(7);
  for (int s = 0; s < samples; ++s) {
    const auto i = pick.next_below(h.x.v.size());
    const double num =
        testing::numeric_grad([&] { return h.eval(); }, h.x.v[i]);
    check_close(dx.v[i], num);
  }
}

void check_param_grads(Layer& layer, GradHarness& h, int samples = 12) {
  h.backward_all();
  std::vector<ParamGroup*> groups;
  layer.collect_params(groups);
  Rng pick(11);
  for (auto* g : groups) {
    if (g->is_buffer) continue;
    for (int s = 0; s < samples; ++s) {
      const auto i = pick.next_below(g->value.size());
      const double analytic = g->grad[i];
      const double num =
          testing::numeric_grad([&] { return h.eval(); }, g->value[i]);
      // running stats shift between evals; re-zero for next sample
      check_close(analytic, num);
    }
  }
}

}  // namespace

TEST_CASE("conv2d gradients match finite differences") {
  Conv2d conv("c", 3, 4, 3, 3, 1, 1, 1);
  Rng rng(1);
  conv.init_params(rng);
  GradHarness h(conv, random_tensor(2, 3, 6, 6, 5));
  check_input_grads(h);
  check_param_grads(conv, h);
}

TEST_CASE("strided asymmetric conv gradients") {
  Conv2d conv("c", 2, 3, 1, 7, 2, 0, 3);
  Rng rng(2);
  conv.init_params(rng);
  GradHarness h(conv, random_tensor(2, 2, 9, 9, 6));
  check_input_grads(h);
  check_param_grads(conv, h);
}

TEST_CASE("dense gradients") {
  Dense fc("d", 12, 5);
  Rng rng(3);
  fc.init_params(rng);
  GradHarness h(fc, random_tensor(3, 3, 2, 2, 7));
  check_input_grads(h);
  check_param_grads(fc, h);
}

TEST_CASE("batchnorm train-mode gradients") {
  BatchNorm2d bn("b", 3);
  Rng rng(4);
  bn.init_params(rng);
  // nonzero gamma/beta perturbation for a harder check
  std::vector<ParamGroup*> groups;
  bn.collect_params(groups);
  for (auto* g : groups)
    if (!g->is_buffer)
      for (auto& v : g->value) v += rng.next_uniform(-0.3f, 0.3f);
  GradHarness h(bn, random_tensor(4, 3, 5, 5, 8));
  check_input_grads(h);
  check_param_grads(bn, h);
}

TEST_CASE("pooling and relu gradients") {
  SUBCASE("maxpool") {
    MaxPool2d pool("p", 3, 2, 1);
    GradHarness h(pool, random_tensor(2, 2, 7, 7, 9));
    check_input_grads(h);
  }
  SUBCASE("avgpool") {
    AvgPool2d pool("p", 3, 1, 1);
    GradHarness h(pool, random_tensor(2, 2, 5, 5, 10));
    check_input_grads(h);
  }
  SUBCASE("global avg pool") {
    GlobalAvgPool pool("g");
    GradHarness h(pool, random_tensor(2, 3, 4, 4, 11));
    check_input_grads(h);
  }
  SUBCASE("relu") {
    ReLU relu("r");
    GradHarness h(relu, random_tensor(2, 3, 4, 4, 12));
    check_input_grads(h);
  }
}

TEST_CASE("branch composites route gradients") {
  SUBCASE("residual sum with projection") {
    Branches block("res", Branches::Combine::sum);
    auto& main = block.add_branch();
    main.add(Conv2d::same("res.c1", 3, 3, 3));
    block.add_branch();  // identity
    Rng rng(5);
    block.init_params(rng);
    GradHarness h(block, random_tensor(2, 3, 5, 5, 13));
    check_input_grads(h);
    check_param_grads(block, h);
  }
  SUBCASE("concat") {
    Branches block("cat", Branches::Combine::concat);
    block.add_branch().add(Conv2d::same("cat.c1", 3, 2, 1));
    block.add_branch().add(Conv2d::same("cat.c2", 3, 4, 3));
    Rng rng(6);
    block.init_params(rng);
    GradHarness h(block, random_tensor(2, 3, 5, 5, 14));
    check_input_grads(h);
    check_param_grads(block, h);
  }
}

TEST_CASE("full model gradient check through the loss") {
  TaskSpec task{TaskKind::binary, {"no_crack", "crack"}};
  ModelGraph model = build_cbr(Family::cbr_tiny, {16, 16}, task, 3);
  Tensor x = random_tensor(2, 3, 16, 16, 20, 0.0f, 1.0f);
  std::vector<std::vector<float>> targets = {{1.0f}, {0.0f}};

  auto eval = [&] {
    Tensor logits = model.forward(x, Phase::train);
    return compute_loss(LossKind::binary_ce, logits, targets).value;
  };

  model.zero_grad();
  Tensor logits = model.forward(x, Phase::train);
  LossResult lr = compute_loss(LossKind::binary_ce, logits, targets);
  model.backward(lr.dlogits);

  Rng pick(21);
  int checked = 0;
  for (auto* g : model.param_groups()) {
    if (g->is_buffer || g->grad.empty()) continue;
    for (int s = 0; s < 3; ++s) {
      const auto i = pick.next_below(g->value.size());
      const double num = testing::numeric_grad(eval, g->value[i], 5e-3f);
      const double analytic = g->grad[i];
      const double scale = std::max({1e-3, std::fabs(num), std::fabs(analytic)});
      CHECK(std::fabs(num - analytic) / scale < 0.08);
      ++checked;
    }
  }
  CHECK(checked > 20);
}

TEST_CASE("forward yields finite (B, output_dim) scores with sigmoid range") {
  TaskSpec task{TaskKind::multilabel,
                {"a", "b", "c", "d", "e", "f"}};
  ModelGraph model = build_cbr(Family::cbr_tiny, {16, 16}, task, 4);
  CHECK(model.output_dim() == 6);
  Tensor x = random_tensor(3, 3, 16, 16, 22, 0.0f, 1.0f);
  Tensor logits = model.forward(x, Phase::eval);
  CHECK(logits.n == 3);
  CHECK(logits.c == 6);
  const auto scores =
      apply_output_activation(logits, OutputActivation::sigmoid_per_label);
  for (const auto& row : scores)
    for (double s : row) {
      CHECK(std::isfinite(s));
      CHECK(s > 0.0);
      CHECK(s < 1.0);
    }
}

TEST_CASE("random init is reproducible per seed") {
  TaskSpec task{TaskKind::binary, {"n", "y"}};
  ModelGraph a = build_cbr(Family::cbr_tiny, {16, 16}, task, 42);
  ModelGraph b = build_cbr(Family::cbr_tiny, {16, 16}, task, 42);
  ModelGraph c = build_cbr(Family::cbr_tiny, {16, 16}, task, 43);
  CHECK(a.backbone_digest() == b.backbone_digest());
  CHECK(a.head_digest() == b.head_digest());
  CHECK(a.backbone_digest() != c.backbone_digest());
}

TEST_CASE("frozen batchnorm keeps running stats") {
  BatchNorm2d bn("b", 2);
  Rng rng(9);
  bn.init_params(rng);
  std::vector<ParamGroup*> groups;
  bn.collect_params(groups);
  Tensor x = random_tensor(2, 2, 3, 3, 30);

  bn.forward(x, Phase::train, nullptr, nullptr);
  std::vector<float> mean_after_train, var_after_train;
  for (auto* g : groups) {
    if (g->name == "b.running_mean") mean_after_train = g->value;
    if (g->name == "b.running_var") var_after_train = g->value;
  }
  CHECK(mean_after_train[0] != 0.0f);  // updated

  for (auto* g : groups) g->trainable = false;
  bn.forward(x, Phase::train, nullptr, nullptr);
  for (auto* g : groups) {
    if (g->name == "b.running_mean") CHECK(g->value == mean_after_train);
    if (g->name == "b.running_var") CHECK(g->value == var_after_train);
  }
}
