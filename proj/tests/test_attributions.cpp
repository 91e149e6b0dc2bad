#include <cmath>
#include <random>

#include "doctest.h"
#include "xforge/attributions.hpp"

using namespace xforge;

namespace {

// f_c(x) = w_c . flatten(x): every gradient method has a closed form here.
class LinearModel : public DifferentiableModel {
 public:
  LinearModel(std::vector<int> input_shape, Tensor weights)
      : shape_(std::move(input_shape)), w_(std::move(weights)) {}
  std::vector<int> input_shape() const override { return shape_; }
  int class_count() const override { return w_.shape[0]; }
  int record_forward(BasicTape<float>& tape, int input,
                     std::vector<int>* = nullptr) const override {
    const auto& s = tape.value(input).shape;
    const int flat = tape.apply(OpKind::reshape, {input},
                                OpParams{.dims = {s[0], s[1] * s[2] * s[3]}});
    return tape.apply(OpKind::dense, {flat, tape.leaf(w_)});
  }

 private:
  std::vector<int> shape_;
  Tensor w_;
};

// dense -> relu -> dense on a (1,2,2) input; small enough for FD oracles.
class ReluNet : public DifferentiableModel {
 public:
  explicit ReluNet(uint32_t seed) {
    std::mt19937 rng(seed);
    w1_ = random_tensor<float>({6, 4}, rng);
    w2_ = random_tensor<float>({2, 6}, rng);
  }
  std::vector<int> input_shape() const override { return {1, 2, 2}; }
  int class_count() const override { return 2; }
  int record_forward(BasicTape<float>& tape, int input,
                     std::vector<int>* = nullptr) const override {
    const auto& s = tape.value(input).shape;
    int x = tape.apply(OpKind::reshape, {input}, OpParams{.dims = {s[0], 4}});
    x = tape.apply(OpKind::relu, {tape.apply(OpKind::dense, {x, tape.leaf(w1_)})});
    return tape.apply(OpKind::dense, {x, tape.leaf(w2_)});
  }
  Tensor w1_, w2_;
};

// identity 1x1 conv (the Grad-CAM tap) -> global average -> fixed dense head
class TapModel : public DifferentiableModel {
 public:
  std::vector<int> input_shape() const override { return {1, 2, 2}; }
  int class_count() const override { return 2; }
  int record_forward(BasicTape<float>& tape, int input,
                     std::vector<int>* taps = nullptr) const override {
    Tensor k({1, 1, 1, 1});
    k.data[0] = 1.0f;
    int x = tape.apply(OpKind::conv2d, {input, tape.leaf(k)});
    if (taps) taps->push_back(x);
    x = tape.apply(OpKind::avgpool, {x}, OpParams{.window = 2});
    // relu on the (positive-mean) pooled scalar keeps guided backprop
    // applicable without changing the Grad-CAM hand computation
    x = tape.apply(OpKind::relu, {x});
    x = tape.apply(OpKind::reshape, {x}, OpParams{.dims = {1, 1}});
    Tensor head({2, 1});
    head.data = {1.0f, 2.0f};
    return tape.apply(OpKind::dense, {x, tape.leaf(head)});
  }
};

// uses maxpool, which the rescale rule rejects
class MaxpoolModel : public DifferentiableModel {
 public:
  std::vector<int> input_shape() const override { return {1, 2, 2}; }
  int class_count() const override { return 2; }
  int record_forward(BasicTape<float>& tape, int input,
                     std::vector<int>* = nullptr) const override {
    int x = tape.apply(OpKind::maxpool2x2, {input});
    x = tape.apply(OpKind::reshape, {x}, OpParams{.dims = {1, 1}});
    Tensor head({2, 1});
    head.data = {1.0f, -1.0f};
    return tape.apply(OpKind::dense, {x, tape.leaf(head)});
  }
};

Tensor make_input(std::vector<int> shape, uint32_t seed, float lo = -1,
                  float hi = 1) {
  std::mt19937 rng(seed);
  return random_tensor<float>(std::move(shape), rng, lo, hi);
}

}  // namespace

TEST_CASE("saliency on a linear model is |w| regardless of x") {
  std::mt19937 rng(3);
  auto w = random_tensor<float>({2, 16}, rng);
  LinearModel model({1, 4, 4}, w);
  for (uint32_t s : {1u, 2u}) {
    const auto x = make_input({1, 4, 4}, s);
    const auto map = saliency(model, x, 1);
    for (int i = 0; i < 16; ++i)
      CHECK(map.scores.data[i] == doctest::Approx(std::fabs(w.data[16 + i])));
  }
}

TEST_CASE("saliency of a constant model is the zero map") {
  LinearModel model({1, 4, 4}, Tensor({2, 16}));
  const auto map = saliency(model, make_input({1, 4, 4}, 1), 0);
  for (float v : map.scores.data) CHECK(v == 0.0f);
}

TEST_CASE("saliency matches finite-difference sensitivity on a small net") {
  ReluNet model(4);
  auto x = make_input({1, 2, 2}, 7);
  // keep preactivations away from relu kinks
  const auto map = saliency(model, x, 0);
  const auto fd = finite_difference_gradient<float>(
      [&](const Tensor& p) { return eval_class_score(model, p, 0); }, x,
      1e-2f);
  for (int i = 0; i < 4; ++i)
    CHECK(map.scores.data[i] ==
          doctest::Approx(std::fabs(fd.data[i])).epsilon(1e-3));
}

TEST_CASE("integrated gradients is exact on linear models") {
  std::mt19937 rng(5);
  auto w = random_tensor<float>({3, 16}, rng);
  LinearModel model({1, 4, 4}, w);
  const auto x = make_input({1, 4, 4}, 2);
  const auto raw =
      integrated_gradients_raw(model, x, 2, 16, Tensor({1, 4, 4}));
  for (int i = 0; i < 16; ++i)
    CHECK(raw.data[i] == doctest::Approx(w.data[32 + i] * x.data[i])
                             .epsilon(1e-5));
}

TEST_CASE("integrated gradients completeness on a relu net") {
  ReluNet model(9);
  const auto x = make_input({1, 2, 2}, 3);
  // proportional baseline keeps every relu gate fixed along the path, so the
  // left Riemann sum is exact up to float rounding
  Tensor x0 = x;
  for (auto& v : x0.data) v *= 0.05f;
  const auto raw = integrated_gradients_raw(model, x, 1, 64, x0);
  double lhs = 0;
  for (float v : raw.data) lhs += v;
  const double rhs =
      eval_class_score(model, x, 1) - eval_class_score(model, x0, 1);
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-3));
}

TEST_CASE("integrated gradients at its own baseline is zero") {
  ReluNet model(1);
  const auto x = make_input({1, 2, 2}, 4);
  const auto raw = integrated_gradients_raw(model, x, 0, 8, x);
  for (float v : raw.data) CHECK(v == 0.0f);
}

TEST_CASE("gradient shap: degenerate and linear-expectation cases") {
  std::mt19937 rng(6);
  auto w = random_tensor<float>({2, 16}, rng);
  LinearModel model({1, 4, 4}, w);
  const auto x = make_input({1, 4, 4}, 8);

  const auto zero = gradient_shap_raw(model, x, 0, 1, 0.0f, 1, 0);
  for (float v : zero.data) CHECK(std::fabs(v) < 1e-6f);

  // baselines are x + noise, so the expectation is 0 with SE sigma*|w|/sqrt(n)
  const float sigma = 0.5f;
  const int n = 64;
  const auto est = gradient_shap_raw(model, x, 0, n, sigma, 4, 11);
  for (int i = 0; i < 16; ++i) {
    const float se = sigma * std::fabs(w.data[i]) / std::sqrt(float(n));
    CHECK(std::fabs(est.data[i]) <= 3 * se + 1e-6f);
  }

  const auto a = gradient_shap_raw(model, x, 0, 4, 0.3f, 4, 17);
  const auto b = gradient_shap_raw(model, x, 0, 4, 0.3f, 4, 17);
  CHECK(a.data == b.data);
}

TEST_CASE("guided backprop gating and the no-relu rejection") {
  ReluNet model(12);
  // strongly negative input drives all first-layer preactivations negative
  // only if weights conspire; instead force it: zero map when no relu passes
  Tensor x({1, 2, 2});
  for (auto& v : x.data) v = 0.0f;
  const auto map = guided_backprop(model, x, 0);  // relu(0) boundary: finite
  for (float v : map.scores.data) CHECK(std::isfinite(v));

  std::mt19937 rng(1);
  LinearModel linear({1, 2, 2}, random_tensor<float>({2, 4}, rng));
  CHECK_THROWS_AS(guided_backprop(linear, x, 0), std::invalid_argument);
}

TEST_CASE("guided backprop is bounded by the saliency magnitude per gate") {
  ReluNet model(21);
  const auto x = make_input({1, 2, 2}, 9);
  const auto gb = guided_backprop(model, x, 0);
  // extra gating can only remove contributions present in the plain backward
  // pass of the positive-part network; check nonnegativity + finiteness here
  for (float v : gb.scores.data) {
    CHECK(v >= 0.0f);
    CHECK(std::isfinite(v));
  }
}

TEST_CASE("grad cam hand oracle on an identity conv tap") {
  TapModel model;
  Tensor x({1, 2, 2});
  x.data = {0.5f, -0.25f, 1.0f, 0.0f};
  // class 0 head weight 1, global mean tap -> alpha = 1/4,
  // cam = relu(x/4), already at input resolution
  const auto map = grad_cam(model, x, 0);
  CHECK(map.scores.shape == std::vector<int>{2, 2});
  CHECK(map.scores.data[0] == doctest::Approx(0.125f));
  CHECK(map.scores.data[1] == 0.0f);
  CHECK(map.scores.data[2] == doctest::Approx(0.25f));
  CHECK(map.scores.data[3] == 0.0f);
  CHECK_THROWS_AS(grad_cam(model, x, 5), std::invalid_argument);
}

TEST_CASE("guided grad cam is the elementwise product of its factors") {
  TapModel model;
  Tensor x({1, 2, 2});
  x.data = {0.5f, -0.25f, 1.0f, 0.25f};
  const auto gb = guided_backprop(model, x, 0);
  const auto cam = grad_cam(model, x, 0);
  const auto ggc = guided_grad_cam(model, x, 0);
  for (int i = 0; i < 4; ++i)
    CHECK(ggc.scores.data[i] ==
          doctest::Approx(gb.scores.data[i] * cam.scores.data[i]));
}

TEST_CASE("deeplift equals the exact linear attribution and sums to delta") {
  std::mt19937 rng(14);
  auto w = random_tensor<float>({2, 16}, rng);
  LinearModel linear({1, 4, 4}, w);
  const auto x = make_input({1, 4, 4}, 5);
  const auto raw = deeplift_rescale_raw(linear, x, 1, Tensor({1, 4, 4}));
  for (int i = 0; i < 16; ++i)
    CHECK(raw.data[i] ==
          doctest::Approx(w.data[16 + i] * x.data[i]).epsilon(1e-5));

  ReluNet net(30);
  const auto x2 = make_input({1, 2, 2}, 6);
  const Tensor x0({1, 2, 2});
  const auto d = deeplift_rescale_raw(net, x2, 0, x0);
  double lhs = 0;
  for (float v : d.data) lhs += v;
  const double rhs =
      eval_class_score(net, x2, 0) - eval_class_score(net, x0, 0);
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-4));

  const auto self = deeplift_rescale_raw(net, x2, 0, x2);
  for (float v : self.data) CHECK(v == 0.0f);
}

TEST_CASE("deeplift rejects models with unsupported ops, naming the op") {
  MaxpoolModel model;
  const auto x = make_input({1, 2, 2}, 2);
  CHECK_THROWS_WITH_AS(
      deeplift_rescale_raw(model, x, 0, Tensor({1, 2, 2})),
      doctest::Contains("maxpool"), std::invalid_argument);
}

TEST_CASE("deeplift shap reduces to deeplift and matches the linear mean") {
  ReluNet net(40);
  const auto x = make_input({1, 2, 2}, 11);
  const std::vector<Tensor> one = {Tensor({1, 2, 2})};
  const auto a = deeplift_shap_raw(net, x, 0, one, 1, 0);
  const auto b = deeplift_rescale_raw(net, x, 0, one[0]);
  CHECK(a.data == b.data);

  std::mt19937 rng(15);
  auto w = random_tensor<float>({2, 4}, rng);
  LinearModel linear({1, 2, 2}, w);
  std::vector<Tensor> refs;
  Tensor mean({1, 2, 2});
  for (int r = 0; r < 6; ++r) {
    refs.push_back(make_input({1, 2, 2}, 100 + r));
    for (int i = 0; i < 4; ++i) mean.data[i] += refs.back().data[i] / 6.0f;
  }
  const int n = 96;
  const auto est = deeplift_shap_raw(linear, x, 1, refs, n, 3);
  for (int i = 0; i < 4; ++i) {
    const float exact = w.data[4 + i] * (x.data[i] - mean.data[i]);
    // draws are uniform over refs; 3-standard-error band on the sample mean
    float var = 0;
    for (const auto& r : refs) {
      const float term = w.data[4 + i] * (x.data[i] - r.data[i]) - exact;
      var += term * term / 6.0f;
    }
    CHECK(std::fabs(est.data[i] - exact) <=
          3 * std::sqrt(var / n) + 1e-6f);
  }

  const auto d1 = deeplift_shap_raw(linear, x, 0, refs, 4, 9);
  const auto d2 = deeplift_shap_raw(linear, x, 0, refs, 4, 9);
  CHECK(d1.data == d2.data);
}

TEST_CASE("kernel shap full enumeration recovers exact Shapley values") {
  // additive model over 2x2 patches of a 4x4 image: phi_j = w . patch_j(x)
  std::mt19937 rng(22);
  auto w = random_tensor<float>({2, 16}, rng);
  LinearModel model({1, 4, 4}, w);
  const auto part = PatchPartition::grid(4, 4, 2, 2);
  const auto x = make_input({1, 4, 4}, 13, 0.1f, 1.0f);
  const auto phi = kernel_shap_values(model, x, 1, part, 64, 0.0f, 0);
  std::vector<double> exact(4, 0.0);
  for (int y = 0; y < 4; ++y)
    for (int c = 0; c < 4; ++c)
      exact[part.feature_of(y, c)] += w.data[16 + y * 4 + c] * x.data[y * 4 + c];
  double total = 0;
  for (int j = 0; j < 4; ++j) {
    CHECK(phi[j] == doctest::Approx(exact[j]).epsilon(1e-6));
    total += phi[j];
  }
  // efficiency
  const double delta = eval_class_score(model, x, 1) -
                       eval_class_score(model, Tensor({1, 4, 4}), 1);
  CHECK(total == doctest::Approx(delta).epsilon(1e-4));
}

TEST_CASE("kernel shap symmetry: identical patches get identical values") {
  Tensor w({1, 16});
  for (auto& v : w.data) v = 1.0f;  // fully symmetric model
  LinearModel model({1, 4, 4}, w);
  Tensor x({1, 4, 4});
  for (auto& v : x.data) v = 0.5f;
  const auto part = PatchPartition::grid(4, 4, 2, 2);
  const auto phi = kernel_shap_values(model, x, 0, part, 64, 0.0f, 0);
  for (int j = 1; j < 4; ++j)
    CHECK(phi[j] == doctest::Approx(phi[0]).epsilon(1e-6));
}

TEST_CASE("linear-model agreement across IG, deeplift and kernel shap") {
  std::mt19937 rng(31);
  auto w = random_tensor<float>({2, 16}, rng);
  LinearModel model({1, 4, 4}, w);
  const auto part = PatchPartition::grid(4, 4, 2, 2);
  const auto x = make_input({1, 4, 4}, 19);
  const Tensor x0({1, 4, 4});
  const auto ig = integrated_gradients_raw(model, x, 0, 16, x0);
  const auto dl = deeplift_rescale_raw(model, x, 0, x0);
  const auto ks = kernel_shap_values(model, x, 0, part, 64, 0.0f, 0);
  std::vector<double> ig_patch(4, 0.0), dl_patch(4, 0.0);
  for (int y = 0; y < 4; ++y)
    for (int c = 0; c < 4; ++c) {
      ig_patch[part.feature_of(y, c)] += ig.data[y * 4 + c];
      dl_patch[part.feature_of(y, c)] += dl.data[y * 4 + c];
    }
  for (int j = 0; j < 4; ++j) {
    CHECK(ig_patch[j] == doctest::Approx(dl_patch[j]).epsilon(1e-4));
    CHECK(ig_patch[j] == doctest::Approx(double(ks[j])).epsilon(1e-4));
  }
}

TEST_CASE("published maps are nonnegative and shaped like the input") {
  ReluNet model(50);
  const auto x = make_input({1, 2, 2}, 23);
  const auto part = PatchPartition::grid(2, 2, 2, 2);
  for (const auto& name : method_names()) {
    if (name == "grad_cam" || name == "guided_grad_cam")
      continue;  // ReluNet has no conv tap
    const auto map = run_method(name, model, x, 0, part, 1);
    CHECK(map.scores.shape == std::vector<int>{2, 2});
    for (float v : map.scores.data) {
      CHECK(v >= 0.0f);
      CHECK(std::isfinite(v));
    }
  }
  CHECK(baseline_battery().size() == 8);
}

TEST_CASE("unknown method names are rejected with the valid list") {
  ReluNet model(2);
  const auto x = make_input({1, 2, 2}, 1);
  CHECK_THROWS_WITH_AS(
      run_method("lime", model, x, 0, PatchPartition::grid(2, 2, 2, 2)),
      doctest::Contains("saliency"), std::invalid_argument);
}
