#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "doctest.h"
#include "xforge/optimizer.hpp"

using namespace xforge;
namespace fs = std::filesystem;

namespace {

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

AttributionMap wrap(Tensor scores) {
  AttributionMap m;
  m.scores = std::move(scores);
  m.method = "test";
  return m;
}

LinearModel toy_model(uint32_t seed = 3) {
  std::mt19937 rng(seed);
  return LinearModel({1, 8, 8}, random_tensor<float>({2, 64}, rng));
}

FaithfulnessConfig toy_faith_cfg() {
  FaithfulnessConfig cfg;
  cfg.partition = PatchPartition::grid(8, 8, 4, 4);
  cfg.subset_size = 5;
  cfg.draws = 24;
  cfg.seed = 7;
  return cfg;
}

}  // namespace

TEST_CASE("optimizer net output contracts") {
  const auto net = OptimizerNet::build(9, 4, 1);
  std::mt19937 rng(2);
  const auto in = random_tensor<float>({9, 8, 8}, rng, 0.0f, 1.0f);
  const auto pair = net.infer(in);
  CHECK(pair.lr.shape == std::vector<int>{8, 8});
  CHECK(pair.hr.shape == std::vector<int>{16, 16});
  for (float v : pair.lr.data) CHECK(v > 0.0f);
  for (float v : pair.hr.data) CHECK(v > 0.0f);

  const auto again = net.infer(in);
  CHECK(pair.lr.data == again.lr.data);
  CHECK(pair.hr.data == again.hr.data);

  const auto bad = random_tensor<float>({9, 6, 6}, rng);
  CHECK_THROWS_AS(net.infer(bad), std::invalid_argument);
  CHECK_THROWS_AS(net.infer(random_tensor<float>({3, 8, 8}, rng)),
                  std::invalid_argument);
}

TEST_CASE("optimizer net checkpoints round-trip bitwise") {
  const auto net = OptimizerNet::build(5, 4, 9);
  const auto path = (fs::temp_directory_path() / "xforge_opt.xftn").string();
  save_optimizer_net(net, path);
  const auto loaded = load_optimizer_net(path);
  std::mt19937 rng(4);
  const auto in = random_tensor<float>({5, 8, 8}, rng, 0.0f, 1.0f);
  CHECK(net.infer(in).lr.data == loaded.infer(in).lr.data);
  CHECK(net.infer(in).hr.data == loaded.infer(in).hr.data);
  fs::remove(path);
}

TEST_CASE("stacked inputs are per-channel normalized") {
  std::mt19937 rng(5);
  std::vector<AttributionMap> maps;
  for (int k = 0; k < 8; ++k)
    maps.push_back(wrap(random_tensor<float>({8, 8}, rng, 0.0f,
                                             10.0f * (k + 1))));
  maps[2].scores = Tensor({8, 8});  // all-zero channel stays zero
  const auto wet = wrap(random_tensor<float>({8, 8}, rng, 0.0f, 1.0f));
  const auto stacked = stack_inputs(maps, wet);
  CHECK(stacked.shape == std::vector<int>{9, 8, 8});
  for (int c = 0; c < 9; ++c) {
    float lo = 1e9f, hi = -1e9f;
    for (int i = 0; i < 64; ++i) {
      const float v = stacked.data[c * 64 + i];
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    CHECK(lo >= 0.0f);
    CHECK(hi <= 1.0f);
    if (c == 2)
      CHECK(hi == 0.0f);
    else
      CHECK(hi == doctest::Approx(1.0f));
  }
  auto bad = maps;
  bad[1].scores = Tensor({4, 4});
  CHECK_THROWS_AS(stack_inputs(bad, wet), std::invalid_argument);
}

TEST_CASE("bicubic upsampling preserves constants and smooth structure") {
  Tensor flat({4, 4});
  for (auto& v : flat.data) v = 0.7f;
  const auto up = upsample2x_reference(flat);
  CHECK(up.shape == std::vector<int>{8, 8});
  for (float v : up.data) CHECK(v == doctest::Approx(0.7f).epsilon(1e-6));

  // smooth map round trip: 2x up then 2x2-average down, within 5% RMS
  Tensor smooth({8, 8});
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x)
      smooth.data[y * 8 + x] =
          std::sin(0.4 * y) * std::cos(0.35 * x) * 0.5 + 0.5;
  const auto up2 = upsample2x_reference(smooth);
  double err = 0, ref = 0;
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      const double down = (up2.data[(2 * y) * 16 + 2 * x] +
                           up2.data[(2 * y) * 16 + 2 * x + 1] +
                           up2.data[(2 * y + 1) * 16 + 2 * x] +
                           up2.data[(2 * y + 1) * 16 + 2 * x + 1]) /
                          4.0;
      err += (down - smooth.data[y * 8 + x]) * (down - smooth.data[y * 8 + x]);
      ref += smooth.data[y * 8 + x] * smooth.data[y * 8 + x];
    }
  CHECK(std::sqrt(err / ref) < 0.05);
}

TEST_CASE("composite loss decomposes into its weighted terms") {
  const auto model = toy_model();
  std::mt19937 rng(8);
  const auto x = random_tensor<float>({1, 8, 8}, rng, 0.2f, 1.0f);
  const auto lr = random_tensor<float>({8, 8}, rng, 0.1f, 1.0f);
  const auto hr = random_tensor<float>({16, 16}, rng, 0.1f, 1.0f);
  const auto wet = wrap(random_tensor<float>({8, 8}, rng, 0.0f, 1.0f));
  LossWeights w;
  const auto terms =
      composite_loss(lr, hr, wet, model, x, 0, w, toy_faith_cfg());
  REQUIRE(terms.faith_defined);
  const double expected = -w.l1 * terms.faith + w.l2 * terms.compx +
                          w.l3 * (w.lambda1 * terms.sim_lr +
                                  w.lambda2 * terms.sim_hr);
  CHECK(terms.total == doctest::Approx(expected).epsilon(1e-6));
  CHECK(terms.faith >= -1.0);
  CHECK(terms.faith <= 1.0);
  CHECK(terms.compx >= 0.0);
}

TEST_CASE("similarity term vanishes when the map equals its target") {
  const auto model = toy_model();
  std::mt19937 rng(9);
  const auto x = random_tensor<float>({1, 8, 8}, rng, 0.2f, 1.0f);
  const auto wet = wrap(random_tensor<float>({8, 8}, rng, 0.1f, 1.0f));
  // lr equal to the normalized target -> SSIM identity
  Tensor lr = wet.scores;
  const auto [lo, hi] =
      std::minmax_element(lr.data.begin(), lr.data.end());
  const float l = *lo, span = *hi - *lo;
  for (auto& v : lr.data) v = (v - l) / span;
  const auto hr = upsample2x_reference(lr);
  const auto terms = composite_loss(lr, hr, wet, model, x, 0, LossWeights{},
                                    toy_faith_cfg());
  CHECK(std::fabs(terms.sim_lr) < 1e-5);
}

TEST_CASE("composite loss gradient matches finite differences") {
  const auto model = toy_model();
  std::mt19937 rng(10);
  const auto x = random_tensor<float>({1, 8, 8}, rng, 0.2f, 1.0f);
  const auto wet = wrap(random_tensor<float>({8, 8}, rng, 0.0f, 1.0f));
  const auto cfg = toy_faith_cfg();
  const auto pool = build_faith_pool(model, x, 0, cfg);
  std::vector<int> ids(pool.masks.size());
  std::iota(ids.begin(), ids.end(), 0);
  Tensor wet_norm = wet.scores;  // already in [0,1) up to scale; normalize
  {
    const auto [lo, hi] =
        std::minmax_element(wet_norm.data.begin(), wet_norm.data.end());
    const float l = *lo, span = *hi - *lo;
    for (auto& v : wet_norm.data) v = (v - l) / span;
  }
  const Tensor wet_up = upsample2x_reference(wet_norm);
  Tensor hr4 = upsample2x_reference(wet_norm);
  hr4.shape = {1, 1, 16, 16};
  const LossWeights w;

  auto eval = [&](const Tensor& lr_map) {
    Tape t;
    Tensor lr4 = lr_map;
    lr4.shape = {1, 1, 8, 8};
    LossTerms terms;
    record_composite_loss(t, t.leaf(lr4), t.leaf(hr4), wet_norm, wet_up, pool,
                          ids, cfg.partition, w, &terms);
    return static_cast<float>(terms.total);
  };

  const auto lr = random_tensor<float>({8, 8}, rng, 0.2f, 1.0f);
  Tape tape;
  Tensor lr4 = lr;
  lr4.shape = {1, 1, 8, 8};
  const int lr_node = tape.leaf(lr4);
  const int hr_node = tape.leaf(hr4);
  LossTerms terms;
  const int loss =
      record_composite_loss(tape, lr_node, hr_node, wet_norm, wet_up, pool,
                            ids, cfg.partition, w, &terms);
  const auto grads = tape.backward(loss);
  const auto fd = finite_difference_gradient<float>(eval, lr, 1e-3f);
  for (int i = 0; i < 64; ++i) {
    const double a = grads[lr_node].data[i], b = fd.data[i];
    const double rel =
        std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), 1.0});
    CHECK(rel < 1e-3);
  }
}

TEST_CASE("frozen perturbation pools are deterministic and finite") {
  const auto model = toy_model();
  std::mt19937 rng(11);
  const auto x = random_tensor<float>({1, 8, 8}, rng, 0.0f, 1.0f);
  const auto cfg = toy_faith_cfg();
  const auto a = build_faith_pool(model, x, 1, cfg);
  const auto b = build_faith_pool(model, x, 1, cfg);
  REQUIRE(a.masks.size() == 24);
  for (size_t i = 0; i < a.masks.size(); ++i) {
    CHECK(a.masks[i].data == b.masks[i].data);
    CHECK(a.deltas[i] == b.deltas[i]);
    CHECK(std::isfinite(a.deltas[i]));
    float on = 0;
    for (float v : a.masks[i].data) on += v;
    CHECK(on == doctest::Approx(5 * 4.0f));  // 5 features x 2x2... patch area 4
  }
}

namespace {

TrainInstance toy_instance(const LinearModel& model, uint32_t seed) {
  std::mt19937 rng(seed);
  const auto x = random_tensor<float>({1, 8, 8}, rng, 0.2f, 1.0f);
  std::vector<AttributionMap> maps;
  for (int k = 0; k < 2; ++k)
    maps.push_back(wrap(random_tensor<float>({8, 8}, rng, 0.0f, 1.0f)));
  const auto wet = wrap(random_tensor<float>({8, 8}, rng, 0.1f, 1.0f));
  return prepare_instance(model, x, static_cast<int>(seed % 2), maps, wet,
                          toy_faith_cfg(), static_cast<int>(seed));
}

}  // namespace

TEST_CASE("similarity-only training fits the weighted-average target") {
  const auto model = toy_model();
  auto net = OptimizerNet::build(3, 4, 5);
  const auto inst = toy_instance(model, 1);
  LossWeights w;
  w.l1 = 0.0f;
  w.l2 = 0.0f;
  w.l3 = 1.0f;
  OptimizerSchedule sched;
  sched.initial_lr = 5e-3f;
  sched.max_epochs = 120;
  sched.patience = 120;
  sched.patience_after = 120;
  sched.seed = 2;
  const auto run = train_optimizer(net, {inst}, {inst},
                                   toy_faith_cfg().partition, w, sched);
  CHECK(!run.val_loss.empty());
  const auto pair = net.infer(inst.stacked);
  CHECK(ssim(pair.lr, inst.wet_norm) >= 0.95);
}

TEST_CASE("complexity-only training concentrates the map") {
  const auto model = toy_model();
  auto net = OptimizerNet::build(3, 4, 6);
  const auto inst = toy_instance(model, 4);
  const auto part = toy_faith_cfg().partition;
  const double before = complexity(net.infer(inst.stacked).lr, part);
  LossWeights w;
  w.l1 = 0.0f;
  w.l2 = 1.0f;
  w.l3 = 0.0f;
  OptimizerSchedule sched;
  sched.initial_lr = 1e-2f;
  sched.max_epochs = 60;
  sched.patience = 60;
  sched.patience_after = 60;
  const auto run = train_optimizer(net, {inst}, {inst}, part, w, sched);
  const double after = complexity(net.infer(inst.stacked).lr, part);
  CHECK(after < before);
  // validation loss (pure complexity) is nonincreasing overall
  CHECK(run.val_loss.back() <= run.val_loss.front());
}

TEST_CASE("training records per-class curves and keeps the best state") {
  const auto model = toy_model();
  auto net = OptimizerNet::build(3, 4, 8);
  std::vector<TrainInstance> train = {toy_instance(model, 2),
                                      toy_instance(model, 3)};
  std::vector<TrainInstance> val = {toy_instance(model, 6),
                                    toy_instance(model, 7)};
  OptimizerSchedule sched;
  sched.initial_lr = 5e-3f;
  sched.max_epochs = 8;
  sched.patience = 8;
  sched.patience_after = 0;
  const auto run = train_optimizer(net, train, val,
                                   toy_faith_cfg().partition, LossWeights{},
                                   sched);
  CHECK(run.class_ids.size() == 2);
  for (const auto& curve : run.class_val_loss)
    CHECK(curve.size() == run.val_loss.size());
  double best = 1e300;
  for (double v : run.val_loss) best = std::min(best, v);
  CHECK(run.best_val_loss == doctest::Approx(best));

  OptimizerSchedule bad = sched;
  bad.patience = 99;
  CHECK_THROWS_AS(train_optimizer(net, train, val, toy_faith_cfg().partition,
                                  LossWeights{}, bad),
                  std::invalid_argument);
}
