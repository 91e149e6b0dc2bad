// Acceptance suite: eight end-to-end criteria, one pass/fail line each.
// Exit status is the number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include "grad_check.hpp"
#include "xforge/fusion.hpp"
#include "xforge/io.hpp"
#include "xforge/optimizer.hpp"

using namespace xforge;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

void report(int n, const std::string& title, const Outcome& o) {
  std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << "criterion " << n << " ("
            << title << "): " << o.detail << "\n"
            << std::flush;
}

// ---- criterion 1: randomized finite-difference suite over every op ------

Outcome criterion_gradients() {
  const auto t0 = Clock::now();
  std::mt19937 rng(7);
  double worst = 0;
  std::string worst_op = "-";
  for (const auto& c : testing::all_op_cases())
    for (int trial = 0; trial < 100; ++trial) {
      const double err = testing::grad_check(c, rng);
      if (err > worst) {
        worst = err;
        worst_op = c.name;
      }
    }
  const double secs = seconds_since(t0);
  std::ostringstream os;
  os << "max relative error " << worst << " (" << worst_op << "), "
     << testing::all_op_cases().size() << " ops x 100 trials in " << secs
     << "s";
  return {worst <= 1e-4 && secs <= 120.0, os.str()};
}

// ---- shared toy classifier --------------------------------------------

Classifier train_toy(const DatasetSplit& split, int base_width, uint32_t seed,
                     double* test_acc) {
  ClassifierConfig cc;
  cc.input_shape = split.train.at(0).pixels.shape;
  cc.classes = static_cast<int>(split.class_names.size());
  cc.base_width = base_width;
  cc.residual_blocks = 2;
  auto model = Classifier::build(cc, seed);
  TrainSchedule ts;
  ts.initial_lr = 1e-2f;
  ts.max_epochs = 30;
  ts.hold_epochs = 30;
  ts.patience = 30;
  ts.batch_size = 32;
  ts.seed = seed;
  train_classifier(model, split, ts, AugmentConfig{});
  if (test_acc) *test_acc = evaluate_accuracy(model, split.test);
  return model;
}

// ---- criterion 2: attribution axioms ----------------------------------

Outcome criterion_axioms() {
  ShapesConfig sc;
  sc.image_size = 16;
  sc.class_count = 2;
  sc.per_class = 60;  // leaves >= 20 test instances after the 60/20/20 split
  sc.seed = 6;
  const auto split = generate_shapes(sc);
  double acc = 0;
  const auto model = train_toy(split, 4, 6, &acc);

  const Tensor zero({1, 16, 16});
  double worst_ig = 0, worst_dl = 0;
  for (int i = 0; i < 20; ++i) {
    const auto& x = split.test.at(i).pixels;
    const int cls = model.predict_class(x);
    const double delta =
        eval_class_score(model, x, cls) - eval_class_score(model, zero, cls);
    const double denom = std::max(std::fabs(delta), 1e-3);

    // the path integrand of a relu net is piecewise constant, so the left
    // Riemann sum converges like 1/steps; 4096 leaves a ~3x margin on 1e-3
    const auto ig = integrated_gradients_raw(model, x, cls, 4096, zero);
    double ig_sum = 0;
    for (float v : ig.data) ig_sum += v;
    worst_ig = std::max(worst_ig, std::fabs(ig_sum - delta) / denom);

    const auto dl = deeplift_rescale_raw(model, x, cls, zero);
    double dl_sum = 0;
    for (float v : dl.data) dl_sum += v;
    worst_dl = std::max(worst_dl, std::fabs(dl_sum - delta) / denom);
  }

  // exact Shapley values on a d = 8 patch model, brute force over 2^8 masks
  const auto part = PatchPartition::grid(8, 8, 2, 4);
  std::mt19937 rng(11);
  ClassifierConfig cc;
  cc.input_shape = {1, 8, 8};
  cc.classes = 2;
  cc.base_width = 4;
  cc.residual_blocks = 1;
  const auto small = Classifier::build(cc, 11);
  const auto x = random_tensor<float>({1, 8, 8}, rng, 0.0f, 1.0f);
  const int cls = 0;
  const int d = part.feature_count();

  std::vector<double> v(1 << d, 0.0);
  for (int mask = 0; mask < (1 << d); ++mask) {
    Tensor m = x;
    for (int y = 0; y < 8; ++y)
      for (int c = 0; c < 8; ++c)
        if (!(mask >> part.feature_of(y, c) & 1))
          m.data[y * 8 + c] = 0.0f;
    v[mask] = eval_class_score(small, m, cls);
  }
  std::vector<double> fact(d + 1, 1.0);
  for (int i = 1; i <= d; ++i) fact[i] = fact[i - 1] * i;
  std::vector<double> phi_ref(d, 0.0);
  for (int i = 0; i < d; ++i)
    for (int mask = 0; mask < (1 << d); ++mask) {
      if (mask >> i & 1) continue;
      const int s = __builtin_popcount(static_cast<unsigned>(mask));
      const double w = fact[s] * fact[d - s - 1] / fact[d];
      phi_ref[i] += w * (v[mask | (1 << i)] - v[mask]);
    }
  const auto phi =
      kernel_shap_values(small, x, cls, part, (1 << d) - 2, 0.0f, 0);
  double worst_shap = 0;
  for (int i = 0; i < d; ++i)
    worst_shap = std::max(worst_shap, std::fabs(phi[i] - phi_ref[i]));

  std::ostringstream os;
  os << "toy accuracy " << acc << ", completeness rel " << worst_ig
     << ", summation-to-delta rel " << worst_dl << ", exact Shapley dev "
     << worst_shap;
  return {worst_ig <= 1e-3 && worst_dl <= 1e-3 && worst_shap <= 1e-6,
          os.str()};
}

// ---- criterion 3: metric identities -----------------------------------

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

Outcome criterion_metric_identities() {
  const auto part = PatchPartition::grid(8, 8, 8, 8);  // d = 64
  Tensor onehot({8, 8});
  onehot.data[13] = 1.0f;
  const double h0 = complexity(onehot, part);

  Tensor uniform({8, 8});
  for (auto& v : uniform.data) v = 0.25f;
  const double hu = std::fabs(complexity(uniform, part) - std::log(64.0));

  std::mt19937 rng(2);
  const auto img = random_tensor<float>({16, 16}, rng, 0.0f, 1.0f);
  const double s_id = std::fabs(ssim(img, img) - 1.0);

  double worst_faith = 0;
  for (uint32_t seed = 0; seed < 10; ++seed) {
    std::mt19937 r2(seed + 100);
    const auto w = random_tensor<float>({1, 64}, r2, -1.0f, 1.0f);
    const LinearModel lin({1, 8, 8}, w);
    const auto x = random_tensor<float>({1, 8, 8}, r2, 0.5f, 1.5f);
    AttributionMap exact;
    exact.scores = Tensor({8, 8});
    for (int i = 0; i < 64; ++i)
      exact.scores.data[i] = w.data[i] * x.data[i];
    FaithfulnessConfig cfg;
    cfg.partition = PatchPartition::grid(8, 8, 4, 4);
    cfg.draws = 70;
    cfg.seed = seed;
    const auto score = faithfulness(lin, exact, x, 0, cfg);
    if (!score.defined) return {false, "exact-attribution score undefined"};
    worst_faith = std::max(worst_faith, std::fabs(score.value - 1.0));
  }
  std::ostringstream os;
  os << "complexity(one-hot) " << h0 << ", |uniform - ln 64| " << hu
     << ", |ssim(x,x)-1| " << s_id << ", exact-attribution deviation "
     << worst_faith;
  return {h0 == 0.0 && hu <= 1e-6 && s_id <= 1e-9 && worst_faith <= 1e-6,
          os.str()};
}

// ---- criteria 4 + 5: end-to-end dominance and the statistical layer ----

struct SeedResult {
  bool trained = false, dominated = false;
  double test_acc = 0, opt_faith = 0, best_baseline = 0;
  double opt_compx = 0, wet_compx = 0;
  std::string best_name;
  std::map<std::string, std::vector<double>> faith_groups;
};

WeightVector calibrate_on_val(const Classifier& model,
                              const DatasetSplit& split,
                              const FaithfulnessConfig& faith_cfg,
                              const std::vector<Tensor>& refs,
                              uint32_t seed) {
  const auto cal = CalibrationSet::draw(
      static_cast<int>(split.val.size()), 10, seed);
  const auto& methods = baseline_battery();
  std::vector<double> avg_f(methods.size(), 0.0), avg_c(methods.size(), 0.0);
  for (size_t mi = 0; mi < methods.size(); ++mi) {
    int defined = 0;
    for (int idx : cal.indices) {
      const auto& x = split.val[idx].pixels;
      const int cls = model.predict_class(x);
      const auto map = run_method(methods[mi], model, x, cls,
                                  faith_cfg.partition, seed, 64, 0, &refs);
      const auto f = faithfulness(model, map, x, cls, faith_cfg);
      if (f.defined) avg_f[mi] += f.value, ++defined;
      avg_c[mi] += complexity(map.scores, faith_cfg.partition);
    }
    if (defined > 0) avg_f[mi] /= defined;
    avg_c[mi] /= static_cast<double>(cal.indices.size());
  }
  return calibrate_weights(methods, avg_f, avg_c);
}

SeedResult run_pipeline(uint32_t seed) {
  SeedResult out;
  ShapesConfig sc;
  sc.image_size = 32;
  sc.class_count = 3;
  sc.per_class = 84;  // 60/20/20 split leaves >= 50 test instances
  sc.seed = seed;
  const auto split = generate_shapes(sc);
  // width 4 keeps the 10-map x 51-instance metric pass affordable on one
  // core; the task is easy enough that accuracy saturates anyway
  const auto model = train_toy(split, 4, seed, &out.test_acc);
  out.trained = out.test_acc >= 0.90;
  if (!out.trained) return out;

  FaithfulnessConfig faith_cfg;
  faith_cfg.partition = PatchPartition::grid(32, 32, 8, 8);
  faith_cfg.draws = 70;
  faith_cfg.seed = seed;
  std::vector<Tensor> refs;
  for (int i = 0; i < 8; ++i) refs.push_back(split.train[i].pixels);
  const auto weights = calibrate_on_val(model, split, faith_cfg, refs, seed);

  // train the optimizer on fused explanations of training instances
  auto build_inst = [&](const Tensor& x, int id) {
    const int cls = model.predict_class(x);
    std::vector<AttributionMap> maps;
    for (const auto& m : weights.methods)
      maps.push_back(
          run_method(m, model, x, cls, faith_cfg.partition, seed, 64, 0,
                     &refs));
    const auto wet = weighted_average(maps, weights);
    return prepare_instance(model, x, cls, maps, wet, faith_cfg, id);
  };
  std::vector<TrainInstance> train, val;
  for (int i = 0; i < 24; ++i)
    train.push_back(build_inst(split.train[i].pixels, i));
  for (int i = 0; i < 8; ++i) val.push_back(build_inst(split.val[i].pixels, i));

  auto net = OptimizerNet::build(
      static_cast<int>(weights.methods.size()) + 1, 8, seed);
  // Two-phase protocol. Phase 1 trains the similarity term alone (l1 = l2 =
  // 0) so the net first reproduces the fused map; phase 2 fine-tunes on the
  // composite loss with the complexity weight rebalanced for this feature
  // count (d = 64): at desk scale the entropy term's range dwarfs the
  // correlation term's, so the published l2 would let it swallow the
  // faithfulness signal and collapse the map to a near-one-hot spike.
  OptimizerSchedule warm;
  warm.initial_lr = 5e-3f;
  warm.max_epochs = 40;
  warm.patience = 40;
  warm.patience_after = 40;
  warm.seed = seed;
  LossWeights sim_only;
  sim_only.l1 = 0.0f;
  sim_only.l2 = 0.0f;
  sim_only.l3 = 1.0f;
  train_optimizer(net, train, val, faith_cfg.partition, sim_only, warm);
  OptimizerSchedule sched;
  sched.initial_lr = 5e-4f;
  sched.max_epochs = 40;
  sched.patience = 40;
  sched.patience_after = 40;
  sched.faith_draws_per_step = 70;
  sched.seed = seed + 17;
  LossWeights tuned;
  tuned.l2 = 0.02f;  // entropy weight rescaled for d = 64
  train_optimizer(net, train, val, faith_cfg.partition, tuned, sched);

  // score all maps on >= 50 unseen test instances
  const int n_test = std::min<int>(51, static_cast<int>(split.test.size()));
  std::map<std::string, double> sum_f, sum_c;
  std::map<std::string, int> cnt_f;
  for (int i = 0; i < n_test; ++i) {
    const auto& x = split.test[i].pixels;
    const int cls = model.predict_class(x);
    FaithfulnessConfig cfg = faith_cfg;
    cfg.seed = seed * 1000 + static_cast<uint32_t>(i);
    std::vector<AttributionMap> maps;
    for (const auto& m : weights.methods)
      maps.push_back(
          run_method(m, model, x, cls, cfg.partition, seed, 64, 0, &refs));
    const auto wet = weighted_average(maps, weights);
    AttributionMap opt;
    opt.scores = explain_optimal(net, stack_inputs(maps, wet)).lr;
    opt.method = "optimizer";
    opt.target_class = cls;

    auto score = [&](const AttributionMap& map) {
      const auto f = faithfulness(model, map, x, cls, cfg);
      if (f.defined) {
        sum_f[map.method] += f.value;
        ++cnt_f[map.method];
        out.faith_groups[map.method].push_back(f.value);
      }
      sum_c[map.method] += complexity(map.scores, cfg.partition);
    };
    for (const auto& m : maps) score(m);
    score(wet);
    score(opt);
  }

  out.opt_faith = sum_f["optimizer"] / std::max(cnt_f["optimizer"], 1);
  out.best_baseline = -2.0;
  for (const auto& m : weights.methods) {
    const double mean = sum_f[m] / std::max(cnt_f[m], 1);
    if (mean > out.best_baseline) {
      out.best_baseline = mean;
      out.best_name = m;
    }
  }
  out.opt_compx = sum_c["optimizer"] / n_test;
  out.wet_compx = sum_c["weighted_average"] / n_test;
  out.dominated =
      out.opt_faith >= out.best_baseline && out.opt_compx <= out.wet_compx;
  return out;
}

Outcome criterion_dominance(std::vector<SeedResult>* results) {
  const uint32_t seeds[3] = {1, 2, 3};
  int passed = 0, attempted = 0;
  std::ostringstream os;
  for (uint32_t s : seeds) {
    auto r = run_pipeline(s);
    ++attempted;
    if (r.trained && r.dominated) ++passed;
    os << "seed " << s << ": acc " << r.test_acc << ", optimizer faith "
       << r.opt_faith << " vs best baseline " << r.best_baseline << " ("
       << r.best_name << "), complexity " << r.opt_compx << " vs fused "
       << r.wet_compx << (r.trained && r.dominated ? " ok" : " MISS") << "; ";
    results->push_back(std::move(r));
    if (passed >= 2 || passed + (3 - attempted) < 2) break;
  }
  os << passed << "/" << attempted << " seeds dominated";
  return {passed >= 2, os.str()};
}

Outcome criterion_statistics(const std::vector<SeedResult>& results) {
  const auto id = kruskal_wallis({{1, 2, 3}, {1, 2, 3}, {1, 2, 3}});
  const bool identical_ok = id.H == 0.0 && id.p == 1.0;

  const SeedResult* best = nullptr;
  for (const auto& r : results)
    if (r.trained && r.dominated) {
      best = &r;
      break;
    }
  if (!best) return {identical_ok, "no dominated seed to test against"};

  std::vector<std::vector<double>> groups;
  for (const auto& [name, g] : best->faith_groups)
    if (g.size() >= 2) groups.push_back(g);
  const auto kw = kruskal_wallis(groups);
  const double margin = best->opt_faith - best->best_baseline;
  const bool visible = margin > 0.05;
  std::ostringstream os;
  os << "H " << kw.H << ", p " << kw.p << " over " << groups.size()
     << " groups (margin " << margin << (visible ? ", visible" : ", slim")
     << "); identical groups H " << id.H << ", p " << id.p;
  return {identical_ok && (!visible || kw.p < 0.01), os.str()};
}

// ---- criterion 6: fusion monotonicity ---------------------------------

Outcome criterion_fusion() {
  const std::vector<std::string> names = {"a", "b", "c", "d"};
  const auto w = calibrate_weights(names, {0.9, 0.3, 0.2, 0.4},
                                   {1.0, 3.0, 3.5, 2.8});
  size_t argmax = 0;
  for (size_t i = 1; i < w.weights.size(); ++i)
    if (w.weights[i] > w.weights[argmax]) argmax = i;
  std::ostringstream os;
  os << "dominating method weight " << w.weights[0] << ", max elsewhere "
     << w.weights[argmax == 0 ? 1 : argmax];
  return {argmax == 0, os.str()};
}

// ---- criterion 7: format round-trips ----------------------------------

Outcome criterion_roundtrips() {
  std::mt19937 rng(4);
  std::vector<uint8_t> rec(kCifarRecordBytes);
  for (auto& b : rec) b = static_cast<uint8_t>(rng());
  rec[0] = 3;  // label byte
  const auto parsed = parse_cifar_record(rec.data());
  const bool cifar_ok = serialize_cifar_record(parsed) == rec;

  AttributionMap map;
  map.scores = random_tensor<float>({32, 32}, rng, 0.0f, 2.0f);
  map.method = "saliency";
  map.target_class = 1;
  const auto bytes = serialize_map(map);
  const auto back = parse_map(bytes);
  const bool map_ok = back.scores.data == map.scores.data &&
                      serialize_map(back) == bytes;

  ClassifierConfig cc;
  cc.input_shape = {1, 16, 16};
  cc.classes = 2;
  cc.base_width = 4;
  const auto model = Classifier::build(cc, 9);
  Checkpoint ckpt;
  ckpt.config = cc;
  for (size_t i = 0; i < model.params().size(); ++i)
    ckpt.params.emplace_back(model.param_names()[i], model.params()[i]);
  const auto path = (fs::temp_directory_path() / "acc_ckpt.xftn").string();
  save_checkpoint(ckpt, path);
  const auto loaded = load_checkpoint(path);
  bool ckpt_ok = loaded.params.size() == ckpt.params.size();
  for (size_t i = 0; ckpt_ok && i < ckpt.params.size(); ++i)
    ckpt_ok = loaded.params[i].second.data == ckpt.params[i].second.data;
  fs::remove(path);

  std::ostringstream os;
  os << "record " << (cifar_ok ? "byte-identical" : "MISMATCH") << ", map "
     << (map_ok ? "bitwise" : "MISMATCH") << ", checkpoint "
     << (ckpt_ok ? "bitwise" : "MISMATCH");
  return {cifar_ok && map_ok && ckpt_ok, os.str()};
}

// ---- criterion 8: high-resolution head contract ------------------------

Outcome criterion_hr_head() {
  std::mt19937 rng(12);
  const auto net0 = OptimizerNet::build(3, 4, 12);
  const auto probe = net0.infer(random_tensor<float>({3, 16, 16}, rng));
  const bool shape_ok = probe.hr.shape == std::vector<int>{32, 32};

  const LinearModel model({1, 8, 8},
                          random_tensor<float>({2, 64}, rng, -1.0f, 1.0f));
  const auto x = random_tensor<float>({1, 8, 8}, rng, 0.2f, 1.0f);
  std::vector<AttributionMap> maps;
  for (int k = 0; k < 2; ++k) {
    AttributionMap m;
    m.scores = random_tensor<float>({8, 8}, rng, 0.0f, 1.0f);
    m.method = "m" + std::to_string(k);
    maps.push_back(std::move(m));
  }
  AttributionMap wet;
  wet.scores = random_tensor<float>({8, 8}, rng, 0.1f, 1.0f);
  wet.method = "weighted_average";
  FaithfulnessConfig cfg;
  cfg.partition = PatchPartition::grid(8, 8, 4, 4);
  cfg.draws = 24;
  cfg.subset_size = 5;
  cfg.seed = 7;
  const auto inst = prepare_instance(model, x, 0, maps, wet, cfg, 0);

  auto net = OptimizerNet::build(3, 4, 5);
  LossWeights w;
  w.l1 = 0.0f;
  w.l2 = 0.0f;
  w.l3 = 1.0f;
  OptimizerSchedule sched;
  sched.initial_lr = 5e-3f;
  sched.max_epochs = 160;
  sched.patience = 160;
  sched.patience_after = 160;
  sched.seed = 2;
  train_optimizer(net, {inst}, {inst}, cfg.partition, w, sched);
  const auto pair = net.infer(inst.stacked);
  const double s_lr = ssim(pair.lr, inst.wet_norm);
  const double s_hr = ssim(pair.hr, inst.wet_up_norm);
  std::ostringstream os;
  os << "hr 2x " << (shape_ok ? "exact" : "WRONG") << ", trained ssim lr "
     << s_lr << ", hr " << s_hr;
  return {shape_ok && s_hr >= 0.95, os.str()};
}

}  // namespace

int main() {
  int failures = 0;
  const auto t0 = Clock::now();
  auto run = [&](int n, const std::string& title, auto&& make) {
    Outcome o;
    try {
      o = make();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    report(n, title, o);
    if (!o.pass) ++failures;
  };
  std::vector<SeedResult> results;
  run(1, "gradient suite", [] { return criterion_gradients(); });
  run(2, "attribution axioms", [] { return criterion_axioms(); });
  run(3, "metric identities", [] { return criterion_metric_identities(); });
  run(4, "end-to-end dominance",
      [&] { return criterion_dominance(&results); });
  run(5, "statistical layer", [&] { return criterion_statistics(results); });
  run(6, "fusion monotonicity", [] { return criterion_fusion(); });
  run(7, "format round-trips", [] { return criterion_roundtrips(); });
  run(8, "high-resolution head", [] { return criterion_hr_head(); });
  std::cout << failures << " of 8 criteria failed ("
            << seconds_since(t0) << "s total)\n";
  return failures;
}
