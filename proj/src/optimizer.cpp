#include "xforge/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include "xforge/adam.hpp"
#include "xforge/checkpoint.hpp"

namespace xforge {

namespace {

Tensor he_init(std::vector<int> shape, int fan_in, std::mt19937& rng) {
  std::normal_distribution<float> g(0.0f,
                                    std::sqrt(2.0f / static_cast<float>(fan_in)));
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = g(rng);
  return t;
}

Tensor min_max_norm(const Tensor& t) {
  const auto [lo, hi] = std::minmax_element(t.data.begin(), t.data.end());
  Tensor out = t;
  if (*hi - *lo <= 0) {
    std::fill(out.data.begin(), out.data.end(), 0.0f);
    return out;
  }
  for (auto& v : out.data) v = (v - *lo) / (*hi - *lo);
  return out;
}

}  // namespace

OptimizerNet OptimizerNet::build(int in_channels, int base_width,
                                 uint32_t seed) {
  if (in_channels < 1)
    throw std::invalid_argument("optimizer net needs >= 1 input channel");
  if (base_width < 2)
    throw std::invalid_argument("optimizer net base width must be >= 2");
  OptimizerNet net;
  net.in_channels_ = in_channels;
  net.base_width_ = base_width;
  std::mt19937 rng(seed);
  const int w = base_width;
  auto add = [&](const std::string& name, Tensor t) {
    net.names_.push_back(name);
    net.params_.push_back(std::move(t));
  };
  add("enc1/k", he_init({w, in_channels, 3, 3}, in_channels * 9, rng));
  add("enc1/b", Tensor({w}));
  add("enc2/k", he_init({2 * w, w, 3, 3}, w * 9, rng));
  add("enc2/b", Tensor({2 * w}));
  add("bott/k", he_init({4 * w, 2 * w, 3, 3}, 2 * w * 9, rng));
  add("bott/b", Tensor({4 * w}));
  add("dec2/k", he_init({2 * w, 6 * w, 3, 3}, 6 * w * 9, rng));
  add("dec2/b", Tensor({2 * w}));
  add("dec1/k", he_init({w, 3 * w, 3, 3}, 3 * w * 9, rng));
  add("dec1/b", Tensor({w}));
  add("lr_head/k", he_init({1, w, 1, 1}, w, rng));
  add("lr_head/b", Tensor({1}));
  add("hr_head/k", he_init({w, 1, 2, 2}, 4 * w, rng));
  add("hr_head/b", Tensor({1}));
  return net;
}

std::pair<int, int> OptimizerNet::record_forward_params(
    Tape& tape, int input, std::vector<int>& param_nodes) const {
  const auto& s = tape.value(input).shape;
  if (s.size() != 4 || s[1] != in_channels_)
    throw std::invalid_argument("optimizer net input " + shape_str(s) +
                                " does not carry " +
                                std::to_string(in_channels_) + " channels");
  if (s[2] % 4 != 0 || s[3] % 4 != 0 || s[2] < 4 || s[3] < 4)
    throw std::invalid_argument("optimizer net resolution " + shape_str(s) +
                                " must be divisible by 4");
  param_nodes.clear();
  for (const auto& p : params_) param_nodes.push_back(tape.leaf(p));
  size_t pi = 0;
  auto next = [&] { return param_nodes[pi++]; };
  auto conv_relu = [&](int x) {
    return tape.apply(OpKind::relu,
                      {tape.apply(OpKind::conv2d, {x, next(), next()})});
  };
  const int e1 = conv_relu(input);
  const int e2 = conv_relu(tape.apply(OpKind::avgpool, {e1},
                                      OpParams{.window = 2}));
  const int bott = conv_relu(tape.apply(OpKind::avgpool, {e2},
                                        OpParams{.window = 2}));
  int x = tape.apply(OpKind::bilinear_up2x, {bott});
  x = conv_relu(tape.apply(OpKind::concat_channels, {x, e2}));
  x = tape.apply(OpKind::bilinear_up2x, {x});
  x = conv_relu(tape.apply(OpKind::concat_channels, {x, e1}));
  const int lr = tape.apply(
      OpKind::softplus, {tape.apply(OpKind::conv2d, {x, next(), next()})});
  const int hr = tape.apply(
      OpKind::softplus, {tape.apply(OpKind::tconv2d, {x, next(), next()})});
  return {lr, hr};
}

std::pair<int, int> OptimizerNet::record_forward(Tape& tape, int input) const {
  std::vector<int> unused;
  return record_forward_params(tape, input, unused);
}

ExplanationPair OptimizerNet::infer(const Tensor& stacked) const {
  if (stacked.rank() != 3)
    throw std::invalid_argument("optimizer net input must be (C,H,W)");
  Tensor batch = stacked;
  batch.shape.insert(batch.shape.begin(), 1);
  Tape tape;
  const auto [lr, hr] = record_forward(tape, tape.leaf(batch));
  ExplanationPair out;
  out.lr = Tensor({stacked.shape[1], stacked.shape[2]});
  out.lr.data = tape.value(lr).data;
  out.hr = Tensor({2 * stacked.shape[1], 2 * stacked.shape[2]});
  out.hr.data = tape.value(hr).data;
  return out;
}

void save_optimizer_net(const OptimizerNet& net, const std::string& path) {
  TensorFile f;
  Tensor cfg({2});
  cfg.at(0) = static_cast<float>(net.in_channels());
  cfg.at(1) = static_cast<float>(net.base_width());
  f.put("meta/config", cfg);
  for (size_t i = 0; i < net.params().size(); ++i)
    f.put("param/" + net.param_names()[i], net.params()[i]);
  save_tensor_file(f, path);
}

OptimizerNet load_optimizer_net(const std::string& path) {
  const auto f = load_tensor_file(path);
  const auto& cfg = f.get("meta/config");
  OptimizerNet net = OptimizerNet::build(static_cast<int>(cfg.at(0)),
                                         static_cast<int>(cfg.at(1)));
  for (size_t i = 0; i < net.params().size(); ++i) {
    const auto& stored = f.get("param/" + net.param_names()[i]);
    if (stored.shape != net.params()[i].shape)
      throw std::runtime_error("optimizer checkpoint: parameter " +
                               net.param_names()[i] + " shape mismatch");
    net.params()[i] = stored;
  }
  return net;
}

Tensor stack_inputs(const std::vector<AttributionMap>& maps,
                    const AttributionMap& wet) {
  if (maps.empty()) throw std::invalid_argument("stack_inputs: no maps");
  const auto& shape = wet.scores.shape;
  Tensor out({static_cast<int>(maps.size()) + 1, shape[0], shape[1]});
  const int64_t plane = wet.scores.size();
  for (size_t m = 0; m <= maps.size(); ++m) {
    const Tensor& src = m < maps.size() ? maps[m].scores : wet.scores;
    if (src.shape != shape)
      throw std::invalid_argument("stack_inputs: map " +
                                  (m < maps.size() ? maps[m].method : "fused") +
                                  " shape " + shape_str(src.shape) +
                                  " differs from " + shape_str(shape));
    const Tensor norm = min_max_norm(src);
    std::copy(norm.data.begin(), norm.data.end(),
              out.data.begin() + static_cast<int64_t>(m) * plane);
  }
  return out;
}

Tensor upsample2x_reference(const Tensor& map) {
  if (map.rank() != 2)
    throw std::invalid_argument("upsample expects a (H,W) map");
  const int H = map.shape[0], W = map.shape[1];
  Tensor out({2 * H, 2 * W});
  auto cubic = [](float t) {
    // Catmull-Rom kernel, a = -0.5
    const float at = std::fabs(t);
    if (at <= 1) return 1.5f * at * at * at - 2.5f * at * at + 1.0f;
    if (at < 2) return -0.5f * at * at * at + 2.5f * at * at - 4.0f * at + 2.0f;
    return 0.0f;
  };
  auto sample = [&](int y, int x) {
    return map.data[std::clamp(y, 0, H - 1) * W + std::clamp(x, 0, W - 1)];
  };
  for (int oy = 0; oy < 2 * H; ++oy)
    for (int ox = 0; ox < 2 * W; ++ox) {
      const float sy = (oy + 0.5f) / 2.0f - 0.5f;
      const float sx = (ox + 0.5f) / 2.0f - 0.5f;
      const int y0 = static_cast<int>(std::floor(sy));
      const int x0 = static_cast<int>(std::floor(sx));
      float acc = 0;
      for (int dy = -1; dy <= 2; ++dy) {
        const float wy = cubic(sy - (y0 + dy));
        if (wy == 0) continue;
        for (int dx = -1; dx <= 2; ++dx) {
          const float wx = cubic(sx - (x0 + dx));
          if (wx == 0) continue;
          acc += wy * wx * sample(y0 + dy, x0 + dx);
        }
      }
      out.data[oy * 2 * W + ox] = acc;
    }
  return out;
}

FaithPool build_faith_pool(const DifferentiableModel& model, const Tensor& x,
                           int cls, const FaithfulnessConfig& cfg) {
  const auto& part = cfg.partition;
  const int d = part.feature_count();
  const int k = cfg.subset_size > 0
                    ? cfg.subset_size
                    : static_cast<int>(std::lround(0.25 * d));
  if (k < 1 || k >= d)
    throw std::invalid_argument("faith pool: subset size out of range");
  if (x.shape[1] != part.height || x.shape[2] != part.width)
    throw std::invalid_argument("faith pool: input does not match partition");
  const double base = eval_class_score(model, x, cls);
  std::mt19937 rng(cfg.seed);
  std::vector<int> order(d);
  std::iota(order.begin(), order.end(), 0);
  FaithPool pool;
  Tensor pert = x;
  const int C = x.shape[0];
  for (int t = 0; t < cfg.draws; ++t) {
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<char> on(d, 0);
    for (int j = 0; j < k; ++j) on[order[j]] = 1;
    Tensor mask({part.height, part.width});
    pert.data = x.data;
    for (int y = 0; y < part.height; ++y)
      for (int c = 0; c < part.width; ++c)
        if (on[part.feature_of(y, c)]) {
          mask.data[y * part.width + c] = 1.0f;
          for (int ch = 0; ch < C; ++ch)
            pert.data[(ch * part.height + y) * part.width + c] =
                cfg.baseline_value;
        }
    pool.masks.push_back(std::move(mask));
    pool.deltas.push_back(
        static_cast<float>(base - eval_class_score(model, pert, cls)));
  }
  return pool;
}

namespace {

int const_scalar(Tape& tape, float v) {
  Tensor t({1});
  t.at(0) = v;
  return tape.leaf(t);
}

// SSIM node between a map node (flattened to (1,n)) and a constant target;
// n-1 variance convention matching the standalone metric.
int record_ssim(Tape& tape, int flat, const Tensor& target, double c1,
                double c2) {
  const int64_t n = target.size();
  double my = 0;
  for (float v : target.data) my += v;
  my /= static_cast<double>(n);
  double vy = 0;
  for (float v : target.data) vy += (v - my) * (v - my);
  vy /= static_cast<double>(n - 1);

  Tensor yrow({1, static_cast<int>(n)});
  yrow.data = target.data;
  const int mx = tape.apply(OpKind::mean, {flat});
  const int sum_x2 = tape.apply(OpKind::sum,
                                {tape.apply(OpKind::mul, {flat, flat})});
  const int vx = tape.apply(
      OpKind::scalar_mul,
      {tape.apply(OpKind::add,
                  {sum_x2, tape.apply(OpKind::scalar_mul,
                                      {tape.apply(OpKind::mul, {mx, mx})},
                                      OpParams{.alpha = -float(n)})})},
      OpParams{.alpha = 1.0f / float(n - 1)});
  const int sum_xy = tape.apply(
      OpKind::sum, {tape.apply(OpKind::mul, {flat, tape.leaf(yrow)})});
  const int cov = tape.apply(
      OpKind::scalar_mul,
      {tape.apply(OpKind::add,
                  {sum_xy, tape.apply(OpKind::scalar_mul, {mx},
                                      OpParams{.alpha = -float(n * my)})})},
      OpParams{.alpha = 1.0f / float(n - 1)});
  const int num = tape.apply(
      OpKind::mul,
      {tape.apply(OpKind::add,
                  {tape.apply(OpKind::scalar_mul, {mx},
                              OpParams{.alpha = float(2 * my)}),
                   const_scalar(tape, static_cast<float>(c1))}),
       tape.apply(OpKind::add,
                  {tape.apply(OpKind::scalar_mul, {cov},
                              OpParams{.alpha = 2.0f}),
                   const_scalar(tape, static_cast<float>(c2))})});
  const int den = tape.apply(
      OpKind::mul,
      {tape.apply(OpKind::add,
                  {tape.apply(OpKind::mul, {mx, mx}),
                   const_scalar(tape, static_cast<float>(my * my + c1))}),
       tape.apply(OpKind::add,
                  {vx, const_scalar(tape, static_cast<float>(vy + c2))})});
  return tape.apply(OpKind::divide, {num, den});
}

}  // namespace

int record_composite_loss(Tape& tape, int lr_node, int hr_node,
                          const Tensor& wet_norm, const Tensor& wet_up_norm,
                          const FaithPool& pool,
                          const std::vector<int>& draw_ids,
                          const PatchPartition& partition,
                          const LossWeights& weights, LossTerms* terms) {
  const auto& lr_shape = tape.value(lr_node).shape;
  const int H = lr_shape[lr_shape.size() - 2];
  const int W = lr_shape[lr_shape.size() - 1];
  const int n = H * W;
  if (wet_norm.shape != std::vector<int>{H, W})
    throw std::invalid_argument("composite loss: similarity target shape " +
                                shape_str(wet_norm.shape) + " vs map " +
                                shape_str(lr_shape));
  const int flat =
      tape.apply(OpKind::reshape, {lr_node}, OpParams{.dims = {1, n}});
  const auto& hr_shape = tape.value(hr_node).shape;
  const int hn = hr_shape[hr_shape.size() - 2] * hr_shape[hr_shape.size() - 1];
  const int hr_flat =
      tape.apply(OpKind::reshape, {hr_node}, OpParams{.dims = {1, hn}});

  // faithfulness: correlate subset attribution sums with the frozen deltas
  const int m = static_cast<int>(draw_ids.size());
  bool faith_defined = false;
  int faith_node = -1;
  if (m >= 3) {
    std::vector<double> d(m);
    double dm = 0;
    for (int j = 0; j < m; ++j) {
      d[j] = pool.deltas.at(draw_ids[j]);
      dm += d[j];
    }
    dm /= m;
    double sd2 = 0;
    for (auto& v : d) {
      v -= dm;
      sd2 += v * v;
    }
    if (sd2 > 1e-12) {
      Tensor M({m, n});
      for (int j = 0; j < m; ++j) {
        const auto& mask = pool.masks.at(draw_ids[j]);
        std::copy(mask.data.begin(), mask.data.end(),
                  M.data.begin() + static_cast<int64_t>(j) * n);
      }
      Tensor center({m, m});
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j)
          center.data[i * m + j] =
              (i == j ? 1.0f : 0.0f) - 1.0f / static_cast<float>(m);
      Tensor dc({1, m});
      for (int j = 0; j < m; ++j) dc.data[j] = static_cast<float>(d[j]);
      const int sums = tape.apply(OpKind::dense, {flat, tape.leaf(M)});
      const int sc = tape.apply(OpKind::dense, {sums, tape.leaf(center)});
      const int num = tape.apply(
          OpKind::sum, {tape.apply(OpKind::mul, {sc, tape.leaf(dc)})});
      const int sxx = tape.apply(OpKind::sum,
                                 {tape.apply(OpKind::mul, {sc, sc})});
      faith_node = tape.apply(
          OpKind::scalar_mul,
          {tape.apply(OpKind::divide, {num, tape.apply(OpKind::sqrt_eps, {sxx})})},
          OpParams{.alpha = 1.0f / static_cast<float>(std::sqrt(sd2))});
      faith_defined = true;
    }
  }

  // complexity: entropy of the per-feature shares, H(P) = ln T - sum(g ln g)/T
  const int dfeat = partition.feature_count();
  Tensor P({dfeat, n});
  for (int y = 0; y < H; ++y)
    for (int c = 0; c < W; ++c)
      P.data[static_cast<int64_t>(partition.feature_of(y, c)) * n + y * W + c] =
          1.0f;
  const int g = tape.apply(OpKind::dense, {flat, tape.leaf(P)});
  const int total = tape.apply(OpKind::sum, {g});
  const int ent = tape.apply(
      OpKind::sub,
      {tape.apply(OpKind::log_eps, {total}),
       tape.apply(OpKind::divide,
                  {tape.apply(OpKind::sum,
                              {tape.apply(OpKind::mul,
                                          {g, tape.apply(OpKind::log_eps, {g})})}),
                   total})});

  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;  // L = 1 targets
  const int one_lr = const_scalar(tape, 1.0f);
  const int sim_lr = tape.apply(
      OpKind::sub, {one_lr, record_ssim(tape, flat, wet_norm, c1, c2)});
  const int sim_hr = tape.apply(
      OpKind::sub,
      {const_scalar(tape, 1.0f),
       record_ssim(tape, hr_flat, wet_up_norm, c1, c2)});
  const int sim = tape.apply(
      OpKind::add,
      {tape.apply(OpKind::scalar_mul, {sim_lr},
                  OpParams{.alpha = weights.lambda1}),
       tape.apply(OpKind::scalar_mul, {sim_hr},
                  OpParams{.alpha = weights.lambda2})});

  int loss = tape.apply(
      OpKind::add,
      {tape.apply(OpKind::scalar_mul, {ent}, OpParams{.alpha = weights.l2}),
       tape.apply(OpKind::scalar_mul, {sim}, OpParams{.alpha = weights.l3})});
  if (faith_defined)
    loss = tape.apply(
        OpKind::add,
        {loss, tape.apply(OpKind::scalar_mul, {faith_node},
                          OpParams{.alpha = -weights.l1})});

  if (terms) {
    terms->faith_defined = faith_defined;
    terms->faith = faith_defined ? tape.value(faith_node).at(0) : 0.0;
    terms->compx = tape.value(ent).at(0);
    terms->sim_lr = tape.value(sim_lr).at(0);
    terms->sim_hr = tape.value(sim_hr).at(0);
    terms->total = tape.value(loss).at(0);
  }
  return loss;
}

LossTerms composite_loss(const Tensor& lr_map, const Tensor& hr_map,
                         const AttributionMap& wet,
                         const DifferentiableModel& model, const Tensor& x,
                         int cls, const LossWeights& weights,
                         const FaithfulnessConfig& faith_cfg) {
  const FaithPool pool = build_faith_pool(model, x, cls, faith_cfg);
  std::vector<int> draw_ids(pool.masks.size());
  std::iota(draw_ids.begin(), draw_ids.end(), 0);
  Tape tape;
  Tensor lr4 = lr_map, hr4 = hr_map;
  lr4.shape = {1, 1, lr_map.shape[0], lr_map.shape[1]};
  hr4.shape = {1, 1, hr_map.shape[0], hr_map.shape[1]};
  const Tensor wet_norm = min_max_norm(wet.scores);
  const Tensor wet_up = min_max_norm(upsample2x_reference(wet_norm));
  LossTerms terms;
  record_composite_loss(tape, tape.leaf(lr4), tape.leaf(hr4), wet_norm, wet_up,
                        pool, draw_ids, faith_cfg.partition, weights, &terms);
  return terms;
}

const std::vector<float>& optimizer_lr_grid() {
  static const std::vector<float> grid = {5e-2f, 5e-3f, 5e-4f, 5e-5f};
  return grid;
}

TrainInstance prepare_instance(const DifferentiableModel& model,
                               const Tensor& x, int cls,
                               const std::vector<AttributionMap>& maps,
                               const AttributionMap& wet,
                               const FaithfulnessConfig& faith_cfg,
                               int instance_id) {
  TrainInstance inst;
  inst.instance_id = instance_id;
  inst.cls = cls;
  inst.stacked = stack_inputs(maps, wet);
  inst.wet_norm = min_max_norm(wet.scores);
  inst.wet_up_norm = min_max_norm(upsample2x_reference(inst.wet_norm));
  inst.pool = build_faith_pool(model, x, cls, faith_cfg);
  return inst;
}

namespace {

double instance_loss(const OptimizerNet& net, const TrainInstance& inst,
                     const PatchPartition& partition, const LossWeights& w) {
  Tape tape;
  Tensor batch = inst.stacked;
  batch.shape.insert(batch.shape.begin(), 1);
  const auto [lr, hr] = net.record_forward(tape, tape.leaf(batch));
  std::vector<int> all(inst.pool.masks.size());
  std::iota(all.begin(), all.end(), 0);
  LossTerms terms;
  record_composite_loss(tape, lr, hr, inst.wet_norm, inst.wet_up_norm,
                        inst.pool, all, partition, w, &terms);
  return terms.total;
}

}  // namespace

OptimizerRun train_optimizer(OptimizerNet& net,
                             const std::vector<TrainInstance>& train,
                             const std::vector<TrainInstance>& val,
                             const PatchPartition& partition,
                             const LossWeights& weights,
                             const OptimizerSchedule& schedule) {
  if (train.empty() || val.empty())
    throw std::invalid_argument("train_optimizer: empty instance set");
  if (schedule.patience > schedule.max_epochs)
    throw std::invalid_argument("patience exceeds max epochs");

  OptimizerRun run;
  for (const auto& inst : val)
    if (std::find(run.class_ids.begin(), run.class_ids.end(), inst.cls) ==
        run.class_ids.end())
      run.class_ids.push_back(inst.cls);
  std::sort(run.class_ids.begin(), run.class_ids.end());
  run.class_val_loss.resize(run.class_ids.size());

  AdamState adam = AdamState::init(net.params(), schedule.initial_lr);
  std::mt19937 rng(schedule.seed);
  std::vector<size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best_params = net.params();
  int since_best = 0;

  for (int epoch = 0; epoch < schedule.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double train_loss = 0;
    bool diverged = false;
    for (size_t oi = 0; oi < order.size() && !diverged; ++oi) {
      const auto& inst = train[order[oi]];
      const int pool_n = static_cast<int>(inst.pool.masks.size());
      const int m = std::min(schedule.faith_draws_per_step, pool_n);
      std::vector<int> ids(pool_n);
      std::iota(ids.begin(), ids.end(), 0);
      std::shuffle(ids.begin(), ids.end(), rng);
      ids.resize(m);
      try {
        Tape tape;
        Tensor batch = inst.stacked;
        batch.shape.insert(batch.shape.begin(), 1);
        std::vector<int> param_nodes;
        const auto [lr, hr] =
            net.record_forward_params(tape, tape.leaf(batch), param_nodes);
        LossTerms terms;
        const int loss =
            record_composite_loss(tape, lr, hr, inst.wet_norm,
                                  inst.wet_up_norm, inst.pool, ids, partition,
                                  weights, &terms);
        const auto grads = tape.backward(loss);
        std::vector<Tensor> param_grads;
        for (int id : param_nodes) param_grads.push_back(grads[id]);
        adam_step(net.params(), param_grads, adam);
        train_loss += terms.total;
      } catch (const std::runtime_error&) {
        diverged = true;  // keep the best finite state
      }
    }
    if (diverged) break;
    run.train_loss.push_back(train_loss / static_cast<double>(train.size()));

    double val_loss = 0;
    std::vector<double> class_sum(run.class_ids.size(), 0.0);
    std::vector<int> class_n(run.class_ids.size(), 0);
    for (const auto& inst : val) {
      const double l = instance_loss(net, inst, partition, weights);
      val_loss += l;
      const size_t ci = static_cast<size_t>(
          std::find(run.class_ids.begin(), run.class_ids.end(), inst.cls) -
          run.class_ids.begin());
      class_sum[ci] += l;
      class_n[ci] += 1;
    }
    val_loss /= static_cast<double>(val.size());
    run.val_loss.push_back(val_loss);
    for (size_t ci = 0; ci < run.class_ids.size(); ++ci)
      run.class_val_loss[ci].push_back(class_sum[ci] /
                                       std::max(class_n[ci], 1));

    if (val_loss < best_val) {
      best_val = val_loss;
      best_params = net.params();
      since_best = 0;
    } else if (epoch >= schedule.patience_after) {
      since_best += 1;
      if (since_best > schedule.patience) break;
    }
  }
  net.params() = best_params;
  run.best_val_loss = best_val;
  return run;
}

ExplanationPair explain_optimal(const OptimizerNet& net,
                                const Tensor& stacked) {
  return net.infer(stacked);
}

void write_class_curves_csv(const OptimizerRun& run, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << "epoch,train_loss,val_loss";
  for (int c : run.class_ids) os << ",class_" << c;
  os << '\n';
  for (size_t e = 0; e < run.val_loss.size(); ++e) {
    os << e << ',' << run.train_loss[e] << ',' << run.val_loss[e];
    for (const auto& curve : run.class_val_loss) os << ',' << curve[e];
    os << '\n';
  }
}

}  // namespace xforge
