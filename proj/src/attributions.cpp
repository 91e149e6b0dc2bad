#include "xforge/attributions.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace xforge {

PatchPartition PatchPartition::grid(int height, int width, int rows,
                                    int cols) {
  if (rows < 1 || cols < 1 || height % rows != 0 || width % cols != 0)
    throw std::invalid_argument(
        "partition: " + std::to_string(height) + "x" + std::to_string(width) +
        " image does not divide into a " + std::to_string(rows) + "x" +
        std::to_string(cols) + " grid");
  return PatchPartition{rows, cols, height, width};
}

namespace {

Tensor batchify(const Tensor& x) {
  if (x.rank() != 3)
    throw std::invalid_argument("attribution input must be (C,H,W), got " +
                                shape_str(x.shape));
  Tensor b = x;
  b.shape.insert(b.shape.begin(), 1);
  return b;
}

Tensor debatch(Tensor t) {
  t.shape.erase(t.shape.begin());
  return t;
}

// Selects logit `cls` of a (1,classes) logits node as a scalar, using only
// linear ops so every attribution mode (including rescale rules) applies.
int record_class_score(Tape& tape, int logits, int cls) {
  const int classes = tape.value(logits).shape.at(1);
  if (cls < 0 || cls >= classes)
    throw std::invalid_argument("class index " + std::to_string(cls) +
                                " out of range for " + std::to_string(classes) +
                                " classes");
  Tensor pick({1, classes});
  pick.data[cls] = 1.0f;
  return tape.apply(OpKind::sum,
                    {tape.apply(OpKind::dense, {logits, tape.leaf(pick)})});
}

void require_finite(const Tensor& t, const char* what) {
  for (float v : t.data)
    if (!std::isfinite(v))
      throw std::runtime_error(std::string(what) + ": non-finite value");
}

Tensor input_gradient(const DifferentiableModel& model, const Tensor& x,
                      int cls, GradMode mode) {
  Tape tape;
  const int in = tape.leaf(batchify(x));
  const int score =
      record_class_score(tape, model.record_forward(tape, in), cls);
  if (mode == GradMode::guided && !tape.contains(OpKind::relu))
    throw std::invalid_argument(
        "guided backprop requires a relu nonlinearity in the model");
  auto grads = tape.backward(score, mode);
  require_finite(grads[in], "input gradient");
  return debatch(std::move(grads[in]));
}

Tensor zeros_like(const Tensor& t) { return Tensor(t.shape); }

Tensor resolve_baseline(const BaselineSpec& spec, const Tensor& x,
                        std::mt19937& rng) {
  switch (spec.kind) {
    case BaselineSpec::Kind::zero:
      return zeros_like(x);
    case BaselineSpec::Kind::gaussian: {
      if (spec.sigma < 0)
        throw std::invalid_argument("baseline sigma must be >= 0");
      std::normal_distribution<float> g(0.0f, spec.sigma);
      Tensor b = x;
      for (auto& v : b.data) v += g(rng);
      return b;
    }
    case BaselineSpec::Kind::dataset:
      throw std::invalid_argument(
          "dataset baseline requires an explicit reference set");
  }
  throw std::invalid_argument("unknown baseline kind");
}

}  // namespace

AttributionMap publish(const Tensor& raw_chw, std::string method,
                       int target_class) {
  if (raw_chw.rank() != 3)
    throw std::invalid_argument("raw attribution must be (C,H,W), got " +
                                shape_str(raw_chw.shape));
  require_finite(raw_chw, method.c_str());
  const int C = raw_chw.shape[0], H = raw_chw.shape[1], W = raw_chw.shape[2];
  AttributionMap map;
  map.scores = Tensor({H, W});
  map.method = std::move(method);
  map.target_class = target_class;
  map.input_shape = raw_chw.shape;
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < H * W; ++i)
      map.scores.data[i] += std::fabs(raw_chw.data[c * H * W + i]);
  for (auto& v : map.scores.data) v = std::max(v, 0.0f);
  return map;
}

float eval_class_score(const DifferentiableModel& model, const Tensor& x,
                       int cls) {
  Tape tape;
  const int in = tape.leaf(batchify(x));
  const int score =
      record_class_score(tape, model.record_forward(tape, in), cls);
  return tape.value(score).at(0);
}

Tensor saliency_raw(const DifferentiableModel& model, const Tensor& x,
                    int cls) {
  Tensor g = input_gradient(model, x, cls, GradMode::standard);
  for (auto& v : g.data) v = std::fabs(v);
  return g;
}

AttributionMap saliency(const DifferentiableModel& model, const Tensor& x,
                        int cls) {
  return publish(saliency_raw(model, x, cls), "saliency", cls);
}

Tensor integrated_gradients_raw(const DifferentiableModel& model,
                                const Tensor& x, int cls, int steps,
                                const Tensor& baseline) {
  if (steps < 8)
    throw std::invalid_argument("integrated gradients needs >= 8 steps");
  if (!baseline.same_shape(x))
    throw std::invalid_argument("baseline shape " + shape_str(baseline.shape) +
                                " does not match input " + shape_str(x.shape));
  Tensor acc = zeros_like(x);
  Tensor point = x;
  for (int s = 0; s < steps; ++s) {
    const float a = static_cast<float>(s) / static_cast<float>(steps);
    for (int64_t i = 0; i < x.size(); ++i)
      point.data[i] = baseline.data[i] + a * (x.data[i] - baseline.data[i]);
    const Tensor g = input_gradient(model, point, cls, GradMode::standard);
    for (int64_t i = 0; i < x.size(); ++i) acc.data[i] += g.data[i];
  }
  for (int64_t i = 0; i < x.size(); ++i)
    acc.data[i] = (x.data[i] - baseline.data[i]) * acc.data[i] /
                  static_cast<float>(steps);
  return acc;
}

AttributionMap integrated_gradients(const DifferentiableModel& model,
                                    const Tensor& x, int cls, int steps,
                                    const BaselineSpec& baseline) {
  std::mt19937 rng(0);
  return publish(integrated_gradients_raw(model, x, cls, steps,
                                          resolve_baseline(baseline, x, rng)),
                 "integrated_gradients", cls);
}

Tensor gradient_shap_raw(const DifferentiableModel& model, const Tensor& x,
                         int cls, int n_samples, float sigma, int steps,
                         uint32_t seed) {
  if (n_samples < 1)
    throw std::invalid_argument("gradient shap needs >= 1 sample");
  std::mt19937 rng(seed);
  std::normal_distribution<float> g(0.0f, sigma);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Tensor acc = zeros_like(x);
  Tensor baseline = x, point = x;
  for (int s = 0; s < n_samples; ++s) {
    for (int64_t i = 0; i < x.size(); ++i)
      baseline.data[i] = x.data[i] + g(rng);
    // single random point on the path x0 -> x per sample
    const float a = (steps <= 1) ? u(rng)
                                 : (std::uniform_int_distribution<int>(
                                        0, steps - 1)(rng) +
                                    0.5f) /
                                       static_cast<float>(steps);
    for (int64_t i = 0; i < x.size(); ++i)
      point.data[i] = baseline.data[i] + a * (x.data[i] - baseline.data[i]);
    const Tensor grad = input_gradient(model, point, cls, GradMode::standard);
    for (int64_t i = 0; i < x.size(); ++i)
      acc.data[i] += (x.data[i] - baseline.data[i]) * grad.data[i];
  }
  for (auto& v : acc.data) v /= static_cast<float>(n_samples);
  return acc;
}

AttributionMap gradient_shap(const DifferentiableModel& model, const Tensor& x,
                             int cls, int n_samples, float sigma, int steps,
                             uint32_t seed) {
  return publish(gradient_shap_raw(model, x, cls, n_samples, sigma, steps,
                                   seed),
                 "gradient_shap", cls);
}

AttributionMap guided_backprop(const DifferentiableModel& model,
                               const Tensor& x, int cls) {
  Tensor g = input_gradient(model, x, cls, GradMode::guided);
  for (auto& v : g.data) v = std::max(v, 0.0f);
  return publish(g, "guided_backprop", cls);
}

namespace {

// Spatially upsample a (h,w) map to (H,W) by repeated 2x bilinear steps;
// stage activations sit at power-of-two fractions of the input resolution.
Tensor upsample_to(Tensor map, int H, int W) {
  while (map.shape[0] < H || map.shape[1] < W) {
    Tensor t({1, 1, map.shape[0], map.shape[1]});
    t.data = map.data;
    t = eval_op(OpKind::bilinear_up2x, {t});
    map = Tensor({t.shape[2], t.shape[3]});
    map.data = t.data;
  }
  if (map.shape[0] != H || map.shape[1] != W)
    throw std::invalid_argument("activation map " + shape_str(map.shape) +
                                " is not a power-of-two fraction of " +
                                std::to_string(H) + "x" + std::to_string(W));
  return map;
}

Tensor grad_cam_map(const DifferentiableModel& model, const Tensor& x, int cls,
                    int layer) {
  Tape tape;
  const int in = tape.leaf(batchify(x));
  std::vector<int> taps;
  const int score =
      record_class_score(tape, model.record_forward(tape, in, &taps), cls);
  if (taps.empty())
    throw std::invalid_argument("model exposes no convolutional stages");
  if (layer == -1) layer = static_cast<int>(taps.size()) - 1;
  if (layer < 0 || layer >= static_cast<int>(taps.size()))
    throw std::invalid_argument(
        "stage index " + std::to_string(layer) + " out of range, model has " +
        std::to_string(taps.size()) + " convolutional stages");
  const auto grads = tape.backward(score);
  const Tensor& act = tape.value(taps[layer]);   // (1,C,h,w)
  const Tensor& grad = grads[taps[layer]];
  const int C = act.shape[1], h = act.shape[2], w = act.shape[3];
  Tensor cam({h, w});
  for (int c = 0; c < C; ++c) {
    double alpha = 0;
    for (int i = 0; i < h * w; ++i) alpha += grad.data[c * h * w + i];
    alpha /= h * w;
    for (int i = 0; i < h * w; ++i)
      cam.data[i] += static_cast<float>(alpha) * act.data[c * h * w + i];
  }
  for (auto& v : cam.data) v = std::max(v, 0.0f);
  return upsample_to(std::move(cam), x.shape[1], x.shape[2]);
}

}  // namespace

AttributionMap grad_cam(const DifferentiableModel& model, const Tensor& x,
                        int cls, int layer) {
  AttributionMap map;
  map.scores = grad_cam_map(model, x, cls, layer);
  map.method = "grad_cam";
  map.target_class = cls;
  map.input_shape = x.shape;
  return map;
}

AttributionMap guided_grad_cam(const DifferentiableModel& model,
                               const Tensor& x, int cls, int layer) {
  AttributionMap gb = guided_backprop(model, x, cls);
  const Tensor cam = grad_cam_map(model, x, cls, layer);
  for (int64_t i = 0; i < gb.scores.size(); ++i)
    gb.scores.data[i] *= cam.data[i];
  gb.method = "guided_grad_cam";
  return gb;
}

Tensor deeplift_rescale_raw(const DifferentiableModel& model, const Tensor& x,
                            int cls, const Tensor& baseline) {
  if (!baseline.same_shape(x))
    throw std::invalid_argument("baseline shape " + shape_str(baseline.shape) +
                                " does not match input " + shape_str(x.shape));
  Tape tape, ref;
  const int in = tape.leaf(batchify(x));
  const int score =
      record_class_score(tape, model.record_forward(tape, in), cls);
  const int rin = ref.leaf(batchify(baseline));
  record_class_score(ref, model.record_forward(ref, rin), cls);
  const auto mult = tape.deeplift_multipliers(score, ref);
  Tensor out = zeros_like(x);
  for (int64_t i = 0; i < x.size(); ++i)
    out.data[i] = mult[in].data[i] * (x.data[i] - baseline.data[i]);
  require_finite(out, "deeplift");
  return out;
}

AttributionMap deeplift_rescale(const DifferentiableModel& model,
                                const Tensor& x, int cls,
                                const BaselineSpec& baseline) {
  std::mt19937 rng(0);
  return publish(deeplift_rescale_raw(model, x, cls,
                                      resolve_baseline(baseline, x, rng)),
                 "deeplift", cls);
}

Tensor deeplift_shap_raw(const DifferentiableModel& model, const Tensor& x,
                         int cls, const std::vector<Tensor>& references,
                         int n_samples, uint32_t seed) {
  if (references.empty())
    throw std::invalid_argument("deeplift shap needs a non-empty reference set");
  if (n_samples < 1)
    throw std::invalid_argument("deeplift shap needs >= 1 sample");
  std::mt19937 rng(seed);
  std::uniform_int_distribution<size_t> pick(0, references.size() - 1);
  Tensor acc = zeros_like(x);
  for (int s = 0; s < n_samples; ++s) {
    const Tensor d = deeplift_rescale_raw(model, x, cls, references[pick(rng)]);
    for (int64_t i = 0; i < x.size(); ++i) acc.data[i] += d.data[i];
  }
  for (auto& v : acc.data) v /= static_cast<float>(n_samples);
  return acc;
}

AttributionMap deeplift_shap(const DifferentiableModel& model, const Tensor& x,
                             int cls, const std::vector<Tensor>& references,
                             int n_samples, uint32_t seed) {
  return publish(deeplift_shap_raw(model, x, cls, references, n_samples, seed),
                 "deeplift_shap", cls);
}

namespace {

double shapley_kernel_weight(int d, int s) {
  // (d-1) / (C(d,s) * s * (d-s))
  double logc = 0;
  for (int i = 1; i <= s; ++i)
    logc += std::log(static_cast<double>(d - s + i)) -
            std::log(static_cast<double>(i));
  return (d - 1) / (std::exp(logc) * s * (d - s));
}

}  // namespace

std::vector<float> kernel_shap_values(const DifferentiableModel& model,
                                      const Tensor& x, int cls,
                                      const PatchPartition& partition,
                                      int n_coalitions, float ridge,
                                      uint32_t seed) {
  const int d = partition.feature_count();
  if (d < 2) throw std::invalid_argument("kernel shap needs >= 2 features");
  if (n_coalitions < d + 2)
    throw std::invalid_argument("kernel shap needs >= d+2 coalitions, got " +
                                std::to_string(n_coalitions));
  if (ridge < 0) throw std::invalid_argument("ridge must be >= 0");

  const int C = x.shape[0], H = x.shape[1], W = x.shape[2];
  auto masked_eval = [&](const std::vector<char>& on) {
    Tensor m = x;
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx < W; ++xx)
        if (!on[partition.feature_of(y, xx)])
          for (int c = 0; c < C; ++c) m.data[(c * H + y) * W + xx] = 0.0f;
    return eval_class_score(model, m, cls);
  };

  const double v_empty = masked_eval(std::vector<char>(d, 0));
  const double v_full = masked_eval(std::vector<char>(d, 1));
  const double span = v_full - v_empty;

  std::vector<std::vector<char>> coalitions;
  std::vector<double> weights, values;
  const bool full_enum = d <= 20 && n_coalitions >= (1 << d) - 2;
  if (full_enum) {
    for (uint32_t mask = 1; mask + 1 < (1u << d); ++mask) {
      std::vector<char> on(d, 0);
      int s = 0;
      for (int j = 0; j < d; ++j)
        if (mask >> j & 1) on[j] = 1, ++s;
      coalitions.push_back(on);
      weights.push_back(shapley_kernel_weight(d, s));
    }
  } else {
    // sample coalition sizes from the kernel-induced size distribution,
    // subsets uniform within a size; sampled rows then carry unit weight
    std::vector<double> size_w(d - 1);
    for (int s = 1; s < d; ++s)
      size_w[s - 1] = static_cast<double>(d - 1) / (s * (d - s));
    std::discrete_distribution<int> size_dist(size_w.begin(), size_w.end());
    std::mt19937 rng(seed);
    std::vector<int> order(d);
    for (int j = 0; j < d; ++j) order[j] = j;
    for (int k = 0; k < n_coalitions; ++k) {
      const int s = size_dist(rng) + 1;
      std::shuffle(order.begin(), order.end(), rng);
      std::vector<char> on(d, 0);
      for (int j = 0; j < s; ++j) on[order[j]] = 1;
      coalitions.push_back(on);
      weights.push_back(1.0);
    }
  }
  values.reserve(coalitions.size());
  for (const auto& on : coalitions) values.push_back(masked_eval(on));

  // efficiency-constrained WLS: eliminate the last feature via
  // phi_{d-1} = span - sum_{j<d-1} phi_j
  const int n = static_cast<int>(coalitions.size());
  Eigen::MatrixXd A(n, d - 1);
  Eigen::VectorXd y(n);
  for (int r = 0; r < n; ++r) {
    const double zd = coalitions[r][d - 1] ? 1.0 : 0.0;
    for (int j = 0; j < d - 1; ++j)
      A(r, j) = (coalitions[r][j] ? 1.0 : 0.0) - zd;
    y(r) = values[r] - v_empty - zd * span;
  }
  Eigen::MatrixXd ata = Eigen::MatrixXd::Zero(d - 1, d - 1);
  Eigen::VectorXd aty = Eigen::VectorXd::Zero(d - 1);
  for (int r = 0; r < n; ++r) {
    ata.noalias() += weights[r] * A.row(r).transpose() * A.row(r);
    aty.noalias() += weights[r] * y(r) * A.row(r).transpose();
  }
  ata.diagonal().array() += ridge;
  const Eigen::LDLT<Eigen::MatrixXd> solver(ata);
  if (solver.info() != Eigen::Success)
    throw std::runtime_error(
        "kernel shap regression is singular; increase coalitions or ridge");
  const Eigen::VectorXd phi = solver.solve(aty);
  if (!phi.allFinite())
    throw std::runtime_error(
        "kernel shap regression is singular; increase coalitions or ridge");

  std::vector<float> out(d);
  double tail = span;
  for (int j = 0; j < d - 1; ++j) {
    out[j] = static_cast<float>(phi(j));
    tail -= phi(j);
  }
  out[d - 1] = static_cast<float>(tail);
  return out;
}

AttributionMap kernel_shap(const DifferentiableModel& model, const Tensor& x,
                           int cls, const PatchPartition& partition,
                           int n_coalitions, float ridge, uint32_t seed) {
  const auto phi = kernel_shap_values(model, x, cls, partition, n_coalitions,
                                      ridge, seed);
  const int H = x.shape[1], W = x.shape[2];
  AttributionMap map;
  map.scores = Tensor({H, W});
  map.method = "kernel_shap";
  map.target_class = cls;
  map.input_shape = x.shape;
  const float area = static_cast<float>(H * W) /
                     static_cast<float>(partition.feature_count());
  for (int y = 0; y < H; ++y)
    for (int xx = 0; xx < W; ++xx)
      map.scores.data[y * W + xx] =
          std::max(phi[partition.feature_of(y, xx)] / area, 0.0f);
  return map;
}

const std::vector<std::string>& method_names() {
  static const std::vector<std::string> names = {
      "saliency",        "integrated_gradients", "gradient_shap",
      "guided_backprop", "grad_cam",             "guided_grad_cam",
      "deeplift",        "deeplift_shap",        "kernel_shap"};
  return names;
}

const std::vector<std::string>& baseline_battery() {
  // the K=8 comparison set; standalone grad_cam stays CLI-addressable but
  // enters the battery only through guided_grad_cam
  static const std::vector<std::string> names = {
      "saliency",        "integrated_gradients", "gradient_shap",
      "guided_backprop", "guided_grad_cam",      "deeplift",
      "deeplift_shap",   "kernel_shap"};
  return names;
}

AttributionMap run_method(const std::string& name,
                          const DifferentiableModel& model, const Tensor& x,
                          int cls, const PatchPartition& partition,
                          uint32_t seed, int ig_steps, int shap_coalitions,
                          const std::vector<Tensor>* references) {
  if (shap_coalitions <= 0)
    shap_coalitions = 2 * partition.feature_count() + 16;
  if (name == "saliency") return saliency(model, x, cls);
  if (name == "integrated_gradients")
    return integrated_gradients(model, x, cls, ig_steps);
  if (name == "gradient_shap")
    return gradient_shap(model, x, cls, 8, 0.1f, 8, seed);
  if (name == "guided_backprop") return guided_backprop(model, x, cls);
  if (name == "grad_cam") return grad_cam(model, x, cls);
  if (name == "guided_grad_cam") return guided_grad_cam(model, x, cls);
  if (name == "deeplift") return deeplift_rescale(model, x, cls);
  if (name == "deeplift_shap") {
    if (!references || references->empty())
      return deeplift_rescale(model, x, cls);  // zero-baseline fallback
    return deeplift_shap(model, x, cls, *references, 4, seed);
  }
  if (name == "kernel_shap")
    return kernel_shap(model, x, cls, partition, shap_coalitions, 1e-6f, seed);
  std::string valid;
  for (const auto& n : method_names()) valid += (valid.empty() ? "" : ", ") + n;
  throw std::invalid_argument("unknown method '" + name + "'; valid: " + valid);
}

}  // namespace xforge
