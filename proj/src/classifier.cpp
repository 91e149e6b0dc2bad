#include "xforge/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

#include "xforge/adam.hpp"
#include "xforge/checkpoint.hpp"

namespace xforge {

float learning_rate_at(const TrainSchedule& s, int epoch) {
  if (epoch < s.hold_epochs) return s.initial_lr;
  const int steps = (epoch - s.hold_epochs) / s.decay_every + 1;
  return s.initial_lr * std::pow(s.decay_factor, static_cast<float>(steps));
}

namespace {

Tensor he_init(std::vector<int> shape, int fan_in, std::mt19937& rng) {
  std::normal_distribution<float> g(0.0f,
                                    std::sqrt(2.0f / static_cast<float>(fan_in)));
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = g(rng);
  return t;
}

}  // namespace

Classifier Classifier::build(const ClassifierConfig& config, uint32_t seed) {
  if (config.classes < 2)
    throw std::invalid_argument("classifier: class count must be >= 2");
  if (config.base_width < 4)
    throw std::invalid_argument("classifier: base width must be >= 4");
  const int H = config.input_shape[1], W = config.input_shape[2];
  const int final_h = H >> config.residual_blocks;
  const int final_w = W >> config.residual_blocks;
  if ((final_h << config.residual_blocks) != H ||
      (final_w << config.residual_blocks) != W || final_h < 4 || final_w < 4)
    throw std::invalid_argument(
        "classifier: input " + shape_str(config.input_shape) +
        " too small for " + std::to_string(config.residual_blocks) +
        " downsampling stages");

  Classifier m;
  m.config_ = config;
  std::mt19937 rng(seed);
  auto add = [&](const std::string& name, Tensor t) {
    m.param_names_.push_back(name);
    m.params_.push_back(std::move(t));
  };
  int cin = config.input_shape[0];
  add("stem/k", he_init({config.base_width, cin, 3, 3}, cin * 9, rng));
  add("stem/b", Tensor({config.base_width}));
  int w = config.base_width;
  for (int s = 0; s < config.residual_blocks; ++s) {
    const int ws = config.base_width << s;
    if (ws != w) {
      add("stage" + std::to_string(s) + "/entry/k",
          he_init({ws, w, 3, 3}, w * 9, rng));
      add("stage" + std::to_string(s) + "/entry/b", Tensor({ws}));
    }
    add("stage" + std::to_string(s) + "/conv1/k",
        he_init({ws, ws, 3, 3}, ws * 9, rng));
    add("stage" + std::to_string(s) + "/conv1/b", Tensor({ws}));
    add("stage" + std::to_string(s) + "/conv2/k",
        he_init({ws, ws, 3, 3}, ws * 9, rng));
    add("stage" + std::to_string(s) + "/conv2/b", Tensor({ws}));
    w = ws;
  }
  add("head/w", he_init({config.classes, w}, w, rng));
  add("head/b", Tensor({config.classes}));
  return m;
}

int Classifier::record_forward_params(BasicTape<float>& tape, int input_node,
                                      std::vector<int>& param_nodes,
                                      std::vector<int>* conv_taps) const {
  param_nodes.clear();
  for (const auto& p : params_) param_nodes.push_back(tape.leaf(p));
  size_t pi = 0;
  auto next = [&] { return param_nodes[pi++]; };

  int x = tape.apply(OpKind::relu,
                     {tape.apply(OpKind::conv2d, {input_node, next(), next()})});
  int w = config_.base_width;
  for (int s = 0; s < config_.residual_blocks; ++s) {
    const int ws = config_.base_width << s;
    if (ws != w)
      x = tape.apply(OpKind::relu,
                     {tape.apply(OpKind::conv2d, {x, next(), next()})});
    int h = tape.apply(OpKind::relu,
                       {tape.apply(OpKind::conv2d, {x, next(), next()})});
    int h2 = tape.apply(OpKind::conv2d, {h, next(), next()});
    x = tape.apply(OpKind::relu, {tape.apply(OpKind::add, {x, h2})});
    if (conv_taps) conv_taps->push_back(x);
    x = tape.apply(OpKind::avgpool, {x}, OpParams{.window = 2});
    w = ws;
  }
  const auto& xs = tape.value(x).shape;
  x = tape.apply(OpKind::avgpool, {x}, OpParams{.window = xs[2]});
  x = tape.apply(OpKind::reshape, {x}, OpParams{.dims = {xs[0], xs[1]}});
  return tape.apply(OpKind::dense, {x, next(), next()});
}

int Classifier::record_forward(BasicTape<float>& tape, int input_node,
                               std::vector<int>* conv_taps) const {
  std::vector<int> unused;
  return record_forward_params(tape, input_node, unused, conv_taps);
}

Tensor Classifier::predict_logits(const Tensor& batch) const {
  Tape tape;
  const int x = tape.leaf(batch);
  return tape.value(record_forward(tape, x));
}

float Classifier::predict_class_score(const Tensor& x, int cls) const {
  if (cls < 0 || cls >= config_.classes)
    throw std::invalid_argument("class index " + std::to_string(cls) +
                                " out of range");
  Tensor batch = x;
  if (batch.rank() == 3)
    batch.shape.insert(batch.shape.begin(), 1);
  const auto logits = predict_logits(batch);
  return logits.at(cls);
}

int Classifier::predict_class(const Tensor& x) const {
  Tensor batch = x;
  if (batch.rank() == 3) batch.shape.insert(batch.shape.begin(), 1);
  const auto logits = predict_logits(batch);
  int best = 0;
  for (int c = 1; c < config_.classes; ++c)
    if (logits.at(c) > logits.at(best)) best = c;
  return best;
}

int64_t Classifier::parameter_count() const {
  int64_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

namespace {

Tensor assemble_batch(const std::vector<ImageRecord>& records,
                      const std::vector<size_t>& idx, size_t start, size_t end,
                      std::vector<int>& labels) {
  const auto& s = records[idx[start]].pixels.shape;
  Tensor batch({static_cast<int>(end - start), s[0], s[1], s[2]});
  labels.clear();
  for (size_t i = start; i < end; ++i) {
    const auto& r = records[idx[i]];
    std::copy(r.pixels.data.begin(), r.pixels.data.end(),
              batch.data.begin() +
                  static_cast<int64_t>(i - start) * r.pixels.size());
    labels.push_back(r.label);
  }
  return batch;
}

// mean cross-entropy; labels one-hot against log-softmax
int record_ce_loss(Tape& tape, int logits, const std::vector<int>& labels,
                   int classes) {
  const int n = static_cast<int>(labels.size());
  Tensor onehot({n, classes});
  for (int i = 0; i < n; ++i) onehot.data[i * classes + labels[i]] = 1.0f;
  const int logp = tape.apply(OpKind::log_eps,
                              {tape.apply(OpKind::softmax, {logits})});
  const int picked = tape.apply(OpKind::mul, {logp, tape.leaf(onehot)});
  return tape.apply(OpKind::scalar_mul, {tape.apply(OpKind::sum, {picked})},
                    OpParams{.alpha = -1.0f / static_cast<float>(n)});
}

double batch_accuracy(const Tensor& logits, const std::vector<int>& labels) {
  const int n = logits.shape[0], classes = logits.shape[1];
  int correct = 0;
  for (int i = 0; i < n; ++i) {
    int best = 0;
    for (int c = 1; c < classes; ++c)
      if (logits.data[i * classes + c] > logits.data[i * classes + best])
        best = c;
    correct += best == labels[i];
  }
  return static_cast<double>(correct) / n;
}

}  // namespace

double evaluate_accuracy(const Classifier& model,
                         const std::vector<ImageRecord>& records) {
  if (records.empty()) return 0;
  int correct = 0;
  for (const auto& r : records)
    correct += model.predict_class(r.pixels) == r.label;
  return static_cast<double>(correct) / static_cast<double>(records.size());
}

Checkpoint train_classifier(Classifier& model, const DatasetSplit& split,
                            const TrainSchedule& schedule,
                            const AugmentConfig& augment_cfg) {
  if (split.train.empty() || split.val.empty())
    throw std::invalid_argument("train_classifier: empty split");

  std::mt19937 rng(schedule.seed);
  ZcaTransform zca;
  if (augment_cfg.zca) zca = zca_fit(split.train, augment_cfg.zca_epsilon);
  const bool do_augment = augment_cfg.rotation_deg > 0 ||
                          augment_cfg.shift_frac > 0 || augment_cfg.zca;

  auto eval_loss = [&](const std::vector<ImageRecord>& records, double& acc) {
    std::vector<size_t> idx(records.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    double loss = 0, correct = 0;
    size_t count = 0;
    for (size_t start = 0; start < records.size();
         start += static_cast<size_t>(schedule.batch_size)) {
      const size_t end = std::min(
          records.size(), start + static_cast<size_t>(schedule.batch_size));
      std::vector<int> labels;
      auto batch = assemble_batch(records, idx, start, end, labels);
      Tape tape;
      const int logits = model.record_forward(tape, tape.leaf(batch));
      const int l = record_ce_loss(tape, logits, labels,
                                   model.class_count());
      loss += tape.value(l).at(0) * static_cast<double>(end - start);
      correct +=
          batch_accuracy(tape.value(logits), labels) * double(end - start);
      count += end - start;
    }
    acc = correct / static_cast<double>(count);
    return loss / static_cast<double>(count);
  };

  Checkpoint ckpt;
  ckpt.config = model.config();
  AdamState adam = AdamState::init(model.params(), schedule.initial_lr);
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best_params = model.params();
  int since_best = 0;

  std::vector<size_t> order(split.train.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < schedule.max_epochs; ++epoch) {
    adam.lr = learning_rate_at(schedule, epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double train_loss = 0, train_acc = 0;
    size_t seen = 0;
    bool diverged = false;
    std::vector<ImageRecord> scratch;
    for (size_t start = 0; start < order.size() && !diverged;
         start += static_cast<size_t>(schedule.batch_size)) {
      const size_t end = std::min(order.size(),
                                  start + size_t(schedule.batch_size));
      std::vector<int> labels;
      Tensor batch;
      if (do_augment) {
        scratch.clear();
        for (size_t i = start; i < end; ++i) {
          auto rec = augment(split.train[order[i]], augment_cfg, rng);
          if (augment_cfg.zca) rec = zca_apply(zca, rec);
          scratch.push_back(std::move(rec));
        }
        std::vector<size_t> ident(scratch.size());
        for (size_t i = 0; i < ident.size(); ++i) ident[i] = i;
        batch = assemble_batch(scratch, ident, 0, scratch.size(), labels);
      } else {
        batch = assemble_batch(split.train, order, start, end, labels);
      }
      try {
        Tape tape;
        std::vector<int> param_nodes;
        const int logits = model.record_forward_params(
            tape, tape.leaf(batch), param_nodes);
        const int loss =
            record_ce_loss(tape, logits, labels, model.class_count());
        const auto grads = tape.backward(loss);
        std::vector<Tensor> param_grads;
        for (int id : param_nodes) param_grads.push_back(grads[id]);
        adam_step(model.params(), param_grads, adam);
        train_loss += tape.value(loss).at(0) * double(end - start);
        train_acc +=
            batch_accuracy(tape.value(logits), labels) * double(end - start);
        seen += end - start;
      } catch (const std::runtime_error&) {
        // non-finite forward: abort, keep the last finite state
        diverged = true;
      }
    }
    if (diverged) break;
    double val_acc = 0;
    const double val_loss = eval_loss(split.val, val_acc);
    ckpt.curves.push_back(EpochStats{epoch, train_loss / double(seen), val_loss,
                                     train_acc / double(seen), val_acc,
                                     adam.lr});
    if (val_loss < best_val) {
      best_val = val_loss;
      best_params = model.params();
      since_best = 0;
    } else {
      since_best += 1;
      if (since_best > schedule.patience) break;
    }
  }
  model.params() = best_params;
  ckpt.best_val_loss = best_val;
  for (size_t i = 0; i < model.params().size(); ++i)
    ckpt.params.emplace_back(model.param_names()[i], model.params()[i]);
  return ckpt;
}

Classifier Checkpoint::to_classifier() const {
  Classifier m = Classifier::build(config);
  if (m.params().size() != params.size())
    throw std::runtime_error("checkpoint: parameter count mismatch");
  for (size_t i = 0; i < params.size(); ++i) {
    if (m.param_names()[i] != params[i].first ||
        m.params()[i].shape != params[i].second.shape)
      throw std::runtime_error("checkpoint: parameter " + params[i].first +
                               " does not match config");
    m.params()[i] = params[i].second;
  }
  return m;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  TensorFile f;
  Tensor cfg({7});
  cfg.at(0) = static_cast<float>(ckpt.config.input_shape[0]);
  cfg.at(1) = static_cast<float>(ckpt.config.input_shape[1]);
  cfg.at(2) = static_cast<float>(ckpt.config.input_shape[2]);
  cfg.at(3) = static_cast<float>(ckpt.config.residual_blocks);
  cfg.at(4) = static_cast<float>(ckpt.config.base_width);
  cfg.at(5) = static_cast<float>(ckpt.config.classes);
  cfg.at(6) = static_cast<float>(ckpt.test_accuracy);
  f.put("meta/config", cfg);
  if (!ckpt.curves.empty()) {
    Tensor curves({static_cast<int>(ckpt.curves.size()), 6});
    for (size_t i = 0; i < ckpt.curves.size(); ++i) {
      const auto& e = ckpt.curves[i];
      float* row = &curves.data[i * 6];
      row[0] = static_cast<float>(e.epoch);
      row[1] = static_cast<float>(e.train_loss);
      row[2] = static_cast<float>(e.val_loss);
      row[3] = static_cast<float>(e.train_acc);
      row[4] = static_cast<float>(e.val_acc);
      row[5] = e.lr;
    }
    f.put("meta/curves", curves);
  }
  for (const auto& [name, t] : ckpt.params) f.put("param/" + name, t);
  save_tensor_file(f, path);
}

Checkpoint load_checkpoint(const std::string& path) {
  const auto f = load_tensor_file(path);
  Checkpoint ckpt;
  const auto& cfg = f.get("meta/config");
  ckpt.config.input_shape = {static_cast<int>(cfg.at(0)),
                             static_cast<int>(cfg.at(1)),
                             static_cast<int>(cfg.at(2))};
  ckpt.config.residual_blocks = static_cast<int>(cfg.at(3));
  ckpt.config.base_width = static_cast<int>(cfg.at(4));
  ckpt.config.classes = static_cast<int>(cfg.at(5));
  ckpt.test_accuracy = cfg.at(6);
  if (f.has("meta/curves")) {
    const auto& curves = f.get("meta/curves");
    for (int i = 0; i < curves.shape[0]; ++i) {
      const float* row = &curves.data[static_cast<size_t>(i) * 6];
      ckpt.curves.push_back(EpochStats{static_cast<int>(row[0]), row[1], row[2],
                                       row[3], row[4], row[5]});
    }
  }
  for (const auto& [name, t] : f.entries)
    if (name.starts_with("param/"))
      ckpt.params.emplace_back(name.substr(6), t);
  return ckpt;
}

void write_curves_csv(const std::vector<EpochStats>& curves,
                      const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << "epoch,train_loss,val_loss,train_acc,val_acc,lr\n";
  for (const auto& e : curves)
    os << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ','
       << e.train_acc << ',' << e.val_acc << ',' << e.lr << '\n';
}

}  // namespace xforge
