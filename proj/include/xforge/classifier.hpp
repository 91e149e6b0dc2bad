#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xforge/datasets.hpp"
#include "xforge/tape.hpp"

namespace xforge {

// Anything the attribution methods can explain: records its forward pass on
// a caller-supplied tape and exposes the logits node.
class DifferentiableModel {
 public:
  virtual ~DifferentiableModel() = default;
  virtual std::vector<int> input_shape() const = 0;  // (C,H,W)
  virtual int class_count() const = 0;
  // input_node holds a (N,C,H,W) batch already on the tape. conv_taps, when
  // given, receives one convolutional activation node per stage (for
  // Grad-CAM).
  virtual int record_forward(BasicTape<float>& tape, int input_node,
                             std::vector<int>* conv_taps = nullptr) const = 0;
};

struct ClassifierConfig {
  std::vector<int> input_shape = {1, 32, 32};  // (C,H,W)
  int residual_blocks = 2;                     // one block per stage
  int base_width = 8;
  int classes = 3;
};

struct TrainSchedule {
  float initial_lr = 1e-2f;
  int max_epochs = 30;
  int hold_epochs = 10;   // lr held flat this long
  int decay_every = 10;   // then multiplied by decay_factor on this cadence
  float decay_factor = 0.1f;
  int patience = 5;       // early stop on validation loss
  int batch_size = 32;
  uint32_t seed = 0;
};

// Pure schedule function, unit-tested on its own.
float learning_rate_at(const TrainSchedule& s, int epoch);

struct EpochStats {
  int epoch = 0;
  double train_loss = 0, val_loss = 0;
  double train_acc = 0, val_acc = 0;
  float lr = 0;
};

class Classifier : public DifferentiableModel {
 public:
  Classifier() = default;
  // Residual CNN: stem conv -> per stage (entry conv, conv-relu-conv + skip,
  // 2x avgpool) -> global average pool -> dense logits.
  static Classifier build(const ClassifierConfig& config, uint32_t seed = 0);

  std::vector<int> input_shape() const override {
    return config_.input_shape;
  }
  int class_count() const override { return config_.classes; }
  int record_forward(BasicTape<float>& tape, int input_node,
                     std::vector<int>* conv_taps = nullptr) const override;

  // Same recording but also reports the tape node id of every parameter.
  int record_forward_params(BasicTape<float>& tape, int input_node,
                            std::vector<int>& param_nodes,
                            std::vector<int>* conv_taps = nullptr) const;

  Tensor predict_logits(const Tensor& batch) const;  // (N,C,H,W) -> (N,classes)
  float predict_class_score(const Tensor& x, int cls) const;  // pre-softmax logit
  int predict_class(const Tensor& x) const;

  const ClassifierConfig& config() const { return config_; }
  std::vector<Tensor>& params() { return params_; }
  const std::vector<Tensor>& params() const { return params_; }
  const std::vector<std::string>& param_names() const { return param_names_; }
  int64_t parameter_count() const;

 private:
  ClassifierConfig config_;
  std::vector<Tensor> params_;
  std::vector<std::string> param_names_;
};

struct Checkpoint {
  ClassifierConfig config;
  std::vector<std::pair<std::string, Tensor>> params;
  std::vector<EpochStats> curves;
  double best_val_loss = 0;
  double test_accuracy = -1;  // -1 when not evaluated

  Classifier to_classifier() const;
};

Checkpoint train_classifier(Classifier& model, const DatasetSplit& split,
                            const TrainSchedule& schedule,
                            const AugmentConfig& augment_cfg);

double evaluate_accuracy(const Classifier& model,
                         const std::vector<ImageRecord>& records);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

void write_curves_csv(const std::vector<EpochStats>& curves,
                      const std::string& path);

}  // namespace xforge
