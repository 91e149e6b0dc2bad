#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "xforge/fusion.hpp"
#include "xforge/metrics.hpp"

namespace xforge {

struct LossWeights {
  float l1 = 0.5f;       // faithfulness
  float l2 = 0.3f;       // complexity
  float l3 = 0.2f;       // similarity
  float lambda1 = 0.5f;  // low-resolution similarity share
  float lambda2 = 0.5f;  // high-resolution similarity share
};

struct ExplanationPair {
  Tensor lr;  // (H,W), > 0
  Tensor hr;  // (2H,2W), > 0
};

// 2-down/2-up U-Net over the stacked explanation channels, with a 1x1-conv
// low-resolution head and a stride-2 transposed-conv high-resolution head,
// both through softplus.
class OptimizerNet {
 public:
  OptimizerNet() = default;
  static OptimizerNet build(int in_channels, int base_width, uint32_t seed = 0);

  // input (1, in_channels, H, W), H and W divisible by 4 -> {lr, hr} nodes
  std::pair<int, int> record_forward(Tape& tape, int input) const;
  std::pair<int, int> record_forward_params(Tape& tape, int input,
                                            std::vector<int>& param_nodes) const;

  ExplanationPair infer(const Tensor& stacked) const;  // (C,H,W) input

  int in_channels() const { return in_channels_; }
  int base_width() const { return base_width_; }
  std::vector<Tensor>& params() { return params_; }
  const std::vector<Tensor>& params() const { return params_; }
  const std::vector<std::string>& param_names() const { return names_; }

 private:
  int in_channels_ = 0, base_width_ = 0;
  std::vector<Tensor> params_;
  std::vector<std::string> names_;
};

void save_optimizer_net(const OptimizerNet& net, const std::string& path);
OptimizerNet load_optimizer_net(const std::string& path);

// Channel stack of the K maps followed by the weighted average, each channel
// min-max normalized to [0,1] (all-zero channels stay zero).
Tensor stack_inputs(const std::vector<AttributionMap>& maps,
                    const AttributionMap& wet);

// Catmull-Rom bicubic 2x upsampling with half-pixel alignment.
Tensor upsample2x_reference(const Tensor& map);

// Frozen perturbation pool for the in-loss faithfulness estimator: subset
// masks and the (constant) model response deltas for each draw.
struct FaithPool {
  std::vector<Tensor> masks;  // (H,W) 0/1 subset indicators
  std::vector<float> deltas;  // f(x) - f(x[S <- baseline])
};

FaithPool build_faith_pool(const DifferentiableModel& model, const Tensor& x,
                           int cls, const FaithfulnessConfig& cfg);

struct LossTerms {
  double total = 0;
  double faith = 0;   // correlation, in [-1,1] when defined
  double compx = 0;   // entropy over the partition
  double sim_lr = 0;  // 1 - SSIM(lr, wet)
  double sim_hr = 0;  // 1 - SSIM(hr, upsampled wet)
  bool faith_defined = false;
};

// Records loss = -l1*faith + l2*compx + l3*(lambda1*sim_lr + lambda2*sim_hr)
// as a differentiable graph over the lr/hr nodes. `draw_ids` selects pool
// entries for this step; deltas enter as constants. Returns the loss node and
// fills `terms` with the recorded values.
int record_composite_loss(Tape& tape, int lr_node, int hr_node,
                          const Tensor& wet_norm, const Tensor& wet_up_norm,
                          const FaithPool& pool,
                          const std::vector<int>& draw_ids,
                          const PatchPartition& partition,
                          const LossWeights& weights, LossTerms* terms);

// Value-level wrapper over a fresh pool (all draws used once).
LossTerms composite_loss(const Tensor& lr_map, const Tensor& hr_map,
                         const AttributionMap& wet,
                         const DifferentiableModel& model, const Tensor& x,
                         int cls, const LossWeights& weights,
                         const FaithfulnessConfig& faith_cfg);

struct OptimizerSchedule {
  float initial_lr = 5e-3f;
  int max_epochs = 150;
  int patience = 10;
  int patience_after = 90;  // early stopping engages after this epoch
  int faith_draws_per_step = 16;
  uint32_t seed = 0;
};

// learning-rate grid searched by the CLI front end
const std::vector<float>& optimizer_lr_grid();

// Everything precomputed for one training instance (classifier frozen).
struct TrainInstance {
  int instance_id = 0;
  int cls = 0;
  Tensor stacked;      // (K+1,H,W) net input
  Tensor wet_norm;     // (H,W) similarity target
  Tensor wet_up_norm;  // (2H,2W)
  FaithPool pool;
};

TrainInstance prepare_instance(const DifferentiableModel& model,
                               const Tensor& x, int cls,
                               const std::vector<AttributionMap>& maps,
                               const AttributionMap& wet,
                               const FaithfulnessConfig& faith_cfg,
                               int instance_id = 0);

struct OptimizerRun {
  std::vector<double> train_loss;               // per epoch
  std::vector<double> val_loss;                 // per epoch
  std::vector<std::vector<double>> class_val_loss;  // [class][epoch]
  std::vector<int> class_ids;
  double best_val_loss = 0;
};

OptimizerRun train_optimizer(OptimizerNet& net,
                             const std::vector<TrainInstance>& train,
                             const std::vector<TrainInstance>& val,
                             const PatchPartition& partition,
                             const LossWeights& weights,
                             const OptimizerSchedule& schedule);

ExplanationPair explain_optimal(const OptimizerNet& net, const Tensor& stacked);

void write_class_curves_csv(const OptimizerRun& run, const std::string& path);

}  // namespace xforge
