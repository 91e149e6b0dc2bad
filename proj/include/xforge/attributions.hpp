#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xforge/classifier.hpp"
#include "xforge/tensor.hpp"

namespace xforge {

// Disjoint total partition of an H x W image into a rows x cols grid of
// rectangular patches; feature indices are row-major over the grid.
struct PatchPartition {
  int rows = 8, cols = 8;
  int height = 32, width = 32;

  static PatchPartition grid(int height, int width, int rows, int cols);

  int feature_count() const { return rows * cols; }
  int feature_of(int y, int x) const {
    return (y / (height / rows)) * cols + x / (width / cols);
  }
};

// Published explanation: channel-aggregated, nonnegative scores over the
// input's spatial extent.
struct AttributionMap {
  Tensor scores;  // (H,W), all >= 0
  std::string method;
  int target_class = 0;
  std::vector<int> input_shape;  // (C,H,W) of the explained input
};

struct BaselineSpec {
  enum class Kind { zero, gaussian, dataset };
  Kind kind = Kind::zero;
  float sigma = 0.0f;  // gaussian noise scale around the input
  int samples = 1;
};

// Channel aggregation (sum of per-channel magnitudes) + clamp to >= 0.
AttributionMap publish(const Tensor& raw_chw, std::string method,
                       int target_class);

// Scalar model output f_class(x); x is (C,H,W).
float eval_class_score(const DifferentiableModel& model, const Tensor& x,
                       int cls);

// --- raw (signed, per-channel, pre-clamp) variants used by axiom checks ---
Tensor saliency_raw(const DifferentiableModel& model, const Tensor& x, int cls);
Tensor integrated_gradients_raw(const DifferentiableModel& model,
                                const Tensor& x, int cls, int steps,
                                const Tensor& baseline);
Tensor gradient_shap_raw(const DifferentiableModel& model, const Tensor& x,
                         int cls, int n_samples, float sigma, int steps,
                         uint32_t seed);
Tensor deeplift_rescale_raw(const DifferentiableModel& model, const Tensor& x,
                            int cls, const Tensor& baseline);
Tensor deeplift_shap_raw(const DifferentiableModel& model, const Tensor& x,
                         int cls, const std::vector<Tensor>& references,
                         int n_samples, uint32_t seed);
// Per-feature Shapley estimates (not yet broadcast to pixels).
std::vector<float> kernel_shap_values(const DifferentiableModel& model,
                                      const Tensor& x, int cls,
                                      const PatchPartition& partition,
                                      int n_coalitions, float ridge,
                                      uint32_t seed);

// --- published methods ---
AttributionMap saliency(const DifferentiableModel& model, const Tensor& x,
                        int cls);
AttributionMap integrated_gradients(const DifferentiableModel& model,
                                    const Tensor& x, int cls, int steps = 64,
                                    const BaselineSpec& baseline = {});
AttributionMap gradient_shap(const DifferentiableModel& model, const Tensor& x,
                             int cls, int n_samples = 8, float sigma = 0.1f,
                             int steps = 8, uint32_t seed = 0);
AttributionMap guided_backprop(const DifferentiableModel& model,
                               const Tensor& x, int cls);
// layer = -1 selects the last convolutional stage.
AttributionMap grad_cam(const DifferentiableModel& model, const Tensor& x,
                        int cls, int layer = -1);
AttributionMap guided_grad_cam(const DifferentiableModel& model,
                               const Tensor& x, int cls, int layer = -1);
AttributionMap deeplift_rescale(const DifferentiableModel& model,
                                const Tensor& x, int cls,
                                const BaselineSpec& baseline = {});
AttributionMap deeplift_shap(const DifferentiableModel& model, const Tensor& x,
                             int cls, const std::vector<Tensor>& references,
                             int n_samples = 4, uint32_t seed = 0);
AttributionMap kernel_shap(const DifferentiableModel& model, const Tensor& x,
                           int cls, const PatchPartition& partition,
                           int n_coalitions, float ridge = 1e-6f,
                           uint32_t seed = 0);

// Names accepted by the CLI and used as AttributionMap tags, fixed order.
const std::vector<std::string>& method_names();

// The K = 8 baseline comparison set (grad_cam participates only through
// guided_grad_cam).
const std::vector<std::string>& baseline_battery();

// Dispatch by tag with per-method defaults; throws listing valid names.
AttributionMap run_method(const std::string& name,
                          const DifferentiableModel& model, const Tensor& x,
                          int cls, const PatchPartition& partition,
                          uint32_t seed = 0, int ig_steps = 64,
                          int shap_coalitions = 0,
                          const std::vector<Tensor>* references = nullptr);

}  // namespace xforge
