#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xforge/attributions.hpp"

namespace xforge {

// Validation instances used to calibrate the per-method weights.
struct CalibrationSet {
  std::vector<int> indices;  // into the validation split
  uint32_t seed = 0;

  // `count` distinct draws from a pool of `pool_size` instances.
  static CalibrationSet draw(int pool_size, int count, uint32_t seed);
};

struct WeightVector {
  std::vector<std::string> methods;
  std::vector<double> weights;    // convex: each in [0,1], sums to 1
  std::vector<double> avg_faith;  // per-method metric averages fed in
  std::vector<double> avg_compx;
  double l1 = 0.6, l2 = 0.4;
};

// Combines per-method average metrics into convex fusion weights:
// min-max normalize each metric across methods, w_k = l1*faith + l2/compx
// (eps-guarded), min-max normalize w, then divide by the sum. Degenerate
// inputs (all methods identical) fall back to uniform weights.
WeightVector calibrate_weights(const std::vector<std::string>& methods,
                               const std::vector<double>& avg_faith,
                               const std::vector<double>& avg_compx,
                               double l1 = 0.6, double l2 = 0.4);

// Pixelwise convex combination of same-shape maps.
AttributionMap weighted_average(const std::vector<AttributionMap>& maps,
                                const WeightVector& weights);

void write_weights_csv(const WeightVector& w, const std::string& path);

}  // namespace xforge
