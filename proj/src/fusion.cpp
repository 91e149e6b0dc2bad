#include "xforge/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

namespace xforge {

CalibrationSet CalibrationSet::draw(int pool_size, int count, uint32_t seed) {
  if (count < 1 || count > pool_size)
    throw std::invalid_argument("calibration draw of " + std::to_string(count) +
                                " from a pool of " + std::to_string(pool_size));
  std::vector<int> order(pool_size);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(count);
  return CalibrationSet{std::move(order), seed};
}

namespace {

constexpr double kEps = 1e-8;

// min-max to [0,1]; constant vectors map to all-zero (degenerate)
std::vector<double> min_max(const std::vector<double>& v) {
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  std::vector<double> out(v.size(), 0.0);
  if (*hi - *lo <= 0) return out;
  for (size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - *lo) / (*hi - *lo);
  return out;
}

}  // namespace

WeightVector calibrate_weights(const std::vector<std::string>& methods,
                               const std::vector<double>& avg_faith,
                               const std::vector<double>& avg_compx,
                               double l1, double l2) {
  const size_t k = methods.size();
  if (k == 0 || avg_faith.size() != k || avg_compx.size() != k)
    throw std::invalid_argument("calibrate_weights: size mismatch");
  if (l1 < 0 || l1 > 1 || l2 < 0 || l2 > 1)
    throw std::invalid_argument("calibrate_weights: l1, l2 must be in [0,1]");

  WeightVector out;
  out.methods = methods;
  out.avg_faith = avg_faith;
  out.avg_compx = avg_compx;
  out.l1 = l1;
  out.l2 = l2;
  if (k == 1) {
    out.weights = {1.0};
    return out;
  }

  const auto faith_n = min_max(avg_faith);
  const auto compx_n = min_max(avg_compx);
  std::vector<double> w(k);
  for (size_t i = 0; i < k; ++i)
    w[i] = l1 * faith_n[i] + l2 / std::max(compx_n[i], kEps);
  w = min_max(w);
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  if (total <= 0) {
    // all methods indistinguishable on both metrics
    out.weights.assign(k, 1.0 / static_cast<double>(k));
    return out;
  }
  for (auto& v : w) v /= total;
  out.weights = std::move(w);
  return out;
}

AttributionMap weighted_average(const std::vector<AttributionMap>& maps,
                                const WeightVector& weights) {
  if (maps.empty() || maps.size() != weights.weights.size())
    throw std::invalid_argument("weighted_average: map/weight count mismatch");
  const double total = std::accumulate(weights.weights.begin(),
                                       weights.weights.end(), 0.0);
  if (std::fabs(total - 1.0) > 1e-6)
    throw std::invalid_argument("weighted_average: weights sum to " +
                                std::to_string(total) + ", expected 1");
  AttributionMap out;
  out.scores = Tensor(maps[0].scores.shape);
  out.method = "weighted_average";
  out.target_class = maps[0].target_class;
  out.input_shape = maps[0].input_shape;
  for (size_t m = 0; m < maps.size(); ++m) {
    if (maps[m].scores.shape != out.scores.shape)
      throw std::invalid_argument(
          "weighted_average: map " + maps[m].method + " shape " +
          shape_str(maps[m].scores.shape) + " differs from " +
          shape_str(out.scores.shape));
    const float w = static_cast<float>(weights.weights[m]);
    for (int64_t i = 0; i < out.scores.size(); ++i)
      out.scores.data[i] += w * maps[m].scores.data[i];
  }
  for (auto& v : out.scores.data) v = std::max(v, 0.0f);
  return out;
}

void write_weights_csv(const WeightVector& w, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << "method,avg_faith,avg_compx,weight\n";
  for (size_t i = 0; i < w.methods.size(); ++i)
    os << w.methods[i] << ',' << w.avg_faith[i] << ',' << w.avg_compx[i] << ','
       << w.weights[i] << '\n';
}

}  // namespace xforge
