#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xforge/attributions.hpp"

namespace xforge {

// A metric value that may be undefined (e.g. zero-variance correlation).
struct MetricScore {
  double value = 0;
  bool defined = false;
};

struct FaithfulnessConfig {
  int draws = 70;
  int subset_size = 0;  // 0 -> round(0.25 * d)
  float baseline_value = 0.0f;
  PatchPartition partition = PatchPartition::grid(32, 32, 8, 8);
  uint32_t seed = 0;
};

struct SsimParams {
  double dynamic_range = 1.0;  // L
  double c1 = 0.01 * 0.01;     // (0.01 L)^2
  double c2 = 0.03 * 0.03;     // (0.03 L)^2

  static SsimParams for_range(double L);
};

struct StatTestResult {
  double H = 0;
  int dof = 0;
  double p = 1;
  std::vector<std::string> labels;
};

struct SummaryRow {
  std::string method;
  double mean = 0, median = 0, q1 = 0, q3 = 0, min = 0, max = 0;
  int count = 0;           // defined scores
  int undefined_count = 0;
};

// Pearson correlation; undefined when either side has zero variance.
MetricScore pearson(const std::vector<double>& u, const std::vector<double>& v);

// Correlation between subset attribution sums and the model's response to
// zeroing those subsets, over cfg.draws random feature subsets.
MetricScore faithfulness(const DifferentiableModel& model,
                         const AttributionMap& map, const Tensor& x, int cls,
                         const FaithfulnessConfig& cfg);

// Fractional per-feature contribution P_g; rejects all-zero maps.
std::vector<double> attribution_distribution(const Tensor& map,
                                             const PatchPartition& partition);

// Shannon entropy (natural log) of attribution_distribution; in [0, ln d].
double complexity(const Tensor& map, const PatchPartition& partition);

// Global-window SSIM over two same-shape maps.
double ssim(const Tensor& x, const Tensor& y, const SsimParams& params = {});

// Rank-based H with tie correction; p from the chi-square upper tail.
StatTestResult kruskal_wallis(const std::vector<std::vector<double>>& groups);

// Regularized upper incomplete gamma Q(a, x) = chi-square upper tail helper.
double chi_square_upper_tail(double statistic, int dof);

SummaryRow summarize(const std::string& method,
                     const std::vector<MetricScore>& scores);

struct MetricRow {
  int instance_id = 0;
  std::string method;
  MetricScore faith;
  double compx = 0;
};

void write_metric_rows_csv(const std::vector<MetricRow>& rows,
                           const std::string& path);
void write_summary_csv(const std::vector<SummaryRow>& rows,
                       const std::string& path);

}  // namespace xforge
