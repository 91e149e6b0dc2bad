#include "xforge/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

namespace xforge {

SsimParams SsimParams::for_range(double L) {
  if (!(L > 0)) throw std::invalid_argument("ssim dynamic range must be > 0");
  return SsimParams{L, (0.01 * L) * (0.01 * L), (0.03 * L) * (0.03 * L)};
}

MetricScore pearson(const std::vector<double>& u,
                    const std::vector<double>& v) {
  if (u.size() != v.size())
    throw std::invalid_argument("pearson: length mismatch");
  const size_t n = u.size();
  if (n < 3) throw std::invalid_argument("pearson needs >= 3 observations");
  double mu = 0, mv = 0;
  for (size_t i = 0; i < n; ++i) mu += u[i], mv += v[i];
  mu /= static_cast<double>(n);
  mv /= static_cast<double>(n);
  double suu = 0, svv = 0, suv = 0;
  for (size_t i = 0; i < n; ++i) {
    const double du = u[i] - mu, dv = v[i] - mv;
    suu += du * du;
    svv += dv * dv;
    suv += du * dv;
  }
  if (suu <= 0 || svv <= 0) return {0, false};
  return {suv / std::sqrt(suu * svv), true};
}

MetricScore faithfulness(const DifferentiableModel& model,
                         const AttributionMap& map, const Tensor& x, int cls,
                         const FaithfulnessConfig& cfg) {
  const auto& part = cfg.partition;
  const int d = part.feature_count();
  if (x.rank() != 3 || x.shape[1] != part.height || x.shape[2] != part.width)
    throw std::invalid_argument("faithfulness: input " + shape_str(x.shape) +
                                " does not match the partition extent");
  if (map.scores.shape != std::vector<int>{part.height, part.width})
    throw std::invalid_argument("faithfulness: map shape " +
                                shape_str(map.scores.shape) +
                                " does not match the partition extent");
  const int k = cfg.subset_size > 0
                    ? cfg.subset_size
                    : static_cast<int>(std::lround(0.25 * d));
  if (k < 1 || k >= d)
    throw std::invalid_argument("faithfulness: subset size " +
                                std::to_string(k) + " must be in [1, d)");
  if (cfg.draws < 3)
    throw std::invalid_argument("faithfulness needs >= 3 perturbation draws");

  // per-feature attribution aggregates
  std::vector<double> feat(d, 0.0);
  for (int y = 0; y < part.height; ++y)
    for (int c = 0; c < part.width; ++c)
      feat[part.feature_of(y, c)] += map.scores.data[y * part.width + c];

  const double base = eval_class_score(model, x, cls);
  std::mt19937 rng(cfg.seed);
  std::vector<int> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> sums, deltas;
  Tensor pert = x;
  const int C = x.shape[0];
  for (int t = 0; t < cfg.draws; ++t) {
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<char> on(d, 0);
    double s = 0;
    for (int j = 0; j < k; ++j) {
      on[order[j]] = 1;
      s += feat[order[j]];
    }
    pert.data = x.data;
    for (int y = 0; y < part.height; ++y)
      for (int c = 0; c < part.width; ++c)
        if (on[part.feature_of(y, c)])
          for (int ch = 0; ch < C; ++ch)
            pert.data[(ch * part.height + y) * part.width + c] =
                cfg.baseline_value;
    sums.push_back(s);
    deltas.push_back(base - eval_class_score(model, pert, cls));
  }
  return pearson(sums, deltas);
}

std::vector<double> attribution_distribution(const Tensor& map,
                                             const PatchPartition& partition) {
  if (map.shape != std::vector<int>{partition.height, partition.width})
    throw std::invalid_argument("attribution map " + shape_str(map.shape) +
                                " does not match the partition extent");
  const int d = partition.feature_count();
  std::vector<double> g(d, 0.0);
  double total = 0;
  for (int y = 0; y < partition.height; ++y)
    for (int c = 0; c < partition.width; ++c) {
      const double v = std::fabs(map.data[y * partition.width + c]);
      g[partition.feature_of(y, c)] += v;
      total += v;
    }
  if (total <= 0)
    throw std::invalid_argument(
        "attribution distribution undefined for an all-zero map");
  for (auto& v : g) v /= total;
  return g;
}

double complexity(const Tensor& map, const PatchPartition& partition) {
  const auto p = attribution_distribution(map, partition);
  double h = 0;
  for (double v : p)
    if (v > 0) h -= v * std::log(v);
  return h;
}

double ssim(const Tensor& x, const Tensor& y, const SsimParams& params) {
  if (x.shape != y.shape)
    throw std::invalid_argument("ssim: shape mismatch " + shape_str(x.shape) +
                                " vs " + shape_str(y.shape));
  const int64_t n = x.size();
  if (n < 2) throw std::invalid_argument("ssim needs >= 2 elements");
  double mx = 0, my = 0;
  for (int64_t i = 0; i < n; ++i) mx += x.data[i], my += y.data[i];
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double vx = 0, vy = 0, cov = 0;
  for (int64_t i = 0; i < n; ++i) {
    const double dx = x.data[i] - mx, dy = y.data[i] - my;
    vx += dx * dx;
    vy += dy * dy;
    cov += dx * dy;
  }
  vx /= static_cast<double>(n - 1);
  vy /= static_cast<double>(n - 1);
  cov /= static_cast<double>(n - 1);
  return ((2 * mx * my + params.c1) * (2 * cov + params.c2)) /
         ((mx * mx + my * my + params.c1) * (vx + vy + params.c2));
}

namespace {

// regularized incomplete gamma: P by series, Q by continued fraction
double gamma_p_series(double a, double x) {
  double term = 1.0 / a, sum = term, ap = a;
  for (int i = 0; i < 500; ++i) {
    ap += 1;
    term *= x / ap;
    sum += term;
    if (std::fabs(term) < std::fabs(sum) * 1e-15) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

double gamma_q_contfrac(double a, double x) {
  const double tiny = 1e-300;
  double b = x + 1 - a, c = 1 / tiny, d = 1 / b, h = d;
  for (int i = 1; i <= 500; ++i) {
    const double an = -i * (i - a);
    b += 2;
    d = an * d + b;
    if (std::fabs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < 1e-15) break;
  }
  return h * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

}  // namespace

double chi_square_upper_tail(double statistic, int dof) {
  if (dof < 1) throw std::invalid_argument("chi-square dof must be >= 1");
  if (statistic <= 0) return 1.0;
  const double a = dof / 2.0, x = statistic / 2.0;
  const double q = (x < a + 1.0) ? 1.0 - gamma_p_series(a, x)
                                 : gamma_q_contfrac(a, x);
  return std::clamp(q, 0.0, 1.0);
}

StatTestResult kruskal_wallis(const std::vector<std::vector<double>>& groups) {
  if (groups.size() < 2)
    throw std::invalid_argument("kruskal-wallis needs >= 2 groups");
  size_t N = 0;
  for (const auto& g : groups) {
    if (g.size() < 2)
      throw std::invalid_argument(
          "kruskal-wallis needs >= 2 observations per group");
    N += g.size();
  }
  struct Obs {
    double v;
    int group;
  };
  std::vector<Obs> all;
  all.reserve(N);
  for (size_t gi = 0; gi < groups.size(); ++gi)
    for (double v : groups[gi]) all.push_back({v, static_cast<int>(gi)});
  std::sort(all.begin(), all.end(),
            [](const Obs& a, const Obs& b) { return a.v < b.v; });

  std::vector<double> rank(N);
  double tie_sum = 0;
  for (size_t i = 0; i < N;) {
    size_t j = i;
    while (j < N && all[j].v == all[i].v) ++j;
    const double avg = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (size_t t = i; t < j; ++t) rank[t] = avg;
    const double ties = static_cast<double>(j - i);
    tie_sum += ties * ties * ties - ties;
    i = j;
  }

  std::vector<double> rank_sum(groups.size(), 0.0);
  for (size_t i = 0; i < N; ++i) rank_sum[all[i].group] += rank[i];
  const double n = static_cast<double>(N);
  double h = 0;
  for (size_t gi = 0; gi < groups.size(); ++gi)
    h += rank_sum[gi] * rank_sum[gi] / static_cast<double>(groups[gi].size());
  h = 12.0 / (n * (n + 1.0)) * h - 3.0 * (n + 1.0);
  const double correction = 1.0 - tie_sum / (n * n * n - n);
  StatTestResult res;
  res.dof = static_cast<int>(groups.size()) - 1;
  if (correction <= 0) {  // every observation identical
    res.H = 0;
    res.p = 1;
    return res;
  }
  res.H = std::max(h / correction, 0.0);
  res.p = chi_square_upper_tail(res.H, res.dof);
  return res;
}

SummaryRow summarize(const std::string& method,
                     const std::vector<MetricScore>& scores) {
  SummaryRow row;
  row.method = method;
  std::vector<double> vals;
  for (const auto& s : scores)
    s.defined ? vals.push_back(s.value) : void(++row.undefined_count);
  row.count = static_cast<int>(vals.size());
  if (vals.empty()) return row;
  std::sort(vals.begin(), vals.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(vals.size() - 1);
    const size_t lo = static_cast<size_t>(pos);
    const size_t hi = std::min(lo + 1, vals.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return vals[lo] * (1 - frac) + vals[hi] * frac;
  };
  row.mean = std::accumulate(vals.begin(), vals.end(), 0.0) /
             static_cast<double>(vals.size());
  row.median = quantile(0.5);
  row.q1 = quantile(0.25);
  row.q3 = quantile(0.75);
  row.min = vals.front();
  row.max = vals.back();
  return row;
}

void write_metric_rows_csv(const std::vector<MetricRow>& rows,
                           const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << "instance_id,method,faithfulness,complexity,undefined_flag\n";
  for (const auto& r : rows) {
    os << r.instance_id << ',' << r.method << ',';
    if (r.faith.defined)
      os << r.faith.value;
    os << ',' << r.compx << ',' << (r.faith.defined ? 0 : 1) << '\n';
  }
}

void write_summary_csv(const std::vector<SummaryRow>& rows,
                       const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << "method,mean,median,q1,q3,min,max,count,undefined_count\n";
  for (const auto& r : rows)
    os << r.method << ',' << r.mean << ',' << r.median << ',' << r.q1 << ','
       << r.q3 << ',' << r.min << ',' << r.max << ',' << r.count << ','
       << r.undefined_count << '\n';
}

}  // namespace xforge
