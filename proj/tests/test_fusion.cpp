#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "xforge/fusion.hpp"

using namespace xforge;

namespace {

AttributionMap map_of(std::vector<float> vals) {
  AttributionMap m;
  m.scores = Tensor({2, 2});
  m.scores.data = std::move(vals);
  m.method = "test";
  return m;
}

}  // namespace

TEST_CASE("calibration draws are distinct, in range and seed-stable") {
  const auto a = CalibrationSet::draw(40, 10, 3);
  CHECK(a.indices.size() == 10);
  auto sorted = a.indices;
  std::sort(sorted.begin(), sorted.end());
  CHECK(std::unique(sorted.begin(), sorted.end()) == sorted.end());
  for (int i : a.indices) {
    CHECK(i >= 0);
    CHECK(i < 40);
  }
  CHECK(a.indices == CalibrationSet::draw(40, 10, 3).indices);
  CHECK(a.indices != CalibrationSet::draw(40, 10, 4).indices);
  CHECK_THROWS_AS(CalibrationSet::draw(5, 10, 0), std::invalid_argument);
}

TEST_CASE("weight calibration degenerate and symmetric cases") {
  const auto one = calibrate_weights({"m"}, {0.8}, {1.2});
  CHECK(one.weights == std::vector<double>{1.0});

  const auto eq = calibrate_weights({"a", "b"}, {0.5, 0.5}, {1.0, 1.0});
  CHECK(eq.weights[0] == doctest::Approx(0.5));
  CHECK(eq.weights[1] == doctest::Approx(0.5));

  const auto w =
      calibrate_weights({"a", "b", "c"}, {0.9, 0.2, 0.5}, {1.0, 2.0, 1.5});
  double sum = 0;
  for (double v : w.weights) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    sum += v;
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  // method a dominates on both metrics -> largest weight
  CHECK(w.weights[0] > w.weights[1]);
  CHECK(w.weights[0] > w.weights[2]);

  CHECK_THROWS_AS(calibrate_weights({"a"}, {0.1}, {0.2}, 1.5, 0.4),
                  std::invalid_argument);
}

TEST_CASE("raising faithfulness never lowers a method's weight rank") {
  std::vector<double> faith = {0.2, 0.5, 0.8};
  const std::vector<double> compx = {1.0, 1.4, 1.2};
  const std::vector<std::string> names = {"a", "b", "c"};
  const auto before = calibrate_weights(names, faith, compx);
  faith[1] = 0.7;  // still between a and c, pre-normalization order kept
  const auto after = calibrate_weights(names, faith, compx);
  const auto rank = [](const std::vector<double>& w, int i) {
    int r = 0;
    for (double v : w)
      if (v > w[i]) ++r;
    return r;
  };
  CHECK(rank(after.weights, 1) <= rank(before.weights, 1));
}

TEST_CASE("weighted average is a convex pixelwise combination") {
  const std::vector<AttributionMap> maps = {map_of({1, 0, 2, 4}),
                                            map_of({3, 2, 0, 4})};
  WeightVector w;
  w.methods = {"a", "b"};
  w.weights = {0.25, 0.75};
  const auto avg = weighted_average(maps, w);
  CHECK(avg.scores.data[0] == doctest::Approx(2.5f));
  CHECK(avg.scores.data[1] == doctest::Approx(1.5f));
  CHECK(avg.scores.data[2] == doctest::Approx(0.5f));
  CHECK(avg.scores.data[3] == doctest::Approx(4.0f));

  // identical maps reproduce themselves; one-hot weights select a map
  const std::vector<AttributionMap> same = {map_of({1, 2, 3, 4}),
                                            map_of({1, 2, 3, 4})};
  w.weights = {0.5, 0.5};
  CHECK(weighted_average(same, w).scores.data == same[0].scores.data);
  w.weights = {0.0, 1.0};
  CHECK(weighted_average(maps, w).scores.data == maps[1].scores.data);

  // convex envelope bound
  w.weights = {0.3, 0.7};
  const auto out = weighted_average(maps, w);
  const float hi = *std::max_element(out.scores.data.begin(),
                                     out.scores.data.end());
  CHECK(hi <= 4.0f + 1e-6f);

  w.weights = {0.4, 0.4};
  CHECK_THROWS_AS(weighted_average(maps, w), std::invalid_argument);
  w.weights = {0.5, 0.5};
  std::vector<AttributionMap> bad = {map_of({1, 2, 3, 4}), map_of({1, 2, 3, 4})};
  bad[1].scores = Tensor({4, 1});
  CHECK_THROWS_AS(weighted_average(bad, w), std::invalid_argument);
}
