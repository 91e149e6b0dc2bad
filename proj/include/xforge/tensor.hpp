#pragma once

#include <cstdint>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace xforge {

// Dense row-major N-rank array. Scalar is float in production; the test
// oracles instantiate the same code with double.
template <typename T>
struct BasicTensor {
  std::vector<int> shape;
  std::vector<T> data;

  BasicTensor() = default;
  explicit BasicTensor(std::vector<int> s, T fill = T(0))
      : shape(std::move(s)), data(static_cast<size_t>(count(shape)), fill) {
    for (int e : shape)
      if (e <= 0) throw std::invalid_argument("tensor extent must be positive");
  }
  BasicTensor(std::vector<int> s, std::vector<T> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != static_cast<size_t>(count(shape)))
      throw std::invalid_argument("tensor data length does not match shape");
  }

  static int64_t count(const std::vector<int>& s) {
    int64_t n = 1;
    for (int e : s) n *= e;
    return n;
  }
  int64_t size() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int extent(int axis) const { return shape.at(static_cast<size_t>(axis)); }

  T& at(int64_t i) { return data[static_cast<size_t>(i)]; }
  const T& at(int64_t i) const { return data[static_cast<size_t>(i)]; }

  bool same_shape(const BasicTensor& o) const { return shape == o.shape; }

  template <typename U>
  BasicTensor<U> cast() const {
    BasicTensor<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

using Tensor = BasicTensor<float>;

inline std::string shape_str(const std::vector<int>& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

template <typename T>
BasicTensor<T> random_tensor(std::vector<int> shape, std::mt19937& rng,
                             T lo = T(-1), T hi = T(1)) {
  BasicTensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> dist(static_cast<double>(lo),
                                              static_cast<double>(hi));
  for (auto& v : t.data) v = static_cast<T>(dist(rng));
  return t;
}

}  // namespace xforge
