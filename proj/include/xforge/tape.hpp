#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "xforge/kernels.hpp"
#include "xforge/tensor.hpp"

namespace xforge {

enum class OpKind {
  leaf,
  dense,            // x (N,Cin), w (Cout,Cin) [, b (Cout)]
  conv2d,           // x (N,C,H,W), k (F,C,kh,kw) [, b (F)], stride 1, same pad
  tconv2d,          // x (N,C,H,W), k (C,F,kh,kw) [, b (F)], stride 2 -> 2H x 2W
  relu,
  leaky_relu,       // params.alpha
  maxpool2x2,
  avgpool,          // params.window, stride = window
  bilinear_up2x,
  concat_channels,  // two rank-4 inputs along axis 1
  add,
  sub,
  mul,
  divide,
  scalar_mul,       // params.alpha
  sum,              // all elements -> (1)
  mean,             // all elements -> (1)
  abs_val,
  log_eps,          // ln(x + 1e-12)
  exp_val,
  sqrt_eps,
  softplus,
  sigmoid,
  softmax,          // over last axis
  reshape,          // params.dims, element count preserved
};

const char* op_name(OpKind k);

struct OpParams {
  float alpha = 0.0f;      // scalar_mul factor / leaky slope
  int window = 0;          // avgpool window
  std::vector<int> dims;   // reshape target
};

// Output shape as a pure function of input shapes + params. Throws
// std::invalid_argument naming the op and the offending extents.
std::vector<int> infer_shape(OpKind kind,
                             const std::vector<std::vector<int>>& in,
                             const OpParams& params);

enum class GradMode { standard, guided };

constexpr double kLogEps = 1e-12;

// Recording tape. Single-owner during recording; backward is const and may
// run repeatedly. T = float in production, double in the oracle shadow.
template <typename T>
class BasicTape {
 public:
  struct Node {
    OpKind kind = OpKind::leaf;
    std::vector<int> parents;
    OpParams params;
    BasicTensor<T> value;
  };

  int leaf(BasicTensor<T> v) {
    nodes_.push_back(Node{OpKind::leaf, {}, {}, std::move(v)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  int apply(OpKind kind, const std::vector<int>& inputs, OpParams params = {});

  const BasicTensor<T>& value(int id) const { return nodes_.at(id).value; }
  const Node& node(int id) const { return nodes_.at(id); }
  int size() const { return static_cast<int>(nodes_.size()); }

  bool contains(OpKind k) const {
    for (const auto& n : nodes_)
      if (n.kind == k) return true;
    return false;
  }

  // dLoss/dv for every recorded value; loss must be scalar.
  std::vector<BasicTensor<T>> backward(int loss,
                                       GradMode mode = GradMode::standard) const;

  // DeepLift rescale multipliers; `reference` must be the same recording
  // evaluated at the baseline input (identical node structure).
  std::vector<BasicTensor<T>> deeplift_multipliers(
      int loss, const BasicTape<T>& reference) const;

 private:
  std::vector<Node> nodes_;

  void accumulate_parent_grads(const Node& n,
                               const BasicTensor<T>& gout,
                               GradMode mode,
                               const BasicTape<T>* reference,
                               std::vector<BasicTensor<T>>& grads) const;
};

using Tape = BasicTape<float>;

// Convenience wrapper matching the apply_op contract: evaluates one op
// outside any persistent graph.
template <typename T>
BasicTensor<T> eval_op(OpKind kind, std::initializer_list<BasicTensor<T>> inputs,
                       OpParams params = {}) {
  BasicTape<T> tape;
  std::vector<int> ids;
  ids.reserve(inputs.size());
  for (const auto& t : inputs) ids.push_back(tape.leaf(t));
  return tape.value(tape.apply(kind, ids, std::move(params)));
}

// Central finite differences of a scalar-valued function; the test oracle.
template <typename T>
BasicTensor<T> finite_difference_gradient(
    const std::function<T(const BasicTensor<T>&)>& f, const BasicTensor<T>& x,
    T step) {
  if (!(step > T(0))) throw std::invalid_argument("fd step must be positive");
  BasicTensor<T> g(x.shape);
  BasicTensor<T> probe = x;
  for (int64_t i = 0; i < x.size(); ++i) {
    const T orig = probe.at(i);
    probe.at(i) = orig + step;
    const T fp = f(probe);
    probe.at(i) = orig - step;
    const T fm = f(probe);
    probe.at(i) = orig;
    if (!std::isfinite(static_cast<double>(fp)) ||
        !std::isfinite(static_cast<double>(fm)))
      throw std::runtime_error("finite_difference_gradient: non-finite eval");
    g.at(i) = (fp - fm) / (T(2) * step);
  }
  return g;
}

extern template class BasicTape<float>;
extern template class BasicTape<double>;

}  // namespace xforge
