#include "xforge/tape.hpp"

#include <algorithm>
#include <cmath>

namespace xforge {

bool& kernels::run_parallel() {
  static bool enabled = true;
  return enabled;
}

const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::leaf: return "leaf";
    case OpKind::dense: return "dense";
    case OpKind::conv2d: return "conv2d";
    case OpKind::tconv2d: return "transposed_conv2d";
    case OpKind::relu: return "relu";
    case OpKind::leaky_relu: return "leaky_relu";
    case OpKind::maxpool2x2: return "maxpool2x2";
    case OpKind::avgpool: return "avgpool";
    case OpKind::bilinear_up2x: return "bilinear_upsample2x";
    case OpKind::concat_channels: return "concat_channels";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::divide: return "div";
    case OpKind::scalar_mul: return "scalar_mul";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::abs_val: return "abs";
    case OpKind::log_eps: return "log";
    case OpKind::exp_val: return "exp";
    case OpKind::sqrt_eps: return "sqrt";
    case OpKind::softplus: return "softplus";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::softmax: return "softmax";
    case OpKind::reshape: return "reshape";
  }
  return "?";
}

namespace {

[[noreturn]] void shape_error(OpKind kind, const std::string& detail) {
  throw std::invalid_argument(std::string(op_name(kind)) + ": " + detail);
}

void require(bool ok, OpKind kind, const std::string& detail) {
  if (!ok) shape_error(kind, detail);
}

}  // namespace

std::vector<int> infer_shape(OpKind kind,
                             const std::vector<std::vector<int>>& in,
                             const OpParams& params) {
  auto arity = [&](size_t lo, size_t hi) {
    require(in.size() >= lo && in.size() <= hi, kind,
            "expected " + std::to_string(lo) + ".." + std::to_string(hi) +
                " inputs, got " + std::to_string(in.size()));
  };
  switch (kind) {
    case OpKind::leaf:
      shape_error(kind, "leaf has no shape rule");
    case OpKind::dense: {
      arity(2, 3);
      require(in[0].size() == 2 && in[1].size() == 2, kind,
              "wants rank-2 x and w, got " + shape_str(in[0]) + " " +
                  shape_str(in[1]));
      require(in[0][1] == in[1][1], kind,
              "inner extents differ: x " + shape_str(in[0]) + " vs w " +
                  shape_str(in[1]));
      if (in.size() == 3)
        require(in[2] == std::vector<int>{in[1][0]}, kind,
                "bias shape " + shape_str(in[2]));
      return {in[0][0], in[1][0]};
    }
    case OpKind::conv2d: {
      arity(2, 3);
      require(in[0].size() == 4 && in[1].size() == 4, kind,
              "wants rank-4 x and k, got " + shape_str(in[0]) + " " +
                  shape_str(in[1]));
      require(in[0][1] == in[1][1], kind,
              "channel mismatch: x " + shape_str(in[0]) + " vs k " +
                  shape_str(in[1]));
      if (in.size() == 3)
        require(in[2] == std::vector<int>{in[1][0]}, kind,
                "bias shape " + shape_str(in[2]));
      return {in[0][0], in[1][0], in[0][2], in[0][3]};
    }
    case OpKind::tconv2d: {
      arity(2, 3);
      require(in[0].size() == 4 && in[1].size() == 4, kind,
              "wants rank-4 x and k");
      require(in[0][1] == in[1][0], kind,
              "channel mismatch: x " + shape_str(in[0]) + " vs k " +
                  shape_str(in[1]));
      require(in[1][2] >= 2 && in[1][2] % 2 == 0 && in[1][2] == in[1][3], kind,
              "kernel must be square with even extent, got " +
                  shape_str(in[1]));
      if (in.size() == 3)
        require(in[2] == std::vector<int>{in[1][1]}, kind,
                "bias shape " + shape_str(in[2]));
      return {in[0][0], in[1][1], 2 * in[0][2], 2 * in[0][3]};
    }
    case OpKind::maxpool2x2: {
      arity(1, 1);
      require(in[0].size() == 4 && in[0][2] % 2 == 0 && in[0][3] % 2 == 0, kind,
              "wants rank-4 with even spatial extents, got " +
                  shape_str(in[0]));
      return {in[0][0], in[0][1], in[0][2] / 2, in[0][3] / 2};
    }
    case OpKind::avgpool: {
      arity(1, 1);
      const int p = params.window;
      require(p >= 1, kind, "window must be >= 1");
      require(in[0].size() == 4 && in[0][2] % p == 0 && in[0][3] % p == 0, kind,
              "spatial extents of " + shape_str(in[0]) +
                  " not divisible by window " + std::to_string(p));
      return {in[0][0], in[0][1], in[0][2] / p, in[0][3] / p};
    }
    case OpKind::bilinear_up2x: {
      arity(1, 1);
      require(in[0].size() == 4, kind, "wants rank-4, got " + shape_str(in[0]));
      return {in[0][0], in[0][1], 2 * in[0][2], 2 * in[0][3]};
    }
    case OpKind::concat_channels: {
      arity(2, 2);
      require(in[0].size() == 4 && in[1].size() == 4, kind, "wants rank-4");
      require(in[0][0] == in[1][0] && in[0][2] == in[1][2] &&
                  in[0][3] == in[1][3],
              kind,
              "non-channel extents differ: " + shape_str(in[0]) + " vs " +
                  shape_str(in[1]));
      return {in[0][0], in[0][1] + in[1][1], in[0][2], in[0][3]};
    }
    case OpKind::add:
    case OpKind::sub:
    case OpKind::mul:
    case OpKind::divide: {
      arity(2, 2);
      require(in[0] == in[1], kind,
              "shape mismatch: " + shape_str(in[0]) + " vs " +
                  shape_str(in[1]));
      return in[0];
    }
    case OpKind::sum:
    case OpKind::mean: {
      arity(1, 1);
      return {1};
    }
    case OpKind::softmax: {
      arity(1, 1);
      require(!in[0].empty(), kind, "wants rank >= 1");
      return in[0];
    }
    case OpKind::reshape: {
      arity(1, 1);
      require(BasicTensor<float>::count(params.dims) ==
                  BasicTensor<float>::count(in[0]),
              kind,
              "cannot reshape " + shape_str(in[0]) + " to " +
                  shape_str(params.dims));
      return params.dims;
    }
    default: {  // elementwise unary
      arity(1, 1);
      return in[0];
    }
  }
}

namespace {

template <typename T>
void bilinear_up2x_forward(const BasicTensor<T>& x, BasicTensor<T>& out) {
  const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  const int OH = 2 * H, OW = 2 * W;
  // Half-pixel mapping with edge clamp; weights sum to 1, so constant
  // fields are preserved exactly.
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* src = &x.data[((n * C + c) * H) * W];
      T* dst = &out.data[((n * C + c) * OH) * OW];
      for (int oh = 0; oh < OH; ++oh) {
        const double fy = (oh + 0.5) / 2.0 - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        double wy = fy - y0;
        if (y0 < 0) { y0 = 0; wy = 0; }
        int y1 = std::min(y0 + 1, H - 1);
        for (int ow = 0; ow < OW; ++ow) {
          const double fx = (ow + 0.5) / 2.0 - 0.5;
          int x0 = static_cast<int>(std::floor(fx));
          double wx = fx - x0;
          if (x0 < 0) { x0 = 0; wx = 0; }
          int x1 = std::min(x0 + 1, W - 1);
          const double v =
              (1 - wy) * ((1 - wx) * src[y0 * W + x0] + wx * src[y0 * W + x1]) +
              wy * ((1 - wx) * src[y1 * W + x0] + wx * src[y1 * W + x1]);
          dst[oh * OW + ow] = static_cast<T>(v);
        }
      }
    }
}

template <typename T>
void bilinear_up2x_backward(const BasicTensor<T>& gout, BasicTensor<T>& gx) {
  const int N = gx.shape[0], C = gx.shape[1], H = gx.shape[2], W = gx.shape[3];
  const int OH = 2 * H, OW = 2 * W;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      T* dst = &gx.data[((n * C + c) * H) * W];
      const T* src = &gout.data[((n * C + c) * OH) * OW];
      for (int oh = 0; oh < OH; ++oh) {
        const double fy = (oh + 0.5) / 2.0 - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        double wy = fy - y0;
        if (y0 < 0) { y0 = 0; wy = 0; }
        int y1 = std::min(y0 + 1, H - 1);
        for (int ow = 0; ow < OW; ++ow) {
          const double fx = (ow + 0.5) / 2.0 - 0.5;
          int x0 = static_cast<int>(std::floor(fx));
          double wx = fx - x0;
          if (x0 < 0) { x0 = 0; wx = 0; }
          int x1 = std::min(x0 + 1, W - 1);
          const double g = src[oh * OW + ow];
          dst[y0 * W + x0] += static_cast<T>((1 - wy) * (1 - wx) * g);
          dst[y0 * W + x1] += static_cast<T>((1 - wy) * wx * g);
          dst[y1 * W + x0] += static_cast<T>(wy * (1 - wx) * g);
          dst[y1 * W + x1] += static_cast<T>(wy * wx * g);
        }
      }
    }
}

template <typename T>
void check_finite(const BasicTensor<T>& t, OpKind kind) {
  for (const T& v : t.data)
    if (!std::isfinite(static_cast<double>(v)))
      throw std::runtime_error(std::string(op_name(kind)) +
                               ": produced non-finite value");
}

}  // namespace

template <typename T>
int BasicTape<T>::apply(OpKind kind, const std::vector<int>& inputs,
                        OpParams params) {
  std::vector<std::vector<int>> in_shapes;
  in_shapes.reserve(inputs.size());
  for (int id : inputs) in_shapes.push_back(nodes_.at(id).value.shape);
  BasicTensor<T> out(infer_shape(kind, in_shapes, params));

  auto& A = nodes_[inputs.empty() ? 0 : inputs[0]].value;
  switch (kind) {
    case OpKind::dense: {
      const BasicTensor<T>* bias =
          inputs.size() == 3 ? &nodes_[inputs[2]].value : nullptr;
      kernels::dense_forward(A, nodes_[inputs[1]].value, bias, out);
      break;
    }
    case OpKind::conv2d: {
      const BasicTensor<T>* bias =
          inputs.size() == 3 ? &nodes_[inputs[2]].value : nullptr;
      kernels::conv2d_forward(A, nodes_[inputs[1]].value, bias, out);
      break;
    }
    case OpKind::tconv2d: {
      const BasicTensor<T>* bias =
          inputs.size() == 3 ? &nodes_[inputs[2]].value : nullptr;
      kernels::tconv2d_forward(A, nodes_[inputs[1]].value, bias, out);
      break;
    }
    case OpKind::relu:
      for (int64_t i = 0; i < A.size(); ++i)
        out.at(i) = A.at(i) > T(0) ? A.at(i) : T(0);
      break;
    case OpKind::leaky_relu:
      for (int64_t i = 0; i < A.size(); ++i)
        out.at(i) = A.at(i) > T(0) ? A.at(i) : T(params.alpha) * A.at(i);
      break;
    case OpKind::maxpool2x2: {
      const int N = A.shape[0], C = A.shape[1], H = A.shape[2], W = A.shape[3];
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
          for (int oh = 0; oh < H / 2; ++oh)
            for (int ow = 0; ow < W / 2; ++ow) {
              T m = A.data[((n * C + c) * H + 2 * oh) * W + 2 * ow];
              for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx)
                  m = std::max(
                      m, A.data[((n * C + c) * H + 2 * oh + dy) * W + 2 * ow +
                                dx]);
              out.data[((n * C + c) * (H / 2) + oh) * (W / 2) + ow] = m;
            }
      break;
    }
    case OpKind::avgpool: {
      const int p = params.window;
      const int N = A.shape[0], C = A.shape[1], H = A.shape[2], W = A.shape[3];
      const T inv = T(1) / T(p * p);
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
          for (int oh = 0; oh < H / p; ++oh)
            for (int ow = 0; ow < W / p; ++ow) {
              T acc = T(0);
              for (int dy = 0; dy < p; ++dy)
                for (int dx = 0; dx < p; ++dx)
                  acc += A.data[((n * C + c) * H + oh * p + dy) * W + ow * p +
                                dx];
              out.data[((n * C + c) * (H / p) + oh) * (W / p) + ow] = acc * inv;
            }
      break;
    }
    case OpKind::bilinear_up2x:
      bilinear_up2x_forward(A, out);
      break;
    case OpKind::concat_channels: {
      const auto& B = nodes_[inputs[1]].value;
      const int N = A.shape[0], Ca = A.shape[1], Cb = B.shape[1],
                HW = A.shape[2] * A.shape[3];
      for (int n = 0; n < N; ++n) {
        std::copy_n(&A.data[n * Ca * HW], Ca * HW,
                    &out.data[n * (Ca + Cb) * HW]);
        std::copy_n(&B.data[n * Cb * HW], Cb * HW,
                    &out.data[(n * (Ca + Cb) + Ca) * HW]);
      }
      break;
    }
    case OpKind::add: {
      const auto& B = nodes_[inputs[1]].value;
      for (int64_t i = 0; i < A.size(); ++i) out.at(i) = A.at(i) + B.at(i);
      break;
    }
    case OpKind::sub: {
      const auto& B = nodes_[inputs[1]].value;
      for (int64_t i = 0; i < A.size(); ++i) out.at(i) = A.at(i) - B.at(i);
      break;
    }
    case OpKind::mul: {
      const auto& B = nodes_[inputs[1]].value;
      for (int64_t i = 0; i < A.size(); ++i) out.at(i) = A.at(i) * B.at(i);
      break;
    }
    case OpKind::divide: {
      const auto& B = nodes_[inputs[1]].value;
      for (int64_t i = 0; i < A.size(); ++i) out.at(i) = A.at(i) / B.at(i);
      break;
    }
    case OpKind::scalar_mul:
      for (int64_t i = 0; i < A.size(); ++i)
        out.at(i) = T(params.alpha) * A.at(i);
      break;
    case OpKind::sum: {
      double acc = 0;
      for (const T& v : A.data) acc += static_cast<double>(v);
      out.at(0) = static_cast<T>(acc);
      break;
    }
    case OpKind::mean: {
      double acc = 0;
      for (const T& v : A.data) acc += static_cast<double>(v);
      out.at(0) = static_cast<T>(acc / static_cast<double>(A.size()));
      break;
    }
    case OpKind::abs_val:
      for (int64_t i = 0; i < A.size(); ++i) out.at(i) = std::abs(A.at(i));
      break;
    case OpKind::log_eps:
      for (int64_t i = 0; i < A.size(); ++i)
        out.at(i) = static_cast<T>(
            std::log(static_cast<double>(A.at(i)) + kLogEps));
      break;
    case OpKind::exp_val:
      for (int64_t i = 0; i < A.size(); ++i)
        out.at(i) = static_cast<T>(std::exp(static_cast<double>(A.at(i))));
      break;
    case OpKind::sqrt_eps:
      for (int64_t i = 0; i < A.size(); ++i)
        out.at(i) = static_cast<T>(
            std::sqrt(std::max(0.0, static_cast<double>(A.at(i)))));
      break;
    case OpKind::softplus:
      for (int64_t i = 0; i < A.size(); ++i) {
        const double v = A.at(i);
        out.at(i) =
            static_cast<T>(v > 30 ? v : std::log1p(std::exp(std::min(v, 30.0))));
      }
      break;
    case OpKind::sigmoid:
      for (int64_t i = 0; i < A.size(); ++i)
        out.at(i) =
            static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(A.at(i)))));
      break;
    case OpKind::softmax: {
      const int cols = A.shape.back();
      const int rows = static_cast<int>(A.size()) / cols;
      for (int r = 0; r < rows; ++r) {
        const T* src = &A.data[r * cols];
        T* dst = &out.data[r * cols];
        T m = src[0];
        for (int j = 1; j < cols; ++j) m = std::max(m, src[j]);
        double z = 0;
        for (int j = 0; j < cols; ++j) {
          const double e = std::exp(static_cast<double>(src[j] - m));
          dst[j] = static_cast<T>(e);
          z += e;
        }
        for (int j = 0; j < cols; ++j) dst[j] = static_cast<T>(dst[j] / z);
      }
      break;
    }
    case OpKind::reshape:
      out.data = A.data;
      break;
    case OpKind::leaf:
      shape_error(kind, "cannot apply leaf");
  }
  check_finite(out, kind);
  nodes_.push_back(Node{kind, inputs, std::move(params), std::move(out)});
  return static_cast<int>(nodes_.size()) - 1;
}

template <typename T>
void BasicTape<T>::accumulate_parent_grads(
    const Node& n, const BasicTensor<T>& gout, GradMode mode,
    const BasicTape<T>* reference, std::vector<BasicTensor<T>>& grads) const {
  auto g = [&](int idx) -> BasicTensor<T>& {
    auto& t = grads[n.parents[idx]];
    if (t.data.empty()) t = BasicTensor<T>(nodes_[n.parents[idx]].value.shape);
    return t;
  };
  const auto& A = nodes_[n.parents.empty() ? 0 : n.parents[0]].value;
  switch (n.kind) {
    case OpKind::dense: {
      const auto& W = nodes_[n.parents[1]].value;
      BasicTensor<T> gx(A.shape), gw(W.shape);
      kernels::dense_grad_input(gout, W, gx);
      kernels::dense_grad_weight(A, gout, gw);
      auto& ax = g(0);
      for (int64_t i = 0; i < ax.size(); ++i) ax.at(i) += gx.at(i);
      auto& aw = g(1);
      for (int64_t i = 0; i < aw.size(); ++i) aw.at(i) += gw.at(i);
      if (n.parents.size() == 3) {
        auto& ab = g(2);
        const int N = gout.shape[0], Cout = gout.shape[1];
        for (int r = 0; r < N; ++r)
          for (int o = 0; o < Cout; ++o) ab.at(o) += gout.data[r * Cout + o];
      }
      break;
    }
    case OpKind::conv2d: {
      const auto& K = nodes_[n.parents[1]].value;
      BasicTensor<T> gx(A.shape), gk(K.shape);
      kernels::conv2d_grad_input(gout, K, gx);
      kernels::conv2d_grad_kernel(A, gout, gk);
      auto& ax = g(0);
      for (int64_t i = 0; i < ax.size(); ++i) ax.at(i) += gx.at(i);
      auto& ak = g(1);
      for (int64_t i = 0; i < ak.size(); ++i) ak.at(i) += gk.at(i);
      if (n.parents.size() == 3) {
        auto& ab = g(2);
        const int N = gout.shape[0], F = gout.shape[1],
                  HW = gout.shape[2] * gout.shape[3];
        for (int nn = 0; nn < N; ++nn)
          for (int f = 0; f < F; ++f)
            for (int i = 0; i < HW; ++i)
              ab.at(f) += gout.data[(nn * F + f) * HW + i];
      }
      break;
    }
    case OpKind::tconv2d: {
      const auto& K = nodes_[n.parents[1]].value;
      BasicTensor<T> gx(A.shape), gk(K.shape);
      kernels::tconv2d_grad_input(gout, K, gx);
      kernels::tconv2d_grad_kernel(A, gout, gk);
      auto& ax = g(0);
      for (int64_t i = 0; i < ax.size(); ++i) ax.at(i) += gx.at(i);
      auto& ak = g(1);
      for (int64_t i = 0; i < ak.size(); ++i) ak.at(i) += gk.at(i);
      if (n.parents.size() == 3) {
        auto& ab = g(2);
        const int N = gout.shape[0], F = gout.shape[1],
                  HW = gout.shape[2] * gout.shape[3];
        for (int nn = 0; nn < N; ++nn)
          for (int f = 0; f < F; ++f)
            for (int i = 0; i < HW; ++i)
              ab.at(f) += gout.data[(nn * F + f) * HW + i];
      }
      break;
    }
    case OpKind::relu: {
      auto& ax = g(0);
      if (mode == GradMode::guided) {
        // Guided backprop: gate on positive preactivation AND positive
        // upstream gradient.
        for (int64_t i = 0; i < ax.size(); ++i)
          ax.at(i) += (A.at(i) > T(0) && gout.at(i) > T(0)) ? gout.at(i) : T(0);
      } else if (reference) {
        // DeepLift rescale: multiplier = delta-out / delta-in, gradient
        // fallback near zero delta.
        const auto& Ar = reference->nodes_[n.parents[0]].value;
        for (int64_t i = 0; i < ax.size(); ++i) {
          const double din = static_cast<double>(A.at(i)) - Ar.at(i);
          if (std::abs(din) < 1e-7) {
            ax.at(i) += A.at(i) > T(0) ? gout.at(i) : T(0);
          } else {
            const double dout = std::max(static_cast<double>(A.at(i)), 0.0) -
                                std::max(static_cast<double>(Ar.at(i)), 0.0);
            ax.at(i) += static_cast<T>(gout.at(i) * (dout / din));
          }
        }
      } else {
        for (int64_t i = 0; i < ax.size(); ++i)
          ax.at(i) += A.at(i) > T(0) ? gout.at(i) : T(0);
      }
      break;
    }
    case OpKind::leaky_relu: {
      auto& ax = g(0);
      for (int64_t i = 0; i < ax.size(); ++i)
        ax.at(i) += A.at(i) > T(0) ? gout.at(i) : T(n.params.alpha) * gout.at(i);
      break;
    }
    case OpKind::maxpool2x2: {
      auto& ax = g(0);
      const int N = A.shape[0], C = A.shape[1], H = A.shape[2], W = A.shape[3];
      for (int nn = 0; nn < N; ++nn)
        for (int c = 0; c < C; ++c)
          for (int oh = 0; oh < H / 2; ++oh)
            for (int ow = 0; ow < W / 2; ++ow) {
              int bi = ((nn * C + c) * H + 2 * oh) * W + 2 * ow;
              int best = bi;
              for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx) {
                  const int idx = ((nn * C + c) * H + 2 * oh + dy) * W +
                                  2 * ow + dx;
                  if (A.data[idx] > A.data[best]) best = idx;
                }
              ax.data[best] +=
                  gout.data[((nn * C + c) * (H / 2) + oh) * (W / 2) + ow];
            }
      break;
    }
    case OpKind::avgpool: {
      auto& ax = g(0);
      const int p = n.params.window;
      const int N = A.shape[0], C = A.shape[1], H = A.shape[2], W = A.shape[3];
      const T inv = T(1) / T(p * p);
      for (int nn = 0; nn < N; ++nn)
        for (int c = 0; c < C; ++c)
          for (int oh = 0; oh < H / p; ++oh)
            for (int ow = 0; ow < W / p; ++ow) {
              const T gv =
                  gout.data[((nn * C + c) * (H / p) + oh) * (W / p) + ow] * inv;
              for (int dy = 0; dy < p; ++dy)
                for (int dx = 0; dx < p; ++dx)
                  ax.data[((nn * C + c) * H + oh * p + dy) * W + ow * p + dx] +=
                      gv;
            }
      break;
    }
    case OpKind::bilinear_up2x: {
      auto& ax = g(0);
      bilinear_up2x_backward(gout, ax);
      break;
    }
    case OpKind::concat_channels: {
      const auto& B = nodes_[n.parents[1]].value;
      const int N = A.shape[0], Ca = A.shape[1], Cb = B.shape[1],
                HW = A.shape[2] * A.shape[3];
      auto& ga = g(0);
      auto& gb = g(1);
      for (int nn = 0; nn < N; ++nn) {
        for (int i = 0; i < Ca * HW; ++i)
          ga.data[nn * Ca * HW + i] += gout.data[nn * (Ca + Cb) * HW + i];
        for (int i = 0; i < Cb * HW; ++i)
          gb.data[nn * Cb * HW + i] +=
              gout.data[(nn * (Ca + Cb) + Ca) * HW + i];
      }
      break;
    }
    case OpKind::add: {
      auto& ga = g(0);
      for (int64_t i = 0; i < ga.size(); ++i) ga.at(i) += gout.at(i);
      auto& gb = g(1);
      for (int64_t i = 0; i < gb.size(); ++i) gb.at(i) += gout.at(i);
      break;
    }
    case OpKind::sub: {
      auto& ga = g(0);
      for (int64_t i = 0; i < ga.size(); ++i) ga.at(i) += gout.at(i);
      auto& gb = g(1);
      for (int64_t i = 0; i < gb.size(); ++i) gb.at(i) -= gout.at(i);
      break;
    }
    case OpKind::mul: {
      const auto& B = nodes_[n.parents[1]].value;
      auto& ga = g(0);
      for (int64_t i = 0; i < ga.size(); ++i) ga.at(i) += gout.at(i) * B.at(i);
      auto& gb = g(1);
      for (int64_t i = 0; i < gb.size(); ++i) gb.at(i) += gout.at(i) * A.at(i);
      break;
    }
    case OpKind::divide: {
      const auto& B = nodes_[n.parents[1]].value;
      auto& ga = g(0);
      for (int64_t i = 0; i < ga.size(); ++i) ga.at(i) += gout.at(i) / B.at(i);
      auto& gb = g(1);
      for (int64_t i = 0; i < gb.size(); ++i)
        gb.at(i) -= gout.at(i) * A.at(i) / (B.at(i) * B.at(i));
      break;
    }
    case OpKind::scalar_mul: {
      auto& ga = g(0);
      for (int64_t i = 0; i < ga.size(); ++i)
        ga.at(i) += T(n.params.alpha) * gout.at(i);
      break;
    }
    case OpKind::sum: {
      auto& ga = g(0);
      for (int64_t i = 0; i < ga.size(); ++i) ga.at(i) += gout.at(0);
      break;
    }
    case OpKind::mean: {
      auto& ga = g(0);
      const T inv = T(1) / T(A.size());
      for (int64_t i = 0; i < ga.size(); ++i) ga.at(i) += gout.at(0) * inv;
      break;
    }
    case OpKind::abs_val: {
      auto& ga = g(0);
      for (int64_t i = 0; i < ga.size(); ++i)
        ga.at(i) += A.at(i) > T(0) ? gout.at(i)
                   : A.at(i) < T(0) ? -gout.at(i)
                                    : T(0);
      break;
    }
    case OpKind::log_eps: {
      auto& ga = g(0);
      for (int64_t i = 0; i < ga.size(); ++i)
        ga.at(i) += static_cast<T>(gout.at(i) /
                                   (static_cast<double>(A.at(i)) + kLogEps));
      break;
    }
    case OpKind::exp_val: {
      auto& ga = g(0);
      for (int64_t i = 0; i < ga.size(); ++i)
        ga.at(i) += gout.at(i) * n.value.at(i);
      break;
    }
    case OpKind::sqrt_eps: {
      auto& ga = g(0);
      for (int64_t i = 0; i < ga.size(); ++i)
        ga.at(i) += static_cast<T>(
            gout.at(i) * 0.5 / (static_cast<double>(n.value.at(i)) + kLogEps));
      break;
    }
    case OpKind::softplus: {
      auto& ga = g(0);
      for (int64_t i = 0; i < ga.size(); ++i)
        ga.at(i) += static_cast<T>(
            gout.at(i) / (1.0 + std::exp(-static_cast<double>(A.at(i)))));
      break;
    }
    case OpKind::sigmoid: {
      auto& ga = g(0);
      for (int64_t i = 0; i < ga.size(); ++i) {
        const double s = n.value.at(i);
        ga.at(i) += static_cast<T>(gout.at(i) * s * (1.0 - s));
      }
      break;
    }
    case OpKind::softmax: {
      auto& ga = g(0);
      const int cols = A.shape.back();
      const int rows = static_cast<int>(A.size()) / cols;
      for (int r = 0; r < rows; ++r) {
        const T* s = &n.value.data[r * cols];
        const T* go = &gout.data[r * cols];
        double dot = 0;
        for (int j = 0; j < cols; ++j)
          dot += static_cast<double>(go[j]) * s[j];
        for (int j = 0; j < cols; ++j)
          ga.data[r * cols + j] +=
              static_cast<T>(s[j] * (static_cast<double>(go[j]) - dot));
      }
      break;
    }
    case OpKind::reshape: {
      auto& ga = g(0);
      for (int64_t i = 0; i < ga.size(); ++i) ga.at(i) += gout.at(i);
      break;
    }
    case OpKind::leaf:
      break;
  }
}

template <typename T>
std::vector<BasicTensor<T>> BasicTape<T>::backward(int loss,
                                                   GradMode mode) const {
  if (nodes_.at(loss).value.size() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_str(nodes_[loss].value.shape));
  std::vector<BasicTensor<T>> grads(nodes_.size());
  grads[loss] = BasicTensor<T>(nodes_[loss].value.shape, T(1));
  for (int id = loss; id >= 0; --id) {
    if (grads[id].data.empty()) continue;
    accumulate_parent_grads(nodes_[id], grads[id], mode, nullptr, grads);
  }
  for (size_t i = 0; i < grads.size(); ++i)
    if (grads[i].data.empty()) grads[i] = BasicTensor<T>(nodes_[i].value.shape);
  return grads;
}

template <typename T>
std::vector<BasicTensor<T>> BasicTape<T>::deeplift_multipliers(
    int loss, const BasicTape<T>& reference) const {
  if (nodes_.at(loss).value.size() != 1)
    throw std::invalid_argument("deeplift: loss must be scalar");
  if (reference.size() != size())
    throw std::invalid_argument("deeplift: reference tape structure differs");
  static const OpKind supported[] = {
      OpKind::leaf,       OpKind::dense,      OpKind::conv2d,
      OpKind::tconv2d,    OpKind::relu,       OpKind::avgpool,
      OpKind::bilinear_up2x, OpKind::concat_channels, OpKind::add,
      OpKind::sub,        OpKind::scalar_mul, OpKind::sum,
      OpKind::mean,       OpKind::reshape};
  for (const auto& n : nodes_) {
    bool ok = false;
    for (OpKind k : supported) ok = ok || n.kind == k;
    if (!ok)
      throw std::invalid_argument(
          std::string("deeplift: unsupported op in model: ") +
          op_name(n.kind));
  }
  std::vector<BasicTensor<T>> grads(nodes_.size());
  grads[loss] = BasicTensor<T>(nodes_[loss].value.shape, T(1));
  for (int id = loss; id >= 0; --id) {
    if (grads[id].data.empty()) continue;
    accumulate_parent_grads(nodes_[id], grads[id], GradMode::standard,
                            &reference, grads);
  }
  for (size_t i = 0; i < grads.size(); ++i)
    if (grads[i].data.empty()) grads[i] = BasicTensor<T>(nodes_[i].value.shape);
  return grads;
}

template class BasicTape<float>;
template class BasicTape<double>;

}  // namespace xforge
