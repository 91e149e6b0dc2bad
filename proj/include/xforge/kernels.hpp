#pragma once

#include <algorithm>
#include <cmath>

#include "xforge/tensor.hpp"

// Compute kernels for the heavy ops. Each has a serial reference
// implementation (kernels::ref) and an OpenMP version (kernels::par) with
// identical semantics; the tape dispatches through kernels::run_parallel().
// The reference versions stay in the build for the equivalence tests and the
// kernel benchmark.

namespace xforge::kernels {

bool& run_parallel();  // defaults to true, see tape.cpp

// ---------------------------------------------------------------------------
// serial reference
// ---------------------------------------------------------------------------
namespace ref {

// x (N,C,H,W), k (F,C,kh,kw), bias (F) or empty, zero pad kh/2 x kw/2, stride 1.
template <typename T>
void conv2d_forward(const BasicTensor<T>& x, const BasicTensor<T>& k,
                    const BasicTensor<T>* bias, BasicTensor<T>& out) {
  const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  const int F = k.shape[0], kh = k.shape[2], kw = k.shape[3];
  const int ph = kh / 2, pw = kw / 2;
  for (int n = 0; n < N; ++n)
    for (int f = 0; f < F; ++f)
      for (int oh = 0; oh < H; ++oh)
        for (int ow = 0; ow < W; ++ow) {
          T acc = bias ? bias->data[f] : T(0);
          for (int c = 0; c < C; ++c)
            for (int r = 0; r < kh; ++r) {
              const int ih = oh + r - ph;
              if (ih < 0 || ih >= H) continue;
              for (int s = 0; s < kw; ++s) {
                const int iw = ow + s - pw;
                if (iw < 0 || iw >= W) continue;
                acc += x.data[((n * C + c) * H + ih) * W + iw] *
                       k.data[((f * C + c) * kh + r) * kw + s];
              }
            }
          out.data[((n * F + f) * H + oh) * W + ow] = acc;
        }
}

template <typename T>
void conv2d_grad_input(const BasicTensor<T>& gout, const BasicTensor<T>& k,
                       BasicTensor<T>& gx) {
  const int N = gx.shape[0], C = gx.shape[1], H = gx.shape[2], W = gx.shape[3];
  const int F = k.shape[0], kh = k.shape[2], kw = k.shape[3];
  const int ph = kh / 2, pw = kw / 2;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int ih = 0; ih < H; ++ih)
        for (int iw = 0; iw < W; ++iw) {
          T acc = T(0);
          for (int f = 0; f < F; ++f)
            for (int r = 0; r < kh; ++r) {
              const int oh = ih - r + ph;
              if (oh < 0 || oh >= H) continue;
              for (int s = 0; s < kw; ++s) {
                const int ow = iw - s + pw;
                if (ow < 0 || ow >= W) continue;
                acc += gout.data[((n * F + f) * H + oh) * W + ow] *
                       k.data[((f * C + c) * kh + r) * kw + s];
              }
            }
          gx.data[((n * C + c) * H + ih) * W + iw] = acc;
        }
}

template <typename T>
void conv2d_grad_kernel(const BasicTensor<T>& x, const BasicTensor<T>& gout,
                        BasicTensor<T>& gk) {
  const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  const int F = gk.shape[0], kh = gk.shape[2], kw = gk.shape[3];
  const int ph = kh / 2, pw = kw / 2;
  for (int f = 0; f < F; ++f)
    for (int c = 0; c < C; ++c)
      for (int r = 0; r < kh; ++r)
        for (int s = 0; s < kw; ++s) {
          T acc = T(0);
          for (int n = 0; n < N; ++n)
            for (int oh = 0; oh < H; ++oh) {
              const int ih = oh + r - ph;
              if (ih < 0 || ih >= H) continue;
              for (int ow = 0; ow < W; ++ow) {
                const int iw = ow + s - pw;
                if (iw < 0 || iw >= W) continue;
                acc += x.data[((n * C + c) * H + ih) * W + iw] *
                       gout.data[((n * F + f) * H + oh) * W + ow];
              }
            }
          gk.data[((f * C + c) * kh + r) * kw + s] = acc;
        }
}

// x (N,C,H,W), k (C,F,kh,kw), stride 2, pad (kh-2)/2 each side; kh even so
// the output is exactly (N,F,2H,2W).
template <typename T>
void tconv2d_forward(const BasicTensor<T>& x, const BasicTensor<T>& k,
                     const BasicTensor<T>* bias, BasicTensor<T>& out) {
  const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  const int F = k.shape[1], kh = k.shape[2], kw = k.shape[3];
  const int ph = (kh - 2) / 2, pw = (kw - 2) / 2;
  const int OH = out.shape[2], OW = out.shape[3];
  for (int n = 0; n < N; ++n)
    for (int f = 0; f < F; ++f) {
      T* o = &out.data[((n * F + f) * OH) * OW];
      const T bv = bias ? bias->data[f] : T(0);
      for (int i = 0; i < OH * OW; ++i) o[i] = bv;
      for (int c = 0; c < C; ++c)
        for (int ih = 0; ih < H; ++ih)
          for (int iw = 0; iw < W; ++iw) {
            const T xv = x.data[((n * C + c) * H + ih) * W + iw];
            for (int r = 0; r < kh; ++r) {
              const int oh = ih * 2 + r - ph;
              if (oh < 0 || oh >= OH) continue;
              for (int s = 0; s < kw; ++s) {
                const int ow = iw * 2 + s - pw;
                if (ow < 0 || ow >= OW) continue;
                o[oh * OW + ow] += xv * k.data[((c * F + f) * kh + r) * kw + s];
              }
            }
          }
    }
}

template <typename T>
void tconv2d_grad_input(const BasicTensor<T>& gout, const BasicTensor<T>& k,
                        BasicTensor<T>& gx) {
  const int N = gx.shape[0], C = gx.shape[1], H = gx.shape[2], W = gx.shape[3];
  const int F = k.shape[1], kh = k.shape[2], kw = k.shape[3];
  const int ph = (kh - 2) / 2, pw = (kw - 2) / 2;
  const int OH = gout.shape[2], OW = gout.shape[3];
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int ih = 0; ih < H; ++ih)
        for (int iw = 0; iw < W; ++iw) {
          T acc = T(0);
          for (int f = 0; f < F; ++f)
            for (int r = 0; r < kh; ++r) {
              const int oh = ih * 2 + r - ph;
              if (oh < 0 || oh >= OH) continue;
              for (int s = 0; s < kw; ++s) {
                const int ow = iw * 2 + s - pw;
                if (ow < 0 || ow >= OW) continue;
                acc += gout.data[((n * F + f) * OH + oh) * OW + ow] *
                       k.data[((c * F + f) * kh + r) * kw + s];
              }
            }
          gx.data[((n * C + c) * H + ih) * W + iw] = acc;
        }
}

template <typename T>
void tconv2d_grad_kernel(const BasicTensor<T>& x, const BasicTensor<T>& gout,
                         BasicTensor<T>& gk) {
  const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  const int F = gk.shape[1], kh = gk.shape[2], kw = gk.shape[3];
  const int ph = (kh - 2) / 2, pw = (kw - 2) / 2;
  const int OH = gout.shape[2], OW = gout.shape[3];
  for (int c = 0; c < C; ++c)
    for (int f = 0; f < F; ++f)
      for (int r = 0; r < kh; ++r)
        for (int s = 0; s < kw; ++s) {
          T acc = T(0);
          for (int n = 0; n < N; ++n)
            for (int ih = 0; ih < H; ++ih) {
              const int oh = ih * 2 + r - ph;
              if (oh < 0 || oh >= OH) continue;
              for (int iw = 0; iw < W; ++iw) {
                const int ow = iw * 2 + s - pw;
                if (ow < 0 || ow >= OW) continue;
                acc += x.data[((n * C + c) * H + ih) * W + iw] *
                       gout.data[((n * F + f) * OH + oh) * OW + ow];
              }
            }
          gk.data[((c * F + f) * kh + r) * kw + s] = acc;
        }
}

// x (N,Cin), w (Cout,Cin), bias (Cout) or empty -> out (N,Cout)
template <typename T>
void dense_forward(const BasicTensor<T>& x, const BasicTensor<T>& w,
                   const BasicTensor<T>* bias, BasicTensor<T>& out) {
  const int N = x.shape[0], Cin = x.shape[1], Cout = w.shape[0];
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < Cout; ++o) {
      T acc = bias ? bias->data[o] : T(0);
      for (int i = 0; i < Cin; ++i)
        acc += x.data[n * Cin + i] * w.data[o * Cin + i];
      out.data[n * Cout + o] = acc;
    }
}

template <typename T>
void dense_grad_input(const BasicTensor<T>& gout, const BasicTensor<T>& w,
                      BasicTensor<T>& gx) {
  const int N = gx.shape[0], Cin = gx.shape[1], Cout = w.shape[0];
  for (int n = 0; n < N; ++n)
    for (int i = 0; i < Cin; ++i) {
      T acc = T(0);
      for (int o = 0; o < Cout; ++o)
        acc += gout.data[n * Cout + o] * w.data[o * Cin + i];
      gx.data[n * Cin + i] = acc;
    }
}

template <typename T>
void dense_grad_weight(const BasicTensor<T>& x, const BasicTensor<T>& gout,
                       BasicTensor<T>& gw) {
  const int N = x.shape[0], Cin = x.shape[1], Cout = gw.shape[0];
  for (int o = 0; o < Cout; ++o)
    for (int i = 0; i < Cin; ++i) {
      T acc = T(0);
      for (int n = 0; n < N; ++n)
        acc += gout.data[n * Cout + o] * x.data[n * Cin + i];
      gw.data[o * Cin + i] = acc;
    }
}

}  // namespace ref

// ---------------------------------------------------------------------------
// OpenMP versions. Loop bodies match ref exactly; only the outer loops are
// annotated, so serial and parallel results are bitwise identical.
// ---------------------------------------------------------------------------
namespace par {

template <typename T>
void conv2d_forward(const BasicTensor<T>& x, const BasicTensor<T>& k,
                    const BasicTensor<T>* bias, BasicTensor<T>& out) {
  const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  const int F = k.shape[0], kh = k.shape[2], kw = k.shape[3];
  const int ph = kh / 2, pw = kw / 2;
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n)
    for (int f = 0; f < F; ++f)
      for (int oh = 0; oh < H; ++oh)
        for (int ow = 0; ow < W; ++ow) {
          T acc = bias ? bias->data[f] : T(0);
          for (int c = 0; c < C; ++c)
            for (int r = 0; r < kh; ++r) {
              const int ih = oh + r - ph;
              if (ih < 0 || ih >= H) continue;
              for (int s = 0; s < kw; ++s) {
                const int iw = ow + s - pw;
                if (iw < 0 || iw >= W) continue;
                acc += x.data[((n * C + c) * H + ih) * W + iw] *
                       k.data[((f * C + c) * kh + r) * kw + s];
              }
            }
          out.data[((n * F + f) * H + oh) * W + ow] = acc;
        }
}

template <typename T>
void conv2d_grad_input(const BasicTensor<T>& gout, const BasicTensor<T>& k,
                       BasicTensor<T>& gx) {
  const int N = gx.shape[0], C = gx.shape[1], H = gx.shape[2], W = gx.shape[3];
  const int F = k.shape[0], kh = k.shape[2], kw = k.shape[3];
  const int ph = kh / 2, pw = kw / 2;
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int ih = 0; ih < H; ++ih)
        for (int iw = 0; iw < W; ++iw) {
          T acc = T(0);
          for (int f = 0; f < F; ++f)
            for (int r = 0; r < kh; ++r) {
              const int oh = ih - r + ph;
              if (oh < 0 || oh >= H) continue;
              for (int s = 0; s < kw; ++s) {
                const int ow = iw - s + pw;
                if (ow < 0 || ow >= W) continue;
                acc += gout.data[((n * F + f) * H + oh) * W + ow] *
                       k.data[((f * C + c) * kh + r) * kw + s];
              }
            }
          gx.data[((n * C + c) * H + ih) * W + iw] = acc;
        }
}

template <typename T>
void conv2d_grad_kernel(const BasicTensor<T>& x, const BasicTensor<T>& gout,
                        BasicTensor<T>& gk) {
  const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  const int F = gk.shape[0], kh = gk.shape[2], kw = gk.shape[3];
  const int ph = kh / 2, pw = kw / 2;
#pragma omp parallel for collapse(2) schedule(static)
  for (int f = 0; f < F; ++f)
    for (int c = 0; c < C; ++c)
      for (int r = 0; r < kh; ++r)
        for (int s = 0; s < kw; ++s) {
          T acc = T(0);
          for (int n = 0; n < N; ++n)
            for (int oh = 0; oh < H; ++oh) {
              const int ih = oh + r - ph;
              if (ih < 0 || ih >= H) continue;
              for (int ow = 0; ow < W; ++ow) {
                const int iw = ow + s - pw;
                if (iw < 0 || iw >= W) continue;
                acc += x.data[((n * C + c) * H + ih) * W + iw] *
                       gout.data[((n * F + f) * H + oh) * W + ow];
              }
            }
          gk.data[((f * C + c) * kh + r) * kw + s] = acc;
        }
}

template <typename T>
void tconv2d_forward(const BasicTensor<T>& x, const BasicTensor<T>& k,
                     const BasicTensor<T>* bias, BasicTensor<T>& out) {
  const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  const int F = k.shape[1], kh = k.shape[2], kw = k.shape[3];
  const int ph = (kh - 2) / 2, pw = (kw - 2) / 2;
  const int OH = out.shape[2], OW = out.shape[3];
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n)
    for (int f = 0; f < F; ++f) {
      T* o = &out.data[((n * F + f) * OH) * OW];
      const T bv = bias ? bias->data[f] : T(0);
      for (int i = 0; i < OH * OW; ++i) o[i] = bv;
      for (int c = 0; c < C; ++c)
        for (int ih = 0; ih < H; ++ih)
          for (int iw = 0; iw < W; ++iw) {
            const T xv = x.data[((n * C + c) * H + ih) * W + iw];
            for (int r = 0; r < kh; ++r) {
              const int oh = ih * 2 + r - ph;
              if (oh < 0 || oh >= OH) continue;
              for (int s = 0; s < kw; ++s) {
                const int ow = iw * 2 + s - pw;
                if (ow < 0 || ow >= OW) continue;
                o[oh * OW + ow] += xv * k.data[((c * F + f) * kh + r) * kw + s];
              }
            }
          }
    }
}

template <typename T>
void tconv2d_grad_input(const BasicTensor<T>& gout, const BasicTensor<T>& k,
                        BasicTensor<T>& gx) {
  const int N = gx.shape[0], C = gx.shape[1], H = gx.shape[2], W = gx.shape[3];
  const int F = k.shape[1], kh = k.shape[2], kw = k.shape[3];
  const int ph = (kh - 2) / 2, pw = (kw - 2) / 2;
  const int OH = gout.shape[2], OW = gout.shape[3];
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int ih = 0; ih < H; ++ih)
        for (int iw = 0; iw < W; ++iw) {
          T acc = T(0);
          for (int f = 0; f < F; ++f)
            for (int r = 0; r < kh; ++r) {
              const int oh = ih * 2 + r - ph;
              if (oh < 0 || oh >= OH) continue;
              for (int s = 0; s < kw; ++s) {
                const int ow = iw * 2 + s - pw;
                if (ow < 0 || ow >= OW) continue;
                acc += gout.data[((n * F + f) * OH + oh) * OW + ow] *
                       k.data[((c * F + f) * kh + r) * kw + s];
              }
            }
          gx.data[((n * C + c) * H + ih) * W + iw] = acc;
        }
}

template <typename T>
void tconv2d_grad_kernel(const BasicTensor<T>& x, const BasicTensor<T>& gout,
                         BasicTensor<T>& gk) {
  const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  const int F = gk.shape[1], kh = gk.shape[2], kw = gk.shape[3];
  const int ph = (kh - 2) / 2, pw = (kw - 2) / 2;
  const int OH = gout.shape[2], OW = gout.shape[3];
#pragma omp parallel for collapse(2) schedule(static)
  for (int c = 0; c < C; ++c)
    for (int f = 0; f < F; ++f)
      for (int r = 0; r < kh; ++r)
        for (int s = 0; s < kw; ++s) {
          T acc = T(0);
          for (int n = 0; n < N; ++n)
            for (int ih = 0; ih < H; ++ih) {
              const int oh = ih * 2 + r - ph;
              if (oh < 0 || oh >= OH) continue;
              for (int iw = 0; iw < W; ++iw) {
                const int ow = iw * 2 + s - pw;
                if (ow < 0 || ow >= OW) continue;
                acc += x.data[((n * C + c) * H + ih) * W + iw] *
                       gout.data[((n * F + f) * OH + oh) * OW + ow];
              }
            }
          gk.data[((c * F + f) * kh + r) * kw + s] = acc;
        }
}

template <typename T>
void dense_forward(const BasicTensor<T>& x, const BasicTensor<T>& w,
                   const BasicTensor<T>* bias, BasicTensor<T>& out) {
  const int N = x.shape[0], Cin = x.shape[1], Cout = w.shape[0];
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < Cout; ++o) {
      T acc = bias ? bias->data[o] : T(0);
      for (int i = 0; i < Cin; ++i)
        acc += x.data[n * Cin + i] * w.data[o * Cin + i];
      out.data[n * Cout + o] = acc;
    }
}

template <typename T>
void dense_grad_input(const BasicTensor<T>& gout, const BasicTensor<T>& w,
                      BasicTensor<T>& gx) {
  const int N = gx.shape[0], Cin = gx.shape[1], Cout = w.shape[0];
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n)
    for (int i = 0; i < Cin; ++i) {
      T acc = T(0);
      for (int o = 0; o < Cout; ++o)
        acc += gout.data[n * Cout + o] * w.data[o * Cin + i];
      gx.data[n * Cin + i] = acc;
    }
}

template <typename T>
void dense_grad_weight(const BasicTensor<T>& x, const BasicTensor<T>& gout,
                       BasicTensor<T>& gw) {
  const int N = x.shape[0], Cin = x.shape[1], Cout = gw.shape[0];
#pragma omp parallel for collapse(2) schedule(static)
  for (int o = 0; o < Cout; ++o)
    for (int i = 0; i < Cin; ++i) {
      T acc = T(0);
      for (int n = 0; n < N; ++n)
        acc += gout.data[n * Cout + o] * x.data[n * Cin + i];
      gw.data[o * Cin + i] = acc;
    }
}

}  // namespace par

// Dispatch helpers used by the tape.
#define XFORGE_DISPATCH3(name)                                              \
  template <typename T>                                                     \
  void name(const BasicTensor<T>& a, const BasicTensor<T>& b,               \
            BasicTensor<T>& c) {                                            \
    if (run_parallel()) par::name(a, b, c); else ref::name(a, b, c);        \
  }
#define XFORGE_DISPATCH4(name)                                              \
  template <typename T>                                                     \
  void name(const BasicTensor<T>& a, const BasicTensor<T>& b,               \
            const BasicTensor<T>* c, BasicTensor<T>& d) {                   \
    if (run_parallel()) par::name(a, b, c, d); else ref::name(a, b, c, d);  \
  }

XFORGE_DISPATCH4(conv2d_forward)
XFORGE_DISPATCH3(conv2d_grad_input)
XFORGE_DISPATCH3(conv2d_grad_kernel)
XFORGE_DISPATCH4(tconv2d_forward)
XFORGE_DISPATCH3(tconv2d_grad_input)
XFORGE_DISPATCH3(tconv2d_grad_kernel)
XFORGE_DISPATCH4(dense_forward)
XFORGE_DISPATCH3(dense_grad_input)
XFORGE_DISPATCH3(dense_grad_weight)

#undef XFORGE_DISPATCH3
#undef XFORGE_DISPATCH4

}  // namespace xforge::kernels
