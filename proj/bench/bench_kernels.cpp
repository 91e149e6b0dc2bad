// Benchmark: serial reference kernels vs the OpenMP versions, with a
// bitwise-equality check on every pair. Shapes mirror the classifier and
// the explanation-optimizer U-Net at batch size 32.

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <random>
#include <string>

#include "xforge/kernels.hpp"

using namespace xforge;
using Clock = std::chrono::steady_clock;

namespace {

int g_mismatches = 0;

template <typename Fn>
double time_best_of(int reps, Fn&& fn) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = Clock::now();
    fn();
    best = std::min(best,
                    std::chrono::duration<double>(Clock::now() - t0).count());
  }
  return best;
}

void row(const std::string& name, double serial_s, double parallel_s,
         bool identical) {
  std::printf("%-28s %10.3f ms %10.3f ms %8.2fx  %s\n", name.c_str(),
              serial_s * 1e3, parallel_s * 1e3, serial_s / parallel_s,
              identical ? "bitwise-equal" : "MISMATCH");
  if (!identical) ++g_mismatches;
}

Tensor rand_t(std::vector<int> shape, std::mt19937& rng) {
  return random_tensor<float>(std::move(shape), rng, -1.0f, 1.0f);
}

}  // namespace

int main() {
  std::printf("threads: %d\n", omp_get_max_threads());
  std::printf("%-28s %13s %13s %9s\n", "kernel", "serial", "openmp",
              "speedup");
  std::mt19937 rng(1);
  const int reps = 5;

  {  // conv2d 3x3 at the classifier's widest stage
    const auto x = rand_t({32, 16, 16, 16}, rng);
    const auto k = rand_t({16, 16, 3, 3}, rng);
    const auto b = rand_t({16}, rng);
    Tensor out({32, 16, 16, 16}), out2 = out;
    const double ts =
        time_best_of(reps, [&] { kernels::ref::conv2d_forward(x, k, &b, out); });
    const double tp =
        time_best_of(reps, [&] { kernels::par::conv2d_forward(x, k, &b, out2); });
    row("conv2d_forward 3x3", ts, tp, out.data == out2.data);

    Tensor gx({32, 16, 16, 16}), gx2 = gx;
    const double gs = time_best_of(
        reps, [&] { kernels::ref::conv2d_grad_input(out, k, gx); });
    const double gp = time_best_of(
        reps, [&] { kernels::par::conv2d_grad_input(out, k, gx2); });
    row("conv2d_grad_input", gs, gp, gx.data == gx2.data);

    Tensor gk({16, 16, 3, 3}), gk2 = gk;
    const double ks = time_best_of(
        reps, [&] { kernels::ref::conv2d_grad_kernel(x, out, gk); });
    const double kp = time_best_of(
        reps, [&] { kernels::par::conv2d_grad_kernel(x, out, gk2); });
    row("conv2d_grad_kernel", ks, kp, gk.data == gk2.data);
  }

  {  // transposed conv k=2 stride 2, the high-resolution head
    const auto x = rand_t({32, 8, 32, 32}, rng);
    const auto k = rand_t({8, 4, 2, 2}, rng);
    const auto b = rand_t({4}, rng);
    Tensor out({32, 4, 64, 64}), out2 = out;
    const double ts = time_best_of(
        reps, [&] { kernels::ref::tconv2d_forward(x, k, &b, out); });
    const double tp = time_best_of(
        reps, [&] { kernels::par::tconv2d_forward(x, k, &b, out2); });
    row("tconv2d_forward 2x2", ts, tp, out.data == out2.data);

    Tensor gx({32, 8, 32, 32}), gx2 = gx;
    const double gs = time_best_of(
        reps, [&] { kernels::ref::tconv2d_grad_input(out, k, gx); });
    const double gp = time_best_of(
        reps, [&] { kernels::par::tconv2d_grad_input(out, k, gx2); });
    row("tconv2d_grad_input", gs, gp, gx.data == gx2.data);

    Tensor gk({8, 4, 2, 2}), gk2 = gk;
    const double ks = time_best_of(
        reps, [&] { kernels::ref::tconv2d_grad_kernel(x, out, gk); });
    const double kp = time_best_of(
        reps, [&] { kernels::par::tconv2d_grad_kernel(x, out, gk2); });
    row("tconv2d_grad_kernel", ks, kp, gk.data == gk2.data);
  }

  {  // dense head at a larger width to give the loops something to chew on
    const auto x = rand_t({256, 512}, rng);
    const auto w = rand_t({256, 512}, rng);
    const auto b = rand_t({256}, rng);
    Tensor out({256, 256}), out2 = out;
    const double ts = time_best_of(
        reps, [&] { kernels::ref::dense_forward(x, w, &b, out); });
    const double tp = time_best_of(
        reps, [&] { kernels::par::dense_forward(x, w, &b, out2); });
    row("dense_forward", ts, tp, out.data == out2.data);

    Tensor gx({256, 512}), gx2 = gx;
    const double gs = time_best_of(
        reps, [&] { kernels::ref::dense_grad_input(out, w, gx); });
    const double gp = time_best_of(
        reps, [&] { kernels::par::dense_grad_input(out, w, gx2); });
    row("dense_grad_input", gs, gp, gx.data == gx2.data);

    Tensor gw({256, 512}), gw2 = gw;
    const double ks = time_best_of(
        reps, [&] { kernels::ref::dense_grad_weight(x, out, gw); });
    const double kp = time_best_of(
        reps, [&] { kernels::par::dense_grad_weight(x, out, gw2); });
    row("dense_grad_weight", ks, kp, gw.data == gw2.data);
  }

  if (g_mismatches) {
    std::printf("%d kernel pair(s) disagreed\n", g_mismatches);
    return 1;
  }
  return 0;
}
