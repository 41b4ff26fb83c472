// Times the naive reference kernels against the tuned OpenMP kernels at the
// shapes the default model actually runs, plus one full training step.

#include <chrono>
#include <cstdio>
#include <string>
#include <vector>

#include "segloss/kernels.hpp"
#include "segloss/parallel.hpp"
#include "segloss/rng.hpp"
#include "segloss/synth_data.hpp"
#include "segloss/trainer.hpp"

using namespace segloss;
using clock_type = std::chrono::steady_clock;

namespace {

Tensor random_tensor(Shape4 s, Rng& rng) {
  Tensor t(s);
  for (double& v : t.vec()) v = rng.uniform(-1.0, 1.0);
  return t;
}

template <class F>
double seconds_per_call(F&& f, double budget = 0.35) {
  f();  // warm up
  int reps = 1;
  for (;;) {
    const auto t0 = clock_type::now();
    for (int r = 0; r < reps; ++r) f();
    const double dt = std::chrono::duration<double>(clock_type::now() - t0).count();
    if (dt > budget || reps > (1 << 20)) return dt / reps;
    reps *= 4;
  }
}

struct ConvShape {
  const char* label;
  Shape4 x, w;
};

void bench_conv(int max_threads_avail) {
  const ConvShape shapes[] = {
      {"enc0  1->8  64x64", {4, 1, 64, 64}, {8, 1, 3, 3}},
      {"enc1  8->16 32x32", {4, 8, 32, 32}, {16, 8, 3, 3}},
      {"bott 32->64  8x8 ", {4, 32, 8, 8}, {64, 32, 3, 3}},
      {"dec0 16->8  64x64", {4, 16, 64, 64}, {8, 16, 3, 3}},
  };
  std::printf("%-18s %10s %10s %10s %10s %8s\n", "conv2d fwd", "naive", "tuned(1)",
              "tuned(n)", "GF/s(n)", "speedup");
  Rng rng(1);
  for (const ConvShape& cs : shapes) {
    const Tensor x = random_tensor(cs.x, rng);
    const Tensor w = random_tensor(cs.w, rng);
    const Tensor b = random_tensor({1, cs.w.n, 1, 1}, rng);
    const Shape4 ys = kernels::conv2d_out_shape(cs.x, cs.w, 1, 1);
    Tensor y(ys);
    const double flops = 2.0 * ys.numel() * cs.w.c * cs.w.h * cs.w.w;

    const double t_ref = seconds_per_call(
        [&] { kernels::reference::conv2d_forward(x, w, b, y, 1, 1); });
    double t1, tn;
    {
      ThreadLimit lim(1);
      t1 = seconds_per_call([&] { kernels::conv2d_forward(x, w, b, y, 1, 1); });
    }
    {
      ThreadLimit lim(max_threads_avail);
      tn = seconds_per_call([&] { kernels::conv2d_forward(x, w, b, y, 1, 1); });
    }
    std::printf("%-18s %9.3fms %9.3fms %9.3fms %10.2f %7.2fx\n", cs.label,
                1e3 * t_ref, 1e3 * t1, 1e3 * tn, flops / tn / 1e9, t_ref / tn);
  }

  std::printf("\n%-18s %10s %10s %10s %8s\n", "conv2d grads", "naive", "tuned(1)",
              "tuned(n)", "speedup");
  for (const ConvShape& cs : shapes) {
    const Tensor x = random_tensor(cs.x, rng);
    const Tensor w = random_tensor(cs.w, rng);
    const Shape4 ys = kernels::conv2d_out_shape(cs.x, cs.w, 1, 1);
    const Tensor gy = random_tensor(ys, rng);
    Tensor gx(cs.x), gw(cs.w);
    auto run_ref = [&] {
      gx = Tensor(cs.x);
      gw = Tensor(cs.w);
      kernels::reference::conv2d_grad_input(gy, w, gx, 1, 1);
      kernels::reference::conv2d_grad_weight(gy, x, gw, 1, 1);
    };
    auto run_fast = [&] {
      gx = Tensor(cs.x);
      gw = Tensor(cs.w);
      kernels::conv2d_grad_input(gy, w, gx, 1, 1);
      kernels::conv2d_grad_weight(gy, x, gw, 1, 1);
    };
    const double t_ref = seconds_per_call(run_ref);
    double t1, tn;
    {
      ThreadLimit lim(1);
      t1 = seconds_per_call(run_fast);
    }
    {
      ThreadLimit lim(max_threads_avail);
      tn = seconds_per_call(run_fast);
    }
    std::printf("%-18s %9.3fms %9.3fms %9.3fms %7.2fx\n", cs.label, 1e3 * t_ref,
                1e3 * t1, 1e3 * tn, t_ref / tn);
  }
}

void bench_train_step(int max_threads_avail) {
  const auto data = generate_dataset(8, 0, 64, 64, 5);
  auto step_time = [&](int threads) {
    ThreadLimit lim(threads);
    Model model = Model::init(ModelConfig{});
    TrainConfig cfg;
    cfg.total_steps = 8;
    cfg.steps_per_epoch = 8;
    cfg.schedule = make_schedule(ScheduleKind::kAdd, 8, 8);
    const auto t0 = clock_type::now();
    train(model, data, cfg);
    return std::chrono::duration<double>(clock_type::now() - t0).count() / 8.0;
  };
  const double t1 = step_time(1);
  const double tn = step_time(max_threads_avail);
  std::printf("\ntrain step (default model, batch 4, 64x64):\n");
  std::printf("  1 thread : %8.1f ms\n", 1e3 * t1);
  std::printf("  %d threads: %8.1f ms (%.2fx)\n", max_threads_avail, 1e3 * tn,
              t1 / tn);
  std::printf("  projected 2000-step fold: %.1f s (%d threads)\n", 2000.0 * tn,
              max_threads_avail);
}

}  // namespace

int main(int argc, char** argv) {
  int threads = max_threads();
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--threads" && i + 1 < argc) threads = std::atoi(argv[++i]);
  }
  std::printf("threads available: %d, benchmarking with %d\n\n", max_threads(),
              threads);
  bench_conv(threads);
  bench_train_step(threads);
  return 0;
}
