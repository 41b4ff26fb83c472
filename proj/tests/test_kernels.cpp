#include <doctest.h>

#include "segloss/kernels.hpp"
#include "segloss/parallel.hpp"
#include "test_support.hpp"

using namespace segloss;
using namespace testsup;

namespace {

struct ConvCase {
  Shape4 x, w;
  int stride, pad;
};

const ConvCase kCases[] = {
    {{2, 3, 8, 8}, {4, 3, 3, 3}, 1, 1},   {{1, 1, 5, 7}, {2, 1, 3, 3}, 1, 0},
    {{2, 2, 9, 9}, {3, 2, 3, 3}, 2, 1},   {{1, 4, 6, 6}, {2, 4, 1, 1}, 1, 0},
    {{1, 2, 12, 12}, {2, 2, 5, 5}, 2, 2}, {{3, 1, 4, 4}, {1, 1, 3, 3}, 1, 2},
};

}  // namespace

TEST_CASE("tuned conv kernels match the naive reference") {
  Rng rng(1234);
  for (const ConvCase& c : kCases) {
    const Tensor x = random_tensor(c.x, rng);
    const Tensor w = random_tensor(c.w, rng);
    const Tensor b = random_tensor({1, c.w.n, 1, 1}, rng);
    const Shape4 ys = kernels::conv2d_out_shape(c.x, c.w, c.stride, c.pad);

    Tensor y_fast(ys), y_ref(ys);
    kernels::conv2d_forward(x, w, b, y_fast, c.stride, c.pad);
    kernels::reference::conv2d_forward(x, w, b, y_ref, c.stride, c.pad);
    CHECK(max_rel_diff(y_fast, y_ref, 1e-9) < 1e-10);

    const Tensor gy = random_tensor(ys, rng);
    Tensor gx_fast(c.x), gx_ref(c.x);
    kernels::conv2d_grad_input(gy, w, gx_fast, c.stride, c.pad);
    kernels::reference::conv2d_grad_input(gy, w, gx_ref, c.stride, c.pad);
    CHECK(max_rel_diff(gx_fast, gx_ref, 1e-9) < 1e-10);

    Tensor gw_fast(c.w), gw_ref(c.w);
    kernels::conv2d_grad_weight(gy, x, gw_fast, c.stride, c.pad);
    kernels::reference::conv2d_grad_weight(gy, x, gw_ref, c.stride, c.pad);
    CHECK(max_rel_diff(gw_fast, gw_ref, 1e-9) < 1e-10);

    Tensor gb_fast({1, c.w.n, 1, 1}), gb_ref({1, c.w.n, 1, 1});
    kernels::conv2d_grad_bias(gy, gb_fast);
    kernels::reference::conv2d_grad_bias(gy, gb_ref);
    CHECK(max_rel_diff(gb_fast, gb_ref, 1e-9) < 1e-10);
  }
}

TEST_CASE("pool and upsample kernels match the naive reference") {
  Rng rng(77);
  const Tensor x = spaced_random_tensor({2, 3, 8, 10}, rng);
  Tensor y_fast({2, 3, 4, 5}), y_ref({2, 3, 4, 5});
  std::vector<uint8_t> am_fast, am_ref;
  kernels::maxpool2x2_forward(x, y_fast, am_fast);
  kernels::reference::maxpool2x2_forward(x, y_ref, am_ref);
  CHECK(bit_equal(y_fast, y_ref));
  CHECK(am_fast == am_ref);

  const Tensor gy = random_tensor({2, 3, 4, 5}, rng);
  Tensor gx_fast({2, 3, 8, 10}), gx_ref({2, 3, 8, 10});
  kernels::maxpool2x2_backward(gy, am_fast, gx_fast);
  kernels::reference::maxpool2x2_backward(gy, am_ref, gx_ref);
  CHECK(bit_equal(gx_fast, gx_ref));

  Tensor up_fast({2, 3, 16, 20}), up_ref({2, 3, 16, 20});
  kernels::upsample2x_forward(x, up_fast);
  kernels::reference::upsample2x_forward(x, up_ref);
  CHECK(bit_equal(up_fast, up_ref));

  const Tensor gup = random_tensor({2, 3, 16, 20}, rng);
  Tensor gin_fast({2, 3, 8, 10}), gin_ref({2, 3, 8, 10});
  kernels::upsample2x_backward(gup, gin_fast);
  kernels::reference::upsample2x_backward(gup, gin_ref);
  CHECK(bit_equal(gin_fast, gin_ref));
}

TEST_CASE("kernel outputs are bitwise identical across thread counts") {
  Rng rng(909);
  for (const ConvCase& c : kCases) {
    const Tensor x = random_tensor(c.x, rng);
    const Tensor w = random_tensor(c.w, rng);
    const Tensor b = random_tensor({1, c.w.n, 1, 1}, rng);
    const Shape4 ys = kernels::conv2d_out_shape(c.x, c.w, c.stride, c.pad);
    const Tensor gy = random_tensor(ys, rng);

    auto run_all = [&](int threads) {
      ThreadLimit limit(threads);
      Tensor y(ys), gx(c.x), gw(c.w), gb({1, c.w.n, 1, 1});
      kernels::conv2d_forward(x, w, b, y, c.stride, c.pad);
      kernels::conv2d_grad_input(gy, w, gx, c.stride, c.pad);
      kernels::conv2d_grad_weight(gy, x, gw, c.stride, c.pad);
      kernels::conv2d_grad_bias(gy, gb);
      return std::tuple{y, gx, gw, gb};
    };
    const auto [y1, gx1, gw1, gb1] = run_all(1);
    for (int threads : {2, 3, 5}) {
      const auto [y, gx, gw, gb] = run_all(threads);
      CHECK(bit_equal(y, y1));
      CHECK(bit_equal(gx, gx1));
      CHECK(bit_equal(gw, gw1));
      CHECK(bit_equal(gb, gb1));
    }
  }
}
