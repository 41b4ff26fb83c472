// Straight-line single-threaded kernels. Deliberately naive; the tuned
// OpenMP kernels are checked against these in tests and in the benchmark.

#include <algorithm>

#include "segloss/kernels.hpp"

namespace segloss::kernels::reference {

void conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor& bias,
                    Tensor& out, int stride, int padding) {
  const Shape4 xs = input.shape(), ws = weight.shape(), ys = out.shape();
  const int K = ws.h;
  for (int b = 0; b < ys.n; ++b)
    for (int oc = 0; oc < ys.c; ++oc)
      for (int oy = 0; oy < ys.h; ++oy)
        for (int ox = 0; ox < ys.w; ++ox) {
          double acc = bias.defined() ? bias.data()[oc] : 0.0;
          for (int ic = 0; ic < xs.c; ++ic)
            for (int ky = 0; ky < K; ++ky)
              for (int kx = 0; kx < K; ++kx) {
                const int iy = oy * stride + ky - padding;
                const int ix = ox * stride + kx - padding;
                if (iy < 0 || iy >= xs.h || ix < 0 || ix >= xs.w) continue;
                acc += weight.at(oc, ic, ky, kx) * input.at(b, ic, iy, ix);
              }
          out.at(b, oc, oy, ox) = acc;
        }
}

void conv2d_grad_input(const Tensor& grad_out, const Tensor& weight,
                       Tensor& grad_input, int stride, int padding) {
  const Shape4 gs = grad_out.shape(), ws = weight.shape(), is = grad_input.shape();
  const int K = ws.h;
  for (int b = 0; b < gs.n; ++b)
    for (int oc = 0; oc < gs.c; ++oc)
      for (int oy = 0; oy < gs.h; ++oy)
        for (int ox = 0; ox < gs.w; ++ox) {
          const double g = grad_out.at(b, oc, oy, ox);
          for (int ic = 0; ic < is.c; ++ic)
            for (int ky = 0; ky < K; ++ky)
              for (int kx = 0; kx < K; ++kx) {
                const int iy = oy * stride + ky - padding;
                const int ix = ox * stride + kx - padding;
                if (iy < 0 || iy >= is.h || ix < 0 || ix >= is.w) continue;
                grad_input.at(b, ic, iy, ix) += g * weight.at(oc, ic, ky, kx);
              }
        }
}

void conv2d_grad_weight(const Tensor& grad_out, const Tensor& input,
                        Tensor& grad_weight, int stride, int padding) {
  const Shape4 gs = grad_out.shape(), is = input.shape(), ws = grad_weight.shape();
  const int K = ws.h;
  for (int b = 0; b < gs.n; ++b)
    for (int oc = 0; oc < gs.c; ++oc)
      for (int oy = 0; oy < gs.h; ++oy)
        for (int ox = 0; ox < gs.w; ++ox) {
          const double g = grad_out.at(b, oc, oy, ox);
          for (int ic = 0; ic < is.c; ++ic)
            for (int ky = 0; ky < K; ++ky)
              for (int kx = 0; kx < K; ++kx) {
                const int iy = oy * stride + ky - padding;
                const int ix = ox * stride + kx - padding;
                if (iy < 0 || iy >= is.h || ix < 0 || ix >= is.w) continue;
                grad_weight.at(oc, ic, ky, kx) += g * input.at(b, ic, iy, ix);
              }
        }
}

void conv2d_grad_bias(const Tensor& grad_out, Tensor& grad_bias) {
  const Shape4 gs = grad_out.shape();
  for (int b = 0; b < gs.n; ++b)
    for (int oc = 0; oc < gs.c; ++oc)
      for (int oy = 0; oy < gs.h; ++oy)
        for (int ox = 0; ox < gs.w; ++ox)
          grad_bias.data()[oc] += grad_out.at(b, oc, oy, ox);
}

void maxpool2x2_forward(const Tensor& input, Tensor& out,
                        std::vector<uint8_t>& argmax) {
  const Shape4 is = input.shape(), os = out.shape();
  argmax.resize(size_t(os.numel()));
  int64_t o = 0;
  for (int b = 0; b < os.n; ++b)
    for (int c = 0; c < os.c; ++c)
      for (int oy = 0; oy < os.h; ++oy)
        for (int ox = 0; ox < os.w; ++ox, ++o) {
          double best = input.at(b, c, 2 * oy, 2 * ox);
          int code = 0, k = 0;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx, ++k) {
              const double v = input.at(b, c, 2 * oy + dy, 2 * ox + dx);
              if (v > best) {
                best = v;
                code = k;
              }
            }
          out.at(b, c, oy, ox) = best;
          argmax[size_t(o)] = uint8_t(code);
        }
}

void maxpool2x2_backward(const Tensor& grad_out,
                         const std::vector<uint8_t>& argmax, Tensor& grad_input) {
  const Shape4 gs = grad_out.shape();
  int64_t o = 0;
  for (int b = 0; b < gs.n; ++b)
    for (int c = 0; c < gs.c; ++c)
      for (int oy = 0; oy < gs.h; ++oy)
        for (int ox = 0; ox < gs.w; ++ox, ++o) {
          const int code = argmax[size_t(o)];
          grad_input.at(b, c, 2 * oy + (code >> 1), 2 * ox + (code & 1)) +=
              grad_out.at(b, c, oy, ox);
        }
}

void upsample2x_forward(const Tensor& input, Tensor& out) {
  const Shape4 os = out.shape();
  for (int b = 0; b < os.n; ++b)
    for (int c = 0; c < os.c; ++c)
      for (int oy = 0; oy < os.h; ++oy)
        for (int ox = 0; ox < os.w; ++ox)
          out.at(b, c, oy, ox) = input.at(b, c, oy / 2, ox / 2);
}

void upsample2x_backward(const Tensor& grad_out, Tensor& grad_input) {
  const Shape4 is = grad_input.shape();
  for (int b = 0; b < is.n; ++b)
    for (int c = 0; c < is.c; ++c)
      for (int iy = 0; iy < is.h; ++iy)
        for (int ix = 0; ix < is.w; ++ix)
          grad_input.at(b, c, iy, ix) +=
              ((grad_out.at(b, c, 2 * iy, 2 * ix) +
                grad_out.at(b, c, 2 * iy, 2 * ix + 1)) +
               grad_out.at(b, c, 2 * iy + 1, 2 * ix)) +
              grad_out.at(b, c, 2 * iy + 1, 2 * ix + 1);
}

}  // namespace segloss::kernels::reference
