#include "segloss/kernels.hpp"

#include <algorithm>
#include <cstring>

#include "segloss/error.hpp"
#include "segloss/parallel.hpp"

namespace segloss::kernels {

namespace {

void check_conv_args(const Shape4& x, const Shape4& w, int stride, int padding) {
  if (w.h != w.w)
    throw ShapeError("conv2d: kernel must be square, got " + w.str());
  if (x.c != w.c)
    throw ShapeError("conv2d: input channel axis (c=" + std::to_string(x.c) +
                     ") does not match weight in_ch axis (c=" +
                     std::to_string(w.c) + ")");
  if (stride < 1) throw ContractError("conv2d: stride must be positive");
  if (padding < 0) throw ContractError("conv2d: padding must be nonnegative");
  const int span = x.h + 2 * padding - w.h;
  const int span_w = x.w + 2 * padding - w.w;
  if (span < 0 || span_w < 0)
    throw ShapeError("conv2d: kernel " + w.str() + " larger than padded input " +
                     x.str() + " on h/w axes");
}

// Input copied into a zero-padded scratch so the hot loops run without
// bounds checks. Adding the padded zero terms does not change any output
// value relative to skipping them.
std::vector<double> pad_input(const Tensor& x, int pad) {
  const Shape4 s = x.shape();
  const int ph = s.h + 2 * pad, pw = s.w + 2 * pad;
  std::vector<double> out(size_t(s.n) * s.c * ph * pw, 0.0);
  par_for(int64_t(s.n) * s.c, [&](int64_t bc) {
    const double* src = x.data() + bc * s.h * s.w;
    double* dst = out.data() + bc * ph * pw + pad * pw + pad;
    for (int y = 0; y < s.h; ++y)
      std::memcpy(dst + int64_t(y) * pw, src + int64_t(y) * s.w,
                  sizeof(double) * size_t(s.w));
  });
  return out;
}

constexpr int kOcTile = 4;
constexpr int kMaxRow = 1024;  // widest output row the tiled path handles

// Tiled conv core over a pre-padded input. Accumulation order per output
// element is (ic, ky, kx) regardless of tiling or thread count.
void conv_padded(const double* xp, int B, int C, int ph, int pw, const double* w,
                 int OC, int K, const double* bias, double* out, int OH, int OW,
                 int stride, bool accumulate) {
  const int oc_tiles = (OC + kOcTile - 1) / kOcTile;
  par_for(int64_t(B) * oc_tiles * OH, [&](int64_t idx) {
    const int oy = int(idx % OH);
    const int t = int((idx / OH) % oc_tiles);
    const int b = int(idx / OH / oc_tiles);
    const int oc0 = t * kOcTile;
    const int nt = std::min(kOcTile, OC - oc0);
    double acc[kOcTile][kMaxRow];
    for (int j = 0; j < nt; ++j) {
      if (accumulate) {
        const double* orow = out + ((int64_t(b) * OC + oc0 + j) * OH + oy) * OW;
        std::memcpy(acc[j], orow, sizeof(double) * size_t(OW));
      } else {
        const double bv = bias ? bias[oc0 + j] : 0.0;
        for (int ox = 0; ox < OW; ++ox) acc[j][ox] = bv;
      }
    }
    for (int ic = 0; ic < C; ++ic) {
      const double* iplane = xp + (int64_t(b) * C + ic) * ph * pw;
      if (K == 3 && stride == 1) {
        for (int ky = 0; ky < 3; ++ky) {
          const double* ir = iplane + int64_t(oy + ky) * pw;
          for (int j = 0; j < nt; ++j) {
            const double* wr = w + (((int64_t(oc0) + j) * C + ic) * 3 + ky) * 3;
            const double w0 = wr[0], w1 = wr[1], w2 = wr[2];
            double* a = acc[j];
            // three separate += keep the per-element accumulation order
            // identical to the tap-by-tap loop
            for (int ox = 0; ox < OW; ++ox) {
              double v = a[ox];
              v += w0 * ir[ox];
              v += w1 * ir[ox + 1];
              v += w2 * ir[ox + 2];
              a[ox] = v;
            }
          }
        }
        continue;
      }
      for (int ky = 0; ky < K; ++ky) {
        const double* irow = iplane + int64_t(oy * stride + ky) * pw;
        for (int kx = 0; kx < K; ++kx) {
          const double* ir = irow + kx;
          for (int j = 0; j < nt; ++j) {
            const double wv = w[(((int64_t(oc0) + j) * C + ic) * K + ky) * K + kx];
            double* a = acc[j];
            if (stride == 1) {
              for (int ox = 0; ox < OW; ++ox) a[ox] += wv * ir[ox];
            } else {
              for (int ox = 0; ox < OW; ++ox) a[ox] += wv * ir[int64_t(ox) * stride];
            }
          }
        }
      }
    }
    for (int j = 0; j < nt; ++j)
      std::memcpy(out + ((int64_t(b) * OC + oc0 + j) * OH + oy) * OW, acc[j],
                  sizeof(double) * size_t(OW));
  });
}

// Generic bounds-checked fallback for rows wider than the tile buffer.
void conv_generic(const Tensor& x, const Tensor& w, const double* bias,
                  Tensor& y, int stride, int pad, bool accumulate) {
  const Shape4 xs = x.shape(), ws = w.shape(), ys = y.shape();
  const int K = ws.h;
  par_for(int64_t(ys.n) * ys.c * ys.h, [&](int64_t idx) {
    const int oy = int(idx % ys.h);
    const int oc = int((idx / ys.h) % ys.c);
    const int b = int(idx / ys.h / ys.c);
    double* orow = y.data() + ((int64_t(b) * ys.c + oc) * ys.h + oy) * ys.w;
    if (!accumulate)
      for (int ox = 0; ox < ys.w; ++ox) orow[ox] = bias ? bias[oc] : 0.0;
    for (int ic = 0; ic < xs.c; ++ic)
      for (int ky = 0; ky < K; ++ky) {
        const int iy = oy * stride + ky - pad;
        if (iy < 0 || iy >= xs.h) continue;
        const double* irow = x.data() + ((int64_t(b) * xs.c + ic) * xs.h + iy) * xs.w;
        for (int kx = 0; kx < K; ++kx) {
          const double wv = w.data()[((int64_t(oc) * ws.c + ic) * K + ky) * K + kx];
          for (int ox = 0; ox < ys.w; ++ox) {
            const int ix = ox * stride + kx - pad;
            if (ix < 0 || ix >= xs.w) continue;
            orow[ox] += wv * irow[ix];
          }
        }
      }
  });
}

void conv_dispatch(const Tensor& x, const Tensor& w, const double* bias,
                   Tensor& y, int stride, int pad, bool accumulate) {
  if (y.shape().w <= kMaxRow) {
    const Shape4 xs = x.shape(), ws = w.shape(), ys = y.shape();
    std::vector<double> xp = pad_input(x, pad);
    conv_padded(xp.data(), xs.n, xs.c, xs.h + 2 * pad, xs.w + 2 * pad, w.data(),
                ys.c, ws.h, bias, y.data(), ys.h, ys.w, stride, accumulate);
  } else {
    conv_generic(x, w, bias, y, stride, pad, accumulate);
  }
}

// Weight tensor flipped spatially with in/out channel axes swapped, so that
// grad-input of a stride-1 conv is itself a conv.
Tensor flip_transpose_weight(const Tensor& w) {
  const Shape4 s = w.shape();
  Tensor out({s.c, s.n, s.h, s.w});
  for (int oc = 0; oc < s.n; ++oc)
    for (int ic = 0; ic < s.c; ++ic)
      for (int ky = 0; ky < s.h; ++ky)
        for (int kx = 0; kx < s.w; ++kx)
          out.at(ic, oc, s.h - 1 - ky, s.w - 1 - kx) = w.at(oc, ic, ky, kx);
  return out;
}

constexpr int kLanes = 8;

// Lane-split dot product; lane structure is fixed, so the result does not
// depend on vector width or thread count.
inline void dot_lanes(const double* a, const double* b, int n, double lane[kLanes]) {
  int i = 0;
  for (; i + kLanes <= n; i += kLanes)
    for (int l = 0; l < kLanes; ++l) lane[l] += a[i + l] * b[i + l];
  for (int l = 0; i < n; ++i, ++l) lane[l] += a[i] * b[i];
}

}  // namespace

Shape4 conv2d_out_shape(const Shape4& input, const Shape4& weight, int stride,
                        int padding) {
  check_conv_args(input, weight, stride, padding);
  const int oh = (input.h + 2 * padding - weight.h) / stride + 1;
  const int ow = (input.w + 2 * padding - weight.w) / stride + 1;
  return {input.n, weight.n, oh, ow};
}

void conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor& bias,
                    Tensor& out, int stride, int padding) {
  conv_dispatch(input, weight, bias.defined() ? bias.data() : nullptr, out,
                stride, padding, /*accumulate=*/false);
}

void conv2d_grad_input(const Tensor& grad_out, const Tensor& weight,
                       Tensor& grad_input, int stride, int padding) {
  const Shape4 gs = grad_out.shape(), ws = weight.shape(), is = grad_input.shape();
  const int K = ws.h;
  if (stride == 1) {
    Tensor wt = flip_transpose_weight(weight);
    conv_dispatch(grad_out, wt, nullptr, grad_input, 1, K - 1 - padding,
                  /*accumulate=*/true);
    return;
  }
  // Strided gather: each input element collects the output positions whose
  // window covers it.
  par_for(int64_t(is.n) * is.c * is.h, [&](int64_t idx) {
    const int iy = int(idx % is.h);
    const int ic = int((idx / is.h) % is.c);
    const int b = int(idx / is.h / is.c);
    double* grow = grad_input.data() + ((int64_t(b) * is.c + ic) * is.h + iy) * is.w;
    for (int ix = 0; ix < is.w; ++ix) {
      double acc = grow[ix];
      for (int oc = 0; oc < gs.c; ++oc) {
        const double* gplane =
            grad_out.data() + (int64_t(b) * gs.c + oc) * gs.h * gs.w;
        for (int ky = 0; ky < K; ++ky) {
          const int ny = iy + padding - ky;
          if (ny < 0 || ny % stride != 0) continue;
          const int oy = ny / stride;
          if (oy >= gs.h) continue;
          for (int kx = 0; kx < K; ++kx) {
            const int nx = ix + padding - kx;
            if (nx < 0 || nx % stride != 0) continue;
            const int ox = nx / stride;
            if (ox >= gs.w) continue;
            acc += weight.data()[((int64_t(oc) * ws.c + ic) * K + ky) * K + kx] *
                   gplane[int64_t(oy) * gs.w + ox];
          }
        }
      }
      grow[ix] = acc;
    }
  });
}

void conv2d_grad_weight(const Tensor& grad_out, const Tensor& input,
                        Tensor& grad_weight, int stride, int padding) {
  const Shape4 gs = grad_out.shape(), is = input.shape(), ws = grad_weight.shape();
  const int K = ws.h;
  const std::vector<double> xp = pad_input(input, padding);
  const int ph = is.h + 2 * padding, pw = is.w + 2 * padding;

  if (K == 3 && stride == 1) {
    // One pass over the data per (oc, ic) pair, accumulating all nine taps
    // at once; the lane layout keeps the result thread-count independent.
    par_for(int64_t(ws.n) * ws.c, [&](int64_t oi) {
      const int ic = int(oi % ws.c);
      const int oc = int(oi / ws.c);
      double lane[9][kLanes] = {};
      for (int b = 0; b < gs.n; ++b) {
        const double* gplane =
            grad_out.data() + (int64_t(b) * gs.c + oc) * gs.h * gs.w;
        const double* iplane = xp.data() + (int64_t(b) * is.c + ic) * ph * pw;
        for (int oy = 0; oy < gs.h; ++oy) {
          const double* grow = gplane + int64_t(oy) * gs.w;
          const double* ir0 = iplane + int64_t(oy) * pw;
          const double* ir1 = ir0 + pw;
          const double* ir2 = ir1 + pw;
          int ox = 0;
          for (; ox + kLanes <= gs.w; ox += kLanes)
            for (int l = 0; l < kLanes; ++l) {
              const double gv = grow[ox + l];
              lane[0][l] += gv * ir0[ox + l];
              lane[1][l] += gv * ir0[ox + l + 1];
              lane[2][l] += gv * ir0[ox + l + 2];
              lane[3][l] += gv * ir1[ox + l];
              lane[4][l] += gv * ir1[ox + l + 1];
              lane[5][l] += gv * ir1[ox + l + 2];
              lane[6][l] += gv * ir2[ox + l];
              lane[7][l] += gv * ir2[ox + l + 1];
              lane[8][l] += gv * ir2[ox + l + 2];
            }
          for (int l = 0; ox < gs.w; ++ox, ++l) {
            const double gv = grow[ox];
            lane[0][l] += gv * ir0[ox];
            lane[1][l] += gv * ir0[ox + 1];
            lane[2][l] += gv * ir0[ox + 2];
            lane[3][l] += gv * ir1[ox];
            lane[4][l] += gv * ir1[ox + 1];
            lane[5][l] += gv * ir1[ox + 2];
            lane[6][l] += gv * ir2[ox];
            lane[7][l] += gv * ir2[ox + 1];
            lane[8][l] += gv * ir2[ox + 2];
          }
        }
      }
      double* gw = grad_weight.data() + (int64_t(oc) * ws.c + ic) * 9;
      for (int t = 0; t < 9; ++t) {
        double s = 0.0;
        for (int l = 0; l < kLanes; ++l) s += lane[t][l];
        gw[t] += s;
      }
    });
    return;
  }

  par_for(int64_t(ws.n) * ws.c, [&](int64_t oi) {
    const int ic = int(oi % ws.c);
    const int oc = int(oi / ws.c);
    for (int ky = 0; ky < K; ++ky)
      for (int kx = 0; kx < K; ++kx) {
        double lane[kLanes] = {0};
        for (int b = 0; b < gs.n; ++b) {
          const double* gplane =
              grad_out.data() + (int64_t(b) * gs.c + oc) * gs.h * gs.w;
          const double* iplane = xp.data() + (int64_t(b) * is.c + ic) * ph * pw;
          for (int oy = 0; oy < gs.h; ++oy) {
            const double* grow = gplane + int64_t(oy) * gs.w;
            const double* irow = iplane + int64_t(oy * stride + ky) * pw + kx;
            if (stride == 1) {
              dot_lanes(grow, irow, gs.w, lane);
            } else {
              for (int ox = 0; ox < gs.w; ++ox)
                lane[ox % kLanes] += grow[ox] * irow[int64_t(ox) * stride];
            }
          }
        }
        double s = 0.0;
        for (int l = 0; l < kLanes; ++l) s += lane[l];
        grad_weight.data()[((int64_t(oc) * ws.c + ic) * K + ky) * K + kx] += s;
      }
  });
}

void conv2d_grad_bias(const Tensor& grad_out, Tensor& grad_bias) {
  const Shape4 gs = grad_out.shape();
  par_for(gs.c, [&](int64_t oc) {
    double lane[kLanes] = {0};
    for (int b = 0; b < gs.n; ++b) {
      const double* plane = grad_out.data() + (int64_t(b) * gs.c + oc) * gs.h * gs.w;
      int64_t n = int64_t(gs.h) * gs.w;
      int64_t i = 0;
      for (; i + kLanes <= n; i += kLanes)
        for (int l = 0; l < kLanes; ++l) lane[l] += plane[i + l];
      for (int l = 0; i < n; ++i, ++l) lane[l] += plane[i];
    }
    double s = 0.0;
    for (int l = 0; l < kLanes; ++l) s += lane[l];
    grad_bias.data()[oc] += s;
  });
}

void maxpool2x2_forward(const Tensor& input, Tensor& out,
                        std::vector<uint8_t>& argmax) {
  const Shape4 is = input.shape(), os = out.shape();
  argmax.resize(size_t(os.numel()));
  par_for(int64_t(os.n) * os.c * os.h, [&](int64_t idx) {
    const int oy = int(idx % os.h);
    const int64_t plane = idx / os.h;
    const double* i0 = input.data() + (plane * is.h + 2 * oy) * is.w;
    const double* i1 = i0 + is.w;
    double* orow = out.data() + (plane * os.h + oy) * os.w;
    uint8_t* arow = argmax.data() + (plane * os.h + oy) * os.w;
    for (int ox = 0; ox < os.w; ++ox) {
      const double cand[4] = {i0[2 * ox], i0[2 * ox + 1], i1[2 * ox],
                              i1[2 * ox + 1]};
      int best = 0;
      for (int k = 1; k < 4; ++k)
        if (cand[k] > cand[best]) best = k;
      orow[ox] = cand[best];
      arow[ox] = uint8_t(best);
    }
  });
}

void maxpool2x2_backward(const Tensor& grad_out,
                         const std::vector<uint8_t>& argmax, Tensor& grad_input) {
  const Shape4 gs = grad_out.shape(), is = grad_input.shape();
  // Pool windows are disjoint, so rows 2*oy and 2*oy+1 are owned by oy.
  par_for(int64_t(gs.n) * gs.c * gs.h, [&](int64_t idx) {
    const int oy = int(idx % gs.h);
    const int64_t plane = idx / gs.h;
    const double* grow = grad_out.data() + (plane * gs.h + oy) * gs.w;
    const uint8_t* arow = argmax.data() + (plane * gs.h + oy) * gs.w;
    double* g0 = grad_input.data() + (plane * is.h + 2 * oy) * is.w;
    double* g1 = g0 + is.w;
    for (int ox = 0; ox < gs.w; ++ox) {
      double* rows[2] = {g0, g1};
      const int code = arow[ox];
      rows[code >> 1][2 * ox + (code & 1)] += grow[ox];
    }
  });
}

void upsample2x_forward(const Tensor& input, Tensor& out) {
  const Shape4 is = input.shape(), os = out.shape();
  par_for(int64_t(os.n) * os.c * os.h, [&](int64_t idx) {
    const int oy = int(idx % os.h);
    const int64_t plane = idx / os.h;
    const double* irow = input.data() + (plane * is.h + oy / 2) * is.w;
    double* orow = out.data() + (plane * os.h + oy) * os.w;
    for (int ox = 0; ox < os.w; ++ox) orow[ox] = irow[ox / 2];
  });
}

void upsample2x_backward(const Tensor& grad_out, Tensor& grad_input) {
  const Shape4 gs = grad_out.shape(), is = grad_input.shape();
  par_for(int64_t(is.n) * is.c * is.h, [&](int64_t idx) {
    const int iy = int(idx % is.h);
    const int64_t plane = idx / is.h;
    const double* g0 = grad_out.data() + (plane * gs.h + 2 * iy) * gs.w;
    const double* g1 = g0 + gs.w;
    double* grow = grad_input.data() + (plane * is.h + iy) * is.w;
    for (int ix = 0; ix < is.w; ++ix)
      grow[ix] += ((g0[2 * ix] + g0[2 * ix + 1]) + g1[2 * ix]) + g1[2 * ix + 1];
  });
}

}  // namespace segloss::kernels
