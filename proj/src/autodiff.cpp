#include "segloss/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "segloss/error.hpp"
#include "segloss/kernels.hpp"
#include "segloss/parallel.hpp"

namespace segloss {

const Tensor& DiffTensor::value() const { return g_->value(id_); }
const Tensor& DiffTensor::grad() const { return g_->grad(id_); }
bool DiffTensor::requires_grad() const { return g_->requires_grad(id_); }

DiffTensor Graph::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return {this, int(nodes_.size()) - 1};
}

DiffTensor Graph::record(const char* op, Tensor value, std::vector<int> inputs,
                         BackFn back) {
  Node n;
  n.value = std::move(value);
  n.op = op;
  for (int id : inputs)
    if (nodes_[size_t(id)].requires_grad) n.requires_grad = true;
  n.inputs = std::move(inputs);
  if (n.requires_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return {this, int(nodes_.size()) - 1};
}

Tensor& Graph::grad_buf(int id) {
  Node& n = nodes_[size_t(id)];
  if (!n.grad.defined()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

const Tensor& Graph::grad(int id) { return grad_buf(id); }

void Graph::backward(const DiffTensor& out) {
  if (out.graph() != this)
    throw ContractError("backward: output belongs to a different graph");
  if (value(out.id()).numel() != 1)
    throw ContractError("backward: output must be a 1-element tensor, got " +
                        value(out.id()).shape().str());
  // Op-node gradients are per-call scratch; only leaf gradients accumulate
  // across repeated backward calls.
  for (Node& n : nodes_)
    if (n.back && n.grad.defined()) std::fill(n.grad.vec().begin(), n.grad.vec().end(), 0.0);
  grad_buf(out.id()).data()[0] += 1.0;
  for (int id = out.id(); id >= 0; --id) {
    Node& n = nodes_[size_t(id)];
    if (!n.requires_grad || !n.grad.defined() || !n.back) continue;
    n.back(*this, id);
  }
}

namespace {

void check_same_graph(const DiffTensor& a, const DiffTensor& b, const char* op) {
  if (a.graph() != b.graph())
    throw ContractError(std::string(op) + ": operands from different graphs");
}

void check_same_shape(const DiffTensor& a, const DiffTensor& b, const char* op) {
  if (!(a.shape() == b.shape()))
    throw ShapeError(std::string(op) + ": shape " + a.shape().str() +
                     " does not match " + b.shape().str());
}

// += src into the grad buffer of node `id` if that node wants gradients.
void accumulate(Graph& g, int id, const Tensor& src) {
  if (!g.requires_grad(id)) return;
  Tensor& dst = g.grad_buf(id);
  double* d = dst.data();
  const double* s = src.data();
  const int64_t n = dst.numel();
  par_for((n + 4095) / 4096, [&](int64_t blk) {
    const int64_t lo = blk * 4096, hi = std::min(n, lo + 4096);
    for (int64_t i = lo; i < hi; ++i) d[i] += s[i];
  });
}

// Elementwise map: out[i] = f(inputs[i]...), with a matching backward.
template <class Fwd>
Tensor map1(const Tensor& x, Fwd f) {
  Tensor out(x.shape());
  const double* xs = x.data();
  double* o = out.data();
  const int64_t n = x.numel();
  par_for((n + 4095) / 4096, [&](int64_t blk) {
    const int64_t lo = blk * 4096, hi = std::min(n, lo + 4096);
    for (int64_t i = lo; i < hi; ++i) o[i] = f(xs[i]);
  });
  return out;
}

template <class Fn>
void backward_map(Graph& g, int input_id, const Tensor& gy, Fn per_element) {
  if (!g.requires_grad(input_id)) return;
  Tensor& gx = g.grad_buf(input_id);
  double* d = gx.data();
  const double* gys = gy.data();
  const int64_t n = gx.numel();
  par_for((n + 4095) / 4096, [&](int64_t blk) {
    const int64_t lo = blk * 4096, hi = std::min(n, lo + 4096);
    for (int64_t i = lo; i < hi; ++i) d[i] += per_element(i, gys[i]);
  });
}

}  // namespace

DiffTensor conv2d(const DiffTensor& input, const DiffTensor& weight,
                  const DiffTensor& bias, int stride, int padding) {
  check_same_graph(input, weight, "conv2d");
  check_same_graph(input, bias, "conv2d");
  Graph& g = *input.graph();
  const Shape4 ws = weight.shape();
  const Shape4 out_shape =
      kernels::conv2d_out_shape(input.shape(), ws, stride, padding);
  const Shape4 bs = bias.shape();
  if (!(bs == Shape4{1, ws.n, 1, 1}))
    throw ShapeError("conv2d: bias must have shape 1x" + std::to_string(ws.n) +
                     "x1x1 (out_ch axis), got " + bs.str());
  Tensor out(out_shape);
  kernels::conv2d_forward(input.value(), weight.value(), bias.value(), out,
                          stride, padding);
  const int xi = input.id(), wi = weight.id(), bi = bias.id();
  return g.record("conv2d", std::move(out), {xi, wi, bi},
                  [xi, wi, bi, stride, padding](Graph& gr, int self) {
                    const Tensor& gy = gr.grad(self);
                    if (gr.requires_grad(xi))
                      kernels::conv2d_grad_input(gy, gr.value(wi),
                                                 gr.grad_buf(xi), stride, padding);
                    if (gr.requires_grad(wi))
                      kernels::conv2d_grad_weight(gy, gr.value(xi),
                                                  gr.grad_buf(wi), stride, padding);
                    if (gr.requires_grad(bi))
                      kernels::conv2d_grad_bias(gy, gr.grad_buf(bi));
                  });
}

DiffTensor sigmoid(const DiffTensor& x) {
  Graph& g = *x.graph();
  Tensor out = map1(x.value(), [](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
  const int xi = x.id();
  return g.record("sigmoid", std::move(out), {xi}, [xi](Graph& gr, int self) {
    const double* y = gr.value(self).data();
    backward_map(gr, xi, gr.grad(self),
                 [y](int64_t i, double gy) { return gy * y[i] * (1.0 - y[i]); });
  });
}

DiffTensor relu(const DiffTensor& x) {
  Graph& g = *x.graph();
  Tensor out = map1(x.value(), [](double v) { return v > 0.0 ? v : 0.0; });
  const int xi = x.id();
  return g.record("relu", std::move(out), {xi}, [xi](Graph& gr, int self) {
    const double* xv = gr.value(xi).data();
    backward_map(gr, xi, gr.grad(self),
                 [xv](int64_t i, double gy) { return xv[i] > 0.0 ? gy : 0.0; });
  });
}

DiffTensor add(const DiffTensor& a, const DiffTensor& b) {
  check_same_graph(a, b, "add");
  check_same_shape(a, b, "add");
  Graph& g = *a.graph();
  Tensor out(a.shape());
  const double* av = a.value().data();
  const double* bv = b.value().data();
  double* o = out.data();
  const int64_t n = out.numel();
  par_for((n + 4095) / 4096, [&](int64_t blk) {
    const int64_t lo = blk * 4096, hi = std::min(n, lo + 4096);
    for (int64_t i = lo; i < hi; ++i) o[i] = av[i] + bv[i];
  });
  const int ai = a.id(), bi = b.id();
  return g.record("add", std::move(out), {ai, bi}, [ai, bi](Graph& gr, int self) {
    const Tensor& gy = gr.grad(self);
    accumulate(gr, ai, gy);
    accumulate(gr, bi, gy);
  });
}

DiffTensor mul(const DiffTensor& a, const DiffTensor& b) {
  check_same_graph(a, b, "mul");
  check_same_shape(a, b, "mul");
  Graph& g = *a.graph();
  Tensor out(a.shape());
  const double* av = a.value().data();
  const double* bv = b.value().data();
  double* o = out.data();
  const int64_t n = out.numel();
  par_for((n + 4095) / 4096, [&](int64_t blk) {
    const int64_t lo = blk * 4096, hi = std::min(n, lo + 4096);
    for (int64_t i = lo; i < hi; ++i) o[i] = av[i] * bv[i];
  });
  const int ai = a.id(), bi = b.id();
  return g.record("mul", std::move(out), {ai, bi}, [ai, bi](Graph& gr, int self) {
    const Tensor& gy = gr.grad(self);
    const double* bvv = gr.value(bi).data();
    backward_map(gr, ai, gy, [bvv](int64_t i, double gyv) { return gyv * bvv[i]; });
    const double* avv = gr.value(ai).data();
    backward_map(gr, bi, gy, [avv](int64_t i, double gyv) { return gyv * avv[i]; });
  });
}

DiffTensor div(const DiffTensor& a, const DiffTensor& b) {
  check_same_graph(a, b, "div");
  check_same_shape(a, b, "div");
  Graph& g = *a.graph();
  Tensor out(a.shape());
  const double* av = a.value().data();
  const double* bv = b.value().data();
  double* o = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) o[i] = av[i] / bv[i];
  const int ai = a.id(), bi = b.id();
  return g.record("div", std::move(out), {ai, bi}, [ai, bi](Graph& gr, int self) {
    const Tensor& gy = gr.grad(self);
    const double* bvv = gr.value(bi).data();
    const double* q = gr.value(self).data();
    backward_map(gr, ai, gy, [bvv](int64_t i, double gyv) { return gyv / bvv[i]; });
    backward_map(gr, bi, gy,
                 [bvv, q](int64_t i, double gyv) { return -gyv * q[i] / bvv[i]; });
  });
}

DiffTensor log(const DiffTensor& x) {
  Graph& g = *x.graph();
  const double* xv = x.value().data();
  for (int64_t i = 0; i < x.value().numel(); ++i)
    if (!(xv[i] > 0.0))
      throw DomainError("log: nonpositive input " + std::to_string(xv[i]) +
                        " at flat index " + std::to_string(i));
  Tensor out = map1(x.value(), [](double v) { return std::log(v); });
  const int xi = x.id();
  return g.record("log", std::move(out), {xi}, [xi](Graph& gr, int self) {
    const double* xvv = gr.value(xi).data();
    backward_map(gr, xi, gr.grad(self),
                 [xvv](int64_t i, double gy) { return gy / xvv[i]; });
  });
}

DiffTensor clamp(const DiffTensor& x, double lo, double hi) {
  if (!(lo < hi)) throw ContractError("clamp: lo must be < hi");
  Graph& g = *x.graph();
  Tensor out =
      map1(x.value(), [lo, hi](double v) { return v < lo ? lo : (v > hi ? hi : v); });
  const int xi = x.id();
  return g.record("clamp", std::move(out), {xi}, [xi, lo, hi](Graph& gr, int self) {
    const double* xv = gr.value(xi).data();
    backward_map(gr, xi, gr.grad(self), [xv, lo, hi](int64_t i, double gy) {
      return (xv[i] >= lo && xv[i] <= hi) ? gy : 0.0;
    });
  });
}

DiffTensor affine(const DiffTensor& x, double scale, double shift) {
  Graph& g = *x.graph();
  Tensor out = map1(x.value(), [scale, shift](double v) { return scale * v + shift; });
  const int xi = x.id();
  return g.record("affine", std::move(out), {xi}, [xi, scale](Graph& gr, int self) {
    backward_map(gr, xi, gr.grad(self),
                 [scale](int64_t, double gy) { return scale * gy; });
  });
}

DiffTensor concat_channels(const DiffTensor& a, const DiffTensor& b) {
  check_same_graph(a, b, "concat_channels");
  const Shape4 as = a.shape(), bs = b.shape();
  if (as.n != bs.n || as.h != bs.h || as.w != bs.w)
    throw ShapeError("concat_channels: n/h/w axes must match, got " + as.str() +
                     " vs " + bs.str());
  Graph& g = *a.graph();
  Tensor out({as.n, as.c + bs.c, as.h, as.w});
  const int64_t plane = int64_t(as.h) * as.w;
  par_for(as.n, [&](int64_t n) {
    double* dst = out.data() + n * (as.c + bs.c) * plane;
    const double* pa = a.value().data() + n * as.c * plane;
    const double* pb = b.value().data() + n * bs.c * plane;
    std::copy(pa, pa + as.c * plane, dst);
    std::copy(pb, pb + bs.c * plane, dst + as.c * plane);
  });
  const int ai = a.id(), bi = b.id();
  const int ac = as.c, bc = bs.c;
  return g.record(
      "concat_channels", std::move(out), {ai, bi},
      [ai, bi, ac, bc, plane](Graph& gr, int self) {
        const Tensor& gy = gr.grad(self);
        const int nb = gy.shape().n;
        if (gr.requires_grad(ai)) {
          Tensor& ga = gr.grad_buf(ai);
          par_for(nb, [&](int64_t n) {
            const double* src = gy.data() + n * (ac + bc) * plane;
            double* dst = ga.data() + n * ac * plane;
            for (int64_t i = 0; i < ac * plane; ++i) dst[i] += src[i];
          });
        }
        if (gr.requires_grad(bi)) {
          Tensor& gb = gr.grad_buf(bi);
          par_for(nb, [&](int64_t n) {
            const double* src = gy.data() + (n * (ac + bc) + ac) * plane;
            double* dst = gb.data() + n * bc * plane;
            for (int64_t i = 0; i < bc * plane; ++i) dst[i] += src[i];
          });
        }
      });
}

DiffTensor upsample_nearest_x2(const DiffTensor& x) {
  Graph& g = *x.graph();
  const Shape4 s = x.shape();
  Tensor out({s.n, s.c, 2 * s.h, 2 * s.w});
  kernels::upsample2x_forward(x.value(), out);
  const int xi = x.id();
  return g.record("upsample_nearest_x2", std::move(out), {xi},
                  [xi](Graph& gr, int self) {
                    if (gr.requires_grad(xi))
                      kernels::upsample2x_backward(gr.grad(self), gr.grad_buf(xi));
                  });
}

DiffTensor maxpool2x2(const DiffTensor& x) {
  Graph& g = *x.graph();
  const Shape4 s = x.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0)
    throw ShapeError("maxpool2x2: h/w axes must be even, got " + s.str());
  Tensor out({s.n, s.c, s.h / 2, s.w / 2});
  auto argmax = std::make_shared<std::vector<uint8_t>>();
  kernels::maxpool2x2_forward(x.value(), out, *argmax);
  const int xi = x.id();
  return g.record("maxpool2x2", std::move(out), {xi},
                  [xi, argmax](Graph& gr, int self) {
                    if (gr.requires_grad(xi))
                      kernels::maxpool2x2_backward(gr.grad(self), *argmax,
                                                   gr.grad_buf(xi));
                  });
}

DiffTensor sum(const DiffTensor& x) {
  Graph& g = *x.graph();
  const double* xv = x.value().data();
  double acc = 0.0;
  for (int64_t i = 0; i < x.value().numel(); ++i) acc += xv[i];
  const int xi = x.id();
  return g.record("sum", Tensor::scalar(acc), {xi}, [xi](Graph& gr, int self) {
    const double gy = gr.grad(self).data()[0];
    backward_map(gr, xi, gr.value(xi) /*unused sizes only*/,
                 [gy](int64_t, double) { return gy; });
  });
}

DiffTensor sum_per_image(const DiffTensor& x) {
  Graph& g = *x.graph();
  const Shape4 s = x.shape();
  Tensor out({s.n, 1, 1, 1});
  const int64_t per = int64_t(s.c) * s.h * s.w;
  for (int n = 0; n < s.n; ++n) {
    const double* p = x.value().data() + n * per;
    double acc = 0.0;
    for (int64_t i = 0; i < per; ++i) acc += p[i];
    out.data()[n] = acc;
  }
  const int xi = x.id();
  return g.record("sum_per_image", std::move(out), {xi},
                  [xi, per](Graph& gr, int self) {
                    if (!gr.requires_grad(xi)) return;
                    const Tensor& gy = gr.grad(self);
                    Tensor& gx = gr.grad_buf(xi);
                    const int nb = gx.shape().n;
                    par_for(nb, [&](int64_t n) {
                      const double gv = gy.data()[n];
                      double* d = gx.data() + n * per;
                      for (int64_t i = 0; i < per; ++i) d[i] += gv;
                    });
                  });
}

DiffTensor mean(const DiffTensor& x) {
  Graph& g = *x.graph();
  const double* xv = x.value().data();
  const int64_t n = x.value().numel();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) acc += xv[i];
  const int xi = x.id();
  return g.record("mean", Tensor::scalar(acc / double(n)), {xi},
                  [xi, n](Graph& gr, int self) {
                    const double gy = gr.grad(self).data()[0] / double(n);
                    backward_map(gr, xi, gr.value(xi),
                                 [gy](int64_t, double) { return gy; });
                  });
}

}  // namespace segloss
