#pragma once

#include <cstdint>
#include <vector>

#include "segloss/tensor.hpp"

namespace segloss::kernels {

// Dense NCHW kernels behind the autodiff ops. The OpenMP implementations
// parallelize over output elements only; accumulation order per element is
// fixed, so outputs do not depend on the thread count.
//
// Gradient kernels accumulate (+=) into their output tensor, which the
// caller must have allocated with the right shape.

Shape4 conv2d_out_shape(const Shape4& input, const Shape4& weight, int stride,
                        int padding);

void conv2d_forward(const Tensor& input, const Tensor& weight,
                    const Tensor& bias, Tensor& out, int stride, int padding);
void conv2d_grad_input(const Tensor& grad_out, const Tensor& weight,
                       Tensor& grad_input, int stride, int padding);
void conv2d_grad_weight(const Tensor& grad_out, const Tensor& input,
                        Tensor& grad_weight, int stride, int padding);
void conv2d_grad_bias(const Tensor& grad_out, Tensor& grad_bias);

// 2x2 max pooling with stride 2. `argmax` receives one corner code (0..3)
// per output element; ties take the first corner in row-major scan order.
void maxpool2x2_forward(const Tensor& input, Tensor& out,
                        std::vector<uint8_t>& argmax);
void maxpool2x2_backward(const Tensor& grad_out,
                         const std::vector<uint8_t>& argmax, Tensor& grad_input);

void upsample2x_forward(const Tensor& input, Tensor& out);
void upsample2x_backward(const Tensor& grad_out, Tensor& grad_input);

// Naive single-threaded implementations kept as the reference the tuned
// kernels are tested and benchmarked against.
namespace reference {

void conv2d_forward(const Tensor& input, const Tensor& weight,
                    const Tensor& bias, Tensor& out, int stride, int padding);
void conv2d_grad_input(const Tensor& grad_out, const Tensor& weight,
                       Tensor& grad_input, int stride, int padding);
void conv2d_grad_weight(const Tensor& grad_out, const Tensor& input,
                        Tensor& grad_weight, int stride, int padding);
void conv2d_grad_bias(const Tensor& grad_out, Tensor& grad_bias);
void maxpool2x2_forward(const Tensor& input, Tensor& out,
                        std::vector<uint8_t>& argmax);
void maxpool2x2_backward(const Tensor& grad_out,
                         const std::vector<uint8_t>& argmax, Tensor& grad_input);
void upsample2x_forward(const Tensor& input, Tensor& out);
void upsample2x_backward(const Tensor& grad_out, Tensor& grad_input);

}  // namespace reference

}  // namespace segloss::kernels
