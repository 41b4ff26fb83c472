#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "segloss/error.hpp"

namespace segloss {

// NCHW shape. Rank 4 is the only tensor rank in the engine; scalars are
// 1x1x1x1 and per-image scalars are Nx1x1x1.
struct Shape4 {
  int n = 0, c = 0, h = 0, w = 0;

  int64_t numel() const { return int64_t(n) * c * h * w; }
  bool operator==(const Shape4&) const = default;
  std::string str() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" +
           std::to_string(h) + "x" + std::to_string(w);
  }
};

// Dense 64-bit float array. Plain value type; the autodiff graph wraps it.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape4 s, double fill = 0.0)
      : shape_(s), data_(size_t(s.numel()), fill) {}

  Tensor(Shape4 s, std::vector<double> data)
      : shape_(s), data_(std::move(data)) {
    if (int64_t(data_.size()) != shape_.numel())
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_.str());
  }

  static Tensor scalar(double v) { return Tensor({1, 1, 1, 1}, {v}); }

  const Shape4& shape() const { return shape_; }
  int64_t numel() const { return shape_.numel(); }
  bool defined() const { return shape_.numel() > 0; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& at(int n, int c, int y, int x) {
    return data_[size_t(((int64_t(n) * shape_.c + c) * shape_.h + y) * shape_.w + x)];
  }
  double at(int n, int c, int y, int x) const {
    return data_[size_t(((int64_t(n) * shape_.c + c) * shape_.h + y) * shape_.w + x)];
  }

  // Value of a one-element tensor.
  double item() const {
    if (numel() != 1)
      throw ContractError("item() on tensor of shape " + shape_.str());
    return data_[0];
  }

 private:
  Shape4 shape_;
  std::vector<double> data_;
};

}  // namespace segloss
