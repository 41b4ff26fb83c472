#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "segloss/tensor.hpp"

namespace segloss {

class Graph;

// Handle to a node in a Graph. Cheap to copy; the graph owns all storage.
class DiffTensor {
 public:
  DiffTensor() = default;
  DiffTensor(Graph* g, int id) : g_(g), id_(id) {}

  const Tensor& value() const;
  // Accumulated gradient; all zeros for nodes backward() never reached.
  const Tensor& grad() const;
  const Shape4& shape() const { return value().shape(); }
  bool requires_grad() const;

  Graph* graph() const { return g_; }
  int id() const { return id_; }
  bool valid() const { return g_ != nullptr; }

 private:
  Graph* g_ = nullptr;
  int id_ = -1;
};

// Define-by-run tape. Values are computed eagerly as ops are recorded, so
// node inputs always precede the node; backward() walks the tape in reverse.
// A graph instance is confined to one thread.
class Graph {
 public:
  using BackFn = std::function<void(Graph&, int self)>;

  struct Node {
    Tensor value;
    Tensor grad;  // allocated on first touch during backward
    std::vector<int> inputs;
    BackFn back;
    const char* op = "leaf";
    bool requires_grad = false;
  };

  DiffTensor leaf(Tensor value, bool requires_grad = false);
  DiffTensor constant(double scalar) { return leaf(Tensor::scalar(scalar)); }

  // Reverse pass from a one-element output. Repeated calls without a fresh
  // graph accumulate into existing gradients.
  void backward(const DiffTensor& out);

  DiffTensor record(const char* op, Tensor value, std::vector<int> inputs,
                    BackFn back);

  const Tensor& value(int id) const { return nodes_[size_t(id)].value; }
  const Tensor& grad(int id);
  // Gradient buffer for accumulation; allocates zeros on first use.
  Tensor& grad_buf(int id);
  bool grad_live(int id) const { return nodes_[size_t(id)].grad.defined(); }
  bool requires_grad(int id) const { return nodes_[size_t(id)].requires_grad; }
  size_t num_nodes() const { return nodes_.size(); }
  const Node& node(int id) const { return nodes_[size_t(id)]; }

 private:
  std::vector<Node> nodes_;
};

// --- op builders -----------------------------------------------------------
// All ops validate shapes eagerly and throw ShapeError/DomainError with the
// offending axes in the message.

DiffTensor conv2d(const DiffTensor& input, const DiffTensor& weight,
                  const DiffTensor& bias, int stride = 1, int padding = 0);
DiffTensor sigmoid(const DiffTensor& x);
DiffTensor relu(const DiffTensor& x);
DiffTensor add(const DiffTensor& a, const DiffTensor& b);
DiffTensor mul(const DiffTensor& a, const DiffTensor& b);
DiffTensor div(const DiffTensor& a, const DiffTensor& b);
DiffTensor log(const DiffTensor& x);  // domain error on nonpositive input
DiffTensor clamp(const DiffTensor& x, double lo, double hi);
DiffTensor affine(const DiffTensor& x, double scale, double shift);
DiffTensor concat_channels(const DiffTensor& a, const DiffTensor& b);
DiffTensor upsample_nearest_x2(const DiffTensor& x);
DiffTensor maxpool2x2(const DiffTensor& x);
DiffTensor sum(const DiffTensor& x);            // -> 1x1x1x1
DiffTensor sum_per_image(const DiffTensor& x);  // -> Nx1x1x1
DiffTensor mean(const DiffTensor& x);           // -> 1x1x1x1

}  // namespace segloss
