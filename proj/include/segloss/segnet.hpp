#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "segloss/autodiff.hpp"
#include "segloss/tensor.hpp"

namespace segloss {

struct ModelConfig {
  int base_channels = 8;
  int depth = 3;
  bool cascade = true;
  int in_channels = 1;
  uint64_t seed = 0;
};

struct Param {
  std::string name;
  Tensor value;
};

// Cascaded encoder-decoder. Each stage is a small U-shaped net: depth blocks
// of (conv3x3+relu, conv3x3+relu, maxpool2x2), a two-conv bottleneck, and a
// mirrored decoder of (nearest x2 upsample, conv3x3+relu, skip concat,
// conv3x3+relu), closed by a 1x1 conv and a sigmoid. With cascade on, the
// second stage sees the input image concatenated with the first stage's
// probability map and its output is the final map.
class Model {
 public:
  static Model init(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }
  int64_t param_count() const;

  // Binds every parameter as a graph leaf, in parameter order.
  std::vector<DiffTensor> bind(Graph& g, bool requires_grad = true) const;

  // Probability map with the input's spatial shape and one channel.
  // Spatial dims must be divisible by 2^depth.
  DiffTensor forward(Graph& g, std::span<const DiffTensor> bound,
                     const DiffTensor& image) const;

  // Inference shortcut: fresh graph, no gradients.
  Tensor predict(const Tensor& image) const;

  void save(const std::filesystem::path& path) const;
  static Model load(const std::filesystem::path& path);

 private:
  ModelConfig config_;
  std::vector<Param> params_;
};

}  // namespace segloss
