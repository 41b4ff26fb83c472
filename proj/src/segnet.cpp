#include "segloss/segnet.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "segloss/error.hpp"
#include "segloss/rng.hpp"

namespace segloss {

namespace {

struct ConvSpec {
  std::string name;
  int in_ch, out_ch, k;
};

// Parameter layout is fully determined by the config; init, bind and
// forward all walk the same spec list.
std::vector<ConvSpec> conv_specs(const ModelConfig& cfg) {
  std::vector<ConvSpec> specs;
  const int stages = cfg.cascade ? 2 : 1;
  for (int s = 0; s < stages; ++s) {
    const std::string sp = "s" + std::to_string(s) + ".";
    const int in_ch = s == 0 ? cfg.in_channels : cfg.in_channels + 1;
    int prev = in_ch;
    for (int d = 0; d < cfg.depth; ++d) {
      const int ch = cfg.base_channels << d;
      specs.push_back({sp + "enc" + std::to_string(d) + ".c1", prev, ch, 3});
      specs.push_back({sp + "enc" + std::to_string(d) + ".c2", ch, ch, 3});
      prev = ch;
    }
    const int cb = cfg.base_channels << cfg.depth;
    specs.push_back({sp + "bott.c1", prev, cb, 3});
    specs.push_back({sp + "bott.c2", cb, cb, 3});
    prev = cb;
    for (int d = cfg.depth - 1; d >= 0; --d) {
      const int ch = cfg.base_channels << d;
      specs.push_back({sp + "dec" + std::to_string(d) + ".up", prev, ch, 3});
      specs.push_back({sp + "dec" + std::to_string(d) + ".cat", 2 * ch, ch, 3});
      prev = ch;
    }
    specs.push_back({sp + "head", prev, 1, 1});
  }
  return specs;
}

constexpr char kMagic[4] = {'S', 'E', 'G', 'N'};
constexpr uint32_t kVersion = 1;

template <class T>
void write_raw(std::ofstream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
void read_raw(std::ifstream& is, T& v, const char* what) {
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError(std::string("checkpoint truncated reading ") + what);
}

}  // namespace

Model Model::init(const ModelConfig& config) {
  if (config.base_channels < 1 || config.depth < 1 || config.in_channels < 1)
    throw ContractError("Model::init: channels and depth must be positive");
  Model m;
  m.config_ = config;
  Rng rng(config.seed);
  for (const ConvSpec& cs : conv_specs(config)) {
    Tensor w({cs.out_ch, cs.in_ch, cs.k, cs.k});
    const double stddev = std::sqrt(2.0 / double(cs.in_ch * cs.k * cs.k));
    for (double& v : w.vec()) v = rng.normal(0.0, stddev);
    m.params_.push_back({cs.name + ".w", std::move(w)});
    m.params_.push_back({cs.name + ".b", Tensor({1, cs.out_ch, 1, 1})});
  }
  return m;
}

int64_t Model::param_count() const {
  int64_t n = 0;
  for (const Param& p : params_) n += p.value.numel();
  return n;
}

std::vector<DiffTensor> Model::bind(Graph& g, bool requires_grad) const {
  std::vector<DiffTensor> bound;
  bound.reserve(params_.size());
  for (const Param& p : params_) bound.push_back(g.leaf(p.value, requires_grad));
  return bound;
}

DiffTensor Model::forward(Graph& g, std::span<const DiffTensor> bound,
                          const DiffTensor& image) const {
  const Shape4 s = image.shape();
  const int div = 1 << config_.depth;
  if (s.h % div != 0 || s.w % div != 0)
    throw ShapeError("forward: h/w axes of " + s.str() +
                     " must be divisible by 2^depth = " + std::to_string(div));
  if (s.c != config_.in_channels)
    throw ShapeError("forward: input channel axis c=" + std::to_string(s.c) +
                     " does not match configured in_channels=" +
                     std::to_string(config_.in_channels));

  size_t cursor = 0;
  auto next_conv = [&](const DiffTensor& x, int stride, int padding) {
    const DiffTensor w = bound[cursor++];
    const DiffTensor b = bound[cursor++];
    return conv2d(x, w, b, stride, padding);
  };

  auto run_stage = [&](const DiffTensor& x) {
    std::vector<DiffTensor> skips;
    DiffTensor cur = x;
    for (int d = 0; d < config_.depth; ++d) {
      cur = relu(next_conv(cur, 1, 1));
      cur = relu(next_conv(cur, 1, 1));
      skips.push_back(cur);
      cur = maxpool2x2(cur);
    }
    cur = relu(next_conv(cur, 1, 1));
    cur = relu(next_conv(cur, 1, 1));
    for (int d = config_.depth - 1; d >= 0; --d) {
      cur = upsample_nearest_x2(cur);
      cur = relu(next_conv(cur, 1, 1));
      cur = concat_channels(cur, skips[size_t(d)]);
      cur = relu(next_conv(cur, 1, 1));
    }
    return sigmoid(next_conv(cur, 1, 0));
  };

  DiffTensor out = run_stage(image);
  if (config_.cascade) out = run_stage(concat_channels(image, out));
  if (cursor != bound.size())
    throw ContractError("forward: bound parameter list does not match model");
  return out;
}

Tensor Model::predict(const Tensor& image) const {
  Graph g;
  const std::vector<DiffTensor> bound = bind(g, /*requires_grad=*/false);
  DiffTensor out = forward(g, bound, g.leaf(image));
  return out.value();
}

void Model::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path.string());
  os.write(kMagic, 4);
  write_raw(os, kVersion);
  write_raw(os, int32_t(config_.base_channels));
  write_raw(os, int32_t(config_.depth));
  write_raw(os, uint8_t(config_.cascade ? 1 : 0));
  write_raw(os, int32_t(config_.in_channels));
  write_raw(os, uint64_t(config_.seed));
  write_raw(os, uint32_t(params_.size()));
  for (const Param& p : params_) {
    write_raw(os, uint32_t(p.name.size()));
    os.write(p.name.data(), std::streamsize(p.name.size()));
    const Shape4 sh = p.value.shape();
    write_raw(os, int32_t(sh.n));
    write_raw(os, int32_t(sh.c));
    write_raw(os, int32_t(sh.h));
    write_raw(os, int32_t(sh.w));
    os.write(reinterpret_cast<const char*>(p.value.data()),
             std::streamsize(sizeof(double) * size_t(p.value.numel())));
  }
  if (!os) throw IoError("write failed for checkpoint: " + path.string());
}

Model Model::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("not a checkpoint file (bad magic): " + path.string());
  uint32_t version = 0;
  read_raw(is, version, "version");
  if (version != kVersion)
    throw IoError("checkpoint version " + std::to_string(version) +
                  " unsupported (expected " + std::to_string(kVersion) + ")");
  ModelConfig cfg;
  int32_t base = 0, depth = 0, in_ch = 0;
  uint8_t cascade = 0;
  uint64_t seed = 0;
  read_raw(is, base, "base_channels");
  read_raw(is, depth, "depth");
  read_raw(is, cascade, "cascade");
  read_raw(is, in_ch, "in_channels");
  read_raw(is, seed, "seed");
  cfg.base_channels = base;
  cfg.depth = depth;
  cfg.cascade = cascade != 0;
  cfg.in_channels = in_ch;
  cfg.seed = seed;

  Model m;
  m.config_ = cfg;
  uint32_t count = 0;
  read_raw(is, count, "parameter count");
  const std::vector<ConvSpec> specs = conv_specs(cfg);
  if (count != 2 * specs.size())
    throw IoError("checkpoint corrupt: parameter count " + std::to_string(count) +
                  " does not match config");
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t len = 0;
    read_raw(is, len, "name length");
    if (len > 4096) throw IoError("checkpoint corrupt: name length " + std::to_string(len));
    std::string name(len, '\0');
    is.read(name.data(), std::streamsize(len));
    if (!is) throw IoError("checkpoint truncated reading name");
    int32_t sn, sc, sh, sw;
    read_raw(is, sn, "shape");
    read_raw(is, sc, "shape");
    read_raw(is, sh, "shape");
    read_raw(is, sw, "shape");
    const Shape4 shape{sn, sc, sh, sw};
    if (shape.numel() <= 0 || shape.numel() > (int64_t(1) << 32))
      throw IoError("checkpoint corrupt: shape " + shape.str());
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.data()),
            std::streamsize(sizeof(double) * size_t(t.numel())));
    if (!is) throw IoError("checkpoint truncated reading tensor data");
    m.params_.push_back({std::move(name), std::move(t)});
  }
  // Cross-check the record layout against the config-derived spec.
  for (size_t i = 0; i < specs.size(); ++i) {
    const ConvSpec& cs = specs[i];
    const Param& w = m.params_[2 * i];
    const Param& b = m.params_[2 * i + 1];
    const Shape4 want_w{cs.out_ch, cs.in_ch, cs.k, cs.k};
    const Shape4 want_b{1, cs.out_ch, 1, 1};
    if (w.name != cs.name + ".w" || !(w.value.shape() == want_w) ||
        b.name != cs.name + ".b" || !(b.value.shape() == want_b))
      throw IoError("checkpoint corrupt: unexpected record " + w.name);
  }
  return m;
}

}  // namespace segloss
