#include "segloss/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "segloss/error.hpp"
#include "segloss/rng.hpp"
#include "segloss/synth_data.hpp"

namespace segloss {

LossSchedule make_schedule(ScheduleKind kind, int total_steps,
                           int steps_per_epoch, double switch_fraction) {
  if (steps_per_epoch < 1 || total_steps < steps_per_epoch)
    throw ContractError("make_schedule: need total_steps >= steps_per_epoch >= 1");
  LossSchedule s;
  s.kind = kind;
  s.total_epochs = total_steps / steps_per_epoch;
  s.switch_fraction = switch_fraction;
  return s;
}

double cosine_lr(int step, const TrainConfig& cfg) {
  if (step < 0 || step > cfg.total_steps)
    throw ContractError("cosine_lr: step " + std::to_string(step) +
                        " outside [0, " + std::to_string(cfg.total_steps) + "]");
  return cfg.lr_max * 0.5 *
         (1.0 + std::cos(3.14159265358979323846 * double(step) /
                         double(cfg.total_steps)));
}

AdamState AdamState::init_like(const Model& model) {
  AdamState st;
  for (const Param& p : model.params()) {
    st.m.emplace_back(p.value.shape());
    st.v.emplace_back(p.value.shape());
  }
  return st;
}

void adam_step(std::vector<Param>& params, const std::vector<Tensor>& grads,
               AdamState& state, double lr, const TrainConfig& cfg) {
  if (grads.size() != params.size() || state.m.size() != params.size())
    throw ContractError("adam_step: parameter/gradient/state sizes differ");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.t));
  for (size_t i = 0; i < params.size(); ++i) {
    double* p = params[i].value.data();
    const double* g = grads[i].data();
    double* m = state.m[i].data();
    double* v = state.v[i].data();
    const int64_t n = params[i].value.numel();
    for (int64_t j = 0; j < n; ++j) {
      if (!std::isfinite(g[j]))
        throw NumericError("adam_step: non-finite gradient in parameter '" +
                           params[i].name + "' at flat index " + std::to_string(j));
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
  }
}

namespace {

// Stacks images (and masks) into NCHW batch tensors.
void fill_batch(const std::vector<Sample>& pool, const std::vector<int>& idx,
                Rng& aug_rng, Tensor& images, Tensor& targets) {
  const int hb = pool[size_t(idx[0])].image.h, wb = pool[size_t(idx[0])].image.w;
  for (size_t b = 0; b < idx.size(); ++b) {
    const Sample s = augment(pool[size_t(idx[b])], aug_rng);
    if (s.image.h != hb || s.image.w != wb)
      throw ContractError("train: samples in a batch must share one size");
    double* di = images.data() + int64_t(b) * hb * wb;
    double* dt = targets.data() + int64_t(b) * hb * wb;
    for (int64_t i = 0; i < int64_t(hb) * wb; ++i) {
      di[i] = s.image.pix[size_t(i)];
      dt[i] = double(s.mask.pix[size_t(i)]);
    }
  }
}

void check_probability_map(const Tensor& out, int step) {
  const double* v = out.data();
  for (int64_t i = 0; i < out.numel(); ++i)
    if (!std::isfinite(v[i]) || v[i] < 0.0 || v[i] > 1.0)
      throw NumericError("train: invalid probability " + std::to_string(v[i]) +
                         " in output at step " + std::to_string(step));
}

}  // namespace

TrainResult train(Model& model, const std::vector<Sample>& train_samples,
                  const TrainConfig& cfg) {
  if (train_samples.empty())
    throw ContractError("train: training split is empty");
  if (cfg.schedule.total_epochs != cfg.total_steps / cfg.steps_per_epoch)
    throw ContractError("train: schedule.total_epochs must be total_steps / "
                        "steps_per_epoch");

  Rng batch_rng(Rng::mix(cfg.seed, "batch"));
  Rng aug_rng(Rng::mix(cfg.seed, "augment"));

  const int h = train_samples[0].image.h, w = train_samples[0].image.w;
  Tensor images({cfg.batch_size, 1, h, w});
  Tensor targets({cfg.batch_size, 1, h, w});
  AdamState adam = AdamState::init_like(model);
  std::vector<Tensor> grads(model.params().size());

  TrainResult result;
  for (int step = 0; step < cfg.total_steps; ++step) {
    std::vector<int> idx(size_t(cfg.batch_size));
    for (int& i : idx) i = batch_rng.uniform_int(int(train_samples.size()));
    fill_batch(train_samples, idx, aug_rng, images, targets);

    Graph g;
    const std::vector<DiffTensor> bound = model.bind(g);
    const DiffTensor out = model.forward(g, bound, g.leaf(images));
    check_probability_map(out.value(), step);

    const int epoch = step / cfg.steps_per_epoch;
    const LossWeights lw = weights_at(cfg.schedule, epoch);
    const DiffTensor loss = combined_loss(out, targets, lw.bce, lw.dice, cfg.loss);
    const double loss_value = loss.value().item();
    if (!std::isfinite(loss_value)) {
      if (!cfg.abort_checkpoint.empty()) model.save(cfg.abort_checkpoint);
      throw NumericError(
          "train: non-finite loss at step " + std::to_string(step) +
          (cfg.abort_checkpoint.empty()
               ? ""
               : "; last good parameters saved to " + cfg.abort_checkpoint.string()));
    }
    g.backward(loss);

    const double lr = cosine_lr(step, cfg);
    for (size_t i = 0; i < bound.size(); ++i) grads[i] = bound[i].grad();
    try {
      adam_step(model.params(), grads, adam, lr, cfg);
    } catch (const NumericError&) {
      if (!cfg.abort_checkpoint.empty()) model.save(cfg.abort_checkpoint);
      throw;
    }

    if (step % cfg.log_every == 0 || step == cfg.total_steps - 1)
      result.log.push_back({step, lr, lw.bce, lw.dice, loss_value});
  }
  return result;
}

void write_train_log(const std::vector<TrainLogRow>& log,
                     const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os << "step,lr,w_bce,w_dice,loss\n";
  char buf[160];
  for (const TrainLogRow& r : log) {
    std::snprintf(buf, sizeof buf, "%d,%.12g,%.12g,%.12g,%.12g\n", r.step, r.lr,
                  r.w_bce, r.w_dice, r.loss);
    os << buf;
  }
  if (!os) throw IoError("write failed: " + path.string());
}

}  // namespace segloss
