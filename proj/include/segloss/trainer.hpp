#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "segloss/image.hpp"
#include "segloss/losses.hpp"
#include "segloss/schedules.hpp"
#include "segloss/segnet.hpp"

namespace segloss {

struct TrainConfig {
  int total_steps = 2000;
  int batch_size = 4;
  double lr_max = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  LossSchedule schedule;      // total_epochs must equal total_steps/steps_per_epoch
  int steps_per_epoch = 100;  // epoch = step / steps_per_epoch
  uint64_t seed = 0;
  int log_every = 50;
  LossConfig loss;
  // Where to save the last good parameters if the loss goes non-finite;
  // empty disables the dump.
  std::filesystem::path abort_checkpoint;
};

// Builds the schedule for a step budget: N = total_steps / steps_per_epoch,
// rounded down.
LossSchedule make_schedule(ScheduleKind kind, int total_steps,
                           int steps_per_epoch, double switch_fraction = 0.9);

// lr_max * (1 + cos(pi * step / total_steps)) / 2; step in [0, total_steps].
double cosine_lr(int step, const TrainConfig& cfg);

struct AdamState {
  std::vector<Tensor> m, v;  // first/second moments, one per parameter
  int64_t t = 0;

  static AdamState init_like(const Model& model);
};

// Bias-corrected Adam update, in parameter order. Throws NumericError naming
// the parameter if a gradient is not finite.
void adam_step(std::vector<Param>& params, const std::vector<Tensor>& grads,
               AdamState& state, double lr, const TrainConfig& cfg);

struct TrainLogRow {
  int step = 0;
  double lr = 0.0, w_bce = 0.0, w_dice = 0.0, loss = 0.0;
};

struct TrainResult {
  std::vector<TrainLogRow> log;
};

// Minibatch loop: sample with replacement, augment, forward, combined loss
// with the schedule's epoch weights, backward, Adam step at the cosine rate.
// No early stopping; the final parameters are kept.
TrainResult train(Model& model, const std::vector<Sample>& train_samples,
                  const TrainConfig& cfg);

// CSV: step,lr,w_bce,w_dice,loss
void write_train_log(const std::vector<TrainLogRow>& log,
                     const std::filesystem::path& path);

}  // namespace segloss
