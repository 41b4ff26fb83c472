#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "segloss/evaluator.hpp"
#include "segloss/schedules.hpp"
#include "segloss/segnet.hpp"
#include "segloss/trainer.hpp"

namespace segloss {

// Everything one experiment needs; serialized as a flat key = value file and
// archived next to the results.
struct ExperimentConfig {
  uint64_t master_seed = 1;
  std::string out_dir;
  int jobs = 0;  // 0 = all hardware threads

  // training dataset (lesion images only are used for training)
  int n_lesion = 200;
  int n_clean = 0;
  int height = 64;
  int width = 64;

  // evaluation split
  int eval_n_id = 80;
  int eval_n_ood = 20;
  bool eval_tta = false;
  double eval_threshold = 0.5;
  int eval_min_area = 0;

  // model
  int base_channels = 8;
  int depth = 3;
  bool cascade = true;

  // training
  int folds = 5;
  int total_steps = 2000;
  int batch_size = 4;
  int steps_per_epoch = 100;
  int log_every = 50;
  double lr_max = 3e-4;
  double clamp_eps = 1e-7;
  double dice_smooth = 0.0;
  bool dice_whole_batch = false;
  double hard_switch_fraction = 0.9;

  std::vector<ScheduleKind> schedules = all_schedules();
};

std::string serialize_config(const ExperimentConfig& cfg);
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const ExperimentConfig& cfg, const std::filesystem::path& path);

std::string encoder_name(const ExperimentConfig& cfg);

enum class StageErrorKind { kNone, kData, kNumeric, kOther };

struct ScheduleOutcome {
  ScheduleKind kind = ScheduleKind::kBceOnly;
  bool ok = false;
  StageErrorKind error_kind = StageErrorKind::kNone;
  std::string error;
  ReportRow id_row;     // evaluation over lesion images only
  ReportRow mixed_row;  // evaluation over the full ID+OoD split
  // Rejection percentage within the OoD subset of the mixed split.
  double ood_rejected_pct = 0.0;
  double train_seconds = 0.0;
};

struct SweepResult {
  std::vector<ScheduleOutcome> outcomes;
  bool all_ok = false;
  double wall_seconds = 0.0;
  std::filesystem::path report_id_csv;
  std::filesystem::path report_ood_csv;
};

// Runs generate (if the dataset is not already on disk), k-fold training per
// schedule, and both evaluation regimes; reports are rewritten after every
// completed schedule so interrupted runs keep their finished rows.
SweepResult run_sweep(const ExperimentConfig& cfg, std::ostream& log);

// Shared by the CLI and the sweep: trains one schedule on every fold,
// writing fold_<i>.ckpt and fold_<i>_log.csv under out_dir. Clean images in
// the pool are refused unless allow_clean is set (the paper's setup trains
// on lesion images only).
struct FoldTrainResult {
  std::vector<std::filesystem::path> checkpoints;
};
FoldTrainResult train_folds(const std::vector<Sample>& train_pool,
                            ScheduleKind schedule, const ExperimentConfig& cfg,
                            const std::filesystem::path& out_dir,
                            std::ostream& log, bool allow_clean = false);

}  // namespace segloss
