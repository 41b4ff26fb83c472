#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace segloss {

// The five training strategies: single losses, equal-weight addition,
// linear soft fine-tuning, and a hard switch late in training.
enum class ScheduleKind { kBceOnly, kDiceOnly, kAdd, kSoftFinetune, kHardFinetune };

struct LossSchedule {
  ScheduleKind kind = ScheduleKind::kBceOnly;
  int total_epochs = 1;          // N; epochs run n = 0..N
  double switch_fraction = 0.9;  // HardFinetune only, in (0,1)
};

struct LossWeights {
  double bce = 0.0;
  double dice = 0.0;
};

// Weight pair at epoch n:
//   BceOnly (1,0) | DiceOnly (0,1) | Add (1,1)
//   SoftFinetune ((N-n)/N, n/N)
//   HardFinetune (1,0) while n < switch_fraction*N, else (0,1)
LossWeights weights_at(const LossSchedule& schedule, int epoch);

// Config-file names: bce | dice | add | soft_ft | hard_ft
std::string schedule_name(ScheduleKind kind);
std::optional<ScheduleKind> parse_schedule(std::string_view name);
const std::vector<ScheduleKind>& all_schedules();

}  // namespace segloss
