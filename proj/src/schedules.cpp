#include "segloss/schedules.hpp"

#include "segloss/error.hpp"

namespace segloss {

LossWeights weights_at(const LossSchedule& schedule, int epoch) {
  const int n = epoch, N = schedule.total_epochs;
  if (N < 1) throw ContractError("weights_at: total_epochs must be >= 1");
  if (n < 0 || n > N)
    throw ContractError("weights_at: epoch " + std::to_string(n) +
                        " outside [0, N=" + std::to_string(N) + "]");
  switch (schedule.kind) {
    case ScheduleKind::kBceOnly:
      return {1.0, 0.0};
    case ScheduleKind::kDiceOnly:
      return {0.0, 1.0};
    case ScheduleKind::kAdd:
      return {1.0, 1.0};
    case ScheduleKind::kSoftFinetune:
      return {double(N - n) / double(N), double(n) / double(N)};
    case ScheduleKind::kHardFinetune: {
      const double f = schedule.switch_fraction;
      if (!(f > 0.0 && f < 1.0))
        throw ContractError("weights_at: switch_fraction must be in (0,1)");
      return n < f * double(N) ? LossWeights{1.0, 0.0} : LossWeights{0.0, 1.0};
    }
  }
  throw ContractError("weights_at: unknown schedule kind");
}

std::string schedule_name(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::kBceOnly:
      return "bce";
    case ScheduleKind::kDiceOnly:
      return "dice";
    case ScheduleKind::kAdd:
      return "add";
    case ScheduleKind::kSoftFinetune:
      return "soft_ft";
    case ScheduleKind::kHardFinetune:
      return "hard_ft";
  }
  return "?";
}

std::optional<ScheduleKind> parse_schedule(std::string_view name) {
  if (name == "bce") return ScheduleKind::kBceOnly;
  if (name == "dice") return ScheduleKind::kDiceOnly;
  if (name == "add") return ScheduleKind::kAdd;
  if (name == "soft_ft") return ScheduleKind::kSoftFinetune;
  if (name == "hard_ft") return ScheduleKind::kHardFinetune;
  return std::nullopt;
}

const std::vector<ScheduleKind>& all_schedules() {
  static const std::vector<ScheduleKind> kAll = {
      ScheduleKind::kBceOnly, ScheduleKind::kDiceOnly, ScheduleKind::kAdd,
      ScheduleKind::kSoftFinetune, ScheduleKind::kHardFinetune};
  return kAll;
}

}  // namespace segloss
