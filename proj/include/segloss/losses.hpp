#pragma once

#include "segloss/autodiff.hpp"
#include "segloss/image.hpp"

namespace segloss {

enum class DiceGranularity {
  kPerImage,   // one ratio per image, then mean over the batch
  kWholeBatch  // single ratio over all pixels of the batch
};

struct LossConfig {
  double clamp_eps = 1e-7;   // in (0, 1e-3]; keeps log away from 0
  double dice_smooth = 0.0;  // added to numerator and denominator
  DiceGranularity dice_granularity = DiceGranularity::kPerImage;
};

// -(1/N) * sum[y*log(p) + (1-y)*log(1-p)], p clamped to [eps, 1-eps].
DiffTensor bce_loss(const DiffTensor& pred, const Tensor& target,
                    const LossConfig& cfg = {});

// 1 - (2<y,p> + s) / (<y,y> + <p,p> + s), per image or whole batch.
// With s = 0 and an image where both y and p are all zero, that image's
// loss is defined as 0 (the limit of the smoothed form).
DiffTensor soft_dice_loss(const DiffTensor& pred, const Tensor& target,
                          const LossConfig& cfg = {});

// w_bce * bce + w_dice * dice; a term with weight exactly 0 is not built.
DiffTensor combined_loss(const DiffTensor& pred, const Tensor& target,
                         double w_bce, double w_dice,
                         const LossConfig& cfg = {});

struct DscResult {
  double dsc = 0.0;
  int64_t tp = 0, fp = 0, fn = 0;
};

// 2TP / (2TP + FP + FN). Caller must handle the both-empty case first.
DscResult dsc_metric(const Mask& pred, const Mask& gt);

}  // namespace segloss
