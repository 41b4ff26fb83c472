#include "segloss/losses.hpp"

#include <cmath>
#include <string>

#include "segloss/error.hpp"

namespace segloss {

namespace {

void check_loss_inputs(const DiffTensor& pred, const Tensor& target,
                       const LossConfig& cfg, const char* op) {
  if (!(pred.shape() == target.shape()))
    throw ShapeError(std::string(op) + ": prediction shape " +
                     pred.shape().str() + " does not match target " +
                     target.shape().str());
  if (!(cfg.clamp_eps > 0.0 && cfg.clamp_eps <= 1e-3))
    throw ContractError(std::string(op) + ": clamp_eps must be in (0, 1e-3]");
  if (cfg.dice_smooth < 0.0)
    throw ContractError(std::string(op) + ": dice_smooth must be nonnegative");
  const double* t = target.data();
  for (int64_t i = 0; i < target.numel(); ++i)
    if (t[i] != 0.0 && t[i] != 1.0)
      throw DomainError(std::string(op) + ": target is not binary at flat index " +
                        std::to_string(i) + " (value " + std::to_string(t[i]) + ")");
}

}  // namespace

DiffTensor bce_loss(const DiffTensor& pred, const Tensor& target,
                    const LossConfig& cfg) {
  check_loss_inputs(pred, target, cfg, "bce_loss");
  Graph& g = *pred.graph();
  DiffTensor y = g.leaf(target);
  DiffTensor one_minus_y = affine(y, -1.0, 1.0);
  DiffTensor p = clamp(pred, cfg.clamp_eps, 1.0 - cfg.clamp_eps);
  DiffTensor term = add(mul(y, log(p)), mul(one_minus_y, log(affine(p, -1.0, 1.0))));
  return affine(mean(term), -1.0, 0.0);
}

DiffTensor soft_dice_loss(const DiffTensor& pred, const Tensor& target,
                          const LossConfig& cfg) {
  check_loss_inputs(pred, target, cfg, "soft_dice_loss");
  Graph& g = *pred.graph();
  DiffTensor y = g.leaf(target);
  const double s = cfg.dice_smooth;

  auto ratio_terms = [&](const DiffTensor& yp_dot, const DiffTensor& pp_dot,
                         const std::vector<double>& yy) {
    // numerator 2<y,p> + s ; denominator <y,y> + <p,p> + s
    const int nb = int(yy.size());
    DiffTensor num = affine(yp_dot, 2.0, s);
    Tensor yy_s({nb, 1, 1, 1});
    for (int i = 0; i < nb; ++i) yy_s.data()[i] = yy[i] + s;
    DiffTensor den = add(pp_dot, g.leaf(yy_s));

    // An all-zero denominator can only happen with s = 0, y = 0 and p = 0;
    // that image's dice ratio is defined as 1 and contributes loss 0. The
    // denominator is lifted to 1 there (numerator is exactly 0, so the
    // gradient through both paths is exactly zero), and the constant shift
    // below moves the ratio from 0 to 1.
    Tensor lift({nb, 1, 1, 1});
    Tensor shift({nb, 1, 1, 1});
    bool any_degenerate = false;
    for (int i = 0; i < nb; ++i) {
      const bool zero_den = den.value().data()[i] == 0.0;
      lift.data()[i] = zero_den ? 1.0 : 0.0;
      shift.data()[i] = zero_den ? 1.0 : 0.0;
      any_degenerate |= zero_den;
    }
    DiffTensor ratio = any_degenerate ? div(num, add(den, g.leaf(lift))) : div(num, den);
    if (any_degenerate) ratio = add(ratio, g.leaf(shift));
    // loss per image = 1 - ratio
    return affine(ratio, -1.0, 1.0);
  };

  if (cfg.dice_granularity == DiceGranularity::kWholeBatch) {
    DiffTensor yp = sum(mul(y, pred));
    DiffTensor pp = sum(mul(pred, pred));
    double yy = 0.0;
    for (int64_t i = 0; i < target.numel(); ++i) yy += target.data()[i];
    return mean(ratio_terms(yp, pp, {yy}));
  }

  const int nb = pred.shape().n;
  DiffTensor yp = sum_per_image(mul(y, pred));
  DiffTensor pp = sum_per_image(mul(pred, pred));
  std::vector<double> yy(size_t(nb), 0.0);
  const int64_t per = target.numel() / nb;
  for (int b = 0; b < nb; ++b) {
    const double* t = target.data() + b * per;
    for (int64_t i = 0; i < per; ++i) yy[size_t(b)] += t[i];
  }
  return mean(ratio_terms(yp, pp, yy));
}

DiffTensor combined_loss(const DiffTensor& pred, const Tensor& target,
                         double w_bce, double w_dice, const LossConfig& cfg) {
  if (w_bce < 0.0 || w_dice < 0.0)
    throw ContractError("combined_loss: weights must be nonnegative");
  auto weighted = [&](DiffTensor t, double w) {
    return w == 1.0 ? t : affine(t, w, 0.0);
  };
  if (w_dice == 0.0 && w_bce == 0.0)
    return pred.graph()->constant(0.0);
  if (w_dice == 0.0) return weighted(bce_loss(pred, target, cfg), w_bce);
  if (w_bce == 0.0) return weighted(soft_dice_loss(pred, target, cfg), w_dice);
  return add(weighted(bce_loss(pred, target, cfg), w_bce),
             weighted(soft_dice_loss(pred, target, cfg), w_dice));
}

DscResult dsc_metric(const Mask& pred, const Mask& gt) {
  if (pred.h != gt.h || pred.w != gt.w)
    throw ShapeError("dsc_metric: mask shapes " + std::to_string(pred.h) + "x" +
                     std::to_string(pred.w) + " vs " + std::to_string(gt.h) + "x" +
                     std::to_string(gt.w));
  DscResult r;
  for (int64_t i = 0; i < pred.numel(); ++i) {
    const bool p = pred.pix[size_t(i)] != 0;
    const bool t = gt.pix[size_t(i)] != 0;
    r.tp += p && t;
    r.fp += p && !t;
    r.fn += !p && t;
  }
  if (r.tp + r.fp + r.fn == 0)
    throw ContractError(
        "dsc_metric: both masks empty; apply the empty-mask scoring rules first");
  r.dsc = 2.0 * double(r.tp) / double(2 * r.tp + r.fp + r.fn);
  return r;
}

}  // namespace segloss
