#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "segloss/image.hpp"
#include "segloss/segnet.hpp"

namespace segloss {

// Per-image probability map predictor. Models are wrapped with
// predictor_of(); tests may pass arbitrary stubs.
using Predictor = std::function<Image(const Image&)>;

Predictor predictor_of(const Model& model);

// Pixelwise p >= t. If the resulting foreground count is <= min_area the
// mask is emptied (min_area 0 keeps the strict rule).
Mask threshold(const Image& prob_map, double t = 0.5, int min_area = 0);

struct EvalRecord {
  std::string id;
  double dsc = 0.0;
  int64_t tp = 0, fp = 0, fn = 0;
  bool gt_empty = false;
  bool pred_empty = false;
  bool rejected = false;  // == pred_empty
};

// Empty-mask scoring rules: both empty -> 1, exactly one empty -> 0,
// otherwise 2TP/(2TP+FP+FN).
EvalRecord score_image(const Mask& pred_mask, const Mask& gt_mask);

// Mean of member probability maps. With tta, each member contributes the
// mean over {identity, h-flip, v-flip, h+v-flip}, each inverse-transformed
// before averaging. Member maps are summed in sorted value order per pixel,
// so the output does not depend on member order.
Image ensemble_predict(std::span<const Predictor> members, const Image& image,
                       bool tta);

struct EvalConfig {
  double threshold_t = 0.5;
  int min_area = 0;
  bool tta = false;
};

struct ReportRow {
  std::string schedule;
  std::string encoder;
  double mean_dsc = 0.0;      // x100, the tables' convention
  double rejected_pct = 0.0;  // 100 * #empty predictions / n
  std::optional<double> id_dsc;   // x100 over lesion images
  std::optional<double> ood_dsc;  // x100 over no-lesion images
  int n = 0;
};

struct SplitReport {
  std::vector<EvalRecord> records;  // sorted by sample id
  ReportRow row;
};

SplitReport evaluate_split(std::span<const Predictor> members,
                           const std::vector<Sample>& samples,
                           const EvalConfig& cfg, const std::string& schedule,
                           const std::string& encoder);

// CSV: schedule,encoder,mean_dsc,rejected_pct,id_dsc,ood_dsc,n
void write_report(const std::vector<ReportRow>& rows,
                  const std::filesystem::path& path);
// CSV: id,dsc,tp,fp,fn,gt_empty,pred_empty,rejected
void write_per_image(const std::vector<EvalRecord>& records,
                     const std::filesystem::path& path);

}  // namespace segloss
