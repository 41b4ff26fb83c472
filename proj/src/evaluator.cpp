#include "segloss/evaluator.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "segloss/error.hpp"
#include "segloss/losses.hpp"
#include "segloss/parallel.hpp"

namespace segloss {

Predictor predictor_of(const Model& model) {
  return [&model](const Image& img) {
    Tensor in({1, 1, img.h, img.w});
    std::copy(img.pix.begin(), img.pix.end(), in.data());
    const Tensor out = model.predict(in);
    Image prob(img.h, img.w);
    std::copy(out.data(), out.data() + out.numel(), prob.pix.begin());
    return prob;
  };
}

Mask threshold(const Image& prob_map, double t, int min_area) {
  if (!(t > 0.0 && t < 1.0))
    throw ContractError("threshold: t must be inside (0,1)");
  if (min_area < 0) throw ContractError("threshold: min_area must be >= 0");
  Mask m(prob_map.h, prob_map.w);
  for (int64_t i = 0; i < prob_map.numel(); ++i)
    m.pix[size_t(i)] = prob_map.pix[size_t(i)] >= t ? 1 : 0;
  if (m.foreground() <= min_area) m = Mask(prob_map.h, prob_map.w);
  return m;
}

EvalRecord score_image(const Mask& pred_mask, const Mask& gt_mask) {
  if (pred_mask.h != gt_mask.h || pred_mask.w != gt_mask.w)
    throw ShapeError("score_image: mask shapes differ");
  EvalRecord r;
  r.gt_empty = gt_mask.empty_fg();
  r.pred_empty = pred_mask.empty_fg();
  r.rejected = r.pred_empty;
  if (r.gt_empty && r.pred_empty) {
    r.dsc = 1.0;
  } else if (r.gt_empty || r.pred_empty) {
    r.dsc = 0.0;
    const DscResult c = r.gt_empty ? DscResult{0, 0, pred_mask.foreground(), 0}
                                   : DscResult{0, 0, 0, gt_mask.foreground()};
    r.tp = c.tp;
    r.fp = c.fp;
    r.fn = c.fn;
  } else {
    const DscResult c = dsc_metric(pred_mask, gt_mask);
    r.dsc = c.dsc;
    r.tp = c.tp;
    r.fp = c.fp;
    r.fn = c.fn;
  }
  return r;
}

namespace {

Image flip_image(const Image& src, bool horizontal, bool vertical) {
  Image out(src.h, src.w);
  for (int y = 0; y < src.h; ++y) {
    const int sy = vertical ? src.h - 1 - y : y;
    for (int x = 0; x < src.w; ++x)
      out.at(y, x) = src.at(sy, horizontal ? src.w - 1 - x : x);
  }
  return out;
}

// Per-pixel mean with the addends summed in sorted value order, so the
// result is independent of input order; clamping to the input range keeps
// FP rounding from nudging the mean past the bounds.
Image mean_images(const std::vector<Image>& maps) {
  if (maps.size() == 1) return maps[0];
  Image out(maps[0].h, maps[0].w);
  std::vector<double> vals(maps.size());
  for (int64_t i = 0; i < out.numel(); ++i) {
    for (size_t m = 0; m < maps.size(); ++m) vals[m] = maps[m].pix[size_t(i)];
    std::sort(vals.begin(), vals.end());
    double s = 0.0;
    for (double v : vals) s += v;
    out.pix[size_t(i)] =
        std::clamp(s / double(maps.size()), vals.front(), vals.back());
  }
  return out;
}

}  // namespace

Image ensemble_predict(std::span<const Predictor> members, const Image& image,
                       bool tta) {
  if (members.empty())
    throw ContractError("ensemble_predict: need at least one model");

  std::vector<Image> maps;
  maps.reserve(members.size());
  for (const Predictor& predict : members) {
    if (!tta) {
      maps.push_back(predict(image));
      continue;
    }
    // The four flip views are exactly invertible, each flip being its own
    // inverse.
    std::vector<Image> views;
    views.reserve(4);
    for (int view = 0; view < 4; ++view) {
      const bool fh = view & 1, fv = view & 2;
      const Image mapped = predict(flip_image(image, fh, fv));
      views.push_back(flip_image(mapped, fh, fv));
    }
    maps.push_back(mean_images(views));
  }
  return mean_images(maps);
}

SplitReport evaluate_split(std::span<const Predictor> members,
                           const std::vector<Sample>& samples,
                           const EvalConfig& cfg, const std::string& schedule,
                           const std::string& encoder) {
  if (samples.empty())
    throw ContractError("evaluate_split: sample list is empty");
  if (members.empty())
    throw ContractError("evaluate_split: need at least one model");

  SplitReport report;
  report.records.resize(samples.size());
  par_for(int64_t(samples.size()), [&](int64_t i) {
    const Sample& s = samples[size_t(i)];
    const Image prob = ensemble_predict(members, s.image, cfg.tta);
    const Mask pred = threshold(prob, cfg.threshold_t, cfg.min_area);
    EvalRecord r = score_image(pred, s.mask);
    r.id = s.id;
    report.records[size_t(i)] = std::move(r);
  });
  std::sort(report.records.begin(), report.records.end(),
            [](const EvalRecord& a, const EvalRecord& b) { return a.id < b.id; });

  double sum_all = 0.0, sum_id = 0.0, sum_ood = 0.0;
  int n_id = 0, n_ood = 0, n_rejected = 0;
  for (const EvalRecord& r : report.records) {
    sum_all += r.dsc;
    n_rejected += r.rejected;
    if (r.gt_empty) {
      sum_ood += r.dsc;
      ++n_ood;
    } else {
      sum_id += r.dsc;
      ++n_id;
    }
  }
  const int n = int(report.records.size());
  report.row.schedule = schedule;
  report.row.encoder = encoder;
  report.row.n = n;
  report.row.mean_dsc = 100.0 * (sum_all / n);
  report.row.rejected_pct = 100.0 * (double(n_rejected) / n);
  if (n_id > 0) report.row.id_dsc = 100.0 * (sum_id / n_id);
  if (n_ood > 0) report.row.ood_dsc = 100.0 * (sum_ood / n_ood);
  return report;
}

namespace {

std::string fmt_double(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

}  // namespace

void write_report(const std::vector<ReportRow>& rows,
                  const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os << "schedule,encoder,mean_dsc,rejected_pct,id_dsc,ood_dsc,n\n";
  for (const ReportRow& r : rows) {
    os << r.schedule << "," << r.encoder << "," << fmt_double(r.mean_dsc) << ","
       << fmt_double(r.rejected_pct) << ","
       << (r.id_dsc ? fmt_double(*r.id_dsc) : "na") << ","
       << (r.ood_dsc ? fmt_double(*r.ood_dsc) : "na") << "," << r.n << "\n";
  }
  if (!os) throw IoError("write failed: " + path.string());
}

void write_per_image(const std::vector<EvalRecord>& records,
                     const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os << "id,dsc,tp,fp,fn,gt_empty,pred_empty,rejected\n";
  for (const EvalRecord& r : records)
    os << r.id << "," << fmt_double(r.dsc) << "," << r.tp << "," << r.fp << ","
       << r.fn << "," << int(r.gt_empty) << "," << int(r.pred_empty) << ","
       << int(r.rejected) << "\n";
  if (!os) throw IoError("write failed: " + path.string());
}

}  // namespace segloss
