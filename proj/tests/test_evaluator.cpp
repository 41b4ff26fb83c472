#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "segloss/evaluator.hpp"
#include "segloss/synth_data.hpp"
#include "test_support.hpp"

using namespace segloss;
using namespace testsup;

namespace {

Image constant_image(int h, int w, double v) {
  Image img(h, w);
  for (double& p : img.pix) p = v;
  return img;
}

Predictor constant_predictor(double v) {
  return [v](const Image& in) { return constant_image(in.h, in.w, v); };
}

Predictor identity_predictor() {
  return [](const Image& in) { return in; };
}

}  // namespace

TEST_CASE("threshold applies >= t and the min-area rule") {
  CHECK(threshold(constant_image(3, 3, 0.4), 0.5).empty_fg());

  const Mask m = threshold(constant_image(2, 2, 0.5), 0.5);
  CHECK(m.foreground() == 4);  // boundary value counts as foreground

  Image img(3, 3, 0.0);
  img.at(0, 0) = img.at(1, 1) = img.at(2, 2) = 0.9;
  CHECK(threshold(img, 0.5, 0).foreground() == 3);
  CHECK(threshold(img, 0.5, 5).empty_fg());  // 3 <= min_area 5 -> emptied
  CHECK(threshold(img, 0.5, 3).empty_fg());  // boundary: count <= min_area
  CHECK(threshold(img, 0.5, 2).foreground() == 3);

  CHECK_THROWS_AS(threshold(img, 0.0), ContractError);
  CHECK_THROWS_AS(threshold(img, 1.0), ContractError);
}

TEST_CASE("score_image applies the three-way empty rule") {
  Mask empty(2, 2), full(2, 2, 1);

  const EvalRecord both = score_image(empty, empty);
  CHECK(both.dsc == 1.0);
  CHECK(both.gt_empty);
  CHECK(both.pred_empty);
  CHECK(both.rejected);

  const EvalRecord fp_case = score_image(full, empty);
  CHECK(fp_case.dsc == 0.0);
  CHECK(fp_case.gt_empty);
  CHECK(!fp_case.pred_empty);
  CHECK(!fp_case.rejected);
  CHECK(fp_case.fp == 4);

  const EvalRecord fn_case = score_image(empty, full);
  CHECK(fn_case.dsc == 0.0);
  CHECK(fn_case.rejected);
  CHECK(fn_case.fn == 4);

  Mask p(1, 4), t(1, 4);
  p.pix = {1, 1, 1, 0};
  t.pix = {1, 1, 0, 1};
  const EvalRecord r = score_image(p, t);
  CHECK(r.dsc == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(r.tp == 2);
  CHECK(r.fp == 1);
  CHECK(r.fn == 1);
}

TEST_CASE("score_image matches a brute-force oracle on exhaustive 3x3 pairs") {
  for (int a = 0; a < 512; ++a) {
    for (int b = 0; b < 512; ++b) {
      Mask pred(3, 3), gt(3, 3);
      int inter = 0, cp = 0, cg = 0;
      for (int i = 0; i < 9; ++i) {
        const bool vp = (a >> i) & 1, vg = (b >> i) & 1;
        pred.pix[size_t(i)] = vp;
        gt.pix[size_t(i)] = vg;
        inter += vp && vg;
        cp += vp;
        cg += vg;
      }
      double expect;
      if (cp == 0 && cg == 0)
        expect = 1.0;
      else if (cp == 0 || cg == 0)
        expect = 0.0;
      else
        expect = 2.0 * double(inter) / double(cp + cg);
      const EvalRecord r = score_image(pred, gt);
      REQUIRE(r.dsc == expect);
      REQUIRE(r.rejected == (cp == 0));
    }
  }
}

TEST_CASE("single-member ensemble equals the member bit for bit") {
  Rng rng(3);
  Image in(8, 8);
  for (double& v : in.pix) v = rng.uniform(0.0, 1.0);
  std::vector<Predictor> one = {identity_predictor()};
  const Image out = ensemble_predict(one, in, false);
  CHECK(out.pix == in.pix);
}

TEST_CASE("ensemble averages members and ignores member order") {
  std::vector<Predictor> members = {constant_predictor(0.2),
                                    constant_predictor(0.6)};
  const Image in = constant_image(4, 4, 0.0);
  const Image out = ensemble_predict(members, in, false);
  for (double v : out.pix) CHECK(v == doctest::Approx(0.4).epsilon(1e-15));

  Rng rng(9);
  std::vector<Predictor> trio;
  std::vector<Image> maps;
  for (int i = 0; i < 3; ++i) {
    Image m(4, 4);
    for (double& v : m.pix) v = rng.uniform(0.0, 1.0);
    maps.push_back(m);
    trio.push_back([m](const Image&) { return m; });
  }
  const Image fwd = ensemble_predict(trio, in, false);
  std::swap(trio[0], trio[2]);
  const Image rev = ensemble_predict(trio, in, false);
  CHECK(fwd.pix == rev.pix);

  // bounded by member min/max pointwise
  for (int64_t i = 0; i < fwd.numel(); ++i) {
    double lo = 1e300, hi = -1e300;
    for (const Image& m : maps) {
      lo = std::min(lo, m.pix[size_t(i)]);
      hi = std::max(hi, m.pix[size_t(i)]);
    }
    CHECK(fwd.pix[size_t(i)] >= lo);
    CHECK(fwd.pix[size_t(i)] <= hi);
  }

  CHECK_THROWS_AS(ensemble_predict({}, in, false), ContractError);
}

TEST_CASE("tta on an identity stub with a flip-symmetric input changes nothing") {
  // symmetric under both flips
  Image in(4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      const int yy = std::min(y, 3 - y), xx = std::min(x, 3 - x);
      in.at(y, x) = 0.1 + 0.2 * yy + 0.05 * xx;
    }
  std::vector<Predictor> one = {identity_predictor()};
  const Image with_tta = ensemble_predict(one, in, true);
  const Image without = ensemble_predict(one, in, false);
  for (int64_t i = 0; i < in.numel(); ++i)
    CHECK(with_tta.pix[size_t(i)] == doctest::Approx(without.pix[size_t(i)]).epsilon(1e-15));
}

TEST_CASE("tta inverse-transforms views before averaging") {
  // predictor that zeroes everything except the top-left pixel
  Predictor corner = [](const Image& in) {
    Image out(in.h, in.w);
    out.at(0, 0) = in.at(0, 0);
    return out;
  };
  Image in(2, 2);
  in.at(0, 0) = 1.0;
  in.at(0, 1) = 2.0;
  in.at(1, 0) = 3.0;
  in.at(1, 1) = 4.0;
  std::vector<Predictor> one = {corner};
  const Image out = ensemble_predict(one, in, true);
  // each view's corner maps back to a distinct pixel
  CHECK(out.at(0, 0) == doctest::Approx(0.25 * 1.0));
  CHECK(out.at(0, 1) == doctest::Approx(0.25 * 2.0));
  CHECK(out.at(1, 0) == doctest::Approx(0.25 * 3.0));
  CHECK(out.at(1, 1) == doctest::Approx(0.25 * 4.0));
}

TEST_CASE("evaluate_split aggregates the paper's table quantities") {
  // 2 OoD (clean) + 2 ID (lesion) samples
  auto samples = generate_dataset(2, 2, 16, 16, 99);

  EvalConfig cfg;
  std::vector<Predictor> always_empty = {constant_predictor(0.01)};
  const SplitReport rep = evaluate_split(always_empty, samples, cfg, "bce", "enc");
  CHECK(rep.row.n == 4);
  CHECK(rep.row.mean_dsc == doctest::Approx(50.0));  // OoD 1, ID 0
  CHECK(rep.row.rejected_pct == 100.0);
  REQUIRE(rep.row.id_dsc.has_value());
  REQUIRE(rep.row.ood_dsc.has_value());
  CHECK(*rep.row.id_dsc == 0.0);
  CHECK(*rep.row.ood_dsc == 100.0);

  std::vector<Predictor> always_full = {constant_predictor(0.99)};
  const SplitReport rep2 = evaluate_split(always_full, samples, cfg, "bce", "enc");
  CHECK(rep2.row.rejected_pct == 0.0);
  double d_sum = 0.0;
  for (const EvalRecord& r : rep2.records)
    if (!r.gt_empty) d_sum += r.dsc;
  CHECK(rep2.row.mean_dsc == doctest::Approx(100.0 * d_sum / 4.0));
  CHECK(*rep2.row.ood_dsc == 0.0);

  // records come back sorted by id
  CHECK(std::is_sorted(rep.records.begin(), rep.records.end(),
                       [](const EvalRecord& a, const EvalRecord& b) {
                         return a.id < b.id;
                       }));

  // evaluation is read-only: repeating gives identical reports
  const SplitReport rep3 = evaluate_split(always_empty, samples, cfg, "bce", "enc");
  CHECK(rep3.row.mean_dsc == rep.row.mean_dsc);
  CHECK(rep3.records.size() == rep.records.size());
  for (size_t i = 0; i < rep.records.size(); ++i)
    CHECK(rep3.records[i].dsc == rep.records[i].dsc);
}

TEST_CASE("a perfect predictor on an all-ID split scores 100 with 0% rejected") {
  const auto samples = generate_dataset(5, 0, 16, 16, 123);
  // oracle predictor: looks the sample up by its image content
  Predictor oracle = [&samples](const Image& in) {
    for (const Sample& s : samples)
      if (s.image.pix == in.pix) {
        Image prob(in.h, in.w);
        for (int64_t i = 0; i < prob.numel(); ++i)
          prob.pix[size_t(i)] = s.mask.pix[size_t(i)] ? 0.9 : 0.1;
        return prob;
      }
    return Image(in.h, in.w);
  };
  EvalConfig cfg;
  const SplitReport rep = evaluate_split({&oracle, 1}, samples, cfg, "x", "e");
  CHECK(rep.row.mean_dsc == 100.0);
  CHECK(rep.row.rejected_pct == 0.0);
  REQUIRE(rep.row.id_dsc.has_value());
  CHECK(*rep.row.id_dsc == 100.0);
  CHECK(!rep.row.ood_dsc.has_value());
}

TEST_CASE("on an all-OoD split, mean dsc equals rejected fraction exactly") {
  auto samples = generate_dataset(0, 6, 16, 16, 101);
  // predictor that rejects some images: empty for dark images, full otherwise
  Predictor moody = [](const Image& in) {
    double mean = 0.0;
    for (double v : in.pix) mean += v;
    mean /= double(in.numel());
    return constant_image(in.h, in.w, mean > 0.35 ? 0.9 : 0.1);
  };
  EvalConfig cfg;
  const SplitReport rep = evaluate_split({&moody, 1}, samples, cfg, "x", "e");
  CHECK(rep.row.mean_dsc == rep.row.rejected_pct);
}

TEST_CASE("report and per-image CSVs have the documented headers") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "evaluator_csv_test";
  fs::create_directories(dir);

  ReportRow row;
  row.schedule = "bce";
  row.encoder = "enc";
  row.mean_dsc = 12.5;
  row.rejected_pct = 0.0;
  row.n = 4;
  write_report({row}, dir / "report.csv");
  std::ifstream is(dir / "report.csv");
  std::string line;
  REQUIRE(std::getline(is, line));
  CHECK(line == "schedule,encoder,mean_dsc,rejected_pct,id_dsc,ood_dsc,n");
  REQUIRE(std::getline(is, line));
  CHECK(line == "bce,enc,12.5,0,na,na,4");

  EvalRecord rec;
  rec.id = "les0000";
  rec.dsc = 0.5;
  rec.tp = 1;
  rec.fp = 1;
  rec.fn = 1;
  write_per_image({rec}, dir / "per_image.csv");
  std::ifstream is2(dir / "per_image.csv");
  REQUIRE(std::getline(is2, line));
  CHECK(line == "id,dsc,tp,fp,fn,gt_empty,pred_empty,rejected");
  REQUIRE(std::getline(is2, line));
  CHECK(line == "les0000,0.5,1,1,1,0,0,0");
}
