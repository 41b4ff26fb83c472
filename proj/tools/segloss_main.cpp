// Command-line front end: generate | train | eval | sweep.

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "segloss/error.hpp"
#include "segloss/experiment.hpp"
#include "segloss/synth_data.hpp"

namespace fs = std::filesystem;
using namespace segloss;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

// --out-dir falls back to $SEGLOSS_OUT_ROOT/<leaf> when the flag is omitted.
std::string resolve_out_dir(const std::string& flag_value, const std::string& leaf) {
  if (!flag_value.empty()) return flag_value;
  if (const char* root = std::getenv("SEGLOSS_OUT_ROOT"))
    return (fs::path(root) / leaf).string();
  throw ConfigError("--out-dir not given and SEGLOSS_OUT_ROOT unset (" + leaf + ")");
}

ScheduleKind parse_schedule_or_throw(const std::string& name) {
  const auto kind = parse_schedule(name);
  if (!kind)
    throw ConfigError("unknown schedule '" + name +
                      "'; valid names: bce, dice, add, soft_ft, hard_ft");
  return *kind;
}

struct GenerateArgs {
  int n_lesion = 0, n_clean = 0, height = 64, width = 64;
  uint64_t seed = 1;
  std::string out_dir;
};

int cmd_generate(const GenerateArgs& a) {
  if (a.n_lesion + a.n_clean <= 0)
    throw ConfigError("generate: need --n-lesion and/or --n-clean > 0");
  const fs::path out = resolve_out_dir(a.out_dir, "dataset");
  const auto samples =
      generate_dataset(a.n_lesion, a.n_clean, a.height, a.width, a.seed);
  write_dataset(samples, out);
  int lesions = 0;
  for (const Sample& s : samples) lesions += s.has_lesion;
  std::cout << "wrote " << samples.size() << " samples (" << lesions
            << " lesion, " << samples.size() - size_t(lesions) << " clean) to "
            << out.string() << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string manifest, schedule = "bce", out_dir;
  ExperimentConfig cfg;
  bool allow_clean_train = false;
};

int cmd_train(TrainArgs& a) {
  const ScheduleKind kind = parse_schedule_or_throw(a.schedule);
  const fs::path out = resolve_out_dir(a.out_dir, "train_" + a.schedule);
  std::vector<Sample> pool = load_dataset(a.manifest);
  if (!a.allow_clean_train)
    for (const Sample& s : pool)
      if (!s.has_lesion)
        throw DomainError("training pool contains clean image '" + s.id +
                          "'; pass --allow-clean-train to override");
  const FoldTrainResult result =
      train_folds(pool, kind, a.cfg, out, std::cout, a.allow_clean_train);
  std::cout << "trained " << result.checkpoints.size() << " folds for schedule "
            << a.schedule << " in " << out.string() << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string manifest, ckpt_dir, out_dir, schedule_name = "ensemble";
  bool tta = false;
  double threshold_t = 0.5;
  int min_area = 0;
  double ood_fraction = -1.0;
  uint64_t seed = 1;
};

int cmd_eval(const EvalArgs& a) {
  const fs::path out = resolve_out_dir(a.out_dir, "eval");
  std::vector<fs::path> ckpts;
  for (const auto& entry : fs::directory_iterator(a.ckpt_dir))
    if (entry.path().extension() == ".ckpt" &&
        entry.path().filename().string().rfind("fold_", 0) == 0 &&
        entry.path().filename().string().find("abort") == std::string::npos)
      ckpts.push_back(entry.path());
  std::sort(ckpts.begin(), ckpts.end());
  if (ckpts.empty())
    throw IoError("no fold_*.ckpt checkpoints under " + a.ckpt_dir);

  std::vector<Model> models;
  for (const fs::path& p : ckpts) models.push_back(Model::load(p));
  std::vector<Predictor> members;
  for (const Model& m : models) members.push_back(predictor_of(m));

  std::vector<Sample> samples = load_dataset(a.manifest);
  if (a.ood_fraction >= 0.0) {
    // Deterministic subsample hitting the requested OoD share as closely as
    // the available rows allow.
    if (a.ood_fraction > 1.0) throw ConfigError("--ood-fraction must be in [0,1]");
    std::vector<Sample> id_rows, ood_rows;
    for (Sample& s : samples)
      (s.has_lesion ? id_rows : ood_rows).push_back(std::move(s));
    Rng rng(Rng::mix(a.seed, "eval-split"));
    rng.shuffle(id_rows);
    rng.shuffle(ood_rows);
    size_t n_ood = std::min(ood_rows.size(),
                            size_t(std::lround(a.ood_fraction * double(samples.size()))));
    samples.clear();
    for (size_t i = 0; i < n_ood; ++i) samples.push_back(std::move(ood_rows[i]));
    for (Sample& s : id_rows) samples.push_back(std::move(s));
  }
  if (samples.empty()) throw DomainError("evaluation split is empty");

  EvalConfig ec;
  ec.threshold_t = a.threshold_t;
  ec.min_area = a.min_area;
  ec.tta = a.tta;
  const SplitReport rep =
      evaluate_split(members, samples, ec, a.schedule_name,
                     "ensemble_x" + std::to_string(members.size()));

  fs::create_directories(out);
  write_report({rep.row}, out / "report.csv");
  write_per_image(rep.records, out / "per_image.csv");
  std::cout << "evaluated " << rep.row.n << " images: mean dsc "
            << rep.row.mean_dsc << ", rejected " << rep.row.rejected_pct
            << "%\n"
            << "report: " << (out / "report.csv").string() << "\n";
  return kExitOk;
}

struct SweepArgs {
  std::string config_path, out_dir;
  int jobs = -1;
};

int cmd_sweep(const SweepArgs& a) {
  ExperimentConfig cfg = load_config(a.config_path);
  if (!a.out_dir.empty()) cfg.out_dir = a.out_dir;
  if (cfg.out_dir.empty())
    cfg.out_dir = resolve_out_dir("", "sweep");
  if (a.jobs >= 0) cfg.jobs = a.jobs;
  const SweepResult result = run_sweep(cfg, std::cout);
  std::cout << "sweep finished in " << result.wall_seconds << " s; reports at "
            << result.report_id_csv.string() << " and "
            << result.report_ood_csv.string() << "\n";
  if (!result.all_ok) {
    for (const ScheduleOutcome& o : result.outcomes)
      if (!o.ok)
        std::cerr << "schedule " << schedule_name(o.kind) << " failed: " << o.error
                  << "\n";
    for (const ScheduleOutcome& o : result.outcomes)
      if (!o.ok && o.error_kind == StageErrorKind::kNumeric) return kExitNumeric;
    return kExitData;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Loss-combination experiments for binary lesion segmentation"};
  app.require_subcommand(1);

  GenerateArgs gen;
  CLI::App* c_gen = app.add_subcommand("generate", "Write a synthetic dataset");
  c_gen->add_option("--n-lesion", gen.n_lesion, "Number of lesion images");
  c_gen->add_option("--n-clean", gen.n_clean, "Number of clean (no-lesion) images");
  c_gen->add_option("--height", gen.height, "Image height")->check(CLI::PositiveNumber);
  c_gen->add_option("--width", gen.width, "Image width")->check(CLI::PositiveNumber);
  c_gen->add_option("--seed", gen.seed, "Dataset seed");
  c_gen->add_option("--out-dir", gen.out_dir, "Output directory");

  TrainArgs tr;
  CLI::App* c_train = app.add_subcommand("train", "K-fold training for one schedule");
  c_train->add_option("--data", tr.manifest, "Manifest CSV of the training pool")
      ->required();
  c_train->add_option("--schedule", tr.schedule,
                      "Loss schedule: bce|dice|add|soft_ft|hard_ft");
  c_train->add_option("--out-dir", tr.out_dir, "Output directory");
  c_train->add_option("--folds", tr.cfg.folds, "Number of folds")
      ->check(CLI::Range(2, 100));
  c_train->add_option("--seed", tr.cfg.master_seed, "Master seed");
  c_train->add_option("--steps", tr.cfg.total_steps, "Optimization steps per fold");
  c_train->add_option("--batch-size", tr.cfg.batch_size, "Batch size");
  c_train->add_option("--lr", tr.cfg.lr_max, "Peak learning rate");
  c_train->add_option("--steps-per-epoch", tr.cfg.steps_per_epoch,
                      "Steps per schedule epoch");
  c_train->add_option("--log-every", tr.cfg.log_every, "Logging cadence");
  c_train->add_option("--base-channels", tr.cfg.base_channels, "Model width");
  c_train->add_option("--depth", tr.cfg.depth, "Model depth");
  c_train->add_flag("--no-cascade", [&tr](int64_t) { tr.cfg.cascade = false; },
                    "Single-stage model");
  c_train->add_option("--clamp-eps", tr.cfg.clamp_eps, "BCE log clamp");
  c_train->add_option("--dice-smooth", tr.cfg.dice_smooth, "Dice smoothing constant");
  c_train->add_flag("--dice-batch",
                    [&tr](int64_t) { tr.cfg.dice_whole_batch = true; },
                    "Whole-batch dice instead of per-image");
  c_train->add_option("--jobs", tr.cfg.jobs, "Concurrent fold workers (0 = auto)");
  c_train->add_flag("--allow-clean-train", tr.allow_clean_train,
                    "Permit clean images in the training pool");

  EvalArgs ev;
  CLI::App* c_eval = app.add_subcommand("eval", "Ensemble evaluation of checkpoints");
  c_eval->add_option("--data", ev.manifest, "Manifest CSV of the evaluation split")
      ->required();
  c_eval->add_option("--ckpt-dir", ev.ckpt_dir, "Directory with fold_*.ckpt")
      ->required();
  c_eval->add_option("--out-dir", ev.out_dir, "Output directory");
  c_eval->add_flag("--tta", ev.tta, "Average the four flip views");
  c_eval->add_option("--threshold", ev.threshold_t, "Foreground threshold");
  c_eval->add_option("--min-area", ev.min_area, "Empty the mask at or below this area");
  c_eval->add_option("--ood-fraction", ev.ood_fraction,
                     "Subsample the split to this OoD share");
  c_eval->add_option("--seed", ev.seed, "Subsampling seed");
  c_eval->add_option("--schedule-name", ev.schedule_name, "Label for the report row");

  SweepArgs sw;
  CLI::App* c_sweep = app.add_subcommand(
      "sweep", "Full comparison: generate, 5-fold train, evaluate every schedule");
  c_sweep->add_option("--config", sw.config_path, "Experiment config file")
      ->required();
  c_sweep->add_option("--out-dir", sw.out_dir, "Override the config's out_dir");
  c_sweep->add_option("--jobs", sw.jobs, "Concurrent training workers (0 = auto)");

  try {
    app.parse(argc, argv);
    if (*c_gen) return cmd_generate(gen);
    if (*c_train) return cmd_train(tr);
    if (*c_eval) return cmd_eval(ev);
    if (*c_sweep) return cmd_sweep(sw);
    return kExitUsage;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
}
