#include "segloss/experiment.hpp"

#include <atomic>
#include <charconv>
#include <chrono>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <thread>

#include "segloss/error.hpp"
#include "segloss/parallel.hpp"
#include "segloss/synth_data.hpp"

namespace segloss {

namespace fs = std::filesystem;

namespace {

std::string fmt_u64(uint64_t v) { return std::to_string(v); }
std::string fmt_int(int v) { return std::to_string(v); }
std::string fmt_bool(bool v) { return v ? "1" : "0"; }

// Shortest representation that parses back to the identical double, so a
// config survives read -> write -> read byte for byte.
std::string fmt_float(double v) {
  char buf[48];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, p);
}

std::string schedules_csv(const std::vector<ScheduleKind>& kinds) {
  std::string out;
  for (size_t i = 0; i < kinds.size(); ++i) {
    if (i) out += ",";
    out += schedule_name(kinds[i]);
  }
  return out;
}

struct KvView {
  std::map<std::string, std::string> kv;

  const std::string& need(const std::string& key) const {
    auto it = kv.find(key);
    if (it == kv.end()) throw ConfigError("config: missing key '" + key + "'");
    return it->second;
  }
  uint64_t get_u64(const std::string& k) const {
    uint64_t v = 0;
    const std::string& s = need(k);
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
      throw ConfigError("config: bad integer for '" + k + "': " + s);
    return v;
  }
  int get_int(const std::string& k) const {
    const uint64_t v = get_u64(k);
    if (v > uint64_t(1) << 30) throw ConfigError("config: '" + k + "' too large");
    return int(v);
  }
  bool get_bool(const std::string& k) const {
    const std::string& s = need(k);
    if (s == "0") return false;
    if (s == "1") return true;
    throw ConfigError("config: '" + k + "' must be 0 or 1, got " + s);
  }
  double get_float(const std::string& k) const {
    const std::string& s = need(k);
    try {
      size_t pos = 0;
      const double v = std::stod(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config: bad float for '" + k + "': " + s);
    }
  }
};

}  // namespace

std::string serialize_config(const ExperimentConfig& c) {
  std::ostringstream os;
  os << "master_seed = " << fmt_u64(c.master_seed) << "\n";
  os << "out_dir = " << c.out_dir << "\n";
  os << "jobs = " << fmt_int(c.jobs) << "\n";
  os << "data.n_lesion = " << fmt_int(c.n_lesion) << "\n";
  os << "data.n_clean = " << fmt_int(c.n_clean) << "\n";
  os << "data.height = " << fmt_int(c.height) << "\n";
  os << "data.width = " << fmt_int(c.width) << "\n";
  os << "eval.n_id = " << fmt_int(c.eval_n_id) << "\n";
  os << "eval.n_ood = " << fmt_int(c.eval_n_ood) << "\n";
  os << "eval.tta = " << fmt_bool(c.eval_tta) << "\n";
  os << "eval.threshold = " << fmt_float(c.eval_threshold) << "\n";
  os << "eval.min_area = " << fmt_int(c.eval_min_area) << "\n";
  os << "model.base_channels = " << fmt_int(c.base_channels) << "\n";
  os << "model.depth = " << fmt_int(c.depth) << "\n";
  os << "model.cascade = " << fmt_bool(c.cascade) << "\n";
  os << "train.folds = " << fmt_int(c.folds) << "\n";
  os << "train.total_steps = " << fmt_int(c.total_steps) << "\n";
  os << "train.batch_size = " << fmt_int(c.batch_size) << "\n";
  os << "train.steps_per_epoch = " << fmt_int(c.steps_per_epoch) << "\n";
  os << "train.log_every = " << fmt_int(c.log_every) << "\n";
  os << "train.lr_max = " << fmt_float(c.lr_max) << "\n";
  os << "train.clamp_eps = " << fmt_float(c.clamp_eps) << "\n";
  os << "train.dice_smooth = " << fmt_float(c.dice_smooth) << "\n";
  os << "train.dice_whole_batch = " << fmt_bool(c.dice_whole_batch) << "\n";
  os << "train.hard_switch_fraction = " << fmt_float(c.hard_switch_fraction) << "\n";
  os << "schedules = " << schedules_csv(c.schedules) << "\n";
  return os.str();
}

ExperimentConfig parse_config(const std::string& text) {
  KvView view;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const size_t first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": expected 'key = value'");
    auto trim = [](std::string s) {
      const size_t a = s.find_first_not_of(" \t\r");
      const size_t b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    if (!view.kv.emplace(key, value).second)
      throw ConfigError("config: duplicate key '" + key + "'");
  }

  ExperimentConfig c;
  c.master_seed = view.get_u64("master_seed");
  c.out_dir = view.need("out_dir");
  c.jobs = view.get_int("jobs");
  c.n_lesion = view.get_int("data.n_lesion");
  c.n_clean = view.get_int("data.n_clean");
  c.height = view.get_int("data.height");
  c.width = view.get_int("data.width");
  c.eval_n_id = view.get_int("eval.n_id");
  c.eval_n_ood = view.get_int("eval.n_ood");
  c.eval_tta = view.get_bool("eval.tta");
  c.eval_threshold = view.get_float("eval.threshold");
  c.eval_min_area = view.get_int("eval.min_area");
  c.base_channels = view.get_int("model.base_channels");
  c.depth = view.get_int("model.depth");
  c.cascade = view.get_bool("model.cascade");
  c.folds = view.get_int("train.folds");
  c.total_steps = view.get_int("train.total_steps");
  c.batch_size = view.get_int("train.batch_size");
  c.steps_per_epoch = view.get_int("train.steps_per_epoch");
  c.log_every = view.get_int("train.log_every");
  c.lr_max = view.get_float("train.lr_max");
  c.clamp_eps = view.get_float("train.clamp_eps");
  c.dice_smooth = view.get_float("train.dice_smooth");
  c.dice_whole_batch = view.get_bool("train.dice_whole_batch");
  c.hard_switch_fraction = view.get_float("train.hard_switch_fraction");
  c.schedules.clear();
  std::stringstream ss(view.need("schedules"));
  std::string name;
  while (std::getline(ss, name, ',')) {
    const auto kind = parse_schedule(name);
    if (!kind)
      throw ConfigError("config: unknown schedule '" + name +
                        "' (valid: bce, dice, add, soft_ft, hard_ft)");
    c.schedules.push_back(*kind);
  }
  if (c.schedules.empty()) throw ConfigError("config: schedules list is empty");

  // unknown keys are configuration typos, not silently ignored
  static const char* known[] = {
      "master_seed",        "out_dir",
      "jobs",               "data.n_lesion",
      "data.n_clean",       "data.height",
      "data.width",         "eval.n_id",
      "eval.n_ood",         "eval.tta",
      "eval.threshold",     "eval.min_area",
      "model.base_channels","model.depth",
      "model.cascade",      "train.folds",
      "train.total_steps",  "train.batch_size",
      "train.steps_per_epoch", "train.log_every",
      "train.lr_max",       "train.clamp_eps",
      "train.dice_smooth",  "train.dice_whole_batch",
      "train.hard_switch_fraction", "schedules"};
  for (const auto& [key, value] : view.kv) {
    bool ok = false;
    for (const char* k : known) ok |= key == k;
    if (!ok) throw ConfigError("config: unknown key '" + key + "'");
  }
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config: " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

void save_config(const ExperimentConfig& cfg, const fs::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os << serialize_config(cfg);
  if (!os) throw IoError("write failed: " + path.string());
}

std::string encoder_name(const ExperimentConfig& cfg) {
  return "unet_b" + std::to_string(cfg.base_channels) + "_d" +
         std::to_string(cfg.depth) + (cfg.cascade ? "_cascade" : "");
}

namespace {

int effective_jobs(const ExperimentConfig& cfg, int n_tasks) {
  int hw = int(std::thread::hardware_concurrency());
  if (hw < 1) hw = 1;
  int jobs = cfg.jobs > 0 ? cfg.jobs : hw;
  return std::max(1, std::min(jobs, n_tasks));
}

LossConfig loss_config_of(const ExperimentConfig& cfg) {
  LossConfig lc;
  lc.clamp_eps = cfg.clamp_eps;
  lc.dice_smooth = cfg.dice_smooth;
  lc.dice_granularity = cfg.dice_whole_batch ? DiceGranularity::kWholeBatch
                                             : DiceGranularity::kPerImage;
  return lc;
}

ReportRow aggregate_rows(const std::vector<EvalRecord>& records,
                         const std::string& schedule, const std::string& encoder) {
  ReportRow row;
  row.schedule = schedule;
  row.encoder = encoder;
  double sum_all = 0.0, sum_id = 0.0, sum_ood = 0.0;
  int n_id = 0, n_ood = 0, n_rejected = 0;
  for (const EvalRecord& r : records) {
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
  const int n = int(records.size());
  row.n = n;
  row.mean_dsc = 100.0 * (sum_all / n);
  row.rejected_pct = 100.0 * (double(n_rejected) / n);
  if (n_id > 0) row.id_dsc = 100.0 * (sum_id / n_id);
  if (n_ood > 0) row.ood_dsc = 100.0 * (sum_ood / n_ood);
  return row;
}

}  // namespace

namespace {

struct FoldTask {
  ScheduleKind schedule;
  int fold = 0;
  fs::path out_dir;
  fs::path checkpoint;
  std::string error;
  bool numeric_error = false;
};

FoldSplit folds_of(const std::vector<Sample>& train_pool,
                   const ExperimentConfig& cfg) {
  std::vector<std::string> ids;
  for (const Sample& s : train_pool) ids.push_back(s.id);
  return make_folds(ids, cfg.folds, Rng::mix(cfg.master_seed, "folds"));
}

// Trains one (schedule, fold) model and writes fold_<i>.ckpt plus the
// training log. Fully deterministic in (master_seed, schedule, fold).
void run_fold_task(const std::vector<Sample>& train_pool, const FoldSplit& split,
                   const ExperimentConfig& cfg, FoldTask& task) {
  try {
    std::map<std::string, const Sample*> by_id;
    for (const Sample& s : train_pool) by_id[s.id] = &s;
    std::vector<Sample> train_split;
    for (const std::string& id : split.ids_not_in_fold(task.fold))
      train_split.push_back(*by_id.at(id));

    ModelConfig mc;
    mc.base_channels = cfg.base_channels;
    mc.depth = cfg.depth;
    mc.cascade = cfg.cascade;
    mc.in_channels = 1;
    mc.seed = Rng::mix(cfg.master_seed, "init/" + std::to_string(task.fold));
    Model model = Model::init(mc);

    TrainConfig tc;
    tc.total_steps = cfg.total_steps;
    tc.batch_size = cfg.batch_size;
    tc.lr_max = cfg.lr_max;
    tc.steps_per_epoch = cfg.steps_per_epoch;
    tc.log_every = cfg.log_every;
    tc.loss = loss_config_of(cfg);
    tc.schedule = make_schedule(task.schedule, cfg.total_steps,
                                cfg.steps_per_epoch, cfg.hard_switch_fraction);
    tc.seed = Rng::mix(cfg.master_seed, "train/" + std::to_string(task.fold));
    const std::string stem = "fold_" + std::to_string(task.fold);
    task.checkpoint = task.out_dir / (stem + ".ckpt");
    tc.abort_checkpoint = task.out_dir / (stem + "_abort.ckpt");

    const TrainResult tr = train(model, train_split, tc);
    model.save(task.checkpoint);
    write_train_log(tr.log, task.out_dir / (stem + "_log.csv"));
  } catch (const NumericError& e) {
    task.error = e.what();
    task.numeric_error = true;
  } catch (const std::exception& e) {
    task.error = e.what();
  }
}

// Runs the tasks on a worker pool; each worker keeps to its share of the
// hardware threads.
void run_task_pool(const std::vector<Sample>& train_pool, const FoldSplit& split,
                   const ExperimentConfig& cfg, std::vector<FoldTask>& tasks) {
  const int jobs = effective_jobs(cfg, int(tasks.size()));
  int hw = int(std::thread::hardware_concurrency());
  if (hw < 1) hw = 1;
  const int threads_per_job = std::max(1, hw / jobs);

  std::atomic<size_t> next{0};
  auto worker = [&]() {
    ThreadLimit limit(threads_per_job);
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      run_fold_task(train_pool, split, cfg, tasks[i]);
    }
  };
  std::vector<std::thread> pool;
  for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();
}

}  // namespace

FoldTrainResult train_folds(const std::vector<Sample>& train_pool,
                            ScheduleKind schedule, const ExperimentConfig& cfg,
                            const fs::path& out_dir, std::ostream& log,
                            bool allow_clean) {
  if (!allow_clean)
    for (const Sample& s : train_pool)
      if (!s.has_lesion)
        throw DomainError("train_folds: clean sample '" + s.id +
                          "' in the training pool");
  fs::create_directories(out_dir);
  const FoldSplit split = folds_of(train_pool, cfg);

  std::vector<FoldTask> tasks;
  for (int fold = 0; fold < cfg.folds; ++fold)
    tasks.push_back({schedule, fold, out_dir, {}, {}, false});
  run_task_pool(train_pool, split, cfg, tasks);

  FoldTrainResult result;
  for (const FoldTask& t : tasks) {
    if (!t.error.empty()) {
      const std::string msg =
          "fold " + std::to_string(t.fold) + " failed: " + t.error;
      if (t.numeric_error) throw NumericError(msg);
      throw Error(msg);
    }
    log << "  fold " << t.fold << " -> " << t.checkpoint.string() << "\n";
    result.checkpoints.push_back(t.checkpoint);
  }
  return result;
}

SweepResult run_sweep(const ExperimentConfig& cfg, std::ostream& log) {
  const auto t_start = std::chrono::steady_clock::now();
  if (cfg.out_dir.empty()) throw ConfigError("sweep: out_dir is empty");
  const fs::path out(cfg.out_dir);
  fs::create_directories(out);
  save_config(cfg, out / "config.txt");

  // training dataset (reused if already on disk)
  const fs::path data_dir = out / "dataset";
  if (!fs::exists(data_dir / "manifest.csv")) {
    log << "generating training dataset (" << cfg.n_lesion << " lesion, "
        << cfg.n_clean << " clean)\n";
    write_dataset(generate_dataset(cfg.n_lesion, cfg.n_clean, cfg.height,
                                   cfg.width, Rng::mix(cfg.master_seed, "data")),
                  data_dir);
  } else {
    log << "reusing dataset at " << data_dir.string() << "\n";
  }
  std::vector<Sample> pool = load_dataset(data_dir / "manifest.csv");
  std::erase_if(pool, [](const Sample& s) { return !s.has_lesion; });
  if (int(pool.size()) < cfg.folds)
    throw ConfigError("sweep: need at least train.folds lesion images");

  // evaluation split
  const fs::path eval_dir = out / "evalset";
  if (!fs::exists(eval_dir / "manifest.csv")) {
    log << "generating evaluation split (" << cfg.eval_n_id << " ID + "
        << cfg.eval_n_ood << " OoD)\n";
    write_dataset(generate_dataset(cfg.eval_n_id, cfg.eval_n_ood, cfg.height,
                                   cfg.width, Rng::mix(cfg.master_seed, "eval")),
                  eval_dir);
  }
  const std::vector<Sample> eval_samples = load_dataset(eval_dir / "manifest.csv");

  SweepResult result;
  result.report_id_csv = out / "report_id.csv";
  result.report_ood_csv = out / "report_ood.csv";
  const std::string encoder = encoder_name(cfg);

  // Phase 1: every (schedule, fold) training on one worker pool, so cores
  // stay busy across schedule boundaries.
  const FoldSplit split = folds_of(pool, cfg);
  std::vector<FoldTask> tasks;
  for (ScheduleKind kind : cfg.schedules) {
    const fs::path sched_dir = out / schedule_name(kind);
    fs::create_directories(sched_dir);
    for (int fold = 0; fold < cfg.folds; ++fold)
      tasks.push_back({kind, fold, sched_dir, {}, {}, false});
  }
  log << "training " << tasks.size() << " fold models ("
      << cfg.schedules.size() << " schedules x " << cfg.folds << " folds)\n";
  const auto t_train = std::chrono::steady_clock::now();
  run_task_pool(pool, split, cfg, tasks);
  const double train_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_train)
          .count();
  log << "training phase took " << train_seconds << " s\n";

  // Phase 2: per-schedule ensembling and both evaluation regimes.
  std::vector<ReportRow> id_rows, mixed_rows;
  for (ScheduleKind kind : cfg.schedules) {
    ScheduleOutcome outcome;
    outcome.kind = kind;
    outcome.train_seconds = train_seconds / double(cfg.schedules.size());
    const std::string name = schedule_name(kind);
    const fs::path sched_dir = out / name;
    try {
      std::vector<Model> models;
      for (const FoldTask& t : tasks) {
        if (t.schedule != kind) continue;
        if (!t.error.empty()) {
          outcome.error_kind = t.numeric_error ? StageErrorKind::kNumeric
                                               : StageErrorKind::kData;
          throw Error("fold " + std::to_string(t.fold) + " failed: " + t.error);
        }
        models.push_back(Model::load(t.checkpoint));
      }
      std::vector<Predictor> members;
      for (const Model& m : models) members.push_back(predictor_of(m));

      EvalConfig ec;
      ec.threshold_t = cfg.eval_threshold;
      ec.min_area = cfg.eval_min_area;
      ec.tta = cfg.eval_tta;
      const SplitReport mixed = evaluate_split(members, eval_samples, ec, name, encoder);

      std::vector<EvalRecord> id_records;
      int n_ood = 0, n_ood_rejected = 0;
      for (const EvalRecord& r : mixed.records) {
        if (r.gt_empty) {
          ++n_ood;
          n_ood_rejected += r.rejected;
        } else {
          id_records.push_back(r);
        }
      }
      outcome.mixed_row = mixed.row;
      outcome.id_row = aggregate_rows(id_records, name, encoder);
      outcome.ood_rejected_pct =
          n_ood > 0 ? 100.0 * (double(n_ood_rejected) / n_ood) : 0.0;
      outcome.ok = true;

      write_per_image(mixed.records, sched_dir / "per_image_mixed.csv");
      write_per_image(id_records, sched_dir / "per_image_id.csv");
      id_rows.push_back(outcome.id_row);
      mixed_rows.push_back(outcome.mixed_row);
      // completed rows are persisted even if a later schedule fails
      write_report(id_rows, result.report_id_csv);
      write_report(mixed_rows, result.report_ood_csv);
      log << "schedule " << name << ": ID dsc " << outcome.id_row.mean_dsc
          << ", mixed dsc " << outcome.mixed_row.mean_dsc << " (rejected "
          << outcome.mixed_row.rejected_pct << "%, OoD-subset rejected "
          << outcome.ood_rejected_pct << "%)\n";
    } catch (const NumericError& e) {
      outcome.error_kind = StageErrorKind::kNumeric;
      outcome.error = e.what();
      log << "schedule " << name << " FAILED (numeric): " << e.what() << "\n";
    } catch (const std::exception& e) {
      if (outcome.error_kind == StageErrorKind::kNone)
        outcome.error_kind = StageErrorKind::kData;
      outcome.error = e.what();
      log << "schedule " << name << " FAILED: " << e.what() << "\n";
    }
    result.outcomes.push_back(std::move(outcome));
  }

  result.all_ok = true;
  for (const ScheduleOutcome& o : result.outcomes) result.all_ok &= o.ok;
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return result;
}

}  // namespace segloss
