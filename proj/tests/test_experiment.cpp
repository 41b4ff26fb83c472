#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "segloss/experiment.hpp"
#include "segloss/synth_data.hpp"

using namespace segloss;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* tag) {
  static int counter = 0;
  const fs::path p = fs::temp_directory_path() /
                     (std::string("exp_test_") + tag + "_" + std::to_string(counter++));
  fs::create_directories(p);
  return p;
}

ExperimentConfig tiny_sweep_config(const fs::path& out, uint64_t seed) {
  ExperimentConfig cfg;
  cfg.master_seed = seed;
  cfg.out_dir = out.string();
  cfg.jobs = 2;
  cfg.n_lesion = 12;
  cfg.height = 16;
  cfg.width = 16;
  cfg.eval_n_id = 6;
  cfg.eval_n_ood = 3;
  cfg.base_channels = 2;
  cfg.depth = 2;
  cfg.cascade = false;
  cfg.folds = 3;
  cfg.total_steps = 30;
  cfg.steps_per_epoch = 10;
  cfg.log_every = 10;
  cfg.schedules = {ScheduleKind::kBceOnly, ScheduleKind::kHardFinetune};
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("config survives read -> write -> read byte for byte") {
  ExperimentConfig cfg;
  cfg.out_dir = "runs/demo";
  cfg.lr_max = 3e-4;
  cfg.clamp_eps = 1e-7;
  const std::string text = serialize_config(cfg);
  const ExperimentConfig parsed = parse_config(text);
  CHECK(serialize_config(parsed) == text);
  CHECK(parsed.lr_max == cfg.lr_max);
  CHECK(parsed.schedules == cfg.schedules);

  // comments and blank lines are fine; junk keys and values are not
  CHECK_NOTHROW(parse_config("# comment\n\n" + text));
  CHECK_THROWS_AS(parse_config(text + "mystery_key = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("master_seed = banana\n"), ConfigError);
  std::string bad = text;
  bad.replace(bad.find("schedules = "), std::string("schedules = ").size(),
              "schedules = bogus,");
  CHECK_THROWS_AS(parse_config(bad), ConfigError);
}

TEST_CASE("the shipped experiment config parses to the library defaults") {
  const ExperimentConfig shipped =
      load_config(fs::path(SEGLOSS_SOURCE_DIR) / "configs" / "experiment.txt");
  ExperimentConfig defaults;
  defaults.out_dir = "runs/sweep";
  CHECK(serialize_config(shipped) == serialize_config(defaults));
}

TEST_CASE("config file round trip through disk") {
  const fs::path dir = temp_dir("cfg");
  ExperimentConfig cfg;
  cfg.out_dir = (dir / "out").string();
  cfg.master_seed = 99;
  save_config(cfg, dir / "config.txt");
  const ExperimentConfig loaded = load_config(dir / "config.txt");
  CHECK(serialize_config(loaded) == serialize_config(cfg));
}

TEST_CASE("train_folds refuses clean samples in the pool") {
  const auto pool = generate_dataset(3, 1, 16, 16, 5);
  ExperimentConfig cfg = tiny_sweep_config(temp_dir("guard"), 1);
  std::ostringstream sink;
  CHECK_THROWS_AS(train_folds(pool, ScheduleKind::kBceOnly, cfg,
                              fs::path(cfg.out_dir) / "x", sink),
                  DomainError);
}

TEST_CASE("a tiny sweep produces reports, checkpoints, and logs") {
  const fs::path out = temp_dir("sweep");
  const ExperimentConfig cfg = tiny_sweep_config(out, 7);
  std::ostringstream sink;
  const SweepResult result = run_sweep(cfg, sink);
  REQUIRE(result.all_ok);
  CHECK(result.outcomes.size() == 2);

  CHECK(fs::exists(out / "config.txt"));
  CHECK(fs::exists(out / "report_id.csv"));
  CHECK(fs::exists(out / "report_ood.csv"));
  for (const char* sched : {"bce", "hard_ft"}) {
    for (int f = 0; f < cfg.folds; ++f) {
      CHECK(fs::exists(out / sched / ("fold_" + std::to_string(f) + ".ckpt")));
      CHECK(fs::exists(out / sched / ("fold_" + std::to_string(f) + "_log.csv")));
    }
    CHECK(fs::exists(out / sched / "per_image_mixed.csv"));
    CHECK(fs::exists(out / sched / "per_image_id.csv"));
  }

  // one row per schedule in each regime
  std::ifstream is(out / "report_id.csv");
  std::string line;
  int rows = 0;
  std::getline(is, line);
  while (std::getline(is, line)) rows += !line.empty();
  CHECK(rows == 2);

  for (const ScheduleOutcome& o : result.outcomes) {
    CHECK(o.id_row.n == cfg.eval_n_id);
    CHECK(o.mixed_row.n == cfg.eval_n_id + cfg.eval_n_ood);
    CHECK(!o.id_row.ood_dsc.has_value());
    CHECK(o.mixed_row.ood_dsc.has_value());
  }
}

TEST_CASE("two sweeps with one master seed write identical reports") {
  const fs::path out_a = temp_dir("det_a");
  const fs::path out_b = temp_dir("det_b");
  std::ostringstream sink;
  const SweepResult a = run_sweep(tiny_sweep_config(out_a, 11), sink);
  const SweepResult b = run_sweep(tiny_sweep_config(out_b, 11), sink);
  REQUIRE(a.all_ok);
  REQUIRE(b.all_ok);
  CHECK(slurp(out_a / "report_id.csv") == slurp(out_b / "report_id.csv"));
  CHECK(slurp(out_a / "report_ood.csv") == slurp(out_b / "report_ood.csv"));
  CHECK(slurp(out_a / "bce" / "per_image_mixed.csv") ==
        slurp(out_b / "bce" / "per_image_mixed.csv"));
  CHECK(slurp(out_a / "bce" / "fold_0.ckpt") == slurp(out_b / "bce" / "fold_0.ckpt"));

  // a different seed moves the numbers
  const fs::path out_c = temp_dir("det_c");
  const SweepResult c = run_sweep(tiny_sweep_config(out_c, 12), sink);
  REQUIRE(c.all_ok);
  CHECK(slurp(out_a / "report_id.csv") != slurp(out_c / "report_id.csv"));
}
