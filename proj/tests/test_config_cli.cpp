#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <string>

#include "cdsynth/commands.hpp"
#include "cdsynth/config.hpp"
#include "cdsynth/dataset_io.hpp"
#include "test_support.hpp"

using namespace cdsynth;

namespace {

// small-footprint settings shared by the command smokes
const char* kSmallConfig =
    "# desk-scale smoke configuration\n"
    "seed = 1\n"
    "\n"
    "image.size = 16\n"
    "scene.classes = 3\n"
    "schedule.steps = 50\n"
    "gen.n_max = 50\n"
    "gen.n_min = 10\n"
    "gen.ddim_substeps = 10\n"
    "train.steps = 30\n"
    "train.scenes = 2\n"
    "maskgen.instance_min = 5\n"
    "maskgen.instance_max = 6\n"
    "events.min_area = 8\n"
    "events.max_area_fraction = 0.2\n"
    "eval.ratios = 0.5\n"
    "eval.seeds = 0,1\n"
    "eval.pretrain_steps = 20\n"
    "eval.finetune_steps = 10\n"
    "eval.onlysup_steps = 10\n";

std::string write_config(const test_support::TempDir& dir, const std::string& text,
                         const std::string& name = "run.cfg") {
  std::string path = dir.file(name);
  std::ofstream os(path);
  os << text;
  return path;
}

}  // namespace

TEST_CASE("config: parsing, defaults, overrides") {
  test_support::TempDir dir("cfg");
  std::string path = write_config(dir, kSmallConfig);
  RunConfig cfg = RunConfig::from_file(path);

  CHECK(cfg.get_u64("seed") == 1);
  CHECK(cfg.get_int("image.size") == 16);
  CHECK(cfg.get("codec.kind") == "identity");  // default kicks in
  CHECK(cfg.get_double("schedule.beta_start") == Catch::Approx(1e-4));
  CHECK(cfg.get_bool("gen.blend_at_zero") == false);
  CHECK(cfg.get_double_list("eval.ratios") == std::vector<double>{0.5});
  CHECK(cfg.get_u64_list("eval.seeds") == std::vector<uint64_t>{0, 1});

  cfg.apply_override("image.size=32");
  CHECK(cfg.get_int("image.size") == 32);
  CHECK_THROWS_AS(cfg.apply_override("no.such.key=1"), ConfigError);
  CHECK_THROWS_AS(cfg.apply_override("missing-equals"), ConfigError);
}

TEST_CASE("config: unknown keys, missing required key, bad values") {
  test_support::TempDir dir("cfg-bad");
  CHECK_THROWS_AS(RunConfig::from_file(write_config(dir, "bogus.key = 1\n", "bad.cfg")),
                  ConfigError);
  CHECK_THROWS_AS(RunConfig::from_file(dir.file("nonexistent.cfg")), ConfigError);

  RunConfig empty;
  CHECK_THROWS_WITH(empty.get("seed"), Catch::Matchers::ContainsSubstring("seed"));

  RunConfig cfg;
  cfg.set("seed", "not-a-number");
  CHECK_THROWS_AS(cfg.get_u64("seed"), ConfigError);
  cfg.set("schedule.beta_start", "fast");
  CHECK_THROWS_AS(cfg.get_double("schedule.beta_start"), ConfigError);
  cfg.set("gen.blend_at_zero", "maybe");
  CHECK_THROWS_AS(cfg.get_bool("gen.blend_at_zero"), ConfigError);
}

TEST_CASE("config: resolved text is complete, sorted and stable") {
  test_support::TempDir dir("cfg-hash");
  RunConfig cfg = RunConfig::from_file(write_config(dir, kSmallConfig));
  std::string text = cfg.resolved_text();

  // every registry key appears except the execution-local worker count
  for (const auto& [key, def] : RunConfig::registry()) {
    CAPTURE(key);
    CHECK((text.find(key + " = ") != std::string::npos) == (key != "workers"));
  }

  RunConfig again = RunConfig::from_file(write_config(dir, kSmallConfig, "again.cfg"));
  CHECK(again.resolved_text() == text);
  CHECK(again.hash() == cfg.hash());

  again.apply_override("gen.eta=0.5");
  CHECK(again.hash() != cfg.hash());
}

TEST_CASE("cmd_train_denoiser: emits artifacts and is byte-reproducible") {
  test_support::TempDir dir("train-cmd");
  RunConfig cfg = RunConfig::from_file(write_config(dir, kSmallConfig));

  cmd_train_denoiser(cfg, dir.file("run1"));
  cmd_train_denoiser(cfg, dir.file("run2"));

  for (const char* artifact : {"denoiser.ckpt", "train_log.csv", "resolved.cfg"}) {
    CAPTURE(artifact);
    CHECK(std::filesystem::exists(dir.path() / "run1" / artifact));
    CHECK(test_support::files_identical((dir.path() / "run1" / artifact).string(),
                                        (dir.path() / "run2" / artifact).string()));
  }

  // loss log: header plus one row per step
  std::ifstream log(dir.file("run1/train_log.csv"));
  std::string line;
  int rows = 0;
  std::getline(log, line);
  CHECK(line == "step,loss");
  while (std::getline(log, line)) ++rows;
  CHECK(rows == 30);
}

TEST_CASE("cmd_generate: oracle mode emits a consistent, reproducible dataset") {
  test_support::TempDir dir("gen-cmd");
  RunConfig cfg = RunConfig::from_file(write_config(dir, kSmallConfig));
  cfg.apply_override("gen.mode=oracle");

  cmd_generate(cfg, "", 3, dir.file("d1"));
  cmd_generate(cfg, "", 3, dir.file("d2"));

  // byte-identical manifest and mask files across the two runs
  CHECK(test_support::files_identical(dir.file("d1/manifest.jsonl"),
                                      dir.file("d2/manifest.jsonl")));
  std::vector<SamplePair> pairs = DatasetReader::read_all(dir.file("d1/manifest.jsonl"));
  REQUIRE(pairs.size() == 3);
  for (const auto& p : pairs) {
    CHECK(derive_change_mask(p.y1, p.y2).values == p.change.values);
    for (const char* suffix : {"_y1.pgm", "_y2.pgm", "_change.pgm", "_t1.ppm", "_t2.ppm"})
      CHECK(test_support::files_identical(dir.file("d1/samples/" + p.id + suffix),
                                          dir.file("d2/samples/" + p.id + suffix)));
    CHECK(std::filesystem::exists(dir.path() / "d1" / "montage" / (p.id + ".ppm")));
  }
  CHECK(std::filesystem::exists(dir.path() / "d1" / "resolved.cfg"));

  // worker fan-out changes nothing
  cfg.apply_override("workers=2");
  cmd_generate(cfg, "", 3, dir.file("d3"));
  CHECK(test_support::files_identical(dir.file("d1/manifest.jsonl"),
                                      dir.file("d3/manifest.jsonl")));
}

TEST_CASE("cmd_generate: checkpoint mode round-trips through training") {
  test_support::TempDir dir("gen-ckpt");
  RunConfig cfg = RunConfig::from_file(write_config(dir, kSmallConfig));

  cmd_train_denoiser(cfg, dir.file("train"));
  cmd_generate(cfg, dir.file("train/denoiser.ckpt"), 2, dir.file("out"));
  std::vector<SamplePair> pairs = DatasetReader::read_all(dir.file("out/manifest.jsonl"));
  CHECK(pairs.size() == 2);

  // checkpoint mode without a checkpoint is a config error
  CHECK_THROWS_AS(cmd_generate(cfg, "", 2, dir.file("out2")), ConfigError);

  // architecture mismatch is rejected
  RunConfig wide = cfg;
  wide.apply_override("denoiser.base_channels=24");
  CHECK_THROWS_AS(
      cmd_generate(wide, dir.file("train/denoiser.ckpt"), 2, dir.file("out3")),
      std::invalid_argument);

  // unknown mode is a config error
  RunConfig bad = cfg;
  bad.apply_override("gen.mode=telepathy");
  CHECK_THROWS_AS(cmd_generate(bad, "", 2, dir.file("out4")), ConfigError);
}

TEST_CASE("cmd_generate + cmd_eval + cmd_inspect: full pipeline micro run") {
  test_support::TempDir dir("pipeline");
  RunConfig cfg = RunConfig::from_file(write_config(dir, kSmallConfig));

  RunConfig synth_cfg = cfg;
  synth_cfg.apply_override("gen.mode=oracle");
  cmd_generate(synth_cfg, "", 12, dir.file("synthetic"));

  RunConfig real_cfg = cfg;
  real_cfg.apply_override("gen.mode=procedural");
  real_cfg.apply_override("seed=2");
  cmd_generate(real_cfg, "", 12, dir.file("real"));

  cmd_eval(cfg, dir.file("synthetic/manifest.jsonl"), dir.file("real/manifest.jsonl"),
           dir.file("eval1"));
  cmd_eval(cfg, dir.file("synthetic/manifest.jsonl"), dir.file("real/manifest.jsonl"),
           dir.file("eval2"));

  CHECK(test_support::files_identical(dir.file("eval1/report.csv"),
                                      dir.file("eval2/report.csv")));
  std::ifstream report(dir.file("eval1/report.csv"));
  std::string line;
  int rows = 0;
  std::getline(report, line);  // header
  CHECK(line.find("f1_mean") != std::string::npos);
  while (std::getline(report, line)) ++rows;
  CHECK(rows == 3);  // one ratio, three arms
  CHECK(std::filesystem::exists(dir.path() / "eval1" / "report.txt"));

  cmd_inspect(dir.file("real/manifest.jsonl"), dir.file("inspect"), 2);
  int montages = 0;
  for (const auto& entry : std::filesystem::directory_iterator(dir.file("inspect")))
    montages += entry.path().extension() == ".ppm";
  CHECK(montages == 2);
  CHECK(std::filesystem::exists(dir.path() / "inspect" / "inspect.txt"));
}
