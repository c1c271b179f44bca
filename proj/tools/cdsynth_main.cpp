// cdsynth command line: train-denoiser / generate / eval / inspect.
// Configuration comes from a key = value file with --set overrides taking
// precedence; every command emits its fully resolved config next to its
// outputs. Exit codes: 0 ok, 2 config, 3 io, 4 domain, 5 internal.

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cdsynth/commands.hpp"
#include "cdsynth/config.hpp"
#include "cdsynth/errors.hpp"

namespace {

cdsynth::RunConfig load_config(const std::string& config_path,
                               const std::vector<std::string>& overrides,
                               const std::string& seed_flag,
                               const std::string& workers_flag) {
  cdsynth::RunConfig cfg = config_path.empty()
                               ? cdsynth::RunConfig{}
                               : cdsynth::RunConfig::from_file(config_path);
  for (const std::string& kv : overrides) cfg.apply_override(kv);
  if (!seed_flag.empty()) cfg.set("seed", seed_flag);
  if (!workers_flag.empty()) cfg.set("workers", workers_flag);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bi-temporal change-detection sample synthesis"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint, synthetic_manifest, real_manifest,
      manifest, seed_flag, workers_flag;
  std::vector<std::string> overrides;
  int count = 8;

  auto add_common = [&](CLI::App* cmd, bool needs_config) {
    auto* opt = cmd->add_option("--config", config_path, "config file (key = value lines)");
    if (needs_config) opt->check(CLI::ExistingFile);
    cmd->add_option("--set", overrides, "override, repeatable: --set key=value");
    cmd->add_option("--seed", seed_flag, "shorthand for --set seed=N");
    cmd->add_option("--workers", workers_flag, "shorthand for --set workers=N");
  };

  CLI::App* train = app.add_subcommand("train-denoiser",
                                       "train the mask-conditioned denoiser on toy scenes");
  add_common(train, true);
  train->add_option("--out", out_dir, "output directory")->required();

  CLI::App* gen = app.add_subcommand("generate", "synthesize a bi-temporal dataset");
  add_common(gen, false);
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--count", count, "number of sample pairs")->required();
  gen->add_option("--checkpoint", checkpoint, "denoiser checkpoint (gen.mode=checkpoint)");

  CLI::App* eval = app.add_subcommand("eval", "run the transfer evaluation protocol");
  add_common(eval, false);
  eval->add_option("--synthetic", synthetic_manifest, "synthetic dataset manifest")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--real", real_manifest, "real/toy dataset manifest")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--out", out_dir, "output directory")->required();

  CLI::App* inspect = app.add_subcommand("inspect", "validate a dataset and write montages");
  inspect->add_option("--manifest", manifest, "dataset manifest")
      ->required()
      ->check(CLI::ExistingFile);
  inspect->add_option("--out", out_dir, "output directory")->required();
  inspect->add_option("--count", count, "montage count (default 8)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      cdsynth::cmd_train_denoiser(load_config(config_path, overrides, seed_flag, workers_flag),
                                  out_dir);
    } else if (gen->parsed()) {
      cdsynth::cmd_generate(load_config(config_path, overrides, seed_flag, workers_flag),
                            checkpoint, count, out_dir);
    } else if (eval->parsed()) {
      cdsynth::cmd_eval(load_config(config_path, overrides, seed_flag, workers_flag),
                        synthetic_manifest, real_manifest, out_dir);
    } else if (inspect->parsed()) {
      cdsynth::cmd_inspect(manifest, out_dir, count);
    }
  } catch (const cdsynth::ConfigError& e) {
    std::fprintf(stderr, "error: config: %s\n", e.what());
    return 2;
  } catch (const cdsynth::IoError& e) {
    std::fprintf(stderr, "error: io: %s\n", e.what());
    return 3;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: domain: %s\n", e.what());
    return 4;
  } catch (const std::domain_error& e) {
    std::fprintf(stderr, "error: domain: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: internal: %s\n", e.what());
    return 5;
  }
  return 0;
}
