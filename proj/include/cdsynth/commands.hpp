#pragma once

// Command layer behind the CLI: train-denoiser, generate, eval and inspect,
// each a deterministic function of (config, seed) that writes its resolved
// configuration next to its outputs.

#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "cdsynth/cd_eval.hpp"
#include "cdsynth/change_sim.hpp"
#include "cdsynth/codec.hpp"
#include "cdsynth/config.hpp"
#include "cdsynth/dataset_io.hpp"
#include "cdsynth/denoiser.hpp"
#include "cdsynth/diffusion.hpp"
#include "cdsynth/errors.hpp"
#include "cdsynth/pair_gen.hpp"

namespace cdsynth {

namespace build {

inline NoiseSchedule schedule(const RunConfig& cfg) {
  std::string mode = cfg.get("schedule.sigma_mode");
  if (mode != "standard" && mode != "paper_literal")
    throw ConfigError("schedule.sigma_mode must be standard or paper_literal");
  return build_linear_schedule(static_cast<int>(cfg.get_int("schedule.steps")),
                               cfg.get_double("schedule.beta_start"),
                               cfg.get_double("schedule.beta_end"),
                               mode == "standard" ? SigmaMode::standard
                                                  : SigmaMode::paper_literal);
}

inline CodecSpec codec(const RunConfig& cfg) {
  std::string kind = cfg.get("codec.kind");
  if (kind != "identity" && kind != "pool4")
    throw ConfigError("codec.kind must be identity or pool4");
  CodecSpec c;
  c.kind = kind == "identity" ? CodecKind::identity : CodecKind::pool4;
  c.image_channels = static_cast<int>(cfg.get_int("image.channels"));
  return c;
}

inline ToySceneSpec scene(const RunConfig& cfg) {
  return ToySceneSpec::make_default(static_cast<int>(cfg.get_int("scene.classes")),
                                    static_cast<int>(cfg.get_int("image.channels")),
                                    cfg.get_double("scene.noise_scale"),
                                    cfg.get_double("scene.texture_amplitude"),
                                    cfg.get_double("scene.texture_wavelength"));
}

inline MaskGenParams mask_params(const RunConfig& cfg) {
  MaskGenParams p;
  p.background_seeds = static_cast<int>(cfg.get_int("maskgen.background_seeds"));
  p.instances = static_cast<int>(cfg.get_int("maskgen.instances"));
  p.instance_min_size = static_cast<int>(cfg.get_int("maskgen.instance_min"));
  p.instance_max_size = static_cast<int>(cfg.get_int("maskgen.instance_max"));
  return p;
}

inline EventParams event_params(const RunConfig& cfg) {
  EventParams p;
  p.min_area = static_cast<int>(cfg.get_int("events.min_area"));
  p.max_area_fraction = cfg.get_double("events.max_area_fraction");
  p.max_attempts = static_cast<int>(cfg.get_int("events.max_attempts"));
  return p;
}

inline GenerationConfig generation(const RunConfig& cfg) {
  std::string sampler = cfg.get("gen.sampler");
  if (sampler != "ddim" && sampler != "ddpm")
    throw ConfigError("gen.sampler must be ddim or ddpm");
  GenerationConfig g;
  g.n_max = static_cast<int>(cfg.get_int("gen.n_max"));
  g.n_min = static_cast<int>(cfg.get_int("gen.n_min"));
  g.sampler = sampler == "ddim" ? SamplerKind::ddim : SamplerKind::ddpm;
  g.ddim_substeps = static_cast<int>(cfg.get_int("gen.ddim_substeps"));
  g.eta = cfg.get_double("gen.eta");
  g.blend_at_zero = cfg.get_bool("gen.blend_at_zero");
  g.dilate_radius = static_cast<int>(cfg.get_int("gen.dilate_radius"));
  return g;
}

inline DenoiserConfig denoiser(const RunConfig& cfg) {
  DenoiserConfig d;
  d.image_channels = static_cast<int>(cfg.get_int("image.channels"));
  d.num_classes = static_cast<int>(cfg.get_int("scene.classes"));
  d.base_channels = static_cast<int>(cfg.get_int("denoiser.base_channels"));
  d.time_embed_dim = static_cast<int>(cfg.get_int("denoiser.time_embed_dim"));
  return d;
}

inline OptimizerConfig train_optimizer(const RunConfig& cfg) {
  OptimizerConfig o;
  o.learning_rate = cfg.get_double("train.learning_rate");
  o.weight_decay = cfg.get_double("train.weight_decay");
  o.beta1 = cfg.get_double("train.beta1");
  o.beta2 = cfg.get_double("train.beta2");
  o.epsilon = cfg.get_double("train.epsilon");
  return o;
}

}  // namespace build

namespace detail {

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os << text;
  if (!os) throw IoError("write failed: " + path.string());
}

inline void emit_resolved_config(const RunConfig& cfg, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory: " + out_dir.string());
  write_text_file(out_dir / "resolved.cfg", cfg.resolved_text());
}

// Procedural training scenes: toy masks rendered through the scene model.
inline std::vector<TrainScene> make_training_scenes(const RunConfig& cfg, uint64_t seed) {
  ToySceneSpec scene = build::scene(cfg);
  MaskGenParams mp = build::mask_params(cfg);
  int size = static_cast<int>(cfg.get_int("image.size"));
  int count = static_cast<int>(cfg.get_int("train.scenes"));
  if (count < 1) throw ConfigError("train.scenes must be >= 1");
  std::vector<TrainScene> scenes;
  scenes.reserve(count);
  for (int i = 0; i < count; ++i) {
    uint64_t s = derive_seed(seed, 0x5CE7Eull + static_cast<uint64_t>(i));
    SemanticMask y = generate_toy_semantic_mask(s, size, scene.num_classes(), mp);
    Rng rng(derive_seed(s, 1));
    scenes.push_back({make_toy_scene(scene, y, rng), std::move(y)});
  }
  return scenes;
}

}  // namespace detail

// Trains the denoiser on procedural scenes; writes denoiser.ckpt,
// train_log.csv and resolved.cfg into out_dir.
inline void cmd_train_denoiser(const RunConfig& cfg, const std::string& out_dir) {
  std::filesystem::path out(out_dir);
  detail::emit_resolved_config(cfg, out);
  uint64_t seed = cfg.get_u64("seed");
  NoiseSchedule sched = build::schedule(cfg);
  CodecSpec codec = build::codec(cfg);
  std::vector<TrainScene> scenes = detail::make_training_scenes(cfg, seed);

  DenoiserModel model(build::denoiser(cfg), derive_seed(seed, 0x111ull));
  Rng rng(derive_seed(seed, 0x222ull));
  auto log = train_denoiser(model, scenes, codec, sched, build::train_optimizer(cfg),
                            static_cast<int>(cfg.get_int("train.steps")), rng);

  save_checkpoint(model.params(), (out / "denoiser.ckpt").string());
  std::ostringstream csv;
  csv << "step,loss\n";
  char buf[64];
  for (const auto& entry : log) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g\n", entry.step, entry.loss);
    csv << buf;
  }
  detail::write_text_file(out / "train_log.csv", csv.str());
}

// Emits `count` sample pairs plus manifest, palette and montages of the
// first 8. gen.mode selects the predictor: a trained checkpoint, the
// closed-form oracle, or the diffusion-free procedural benchmark.
inline void cmd_generate(const RunConfig& cfg, const std::string& checkpoint_path,
                         int count, const std::string& out_dir) {
  if (count < 1) throw ConfigError("generate: count must be >= 1");
  std::filesystem::path out(out_dir);
  detail::emit_resolved_config(cfg, out);
  uint64_t seed = cfg.get_u64("seed");
  int workers = static_cast<int>(cfg.get_int("workers"));
  std::string mode = cfg.get("gen.mode");
  ToySceneSpec scene = build::scene(cfg);

  std::vector<SamplePair> pairs;
  std::vector<SkipLogEntry> skips;

  if (mode == "procedural") {
    ProceduralBenchParams bench;
    bench.mask_size = static_cast<int>(cfg.get_int("image.size"));
    bench.mask_params = build::mask_params(cfg);
    bench.event_params = build::event_params(cfg);
    bench.mask_retries = static_cast<int>(cfg.get_int("events.mask_retries"));
    bench.nonchange_jitter = cfg.get_double("bench.nonchange_jitter");
    bench.brightness_sigma = cfg.get_double("bench.brightness_sigma");
    pairs = generate_procedural_benchmark(scene, bench, count, seed, workers);
    for (auto& p : pairs) p.config_hash = cfg.hash();
  } else {
    DatasetSpec spec;
    spec.scene = scene;
    spec.mask_params = build::mask_params(cfg);
    spec.event_params = build::event_params(cfg);
    spec.mask_size = static_cast<int>(cfg.get_int("image.size"));
    spec.mask_retries = static_cast<int>(cfg.get_int("events.mask_retries"));
    spec.codec = build::codec(cfg);
    spec.schedule = build::schedule(cfg);
    spec.gen = build::generation(cfg);
    spec.config_hash = cfg.hash();

    // keep the model alive for the duration of generation
    std::shared_ptr<DenoiserModel> model;
    if (mode == "oracle") {
      NoiseSchedule sched = spec.schedule;
      spec.predictor = [scene, sched](const Grid& x_t, int t, const SemanticMask& y) {
        return oracle_eps(x_t, t, y, scene, sched);
      };
    } else if (mode == "checkpoint") {
      if (checkpoint_path.empty())
        throw ConfigError("generate: gen.mode=checkpoint requires --checkpoint");
      model = std::make_shared<DenoiserModel>(build::denoiser(cfg), 0);
      load_checkpoint(model->params(), checkpoint_path);
      spec.predictor = [model](const Grid& x_t, int t, const SemanticMask& y) {
        return model->predict_eps(x_t, t, y);
      };
    } else {
      throw ConfigError("gen.mode must be checkpoint, oracle or procedural");
    }
    pairs = generate_dataset(spec, count, seed, workers, &skips);
  }

  size_t calibration = std::min<size_t>(8, pairs.size());
  std::vector<Grid> calib;
  for (size_t i = 0; i < calibration; ++i) {
    calib.push_back(pairs[i].x1);
    calib.push_back(pairs[i].x2);
  }
  AffineMap affine = AffineMap::calibrate(calib);

  auto palette = default_palette(scene.num_classes());
  DatasetWriter writer(out_dir, cfg.hash(), affine, palette);
  for (const SamplePair& p : pairs) writer.write_sample(p);
  writer.finish();

  std::error_code ec;
  std::filesystem::create_directories(out / "montage", ec);
  for (size_t i = 0; i < std::min<size_t>(8, pairs.size()); ++i)
    write_ppm((out / "montage" / (pairs[i].id + ".ppm")).string(),
              render_montage(pairs[i], palette));

  if (!skips.empty()) {
    std::ostringstream log;
    for (const auto& s : skips)
      log << "index " << s.index << " mask_seed " << DatasetWriter::hash_hex(s.seed)
          << ": " << s.reason << "\n";
    detail::write_text_file(out / "skips.log", log.str());
  }
}

// Runs the transfer protocol of a synthetic dataset against a procedural
// "real" one; writes report.csv, report.txt and resolved.cfg.
inline void cmd_eval(const RunConfig& cfg, const std::string& synthetic_manifest,
                     const std::string& real_manifest, const std::string& out_dir) {
  std::filesystem::path out(out_dir);
  detail::emit_resolved_config(cfg, out);
  std::vector<SamplePair> synthetic = DatasetReader::read_all(synthetic_manifest);
  std::vector<SamplePair> real_toy = DatasetReader::read_all(real_manifest);

  TransferProtocol protocol;
  protocol.ratios = cfg.get_double_list("eval.ratios");
  protocol.seeds = cfg.get_u64_list("eval.seeds");
  protocol.test_fraction = cfg.get_double("eval.test_fraction");
  protocol.pretrain_steps = static_cast<int>(cfg.get_int("eval.pretrain_steps"));
  protocol.finetune_steps = static_cast<int>(cfg.get_int("eval.finetune_steps"));
  protocol.onlysup_steps = static_cast<int>(cfg.get_int("eval.onlysup_steps"));
  protocol.optimizer.learning_rate = cfg.get_double("eval.learning_rate");
  protocol.optimizer.weight_decay = cfg.get_double("eval.weight_decay");
  protocol.arch.image_channels = static_cast<int>(cfg.get_int("image.channels"));
  protocol.arch.base_channels = static_cast<int>(cfg.get_int("eval.cd_base_channels"));
  protocol.workers = static_cast<int>(cfg.get_int("workers"));

  TransferReport report = transfer_experiment(synthetic, real_toy, protocol);
  detail::write_text_file(out / "report.csv", report.to_csv());
  detail::write_text_file(out / "report.txt", report.to_text());
}

// Re-validates a dataset and writes montages for its first `count` samples.
inline void cmd_inspect(const std::string& manifest_path, const std::string& out_dir,
                        int count) {
  std::filesystem::path out(out_dir);
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory: " + out.string());
  DatasetReader reader(manifest_path);
  int written = 0, total = 0;
  while (auto pair = reader.next()) {
    ++total;
    if (written < count) {
      write_ppm((out / (pair->id + "_montage.ppm")).string(),
                render_montage(*pair, reader.header().palette));
      ++written;
    }
  }
  detail::write_text_file(out / "inspect.txt",
                          "records: " + std::to_string(total) +
                              "\nmontages: " + std::to_string(written) + "\n");
}

}  // namespace cdsynth
