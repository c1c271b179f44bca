#pragma once

// Bi-temporal sample synthesis: a two-phase reverse pass over the latent grid
// where phase 1 re-blends the non-change region with the forward-diffused t1
// latent after every reverse step, and phase 2 runs free under the t2 mask.
// Dataset-scale generation derives one independent seed per sample index.

#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "cdsynth/change_sim.hpp"
#include "cdsynth/codec.hpp"
#include "cdsynth/denoiser.hpp"
#include "cdsynth/diffusion.hpp"
#include "cdsynth/errors.hpp"
#include "cdsynth/grid.hpp"
#include "cdsynth/mask.hpp"
#include "cdsynth/rng.hpp"

namespace cdsynth {

enum class SamplerKind { ddpm, ddim };

struct GenerationConfig {
  int n_max = 200;
  int n_min = 50;
  SamplerKind sampler = SamplerKind::ddim;
  int ddim_substeps = 50;
  double eta = 0.0;
  bool blend_at_zero = false;
  int dilate_radius = 0;

  void validate(const NoiseSchedule& s) const {
    if (!(0 <= n_min && n_min < n_max && n_max <= s.total_steps))
      throw std::domain_error("GenerationConfig: need 0 <= n_min < n_max <= T");
    if (ddim_substeps < 1)
      throw std::domain_error("GenerationConfig: ddim_substeps must be >= 1");
    if (eta < 0.0 || eta > 1.0)
      throw std::domain_error("GenerationConfig: eta must lie in [0, 1]");
  }
};

using EpsPredictor =
    std::function<Grid(const Grid& x_t, int t, const SemanticMask& y_latent)>;

struct SamplePair {
  std::string id;
  Grid x1;
  Grid x2;
  SemanticMask y1;
  SemanticMask y2;
  ChangeMask change;
  ChangeEvent event;
  uint64_t seed = 0;
  uint64_t config_hash = 0;
  std::map<std::string, std::string> meta;
};

// Eq.-style masked mixing: change cells from the denoised proposal, the rest
// from the t1 latent. The mask is binary, so selection is the exact
// arithmetic blend and keeps non-change cells bit-identical.
inline Grid blend_latents(const Grid& xt2_hat, const Grid& xt1,
                          const ChangeMask& mask_latent) {
  require_same_shape(xt2_hat, xt1, "blend_latents");
  if (mask_latent.width != xt1.width || mask_latent.height != xt1.height)
    throw std::invalid_argument("blend_latents: mask resolution mismatch");
  Grid out = like(xt1);
  for (int c = 0; c < out.channels; ++c)
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x)
        out.at(c, y, x) = mask_latent.at(x, y) ? xt2_hat.at(c, y, x) : xt1.at(c, y, x);
  return out;
}

namespace detail {

inline std::vector<int> sampling_levels(int start, SamplerKind kind, int substeps) {
  if (kind == SamplerKind::ddpm) {
    std::vector<int> levels(start + 1);
    for (int i = 0; i <= start; ++i) levels[i] = start - i;
    return levels;
  }
  return make_substep_ladder(start, std::min(substeps, start));
}

// One reverse transition t_hi -> t_lo, drawing z only when the step is
// stochastic so eta = 0 stays bit-reproducible.
inline Grid reverse_transition(const Grid& x, int t_hi, int t_lo, const Grid& eps_hat,
                               const NoiseSchedule& s, const GenerationConfig& cfg,
                               Rng& rng) {
  if (cfg.sampler == SamplerKind::ddpm) {
    Grid z = (t_hi == 1) ? like(x, 0.0) : normal_like(x, rng);
    return ddpm_step(x, t_hi, eps_hat, z, s);
  }
  if (cfg.eta > 0.0 && t_lo >= 1) {
    Grid z = normal_like(x, rng);
    return ddim_step(x, t_hi, t_lo, eps_hat, s, cfg.eta, &z);
  }
  return ddim_step(x, t_hi, t_lo, eps_hat, s, cfg.eta, nullptr);
}

}  // namespace detail

// Full reverse pass from pure noise at step T, conditioned on y1.
inline Grid generate_t1(const SemanticMask& y1, const EpsPredictor& predict,
                        const CodecSpec& codec, const NoiseSchedule& s,
                        const GenerationConfig& cfg, Rng& rng) {
  cfg.validate(s);
  int factor = codec.spatial_factor();
  if (y1.width % factor != 0 || y1.height % factor != 0)
    throw std::invalid_argument("generate_t1: mask dims not divisible by codec factor");
  SemanticMask y_lat = downsample_mask_nearest(y1, factor);
  Grid x(codec.latent_channels(), y1.height / factor, y1.width / factor);
  for (double& v : x.data) v = rng.normal();

  std::vector<int> levels =
      detail::sampling_levels(s.total_steps, cfg.sampler, cfg.ddim_substeps);
  for (size_t k = 1; k < levels.size(); ++k) {
    int t_hi = levels[k - 1], t_lo = levels[k];
    Grid eps_hat = predict(x, t_hi, y_lat);
    x = detail::reverse_transition(x, t_hi, t_lo, eps_hat, s, cfg, rng);
  }
  return decode(x, codec);
}

// Invoked after every blended phase-1 level with the blended latent and the
// matching forward-diffused t1 latent.
using BlendObserver =
    std::function<void(int level, const Grid& x_t2, const Grid& x_t1_level)>;

// Two-phase generation of the t2 image from an existing t1 image and the
// (y1, y2, change) mask triple. The chain starts at n_max from the
// forward-diffused t1 latent; phase 1 (levels >= n_min) blends after each
// reverse step with a fresh forward draw of the t1 latent, phase 2 runs free.
inline SamplePair generate_pair(const Grid& x0_t1, const SemanticMask& y1,
                                const SemanticMask& y2, const ChangeMask& change,
                                const ChangeEvent& event, const EpsPredictor& predict,
                                const CodecSpec& codec, const NoiseSchedule& s,
                                const GenerationConfig& cfg, Rng& rng,
                                const BlendObserver& observer = {}) {
  cfg.validate(s);
  {
    ChangeMask expected = derive_change_mask(y1, y2);
    if (expected.values != change.values)
      throw std::invalid_argument("generate_pair: change mask is not the XOR of the mask pair");
  }
  int factor = codec.spatial_factor();
  Grid x0_lat = encode(x0_t1, codec);
  ChangeMask mask_lat = downsample_change_mask(change, factor, cfg.dilate_radius);
  SemanticMask y2_lat = downsample_mask_nearest(y2, factor);

  Grid x = forward_diffuse(x0_lat, cfg.n_max, normal_like(x0_lat, rng), s);
  if (observer) observer(cfg.n_max, x, x);

  std::vector<int> levels =
      detail::sampling_levels(cfg.n_max, cfg.sampler, cfg.ddim_substeps);
  for (size_t k = 1; k < levels.size(); ++k) {
    int t_hi = levels[k - 1], t_lo = levels[k];
    Grid eps_hat = predict(x, t_hi, y2_lat);
    Grid x_hat = detail::reverse_transition(x, t_hi, t_lo, eps_hat, s, cfg, rng);
    if (t_lo >= cfg.n_min) {
      Grid x1_lo = (t_lo == 0)
                       ? x0_lat
                       : forward_diffuse(x0_lat, t_lo, normal_like(x0_lat, rng), s);
      x = blend_latents(x_hat, x1_lo, mask_lat);
      if (observer) observer(t_lo, x, x1_lo);
    } else {
      x = std::move(x_hat);
    }
  }
  if (cfg.blend_at_zero) x = blend_latents(x, x0_lat, mask_lat);

  SamplePair pair;
  pair.x1 = x0_t1;
  pair.x2 = decode(x, codec);
  pair.y1 = y1;
  pair.y2 = y2;
  pair.change = change;
  pair.event = event;
  pair.meta["blend_order"] = "reverse_then_blend";
  pair.meta["renoise"] = "per_step_fresh";
  pair.meta["chain_init"] = "noised_t1";
  if (cfg.n_min == 0 && !cfg.blend_at_zero)
    pair.meta["nmin_zero_without_final_blend"] = "true";
  return pair;
}

struct SkipLogEntry {
  int index = 0;
  uint64_t seed = 0;
  std::string reason;
};

// Immutable job context shared by all generation workers.
struct DatasetSpec {
  ToySceneSpec scene;
  MaskGenParams mask_params;
  EventParams event_params;
  int mask_size = 64;
  int mask_retries = 8;
  EpsPredictor predictor;
  CodecSpec codec;
  NoiseSchedule schedule;
  GenerationConfig gen;
  uint64_t config_hash = 0;
};

struct MaskedEvent {
  SemanticMask y1;
  SemanticMask y2;
  ChangeMask change;
  ChangeEvent event;
};

// Draws masks until the requested event kind succeeds; failed masks are
// logged and replaced, up to `retries` rounds.
inline MaskedEvent draw_masked_event(Rng& rng, EventKind kind, int size,
                                     int num_classes, const MaskGenParams& mask_params,
                                     const EventParams& event_params, int retries,
                                     int index, std::vector<SkipLogEntry>* skips) {
  for (int round = 0; round < retries; ++round) {
    uint64_t mask_seed = rng.next_u64();
    uint64_t event_seed = rng.next_u64();
    SemanticMask y1 = generate_toy_semantic_mask(mask_seed, size, num_classes, mask_params);
    try {
      SimulatedChange sim = kind == EventKind::appearance
                                ? simulate_appearance(y1, event_seed, event_params)
                                : simulate_disappearance(y1, event_seed, event_params);
      ChangeMask change = derive_change_mask(y1, sim.y2);
      return {std::move(y1), std::move(sim.y2), std::move(change), std::move(sim.event)};
    } catch (const EventSimulationError& e) {
      if (skips != nullptr) skips->push_back({index, mask_seed, e.what()});
    }
  }
  throw EventSimulationError("sample " + std::to_string(index) + ": no viable mask after " +
                             std::to_string(retries) + " retries");
}

// Pure function of (spec, base_seed, index): one bi-temporal pair. Event kind
// alternates with the index (even = appearance, odd = disappearance).
inline SamplePair generate_sample(const DatasetSpec& spec, uint64_t base_seed, int index,
                                  std::vector<SkipLogEntry>* skips = nullptr) {
  uint64_t seed = derive_seed(base_seed, static_cast<uint64_t>(index));
  Rng rng(seed);
  EventKind kind = index % 2 == 0 ? EventKind::appearance : EventKind::disappearance;
  MaskedEvent me = draw_masked_event(rng, kind, spec.mask_size, spec.scene.num_classes(),
                                     spec.mask_params, spec.event_params,
                                     spec.mask_retries, index, skips);
  Grid x1 = make_toy_scene(spec.scene, me.y1, rng);
  SamplePair pair = generate_pair(x1, me.y1, me.y2, me.change, me.event, spec.predictor,
                                  spec.codec, spec.schedule, spec.gen, rng);
  char id[16];
  std::snprintf(id, sizeof(id), "s%06d", index);
  pair.id = id;
  pair.seed = seed;
  pair.config_hash = spec.config_hash;
  return pair;
}

// Deterministic regardless of worker count: every index owns an independent
// seeded stream and results are assembled by index.
inline std::vector<SamplePair> generate_dataset(const DatasetSpec& spec, int count,
                                                uint64_t base_seed, int workers = 1,
                                                std::vector<SkipLogEntry>* skips = nullptr) {
  if (count < 1) throw std::domain_error("generate_dataset: count must be >= 1");
  spec.gen.validate(spec.schedule);
  std::vector<SamplePair> out(count);

  if (workers <= 1) {
    for (int i = 0; i < count; ++i) out[i] = generate_sample(spec, base_seed, i, skips);
    return out;
  }

  std::vector<std::thread> pool;
  std::vector<std::vector<SkipLogEntry>> worker_skips(workers);
  std::vector<std::exception_ptr> errors(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      try {
        for (int i = w; i < count; i += workers)
          out[i] = generate_sample(spec, base_seed, i, &worker_skips[w]);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& err : errors)
    if (err) std::rethrow_exception(err);
  if (skips != nullptr) {
    for (auto& ws : worker_skips)
      skips->insert(skips->end(), ws.begin(), ws.end());
    std::sort(skips->begin(), skips->end(),
              [](const SkipLogEntry& a, const SkipLogEntry& b) { return a.index < b.index; });
  }
  return out;
}

}  // namespace cdsynth
