#pragma once

// Mask-conditioned epsilon predictor: a small trainable conv net conditioned
// by one-hot concatenation with an additive time-embedding bias, plus the
// closed-form Bayes predictor for class-Gaussian toy scenes that serves as a
// reference denoiser.

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdsynth/codec.hpp"
#include "cdsynth/diffusion.hpp"
#include "cdsynth/grid.hpp"
#include "cdsynth/mask.hpp"
#include "cdsynth/nn.hpp"
#include "cdsynth/rng.hpp"

namespace cdsynth {

// Data model for desk-scale scenes: per pixel x0 ~ Normal(mean[class], s^2)
// plus a shared low-amplitude sinusoidal texture field.
struct ToySceneSpec {
  int channels = 3;
  std::vector<std::vector<double>> class_means;  // [class][channel]
  double noise_scale = 0.1;
  double texture_amplitude = 0.05;
  double texture_wavelength = 16.0;

  int num_classes() const { return static_cast<int>(class_means.size()); }

  void validate() const {
    if (channels < 1) throw std::invalid_argument("ToySceneSpec: channels must be >= 1");
    if (class_means.empty()) throw std::invalid_argument("ToySceneSpec: no class means");
    for (const auto& m : class_means)
      if (static_cast<int>(m.size()) != channels)
        throw std::invalid_argument("ToySceneSpec: mean vector length mismatch");
    if (!(noise_scale > 0.0))
      throw std::invalid_argument("ToySceneSpec: noise_scale must be positive");
  }

  // Deterministic well-separated means via a golden-ratio lattice in
  // [-0.8, 0.8], phase-shifted per channel.
  static ToySceneSpec make_default(int num_classes, int channels = 3,
                                   double noise_scale = 0.1,
                                   double texture_amplitude = 0.05,
                                   double texture_wavelength = 16.0) {
    ToySceneSpec s;
    s.channels = channels;
    s.noise_scale = noise_scale;
    s.texture_amplitude = texture_amplitude;
    s.texture_wavelength = texture_wavelength;
    s.class_means.resize(num_classes);
    constexpr double golden = 0.6180339887498949;
    for (int c = 0; c < num_classes; ++c) {
      s.class_means[c].resize(channels);
      for (int ch = 0; ch < channels; ++ch) {
        double u = (c + 1) * golden + ch / 3.0;
        u -= std::floor(u);
        s.class_means[c][ch] = -0.8 + 1.6 * u;
      }
    }
    return s;
  }
};

inline Grid make_toy_scene(const ToySceneSpec& spec, const SemanticMask& y, Rng& rng) {
  spec.validate();
  if (y.num_classes > spec.num_classes())
    throw std::invalid_argument("make_toy_scene: mask has more classes than the scene spec");
  Grid img(spec.channels, y.height, y.width);
  double phi = rng.uniform() * 6.283185307179586;
  double psi = rng.uniform() * 6.283185307179586;
  double kx = std::cos(phi) / spec.texture_wavelength;
  double ky = std::sin(phi) / spec.texture_wavelength;
  for (int yy = 0; yy < y.height; ++yy) {
    for (int xx = 0; xx < y.width; ++xx) {
      double tex = spec.texture_amplitude *
                   std::sin(6.283185307179586 * (kx * xx + ky * yy) + psi);
      const auto& m = spec.class_means[y.at(xx, yy)];
      for (int c = 0; c < spec.channels; ++c)
        img.at(c, yy, xx) = m[c] + spec.noise_scale * rng.normal() + tex;
    }
  }
  return img;
}

inline Grid one_hot_mask(const SemanticMask& y, int num_classes) {
  Grid g(num_classes, y.height, y.width, 0.0);
  for (int yy = 0; yy < y.height; ++yy)
    for (int xx = 0; xx < y.width; ++xx) {
      int c = y.at(xx, yy);
      if (c >= num_classes)
        throw std::invalid_argument("one_hot_mask: class id out of range");
      g.at(c, yy, xx) = 1.0;
    }
  return g;
}

struct DenoiserConfig {
  int image_channels = 3;
  int num_classes = 8;
  int base_channels = 16;
  int time_embed_dim = 32;
};

// conv(3x3) -> +time bias -> SiLU -> conv(3x3) -> SiLU -> conv(3x3, zero
// init). Input is concat(x_t, one_hot(y)); output matches x_t's shape.
class DenoiserModel {
 public:
  DenoiserModel(const DenoiserConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
    Rng init(init_seed);
    conv1_ = make_conv(params_, "conv1", cfg.image_channels + cfg.num_classes,
                       cfg.base_channels, 3, &init);
    time_proj_ = make_linear(params_, "time_proj", cfg.time_embed_dim,
                             cfg.base_channels, &init);
    conv2_ = make_conv(params_, "conv2", cfg.base_channels, cfg.base_channels, 3, &init);
    conv3_ = make_conv(params_, "conv3", cfg.base_channels, cfg.image_channels, 3,
                       nullptr);  // zero init: untrained model predicts 0
  }

  const DenoiserConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  struct Activations {
    Grid input;
    Grid pre1;
    std::vector<double> emb;
    Grid biased1;
    Grid act1;
    Grid pre2;
    Grid act2;
    int t = 0;
  };

  Grid forward(const Grid& x_t, int t, const SemanticMask& y_latent,
               Activations* acts) const {
    if (x_t.channels != cfg_.image_channels)
      throw std::invalid_argument("denoiser: x_t channel mismatch");
    if (y_latent.width != x_t.width || y_latent.height != x_t.height)
      throw std::invalid_argument("denoiser: mask resolution must match x_t");
    if (y_latent.num_classes != cfg_.num_classes)
      throw std::invalid_argument("denoiser: mask class count mismatch");

    Grid input = concat_channels(x_t, one_hot_mask(y_latent, cfg_.num_classes));
    Grid pre1 = conv2d_forward(conv1_, params_, input);
    std::vector<double> emb = sinusoidal_time_embedding(t, cfg_.time_embed_dim);
    std::vector<double> tb = linear_forward(time_proj_, params_, emb);
    Grid biased1 = add_channel_bias(pre1, tb);
    Grid act1 = silu_forward(biased1);
    Grid pre2 = conv2d_forward(conv2_, params_, act1);
    Grid act2 = silu_forward(pre2);
    Grid out = conv2d_forward(conv3_, params_, act2);
    if (acts != nullptr) {
      acts->input = std::move(input);
      acts->pre1 = std::move(pre1);
      acts->emb = std::move(emb);
      acts->biased1 = std::move(biased1);
      acts->act1 = std::move(act1);
      acts->pre2 = std::move(pre2);
      acts->act2 = std::move(act2);
      acts->t = t;
    }
    return out;
  }

  Grid predict_eps(const Grid& x_t, int t, const SemanticMask& y_latent) const {
    return forward(x_t, t, y_latent, nullptr);
  }

  void backward(const Activations& acts, const Grid& d_out) {
    Grid d_act2 = conv2d_backward(conv3_, params_, acts.act2, d_out);
    Grid d_pre2 = silu_backward(acts.pre2, d_act2);
    Grid d_act1 = conv2d_backward(conv2_, params_, acts.act1, d_pre2);
    Grid d_biased1 = silu_backward(acts.biased1, d_act1);
    linear_backward(time_proj_, params_, acts.emb, channel_bias_backward(d_biased1));
    conv2d_backward(conv1_, params_, acts.input, d_biased1);
    params_.mark_grads_ready();
  }

 private:
  DenoiserConfig cfg_;
  ParamStore params_;
  ConvSpec conv1_, conv2_, conv3_;
  LinearSpec time_proj_;
};

// Bayes-optimal epsilon for the class-Gaussian model (texture ignored):
//   E[x0|x_t] = m + sqrt(ab) s^2 / (ab s^2 + 1 - ab) * (x_t - sqrt(ab) m)
//   eps       = (x_t - sqrt(ab) E[x0|x_t]) / sqrt(1 - ab)
inline Grid oracle_eps(const Grid& x_t, int t, const SemanticMask& y,
                       const ToySceneSpec& spec, const NoiseSchedule& s) {
  if (y.width != x_t.width || y.height != x_t.height)
    throw std::invalid_argument("oracle_eps: mask resolution must match x_t");
  s.check_step(t);
  double ab = s.alpha_bar(t);
  double sa = std::sqrt(ab);
  double s2 = spec.noise_scale * spec.noise_scale;
  double shrink = sa * s2 / (ab * s2 + 1.0 - ab);
  double inv_cb = 1.0 / std::sqrt(1.0 - ab);
  Grid out = like(x_t);
  for (int yy = 0; yy < x_t.height; ++yy)
    for (int xx = 0; xx < x_t.width; ++xx) {
      const auto& m = spec.class_means[y.at(xx, yy)];
      for (int c = 0; c < x_t.channels; ++c) {
        double x = x_t.at(c, yy, xx);
        double e0 = m[c] + shrink * (x - sa * m[c]);
        out.at(c, yy, xx) = (x - sa * e0) * inv_cb;
      }
    }
  return out;
}

struct TrainScene {
  Grid image;
  SemanticMask mask;
};

struct TrainLogEntry {
  int step = 0;
  double loss = 0.0;
};

// One scene, one timestep, one noise draw per step; epsilon-MSE objective
// with AdamW. Scenes are encoded through the codec up front.
inline std::vector<TrainLogEntry> train_denoiser(DenoiserModel& model,
                                                 std::span<const TrainScene> scenes,
                                                 const CodecSpec& codec,
                                                 const NoiseSchedule& sched,
                                                 const OptimizerConfig& opt,
                                                 int steps, Rng& rng) {
  if (scenes.empty()) throw std::invalid_argument("train_denoiser: empty scene stream");
  opt.validate();
  int factor = codec.spatial_factor();
  std::vector<Grid> latents;
  std::vector<SemanticMask> masks;
  latents.reserve(scenes.size());
  masks.reserve(scenes.size());
  for (const TrainScene& sc : scenes) {
    latents.push_back(encode(sc.image, codec));
    masks.push_back(downsample_mask_nearest(sc.mask, factor));
  }

  std::vector<TrainLogEntry> log;
  log.reserve(steps);
  for (int step = 0; step < steps; ++step) {
    int pick = rng.uniform_int(static_cast<int>(scenes.size()));
    int t = 1 + rng.uniform_int(sched.total_steps);
    Grid eps = normal_like(latents[pick], rng);
    Grid x_t = forward_diffuse(latents[pick], t, eps, sched);
    DenoiserModel::Activations acts;
    Grid eps_hat = model.forward(x_t, t, masks[pick], &acts);
    double loss = eps_mse_loss(eps, eps_hat);
    model.backward(acts, mse_loss_grad(eps, eps_hat));
    adamw_update(model.params(), opt);
    log.push_back({step, loss});
  }
  return log;
}

}  // namespace cdsynth
