#pragma once

// Closed-form diffusion machinery: linear beta schedule with derived alpha
// tables, forward noising, posterior mean, DDPM and DDIM reverse steps, the
// epsilon regression loss, and the accelerated-sampling substep ladder.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "cdsynth/grid.hpp"
#include "cdsynth/rng.hpp"

namespace cdsynth {

// Reverse-step noise scale convention. `standard` uses sqrt(beta_t);
// `paper_literal` uses sqrt(1 - alpha_bar_t), which does not contract and is
// kept only for comparison.
enum class SigmaMode { standard, paper_literal };

// Beta/alpha tables for T noising steps. Step indices are 1-based; index 0
// denotes the clean state, so alpha_bar(0) == 1.
struct NoiseSchedule {
  int total_steps = 0;
  SigmaMode sigma_mode = SigmaMode::standard;
  std::vector<double> betas;       // betas[t-1] = beta_t
  std::vector<double> alphas;      // alpha_t = 1 - beta_t
  std::vector<double> alpha_bars;  // prod_{s=1..t} alpha_s

  void check_step(int t) const {
    if (t < 1 || t > total_steps)
      throw std::domain_error("NoiseSchedule: step out of range");
  }

  double beta(int t) const {
    check_step(t);
    return betas[t - 1];
  }
  double alpha(int t) const {
    check_step(t);
    return alphas[t - 1];
  }
  double alpha_bar(int t) const {
    if (t == 0) return 1.0;
    check_step(t);
    return alpha_bars[t - 1];
  }
  double sigma(int t) const {
    return sigma_mode == SigmaMode::standard ? std::sqrt(beta(t))
                                             : std::sqrt(1.0 - alpha_bar(t));
  }
};

inline NoiseSchedule build_linear_schedule(int total_steps, double beta_start,
                                           double beta_end,
                                           SigmaMode mode = SigmaMode::standard) {
  if (total_steps < 1)
    throw std::domain_error("schedule: total_steps must be >= 1");
  if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end)
    throw std::domain_error("schedule: need 0 < beta_start <= beta_end < 1");

  NoiseSchedule s;
  s.total_steps = total_steps;
  s.sigma_mode = mode;
  s.betas.resize(total_steps);
  s.alphas.resize(total_steps);
  s.alpha_bars.resize(total_steps);
  double bar = 1.0;
  for (int i = 0; i < total_steps; ++i) {
    double f = total_steps == 1 ? 0.0 : static_cast<double>(i) / (total_steps - 1);
    s.betas[i] = beta_start + f * (beta_end - beta_start);
    s.alphas[i] = 1.0 - s.betas[i];
    bar *= s.alphas[i];
    s.alpha_bars[i] = bar;
  }
  return s;
}

inline Grid normal_like(const Grid& g, Rng& rng) {
  Grid out = like(g);
  for (double& v : out.data) v = rng.normal();
  return out;
}

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
inline Grid forward_diffuse(const Grid& x0, int t, const Grid& eps,
                            const NoiseSchedule& s) {
  require_same_shape(x0, eps, "forward_diffuse");
  s.check_step(t);
  double ab = s.alpha_bar(t);
  double ca = std::sqrt(ab), cb = std::sqrt(1.0 - ab);
  Grid out = like(x0);
  for (size_t i = 0; i < out.size(); ++i)
    out.data[i] = ca * x0.data[i] + cb * eps.data[i];
  return out;
}

struct ForwardSample {
  Grid x_t;
  Grid eps;
};

inline ForwardSample sample_forward(const Grid& x0, int t, Rng& rng,
                                    const NoiseSchedule& s) {
  s.check_step(t);
  Grid eps = normal_like(x0, rng);
  Grid x_t = forward_diffuse(x0, t, eps, s);
  return {std::move(x_t), std::move(eps)};
}

// mu(x_t, t) = (x_t - beta_t / sqrt(1 - abar_t) * eps_hat) / sqrt(alpha_t)
inline Grid posterior_mean(const Grid& x_t, int t, const Grid& eps_hat,
                           const NoiseSchedule& s) {
  require_same_shape(x_t, eps_hat, "posterior_mean");
  s.check_step(t);
  double coef = s.beta(t) / std::sqrt(1.0 - s.alpha_bar(t));
  double inv_sqrt_alpha = 1.0 / std::sqrt(s.alpha(t));
  Grid out = like(x_t);
  for (size_t i = 0; i < out.size(); ++i)
    out.data[i] = inv_sqrt_alpha * (x_t.data[i] - coef * eps_hat.data[i]);
  return out;
}

// Ancestral reverse step. The final step (t == 1) is noiseless and rejects a
// nonzero z.
inline Grid ddpm_step(const Grid& x_t, int t, const Grid& eps_hat, const Grid& z,
                      const NoiseSchedule& s) {
  require_same_shape(x_t, z, "ddpm_step");
  Grid mu = posterior_mean(x_t, t, eps_hat, s);
  if (t == 1) {
    for (double v : z.data)
      if (v != 0.0)
        throw std::invalid_argument("ddpm_step: final step (t=1) requires z = 0");
    return mu;
  }
  double sig = s.sigma(t);
  for (size_t i = 0; i < mu.size(); ++i) mu.data[i] += sig * z.data[i];
  return mu;
}

// x0_hat = (x_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t)
inline Grid predict_x0(const Grid& x_t, int t, const Grid& eps_hat,
                       const NoiseSchedule& s) {
  require_same_shape(x_t, eps_hat, "predict_x0");
  s.check_step(t);
  double ab = s.alpha_bar(t);
  double cb = std::sqrt(1.0 - ab), inv_ca = 1.0 / std::sqrt(ab);
  Grid out = like(x_t);
  for (size_t i = 0; i < out.size(); ++i)
    out.data[i] = inv_ca * (x_t.data[i] - cb * eps_hat.data[i]);
  return out;
}

// Accelerated reverse step t -> t_prev (t_prev may skip levels; 0 means
// clean). With eta == 0 the update is deterministic and never touches z.
inline Grid ddim_step(const Grid& x_t, int t, int t_prev, const Grid& eps_hat,
                      const NoiseSchedule& s, double eta, const Grid* z = nullptr) {
  s.check_step(t);
  if (t_prev < 0 || t_prev >= t)
    throw std::domain_error("ddim_step: need 0 <= t_prev < t");
  if (eta < 0.0 || eta > 1.0)
    throw std::domain_error("ddim_step: eta must lie in [0, 1]");
  require_same_shape(x_t, eps_hat, "ddim_step");

  double ab_t = s.alpha_bar(t);
  double ab_p = s.alpha_bar(t_prev);
  double sigma = 0.0;
  if (eta > 0.0)
    sigma = eta * std::sqrt((1.0 - ab_p) / (1.0 - ab_t)) *
            std::sqrt(1.0 - ab_t / ab_p);
  double dir = std::sqrt(std::max(0.0, 1.0 - ab_p - sigma * sigma));

  Grid x0 = predict_x0(x_t, t, eps_hat, s);
  double ca = std::sqrt(ab_p);
  Grid out = like(x_t);
  for (size_t i = 0; i < out.size(); ++i)
    out.data[i] = ca * x0.data[i] + dir * eps_hat.data[i];
  if (sigma > 0.0) {
    if (z == nullptr)
      throw std::invalid_argument("ddim_step: stochastic step requires z");
    require_same_shape(x_t, *z, "ddim_step z");
    for (size_t i = 0; i < out.size(); ++i) out.data[i] += sigma * z->data[i];
  }
  return out;
}

inline double eps_mse_loss(const Grid& eps, const Grid& eps_hat) {
  require_same_shape(eps, eps_hat, "eps_mse_loss");
  double acc = 0.0;
  for (size_t i = 0; i < eps.size(); ++i) {
    double d = eps.data[i] - eps_hat.data[i];
    acc += d * d;
  }
  return acc / static_cast<double>(eps.size());
}

// Evenly spaced, strictly decreasing step ladder from total_steps to 0 with
// n_steps transitions.
inline std::vector<int> make_substep_ladder(int total_steps, int n_steps) {
  if (n_steps < 1 || n_steps > total_steps)
    throw std::domain_error("make_substep_ladder: need 1 <= n_steps <= total_steps");
  std::vector<int> ladder(n_steps + 1);
  for (int i = 0; i <= n_steps; ++i)
    ladder[i] = static_cast<int>(
        std::llround(static_cast<double>(total_steps) * (n_steps - i) / n_steps));
  return ladder;
}

}  // namespace cdsynth
