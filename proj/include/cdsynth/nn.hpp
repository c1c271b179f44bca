#pragma once

// Minimal trainable-function toolkit: a named parameter store with AdamW,
// 2-D convolution with hand-derived gradients, the SiLU nonlinearity,
// channel concatenation, sinusoidal step embeddings, and the two losses the
// models here need (epsilon MSE and per-pixel softmax cross-entropy).
// Deliberately not a general autograd: the layer set is small enough to
// gradient-check exhaustively.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cdsynth/errors.hpp"
#include "cdsynth/grid.hpp"
#include "cdsynth/mask.hpp"
#include "cdsynth/rng.hpp"

namespace cdsynth {

struct Tensor {
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;
  std::vector<double> m;  // Adam first moment
  std::vector<double> v;  // Adam second moment

  size_t count() const {
    size_t n = 1;
    for (int d : shape) n *= static_cast<size_t>(d);
    return n;
  }
};

struct OptimizerConfig {
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    if (!(learning_rate > 0.0))
      throw std::domain_error("optimizer: learning_rate must be positive");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
      throw std::domain_error("optimizer: betas must lie in [0, 1)");
    if (weight_decay < 0.0)
      throw std::domain_error("optimizer: weight_decay must be >= 0");
  }
};

class ParamStore {
 public:
  Tensor& create(const std::string& name, std::vector<int> shape) {
    if (params_.count(name))
      throw std::invalid_argument("ParamStore: duplicate parameter " + name);
    Tensor t;
    t.shape = std::move(shape);
    size_t n = t.count();
    t.value.assign(n, 0.0);
    t.grad.assign(n, 0.0);
    t.m.assign(n, 0.0);
    t.v.assign(n, 0.0);
    return params_.emplace(name, std::move(t)).first->second;
  }

  Tensor& get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end())
      throw std::invalid_argument("ParamStore: unknown parameter " + name);
    return it->second;
  }
  const Tensor& get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end())
      throw std::invalid_argument("ParamStore: unknown parameter " + name);
    return it->second;
  }

  bool has(const std::string& name) const { return params_.count(name) != 0; }

  std::map<std::string, Tensor>& entries() { return params_; }
  const std::map<std::string, Tensor>& entries() const { return params_; }

  void zero_grads() {
    for (auto& [name, t] : params_) std::fill(t.grad.begin(), t.grad.end(), 0.0);
    grads_ready_ = false;
  }

  void mark_grads_ready() { grads_ready_ = true; }
  bool grads_ready() const { return grads_ready_; }
  long step() const { return step_; }

  friend void adamw_update(ParamStore& store, const OptimizerConfig& cfg);

 private:
  std::map<std::string, Tensor> params_;  // ordered: deterministic iteration
  long step_ = 0;
  bool grads_ready_ = false;
};

// Bias-corrected Adam with decoupled weight decay. Gradients are consumed:
// calling again without a fresh backward pass is an error.
inline void adamw_update(ParamStore& store, const OptimizerConfig& cfg) {
  cfg.validate();
  if (!store.grads_ready())
    throw std::logic_error("adamw_update: gradients are stale; run a backward pass first");
  store.step_ += 1;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(store.step_));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(store.step_));
  for (auto& [name, p] : store.params_) {
    for (size_t i = 0; i < p.value.size(); ++i) {
      double g = p.grad[i];
      p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * g;
      p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * g * g;
      double mhat = p.m[i] / bc1;
      double vhat = p.v[i] / bc2;
      p.value[i] -= cfg.learning_rate * cfg.weight_decay * p.value[i];
      p.value[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
    }
    std::fill(p.grad.begin(), p.grad.end(), 0.0);
  }
  store.grads_ready_ = false;
}

// ---------------------------------------------------------------------------
// Layers. Training-time activations are owned by the caller, so inference on
// a frozen store is safe from multiple threads.

struct ConvSpec {
  std::string weight;  // [out][in][k][k]
  std::string bias;    // [out]
  int in_channels = 0;
  int out_channels = 0;
  int ksize = 0;
};

// init == nullptr leaves the parameters at zero (used for output layers);
// otherwise uniform in +-sqrt(1/fan_in).
inline ConvSpec make_conv(ParamStore& ps, const std::string& name, int in_channels,
                          int out_channels, int ksize, Rng* init) {
  if (ksize < 1 || ksize % 2 == 0)
    throw std::invalid_argument("make_conv: kernel must be odd-sized");
  ConvSpec c{name + ".weight", name + ".bias", in_channels, out_channels, ksize};
  Tensor& w = ps.create(c.weight, {out_channels, in_channels, ksize, ksize});
  ps.create(c.bias, {out_channels});
  if (init != nullptr) {
    double bound = std::sqrt(1.0 / (in_channels * ksize * ksize));
    for (double& v : w.value) v = (2.0 * init->uniform() - 1.0) * bound;
  }
  return c;
}

// Same-size cross-correlation with zero padding.
inline Grid conv2d_forward(const ConvSpec& c, const ParamStore& ps, const Grid& in) {
  if (in.channels != c.in_channels)
    throw std::invalid_argument("conv2d: input channel mismatch");
  const Tensor& w = ps.get(c.weight);
  const Tensor& b = ps.get(c.bias);
  int k = c.ksize, pad = k / 2;
  Grid out(c.out_channels, in.height, in.width);
  for (int o = 0; o < c.out_channels; ++o) {
    for (int y = 0; y < in.height; ++y) {
      for (int x = 0; x < in.width; ++x) {
        double acc = b.value[o];
        for (int i = 0; i < c.in_channels; ++i) {
          for (int dy = 0; dy < k; ++dy) {
            int sy = y + dy - pad;
            if (sy < 0 || sy >= in.height) continue;
            for (int dx = 0; dx < k; ++dx) {
              int sx = x + dx - pad;
              if (sx < 0 || sx >= in.width) continue;
              acc += w.value[((static_cast<size_t>(o) * c.in_channels + i) * k + dy) * k + dx] *
                     in.at(i, sy, sx);
            }
          }
        }
        out.at(o, y, x) = acc;
      }
    }
  }
  return out;
}

// Accumulates weight/bias gradients and returns the gradient w.r.t. the input.
inline Grid conv2d_backward(const ConvSpec& c, ParamStore& ps, const Grid& in,
                            const Grid& d_out) {
  if (in.channels != c.in_channels || d_out.channels != c.out_channels)
    throw std::invalid_argument("conv2d_backward: channel mismatch");
  Tensor& w = ps.get(c.weight);
  Tensor& b = ps.get(c.bias);
  int k = c.ksize, pad = k / 2;
  Grid d_in(in.channels, in.height, in.width, 0.0);
  for (int o = 0; o < c.out_channels; ++o) {
    for (int y = 0; y < in.height; ++y) {
      for (int x = 0; x < in.width; ++x) {
        double g = d_out.at(o, y, x);
        b.grad[o] += g;
        for (int i = 0; i < c.in_channels; ++i) {
          for (int dy = 0; dy < k; ++dy) {
            int sy = y + dy - pad;
            if (sy < 0 || sy >= in.height) continue;
            for (int dx = 0; dx < k; ++dx) {
              int sx = x + dx - pad;
              if (sx < 0 || sx >= in.width) continue;
              size_t wi = ((static_cast<size_t>(o) * c.in_channels + i) * k + dy) * k + dx;
              w.grad[wi] += g * in.at(i, sy, sx);
              d_in.at(i, sy, sx) += g * w.value[wi];
            }
          }
        }
      }
    }
  }
  return d_in;
}

inline double silu(double x) {
  double s = 1.0 / (1.0 + std::exp(-x));
  return x * s;
}
inline double silu_grad(double x) {
  double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}

inline Grid silu_forward(const Grid& in) {
  Grid out = like(in);
  for (size_t i = 0; i < in.size(); ++i) out.data[i] = silu(in.data[i]);
  return out;
}

inline Grid silu_backward(const Grid& in, const Grid& d_out) {
  require_same_shape(in, d_out, "silu_backward");
  Grid d_in = like(in);
  for (size_t i = 0; i < in.size(); ++i)
    d_in.data[i] = d_out.data[i] * silu_grad(in.data[i]);
  return d_in;
}

struct LinearSpec {
  std::string weight;  // [out][in]
  std::string bias;    // [out]
  int in_dim = 0;
  int out_dim = 0;
};

inline LinearSpec make_linear(ParamStore& ps, const std::string& name, int in_dim,
                              int out_dim, Rng* init) {
  LinearSpec l{name + ".weight", name + ".bias", in_dim, out_dim};
  Tensor& w = ps.create(l.weight, {out_dim, in_dim});
  ps.create(l.bias, {out_dim});
  if (init != nullptr) {
    double bound = std::sqrt(1.0 / in_dim);
    for (double& v : w.value) v = (2.0 * init->uniform() - 1.0) * bound;
  }
  return l;
}

inline std::vector<double> linear_forward(const LinearSpec& l, const ParamStore& ps,
                                          const std::vector<double>& x) {
  if (static_cast<int>(x.size()) != l.in_dim)
    throw std::invalid_argument("linear_forward: input size mismatch");
  const Tensor& w = ps.get(l.weight);
  const Tensor& b = ps.get(l.bias);
  std::vector<double> out(l.out_dim);
  for (int o = 0; o < l.out_dim; ++o) {
    double acc = b.value[o];
    for (int i = 0; i < l.in_dim; ++i)
      acc += w.value[static_cast<size_t>(o) * l.in_dim + i] * x[i];
    out[o] = acc;
  }
  return out;
}

inline void linear_backward(const LinearSpec& l, ParamStore& ps,
                            const std::vector<double>& x,
                            const std::vector<double>& d_out) {
  Tensor& w = ps.get(l.weight);
  Tensor& b = ps.get(l.bias);
  for (int o = 0; o < l.out_dim; ++o) {
    b.grad[o] += d_out[o];
    for (int i = 0; i < l.in_dim; ++i)
      w.grad[static_cast<size_t>(o) * l.in_dim + i] += d_out[o] * x[i];
  }
}

// Broadcast a per-channel bias over the spatial grid (time conditioning).
inline Grid add_channel_bias(const Grid& in, const std::vector<double>& bias) {
  if (static_cast<int>(bias.size()) != in.channels)
    throw std::invalid_argument("add_channel_bias: channel count mismatch");
  Grid out = in;
  for (int c = 0; c < in.channels; ++c)
    for (int y = 0; y < in.height; ++y)
      for (int x = 0; x < in.width; ++x) out.at(c, y, x) += bias[c];
  return out;
}

// Gradient of the broadcast bias: per-channel sum (d_in passes through).
inline std::vector<double> channel_bias_backward(const Grid& d_out) {
  std::vector<double> d(d_out.channels, 0.0);
  for (int c = 0; c < d_out.channels; ++c)
    for (int y = 0; y < d_out.height; ++y)
      for (int x = 0; x < d_out.width; ++x) d[c] += d_out.at(c, y, x);
  return d;
}

inline Grid concat_channels(const Grid& a, const Grid& b) {
  if (a.height != b.height || a.width != b.width)
    throw std::invalid_argument("concat_channels: spatial shape mismatch");
  Grid out(a.channels + b.channels, a.height, a.width);
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + a.data.size());
  return out;
}

inline std::pair<Grid, Grid> split_channels(const Grid& g, int first_channels) {
  if (first_channels <= 0 || first_channels >= g.channels)
    throw std::invalid_argument("split_channels: bad split point");
  Grid a(first_channels, g.height, g.width);
  Grid b(g.channels - first_channels, g.height, g.width);
  std::copy(g.data.begin(), g.data.begin() + a.data.size(), a.data.begin());
  std::copy(g.data.begin() + a.data.size(), g.data.end(), b.data.begin());
  return {std::move(a), std::move(b)};
}

// d/d pred of mean((pred - target)^2)
inline Grid mse_loss_grad(const Grid& target, const Grid& pred) {
  require_same_shape(target, pred, "mse_loss_grad");
  Grid g = like(pred);
  double inv_n = 1.0 / static_cast<double>(pred.size());
  for (size_t i = 0; i < pred.size(); ++i)
    g.data[i] = 2.0 * (pred.data[i] - target.data[i]) * inv_n;
  return g;
}

struct XentResult {
  double loss = 0.0;
  Grid d_logits;
};

// Per-pixel softmax cross-entropy, mean over pixels. Logits are [K, H, W];
// labels index the channel dimension.
inline XentResult softmax_xent_per_pixel(const Grid& logits,
                                         const std::vector<uint8_t>& labels) {
  size_t npix = static_cast<size_t>(logits.height) * logits.width;
  if (labels.size() != npix)
    throw std::invalid_argument("softmax_xent: label raster size mismatch");
  XentResult r;
  r.d_logits = like(logits);
  double inv_n = 1.0 / static_cast<double>(npix);
  std::vector<double> p(logits.channels);
  for (int y = 0; y < logits.height; ++y) {
    for (int x = 0; x < logits.width; ++x) {
      int label = labels[static_cast<size_t>(y) * logits.width + x];
      if (label >= logits.channels)
        throw std::invalid_argument("softmax_xent: label out of range");
      double mx = logits.at(0, y, x);
      for (int k = 1; k < logits.channels; ++k) mx = std::max(mx, logits.at(k, y, x));
      double z = 0.0;
      for (int k = 0; k < logits.channels; ++k) {
        p[k] = std::exp(logits.at(k, y, x) - mx);
        z += p[k];
      }
      for (int k = 0; k < logits.channels; ++k) p[k] /= z;
      r.loss -= std::log(std::max(p[label], 1e-300)) * inv_n;
      for (int k = 0; k < logits.channels; ++k)
        r.d_logits.at(k, y, x) = (p[k] - (k == label ? 1.0 : 0.0)) * inv_n;
    }
  }
  return r;
}

// Interleaved sin/cos features of geometrically spaced frequencies.
inline std::vector<double> sinusoidal_time_embedding(int t, int dim) {
  if (dim < 2 || dim % 2 != 0)
    throw std::domain_error("sinusoidal_time_embedding: dim must be even and >= 2");
  std::vector<double> e(dim);
  int half = dim / 2;
  for (int k = 0; k < half; ++k) {
    double freq = std::pow(10000.0, -2.0 * k / dim);
    e[2 * k] = std::sin(t * freq);
    e[2 * k + 1] = std::cos(t * freq);
  }
  return e;
}

// ---------------------------------------------------------------------------
// Checkpoints. Little-endian binary: magic "CDSNNP01", u32 version (1),
// u32 count, then per parameter: u32 name length, name bytes, u32 rank,
// u32 dims[rank], f64 values.

namespace detail {
inline void write_u32_le(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}
inline uint32_t read_u32_le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}
inline void write_f64_le(std::ostream& os, double d) {
  uint64_t v = std::bit_cast<uint64_t>(d);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}
inline double read_f64_le(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(v);
}
}  // namespace detail

inline constexpr char kCheckpointMagic[9] = "CDSNNP01";

inline void save_checkpoint(const ParamStore& store, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("checkpoint: cannot open for writing: " + path);
  os.write(kCheckpointMagic, 8);
  detail::write_u32_le(os, 1);
  detail::write_u32_le(os, static_cast<uint32_t>(store.entries().size()));
  for (const auto& [name, t] : store.entries()) {
    detail::write_u32_le(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_u32_le(os, static_cast<uint32_t>(t.shape.size()));
    for (int d : t.shape) detail::write_u32_le(os, static_cast<uint32_t>(d));
    for (double v : t.value) detail::write_f64_le(os, v);
  }
  if (!os) throw IoError("checkpoint: write failed: " + path);
}

// Loads into an existing store; parameter names and shapes must match the
// store exactly (anything else is an architecture mismatch).
inline void load_checkpoint(ParamStore& store, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw IoError("checkpoint: bad magic: " + path);
  uint32_t version = detail::read_u32_le(is);
  if (version != 1) throw IoError("checkpoint: unsupported version");
  uint32_t count = detail::read_u32_le(is);
  if (count != store.entries().size())
    throw std::invalid_argument("checkpoint: parameter count does not match model");
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t name_len = detail::read_u32_le(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    uint32_t rank = detail::read_u32_le(is);
    std::vector<int> shape(rank);
    for (uint32_t d = 0; d < rank; ++d)
      shape[d] = static_cast<int>(detail::read_u32_le(is));
    if (!store.has(name))
      throw std::invalid_argument("checkpoint: unexpected parameter " + name);
    Tensor& t = store.get(name);
    if (t.shape != shape)
      throw std::invalid_argument("checkpoint: shape mismatch for " + name);
    for (double& v : t.value) v = detail::read_f64_le(is);
    if (!is) throw IoError("checkpoint: truncated file: " + path);
  }
}

}  // namespace cdsynth
