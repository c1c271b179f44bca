#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <vector>

#include "cdsynth/diffusion.hpp"
#include "cdsynth/nn.hpp"
#include "test_support.hpp"

using namespace cdsynth;
using test_support::max_gradient_relative_error;

namespace {

Grid random_grid(int c, int h, int w, Rng& rng, double scale = 1.0) {
  Grid g(c, h, w);
  for (double& v : g.data) v = scale * rng.normal();
  return g;
}

// independent quadruple-loop convolution reference
Grid naive_conv(const Grid& in, const std::vector<double>& w,
                const std::vector<double>& b, int out_ch, int k) {
  int pad = k / 2;
  Grid out(out_ch, in.height, in.width, 0.0);
  for (int o = 0; o < out_ch; ++o)
    for (int y = 0; y < in.height; ++y)
      for (int x = 0; x < in.width; ++x) {
        double acc = b[o];
        for (int i = 0; i < in.channels; ++i)
          for (int dy = 0; dy < k; ++dy)
            for (int dx = 0; dx < k; ++dx) {
              int sy = y + dy - pad, sx = x + dx - pad;
              if (sy < 0 || sy >= in.height || sx < 0 || sx >= in.width) continue;
              acc += w[((static_cast<size_t>(o) * in.channels + i) * k + dy) * k + dx] *
                     in.at(i, sy, sx);
            }
        out.at(o, y, x) = acc;
      }
  return out;
}

}  // namespace

TEST_CASE("conv2d: 1x1 identity kernel passes the input through") {
  ParamStore ps;
  ConvSpec c = make_conv(ps, "conv", 1, 1, 1, nullptr);
  ps.get(c.weight).value[0] = 1.0;
  Rng rng(1);
  Grid in = random_grid(1, 4, 5, rng);
  Grid out = conv2d_forward(c, ps, in);
  for (size_t i = 0; i < in.size(); ++i) CHECK(out.data[i] == in.data[i]);
}

TEST_CASE("conv2d: all-ones 3x3 kernel sums the neighborhood") {
  ParamStore ps;
  ConvSpec c = make_conv(ps, "conv", 1, 1, 3, nullptr);
  for (double& v : ps.get(c.weight).value) v = 1.0;
  Grid in(1, 5, 5, 1.0);
  Grid out = conv2d_forward(c, ps, in);
  CHECK(out.at(0, 2, 2) == Catch::Approx(9.0));  // interior
  CHECK(out.at(0, 0, 0) == Catch::Approx(4.0));  // corner sees 2x2
}

TEST_CASE("conv2d: random case matches a naive quadruple-loop reference") {
  Rng rng(2);
  ParamStore ps;
  ConvSpec c = make_conv(ps, "conv", 3, 4, 3, &rng);
  Tensor& b = ps.get(c.bias);
  for (double& v : b.value) v = rng.normal();
  Grid in = random_grid(3, 6, 7, rng);
  Grid out = conv2d_forward(c, ps, in);
  Grid ref = naive_conv(in, ps.get(c.weight).value, b.value, 4, 3);
  for (size_t i = 0; i < out.size(); ++i)
    CHECK(out.data[i] == Catch::Approx(ref.data[i]).margin(1e-6));
}

TEST_CASE("conv2d: channel mismatch and even kernel rejected") {
  ParamStore ps;
  ConvSpec c = make_conv(ps, "conv", 2, 1, 3, nullptr);
  Grid wrong(3, 4, 4);
  CHECK_THROWS_AS(conv2d_forward(c, ps, wrong), std::invalid_argument);
  CHECK_THROWS_AS(make_conv(ps, "conv2", 1, 1, 2, nullptr), std::invalid_argument);
}

TEST_CASE("gradients: conv layer against central finite differences") {
  Rng rng(3);
  ParamStore ps;
  ConvSpec c = make_conv(ps, "conv", 2, 3, 3, &rng);
  Grid in = random_grid(2, 4, 4, rng);
  Grid target = random_grid(3, 4, 4, rng);

  auto loss = [&]() {
    Grid out = conv2d_forward(c, ps, in);
    double l = eps_mse_loss(target, out);
    conv2d_backward(c, ps, in, mse_loss_grad(target, out));
    ps.mark_grads_ready();
    return l;
  };
  CHECK(max_gradient_relative_error(ps, loss) < 1e-4);
}

TEST_CASE("gradients: conv input gradient against finite differences") {
  Rng rng(4);
  ParamStore ps;
  ConvSpec c = make_conv(ps, "conv", 2, 2, 3, &rng);
  Grid in = random_grid(2, 4, 4, rng);
  Grid target = random_grid(2, 4, 4, rng);

  Grid out = conv2d_forward(c, ps, in);
  Grid d_in = conv2d_backward(c, ps, in, mse_loss_grad(target, out));

  const double h = 1e-4;
  for (size_t i = 0; i < in.size(); ++i) {
    double saved = in.data[i];
    in.data[i] = saved + h;
    double up = eps_mse_loss(target, conv2d_forward(c, ps, in));
    in.data[i] = saved - h;
    double down = eps_mse_loss(target, conv2d_forward(c, ps, in));
    in.data[i] = saved;
    double numeric = (up - down) / (2.0 * h);
    CHECK(d_in.data[i] == Catch::Approx(numeric).margin(1e-6));
  }
}

TEST_CASE("gradients: silu, linear and channel bias layers") {
  Rng rng(5);

  SECTION("silu") {
    ParamStore ps;
    ConvSpec c = make_conv(ps, "conv", 2, 2, 1, &rng);
    Grid in = random_grid(2, 3, 3, rng);
    Grid target = random_grid(2, 3, 3, rng);
    auto loss = [&]() {
      Grid pre = conv2d_forward(c, ps, in);
      Grid act = silu_forward(pre);
      double l = eps_mse_loss(target, act);
      Grid d_act = mse_loss_grad(target, act);
      conv2d_backward(c, ps, in, silu_backward(pre, d_act));
      ps.mark_grads_ready();
      return l;
    };
    CHECK(max_gradient_relative_error(ps, loss) < 1e-4);
  }

  SECTION("linear projection through a channel bias") {
    ParamStore ps;
    LinearSpec l = make_linear(ps, "proj", 6, 3, &rng);
    std::vector<double> emb = sinusoidal_time_embedding(17, 6);
    Grid in = random_grid(3, 3, 3, rng);
    Grid target = random_grid(3, 3, 3, rng);
    auto loss = [&]() {
      Grid out = add_channel_bias(in, linear_forward(l, ps, emb));
      double lv = eps_mse_loss(target, out);
      linear_backward(l, ps, emb, channel_bias_backward(mse_loss_grad(target, out)));
      ps.mark_grads_ready();
      return lv;
    };
    CHECK(max_gradient_relative_error(ps, loss) < 1e-4);
  }
}

TEST_CASE("gradients: softmax cross-entropy layer") {
  Rng rng(6);
  ParamStore ps;
  ConvSpec c = make_conv(ps, "conv", 2, 3, 3, &rng);
  Grid in = random_grid(2, 4, 4, rng);
  std::vector<uint8_t> labels(16);
  for (auto& v : labels) v = static_cast<uint8_t>(rng.uniform_int(3));

  auto loss = [&]() {
    Grid logits = conv2d_forward(c, ps, in);
    XentResult xr = softmax_xent_per_pixel(logits, labels);
    conv2d_backward(c, ps, in, xr.d_logits);
    ps.mark_grads_ready();
    return xr.loss;
  };
  CHECK(max_gradient_relative_error(ps, loss) < 1e-4);
}

TEST_CASE("gradients: 3-layer composed network, zero-loss region, linearity") {
  Rng rng(7);
  ParamStore ps;
  ConvSpec c1 = make_conv(ps, "c1", 2, 4, 3, &rng);
  ConvSpec c2 = make_conv(ps, "c2", 4, 4, 3, &rng);
  ConvSpec c3 = make_conv(ps, "c3", 4, 2, 3, &rng);
  Grid in = random_grid(2, 4, 4, rng);
  Grid target = random_grid(2, 4, 4, rng);

  struct Acts {
    Grid pre1, act1, pre2, act2, out;
  };
  auto forward = [&](Acts& a) {
    a.pre1 = conv2d_forward(c1, ps, in);
    a.act1 = silu_forward(a.pre1);
    a.pre2 = conv2d_forward(c2, ps, a.act1);
    a.act2 = silu_forward(a.pre2);
    a.out = conv2d_forward(c3, ps, a.act2);
  };
  auto backward = [&](const Acts& a, const Grid& d_out) {
    Grid d_act2 = conv2d_backward(c3, ps, a.act2, d_out);
    Grid d_pre2 = silu_backward(a.pre2, d_act2);
    Grid d_act1 = conv2d_backward(c2, ps, a.act1, d_pre2);
    Grid d_pre1 = silu_backward(a.pre1, d_act1);
    conv2d_backward(c1, ps, in, d_pre1);
    ps.mark_grads_ready();
  };

  auto loss = [&]() {
    Acts a;
    forward(a);
    double l = eps_mse_loss(target, a.out);
    backward(a, mse_loss_grad(target, a.out));
    return l;
  };
  CHECK(max_gradient_relative_error(ps, loss) < 1e-4);

  // zero-loss region: target == output -> all parameter gradients vanish
  {
    Acts a;
    forward(a);
    ps.zero_grads();
    backward(a, mse_loss_grad(a.out, a.out));
    for (const auto& [name, t] : ps.entries())
      for (double g : t.grad) CHECK(g == 0.0);
  }

  // doubling the loss scale doubles every gradient
  {
    Acts a;
    forward(a);
    ps.zero_grads();
    backward(a, mse_loss_grad(target, a.out));
    std::vector<double> single;
    for (const auto& [name, t] : ps.entries())
      single.insert(single.end(), t.grad.begin(), t.grad.end());

    ps.zero_grads();
    Grid d2 = mse_loss_grad(target, a.out);
    for (double& v : d2.data) v *= 2.0;
    backward(a, d2);
    size_t i = 0;
    for (const auto& [name, t] : ps.entries())
      for (double g : t.grad)
        CHECK(g == Catch::Approx(2.0 * single[i++]).margin(1e-12));
  }
}

TEST_CASE("adamw: zero gradient with zero decay leaves parameters unchanged") {
  ParamStore ps;
  Tensor& t = ps.create("w", {3});
  t.value = {0.5, -0.25, 1.0};
  ps.mark_grads_ready();
  OptimizerConfig cfg;
  cfg.learning_rate = 0.1;
  adamw_update(ps, cfg);
  CHECK(t.value == std::vector<double>{0.5, -0.25, 1.0});
}

TEST_CASE("adamw: hand-evaluated single step moves by ~ -lr") {
  ParamStore ps;
  Tensor& t = ps.create("w", {1});
  t.value = {0.0};
  t.grad = {1.0};
  ps.mark_grads_ready();
  OptimizerConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.beta1 = 0.9;
  cfg.beta2 = 0.999;
  cfg.weight_decay = 0.0;
  adamw_update(ps, cfg);
  // bias-corrected m_hat = v_hat = 1 -> delta = -lr / (1 + eps)
  CHECK(t.value[0] == Catch::Approx(-0.1).margin(1e-6));
}

TEST_CASE("adamw: decoupled decay shrinks parameters with zero gradient") {
  ParamStore ps;
  Tensor& t = ps.create("w", {1});
  t.value = {2.0};
  ps.mark_grads_ready();
  OptimizerConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.weight_decay = 0.5;
  adamw_update(ps, cfg);
  CHECK(t.value[0] == Catch::Approx(2.0 * (1.0 - 0.1 * 0.5)).margin(1e-12));
}

TEST_CASE("adamw: stale gradients rejected, update deterministic") {
  ParamStore ps;
  Tensor& t = ps.create("w", {2});
  t.value = {1.0, -1.0};
  t.grad = {0.3, -0.2};
  ps.mark_grads_ready();
  OptimizerConfig cfg;
  adamw_update(ps, cfg);
  CHECK_THROWS_AS(adamw_update(ps, cfg), std::logic_error);  // grads consumed
  CHECK(ps.step() == 1);

  // determinism: identical stores and configs give identical results
  ParamStore a, b;
  for (ParamStore* s : {&a, &b}) {
    Tensor& w = s->create("w", {2});
    w.value = {1.0, -1.0};
    w.grad = {0.3, -0.2};
    s->mark_grads_ready();
    adamw_update(*s, cfg);
  }
  CHECK(a.get("w").value == b.get("w").value);
  CHECK(a.get("w").m == b.get("w").m);
  CHECK(a.get("w").v == b.get("w").v);
}

TEST_CASE("optimizer config validation") {
  OptimizerConfig cfg;
  cfg.learning_rate = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::domain_error);
  cfg = {};
  cfg.beta1 = 1.0;
  CHECK_THROWS_AS(cfg.validate(), std::domain_error);
  cfg = {};
  cfg.weight_decay = -0.1;
  CHECK_THROWS_AS(cfg.validate(), std::domain_error);
}

TEST_CASE("sinusoidal time embedding") {
  std::vector<double> e0 = sinusoidal_time_embedding(0, 8);
  for (int k = 0; k < 4; ++k) {
    CHECK(e0[2 * k] == 0.0);
    CHECK(e0[2 * k + 1] == 1.0);
  }

  // distinct embeddings for every step in 1..200
  std::vector<std::vector<double>> all;
  for (int t = 1; t <= 200; ++t) all.push_back(sinusoidal_time_embedding(t, 32));
  for (size_t i = 0; i < all.size(); ++i)
    for (size_t j = i + 1; j < all.size(); ++j) REQUIRE(all[i] != all[j]);

  CHECK(sinusoidal_time_embedding(17, 16) == sinusoidal_time_embedding(17, 16));
  CHECK_THROWS_AS(sinusoidal_time_embedding(1, 7), std::domain_error);
}

TEST_CASE("checkpoint: byte-stable save and exact round trip") {
  test_support::TempDir dir("ckpt");
  Rng rng(8);
  ParamStore ps;
  make_conv(ps, "conv1", 2, 3, 3, &rng);
  make_linear(ps, "proj", 4, 3, &rng);

  std::string p1 = dir.file("a.ckpt"), p2 = dir.file("b.ckpt");
  save_checkpoint(ps, p1);
  save_checkpoint(ps, p2);
  CHECK(test_support::files_identical(p1, p2));

  ParamStore restored;
  make_conv(restored, "conv1", 2, 3, 3, nullptr);
  make_linear(restored, "proj", 4, 3, nullptr);
  load_checkpoint(restored, p1);
  for (const auto& [name, t] : ps.entries())
    CHECK(restored.get(name).value == t.value);
}

TEST_CASE("checkpoint: architecture mismatch rejected") {
  test_support::TempDir dir("ckpt-mismatch");
  Rng rng(9);
  ParamStore ps;
  make_conv(ps, "conv1", 2, 3, 3, &rng);
  std::string path = dir.file("m.ckpt");
  save_checkpoint(ps, path);

  ParamStore wrong_shape;
  make_conv(wrong_shape, "conv1", 2, 4, 3, nullptr);
  CHECK_THROWS_AS(load_checkpoint(wrong_shape, path), std::invalid_argument);

  ParamStore wrong_name;
  make_conv(wrong_name, "convX", 2, 3, 3, nullptr);
  CHECK_THROWS_AS(load_checkpoint(wrong_name, path), std::invalid_argument);

  ParamStore extra;
  make_conv(extra, "conv1", 2, 3, 3, nullptr);
  make_linear(extra, "proj", 4, 3, nullptr);
  CHECK_THROWS_AS(load_checkpoint(extra, path), std::invalid_argument);

  CHECK_THROWS_AS(load_checkpoint(ps, dir.file("missing.ckpt")), IoError);
}

TEST_CASE("concat and split are inverse") {
  Rng rng(10);
  Grid a = random_grid(2, 3, 3, rng);
  Grid b = random_grid(3, 3, 3, rng);
  Grid cat = concat_channels(a, b);
  auto [a2, b2] = split_channels(cat, 2);
  CHECK(a2.data == a.data);
  CHECK(b2.data == b.data);
  Grid bad(2, 4, 3);
  CHECK_THROWS_AS(concat_channels(a, bad), std::invalid_argument);
}
