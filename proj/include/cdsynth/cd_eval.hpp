#pragma once

// Change-detection evaluation: confusion tallies and metrics over the change
// class, a minimal early-fusion CD network, the zero-shot / few-shot transfer
// protocol, and the procedural "real" toy benchmark it is scored against.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "cdsynth/denoiser.hpp"
#include "cdsynth/grid.hpp"
#include "cdsynth/mask.hpp"
#include "cdsynth/nn.hpp"
#include "cdsynth/pair_gen.hpp"
#include "cdsynth/rng.hpp"

namespace cdsynth {

struct ConfusionCounts {
  uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
  uint64_t total() const { return tp + fp + fn + tn; }
};

inline void accumulate_confusion(const ChangeMask& pred, const ChangeMask& gt,
                                 ConfusionCounts& counts) {
  if (pred.width != gt.width || pred.height != gt.height)
    throw std::invalid_argument("accumulate_confusion: dimension mismatch");
  for (size_t i = 0; i < pred.values.size(); ++i) {
    bool p = pred.values[i] != 0, g = gt.values[i] != 0;
    if (p && g)
      ++counts.tp;
    else if (p && !g)
      ++counts.fp;
    else if (!p && g)
      ++counts.fn;
    else
      ++counts.tn;
  }
}

// Metrics over the change class; a zero denominator leaves the metric unset
// rather than throwing (mirrors "-" table entries for degenerate predictors).
struct MetricsReport {
  std::optional<double> f1, precision, recall, iou;
  ConfusionCounts counts;
};

inline MetricsReport compute_metrics(const ConfusionCounts& c) {
  MetricsReport r;
  r.counts = c;
  if (c.tp + c.fp > 0) r.precision = static_cast<double>(c.tp) / (c.tp + c.fp);
  if (c.tp + c.fn > 0) r.recall = static_cast<double>(c.tp) / (c.tp + c.fn);
  if (r.precision && r.recall && (*r.precision + *r.recall) > 0.0)
    r.f1 = 2.0 * *r.precision * *r.recall / (*r.precision + *r.recall);
  if (c.tp + c.fp + c.fn > 0)
    r.iou = static_cast<double>(c.tp) / (c.tp + c.fp + c.fn);
  return r;
}

struct CDModelConfig {
  int image_channels = 3;
  int base_channels = 16;
};

// FC-EF style reduction: channel-concat the two epochs, three 3x3 convs,
// per-pixel 2-class logits.
class CDModel {
 public:
  CDModel(const CDModelConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
    Rng init(init_seed);
    conv1_ = make_conv(params_, "conv1", 2 * cfg.image_channels, cfg.base_channels, 3, &init);
    conv2_ = make_conv(params_, "conv2", cfg.base_channels, cfg.base_channels, 3, &init);
    conv3_ = make_conv(params_, "conv3", cfg.base_channels, 2, 3, &init);
  }

  const CDModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  struct Activations {
    Grid input, pre1, act1, pre2, act2;
  };

  Grid forward(const Grid& x1, const Grid& x2, Activations* acts = nullptr) const {
    require_same_shape(x1, x2, "CDModel::forward");
    Grid input = concat_channels(x1, x2);
    Grid pre1 = conv2d_forward(conv1_, params_, input);
    Grid act1 = silu_forward(pre1);
    Grid pre2 = conv2d_forward(conv2_, params_, act1);
    Grid act2 = silu_forward(pre2);
    Grid logits = conv2d_forward(conv3_, params_, act2);
    if (acts != nullptr) {
      acts->input = std::move(input);
      acts->pre1 = std::move(pre1);
      acts->act1 = std::move(act1);
      acts->pre2 = std::move(pre2);
      acts->act2 = std::move(act2);
    }
    return logits;
  }

  void backward(const Activations& acts, const Grid& d_logits) {
    Grid d_act2 = conv2d_backward(conv3_, params_, acts.act2, d_logits);
    Grid d_pre2 = silu_backward(acts.pre2, d_act2);
    Grid d_act1 = conv2d_backward(conv2_, params_, acts.act1, d_pre2);
    Grid d_pre1 = silu_backward(acts.pre1, d_act1);
    conv2d_backward(conv1_, params_, acts.input, d_pre1);
    params_.mark_grads_ready();
  }

  // argmax decision; ties resolve to non-change
  ChangeMask predict(const Grid& x1, const Grid& x2) const {
    Grid logits = forward(x1, x2, nullptr);
    ChangeMask m(logits.width, logits.height);
    for (int y = 0; y < logits.height; ++y)
      for (int x = 0; x < logits.width; ++x)
        m.at(x, y) = logits.at(1, y, x) > logits.at(0, y, x) ? 1 : 0;
    return m;
  }

 private:
  CDModelConfig cfg_;
  ParamStore params_;
  ConvSpec conv1_, conv2_, conv3_;
};

// Per-pixel softmax cross-entropy on change/non-change, one pair per step.
inline std::vector<TrainLogEntry> train_cd_model(CDModel& model,
                                                 std::span<const SamplePair> pairs,
                                                 const OptimizerConfig& opt, int steps,
                                                 Rng& rng) {
  if (pairs.empty()) throw std::invalid_argument("train_cd_model: empty pair stream");
  opt.validate();
  std::vector<TrainLogEntry> log;
  log.reserve(steps);
  for (int step = 0; step < steps; ++step) {
    const SamplePair& p = pairs[rng.uniform_int(static_cast<int>(pairs.size()))];
    CDModel::Activations acts;
    Grid logits = model.forward(p.x1, p.x2, &acts);
    XentResult xr = softmax_xent_per_pixel(logits, p.change.values);
    model.backward(acts, xr.d_logits);
    adamw_update(model.params(), opt);
    log.push_back({step, xr.loss});
  }
  return log;
}

inline ConfusionCounts evaluate_cd_model(const CDModel& model,
                                         std::span<const SamplePair> pairs) {
  ConfusionCounts counts;
  for (const SamplePair& p : pairs)
    accumulate_confusion(model.predict(p.x1, p.x2), p.change, counts);
  return counts;
}

struct ProceduralBenchParams {
  int mask_size = 64;
  MaskGenParams mask_params;
  EventParams event_params;
  int mask_retries = 8;
  double nonchange_jitter = 0.03;   // per-pixel sigma added to non-change t2
  double brightness_sigma = 0.05;   // global per-channel shift between epochs
};

// Diffusion-free bi-temporal pairs: t2 redraws the change region from the
// scene model and perturbs the rest (global shift + jitter), standing in for
// acquisition and phenology differences.
inline SamplePair generate_procedural_pair(const ToySceneSpec& scene,
                                           const ProceduralBenchParams& params,
                                           uint64_t base_seed, int index) {
  uint64_t seed = derive_seed(base_seed, static_cast<uint64_t>(index));
  Rng rng(seed);
  EventKind kind = index % 2 == 0 ? EventKind::appearance : EventKind::disappearance;
  MaskedEvent me = draw_masked_event(rng, kind, params.mask_size, scene.num_classes(),
                                     params.mask_params, params.event_params,
                                     params.mask_retries, index, nullptr);
  SamplePair pair;
  pair.x1 = make_toy_scene(scene, me.y1, rng);
  Grid x2_fresh = make_toy_scene(scene, me.y2, rng);
  Grid x2 = pair.x1;
  std::vector<double> shift(x2.channels);
  for (double& s : shift) s = params.brightness_sigma * rng.normal();
  for (int y = 0; y < x2.height; ++y)
    for (int x = 0; x < x2.width; ++x)
      for (int c = 0; c < x2.channels; ++c) {
        if (me.change.at(x, y))
          x2.at(c, y, x) = x2_fresh.at(c, y, x);
        else
          x2.at(c, y, x) += shift[c] + params.nonchange_jitter * rng.normal();
      }
  pair.x2 = std::move(x2);
  pair.y1 = std::move(me.y1);
  pair.y2 = std::move(me.y2);
  pair.change = std::move(me.change);
  pair.event = std::move(me.event);
  pair.seed = seed;
  char id[16];
  std::snprintf(id, sizeof(id), "r%06d", index);
  pair.id = id;
  pair.meta["source"] = "procedural";
  return pair;
}

inline std::vector<SamplePair> generate_procedural_benchmark(
    const ToySceneSpec& scene, const ProceduralBenchParams& params, int count,
    uint64_t base_seed, int workers = 1) {
  if (count < 1)
    throw std::domain_error("generate_procedural_benchmark: count must be >= 1");
  std::vector<SamplePair> out(count);
  if (workers <= 1) {
    for (int i = 0; i < count; ++i)
      out[i] = generate_procedural_pair(scene, params, base_seed, i);
    return out;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&, w]() {
      try {
        for (int i = w; i < count; i += workers)
          out[i] = generate_procedural_pair(scene, params, base_seed, i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& err : errors)
    if (err) std::rethrow_exception(err);
  return out;
}

struct TransferProtocol {
  std::vector<double> ratios;
  std::vector<uint64_t> seeds;
  double test_fraction = 0.5;
  int pretrain_steps = 600;
  int finetune_steps = 300;
  int onlysup_steps = 300;
  OptimizerConfig optimizer;
  CDModelConfig arch;
  int workers = 1;
};

struct TransferRow {
  std::string arm;  // "only_sup", "pretrain_finetune", "zero_shot"
  double ratio = 0.0;
  std::vector<MetricsReport> per_seed;
};

namespace detail {

inline double undef_as_zero(const std::optional<double>& v) { return v.value_or(0.0); }

struct MeanStd {
  double mean = 0.0, stddev = 0.0;
  int defined = 0;
};

inline MeanStd summarize(const std::vector<MetricsReport>& reports,
                         std::optional<double> MetricsReport::*field) {
  MeanStd ms;
  std::vector<double> vals;
  vals.reserve(reports.size());
  for (const auto& r : reports) {
    vals.push_back(undef_as_zero(r.*field));
    if (r.*field) ++ms.defined;
  }
  for (double v : vals) ms.mean += v;
  ms.mean /= static_cast<double>(vals.size());
  double acc = 0.0;
  for (double v : vals) acc += (v - ms.mean) * (v - ms.mean);
  ms.stddev = vals.size() > 1 ? std::sqrt(acc / (vals.size() - 1)) : 0.0;
  return ms;
}

}  // namespace detail

struct TransferReport {
  std::vector<TransferRow> rows;

  // CSV columns: arm, ratio, then mean/stddev/defined per metric. Undefined
  // metrics count as zero in the summary, matching the degenerate
  // all-negative predictor convention.
  std::string to_csv() const {
    std::ostringstream os;
    os << "arm,ratio,f1_mean,f1_std,f1_defined,precision_mean,precision_std,"
          "precision_defined,recall_mean,recall_std,recall_defined,iou_mean,"
          "iou_std,iou_defined,seeds\n";
    char buf[64];
    for (const TransferRow& row : rows) {
      os << row.arm << ',';
      std::snprintf(buf, sizeof(buf), "%.4f", row.ratio);
      os << buf;
      std::optional<double> MetricsReport::*const fields[4] = {
          &MetricsReport::f1, &MetricsReport::precision, &MetricsReport::recall,
          &MetricsReport::iou};
      for (auto field : fields) {
        auto ms = detail::summarize(row.per_seed, field);
        std::snprintf(buf, sizeof(buf), ",%.6f,%.6f,%d", ms.mean, ms.stddev, ms.defined);
        os << buf;
      }
      os << ',' << row.per_seed.size() << '\n';
    }
    return os.str();
  }

  std::string to_text() const {
    std::ostringstream os;
    char line[256];
    std::snprintf(line, sizeof(line), "%-18s %7s %16s %16s %16s %16s\n", "arm", "ratio",
                  "F1", "Precision", "Recall", "IoU");
    os << line;
    for (const TransferRow& row : rows) {
      auto f1 = detail::summarize(row.per_seed, &MetricsReport::f1);
      auto pr = detail::summarize(row.per_seed, &MetricsReport::precision);
      auto rc = detail::summarize(row.per_seed, &MetricsReport::recall);
      auto io = detail::summarize(row.per_seed, &MetricsReport::iou);
      std::snprintf(line, sizeof(line),
                    "%-18s %7.4f %8.4f+-%-6.4f %8.4f+-%-6.4f %8.4f+-%-6.4f %8.4f+-%-6.4f\n",
                    row.arm.c_str(), row.ratio, f1.mean, f1.stddev, pr.mean, pr.stddev,
                    rc.mean, rc.stddev, io.mean, io.stddev);
      os << line;
    }
    return os.str();
  }
};

// Transfer protocol: for every (ratio, seed), (a) train from scratch on the
// ratio-sized fine-tune subset, (b) pretrain on the synthetic set then
// fine-tune on the same subset, (c) score the pretrained model directly.
// All three are evaluated on a fixed held-out test split of the real set.
inline TransferReport transfer_experiment(std::span<const SamplePair> synthetic,
                                          std::span<const SamplePair> real_toy,
                                          const TransferProtocol& protocol) {
  if (synthetic.empty() || real_toy.empty())
    throw std::invalid_argument("transfer_experiment: empty dataset");
  for (double r : protocol.ratios)
    if (!(r > 0.0 && r <= 1.0))
      throw std::domain_error("transfer_experiment: ratio outside (0, 1]");
  if (protocol.seeds.empty())
    throw std::domain_error("transfer_experiment: need at least one seed");
  protocol.optimizer.validate();

  {
    std::vector<std::string> ids;
    ids.reserve(real_toy.size());
    for (const auto& p : real_toy) ids.push_back(p.id);
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
      throw std::invalid_argument("transfer_experiment: duplicate sample ids in real set");
  }

  size_t test_count = std::max<size_t>(
      1, static_cast<size_t>(std::llround(protocol.test_fraction * real_toy.size())));
  if (test_count >= real_toy.size())
    throw std::invalid_argument("transfer_experiment: test split swallows the whole real set");
  size_t pool_count = real_toy.size() - test_count;
  std::span<const SamplePair> pool = real_toy.subspan(0, pool_count);
  std::span<const SamplePair> test = real_toy.subspan(pool_count);

  const int n_seeds = static_cast<int>(protocol.seeds.size());
  const int n_ratios = static_cast<int>(protocol.ratios.size());

  // job results indexed [ratio][seed]
  std::vector<std::vector<MetricsReport>> only_sup(n_ratios,
                                                   std::vector<MetricsReport>(n_seeds));
  std::vector<std::vector<MetricsReport>> pre_ft(n_ratios,
                                                 std::vector<MetricsReport>(n_seeds));
  std::vector<MetricsReport> zero_shot(n_seeds);

  auto subset_for = [&](double ratio, uint64_t seed) {
    size_t want = std::max<size_t>(
        1, static_cast<size_t>(std::llround(ratio * static_cast<double>(pool_count))));
    want = std::min(want, pool_count);
    std::vector<size_t> idx(pool_count);
    for (size_t i = 0; i < pool_count; ++i) idx[i] = i;
    Rng shuffle_rng(derive_seed(seed, 0xF1E57ull));
    for (size_t i = pool_count - 1; i > 0; --i) {
      size_t j = static_cast<size_t>(shuffle_rng.uniform_int(static_cast<int>(i + 1)));
      std::swap(idx[i], idx[j]);
    }
    std::vector<SamplePair> subset;
    subset.reserve(want);
    for (size_t i = 0; i < want; ++i) subset.push_back(pool[idx[i]]);
    // the fine-tune subset must stay clear of the test split
    for (const auto& p : subset)
      for (const auto& q : test)
        if (p.id == q.id)
          throw std::invalid_argument("transfer_experiment: overlapping train/test ids");
    return subset;
  };

  auto run_seed = [&](int si) {
    uint64_t seed = protocol.seeds[si];

    CDModel pretrained(protocol.arch, derive_seed(seed, 0xA11CEull));
    {
      Rng rng(derive_seed(seed, 0x9E7Aull));
      train_cd_model(pretrained, synthetic, protocol.optimizer, protocol.pretrain_steps,
                     rng);
    }
    zero_shot[si] = compute_metrics(evaluate_cd_model(pretrained, test));

    for (int ri = 0; ri < n_ratios; ++ri) {
      double ratio = protocol.ratios[ri];
      std::vector<SamplePair> subset = subset_for(ratio, seed);

      CDModel scratch(protocol.arch, derive_seed(seed, 0xA11CEull));
      {
        Rng rng(derive_seed(seed, 0x51D0ull + static_cast<uint64_t>(ri)));
        train_cd_model(scratch, subset, protocol.optimizer, protocol.onlysup_steps, rng);
      }
      only_sup[ri][si] = compute_metrics(evaluate_cd_model(scratch, test));

      CDModel tuned = pretrained;
      {
        Rng rng(derive_seed(seed, 0xF17Eull + static_cast<uint64_t>(ri)));
        train_cd_model(tuned, subset, protocol.optimizer, protocol.finetune_steps, rng);
      }
      pre_ft[ri][si] = compute_metrics(evaluate_cd_model(tuned, test));
    }
  };

  int workers = std::max(1, std::min(protocol.workers, n_seeds));
  if (workers <= 1) {
    for (int si = 0; si < n_seeds; ++si) run_seed(si);
  } else {
    std::vector<std::thread> pool_threads;
    std::vector<std::exception_ptr> errors(workers);
    for (int w = 0; w < workers; ++w)
      pool_threads.emplace_back([&, w]() {
        try {
          for (int si = w; si < n_seeds; si += workers) run_seed(si);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto& th : pool_threads) th.join();
    for (auto& err : errors)
      if (err) std::rethrow_exception(err);
  }

  TransferReport report;
  for (int ri = 0; ri < n_ratios; ++ri) {
    report.rows.push_back({"only_sup", protocol.ratios[ri], only_sup[ri]});
    report.rows.push_back({"pretrain_finetune", protocol.ratios[ri], pre_ft[ri]});
    report.rows.push_back({"zero_shot", protocol.ratios[ri], zero_shot});
  }
  return report;
}

}  // namespace cdsynth
